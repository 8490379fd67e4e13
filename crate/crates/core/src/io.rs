//! Exchange formats: point pattern CSV, labeled sample CSV, and mixture
//! JSON. Floats are written in shortest round-trip form, so a file read back
//! reproduces the in-memory values exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SymMat;
use crate::mixture::{GaussianComponent, GaussianMixture};
use crate::point_process::PointPattern;
use crate::sampler::LabeledPattern;
use crate::scalar::{real, widen, Scalar};

fn dim_header(prefix: &str, dim: usize) -> String {
    let mut s = String::from(prefix);
    for d in 0..dim {
        s.push_str(&format!(",dim_{d}"));
    }
    s
}

/// Writes realizations as CSV rows `realization_id,point_id,dim_0,...`.
pub fn write_patterns_csv<T: Scalar, W: Write>(
    patterns: &[PointPattern<T>],
    dim: usize,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "{}", dim_header("realization_id,point_id", dim))?;
    for (r, pattern) in patterns.iter().enumerate() {
        for (i, point) in pattern.iter().enumerate() {
            write!(out, "{r},{i}")?;
            for x in point {
                write!(out, ",{x}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

pub fn write_patterns_csv_file<T: Scalar>(
    patterns: &[PointPattern<T>],
    dim: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_patterns_csv(patterns, dim, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

/// Reads patterns written by [`write_patterns_csv`]. Realizations absent
/// from the file (no surviving points) come back as empty patterns up to the
/// largest id present.
pub fn read_patterns_csv<T: Scalar, R: Read>(input: R) -> Result<Vec<PointPattern<T>>> {
    let reader = BufReader::new(input);
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, Ok(h))) => h,
        Some((_, Err(e))) => return Err(Error::Parse(format!("line 1: {e}"))),
        None => return Err(Error::Parse("empty pattern CSV".into())),
    };
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.len() < 3 || cols[0] != "realization_id" || cols[1] != "point_id" {
        return Err(Error::Parse(format!("unexpected pattern header `{header}`")));
    }
    let dim = cols.len() - 2;
    let mut patterns: Vec<PointPattern<T>> = Vec::new();
    for (lineno, line) in lines {
        let line = line.map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != dim + 2 {
            return Err(Error::Parse(format!(
                "line {}: expected {} fields, got {}",
                lineno + 1,
                dim + 2,
                fields.len()
            )));
        }
        let rid: usize = fields[0]
            .parse()
            .map_err(|e| Error::Parse(format!("line {}: realization_id: {e}", lineno + 1)))?;
        while patterns.len() <= rid {
            patterns.push(PointPattern::new(dim)?);
        }
        let point = parse_point::<T>(&fields[2..], lineno + 1)?;
        patterns[rid].push(&point)?;
    }
    Ok(patterns)
}

pub fn read_patterns_csv_file<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<PointPattern<T>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_patterns_csv(file)
}

/// Writes labeled realizations as `realization_id,component_id,dim_0,...`.
pub fn write_labeled_csv<T: Scalar, W: Write>(
    realizations: &[LabeledPattern<T>],
    dim: usize,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "{}", dim_header("realization_id,component_id", dim))?;
    for (r, labeled) in realizations.iter().enumerate() {
        for (point, label) in labeled.pattern().iter().zip(labeled.labels()) {
            write!(out, "{r},{label}")?;
            for x in point {
                write!(out, ",{x}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

pub fn write_labeled_csv_file<T: Scalar>(
    realizations: &[LabeledPattern<T>],
    dim: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_labeled_csv(realizations, dim, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

/// Reads labeled realizations; component count is inferred as the largest
/// label plus one, per realization set.
pub fn read_labeled_csv<T: Scalar, R: Read>(input: R) -> Result<Vec<LabeledPattern<T>>> {
    let reader = BufReader::new(input);
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, Ok(h))) => h,
        Some((_, Err(e))) => return Err(Error::Parse(format!("line 1: {e}"))),
        None => return Err(Error::Parse("empty labeled CSV".into())),
    };
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.len() < 3 || cols[0] != "realization_id" || cols[1] != "component_id" {
        return Err(Error::Parse(format!("unexpected labeled header `{header}`")));
    }
    let dim = cols.len() - 2;
    let mut rows: Vec<(Vec<Vec<T>>, Vec<usize>)> = Vec::new();
    let mut max_label = 0usize;
    for (lineno, line) in lines {
        let line = line.map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != dim + 2 {
            return Err(Error::Parse(format!(
                "line {}: expected {} fields, got {}",
                lineno + 1,
                dim + 2,
                fields.len()
            )));
        }
        let rid: usize = fields[0]
            .parse()
            .map_err(|e| Error::Parse(format!("line {}: realization_id: {e}", lineno + 1)))?;
        let label: usize = fields[1]
            .parse()
            .map_err(|e| Error::Parse(format!("line {}: component_id: {e}", lineno + 1)))?;
        max_label = max_label.max(label);
        while rows.len() <= rid {
            rows.push((Vec::new(), Vec::new()));
        }
        rows[rid].0.push(parse_point::<T>(&fields[2..], lineno + 1)?);
        rows[rid].1.push(label);
    }
    rows.into_iter()
        .map(|(points, labels)| {
            let pattern = PointPattern::from_points(dim, points)?;
            LabeledPattern::new(pattern, labels, max_label + 1)
        })
        .collect()
}

pub fn read_labeled_csv_file<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<LabeledPattern<T>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_labeled_csv(file)
}

fn parse_point<T: Scalar>(fields: &[&str], lineno: usize) -> Result<Vec<T>> {
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .map(real::<T>)
                .map_err(|e| Error::Parse(format!("line {lineno}: coordinate `{f}`: {e}")))
        })
        .collect()
}

/// JSON shape of a mixture: `{dim, components: [{w, mean, cov}]}`.
#[derive(Serialize, Deserialize)]
struct MixtureJson {
    dim: usize,
    components: Vec<ComponentJson>,
}

#[derive(Serialize, Deserialize)]
struct ComponentJson {
    w: f64,
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

pub fn mixture_to_json<T: Scalar>(mixture: &GaussianMixture<T>) -> String {
    let bridge = MixtureJson {
        dim: mixture.dim(),
        components: mixture
            .components()
            .iter()
            .map(|c| ComponentJson {
                w: widen(c.weight()),
                mean: c.mean().iter().map(|&x| widen(x)).collect(),
                cov: c
                    .cov()
                    .rows()
                    .into_iter()
                    .map(|row| row.into_iter().map(widen).collect())
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&bridge).expect("mixture serializes")
}

pub fn mixture_from_json<T: Scalar>(json: &str) -> Result<GaussianMixture<T>> {
    let bridge: MixtureJson =
        serde_json::from_str(json).map_err(|e| Error::Parse(format!("mixture JSON: {e}")))?;
    let components = bridge
        .components
        .into_iter()
        .map(|c| {
            let rows: Vec<Vec<T>> = c
                .cov
                .iter()
                .map(|row| row.iter().map(|&x| real::<T>(x)).collect())
                .collect();
            GaussianComponent::new(
                real::<T>(c.w),
                c.mean.iter().map(|&x| real::<T>(x)).collect(),
                SymMat::from_rows(&rows)?,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mixture = GaussianMixture::new(components)?;
    if mixture.dim() != bridge.dim {
        return Err(Error::Parse(format!(
            "mixture JSON declares dim {}, components have dim {}",
            bridge.dim,
            mixture.dim()
        )));
    }
    Ok(mixture)
}

pub fn write_mixture_json_file<T: Scalar>(
    mixture: &GaussianMixture<T>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(mixture_to_json(mixture).as_bytes())
        .and_then(|_| file.write_all(b"\n"))
        .map_err(|e| Error::io(path, e))
}

pub fn read_mixture_json_file<T: Scalar>(path: impl AsRef<Path>) -> Result<GaussianMixture<T>> {
    let path = path.as_ref();
    let mut s = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|e| Error::io(path, e))?;
    mixture_from_json(&s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::point_process::{sample_homogeneous, AxisBox};
    use crate::rng::{substream, tags};
    use proptest::prelude::*;

    #[test]
    fn pattern_csv_round_trip() {
        let mut r = substream(1, tags::USER, 50);
        let region = AxisBox::unit(3);
        let patterns: Vec<PointPattern<f64>> = (0..4)
            .map(|_| sample_homogeneous(&region, 10.0, &mut r).unwrap())
            .collect();
        let mut buf = Vec::new();
        write_patterns_csv(&patterns, 3, &mut buf).unwrap();
        let back = read_patterns_csv::<f64, _>(buf.as_slice()).unwrap();
        // Trailing empty realizations are not representable in the CSV.
        let written = patterns
            .iter()
            .rposition(|p| !p.is_empty())
            .map_or(0, |i| i + 1);
        assert_eq!(back.len(), written);
        for (a, b) in patterns.iter().zip(&back) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn empty_pattern_writes_header_only() {
        let empty = PointPattern::<f64>::new(2).unwrap();
        let mut buf = Vec::new();
        write_patterns_csv(&[empty], 2, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "realization_id,point_id,dim_0,dim_1\n");
    }

    #[test]
    fn seven_point_pattern_has_eight_lines() {
        let points: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64, -(i as f64)]).collect();
        let pattern = PointPattern::from_points(2, points).unwrap();
        let mut buf = Vec::new();
        write_patterns_csv(&[pattern], 2, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 8);
    }

    #[test]
    fn labeled_csv_round_trip() {
        let pattern =
            PointPattern::from_points(2, vec![vec![0.125, -3.5], vec![1.0, 2.0], vec![0.1, 0.2]])
                .unwrap();
        let labeled = LabeledPattern::new(pattern, vec![0, 2, 1], 3).unwrap();
        let mut buf = Vec::new();
        write_labeled_csv(&[labeled.clone()], 2, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("realization_id,component_id,dim_0,dim_1\n"));
        let back = read_labeled_csv::<f64, _>(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0], labeled);
    }

    #[test]
    fn csv_parse_errors_carry_line_context() {
        let bad = "realization_id,point_id,dim_0\n0,0,not-a-number\n";
        let err = read_patterns_csv::<f64, _>(bad.as_bytes()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");

        let short = "realization_id,point_id,dim_0\n0,0\n";
        assert!(read_patterns_csv::<f64, _>(short.as_bytes()).is_err());

        let wrong_header = "foo,bar,dim_0\n";
        assert!(read_patterns_csv::<f64, _>(wrong_header.as_bytes()).is_err());
    }

    fn sample_mixture() -> GaussianMixture<f64> {
        GaussianMixture::new(vec![
            GaussianComponent::new(
                0.25,
                vec![0.1, -0.7],
                SymMat::from_rows(&[vec![1.5, 0.2], vec![0.2, 0.5]]).unwrap(),
            )
            .unwrap(),
            GaussianComponent::new(
                0.75,
                vec![-1.0, 2.0],
                SymMat::from_rows(&[vec![0.3, -0.1], vec![-0.1, 0.9]]).unwrap(),
            )
            .unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn mixture_json_round_trip() {
        let mixture = sample_mixture();
        let json = mixture_to_json(&mixture);
        let back = mixture_from_json::<f64>(&json).unwrap();
        assert_eq!(back.dim(), 2);
        for (a, b) in mixture.components().iter().zip(back.components()) {
            assert_eq!(a.weight(), b.weight());
            assert_eq!(a.mean(), b.mean());
            assert_eq!(a.cov(), b.cov());
        }
        // Serialization is deterministic.
        assert_eq!(json, mixture_to_json(&back));
    }

    #[test]
    fn mixture_json_schema_fields() {
        let json = mixture_to_json(&sample_mixture());
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(value["dim"], 2);
        assert!(value["components"].as_array().unwrap().len() == 2);
        assert!(value["components"][0]["w"].is_number());
        assert!(value["components"][0]["mean"].is_array());
        assert!(value["components"][0]["cov"][0][1].is_number());
    }

    #[test]
    fn mixture_json_rejects_bad_input() {
        assert!(mixture_from_json::<f64>("{}").is_err());
        // Weights not summing to one.
        let bad = r#"{"dim":1,"components":[{"w":0.5,"mean":[0.0],"cov":[[1.0]]}]}"#;
        assert!(mixture_from_json::<f64>(bad).is_err());
    }

    proptest! {
        #[test]
        fn pattern_csv_round_trip_exact(points in proptest::collection::vec(
            proptest::collection::vec(-1e12f64..1e12, 2), 0..40
        )) {
            let pattern = PointPattern::from_points(2, points).unwrap();
            let mut buf = Vec::new();
            write_patterns_csv(&[pattern.clone()], 2, &mut buf).unwrap();
            let back = read_patterns_csv::<f64, _>(buf.as_slice()).unwrap();
            if pattern.is_empty() {
                prop_assert!(back.is_empty());
            } else {
                prop_assert_eq!(&back[0], &pattern);
            }
        }

        #[test]
        fn superpose_is_count_additive(
            a in proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 2), 0..20),
            b in proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 2), 0..20),
        ) {
            let pa = PointPattern::from_points(2, a).unwrap();
            let pb = PointPattern::from_points(2, b).unwrap();
            let merged = crate::point_process::superpose(2, &[pa.clone(), pb.clone()]).unwrap();
            prop_assert_eq!(merged.len(), pa.len() + pb.len());
        }
    }
}
