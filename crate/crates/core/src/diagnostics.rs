//! Statistical validation: grid-based density distances, Poisson
//! goodness-of-fit and independence tests, discretization convergence
//! studies, and a self-normalized importance-sampling moment oracle.

use rayon::prelude::*;

use crate::bayes::PosteriorSpec;
use crate::error::{Error, Result};
use crate::linalg::SymMat;
use crate::mixture::importance_weights;
use crate::point_process::{AxisBox, PointPattern};
use crate::rng::{substream, tags};
use crate::scalar::{count_as, real, widen, Scalar};
use crate::special::{chi_square_sf, poisson_log_pmf};

/// Density values at the cell centers of a regular grid, normalized to unit
/// mass under the midpoint rule.
#[derive(Clone, Debug)]
pub struct GridDensity<T> {
    region: AxisBox<T>,
    resolution: Vec<usize>,
    values: Vec<T>,
    cell_volume: T,
}

/// Default per-axis resolutions for grid diagnostics by dimension.
pub fn default_grid_resolution(dim: usize) -> Vec<usize> {
    match dim {
        1 => vec![2000],
        2 => vec![300, 300],
        _ => vec![60; dim],
    }
}

impl<T: Scalar> GridDensity<T> {
    /// Evaluates `f` at the cell centers and normalizes. Grid methods are
    /// restricted to dimension ≤ 3; higher dimensions fall back to moment
    /// comparison.
    pub fn from_fn(
        f: impl Fn(&[T]) -> T + Sync,
        region: &AxisBox<T>,
        resolution: &[usize],
    ) -> Result<Self> {
        Self::try_from_fn(|theta| Ok(f(theta)), region, resolution)
    }

    pub fn try_from_fn(
        f: impl Fn(&[T]) -> Result<T> + Sync,
        region: &AxisBox<T>,
        resolution: &[usize],
    ) -> Result<Self> {
        let dim = region.dim();
        if dim > 3 {
            return Err(Error::invalid(
                "grid densities are limited to dimension ≤ 3",
            ));
        }
        if resolution.len() != dim || resolution.iter().any(|&r| r == 0) {
            return Err(Error::invalid("need one positive resolution per axis"));
        }
        let cells: usize = resolution.iter().product();
        let widths: Vec<T> = (0..dim)
            .map(|a| {
                (region.upper()[a] - region.lower()[a]) / count_as::<T>(resolution[a])
            })
            .collect();
        let cell_volume = widths.iter().fold(T::one(), |acc, w| acc * *w);
        let lower = region.lower().to_vec();
        let res = resolution.to_vec();
        let values: Vec<T> = (0..cells)
            .into_par_iter()
            .map(|flat| {
                let center = cell_center(flat, &res, &lower, &widths);
                let v = f(&center)?;
                if !v.is_finite() || v < T::zero() {
                    return Err(Error::DegenerateDensity(format!(
                        "density value {v} at {center:?}"
                    )));
                }
                Ok(v)
            })
            .collect::<Result<_>>()?;
        let mass: T = values.iter().copied().sum::<T>() * cell_volume;
        if !(mass.is_finite() && mass > T::zero()) {
            return Err(Error::DegenerateDensity(format!(
                "total grid mass {mass} is not positive"
            )));
        }
        let values = values.into_iter().map(|v| v / mass).collect();
        Ok(GridDensity {
            region: region.clone(),
            resolution: res,
            values,
            cell_volume,
        })
    }

    pub fn region(&self) -> &AxisBox<T> {
        &self.region
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn cell_volume(&self) -> T {
        self.cell_volume
    }

    pub fn dim(&self) -> usize {
        self.region.dim()
    }

    pub fn cell_center(&self, flat: usize) -> Vec<T> {
        let widths: Vec<T> = (0..self.dim())
            .map(|a| {
                (self.region.upper()[a] - self.region.lower()[a])
                    / count_as::<T>(self.resolution[a])
            })
            .collect();
        cell_center(flat, &self.resolution, self.region.lower(), &widths)
    }

    /// Probability mass of the cells whose centers satisfy the predicate.
    pub fn mass_where(&self, pred: impl Fn(&[T]) -> bool) -> T {
        let mut mass = T::zero();
        for flat in 0..self.values.len() {
            if pred(&self.cell_center(flat)) {
                mass += self.values[flat] * self.cell_volume;
            }
        }
        mass
    }

    /// Probability mass inside an axis box.
    pub fn mass_in_box(&self, region: &AxisBox<T>) -> T {
        self.mass_where(|c| region.contains(c))
    }

    /// Grid mean under the midpoint rule.
    pub fn mean(&self) -> Vec<T> {
        let d = self.dim();
        let mut mean = vec![T::zero(); d];
        for flat in 0..self.values.len() {
            let c = self.cell_center(flat);
            let w = self.values[flat] * self.cell_volume;
            for (m, x) in mean.iter_mut().zip(c) {
                *m += w * x;
            }
        }
        mean
    }

    fn check_comparable(&self, other: &Self) -> Result<()> {
        if self.resolution != other.resolution {
            return Err(Error::GridMismatch(format!(
                "resolutions {:?} vs {:?}",
                self.resolution, other.resolution
            )));
        }
        let tol = real::<T>(1e-12);
        let close = |a: &[T], b: &[T]| {
            a.iter()
                .zip(b)
                .all(|(x, y)| (*x - *y).abs() <= tol * (x.abs() + y.abs() + T::one()))
        };
        if !close(self.region.lower(), other.region.lower())
            || !close(self.region.upper(), other.region.upper())
        {
            return Err(Error::GridMismatch("grid boxes differ".into()));
        }
        Ok(())
    }
}

fn cell_center<T: Scalar>(flat: usize, res: &[usize], lower: &[T], widths: &[T]) -> Vec<T> {
    let mut idx = flat;
    let mut center = vec![T::zero(); res.len()];
    for a in (0..res.len()).rev() {
        let i = idx % res[a];
        idx /= res[a];
        center[a] = lower[a] + (count_as::<T>(i) + real::<T>(0.5)) * widths[a];
    }
    center
}

/// Total variation distance (1/2)·Σ|a − b|·cell_volume ∈ [0, 1].
pub fn estimate_tv<T: Scalar>(a: &GridDensity<T>, b: &GridDensity<T>) -> Result<T> {
    a.check_comparable(b)?;
    let half = real::<T>(0.5);
    let sum: T = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (*x - *y).abs())
        .sum();
    Ok((half * sum * a.cell_volume).min(T::one()))
}

/// Hellinger distance √((1/2)·Σ(√a − √b)²·cell_volume) ∈ [0, 1].
pub fn estimate_hellinger<T: Scalar>(a: &GridDensity<T>, b: &GridDensity<T>) -> Result<T> {
    a.check_comparable(b)?;
    let half = real::<T>(0.5);
    let sum: T = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| {
            let d = x.sqrt() - y.sqrt();
            d * d
        })
        .sum();
    Ok((half * sum * a.cell_volume).sqrt().min(T::one()))
}

/// Chi-square goodness-of-fit result.
#[derive(Clone, Copy, Debug)]
pub struct GofResult<T> {
    pub statistic: T,
    pub p_value: T,
    pub dof: usize,
    pub bins: usize,
}

/// Chi-square goodness-of-fit of integer counts against Poisson(mean), with
/// tail pooling so every bin has expected count ≥ 5.
pub fn poisson_count_gof<T: Scalar>(counts: &[u64], mean: T) -> Result<GofResult<T>> {
    if counts.len() < 500 {
        return Err(Error::invalid(format!(
            "goodness-of-fit needs at least 500 counts, got {}",
            counts.len()
        )));
    }
    if !(mean.is_finite() && mean > T::zero()) {
        return Err(Error::invalid("Poisson mean must be positive"));
    }
    let n = count_as::<T>(counts.len());
    let max_obs = *counts.iter().max().expect("non-empty") as usize;
    let mean_f = widen(mean);
    let k_hi = max_obs.max((mean_f + 10.0 * mean_f.sqrt()).ceil() as usize) + 1;

    // Cell probabilities 0..k_hi plus the right tail.
    let mut probs: Vec<T> = (0..=k_hi)
        .map(|k| poisson_log_pmf(k as u64, mean).exp())
        .collect();
    let tail = (T::one() - probs.iter().copied().sum::<T>()).max(T::zero());
    probs.push(tail);

    let mut observed = vec![0usize; probs.len()];
    for &c in counts {
        let k = (c as usize).min(k_hi + 1);
        observed[k] += 1;
    }

    // Pool cells into bins with expected count ≥ 5, sweeping left to right;
    // a deficient final bin is merged backwards.
    let five = real::<T>(5.0);
    let mut bins: Vec<(T, usize)> = Vec::new();
    let mut acc_p = T::zero();
    let mut acc_o = 0usize;
    for (p, o) in probs.iter().zip(&observed) {
        acc_p += *p;
        acc_o += *o;
        if acc_p * n >= five {
            bins.push((acc_p, acc_o));
            acc_p = T::zero();
            acc_o = 0;
        }
    }
    if acc_p > T::zero() || acc_o > 0 {
        if let Some(last) = bins.last_mut() {
            last.0 += acc_p;
            last.1 += acc_o;
        } else {
            bins.push((acc_p, acc_o));
        }
    }
    if bins.len() < 2 {
        return Err(Error::invalid(
            "distribution too concentrated for a chi-square test",
        ));
    }

    let mut statistic = T::zero();
    for (p, o) in &bins {
        let e = *p * n;
        let d = count_as::<T>(*o) - e;
        statistic += d * d / e;
    }
    let dof = bins.len() - 1;
    Ok(GofResult {
        statistic,
        p_value: chi_square_sf(statistic, dof),
        dof,
        bins: bins.len(),
    })
}

/// Correlation of disjoint-region counts with a 99% Fisher confidence band.
#[derive(Clone, Copy, Debug)]
pub struct IndependenceResult<T> {
    pub correlation: T,
    pub band: (T, T),
    pub n: usize,
}

/// Pearson correlation of (η(A), η(B)) over pattern realizations. The
/// regions must be disjoint; disjointness is verified on every sample point.
pub fn disjoint_independence<T: Scalar>(
    patterns: &[PointPattern<T>],
    region_a: impl Fn(&[T]) -> bool,
    region_b: impl Fn(&[T]) -> bool,
) -> Result<IndependenceResult<T>> {
    if patterns.len() < 500 {
        return Err(Error::invalid(format!(
            "independence test needs at least 500 patterns, got {}",
            patterns.len()
        )));
    }
    let mut xs = Vec::with_capacity(patterns.len());
    let mut ys = Vec::with_capacity(patterns.len());
    for pat in patterns {
        let mut a = 0usize;
        let mut b = 0usize;
        for p in pat.iter() {
            let in_a = region_a(p);
            let in_b = region_b(p);
            if in_a && in_b {
                return Err(Error::invalid(
                    "regions overlap: a sample point belongs to both",
                ));
            }
            a += usize::from(in_a);
            b += usize::from(in_b);
        }
        xs.push(count_as::<T>(a));
        ys.push(count_as::<T>(b));
    }
    let n = count_as::<T>(patterns.len());
    let mx = xs.iter().copied().sum::<T>() / n;
    let my = ys.iter().copied().sum::<T>() / n;
    let mut sxx = T::zero();
    let mut syy = T::zero();
    let mut sxy = T::zero();
    for (x, y) in xs.iter().zip(&ys) {
        let dx = *x - mx;
        let dy = *y - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == T::zero() || syy == T::zero() {
        return Err(Error::DegenerateDensity(
            "zero-variance counts in independence test".into(),
        ));
    }
    let correlation = sxy / (sxx * syy).sqrt();
    // Fisher z-transform, 99% band.
    let z = real::<T>(0.5) * ((T::one() + correlation) / (T::one() - correlation)).ln();
    let width = real::<T>(2.576) / (n - real::<T>(3.0)).sqrt();
    let band = ((z - width).tanh(), (z + width).tanh());
    Ok(IndependenceResult {
        correlation,
        band,
        n: patterns.len(),
    })
}

/// Region intensities Λ̃_N(A) per solver resolution, with deviations from
/// the reference (finest, last listed) resolution.
#[derive(Clone, Debug)]
pub struct ConvergenceStudy<T> {
    pub resolutions: Vec<usize>,
    /// `intensities[r][a]` = Λ̃ at resolution r for region a.
    pub intensities: Vec<Vec<T>>,
    /// `deviations[r][a]` = |Λ̃_r(A_a) − Λ̃_ref(A_a)| for the non-reference
    /// resolutions, in listed order.
    pub deviations: Vec<Vec<T>>,
}

/// Estimates Λ̃_N(A) = γ·μ̃_N(A) by normalized grid quadrature for each
/// solver resolution in `resolutions` (the last is the reference) and each
/// region.
pub fn count_convergence_study<T: Scalar>(
    model_family: impl Fn(usize) -> Result<PosteriorSpec<T>>,
    gamma: T,
    regions: &[AxisBox<T>],
    resolutions: &[usize],
    grid_region: &AxisBox<T>,
    grid_resolution: &[usize],
) -> Result<ConvergenceStudy<T>> {
    if resolutions.len() < 2 {
        return Err(Error::invalid(
            "convergence study needs at least two resolutions",
        ));
    }
    if regions.is_empty() {
        return Err(Error::invalid("convergence study needs regions"));
    }
    let mut intensities = Vec::with_capacity(resolutions.len());
    for &res in resolutions {
        let model = model_family(res)?;
        let grid = GridDensity::try_from_fn(
            |theta| model.unnormalized_posterior_density(theta),
            grid_region,
            grid_resolution,
        )?;
        intensities.push(
            regions
                .iter()
                .map(|a| gamma * grid.mass_in_box(a))
                .collect::<Vec<T>>(),
        );
    }
    let reference = intensities.last().expect("non-empty").clone();
    let deviations = intensities[..intensities.len() - 1]
        .iter()
        .map(|row| {
            row.iter()
                .zip(&reference)
                .map(|(v, r)| (*v - *r).abs())
                .collect()
        })
        .collect();
    Ok(ConvergenceStudy {
        resolutions: resolutions.to_vec(),
        intensities,
        deviations,
    })
}

/// Self-normalized importance-sampling posterior moments.
#[derive(Clone, Debug)]
pub struct MomentReport<T> {
    pub mean: Vec<T>,
    pub cov: SymMat<T>,
    /// Effective sample size 1/Σ w̃².
    pub ess: T,
    /// Delta-method standard error of each mean coordinate.
    pub std_errors: Vec<T>,
    pub warnings: Vec<String>,
}

/// ESS below which the oracle is flagged unreliable.
pub const ORACLE_ESS_FLOOR: f64 = 50.0;

/// Importance-sampling oracle for posterior mean and covariance from `m`
/// prior draws on the `(seed, ORACLE)` stream.
pub fn oracle_moments<T: Scalar>(
    model: &PosteriorSpec<T>,
    m: usize,
    seed: u64,
) -> Result<MomentReport<T>> {
    if m < 1000 {
        return Err(Error::invalid("oracle needs at least 1000 samples"));
    }
    let mut rng = substream(seed, tags::ORACLE, 0);
    let samples = model.prior().sample(m, &mut rng);
    let data = importance_weights(model, samples)?;
    let (mean, cov) = data.moments();
    let ess = data.ess();
    let std_errors: Vec<T> = (0..mean.len())
        .map(|j| {
            data.weights()
                .iter()
                .zip(data.samples())
                .map(|(w, s)| {
                    let d = s[j] - mean[j];
                    *w * *w * d * d
                })
                .sum::<T>()
                .sqrt()
        })
        .collect();
    let mut warnings = Vec::new();
    if widen(ess) < ORACLE_ESS_FLOOR {
        warnings.push(format!(
            "effective sample size {:.1} below {ORACLE_ESS_FLOOR}; oracle unreliable",
            widen(ess)
        ));
    }
    Ok(MomentReport {
        mean,
        cov,
        ess,
        std_errors,
        warnings,
    })
}
