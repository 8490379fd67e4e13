//! Experiment assembly and the fit → sample → diagnose pipeline.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use ppp_bayes::bayes::{ForwardModel, PosteriorSpec, PriorSpec};
use ppp_bayes::diagnostics::{
    default_grid_resolution, estimate_hellinger, estimate_tv, oracle_moments, poisson_count_gof,
    GridDensity, MomentReport,
};
use ppp_bayes::forward::{BimodalModel, HeatModel, HeatSetup, KlModel, KlSetup, UnimodalModel};
use ppp_bayes::io::{write_labeled_csv_file, write_mixture_json_file};
use ppp_bayes::linalg::SymMat;
use ppp_bayes::mixture::{em_fit_weighted, importance_weights_with, EmConfig, GaussianMixture};
use ppp_bayes::point_process::AxisBox;
use ppp_bayes::rng::{substream, tags};
use ppp_bayes::sampler::{component_counts, pattern_statistics, sample_posterior_ppp, LabeledPattern, SamplerConfig};
use ppp_bayes::{Error, Result, Scalar};

use crate::config::{ExperimentConfig, ModelKind, ObservationSpec, PriorChoice};
use crate::report::{
    DensityQuantiles, DiagnosticRecord, FitJson, OracleJson, RunReport, SampleJson, SeedsJson,
    Timings,
};

/// Fully assembled Bayesian model plus bookkeeping notes.
pub struct Assembled {
    pub posterior: PosteriorSpec<f64>,
    pub observation: Vec<f64>,
    pub notes: Vec<String>,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::SolverFailure(format!("{name} stage: {e}")))
}

/// Builds the posterior: forward map, prior, noise covariance, and the
/// observation (either the configured vector or one synthesized from the
/// true parameters plus noise drawn on the noise seed).
pub fn build_posterior(cfg: &ExperimentConfig) -> Result<Assembled> {
    let mut notes = Vec::new();
    let forward: Arc<dyn ForwardModel<f64>> = match cfg.model {
        ModelKind::Unimodal => Arc::new(UnimodalModel),
        ModelKind::Bimodal => Arc::new(BimodalModel),
        ModelKind::Heat2d => Arc::new(HeatModel::new(HeatSetup::reference(cfg.heat.grid_n))),
        ModelKind::Kl => Arc::new(KlModel::new(KlSetup::new(
            3,
            1.0,
            cfg.kl.mesh_nodes,
            KlSetup::equispaced_observations(cfg.kl.obs_count),
            cfg.kl.noise_sd * cfg.kl.noise_sd,
        )?)),
    };

    let noise_cov = match cfg.model {
        ModelKind::Unimodal => SymMat::scaled_identity(2, 0.01),
        ModelKind::Bimodal => SymMat::scaled_identity(1, 1.0),
        ModelKind::Heat2d => {
            let sd = cfg.heat.noise_sd;
            SymMat::scaled_identity(5, sd * sd)
        }
        ModelKind::Kl => SymMat::scaled_identity(cfg.kl.obs_count, cfg.kl.noise_sd * cfg.kl.noise_sd),
    };

    let prior = match &cfg.prior {
        PriorChoice::Default => match cfg.model {
            ModelKind::Unimodal | ModelKind::Bimodal => PriorSpec::standard_gaussian(2),
            ModelKind::Heat2d => PriorSpec::uniform_box(AxisBox::new(
                vec![-1.0, -1.0],
                vec![1.0, 1.0],
            )?),
            ModelKind::Kl => KlSetup::<f64>::new(
                3,
                1.0,
                cfg.kl.mesh_nodes,
                KlSetup::equispaced_observations(cfg.kl.obs_count),
                cfg.kl.noise_sd * cfg.kl.noise_sd,
            )?
            .prior(),
        },
        PriorChoice::Gaussian { mean, sd } => {
            let variances: Vec<f64> = sd.iter().map(|s| s * s).collect();
            PriorSpec::gaussian(mean.clone(), SymMat::from_diagonal(&variances))?
        }
        PriorChoice::Uniform { lower, upper } => {
            PriorSpec::uniform_box(AxisBox::new(lower.clone(), upper.clone())?)
        }
    };

    let observation = match &cfg.observation {
        ObservationSpec::Explicit(v) => v.clone(),
        ObservationSpec::Synthesize => {
            let clean = forward.apply(&cfg.true_theta)?;
            let chol = noise_cov.cholesky()?;
            let mut rng = substream(cfg.seeds.noise, tags::NOISE, 0);
            let z: Vec<f64> = (0..clean.len())
                .map(|_| f64::standard_normal(&mut rng))
                .collect();
            let noise = chol.lower_mul(&z);
            clean.iter().zip(&noise).map(|(c, n)| c + n).collect()
        }
    };

    if let ObservationSpec::Explicit(_) = &cfg.observation {
        // Record how far the configured observation sits from the forward
        // image of the reference parameters.
        let clean = forward.apply(&cfg.true_theta)?;
        let gap: f64 = clean
            .iter()
            .zip(&observation)
            .map(|(c, o)| (c - o) * (c - o))
            .sum::<f64>()
            .sqrt();
        notes.push(format!(
            "observation used verbatim; it differs from G(true_theta) by {gap:.4} in l2"
        ));
    }

    let posterior = PosteriorSpec::new(forward, observation.clone(), noise_cov, prior)?;
    Ok(Assembled {
        posterior,
        observation,
        notes,
    })
}

/// Fits the mixture: prior draws on the prior seed, importance weights, EM
/// on the EM seed.
pub fn fit_mixture(
    cfg: &ExperimentConfig,
    posterior: &PosteriorSpec<f64>,
) -> Result<(GaussianMixture<f64>, ppp_bayes::mixture::FitReport)> {
    let mut prior_rng = substream(cfg.seeds.prior, tags::PRIOR, 0);
    let samples = posterior.prior().sample(cfg.em.m, &mut prior_rng);
    let data = importance_weights_with(posterior, samples, cfg.em.weight_formula)?;
    let em = EmConfig {
        k: cfg.em.k,
        max_iter: cfg.em.max_iter,
        tol: cfg.em.tol,
        cov_floor: cfg.em.cov_floor,
        seed: cfg.seeds.em,
        weight_formula: cfg.em.weight_formula,
    };
    em_fit_weighted(&data, &em)
}

pub fn sampler_config(cfg: &ExperimentConfig) -> Result<SamplerConfig<f64>> {
    let config = SamplerConfig {
        gamma: cfg.sampler.gamma,
        method: cfg.sampler.method,
        box_sigma: cfg.sampler.box_sigma,
        seed: cfg.seeds.sampler,
    };
    config.validate()?;
    Ok(config)
}

/// Per-model tolerance on |mixture mean − oracle mean| per coordinate.
fn mean_gap_threshold(model: ModelKind) -> f64 {
    match model {
        ModelKind::Unimodal => 0.05,
        _ => 0.1,
    }
}

/// Sanity ceiling on the mixture-vs-posterior grid distances.
const DISTANCE_CEILING: f64 = 0.5;

/// The diagnostic battery: oracle reliability, mixture-vs-oracle moments,
/// Poisson count law, label fractions, and (for the cheap forward maps)
/// grid TV/Hellinger between the mixture and the normalized posterior.
pub fn run_diagnostics(
    cfg: &ExperimentConfig,
    posterior: &PosteriorSpec<f64>,
    mixture: &GaussianMixture<f64>,
    labeled: Option<&LabeledPattern<f64>>,
    oracle: &MomentReport<f64>,
) -> Result<Vec<DiagnosticRecord>> {
    let mut out = Vec::new();

    out.push(DiagnosticRecord {
        test_name: "oracle_ess".into(),
        statistic: Some(oracle.ess),
        p_value: None,
        distance: None,
        params: serde_json::json!({ "samples": cfg.oracle_m, "floor": 50.0 }),
        pass: oracle.ess >= 50.0,
    });

    let mix_mean = mixture.analytic_mean();
    let gap = mix_mean
        .iter()
        .zip(&oracle.mean)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    let threshold = mean_gap_threshold(cfg.model);
    out.push(DiagnosticRecord {
        test_name: "mixture_vs_oracle_mean".into(),
        statistic: Some(gap),
        p_value: None,
        distance: None,
        params: serde_json::json!({
            "threshold": threshold,
            "mixture_mean": mix_mean,
            "oracle_mean": oracle.mean,
        }),
        pass: gap <= threshold,
    });

    // Count law: total counts over repeated realizations are Poisson(γ).
    let reps = 2000usize;
    let counts: Vec<u64> = (0..reps)
        .map(|rep| {
            let mut rng = substream(cfg.seeds.sampler, tags::DIAG, rep as u64);
            component_counts(mixture, cfg.sampler.gamma, &mut rng)
                .map(|c| c.iter().sum::<u64>())
        })
        .collect::<Result<_>>()?;
    let gof = poisson_count_gof(&counts, cfg.sampler.gamma)?;
    out.push(DiagnosticRecord {
        test_name: "total_count_gof".into(),
        statistic: Some(gof.statistic),
        p_value: Some(gof.p_value),
        distance: None,
        params: serde_json::json!({
            "gamma": cfg.sampler.gamma,
            "realizations": reps,
            "dof": gof.dof,
        }),
        pass: gof.p_value > 0.01,
    });

    if let Some(lab) = labeled {
        let summary = pattern_statistics(lab);
        let n = summary.total as f64;
        let mut worst_z = 0.0f64;
        for (k, c) in mixture.components().iter().enumerate() {
            let w = c.weight();
            let se = (w * (1.0 - w) / n).sqrt();
            if se > 0.0 {
                let frac = summary.per_label[k] as f64 / n;
                worst_z = worst_z.max((frac - w).abs() / se);
            }
        }
        out.push(DiagnosticRecord {
            test_name: "label_fractions".into(),
            statistic: Some(worst_z),
            p_value: None,
            distance: None,
            params: serde_json::json!({
                "total": summary.total,
                "per_label": summary.per_label,
                "weights": mixture.weights(),
            }),
            pass: worst_z <= 3.0,
        });
    }

    // Grid distances are restricted to low dimension and cheap forward maps;
    // the heat model would need one PDE solve per grid cell.
    if cfg.model != ModelKind::Heat2d {
        let d = posterior.param_dim();
        let mut lower = Vec::with_capacity(d);
        let mut upper = Vec::with_capacity(d);
        for j in 0..d {
            let sd = oracle.cov.get(j, j).sqrt().max(1e-6);
            lower.push(oracle.mean[j] - 8.0 * sd);
            upper.push(oracle.mean[j] + 8.0 * sd);
        }
        let grid_box = AxisBox::new(lower, upper)?;
        let resolution = default_grid_resolution(d);
        let posterior_grid = GridDensity::try_from_fn(
            |theta| posterior.unnormalized_posterior_density(theta),
            &grid_box,
            &resolution,
        )?;
        let mixture_grid =
            GridDensity::from_fn(|theta| mixture.density(theta), &grid_box, &resolution)?;
        let tv = estimate_tv(&posterior_grid, &mixture_grid)?;
        let hell = estimate_hellinger(&posterior_grid, &mixture_grid)?;
        let params = serde_json::json!({
            "grid_box_lower": grid_box.lower(),
            "grid_box_upper": grid_box.upper(),
            "resolution": resolution,
            "ceiling": DISTANCE_CEILING,
        });
        out.push(DiagnosticRecord {
            test_name: "posterior_tv".into(),
            statistic: None,
            p_value: None,
            distance: Some(tv),
            params: params.clone(),
            pass: tv <= DISTANCE_CEILING,
        });
        out.push(DiagnosticRecord {
            test_name: "posterior_hellinger".into(),
            statistic: None,
            p_value: None,
            distance: Some(hell),
            params,
            pass: hell <= DISTANCE_CEILING,
        });
    }

    Ok(out)
}

fn density_quantiles(
    mixture: &GaussianMixture<f64>,
    labeled: &LabeledPattern<f64>,
) -> Option<DensityQuantiles> {
    if labeled.is_empty() {
        return None;
    }
    let mut values: Vec<f64> = labeled
        .pattern()
        .iter()
        .map(|p| mixture.density(p))
        .collect();
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite densities"));
    let q = |p: f64| values[((values.len() - 1) as f64 * p).round() as usize];
    Some(DensityQuantiles {
        p85: q(0.85),
        p90: q(0.90),
        p95: q(0.95),
    })
}

/// Artifacts written by a successful experiment run.
pub struct ExperimentOutput {
    pub report: RunReport,
    pub files: Vec<PathBuf>,
}

/// Runs the full pipeline and writes `samples.csv`, `mixture.json`,
/// `diagnostics.json`, and `report.json` into the output directory.
/// Partial outputs are removed if any stage fails.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutput> {
    let t_total = Instant::now();
    let assembled = stage("setup", build_posterior(cfg))?;

    let t_fit = Instant::now();
    let (mixture, fit) = stage("fit", fit_mixture(cfg, &assembled.posterior))?;
    let fit_s = t_fit.elapsed().as_secs_f64();

    let t_sample = Instant::now();
    let labeled = stage(
        "sample",
        sampler_config(cfg).and_then(|sc| sample_posterior_ppp(&mixture, &sc)),
    )?;
    let sample_s = t_sample.elapsed().as_secs_f64();

    let t_oracle = Instant::now();
    let oracle = stage(
        "oracle",
        oracle_moments(&assembled.posterior, cfg.oracle_m, cfg.seeds.prior),
    )?;
    let oracle_s = t_oracle.elapsed().as_secs_f64();

    let t_diag = Instant::now();
    let diagnostics = stage(
        "diagnose",
        run_diagnostics(cfg, &assembled.posterior, &mixture, Some(&labeled), &oracle),
    )?;
    let diagnose_s = t_diag.elapsed().as_secs_f64();

    let summary = pattern_statistics(&labeled);
    let report = RunReport {
        model: cfg.model.name().to_string(),
        config: cfg.to_map(),
        seeds: SeedsJson {
            prior: cfg.seeds.prior,
            em: cfg.seeds.em,
            sampler: cfg.seeds.sampler,
            noise: cfg.seeds.noise,
        },
        observation: assembled.observation.clone(),
        mixture: serde_json::from_str(&ppp_bayes::io::mixture_to_json(&mixture))
            .expect("mixture JSON is valid"),
        fit: FitJson {
            iterations: fit.iterations,
            final_log_likelihood: fit.final_log_likelihood,
            converged: fit.converged,
            ess: fit.ess,
            warnings: fit.warnings.clone(),
            log_likelihood_trace: fit.log_likelihood_trace.clone(),
        },
        oracle: OracleJson {
            mean: oracle.mean.clone(),
            cov: oracle.cov.rows(),
            ess: oracle.ess,
            std_errors: oracle.std_errors.clone(),
            warnings: oracle.warnings.clone(),
        },
        sample: SampleJson {
            total: summary.total,
            per_label: summary.per_label.clone(),
            pooled_mean: summary.moments.as_ref().map(|m| m.mean.clone()),
            pooled_cov: summary.moments.as_ref().map(|m| m.cov.rows()),
            density_quantiles: density_quantiles(&mixture, &labeled),
        },
        diagnostics,
        notes: assembled.notes,
        timings: Timings {
            fit_s,
            sample_s,
            oracle_s,
            diagnose_s,
            total_s: t_total.elapsed().as_secs_f64(),
        },
    };

    let files = stage(
        "write",
        write_artifacts(out_dir, &mixture, &labeled, &report),
    )?;
    Ok(ExperimentOutput { report, files })
}

fn write_artifacts(
    out_dir: &Path,
    mixture: &GaussianMixture<f64>,
    labeled: &LabeledPattern<f64>,
    report: &RunReport,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written: Vec<PathBuf> = Vec::new();
    let result = (|| -> Result<()> {
        let samples = out_dir.join("samples.csv");
        write_labeled_csv_file(std::slice::from_ref(labeled), mixture.dim(), &samples)?;
        written.push(samples);

        let mixture_path = out_dir.join("mixture.json");
        write_mixture_json_file(mixture, &mixture_path)?;
        written.push(mixture_path);

        let diag_path = out_dir.join("diagnostics.json");
        write_json(&diag_path, &report.diagnostics)?;
        written.push(diag_path);

        let report_path = out_dir.join("report.json");
        write_json(&report_path, report)?;
        written.push(report_path);
        Ok(())
    })();
    match result {
        Ok(()) => Ok(written),
        Err(e) => {
            for f in &written {
                let _ = fs::remove_file(f);
            }
            Err(e)
        }
    }
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Parse(format!("serialize {}: {e}", path.display())))?;
    fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
}

/// Resolved output directory: flag override, else the config's.
pub fn output_dir(cfg: &ExperimentConfig, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(&cfg.output))
}

/// Config map echo check used by tests: parse(serialize) == original.
pub fn config_echo_round_trips(cfg: &ExperimentConfig) -> bool {
    crate::config::parse_config(&cfg.serialize())
        .map(|c| c == *cfg)
        .unwrap_or(false)
}
