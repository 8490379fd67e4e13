//! `ppp-bayes`: fit a Gaussian mixture to a Bayesian posterior, sample it as
//! a Poisson point process, and validate the result.
//!
//! Exit codes: 0 success, 1 stage failure, 2 configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ppp_bayes::io::{
    read_labeled_csv_file, read_mixture_json_file, write_labeled_csv_file, write_mixture_json_file,
};
use ppp_bayes::sampler::{sample_posterior_ppp, SampleMethod};
use ppp_bayes::Error;

use ppp_bayes_cli::config::{parse_config, ExperimentConfig, ModelKind};
use ppp_bayes_cli::experiment::{
    build_posterior, fit_mixture, output_dir, run_diagnostics, run_experiment, sampler_config,
    write_json,
};
use ppp_bayes_cli::init_thread_pool;

#[derive(Parser)]
#[command(
    name = "ppp-bayes",
    about = "Posterior sampling via Poisson point processes",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the posterior mixture and write mixture.json.
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to the config's `output`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Base seed override (stage seeds become base, base+1, ...).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Draw a labeled posterior point sample from a fitted mixture.
    Sample {
        #[arg(long)]
        mixture: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Optional config supplying sampler settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        gamma: Option<f64>,
        /// direct | thinning
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the diagnostic battery against a fitted mixture.
    Diagnose {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        mixture: PathBuf,
        /// Labeled sample CSV to include sample-law checks.
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Output JSON path (defaults to <config output>/diagnostics.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full fit → sample → diagnose pipeline for a named experiment.
    Experiment {
        /// unimodal | bimodal | heat2d | kl
        name: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        gamma: Option<f64>,
        /// direct | thinning
        #[arg(long)]
        method: Option<String>,
    },
}

/// Failure carrying the process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(e: impl std::fmt::Display) -> Self {
        Failure {
            code: 2,
            message: format!("configuration error: {e}"),
        }
    }

    fn stage(e: impl std::fmt::Display) -> Self {
        Failure {
            code: 1,
            message: format!("{e}"),
        }
    }
}

fn main() -> ExitCode {
    init_thread_pool();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::config(Error::io(path, e)))?;
    parse_config(&text).map_err(Failure::config)
}

fn apply_overrides(
    mut cfg: ExperimentConfig,
    seed: Option<u64>,
    gamma: Option<f64>,
    method: Option<&str>,
) -> Result<ExperimentConfig, Failure> {
    if let Some(base) = seed {
        cfg = cfg.with_base_seed(base);
    }
    if let Some(g) = gamma {
        if g <= 0.0 {
            return Err(Failure::config("gamma must be positive"));
        }
        cfg.sampler.gamma = g;
    }
    if let Some(m) = method {
        cfg.sampler.method = SampleMethod::parse(m).map_err(Failure::config)?;
    }
    Ok(cfg)
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Fit { config, out, seed } => {
            let cfg = apply_overrides(load_config(&config)?, seed, None, None)?;
            let assembled = build_posterior(&cfg).map_err(Failure::stage)?;
            let (mixture, report) = fit_mixture(&cfg, &assembled.posterior).map_err(Failure::stage)?;
            let dir = output_dir(&cfg, out.as_deref());
            std::fs::create_dir_all(&dir)
                .map_err(|e| Failure::stage(Error::io(&dir, e)))?;
            let path = dir.join("mixture.json");
            write_mixture_json_file(&mixture, &path).map_err(Failure::stage)?;
            println!(
                "fit: {} components, {} iterations, log-likelihood {:.6}, ess {:.1} -> {}",
                cfg.em.k,
                report.iterations,
                report.final_log_likelihood,
                report.ess,
                path.display()
            );
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            Ok(())
        }
        Command::Sample {
            mixture,
            out,
            config,
            gamma,
            method,
            seed,
        } => {
            let mixture = read_mixture_json_file::<f64>(&mixture).map_err(Failure::config)?;
            let mut sampler = match config {
                Some(path) => {
                    let cfg = load_config(&path)?;
                    sampler_config(&cfg).map_err(Failure::config)?
                }
                None => ppp_bayes::sampler::SamplerConfig::new(1000.0).map_err(Failure::config)?,
            };
            if let Some(g) = gamma {
                sampler.gamma = g;
            }
            if let Some(m) = method.as_deref() {
                sampler.method = SampleMethod::parse(m).map_err(Failure::config)?;
            }
            if let Some(s) = seed {
                sampler.seed = s;
            }
            sampler.validate().map_err(Failure::config)?;
            let labeled = sample_posterior_ppp(&mixture, &sampler).map_err(Failure::stage)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)
                    .map_err(|e| Failure::stage(Error::io(parent, e)))?;
            }
            write_labeled_csv_file(std::slice::from_ref(&labeled), mixture.dim(), &out)
                .map_err(Failure::stage)?;
            println!(
                "sample: {} points ({} components, gamma {}, {}) -> {}",
                labeled.len(),
                mixture.num_components(),
                sampler.gamma,
                sampler.method.name(),
                out.display()
            );
            Ok(())
        }
        Command::Diagnose {
            config,
            mixture,
            samples,
            out,
        } => {
            let cfg = load_config(&config)?;
            let mixture = read_mixture_json_file::<f64>(&mixture).map_err(Failure::config)?;
            let labeled = match samples {
                Some(path) => {
                    let mut realizations =
                        read_labeled_csv_file::<f64>(&path).map_err(Failure::config)?;
                    if realizations.is_empty() {
                        None
                    } else {
                        Some(realizations.swap_remove(0))
                    }
                }
                None => None,
            };
            let assembled = build_posterior(&cfg).map_err(Failure::stage)?;
            let oracle = ppp_bayes::diagnostics::oracle_moments(
                &assembled.posterior,
                cfg.oracle_m,
                cfg.seeds.prior,
            )
            .map_err(Failure::stage)?;
            let records = run_diagnostics(
                &cfg,
                &assembled.posterior,
                &mixture,
                labeled.as_ref(),
                &oracle,
            )
            .map_err(Failure::stage)?;
            let path = out.unwrap_or_else(|| {
                Path::new(&cfg.output).join("diagnostics.json")
            });
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)
                    .map_err(|e| Failure::stage(Error::io(parent, e)))?;
            }
            write_json(&path, &records).map_err(Failure::stage)?;
            let passed = records.iter().filter(|r| r.pass).count();
            println!("diagnose: {passed}/{} checks passed -> {}", records.len(), path.display());
            for r in &records {
                println!(
                    "  [{}] {}",
                    if r.pass { "pass" } else { "FAIL" },
                    r.test_name
                );
            }
            Ok(())
        }
        Command::Experiment {
            name,
            config,
            out,
            seed,
            gamma,
            method,
        } => {
            let model = ModelKind::parse(&name).map_err(Failure::config)?;
            let cfg = match config {
                Some(path) => {
                    let cfg = load_config(&path)?;
                    if cfg.model != model {
                        return Err(Failure::config(format!(
                            "config is for model `{}`, requested `{}`",
                            cfg.model.name(),
                            model.name()
                        )));
                    }
                    cfg
                }
                None => ExperimentConfig::defaults(model),
            };
            let cfg = apply_overrides(cfg, seed, gamma, method.as_deref())?;
            let dir = output_dir(&cfg, out.as_deref());
            let output = run_experiment(&cfg, &dir).map_err(Failure::stage)?;
            println!(
                "experiment {}: {} sample points, oracle ess {:.1} -> {}",
                cfg.model.name(),
                output.report.sample.total,
                output.report.oracle.ess,
                dir.display()
            );
            for r in &output.report.diagnostics {
                println!(
                    "  [{}] {}",
                    if r.pass { "pass" } else { "FAIL" },
                    r.test_name
                );
            }
            Ok(())
        }
    }
}
