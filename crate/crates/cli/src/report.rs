//! Report and diagnostics JSON shapes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// One diagnostic entry: a statistic with either a p-value (hypothesis
/// tests) or a distance (density comparisons).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagnosticRecord {
    pub test_name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub statistic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
    pub params: serde_json::Value,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedsJson {
    pub prior: u64,
    pub em: u64,
    pub sampler: u64,
    pub noise: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitJson {
    pub iterations: usize,
    pub final_log_likelihood: f64,
    pub converged: bool,
    pub ess: f64,
    pub warnings: Vec<String>,
    pub log_likelihood_trace: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleJson {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub ess: f64,
    pub std_errors: Vec<f64>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DensityQuantiles {
    pub p85: f64,
    pub p90: f64,
    pub p95: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleJson {
    pub total: usize,
    pub per_label: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pooled_mean: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pooled_cov: Option<Vec<Vec<f64>>>,
    /// Mixture-density quantiles of the sampled points.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density_quantiles: Option<DensityQuantiles>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Timings {
    pub fit_s: f64,
    pub sample_s: f64,
    pub oracle_s: f64,
    pub diagnose_s: f64,
    pub total_s: f64,
}

/// The full experiment report. With fixed seeds everything except `timings`
/// is byte-reproducible.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub model: String,
    pub config: BTreeMap<String, String>,
    pub seeds: SeedsJson,
    pub observation: Vec<f64>,
    pub mixture: serde_json::Value,
    pub fit: FitJson,
    pub oracle: OracleJson,
    pub sample: SampleJson,
    pub diagnostics: Vec<DiagnosticRecord>,
    pub notes: Vec<String>,
    pub timings: Timings,
}
