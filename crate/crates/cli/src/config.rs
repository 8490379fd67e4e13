//! Experiment configuration: a flat text format with dotted keys, e.g.
//!
//! ```text
//! model = bimodal
//! em.K = 2
//! sampler.gamma = 1000
//! ```
//!
//! Unknown keys are rejected; absent keys fall back to per-model defaults.
//! `serialize` emits the fully resolved config in canonical form, and
//! parse(serialize(parse(x))) == parse(x).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ppp_bayes::forward::param_from_conductivity;
use ppp_bayes::mixture::WeightFormula;
use ppp_bayes::sampler::SampleMethod;
use ppp_bayes::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Unimodal,
    Bimodal,
    Heat2d,
    Kl,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "unimodal" => Ok(ModelKind::Unimodal),
            "bimodal" => Ok(ModelKind::Bimodal),
            "heat2d" => Ok(ModelKind::Heat2d),
            "kl" => Ok(ModelKind::Kl),
            other => Err(Error::Parse(format!(
                "unknown model `{other}` (expected unimodal|bimodal|heat2d|kl)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Unimodal => "unimodal",
            ModelKind::Bimodal => "bimodal",
            ModelKind::Heat2d => "heat2d",
            ModelKind::Kl => "kl",
        }
    }

    pub fn param_dim(&self) -> usize {
        match self {
            ModelKind::Kl => 3,
            _ => 2,
        }
    }

    fn default_k(&self) -> usize {
        match self {
            ModelKind::Unimodal => 3,
            ModelKind::Bimodal => 2,
            ModelKind::Heat2d => 2,
            ModelKind::Kl => 3,
        }
    }

    fn default_observation(&self) -> ObservationSpec {
        match self {
            ModelKind::Unimodal => ObservationSpec::Explicit(vec![-0.0173, -0.573]),
            ModelKind::Bimodal => ObservationSpec::Explicit(vec![4.2297]),
            ModelKind::Heat2d | ModelKind::Kl => ObservationSpec::Synthesize,
        }
    }

    fn default_true_theta(&self) -> Vec<f64> {
        match self {
            ModelKind::Unimodal => vec![0.0865, -0.8157],
            ModelKind::Bimodal => vec![-1.5621, -0.0021],
            ModelKind::Heat2d => vec![
                param_from_conductivity(32.0),
                param_from_conductivity(28.0),
            ],
            ModelKind::Kl => vec![0.1, 0.4, -0.4],
        }
    }

    fn default_oracle_m(&self) -> usize {
        match self {
            // Each heat oracle sample is a PDE solve; keep the default modest.
            ModelKind::Heat2d => 10_000,
            _ => 100_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ObservationSpec {
    Explicit(Vec<f64>),
    Synthesize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PriorChoice {
    /// The model's own prior (standard normal, uniform box, or the KL
    /// eigenvalue-scaled Gaussian).
    Default,
    /// Independent Gaussian coordinates.
    Gaussian { mean: Vec<f64>, sd: Vec<f64> },
    /// Uniform on an axis box.
    Uniform { lower: Vec<f64>, upper: Vec<f64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seeds {
    pub prior: u64,
    pub em: u64,
    pub sampler: u64,
    pub noise: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            prior: 11,
            em: 22,
            sampler: 33,
            noise: 44,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmSettings {
    pub k: usize,
    pub m: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub cov_floor: f64,
    pub weight_formula: WeightFormula,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerSettings {
    pub gamma: f64,
    pub method: SampleMethod,
    pub box_sigma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeatSettings {
    pub grid_n: usize,
    /// Absolute noise standard deviation per sensor, in temperature units.
    /// The inclusion-induced sensor signal is well under 1 K on a ~200 K
    /// reading, so noise must be specified absolutely to keep the data
    /// informative.
    pub noise_sd: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KlSettings {
    pub mesh_nodes: usize,
    pub obs_count: usize,
    pub noise_sd: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub output: String,
    pub observation: ObservationSpec,
    pub true_theta: Vec<f64>,
    pub prior: PriorChoice,
    pub em: EmSettings,
    pub oracle_m: usize,
    pub sampler: SamplerSettings,
    pub seeds: Seeds,
    pub heat: HeatSettings,
    pub kl: KlSettings,
}

impl ExperimentConfig {
    /// The fully resolved defaults for a model.
    pub fn defaults(model: ModelKind) -> Self {
        ExperimentConfig {
            model,
            output: format!("out/{}", model.name()),
            observation: model.default_observation(),
            true_theta: model.default_true_theta(),
            prior: PriorChoice::Default,
            em: EmSettings {
                k: model.default_k(),
                m: 10_000,
                max_iter: 500,
                tol: 1e-8,
                cov_floor: 1e-6,
                weight_formula: WeightFormula::Likelihood,
            },
            oracle_m: model.default_oracle_m(),
            sampler: SamplerSettings {
                gamma: 1000.0,
                method: SampleMethod::Direct,
                box_sigma: 6.0,
            },
            seeds: Seeds::default(),
            heat: HeatSettings {
                grid_n: 65,
                noise_sd: 0.02,
            },
            kl: KlSettings {
                mesh_nodes: 101,
                obs_count: 9,
                noise_sd: 0.01,
            },
        }
    }

    /// Base seed override: derives the four stage seeds as base, base+1, ….
    pub fn with_base_seed(mut self, base: u64) -> Self {
        self.seeds = Seeds {
            prior: base,
            em: base.wrapping_add(1),
            sampler: base.wrapping_add(2),
            noise: base.wrapping_add(3),
        };
        self
    }

    pub fn obs_dim(&self) -> usize {
        match self.model {
            ModelKind::Unimodal => 2,
            ModelKind::Bimodal => 1,
            ModelKind::Heat2d => 5,
            ModelKind::Kl => self.kl.obs_count,
        }
    }

    fn validate(&self) -> Result<()> {
        let d = self.model.param_dim();
        if self.true_theta.len() != d {
            return Err(Error::Parse(format!(
                "true_theta has length {}, model `{}` has {d} parameters",
                self.true_theta.len(),
                self.model.name()
            )));
        }
        if let ObservationSpec::Explicit(v) = &self.observation {
            if v.len() != self.obs_dim() {
                return Err(Error::Parse(format!(
                    "observation has length {}, model `{}` produces {}",
                    v.len(),
                    self.model.name(),
                    self.obs_dim()
                )));
            }
        }
        match &self.prior {
            PriorChoice::Default => {}
            PriorChoice::Gaussian { mean, sd } => {
                if mean.len() != d || sd.len() != d {
                    return Err(Error::Parse("prior.mean/prior.sd length mismatch".into()));
                }
                if sd.iter().any(|&s| s <= 0.0) {
                    return Err(Error::Parse("prior.sd must be positive".into()));
                }
            }
            PriorChoice::Uniform { lower, upper } => {
                if lower.len() != d || upper.len() != d {
                    return Err(Error::Parse("prior.lower/prior.upper length mismatch".into()));
                }
                if lower.iter().zip(upper).any(|(l, u)| l >= u) {
                    return Err(Error::Parse("prior box requires lower < upper".into()));
                }
            }
        }
        if self.em.k == 0 || self.em.m == 0 || self.em.max_iter == 0 {
            return Err(Error::Parse("em.K, em.M, em.max_iter must be positive".into()));
        }
        if self.em.tol <= 0.0 || self.em.cov_floor <= 0.0 {
            return Err(Error::Parse("em.tol and em.cov_floor must be positive".into()));
        }
        if self.oracle_m < 1000 {
            return Err(Error::Parse("oracle.M must be at least 1000".into()));
        }
        if self.sampler.gamma <= 0.0 {
            return Err(Error::Parse("sampler.gamma must be positive".into()));
        }
        if self.sampler.box_sigma < 4.0 {
            return Err(Error::Parse("sampler.box_sigma must be at least 4".into()));
        }
        if self.heat.grid_n < 33 {
            return Err(Error::Parse("heat.grid_n must be at least 33".into()));
        }
        if self.heat.noise_sd <= 0.0 {
            return Err(Error::Parse("heat.noise_sd must be positive".into()));
        }
        if self.kl.mesh_nodes < 11 {
            return Err(Error::Parse("kl.mesh_nodes must be at least 11".into()));
        }
        if self.kl.obs_count == 0 {
            return Err(Error::Parse("kl.obs_count must be positive".into()));
        }
        if self.kl.noise_sd <= 0.0 {
            return Err(Error::Parse("kl.noise_sd must be positive".into()));
        }
        Ok(())
    }

    /// Canonical dotted-key map of the resolved config.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("model", self.model.name().to_string());
        put("output", self.output.clone());
        put(
            "observation",
            match &self.observation {
                ObservationSpec::Explicit(v) => join_floats(v),
                ObservationSpec::Synthesize => "synthesize".into(),
            },
        );
        put("true_theta", join_floats(&self.true_theta));
        match &self.prior {
            PriorChoice::Default => put("prior", "default".into()),
            PriorChoice::Gaussian { mean, sd } => {
                put("prior", "gaussian".into());
                put("prior.mean", join_floats(mean));
                put("prior.sd", join_floats(sd));
            }
            PriorChoice::Uniform { lower, upper } => {
                put("prior", "uniform".into());
                put("prior.lower", join_floats(lower));
                put("prior.upper", join_floats(upper));
            }
        }
        put("em.K", self.em.k.to_string());
        put("em.M", self.em.m.to_string());
        put("em.max_iter", self.em.max_iter.to_string());
        put("em.tol", format!("{}", self.em.tol));
        put("em.cov_floor", format!("{}", self.em.cov_floor));
        put(
            "em.weight_formula",
            match self.em.weight_formula {
                WeightFormula::Likelihood => "likelihood".into(),
                WeightFormula::PotentialTimesPrior => "potential-prior".to_string(),
            },
        );
        put("oracle.M", self.oracle_m.to_string());
        put("sampler.gamma", format!("{}", self.sampler.gamma));
        put("sampler.method", self.sampler.method.name().to_string());
        put("sampler.box_sigma", format!("{}", self.sampler.box_sigma));
        put("seeds.prior", self.seeds.prior.to_string());
        put("seeds.em", self.seeds.em.to_string());
        put("seeds.sampler", self.seeds.sampler.to_string());
        put("seeds.noise", self.seeds.noise.to_string());
        put("heat.grid_n", self.heat.grid_n.to_string());
        put("heat.noise_sd", format!("{}", self.heat.noise_sd));
        put("kl.mesh_nodes", self.kl.mesh_nodes.to_string());
        put("kl.obs_count", self.kl.obs_count.to_string());
        put("kl.noise_sd", format!("{}", self.kl.noise_sd));
        m
    }

    /// Canonical text form.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_map() {
            writeln!(s, "{k} = {v}").expect("string write");
        }
        s
    }
}

fn join_floats(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_floats(s: &str, key: &str, lineno: usize) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>().map_err(|e| {
                Error::Parse(format!("line {lineno}: key `{key}`: value `{tok}`: {e}"))
            })
        })
        .collect()
}

fn parse_num<T: std::str::FromStr>(s: &str, key: &str, lineno: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>()
        .map_err(|e| Error::Parse(format!("line {lineno}: key `{key}`: value `{s}`: {e}")))
}

/// Parses the text format. `model` is required; everything else defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut pairs: Vec<(usize, String, String)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = match raw.find('#') {
            Some(at) => &raw[..at],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Parse(format!("line {lineno}: expected `key = value`, got `{line}`"))
        })?;
        pairs.push((lineno, key.trim().to_string(), value.trim().to_string()));
    }

    let model_entry = pairs
        .iter()
        .find(|(_, k, _)| k == "model")
        .ok_or_else(|| Error::Parse("missing required key `model`".into()))?;
    let model = ModelKind::parse(&model_entry.2)
        .map_err(|e| Error::Parse(format!("line {}: {e}", model_entry.0)))?;

    let mut cfg = ExperimentConfig::defaults(model);
    let mut prior_kind: Option<String> = None;
    let mut prior_mean: Option<Vec<f64>> = None;
    let mut prior_sd: Option<Vec<f64>> = None;
    let mut prior_lower: Option<Vec<f64>> = None;
    let mut prior_upper: Option<Vec<f64>> = None;

    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (lineno, key, value) in &pairs {
        if let Some(first) = seen.insert(key.clone(), *lineno) {
            return Err(Error::Parse(format!(
                "line {lineno}: key `{key}` already set on line {first}"
            )));
        }
        let lineno = *lineno;
        match key.as_str() {
            "model" => {}
            "output" => cfg.output = value.clone(),
            "observation" => {
                cfg.observation = if value == "synthesize" {
                    ObservationSpec::Synthesize
                } else {
                    ObservationSpec::Explicit(parse_floats(value, key, lineno)?)
                }
            }
            "true_theta" => cfg.true_theta = parse_floats(value, key, lineno)?,
            "prior" => prior_kind = Some(value.clone()),
            "prior.mean" => prior_mean = Some(parse_floats(value, key, lineno)?),
            "prior.sd" => prior_sd = Some(parse_floats(value, key, lineno)?),
            "prior.lower" => prior_lower = Some(parse_floats(value, key, lineno)?),
            "prior.upper" => prior_upper = Some(parse_floats(value, key, lineno)?),
            "em.K" => cfg.em.k = parse_num(value, key, lineno)?,
            "em.M" => cfg.em.m = parse_num(value, key, lineno)?,
            "em.max_iter" => cfg.em.max_iter = parse_num(value, key, lineno)?,
            "em.tol" => cfg.em.tol = parse_num(value, key, lineno)?,
            "em.cov_floor" => cfg.em.cov_floor = parse_num(value, key, lineno)?,
            "em.weight_formula" => {
                cfg.em.weight_formula = match value.as_str() {
                    "likelihood" => WeightFormula::Likelihood,
                    "potential-prior" => WeightFormula::PotentialTimesPrior,
                    other => {
                        return Err(Error::Parse(format!(
                            "line {lineno}: unknown weight formula `{other}`"
                        )))
                    }
                }
            }
            "oracle.M" => cfg.oracle_m = parse_num(value, key, lineno)?,
            "sampler.gamma" => cfg.sampler.gamma = parse_num(value, key, lineno)?,
            "sampler.method" => {
                cfg.sampler.method = SampleMethod::parse(value)
                    .map_err(|e| Error::Parse(format!("line {lineno}: {e}")))?
            }
            "sampler.box_sigma" => cfg.sampler.box_sigma = parse_num(value, key, lineno)?,
            "seeds.prior" => cfg.seeds.prior = parse_num(value, key, lineno)?,
            "seeds.em" => cfg.seeds.em = parse_num(value, key, lineno)?,
            "seeds.sampler" => cfg.seeds.sampler = parse_num(value, key, lineno)?,
            "seeds.noise" => cfg.seeds.noise = parse_num(value, key, lineno)?,
            "heat.grid_n" => cfg.heat.grid_n = parse_num(value, key, lineno)?,
            "heat.noise_sd" => cfg.heat.noise_sd = parse_num(value, key, lineno)?,
            "kl.mesh_nodes" => cfg.kl.mesh_nodes = parse_num(value, key, lineno)?,
            "kl.obs_count" => cfg.kl.obs_count = parse_num(value, key, lineno)?,
            "kl.noise_sd" => cfg.kl.noise_sd = parse_num(value, key, lineno)?,
            other => {
                return Err(Error::Parse(format!(
                    "line {lineno}: unknown key `{other}`"
                )))
            }
        }
    }

    cfg.prior = match prior_kind.as_deref() {
        None | Some("default") => PriorChoice::Default,
        Some("gaussian") => {
            let d = model.param_dim();
            PriorChoice::Gaussian {
                mean: prior_mean.unwrap_or_else(|| vec![0.0; d]),
                sd: prior_sd.unwrap_or_else(|| vec![1.0; d]),
            }
        }
        Some("uniform") => {
            let d = model.param_dim();
            PriorChoice::Uniform {
                lower: prior_lower.unwrap_or_else(|| vec![-1.0; d]),
                upper: prior_upper.unwrap_or_else(|| vec![1.0; d]),
            }
        }
        Some(other) => {
            return Err(Error::Parse(format!(
                "unknown prior `{other}` (expected default|gaussian|uniform)"
            )))
        }
    };

    cfg.validate()?;
    Ok(cfg)
}
