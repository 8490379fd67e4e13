//! Gaussian mixture approximation of the posterior density, fitted by an
//! importance-weighted EM algorithm on prior samples.

use rayon::prelude::*;

use crate::bayes::PosteriorSpec;
use crate::error::{Error, Result};
use crate::linalg::{weighted_moments, Cholesky, SymMat};
use crate::rng::{substream, tags};
use crate::scalar::{count_as, real, widen, Scalar};

/// Weight-sum tolerance for mixtures and weighted sample sets.
const WEIGHT_SUM_TOL: f64 = 1e-10;

/// One mixture component N(ϑ, Ξ) with weight w.
#[derive(Clone, Debug)]
pub struct GaussianComponent<T> {
    weight: T,
    mean: Vec<T>,
    cov: SymMat<T>,
    chol: Cholesky<T>,
    log_norm: T,
}

impl<T: Scalar> GaussianComponent<T> {
    pub fn new(weight: T, mean: Vec<T>, cov: SymMat<T>) -> Result<Self> {
        if !(weight.is_finite() && weight >= T::zero() && weight <= T::one()) {
            return Err(Error::invalid(format!(
                "component weight must lie in [0, 1], got {weight}"
            )));
        }
        if mean.len() != cov.n() {
            return Err(Error::invalid(
                "component mean and covariance dimensions differ",
            ));
        }
        let chol = cov.cholesky()?;
        let d = count_as::<T>(mean.len());
        let log_2pi = real::<T>((2.0 * std::f64::consts::PI).ln());
        let half = real::<T>(0.5);
        let log_norm = -half * (d * log_2pi + chol.log_det());
        Ok(GaussianComponent {
            weight,
            mean,
            cov,
            chol,
            log_norm,
        })
    }

    pub fn weight(&self) -> T {
        self.weight
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn cov(&self) -> &SymMat<T> {
        &self.cov
    }

    pub(crate) fn chol(&self) -> &Cholesky<T> {
        &self.chol
    }

    /// log N(θ; ϑ, Ξ).
    pub fn log_density_at(&self, theta: &[T]) -> T {
        let centered: Vec<T> = theta.iter().zip(&self.mean).map(|(t, m)| *t - *m).collect();
        let half = real::<T>(0.5);
        self.log_norm - half * self.chol.inv_quad_form(&centered)
    }

    pub fn density_at(&self, theta: &[T]) -> T {
        self.log_density_at(theta).exp()
    }
}

/// Normalized Gaussian mixture Σ w_k N(ϑ_k, Ξ_k).
#[derive(Clone, Debug)]
pub struct GaussianMixture<T> {
    dim: usize,
    components: Vec<GaussianComponent<T>>,
}

impl<T: Scalar> GaussianMixture<T> {
    pub fn new(components: Vec<GaussianComponent<T>>) -> Result<Self> {
        let dim = components
            .first()
            .map(|c| c.mean.len())
            .ok_or_else(|| Error::invalid("mixture needs at least one component"))?;
        if components.iter().any(|c| c.mean.len() != dim) {
            return Err(Error::invalid("mixture components have mixed dimensions"));
        }
        let total: T = components.iter().map(|c| c.weight).sum();
        if (total - T::one()).abs() > real::<T>(WEIGHT_SUM_TOL) {
            return Err(Error::invalid(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        Ok(GaussianMixture { dim, components })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[GaussianComponent<T>] {
        &self.components
    }

    pub fn weights(&self) -> Vec<T> {
        self.components.iter().map(|c| c.weight).collect()
    }

    /// Mixture density Σ_k w_k φ_k(θ).
    pub fn density(&self, theta: &[T]) -> T {
        self.log_density(theta).exp()
    }

    pub fn log_density(&self, theta: &[T]) -> T {
        let logs: Vec<T> = self
            .components
            .iter()
            .filter(|c| c.weight > T::zero())
            .map(|c| c.weight.ln() + c.log_density_at(theta))
            .collect();
        log_sum_exp(&logs)
    }

    /// Mean of the mixture distribution, Σ w_k ϑ_k.
    pub fn analytic_mean(&self) -> Vec<T> {
        let mut mean = vec![T::zero(); self.dim];
        for c in &self.components {
            for (m, &x) in mean.iter_mut().zip(&c.mean) {
                *m += c.weight * x;
            }
        }
        mean
    }

    /// Covariance of the mixture distribution,
    /// Σ w_k (Ξ_k + ϑ_k ϑ_kᵀ) − μ μᵀ.
    pub fn analytic_cov(&self) -> SymMat<T> {
        let mean = self.analytic_mean();
        let mut cov = SymMat::zeros(self.dim);
        for c in &self.components {
            for i in 0..self.dim {
                for j in 0..=i {
                    let v = cov.get(i, j)
                        + c.weight * (c.cov.get(i, j) + c.mean[i] * c.mean[j]);
                    cov.set_sym(i, j, v);
                }
            }
        }
        for i in 0..self.dim {
            for j in 0..=i {
                let v = cov.get(i, j) - mean[i] * mean[j];
                cov.set_sym(i, j, v);
            }
        }
        cov
    }
}

/// Prior samples with self-normalized importance weights.
#[derive(Clone, Debug)]
pub struct WeightedSampleSet<T> {
    samples: Vec<Vec<T>>,
    weights: Vec<T>,
}

impl<T: Scalar> WeightedSampleSet<T> {
    pub fn new(samples: Vec<Vec<T>>, weights: Vec<T>) -> Result<Self> {
        if samples.len() != weights.len() {
            return Err(Error::invalid("sample and weight counts differ"));
        }
        if samples.is_empty() {
            return Err(Error::invalid("weighted sample set must be non-empty"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < T::zero()) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        let total: T = weights.iter().copied().sum();
        if (total - T::one()).abs() > real::<T>(WEIGHT_SUM_TOL) {
            return Err(Error::invalid(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        let dim = samples[0].len();
        if samples.iter().any(|s| s.len() != dim) {
            return Err(Error::invalid("samples have mixed dimensions"));
        }
        Ok(WeightedSampleSet { samples, weights })
    }

    /// Normalizes log-weights through log-sum-exp.
    pub fn from_log_weights(samples: Vec<Vec<T>>, log_weights: &[T]) -> Result<Self> {
        if samples.len() != log_weights.len() || samples.is_empty() {
            return Err(Error::invalid("sample and log-weight counts must match"));
        }
        let lse = log_sum_exp(log_weights);
        if !lse.is_finite() {
            return Err(Error::DegenerateWeights(
                "all log-weights are -inf; observation incompatible with every sample".into(),
            ));
        }
        let weights: Vec<T> = log_weights.iter().map(|lw| (*lw - lse).exp()).collect();
        // Renormalize in linear space to absorb exp rounding.
        let total: T = weights.iter().copied().sum();
        let weights = weights.into_iter().map(|w| w / total).collect();
        Self::new(samples, weights)
    }

    pub fn uniform(samples: Vec<Vec<T>>) -> Result<Self> {
        let n = samples.len();
        if n == 0 {
            return Err(Error::invalid("weighted sample set must be non-empty"));
        }
        let w = T::one() / count_as::<T>(n);
        Self::new(samples, vec![w; n])
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    pub fn samples(&self) -> &[Vec<T>] {
        &self.samples
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// Effective sample size 1/Σ w².
    pub fn ess(&self) -> T {
        T::one() / self.weights.iter().map(|w| *w * *w).sum::<T>()
    }

    /// Weighted mean and covariance.
    pub fn moments(&self) -> (Vec<T>, SymMat<T>) {
        weighted_moments(&self.samples, &self.weights)
    }
}

/// Importance weight formula applied to prior samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightFormula {
    /// r = exp(−Φ(θ)): likelihood weighting; prior samples weighted by the
    /// likelihood target the posterior. The default.
    Likelihood,
    /// r = Φ(θ)·π_pr(θ): alternative weighting retained for comparison runs.
    PotentialTimesPrior,
}

/// Self-normalized importance weights for prior samples.
pub fn importance_weights<T: Scalar>(
    model: &PosteriorSpec<T>,
    samples: Vec<Vec<T>>,
) -> Result<WeightedSampleSet<T>> {
    importance_weights_with(model, samples, WeightFormula::Likelihood)
}

pub fn importance_weights_with<T: Scalar>(
    model: &PosteriorSpec<T>,
    samples: Vec<Vec<T>>,
    formula: WeightFormula,
) -> Result<WeightedSampleSet<T>> {
    if samples.is_empty() {
        return Err(Error::invalid("importance weighting needs samples"));
    }
    let potentials: Vec<T> = samples
        .par_iter()
        .map(|theta| model.potential(theta))
        .collect::<Result<_>>()?;
    match formula {
        WeightFormula::Likelihood => {
            let log_weights: Vec<T> = potentials.iter().map(|phi| -*phi).collect();
            WeightedSampleSet::from_log_weights(samples, &log_weights)
        }
        WeightFormula::PotentialTimesPrior => {
            let raw: Vec<T> = samples
                .iter()
                .zip(&potentials)
                .map(|(theta, phi)| *phi * model.prior().density(theta))
                .collect();
            let total: T = raw.iter().copied().sum();
            if !(total.is_finite() && total > T::zero()) {
                return Err(Error::DegenerateWeights(
                    "potential-times-prior weights sum to zero".into(),
                ));
            }
            let weights = raw.into_iter().map(|w| w / total).collect();
            WeightedSampleSet::new(samples, weights)
        }
    }
}

/// Responsibility matrix ρ (M×K), rows summing to 1.
#[derive(Clone, Debug)]
pub struct Responsibilities<T> {
    m: usize,
    k: usize,
    data: Vec<T>,
}

impl<T: Scalar> Responsibilities<T> {
    pub fn num_samples(&self) -> usize {
        self.m
    }

    pub fn num_components(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.k..(i + 1) * self.k]
    }
}

/// E-step: ρ_ik = w_k φ_k(θ_i) / Σ_l w_l φ_l(θ_i), computed in log space.
pub fn e_step<T: Scalar>(
    mixture: &GaussianMixture<T>,
    samples: &[Vec<T>],
) -> Result<Responsibilities<T>> {
    Ok(e_step_with_row_log_density(mixture, samples)?.0)
}

/// E-step plus the per-sample log mixture densities log Σ_k w_k φ_k(θ_i)
/// (the pieces of the weighted log-likelihood).
fn e_step_with_row_log_density<T: Scalar>(
    mixture: &GaussianMixture<T>,
    samples: &[Vec<T>],
) -> Result<(Responsibilities<T>, Vec<T>)> {
    if samples.is_empty() {
        return Err(Error::invalid("e_step needs at least one sample"));
    }
    let k = mixture.num_components();
    let log_w: Vec<T> = mixture
        .components()
        .iter()
        .map(|c| {
            if c.weight() > T::zero() {
                c.weight().ln()
            } else {
                T::neg_infinity()
            }
        })
        .collect();
    let rows: Vec<(Vec<T>, T)> = samples
        .par_iter()
        .enumerate()
        .map(|(i, theta)| {
            let logs: Vec<T> = mixture
                .components()
                .iter()
                .zip(&log_w)
                .map(|(c, lw)| {
                    if lw.is_finite() {
                        *lw + c.log_density_at(theta)
                    } else {
                        T::neg_infinity()
                    }
                })
                .collect();
            let lse = log_sum_exp(&logs);
            if !lse.is_finite() {
                return Err(Error::DegenerateResponsibility { sample: i });
            }
            let row: Vec<T> = logs.into_iter().map(|l| (l - lse).exp()).collect();
            Ok((row, lse))
        })
        .collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(samples.len() * k);
    let mut row_log_density = Vec::with_capacity(samples.len());
    for (row, lse) in rows {
        data.extend_from_slice(&row);
        row_log_density.push(lse);
    }
    Ok((
        Responsibilities {
            m: samples.len(),
            k,
            data,
        },
        row_log_density,
    ))
}

/// M-step: reweighted mixture update with ρ̂_ik = r̃_i ρ_ik,
/// w_k = Σ_i ρ̂_ik, ϑ_k and Ξ_k the ρ̂-weighted mean and scatter.
///
/// Covariances whose smallest eigenvalue falls below `cov_floor` get
/// `cov_floor·I` added. A component with Σ_i ρ̂_ik below 1e-12 is reseeded at
/// the sample with the largest weighted density deficit relative to
/// `current` (the mixture that produced `rho`), with the global weighted
/// covariance and weight 1/K, after which weights are renormalized.
pub fn m_step<T: Scalar>(
    data: &WeightedSampleSet<T>,
    rho: &Responsibilities<T>,
    cov_floor: T,
    current: Option<&GaussianMixture<T>>,
) -> Result<GaussianMixture<T>> {
    let m = data.len();
    let d = data.dim();
    let k = rho.num_components();
    if rho.num_samples() != m {
        return Err(Error::invalid(
            "responsibility rows do not match sample count",
        ));
    }
    if !(cov_floor.is_finite() && cov_floor > T::zero()) {
        return Err(Error::invalid("cov_floor must be positive"));
    }

    // ρ̂ column sums; Σ_k S_k = Σ_i r̃_i = 1.
    let mut col_sum = vec![T::zero(); k];
    for i in 0..m {
        let r = data.weights()[i];
        for (s, rho_ik) in col_sum.iter_mut().zip(rho.row(i)) {
            *s += r * *rho_ik;
        }
    }

    let empty_floor = real::<T>(1e-12);
    let mut components = Vec::with_capacity(k);
    let mut weights: Vec<T> = col_sum.clone();
    let mut reseeded = false;
    for j in 0..k {
        if col_sum[j] < empty_floor {
            let seed_at = deficit_argmax(data, current);
            let mean = data.samples()[seed_at].clone();
            let (_, mut cov) = data.moments();
            if !cov.min_eigenvalue_exceeds(cov_floor) {
                cov.add_diagonal(cov_floor);
            }
            weights[j] = T::one() / count_as::<T>(k);
            reseeded = true;
            components.push((mean, cov));
            continue;
        }
        let mut mean = vec![T::zero(); d];
        for i in 0..m {
            let w = data.weights()[i] * rho.row(i)[j] / col_sum[j];
            for (mm, &x) in mean.iter_mut().zip(&data.samples()[i]) {
                *mm += w * x;
            }
        }
        let mut cov = SymMat::zeros(d);
        for i in 0..m {
            let w = data.weights()[i] * rho.row(i)[j] / col_sum[j];
            let s = &data.samples()[i];
            for a in 0..d {
                let da = s[a] - mean[a];
                for b in 0..=a {
                    let db = s[b] - mean[b];
                    let v = cov.get(a, b) + w * da * db;
                    cov.set_sym(a, b, v);
                }
            }
        }
        if !cov.min_eigenvalue_exceeds(cov_floor) {
            cov.add_diagonal(cov_floor);
        }
        components.push((mean, cov));
    }

    if reseeded {
        let total: T = weights.iter().copied().sum();
        for w in &mut weights {
            *w /= total;
        }
    }

    let comps = components
        .into_iter()
        .zip(weights)
        .map(|((mean, cov), w)| GaussianComponent::new(w.min(T::one()), mean, cov))
        .collect::<Result<Vec<_>>>()?;
    GaussianMixture::new(comps)
}

/// Index of the sample where the current mixture most underestimates the
/// weighted target; falls back to the heaviest sample.
fn deficit_argmax<T: Scalar>(
    data: &WeightedSampleSet<T>,
    current: Option<&GaussianMixture<T>>,
) -> usize {
    match current {
        Some(mix) => {
            let dens: Vec<T> = data.samples().iter().map(|s| mix.density(s)).collect();
            let total: T = dens.iter().copied().sum();
            let mut best = 0;
            let mut best_deficit = T::neg_infinity();
            for (i, (&w, &q)) in data.weights().iter().zip(&dens).enumerate() {
                let q_norm = if total > T::zero() { q / total } else { T::zero() };
                let deficit = w - q_norm;
                if deficit > best_deficit {
                    best_deficit = deficit;
                    best = i;
                }
            }
            best
        }
        None => {
            let mut best = 0;
            for (i, &w) in data.weights().iter().enumerate() {
                if w > data.weights()[best] {
                    best = i;
                }
            }
            best
        }
    }
}

/// EM configuration.
///
/// `cov_floor` is a relative scale: the absolute floor used on covariance
/// eigenvalues is `cov_floor` times the mean per-axis weighted sample
/// variance.
#[derive(Clone, Copy, Debug)]
pub struct EmConfig<T> {
    pub k: usize,
    pub max_iter: usize,
    pub tol: T,
    pub cov_floor: T,
    pub seed: u64,
    pub weight_formula: WeightFormula,
}

impl<T: Scalar> EmConfig<T> {
    pub fn new(k: usize) -> Self {
        EmConfig {
            k,
            max_iter: 500,
            tol: real(1e-8),
            cov_floor: real(1e-6),
            seed: 0,
            weight_formula: WeightFormula::Likelihood,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("EM needs at least one component"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be positive"));
        }
        if !(self.tol > T::zero()) {
            return Err(Error::invalid("tol must be positive"));
        }
        if !(self.cov_floor > T::zero()) {
            return Err(Error::invalid("cov_floor must be positive"));
        }
        Ok(())
    }
}

/// Fit summary.
#[derive(Clone, Debug)]
pub struct FitReport {
    /// Number of M-step updates performed.
    pub iterations: usize,
    /// Weighted log-likelihood of the returned mixture.
    pub final_log_likelihood: f64,
    /// Weighted log-likelihood after each E-step, starting at the initial
    /// mixture.
    pub log_likelihood_trace: Vec<f64>,
    pub converged: bool,
    pub ess: f64,
    pub warnings: Vec<String>,
}

/// Draws `m` prior samples, importance-weights them, and runs the EM fit.
pub fn em_fit<T: Scalar>(
    model: &PosteriorSpec<T>,
    m: usize,
    config: &EmConfig<T>,
) -> Result<(GaussianMixture<T>, FitReport)> {
    config.validate()?;
    let mut prior_rng = substream(config.seed, tags::EM_PRIOR, 0);
    let samples = model.prior().sample(m, &mut prior_rng);
    let data = importance_weights_with(model, samples, config.weight_formula)?;
    em_fit_weighted(&data, config)
}

/// EM on an existing weighted sample set.
pub fn em_fit_weighted<T: Scalar>(
    data: &WeightedSampleSet<T>,
    config: &EmConfig<T>,
) -> Result<(GaussianMixture<T>, FitReport)> {
    config.validate()?;
    let m = data.len();
    let d = data.dim();
    let k = config.k;
    let mut warnings = Vec::new();
    if m < 10 * k * d {
        warnings.push(format!(
            "sample count {m} below the 10·K·d = {} heuristic; fit may be unstable",
            10 * k * d
        ));
    }

    let (_, global_cov) = data.moments();
    let mut floor = config.cov_floor * global_cov.trace() / count_as::<T>(d);
    if !(floor > T::zero()) {
        floor = config.cov_floor;
    }

    let mut mixture = init_mixture(data, k, floor, config.seed)?;
    let mut trace: Vec<T> = Vec::new();
    let mut converged = false;
    let mut iterations = 0usize;
    for _ in 0..config.max_iter {
        let (rho, row_log_density) = e_step_with_row_log_density(&mixture, data.samples())?;
        let ll = weighted_sum(data.weights(), &row_log_density);
        if let Some(&prev) = trace.last() {
            let denom = prev.abs().max(real::<T>(1e-12));
            if ((ll - prev) / denom).abs() < config.tol {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);
        mixture = m_step(data, &rho, floor, Some(&mixture))?;
        iterations += 1;
    }
    if !converged {
        warnings.push(format!(
            "EM did not converge within {} iterations",
            config.max_iter
        ));
        // Record the likelihood of the final mixture.
        let (_, row_log_density) = e_step_with_row_log_density(&mixture, data.samples())?;
        trace.push(weighted_sum(data.weights(), &row_log_density));
    }

    let report = FitReport {
        iterations,
        final_log_likelihood: widen(*trace.last().expect("trace non-empty")),
        log_likelihood_trace: trace.iter().map(|v| widen(*v)).collect(),
        converged,
        ess: widen(data.ess()),
        warnings,
    };
    Ok((mixture, report))
}

/// Mixture density Σ_k w_k φ_k(θ).
pub fn mixture_density<T: Scalar>(mixture: &GaussianMixture<T>, theta: &[T]) -> T {
    mixture.density(theta)
}

/// Initial mixture: means spread over the weighted samples k-means++ style,
/// covariances set to the global weighted covariance, weights 1/K.
fn init_mixture<T: Scalar>(
    data: &WeightedSampleSet<T>,
    k: usize,
    floor: T,
    seed: u64,
) -> Result<GaussianMixture<T>> {
    let mut rng = substream(seed, tags::EM_INIT, 0);
    let (_, mut cov) = data.moments();
    if !cov.min_eigenvalue_exceeds(floor) {
        cov.add_diagonal(floor);
    }
    let means = weighted_kmeanspp(data, k, &mut rng);
    let w = T::one() / count_as::<T>(k);
    let comps = means
        .into_iter()
        .map(|mean| GaussianComponent::new(w, mean, cov.clone()))
        .collect::<Result<Vec<_>>>()?;
    GaussianMixture::new(comps)
}

fn weighted_kmeanspp<T: Scalar, R: rand::Rng + ?Sized>(
    data: &WeightedSampleSet<T>,
    k: usize,
    rng: &mut R,
) -> Vec<Vec<T>> {
    let samples = data.samples();
    let mut chosen: Vec<Vec<T>> = Vec::with_capacity(k);
    let first = categorical(data.weights(), rng);
    chosen.push(samples[first].clone());
    let mut d2: Vec<T> = samples
        .iter()
        .map(|s| squared_distance(s, &chosen[0]))
        .collect();
    while chosen.len() < k {
        let probs: Vec<T> = data
            .weights()
            .iter()
            .zip(&d2)
            .map(|(w, dd)| *w * *dd)
            .collect();
        let total: T = probs.iter().copied().sum();
        let next = if total > T::zero() {
            categorical(&probs, rng)
        } else {
            // All remaining mass sits on already chosen points; fall back to
            // plain weighted sampling (duplicates are handled by the floor).
            categorical(data.weights(), rng)
        };
        chosen.push(samples[next].clone());
        for (dd, s) in d2.iter_mut().zip(samples) {
            let nd = squared_distance(s, chosen.last().unwrap());
            if nd < *dd {
                *dd = nd;
            }
        }
    }
    chosen
}

/// Samples an index proportional to the (unnormalized) masses.
fn categorical<T: Scalar, R: rand::Rng + ?Sized>(masses: &[T], rng: &mut R) -> usize {
    let total: T = masses.iter().copied().sum();
    let target = T::unit_uniform(rng) * total;
    let mut acc = T::zero();
    for (i, &w) in masses.iter().enumerate() {
        acc += w;
        if target < acc {
            return i;
        }
    }
    masses.len() - 1
}

fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x - *y) * (*x - *y))
        .fold(T::zero(), |s, v| s + v)
}

fn weighted_sum<T: Scalar>(weights: &[T], values: &[T]) -> T {
    weights
        .iter()
        .zip(values)
        .map(|(w, v)| *w * *v)
        .fold(T::zero(), |s, v| s + v)
}

/// log Σ exp, −∞ for an empty or all-−∞ input.
pub(crate) fn log_sum_exp<T: Scalar>(logs: &[T]) -> T {
    let max = logs
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| a.max(b));
    if !max.is_finite() {
        return max;
    }
    let sum: T = logs.iter().map(|l| (*l - max).exp()).sum();
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::{FnForwardModel, PriorSpec};
    use crate::rng::{substream, tags};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn rng(ix: u64) -> crate::rng::StreamRng {
        substream(777, tags::USER, ix)
    }

    fn component(w: f64, mean: Vec<f64>, cov: Vec<Vec<f64>>) -> GaussianComponent<f64> {
        GaussianComponent::new(w, mean, SymMat::from_rows(&cov).unwrap()).unwrap()
    }

    #[test]
    fn component_density_closed_form() {
        let c = component(1.0, vec![0.0], vec![vec![1.0]]);
        assert_relative_eq!(
            c.density_at(&[0.0]),
            1.0 / (2.0 * std::f64::consts::PI).sqrt(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn mixture_validation() {
        let a = component(0.6, vec![0.0], vec![vec![1.0]]);
        let b = component(0.4, vec![1.0], vec![vec![1.0]]);
        assert!(GaussianMixture::new(vec![a.clone(), b]).is_ok());
        let c = component(0.5, vec![1.0], vec![vec![1.0]]);
        assert!(GaussianMixture::new(vec![a, c]).is_err());
        assert!(GaussianMixture::<f64>::new(vec![]).is_err());
    }

    #[test]
    fn mixture_density_integrates_to_one() {
        // 1-D quadrature over ±10σ with 2000 nodes.
        let mix = GaussianMixture::new(vec![
            component(0.3, vec![-1.0], vec![vec![0.5]]),
            component(0.7, vec![2.0], vec![vec![2.0]]),
        ])
        .unwrap();
        let (lo, hi) = (-1.0 - 10.0 * 0.5f64.sqrt(), 2.0 + 10.0 * 2.0f64.sqrt());
        let n = 2000;
        let h = (hi - lo) / n as f64;
        let mass: f64 = (0..n)
            .map(|i| mix.density(&[lo + (i as f64 + 0.5) * h]) * h)
            .sum();
        assert!((mass - 1.0).abs() < 1e-6, "mass {mass}");
    }

    #[test]
    fn analytic_moments_match_sampled() {
        let mix = GaussianMixture::new(vec![
            component(0.5, vec![1.0, 1.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
            component(0.5, vec![-1.0, -1.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
        ])
        .unwrap();
        let mean = mix.analytic_mean();
        assert_relative_eq!(mean[0], 0.0);
        let cov = mix.analytic_cov();
        // Var = within (1) + between (1) per axis; cross = 1.
        assert_relative_eq!(cov.get(0, 0), 2.0, max_relative = 1e-12);
        assert_relative_eq!(cov.get(0, 1), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn importance_weights_hand_cases() {
        // Φ constant → uniform weights.
        let flat = crate::bayes::PosteriorSpec::new(
            Arc::new(FnForwardModel::new(1, 1, |_t: &[f64]| vec![1.0])),
            vec![0.0],
            SymMat::identity(1),
            PriorSpec::standard_gaussian(1),
        )
        .unwrap();
        let samples = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let ws = importance_weights(&flat, samples).unwrap();
        for &w in ws.weights() {
            assert_relative_eq!(w, 0.25, max_relative = 1e-12);
        }

        // Φ = 0 and Φ = ln 3 → weights (0.75, 0.25).
        // G(θ) = sqrt(ln 3)·θ, u = 0, Σ = I: Φ(0) = 0, Φ(1) = ln 3.
        let l3 = 3.0f64.ln().sqrt();
        let m = crate::bayes::PosteriorSpec::new(
            Arc::new(FnForwardModel::new(1, 1, move |t: &[f64]| vec![l3 * t[0]])),
            vec![0.0],
            SymMat::identity(1),
            PriorSpec::standard_gaussian(1),
        )
        .unwrap();
        let ws = importance_weights(&m, vec![vec![0.0], vec![1.0]]).unwrap();
        assert_relative_eq!(ws.weights()[0], 0.75, max_relative = 1e-10);
        assert_relative_eq!(ws.weights()[1], 0.25, max_relative = 1e-10);
        assert_relative_eq!(ws.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn importance_weights_survive_huge_potentials() {
        // Potentials in the hundreds underflow exp() but the log-sum-exp
        // normalization must still produce finite weights.
        let m = crate::bayes::PosteriorSpec::new(
            Arc::new(FnForwardModel::new(1, 1, |t: &[f64]| vec![30.0 * t[0]])),
            vec![0.0],
            SymMat::scaled_identity(1, 1e-2),
            PriorSpec::standard_gaussian(1),
        )
        .unwrap();
        let samples = vec![vec![3.0], vec![3.1], vec![3.2]];
        let ws = importance_weights(&m, samples).unwrap();
        assert!(ws.weights().iter().all(|w| w.is_finite()));
        assert_relative_eq!(ws.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(ws.weights()[0] > ws.weights()[1]);
    }

    #[test]
    fn e_step_hand_case_and_invariance() {
        // Components N(0,1) and N(m,1) with equal weights at θ=0: the density
        // ratio is exp(m²/2); choosing m = sqrt(2 ln 3) gives ρ = (0.75, 0.25).
        let m = (2.0 * 3.0f64.ln()).sqrt();
        let mix = GaussianMixture::new(vec![
            component(0.5, vec![0.0], vec![vec![1.0]]),
            component(0.5, vec![m], vec![vec![1.0]]),
        ])
        .unwrap();
        let rho = e_step(&mix, &[vec![0.0]]).unwrap();
        assert_relative_eq!(rho.row(0)[0], 0.75, max_relative = 1e-10);
        assert_relative_eq!(rho.row(0)[1], 0.25, max_relative = 1e-10);

        // K=1 → all responsibilities 1.
        let single = GaussianMixture::new(vec![component(1.0, vec![0.0], vec![vec![1.0]])]).unwrap();
        let rho = e_step(&single, &[vec![0.3], vec![-2.0]]).unwrap();
        assert_relative_eq!(rho.row(0)[0], 1.0);
        assert_relative_eq!(rho.row(1)[0], 1.0);

        // Rows sum to one on random inputs.
        let mut r = rng(0);
        let mix = GaussianMixture::new(vec![
            component(0.2, vec![0.0, 0.0], vec![vec![1.0, 0.2], vec![0.2, 2.0]]),
            component(0.8, vec![1.0, -1.0], vec![vec![0.5, 0.0], vec![0.0, 0.5]]),
        ])
        .unwrap();
        let samples: Vec<Vec<f64>> = (0..100)
            .map(|_| vec![f64::standard_normal(&mut r), f64::standard_normal(&mut r)])
            .collect();
        let rho = e_step(&mix, &samples).unwrap();
        for i in 0..samples.len() {
            let s: f64 = rho.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(rho.row(i).iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn m_step_hand_case() {
        let data =
            WeightedSampleSet::uniform(vec![vec![0.0], vec![2.0]]).unwrap();
        let rho = Responsibilities {
            m: 2,
            k: 1,
            data: vec![1.0, 1.0],
        };
        let mix = m_step(&data, &rho, 1e-12, None).unwrap();
        assert_relative_eq!(mix.components()[0].mean()[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(mix.components()[0].cov().get(0, 0), 1.0, max_relative = 1e-10);
        assert_relative_eq!(mix.components()[0].weight(), 1.0);
    }

    #[test]
    fn m_step_single_sample_gets_floor() {
        let data = WeightedSampleSet::uniform(vec![vec![3.0], vec![3.0]]).unwrap();
        let rho = Responsibilities {
            m: 2,
            k: 1,
            data: vec![1.0, 1.0],
        };
        let floor = 1e-6;
        let mix = m_step(&data, &rho, floor, None).unwrap();
        assert_relative_eq!(mix.components()[0].cov().get(0, 0), floor, max_relative = 1e-9);
    }

    #[test]
    fn m_step_concentrated_responsibility() {
        let data = WeightedSampleSet::uniform(vec![vec![0.0], vec![5.0]]).unwrap();
        // All responsibility on component 0: component 1 is empty and gets
        // reseeded; the first weight stays dominant.
        let rho = Responsibilities {
            m: 2,
            k: 2,
            data: vec![1.0, 0.0, 1.0, 0.0],
        };
        let mix = m_step(&data, &rho, 1e-9, None).unwrap();
        assert!(mix.components()[0].weight() > 0.6);
        let total: f64 = mix.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn em_recovers_two_component_mixture() {
        // Samples from 0.5·N((1,1), I) + 0.5·N((-1,-1), I) with uniform
        // weights; EM with K=2 should recover means and weights.
        let mut r = rng(1);
        let n = 20_000;
        let samples: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let sign = if f64::unit_uniform(&mut r) < 0.5 { 1.0 } else { -1.0 };
                vec![
                    sign + f64::standard_normal(&mut r),
                    sign + f64::standard_normal(&mut r),
                ]
            })
            .collect();
        let data = WeightedSampleSet::uniform(samples).unwrap();
        let config = EmConfig::new(2).with_seed(9);
        let (mix, report) = em_fit_weighted(&data, &config).unwrap();
        assert!(report.converged, "EM should converge: {:?}", report.warnings);

        // Monotone log-likelihood up to the floor slack.
        for w in report.log_likelihood_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "log-likelihood decreased: {w:?}");
        }

        // Best permutation match.
        let means: Vec<&[f64]> = mix.components().iter().map(|c| c.mean()).collect();
        let (a, b) = if means[0][0] > 0.0 { (0, 1) } else { (1, 0) };
        for d in 0..2 {
            assert!((means[a][d] - 1.0).abs() < 0.05, "mean {:?}", means[a]);
            assert!((means[b][d] + 1.0).abs() < 0.05, "mean {:?}", means[b]);
        }
        for c in mix.components() {
            assert!((c.weight() - 0.5).abs() < 0.05);
        }
    }

    #[test]
    fn em_fit_recovers_conjugate_posterior_mean() {
        // Identity forward map: G(θ) = θ, u, noise σ²·I, standard Gaussian
        // prior. With Φ = ‖θ − u‖²/σ², the posterior is Gaussian with mean
        // (2/σ²)/(2/σ² + 1) · u.
        let sigma2 = 0.04;
        let u = vec![0.3, -0.2];
        let model = crate::bayes::PosteriorSpec::new(
            Arc::new(FnForwardModel::new(2, 2, |t: &[f64]| t.to_vec())),
            u.clone(),
            SymMat::scaled_identity(2, sigma2),
            PriorSpec::standard_gaussian(2),
        )
        .unwrap();
        let mut config = EmConfig::new(1).with_seed(3);
        config.max_iter = 200;
        let (mix, _report) = em_fit(&model, 20_000, &config).unwrap();
        let shrink = (2.0 / sigma2) / (2.0 / sigma2 + 1.0);
        let mean = mix.analytic_mean();
        for d in 0..2 {
            assert!(
                (mean[d] - shrink * u[d]).abs() < 0.05,
                "axis {d}: {} vs {}",
                mean[d],
                shrink * u[d]
            );
        }
    }

    #[test]
    fn ess_bounds() {
        let data = WeightedSampleSet::new(
            vec![vec![0.0], vec![1.0]],
            vec![0.5, 0.5],
        )
        .unwrap();
        assert_relative_eq!(data.ess(), 2.0);
        let skew = WeightedSampleSet::new(vec![vec![0.0], vec![1.0]], vec![1.0, 0.0]).unwrap();
        assert_relative_eq!(skew.ess(), 1.0);
        assert!(skew.ess() <= skew.len() as f64);
    }

    #[test]
    fn degenerate_log_weights_error() {
        let r = WeightedSampleSet::from_log_weights(
            vec![vec![0.0], vec![1.0]],
            &[f64::NEG_INFINITY, f64::NEG_INFINITY],
        );
        assert!(matches!(r, Err(Error::DegenerateWeights(_))));
    }

    #[test]
    fn log_sum_exp_basics() {
        assert_eq!(log_sum_exp::<f64>(&[]), f64::NEG_INFINITY);
        assert_relative_eq!(
            log_sum_exp(&[0.0f64, 0.0]),
            2.0f64.ln(),
            max_relative = 1e-12
        );
        // Scaling invariance of responsibilities: shifting all logs by a
        // constant shifts the LSE by the same constant.
        let logs = [-700.0f64, -701.0, -702.0];
        let shifted: Vec<f64> = logs.iter().map(|l| l + 650.0).collect();
        assert_relative_eq!(
            log_sum_exp(&logs) + 650.0,
            log_sum_exp(&shifted),
            max_relative = 1e-12
        );
    }
}
