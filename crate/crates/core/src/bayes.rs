//! The Bayesian inverse problem: priors, the data-misfit potential, the
//! unnormalized posterior density, and the point process intensity built
//! from it.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, SymMat};
use crate::point_process::AxisBox;
use crate::scalar::{count_as, real, Scalar};

/// A forward map G: ℝ^d → ℝ^m. Implementations must be reentrant: they are
/// evaluated concurrently, one call per sample.
pub trait ForwardModel<T: Scalar>: Send + Sync {
    fn param_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn apply(&self, theta: &[T]) -> Result<Vec<T>>;

    /// Jacobian rows ∂G_i/∂θ_j (m rows of length d), when available.
    fn jacobian(&self, _theta: &[T]) -> Option<Vec<Vec<T>>> {
        None
    }
}

/// Closure-backed forward model, mostly for tests and simple targets.
pub struct FnForwardModel<T, F> {
    param_dim: usize,
    obs_dim: usize,
    f: F,
    _marker: std::marker::PhantomData<fn() -> T>,
}

impl<T, F> FnForwardModel<T, F>
where
    T: Scalar,
    F: Fn(&[T]) -> Vec<T> + Send + Sync,
{
    pub fn new(param_dim: usize, obs_dim: usize, f: F) -> Self {
        FnForwardModel {
            param_dim,
            obs_dim,
            f,
            _marker: std::marker::PhantomData,
        }
    }
}

impl<T, F> ForwardModel<T> for FnForwardModel<T, F>
where
    T: Scalar,
    F: Fn(&[T]) -> Vec<T> + Send + Sync,
{
    fn param_dim(&self) -> usize {
        self.param_dim
    }

    fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    fn apply(&self, theta: &[T]) -> Result<Vec<T>> {
        Ok((self.f)(theta))
    }
}

/// Gaussian prior with dense SPD covariance.
#[derive(Clone, Debug)]
pub struct GaussianPrior<T> {
    mean: Vec<T>,
    cov: SymMat<T>,
    chol: Cholesky<T>,
    log_norm: T,
}

/// Prior distribution: Gaussian or uniform on an axis box.
#[derive(Clone, Debug)]
pub enum PriorSpec<T> {
    Gaussian(GaussianPrior<T>),
    UniformBox(AxisBox<T>),
}

impl<T: Scalar> PriorSpec<T> {
    pub fn gaussian(mean: Vec<T>, cov: SymMat<T>) -> Result<Self> {
        if mean.len() != cov.n() {
            return Err(Error::invalid("prior mean and covariance dimensions differ"));
        }
        let chol = cov.cholesky()?;
        let d = count_as::<T>(mean.len());
        let log_2pi = real::<T>((2.0 * std::f64::consts::PI).ln());
        let half = real::<T>(0.5);
        let log_norm = -half * (d * log_2pi + chol.log_det());
        Ok(PriorSpec::Gaussian(GaussianPrior {
            mean,
            cov,
            chol,
            log_norm,
        }))
    }

    pub fn standard_gaussian(dim: usize) -> Self {
        Self::gaussian(vec![T::zero(); dim], SymMat::identity(dim))
            .expect("identity covariance is SPD")
    }

    /// Independent zero-mean Gaussian coordinates with the given variances.
    pub fn diagonal_gaussian(variances: &[T]) -> Result<Self> {
        Self::gaussian(
            vec![T::zero(); variances.len()],
            SymMat::from_diagonal(variances),
        )
    }

    pub fn uniform_box(region: AxisBox<T>) -> Self {
        PriorSpec::UniformBox(region)
    }

    pub fn dim(&self) -> usize {
        match self {
            PriorSpec::Gaussian(g) => g.mean.len(),
            PriorSpec::UniformBox(b) => b.dim(),
        }
    }

    /// log π_pr(θ); −∞ outside a uniform prior's box.
    pub fn log_density(&self, theta: &[T]) -> T {
        match self {
            PriorSpec::Gaussian(g) => {
                let centered: Vec<T> =
                    theta.iter().zip(&g.mean).map(|(t, m)| *t - *m).collect();
                let half = real::<T>(0.5);
                g.log_norm - half * g.chol.inv_quad_form(&centered)
            }
            PriorSpec::UniformBox(b) => {
                if b.contains(theta) {
                    -b.volume().ln()
                } else {
                    T::neg_infinity()
                }
            }
        }
    }

    pub fn density(&self, theta: &[T]) -> T {
        self.log_density(theta).exp()
    }

    /// `n` i.i.d. prior draws.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<T>> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        match self {
            PriorSpec::Gaussian(g) => {
                let z: Vec<T> = (0..g.mean.len())
                    .map(|_| T::standard_normal(rng))
                    .collect();
                let mut x = g.chol.lower_mul(&z);
                for (xi, m) in x.iter_mut().zip(&g.mean) {
                    *xi += *m;
                }
                x
            }
            PriorSpec::UniformBox(b) => b.sample_uniform(rng),
        }
    }

    /// The Gaussian covariance, if this is a Gaussian prior.
    pub fn gaussian_cov(&self) -> Option<&SymMat<T>> {
        match self {
            PriorSpec::Gaussian(g) => Some(&g.cov),
            PriorSpec::UniformBox(_) => None,
        }
    }
}

/// The Bayesian model: forward map, observation, noise covariance, prior.
#[derive(Clone)]
pub struct PosteriorSpec<T> {
    forward: Arc<dyn ForwardModel<T>>,
    observation: Vec<T>,
    noise_chol: Cholesky<T>,
    prior: PriorSpec<T>,
}

impl<T: Scalar> PosteriorSpec<T> {
    pub fn new(
        forward: Arc<dyn ForwardModel<T>>,
        observation: Vec<T>,
        noise_cov: SymMat<T>,
        prior: PriorSpec<T>,
    ) -> Result<Self> {
        if observation.len() != forward.obs_dim() {
            return Err(Error::invalid(format!(
                "observation has length {}, forward map produces {}",
                observation.len(),
                forward.obs_dim()
            )));
        }
        if noise_cov.n() != observation.len() {
            return Err(Error::invalid(
                "noise covariance dimension differs from observation length",
            ));
        }
        if prior.dim() != forward.param_dim() {
            return Err(Error::invalid(
                "prior dimension differs from forward map parameter dimension",
            ));
        }
        let noise_chol = noise_cov.cholesky()?;
        Ok(PosteriorSpec {
            forward,
            observation,
            noise_chol,
            prior,
        })
    }

    pub fn param_dim(&self) -> usize {
        self.forward.param_dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.observation.len()
    }

    pub fn observation(&self) -> &[T] {
        &self.observation
    }

    pub fn prior(&self) -> &PriorSpec<T> {
        &self.prior
    }

    pub fn forward(&self) -> &Arc<dyn ForwardModel<T>> {
        &self.forward
    }

    /// Data-misfit potential Φ(θ) = (G(θ) − u)ᵀ Σ⁻¹ (G(θ) − u), evaluated
    /// through the Cholesky factor of Σ.
    pub fn potential(&self, theta: &[T]) -> Result<T> {
        let g = self.forward.apply(theta)?;
        if g.len() != self.observation.len() {
            return Err(Error::Forward(format!(
                "forward map returned {} values, expected {}",
                g.len(),
                self.observation.len()
            )));
        }
        let residual: Vec<T> = g
            .iter()
            .zip(&self.observation)
            .map(|(gi, ui)| *gi - *ui)
            .collect();
        Ok(self.noise_chol.inv_quad_form(&residual))
    }

    /// Analytic gradient ∇Φ = 2 Jᵀ Σ⁻¹ (G(θ) − u). Requires the forward
    /// model to provide a Jacobian.
    pub fn potential_gradient(&self, theta: &[T]) -> Result<Vec<T>> {
        let jac = self
            .forward
            .jacobian(theta)
            .ok_or_else(|| Error::invalid("forward model has no Jacobian"))?;
        let g = self.forward.apply(theta)?;
        let residual: Vec<T> = g
            .iter()
            .zip(&self.observation)
            .map(|(gi, ui)| *gi - *ui)
            .collect();
        let w = self.noise_chol.solve(&residual);
        let d = self.param_dim();
        let two = real::<T>(2.0);
        let mut grad = vec![T::zero(); d];
        for (row, wi) in jac.iter().zip(&w) {
            for (gj, jij) in grad.iter_mut().zip(row) {
                *gj += two * *jij * *wi;
            }
        }
        Ok(grad)
    }

    /// log(exp(−Φ)·π_pr) = −Φ(θ) + log π_pr(θ); −∞ outside the prior's
    /// support, in which case the forward map is not evaluated.
    pub fn log_unnormalized_posterior(&self, theta: &[T]) -> Result<T> {
        let lp = self.prior.log_density(theta);
        if lp == T::neg_infinity() {
            return Ok(T::neg_infinity());
        }
        Ok(lp - self.potential(theta)?)
    }

    /// exp(−Φ(θ)) · π_pr(θ), without the 1/Z factor.
    pub fn unnormalized_posterior_density(&self, theta: &[T]) -> Result<T> {
        Ok(self.log_unnormalized_posterior(theta)?.exp())
    }

    /// Monte Carlo estimate of Z = E_prior[exp(−Φ)] with its standard error.
    pub fn estimate_normalizer<R: Rng + ?Sized>(
        &self,
        n_samples: usize,
        rng: &mut R,
    ) -> Result<NormalizerEstimate<T>> {
        if n_samples < 100 {
            return Err(Error::invalid(
                "normalizer estimate needs at least 100 samples",
            ));
        }
        let mut sum = T::zero();
        let mut sum_sq = T::zero();
        let mut positive = 0usize;
        for _ in 0..n_samples {
            let theta = self.prior.sample_one(rng);
            let w = (-self.potential(&theta)?).exp();
            if w > T::zero() {
                positive += 1;
            }
            sum += w;
            sum_sq += w * w;
        }
        if positive == 0 {
            return Err(Error::DegenerateWeights(
                "all normalizer weights are zero; observation incompatible with every sample"
                    .into(),
            ));
        }
        let n = count_as::<T>(n_samples);
        let value = sum / n;
        let var = (sum_sq / n - value * value).max(T::zero());
        let std_error = (var / n).sqrt();
        Ok(NormalizerEstimate {
            value,
            std_error,
            n_samples,
        })
    }
}

/// Monte Carlo normalizer estimate.
#[derive(Clone, Copy, Debug)]
pub struct NormalizerEstimate<T> {
    pub value: T,
    pub std_error: T,
    pub n_samples: usize,
}

/// The PPP intensity λ(θ) = γ · exp(−Φ(θ)) · π_pr(θ).
///
/// The normalizer Z is deliberately omitted: thinning only uses ratios
/// λ/λ_max where it cancels, so the realized expected count is γ·Z. Use
/// [`PosteriorSpec::estimate_normalizer`] to rescale γ toward a target count.
pub struct IntensitySpec<T> {
    model: Arc<PosteriorSpec<T>>,
    gamma: T,
}

impl<T: Scalar> IntensitySpec<T> {
    pub fn new(model: Arc<PosteriorSpec<T>>, gamma: T) -> Result<Self> {
        if !(gamma.is_finite() && gamma > T::zero()) {
            return Err(Error::invalid(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        Ok(IntensitySpec { model, gamma })
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn model(&self) -> &PosteriorSpec<T> {
        &self.model
    }

    pub fn unnormalized_intensity(&self, theta: &[T]) -> Result<T> {
        Ok(self.gamma * self.model.unnormalized_posterior_density(theta)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::point_process::AxisBox;
    use crate::rng::{substream, tags};
    use approx::assert_relative_eq;

    fn rng(ix: u64) -> crate::rng::StreamRng {
        substream(5150, tags::USER, ix)
    }

    /// G(θ) = θ (identity), observation u, noise as given.
    fn identity_model(
        dim: usize,
        observation: Vec<f64>,
        noise: SymMat<f64>,
        prior: PriorSpec<f64>,
    ) -> PosteriorSpec<f64> {
        let fwd = Arc::new(FnForwardModel::new(dim, dim, |t: &[f64]| t.to_vec()));
        PosteriorSpec::new(fwd, observation, noise, prior).unwrap()
    }

    #[test]
    fn potential_zero_residual() {
        let m = identity_model(
            2,
            vec![0.3, -0.1],
            SymMat::identity(2),
            PriorSpec::standard_gaussian(2),
        );
        assert_relative_eq!(m.potential(&[0.3, -0.1]).unwrap(), 0.0);
    }

    #[test]
    fn potential_hand_values() {
        // Σ = 0.01·I₂, residual (0.1, 0) → 0.1²/0.01 = 1.
        let m = identity_model(
            2,
            vec![0.0, 0.0],
            SymMat::scaled_identity(2, 0.01),
            PriorSpec::standard_gaussian(2),
        );
        assert_relative_eq!(m.potential(&[0.1, 0.0]).unwrap(), 1.0, max_relative = 1e-12);

        // Σ = I, residual (1, 1) → 2.
        let m = identity_model(
            2,
            vec![0.0, 0.0],
            SymMat::identity(2),
            PriorSpec::standard_gaussian(2),
        );
        assert_relative_eq!(m.potential(&[1.0, 1.0]).unwrap(), 2.0, max_relative = 1e-12);
    }

    #[test]
    fn potential_nonnegative_with_correlated_noise() {
        let noise = SymMat::from_rows(&[vec![2.0, 0.6], vec![0.6, 1.0]]).unwrap();
        let m = identity_model(2, vec![0.5, -0.5], noise, PriorSpec::standard_gaussian(2));
        let mut r = rng(0);
        for _ in 0..200 {
            let theta = [f64::standard_normal(&mut r), f64::standard_normal(&mut r)];
            assert!(m.potential(&theta).unwrap() >= 0.0);
        }
    }

    #[test]
    fn rejects_singular_noise() {
        let noise = SymMat::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let fwd = Arc::new(FnForwardModel::new(2, 2, |t: &[f64]| t.to_vec()));
        let r = PosteriorSpec::new(fwd, vec![0.0, 0.0], noise, PriorSpec::standard_gaussian(2));
        assert!(matches!(r, Err(Error::SpdViolation(_))));
    }

    #[test]
    fn gaussian_prior_log_density_closed_form() {
        let prior = PriorSpec::<f64>::standard_gaussian(1);
        let expected = -0.5 * (2.0 * std::f64::consts::PI).ln();
        assert_relative_eq!(prior.log_density(&[0.0]), expected, max_relative = 1e-12);
        assert_relative_eq!(
            prior.log_density(&[1.5]),
            expected - 0.5 * 1.5 * 1.5,
            max_relative = 1e-12
        );
    }

    #[test]
    fn uniform_prior_log_density() {
        let prior =
            PriorSpec::uniform_box(AxisBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap());
        assert_relative_eq!(prior.log_density(&[0.0, 0.0]), (0.25f64).ln());
        assert_eq!(prior.log_density(&[2.0, 0.0]), f64::NEG_INFINITY);
    }

    #[test]
    fn prior_sampling_moments() {
        let mut r = rng(1);
        let prior = PriorSpec::<f64>::standard_gaussian(2);
        let n = 100_000;
        let samples = prior.sample(n, &mut r);
        assert!(prior.sample(0, &mut r).is_empty());
        for axis in 0..2 {
            let mean: f64 = samples.iter().map(|s| s[axis]).sum::<f64>() / n as f64;
            assert!(mean.abs() < 3.0 / (n as f64).sqrt());
        }

        let uni = PriorSpec::uniform_box(AxisBox::new(vec![-1.0], vec![1.0]).unwrap());
        let samples = uni.sample(n, &mut r);
        let mean: f64 = samples.iter().map(|s| s[0]).sum::<f64>() / n as f64;
        let var: f64 = samples.iter().map(|s| (s[0] - mean).powi(2)).sum::<f64>() / n as f64;
        // Var of the variance estimate for U(-1,1): (μ₄ − σ⁴)/n with μ₄ = 1/5.
        let se = ((1.0 / 5.0 - 1.0 / 9.0) / n as f64).sqrt();
        assert!((var - 1.0 / 3.0).abs() < 3.0 * se);
    }

    #[test]
    fn correlated_gaussian_prior_sampling() {
        let cov = SymMat::from_rows(&[vec![2.0, 0.8], vec![0.8, 1.0]]).unwrap();
        let prior = PriorSpec::gaussian(vec![1.0, -1.0], cov).unwrap();
        let mut r = rng(2);
        let n = 100_000;
        let samples = prior.sample(n, &mut r);
        let mean0 = samples.iter().map(|s| s[0]).sum::<f64>() / n as f64;
        let mean1 = samples.iter().map(|s| s[1]).sum::<f64>() / n as f64;
        assert!((mean0 - 1.0).abs() < 3.0 * (2.0f64 / n as f64).sqrt());
        assert!((mean1 + 1.0).abs() < 3.0 * (1.0f64 / n as f64).sqrt());
        let cov01 = samples
            .iter()
            .map(|s| (s[0] - mean0) * (s[1] - mean1))
            .sum::<f64>()
            / n as f64;
        assert!((cov01 - 0.8).abs() < 0.02);
    }

    #[test]
    fn unnormalized_density_values() {
        // Φ = 0 at the observation; standard Gaussian prior in 1-D at 0
        // gives 1/sqrt(2π).
        let m = identity_model(
            1,
            vec![0.0],
            SymMat::identity(1),
            PriorSpec::standard_gaussian(1),
        );
        assert_relative_eq!(
            m.unnormalized_posterior_density(&[0.0]).unwrap(),
            1.0 / (2.0 * std::f64::consts::PI).sqrt(),
            max_relative = 1e-12
        );

        let boxed = identity_model(
            1,
            vec![0.0],
            SymMat::identity(1),
            PriorSpec::uniform_box(AxisBox::new(vec![-1.0], vec![1.0]).unwrap()),
        );
        assert_eq!(boxed.unnormalized_posterior_density(&[2.0]).unwrap(), 0.0);
        assert!(boxed.unnormalized_posterior_density(&[0.5]).unwrap() > 0.0);
    }

    #[test]
    fn intensity_scales_with_gamma() {
        let m = Arc::new(identity_model(
            1,
            vec![0.2],
            SymMat::identity(1),
            PriorSpec::standard_gaussian(1),
        ));
        let i1 = IntensitySpec::new(m.clone(), 1.0).unwrap();
        let i2 = IntensitySpec::new(m.clone(), 2.0).unwrap();
        let theta = [0.7];
        assert_relative_eq!(
            i1.unnormalized_intensity(&theta).unwrap(),
            m.unnormalized_posterior_density(&theta).unwrap()
        );
        assert_relative_eq!(
            i2.unnormalized_intensity(&theta).unwrap(),
            2.0 * i1.unnormalized_intensity(&theta).unwrap()
        );
        assert!(IntensitySpec::new(m, 0.0).is_err());
    }

    #[test]
    fn normalizer_estimate_constant_and_gaussian() {
        // Φ ≡ 0 → Z = 1 exactly.
        let flat = PosteriorSpec::new(
            Arc::new(FnForwardModel::new(1, 1, |_t: &[f64]| vec![0.0])),
            vec![0.0],
            SymMat::identity(1),
            PriorSpec::standard_gaussian(1),
        )
        .unwrap();
        let mut r = rng(3);
        let est = flat.estimate_normalizer(500, &mut r).unwrap();
        assert_relative_eq!(est.value, 1.0);
        assert_eq!(est.std_error, 0.0);

        // Φ(θ) = θ²/2 with standard Gaussian prior → Z = 1/√2.
        // With Φ = residual²/σ² and residual = θ, σ² = 2 gives Φ = θ²/2.
        let half_quad = PosteriorSpec::new(
            Arc::new(FnForwardModel::new(1, 1, |t: &[f64]| vec![t[0]])),
            vec![0.0],
            SymMat::scaled_identity(1, 2.0),
            PriorSpec::standard_gaussian(1),
        )
        .unwrap();
        let est = half_quad.estimate_normalizer(200_000, &mut r).unwrap();
        let target = 1.0 / 2.0f64.sqrt();
        assert!(
            (est.value - target).abs() < 3.0 * est.std_error,
            "estimate {} ± {} vs {target}",
            est.value,
            est.std_error
        );

        // Standard error shrinks like 1/√n.
        let small = half_quad.estimate_normalizer(1_000, &mut r).unwrap();
        let large = half_quad.estimate_normalizer(100_000, &mut r).unwrap();
        let ratio = small.std_error / large.std_error;
        assert!((5.0..20.0).contains(&ratio), "ratio {ratio}");

        assert!(half_quad.estimate_normalizer(50, &mut r).is_err());
    }

    #[test]
    fn normalizer_degenerate_when_support_misses() {
        // exp(-Φ) underflows to zero everywhere on the prior box.
        let m = identity_model(
            1,
            vec![1e6],
            SymMat::scaled_identity(1, 1e-6),
            PriorSpec::uniform_box(AxisBox::new(vec![-1.0], vec![1.0]).unwrap()),
        );
        let mut r = rng(4);
        assert!(matches!(
            m.estimate_normalizer(100, &mut r),
            Err(Error::DegenerateWeights(_))
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        struct Quad;
        impl ForwardModel<f64> for Quad {
            fn param_dim(&self) -> usize {
                2
            }
            fn obs_dim(&self) -> usize {
                2
            }
            fn apply(&self, t: &[f64]) -> Result<Vec<f64>> {
                Ok(vec![t[0] * t[0] + t[1], t[0] * t[1]])
            }
            fn jacobian(&self, t: &[f64]) -> Option<Vec<Vec<f64>>> {
                Some(vec![vec![2.0 * t[0], 1.0], vec![t[1], t[0]]])
            }
        }
        let m = PosteriorSpec::new(
            Arc::new(Quad),
            vec![0.4, -0.3],
            SymMat::scaled_identity(2, 0.5),
            PriorSpec::standard_gaussian(2),
        )
        .unwrap();
        let mut r = rng(5);
        let h = 1e-6;
        for _ in 0..20 {
            let theta = [f64::standard_normal(&mut r), f64::standard_normal(&mut r)];
            let grad = m.potential_gradient(&theta).unwrap();
            for j in 0..2 {
                let mut tp = theta;
                let mut tm = theta;
                tp[j] += h;
                tm[j] -= h;
                let fd = (m.potential(&tp).unwrap() - m.potential(&tm).unwrap()) / (2.0 * h);
                let denom = grad[j].abs().max(1.0);
                assert!(
                    ((grad[j] - fd) / denom).abs() < 1e-5,
                    "coord {j}: analytic {} vs fd {fd}",
                    grad[j]
                );
            }
        }
    }
}
