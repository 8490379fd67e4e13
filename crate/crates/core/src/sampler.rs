//! Decomposition sampling: each mixture component is the intensity of an
//! independent PPP; per-component realizations are superposed into a
//! posterior point pattern with component labels.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{sample_moments, SymMat};
use crate::mixture::{GaussianComponent, GaussianMixture};
use crate::point_process::{
    sample_poisson_count, sample_ppp_thinning, superpose, AxisBox, BoundedIntensity, PointPattern,
};
use crate::rng::{substream, tags};
use crate::scalar::{real, Scalar};

/// A point pattern with one component label per point.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPattern<T> {
    pattern: PointPattern<T>,
    labels: Vec<usize>,
    num_components: usize,
}

impl<T: Scalar> LabeledPattern<T> {
    pub fn new(
        pattern: PointPattern<T>,
        labels: Vec<usize>,
        num_components: usize,
    ) -> Result<Self> {
        if labels.len() != pattern.len() {
            return Err(Error::invalid("one label per point required"));
        }
        if labels.iter().any(|&l| l >= num_components) {
            return Err(Error::invalid(format!(
                "labels must lie in [0, {num_components})"
            )));
        }
        Ok(LabeledPattern {
            pattern,
            labels,
            num_components,
        })
    }

    pub fn pattern(&self) -> &PointPattern<T> {
        &self.pattern
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_components(&self) -> usize {
        self.num_components
    }

    pub fn len(&self) -> usize {
        self.pattern.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pattern.is_empty()
    }
}

/// Per-component sampling mechanism.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMethod {
    /// Exact Gaussian draws through the Cholesky factor.
    Direct,
    /// Thinning of a homogeneous candidate process on a ±box_sigma·σ box;
    /// exercises the rejection pipeline end to end.
    Thinning,
}

impl SampleMethod {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(SampleMethod::Direct),
            "thinning" => Ok(SampleMethod::Thinning),
            other => Err(Error::invalid(format!(
                "unknown sampling method `{other}` (expected direct|thinning)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SampleMethod::Direct => "direct",
            SampleMethod::Thinning => "thinning",
        }
    }
}

/// Configuration of the posterior PPP sampler.
#[derive(Clone, Copy, Debug)]
pub struct SamplerConfig<T> {
    pub gamma: T,
    pub method: SampleMethod,
    /// Thinning box half-width in per-axis standard deviations.
    pub box_sigma: T,
    pub seed: u64,
}

impl<T: Scalar> SamplerConfig<T> {
    pub fn new(gamma: T) -> Result<Self> {
        let config = SamplerConfig {
            gamma,
            method: SampleMethod::Direct,
            box_sigma: real(6.0),
            seed: 0,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_method(mut self, method: SampleMethod) -> Self {
        self.method = method;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > T::zero()) {
            return Err(Error::invalid(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if self.box_sigma < real(4.0) {
            return Err(Error::invalid(
                "box_sigma below 4 truncates more than 1e-4 of per-axis mass",
            ));
        }
        Ok(())
    }
}

/// Independent per-component Poisson counts κ_k ~ Poisson(γ·w_k).
///
/// γ_k = γ·w_k is the unique split for which the superposed intensity equals
/// γ times the mixture density.
pub fn component_counts<T: Scalar, R: Rng + ?Sized>(
    mixture: &GaussianMixture<T>,
    gamma: T,
    rng: &mut R,
) -> Result<Vec<u64>> {
    if !(gamma.is_finite() && gamma > T::zero()) {
        return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
    }
    mixture
        .components()
        .iter()
        .map(|c| sample_poisson_count(gamma * c.weight(), rng))
        .collect()
}

/// `count` exact draws from N(ϑ, Ξ) via ϑ + L z.
pub fn sample_component_direct<T: Scalar, R: Rng + ?Sized>(
    component: &GaussianComponent<T>,
    count: u64,
    rng: &mut R,
) -> Result<PointPattern<T>> {
    let d = component.mean().len();
    let mut pattern = PointPattern::new(d)?;
    for _ in 0..count {
        let z: Vec<T> = (0..d).map(|_| T::standard_normal(rng)).collect();
        let mut x = component.chol().lower_mul(&z);
        for (xi, m) in x.iter_mut().zip(component.mean()) {
            *xi += *m;
        }
        pattern.push(&x)?;
    }
    Ok(pattern)
}

/// Draws one PPP realization with intensity `expected_count · φ_k` truncated
/// to the box ϑ ± box_sigma·√diag(Ξ), by thinning candidates bounded at the
/// mode value.
pub fn sample_component_thinning<T: Scalar, R: Rng + ?Sized>(
    component: &GaussianComponent<T>,
    expected_count: T,
    box_sigma: T,
    rng: &mut R,
) -> Result<PointPattern<T>> {
    if !(expected_count.is_finite() && expected_count > T::zero()) {
        return Err(Error::invalid(format!(
            "expected_count must be positive, got {expected_count}"
        )));
    }
    let intensity = component_intensity(component, expected_count, box_sigma)?;
    sample_ppp_thinning(&intensity, rng)
}

/// The truncated component intensity fed to the thinning sampler. The bound
/// is the mode value, computed by the same density evaluation that the
/// thinning step uses, so it is exact.
fn component_intensity<T: Scalar>(
    component: &GaussianComponent<T>,
    expected_count: T,
    box_sigma: T,
) -> Result<BoundedIntensity<T>> {
    let d = component.mean().len();
    let mut lower = Vec::with_capacity(d);
    let mut upper = Vec::with_capacity(d);
    for i in 0..d {
        let sd = component.cov().get(i, i).sqrt();
        lower.push(component.mean()[i] - box_sigma * sd);
        upper.push(component.mean()[i] + box_sigma * sd);
    }
    let region = AxisBox::new(lower, upper)?;
    let lambda_max = expected_count * component.density_at(component.mean());
    let eval_component = component.clone();
    BoundedIntensity::new_unchecked(
        move |theta: &[T]| expected_count * eval_component.density_at(theta),
        region,
        lambda_max,
    )
}

/// Samples the posterior PPP: per-component counts, per-component sampling by
/// the configured method, superposition with labels in component order.
///
/// Components are processed on independent seed substreams, so the result is
/// identical however the per-component work is scheduled.
pub fn sample_posterior_ppp<T: Scalar>(
    mixture: &GaussianMixture<T>,
    config: &SamplerConfig<T>,
) -> Result<LabeledPattern<T>> {
    config.validate()?;
    let mut count_rng = substream(config.seed, tags::COUNTS, 0);
    let counts = component_counts(mixture, config.gamma, &mut count_rng)?;

    let parts: Vec<PointPattern<T>> = mixture
        .components()
        .par_iter()
        .enumerate()
        .map(|(k, component)| {
            let mut rng = substream(config.seed, tags::COMPONENT, k as u64);
            match config.method {
                SampleMethod::Direct => sample_component_direct(component, counts[k], &mut rng),
                SampleMethod::Thinning => {
                    let expected = config.gamma * component.weight();
                    if expected > T::zero() {
                        sample_component_thinning(component, expected, config.box_sigma, &mut rng)
                    } else {
                        PointPattern::new(mixture.dim())
                    }
                }
            }
        })
        .collect::<Result<_>>()?;

    let labels: Vec<usize> = parts
        .iter()
        .enumerate()
        .flat_map(|(k, p)| std::iter::repeat(k).take(p.len()))
        .collect();
    let pattern = superpose(mixture.dim(), &parts)?;
    LabeledPattern::new(pattern, labels, mixture.num_components())
}

/// Moments of a labeled pattern (population covariance, divisor n).
#[derive(Clone, Debug)]
pub struct PatternMoments<T> {
    pub mean: Vec<T>,
    pub cov: SymMat<T>,
}

/// Summary statistics of a labeled pattern. `moments` is `None` exactly when
/// the pattern is empty; per-label counts are always present.
#[derive(Clone, Debug)]
pub struct PatternSummary<T> {
    pub total: usize,
    pub per_label: Vec<usize>,
    pub moments: Option<PatternMoments<T>>,
}

impl<T: Scalar> PatternSummary<T> {
    /// Moments, or an empty-pattern error.
    pub fn require_moments(&self) -> Result<&PatternMoments<T>> {
        self.moments
            .as_ref()
            .ok_or_else(|| Error::EmptyPattern("no moments for an empty pattern".into()))
    }
}

/// Per-label counts plus pooled mean and covariance.
pub fn pattern_statistics<T: Scalar>(labeled: &LabeledPattern<T>) -> PatternSummary<T> {
    let mut per_label = vec![0usize; labeled.num_components()];
    for &l in labeled.labels() {
        per_label[l] += 1;
    }
    let samples: Vec<Vec<T>> = labeled.pattern().iter().map(|p| p.to_vec()).collect();
    let moments = sample_moments(&samples).map(|(mean, cov)| PatternMoments { mean, cov });
    PatternSummary {
        total: labeled.len(),
        per_label,
        moments,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, tags};
    use approx::assert_relative_eq;

    fn rng(ix: u64) -> crate::rng::StreamRng {
        substream(31337, tags::USER, ix)
    }

    fn component(w: f64, mean: Vec<f64>, cov: Vec<Vec<f64>>) -> GaussianComponent<f64> {
        GaussianComponent::new(w, mean, SymMat::from_rows(&cov).unwrap()).unwrap()
    }

    fn standard_2d(w: f64, mean: (f64, f64)) -> GaussianComponent<f64> {
        component(
            w,
            vec![mean.0, mean.1],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        )
    }

    #[test]
    fn counts_are_poissonish() {
        let mix =
            GaussianMixture::new(vec![standard_2d(0.5, (0.0, 0.0)), standard_2d(0.5, (1.0, 1.0))])
                .unwrap();
        let mut r = rng(0);
        let n = 2000;
        let mut totals = Vec::with_capacity(n);
        let mut first = Vec::with_capacity(n);
        for _ in 0..n {
            let c = component_counts(&mix, 200.0, &mut r).unwrap();
            first.push(c[0]);
            totals.push(c[0] + c[1]);
        }
        // Each component mean ≈ 100, total ≈ 200, within 3σ of the mean of n
        // Poisson draws.
        let mean_first: f64 = first.iter().sum::<u64>() as f64 / n as f64;
        assert!((mean_first - 100.0).abs() < 3.0 * (100.0f64 / n as f64).sqrt());
        let mean_total: f64 = totals.iter().sum::<u64>() as f64 / n as f64;
        assert!((mean_total - 200.0).abs() < 3.0 * (200.0f64 / n as f64).sqrt());
    }

    #[test]
    fn direct_sampling_moments() {
        let c = standard_2d(1.0, (0.0, 0.0));
        let mut r = rng(1);
        let n = 100_000u64;
        let pat = sample_component_direct(&c, n, &mut r).unwrap();
        assert_eq!(pat.len(), n as usize);
        let samples: Vec<Vec<f64>> = pat.iter().map(|p| p.to_vec()).collect();
        let (mean, cov) = sample_moments(&samples).unwrap();
        let nf = n as f64;
        for d in 0..2 {
            assert!(mean[d].abs() < 3.0 / nf.sqrt());
            // SE of a variance estimate under normality is σ²·√(2/n).
            assert!((cov.get(d, d) - 1.0).abs() < 3.0 * (2.0 / nf).sqrt());
        }
        assert!(cov.get(0, 1).abs() < 3.0 / nf.sqrt());

        let empty = sample_component_direct(&c, 0, &mut r).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn non_spd_component_is_rejected_at_construction() {
        let r = GaussianComponent::new(
            1.0,
            vec![0.0, 0.0],
            SymMat::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap(),
        );
        assert!(matches!(r, Err(crate::Error::SpdViolation(_))));
    }

    #[test]
    fn thinning_component_count_and_moments() {
        // 1-D N(0,1), expected count 500, ±6σ box.
        let c = component(1.0, vec![0.0], vec![vec![1.0]]);
        let mut r = rng(2);
        let reps = 200;
        let mut counts = Vec::with_capacity(reps);
        let mut sum = 0.0;
        let mut total = 0usize;
        for _ in 0..reps {
            let pat = sample_component_thinning(&c, 500.0, 6.0, &mut r).unwrap();
            counts.push(pat.len());
            for p in pat.iter() {
                sum += p[0];
            }
            total += pat.len();
        }
        let mean_count: f64 = counts.iter().sum::<usize>() as f64 / reps as f64;
        // In-box mass at ±6σ is 1 - 2e-9, effectively 500.
        assert!(
            (mean_count - 500.0).abs() < 3.0 * (500.0f64 / reps as f64).sqrt(),
            "mean count {mean_count}"
        );
        let mean = sum / total as f64;
        assert!(mean.abs() < 3.0 / (total as f64).sqrt());
    }

    #[test]
    fn thinning_acceptance_rate() {
        // Candidates ~ Poisson(λmax · |box|); acceptance ratio integral/box
        // area = 1/(φ(0)·12) ≈ 0.209 for a 1-D standard normal on ±6σ.
        let c = component(1.0, vec![0.0], vec![vec![1.0]]);
        let mut r = rng(3);
        let mut retained = 0usize;
        let reps = 200;
        for _ in 0..reps {
            retained += sample_component_thinning(&c, 500.0, 6.0, &mut r).unwrap().len();
        }
        let phi0 = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let expected_candidates = 500.0 * phi0 * 12.0;
        let rate = retained as f64 / (reps as f64 * expected_candidates);
        assert!((rate - 0.209).abs() < 0.01, "acceptance rate {rate}");
    }

    #[test]
    fn posterior_ppp_single_component() {
        let mix = GaussianMixture::new(vec![standard_2d(1.0, (0.0, 0.0))]).unwrap();
        let config = SamplerConfig::new(100.0).unwrap().with_seed(5);
        let mut counts = Vec::new();
        let mut sum = [0.0f64; 2];
        let mut total = 0usize;
        for rep in 0..500 {
            let config = SamplerConfig { seed: rep, ..config };
            let lab = sample_posterior_ppp(&mix, &config).unwrap();
            counts.push(lab.len());
            for p in lab.pattern().iter() {
                sum[0] += p[0];
                sum[1] += p[1];
            }
            total += lab.len();
        }
        let mean_count = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
        assert!((mean_count - 100.0).abs() < 3.0 * (100.0f64 / counts.len() as f64).sqrt());
        for s in sum {
            assert!((s / total as f64).abs() < 3.0 / (total as f64).sqrt());
        }
    }

    #[test]
    fn labels_follow_weights() {
        let mix =
            GaussianMixture::new(vec![standard_2d(0.3, (0.0, 0.0)), standard_2d(0.7, (4.0, 4.0))])
                .unwrap();
        let config = SamplerConfig::new(10_000.0).unwrap().with_seed(11);
        let lab = sample_posterior_ppp(&mix, &config).unwrap();
        let summary = pattern_statistics(&lab);
        assert_eq!(summary.per_label.iter().sum::<usize>(), summary.total);
        let frac0 = summary.per_label[0] as f64 / summary.total as f64;
        let se = (0.3f64 * 0.7 / summary.total as f64).sqrt();
        assert!((frac0 - 0.3).abs() < 3.0 * se, "fraction {frac0}");
    }

    #[test]
    fn pooled_moments_match_mixture() {
        let mix =
            GaussianMixture::new(vec![standard_2d(0.5, (1.0, 1.0)), standard_2d(0.5, (-1.0, -1.0))])
                .unwrap();
        let config = SamplerConfig::new(10_000.0).unwrap().with_seed(13);
        let lab = sample_posterior_ppp(&mix, &config).unwrap();
        let summary = pattern_statistics(&lab);
        let moments = summary.require_moments().unwrap();
        let n = summary.total as f64;
        let expected_cov = mix.analytic_cov();
        let expected_mean = mix.analytic_mean();
        for d in 0..2 {
            let se = (expected_cov.get(d, d) / n).sqrt();
            assert!((moments.mean[d] - expected_mean[d]).abs() < 3.0 * se);
        }
        for i in 0..2 {
            for j in 0..=i {
                let cii = expected_cov.get(i, i);
                let cjj = expected_cov.get(j, j);
                let cij = expected_cov.get(i, j);
                let se = ((cii * cjj + cij * cij) / n).sqrt();
                assert!(
                    (moments.cov.get(i, j) - cij).abs() < 3.0 * se,
                    "cov[{i}][{j}] = {} vs {cij}",
                    moments.cov.get(i, j)
                );
            }
        }
    }

    #[test]
    fn direct_and_thinning_agree() {
        let mix =
            GaussianMixture::new(vec![standard_2d(0.5, (1.0, 1.0)), standard_2d(0.5, (-1.0, -1.0))])
                .unwrap();
        let gamma = 20_000.0;
        let direct = sample_posterior_ppp(
            &mix,
            &SamplerConfig::new(gamma).unwrap().with_seed(17),
        )
        .unwrap();
        let thinned = sample_posterior_ppp(
            &mix,
            &SamplerConfig::new(gamma)
                .unwrap()
                .with_method(SampleMethod::Thinning)
                .with_seed(19),
        )
        .unwrap();
        let md = pattern_statistics(&direct);
        let mt = pattern_statistics(&thinned);
        let (md, mt_m) = (md.require_moments().unwrap().clone(), mt.require_moments().unwrap().clone());
        let cov = mix.analytic_cov();
        for d in 0..2 {
            let se = (cov.get(d, d) * (1.0 / direct.len() as f64 + 1.0 / thinned.len() as f64))
                .sqrt();
            assert!(
                (md.mean[d] - mt_m.mean[d]).abs() < 3.0 * se,
                "axis {d}: {} vs {}",
                md.mean[d],
                mt_m.mean[d]
            );
        }
    }

    #[test]
    fn sampler_is_deterministic_and_parallel_invariant() {
        let mix =
            GaussianMixture::new(vec![standard_2d(0.4, (0.0, 0.0)), standard_2d(0.6, (2.0, 2.0))])
                .unwrap();
        let config = SamplerConfig::new(500.0).unwrap().with_seed(23);
        let a = sample_posterior_ppp(&mix, &config).unwrap();
        let b = sample_posterior_ppp(&mix, &config).unwrap();
        assert_eq!(a, b);

        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool.install(|| sample_posterior_ppp(&mix, &config).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn summary_of_single_point_and_empty() {
        let pat = PointPattern::from_points(2, vec![vec![3.0, -1.0]]).unwrap();
        let lab = LabeledPattern::new(pat, vec![0], 1).unwrap();
        let s = pattern_statistics(&lab);
        let m = s.require_moments().unwrap();
        assert_eq!(m.mean, vec![3.0, -1.0]);
        assert_relative_eq!(m.cov.get(0, 0), 0.0);
        assert_relative_eq!(m.cov.get(1, 1), 0.0);

        let empty =
            LabeledPattern::new(PointPattern::<f64>::new(2).unwrap(), vec![], 2).unwrap();
        let s = pattern_statistics(&empty);
        assert_eq!(s.per_label, vec![0, 0]);
        assert!(s.moments.is_none());
        assert!(s.require_moments().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SamplerConfig::new(0.0f64).is_err());
        let mut c = SamplerConfig::new(10.0f64).unwrap();
        c.box_sigma = 3.0;
        assert!(c.validate().is_err());
    }
}
