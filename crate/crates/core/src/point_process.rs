//! Poisson point process machinery: counts, homogeneous realizations,
//! thinning, superposition, mapping, and marking.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{count_as, real, widen, Scalar};
use crate::special::ln_gamma;

/// A finite multiset of points in ℝ^dim, stored flat in insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct PointPattern<T> {
    dim: usize,
    coords: Vec<T>,
}

impl<T: Scalar> PointPattern<T> {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("pattern dimension must be positive"));
        }
        Ok(PointPattern {
            dim,
            coords: Vec::new(),
        })
    }

    pub fn from_points<I, P>(dim: usize, points: I) -> Result<Self>
    where
        I: IntoIterator<Item = P>,
        P: AsRef<[T]>,
    {
        let mut pattern = Self::new(dim)?;
        for p in points {
            pattern.push(p.as_ref())?;
        }
        Ok(pattern)
    }

    pub fn push(&mut self, point: &[T]) -> Result<()> {
        if point.len() != self.dim {
            return Err(Error::invalid(format!(
                "point has length {}, pattern dimension is {}",
                point.len(),
                self.dim
            )));
        }
        self.coords.extend_from_slice(point);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of points.
    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[T] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[T]> + Clone {
        self.coords.chunks_exact(self.dim)
    }

    /// Number of points satisfying the predicate.
    pub fn count_in_region(&self, region: impl Fn(&[T]) -> bool) -> usize {
        self.iter().filter(|p| region(p)).count()
    }
}

/// A point pattern with one opaque mark per point.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkedPattern<T, M> {
    dim: usize,
    pairs: Vec<(Vec<T>, M)>,
}

impl<T: Scalar, M> MarkedPattern<T, M> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(Vec<T>, M)] {
        &self.pairs
    }

    pub fn marks(&self) -> impl Iterator<Item = &M> {
        self.pairs.iter().map(|(_, m)| m)
    }
}

/// Axis-aligned box with positive volume.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisBox<T> {
    lower: Vec<T>,
    upper: Vec<T>,
}

impl<T: Scalar> AxisBox<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::invalid("box bounds must be non-empty, equal length"));
        }
        for (l, u) in lower.iter().zip(&upper) {
            if !(l.is_finite() && u.is_finite() && *l < *u) {
                return Err(Error::invalid(format!(
                    "box requires finite lower < upper, got [{l}, {u}]"
                )));
            }
        }
        Ok(AxisBox { lower, upper })
    }

    /// Unit hypercube [0,1]^dim.
    pub fn unit(dim: usize) -> Self {
        AxisBox {
            lower: vec![T::zero(); dim],
            upper: vec![T::one(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    pub fn upper(&self) -> &[T] {
        &self.upper
    }

    pub fn volume(&self) -> T {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| *u - *l)
            .fold(T::one(), |a, b| a * b)
    }

    pub fn contains(&self, p: &[T]) -> bool {
        p.len() == self.dim()
            && p.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (l, u))| *x >= *l && *x <= *u)
    }

    /// One uniform draw from the box.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| *l + T::unit_uniform(rng) * (*u - *l))
            .collect()
    }
}

/// A nonnegative intensity function bounded by `lambda_max` on an axis box.
pub struct BoundedIntensity<T> {
    eval: Box<dyn Fn(&[T]) -> T + Send + Sync>,
    region: AxisBox<T>,
    lambda_max: T,
}

/// Probe count used by [`BoundedIntensity::new`] to spot-check the bound.
pub const DEFAULT_BOUND_PROBES: usize = 10_000;

impl<T: Scalar> BoundedIntensity<T> {
    /// Builds an intensity, spot-checking `eval ≤ lambda_max` and `eval ≥ 0`
    /// at `DEFAULT_BOUND_PROBES` uniform points of the box.
    ///
    /// The bound cannot be proven for a black-box function; the thinning step
    /// re-checks every candidate and hard-errors on violation.
    pub fn new(
        eval: impl Fn(&[T]) -> T + Send + Sync + 'static,
        region: AxisBox<T>,
        lambda_max: T,
        probe_seed: u64,
    ) -> Result<Self> {
        Self::with_probes(eval, region, lambda_max, probe_seed, DEFAULT_BOUND_PROBES)
    }

    pub fn with_probes(
        eval: impl Fn(&[T]) -> T + Send + Sync + 'static,
        region: AxisBox<T>,
        lambda_max: T,
        probe_seed: u64,
        probes: usize,
    ) -> Result<Self> {
        let intensity = Self::new_unchecked(eval, region, lambda_max)?;
        let mut rng = crate::rng::substream(probe_seed, crate::rng::tags::PROBE, 0);
        for _ in 0..probes {
            let p = intensity.region.sample_uniform(&mut rng);
            intensity.check_value(&p)?;
        }
        Ok(intensity)
    }

    /// Skips probing; for intensities whose bound is exact by construction
    /// (e.g. a Gaussian density bounded by its mode value).
    pub fn new_unchecked(
        eval: impl Fn(&[T]) -> T + Send + Sync + 'static,
        region: AxisBox<T>,
        lambda_max: T,
    ) -> Result<Self> {
        if !(lambda_max.is_finite() && lambda_max > T::zero()) {
            return Err(Error::invalid(format!(
                "lambda_max must be positive and finite, got {lambda_max}"
            )));
        }
        Ok(BoundedIntensity {
            eval: Box::new(eval),
            region,
            lambda_max,
        })
    }

    pub fn region(&self) -> &AxisBox<T> {
        &self.region
    }

    pub fn lambda_max(&self) -> T {
        self.lambda_max
    }

    pub fn eval(&self, p: &[T]) -> T {
        (self.eval)(p)
    }

    /// Evaluates at `p`, erroring on a negative value or a bound violation.
    fn check_value(&self, p: &[T]) -> Result<T> {
        let v = (self.eval)(p);
        if !v.is_finite() || v < T::zero() {
            return Err(Error::invalid(format!(
                "intensity must be finite and nonnegative, got {v}"
            )));
        }
        // Slack of a few ulps so an eval that equals the bound through a
        // different arithmetic path does not trip the check.
        let slack = T::one() + real::<T>(8.0) * T::epsilon();
        if v > self.lambda_max * slack {
            return Err(Error::BoundViolation {
                point: p.iter().map(|x| widen(*x)).collect(),
                value: widen(v),
                bound: widen(self.lambda_max),
            });
        }
        Ok(v)
    }
}

/// One draw from Poisson(mean).
///
/// Sequential-search inversion below mean 30, PTRS transformed rejection
/// above; both are exact samplers.
pub fn sample_poisson_count<T: Scalar, R: Rng + ?Sized>(mean: T, rng: &mut R) -> Result<u64> {
    if !mean.is_finite() || mean < T::zero() {
        return Err(Error::invalid(format!(
            "Poisson mean must be finite and nonnegative, got {mean}"
        )));
    }
    if mean == T::zero() {
        return Ok(0);
    }
    if mean < real::<T>(30.0) {
        Ok(poisson_inversion(mean, rng))
    } else {
        Ok(poisson_ptrs(mean, rng))
    }
}

fn poisson_inversion<T: Scalar, R: Rng + ?Sized>(mean: T, rng: &mut R) -> u64 {
    let u = T::unit_uniform(rng);
    let mut k = 0u64;
    let mut p = (-mean).exp();
    let mut cdf = p;
    while u > cdf {
        k += 1;
        p = p * mean / count_as::<T>(k as usize);
        cdf = cdf + p;
        if p <= T::zero() {
            // Underflow guard: the remaining tail mass is below representable
            // resolution, stop at the current count.
            break;
        }
    }
    k
}

/// Hörmann's PTRS rejection sampler, valid for mean ≥ 10.
fn poisson_ptrs<T: Scalar, R: Rng + ?Sized>(mean: T, rng: &mut R) -> u64 {
    let half = real::<T>(0.5);
    let slam = mean.sqrt();
    let loglam = mean.ln();
    let b = real::<T>(0.931) + real::<T>(2.53) * slam;
    let a = real::<T>(-0.059) + real::<T>(0.02483) * b;
    let invalpha = real::<T>(1.1239) + real::<T>(1.1328) / (b - real::<T>(3.4));
    let vr = real::<T>(0.9277) - real::<T>(3.6224) / (b - real::<T>(2.0));
    loop {
        let u = T::unit_uniform(rng) - half;
        let v = T::unit_uniform(rng);
        let us = half - u.abs();
        let k = ((real::<T>(2.0) * a / us + b) * u + mean + real::<T>(0.43)).floor();
        if us >= real::<T>(0.07) && v <= vr {
            return widen(k) as u64;
        }
        if k < T::zero() || (us < real::<T>(0.013) && v > us) {
            continue;
        }
        let lhs = v.ln() + invalpha.ln() - (a / (us * us) + b).ln();
        let rhs = k * loglam - mean - ln_gamma(k + T::one());
        if lhs <= rhs {
            return widen(k) as u64;
        }
    }
}

/// Homogeneous PPP on a box: Poisson(rate · volume) points, i.i.d. uniform.
pub fn sample_homogeneous<T: Scalar, R: Rng + ?Sized>(
    region: &AxisBox<T>,
    rate: T,
    rng: &mut R,
) -> Result<PointPattern<T>> {
    if !rate.is_finite() || rate <= T::zero() {
        return Err(Error::invalid(format!(
            "homogeneous rate must be positive, got {rate}"
        )));
    }
    let count = sample_poisson_count(rate * region.volume(), rng)?;
    let mut pattern = PointPattern::new(region.dim())?;
    for _ in 0..count {
        let p = region.sample_uniform(rng);
        pattern.push(&p)?;
    }
    Ok(pattern)
}

/// Mixed binomial process: κ ~ Poisson(count_mean) i.i.d. draws from `draw`.
///
/// With a Poisson count this is exactly a PPP with intensity
/// `count_mean · (law of draw)`.
pub fn sample_mixed_binomial<T, R, F>(
    count_mean: T,
    mut draw: F,
    dim: usize,
    rng: &mut R,
) -> Result<PointPattern<T>>
where
    T: Scalar,
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> Vec<T>,
{
    let count = sample_poisson_count(count_mean, rng)?;
    let mut pattern = PointPattern::new(dim)?;
    for _ in 0..count {
        let p = draw(rng);
        pattern.push(&p)?;
    }
    Ok(pattern)
}

/// Independently retains each candidate with probability `eval(θ)/lambda_max`,
/// preserving input order. Errors if any candidate lies outside the box or
/// its intensity exceeds the bound.
pub fn thin_candidates<T: Scalar, R: Rng + ?Sized>(
    candidates: &PointPattern<T>,
    intensity: &BoundedIntensity<T>,
    rng: &mut R,
) -> Result<PointPattern<T>> {
    let mut kept = PointPattern::new(candidates.dim())?;
    for p in candidates.iter() {
        if !intensity.region().contains(p) {
            return Err(Error::invalid(
                "thinning candidate lies outside the intensity box",
            ));
        }
        let v = intensity.check_value(p)?;
        let accept = v / intensity.lambda_max();
        if T::unit_uniform(rng) < accept {
            kept.push(p)?;
        }
    }
    Ok(kept)
}

/// Realization of a PPP with bounded intensity by thinning: homogeneous
/// candidates at rate `lambda_max`, each kept with probability
/// `eval(θ)/lambda_max`.
pub fn sample_ppp_thinning<T: Scalar, R: Rng + ?Sized>(
    intensity: &BoundedIntensity<T>,
    rng: &mut R,
) -> Result<PointPattern<T>> {
    let candidates = sample_homogeneous(intensity.region(), intensity.lambda_max(), rng)?;
    thin_candidates(&candidates, intensity, rng)
}

/// Concatenates patterns of common dimension `dim`.
pub fn superpose<T: Scalar>(dim: usize, patterns: &[PointPattern<T>]) -> Result<PointPattern<T>> {
    let mut merged = PointPattern::new(dim)?;
    for p in patterns {
        if p.dim() != dim {
            return Err(Error::invalid(format!(
                "superpose: pattern dimension {} differs from declared {dim}",
                p.dim()
            )));
        }
        merged.coords.extend_from_slice(&p.coords);
    }
    Ok(merged)
}

/// Pointwise image of a pattern under `f: ℝ^dim → ℝ^out_dim`.
pub fn map_pattern<T: Scalar>(
    pattern: &PointPattern<T>,
    f: impl Fn(&[T]) -> Vec<T>,
    out_dim: usize,
) -> Result<PointPattern<T>> {
    let mut image = PointPattern::new(out_dim)?;
    for p in pattern.iter() {
        let q = f(p);
        if q.len() != out_dim {
            return Err(Error::ContractViolation {
                want: out_dim,
                got: q.len(),
            });
        }
        image.push(&q)?;
    }
    Ok(image)
}

/// Attaches to each point one independent mark drawn from `kernel(θ, ·)`.
pub fn mark_pattern<T, M, R, K>(
    pattern: &PointPattern<T>,
    mut kernel: K,
    rng: &mut R,
) -> MarkedPattern<T, M>
where
    T: Scalar,
    R: Rng + ?Sized,
    K: FnMut(&[T], &mut R) -> M,
{
    let pairs = pattern
        .iter()
        .map(|p| (p.to_vec(), kernel(p, rng)))
        .collect();
    MarkedPattern {
        dim: pattern.dim(),
        pairs,
    }
}

/// Thinned process: keeps the points whose binary retention mark is 1.
pub fn thin_by_retention<T: Scalar, R: Rng + ?Sized>(
    pattern: &PointPattern<T>,
    retention: impl Fn(&[T]) -> T,
    rng: &mut R,
) -> Result<PointPattern<T>> {
    let mut kept = PointPattern::new(pattern.dim())?;
    for p in pattern.iter() {
        let prob = retention(p);
        if !(prob >= T::zero() && prob <= T::one()) {
            return Err(Error::invalid(format!(
                "retention probability {prob} outside [0, 1]"
            )));
        }
        if T::unit_uniform(rng) < prob {
            kept.push(p)?;
        }
    }
    Ok(kept)
}

/// Number of points of `pattern` satisfying `region`.
pub fn count_in_region<T: Scalar>(
    pattern: &PointPattern<T>,
    region: impl Fn(&[T]) -> bool,
) -> usize {
    pattern.count_in_region(region)
}
