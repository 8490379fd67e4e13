//! Posterior sampling for Bayesian inverse problems via Poisson point
//! processes.
//!
//! The posterior of a Bayesian inverse problem, scaled by an expected point
//! count γ, is treated as the intensity measure of a Poisson point process.
//! The crate provides:
//!
//! - [`point_process`]: Poisson counts, homogeneous and thinned process
//!   realizations, superposition, mapping, and marking;
//! - [`bayes`]: priors, the data-misfit potential, unnormalized posterior
//!   densities and intensities;
//! - [`mixture`]: importance-weighted EM fitting of Gaussian mixtures to the
//!   posterior;
//! - [`sampler`]: the decomposition sampler that draws per-component Poisson
//!   counts and superposes component samples;
//! - [`forward`]: the forward maps, including 1-D and 2-D finite difference
//!   solvers;
//! - [`diagnostics`]: density distances, Poisson goodness-of-fit and
//!   independence tests, convergence studies, and an importance-sampling
//!   moment oracle;
//! - [`io`]: the CSV/JSON exchange formats.
//!
//! All numerics are generic over [`scalar::Scalar`] (`f32`/`f64`); the crate
//! root exposes `f64` aliases, which the CLI uses.

pub mod bayes;
pub mod diagnostics;
pub mod error;
pub mod forward;
pub mod io;
pub mod linalg;
pub mod mixture;
pub mod point_process;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod special;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Concrete `f64` aliases for the main types.
pub type PointPattern64 = point_process::PointPattern<f64>;
pub type MarkedPattern64<M> = point_process::MarkedPattern<f64, M>;
pub type AxisBox64 = point_process::AxisBox<f64>;
pub type BoundedIntensity64 = point_process::BoundedIntensity<f64>;
pub type PriorSpec64 = bayes::PriorSpec<f64>;
pub type PosteriorSpec64 = bayes::PosteriorSpec<f64>;
pub type IntensitySpec64 = bayes::IntensitySpec<f64>;
pub type GaussianComponent64 = mixture::GaussianComponent<f64>;
pub type GaussianMixture64 = mixture::GaussianMixture<f64>;
pub type WeightedSampleSet64 = mixture::WeightedSampleSet<f64>;
pub type EmConfig64 = mixture::EmConfig<f64>;
pub type LabeledPattern64 = sampler::LabeledPattern<f64>;
pub type SamplerConfig64 = sampler::SamplerConfig<f64>;
pub type GridDensity64 = diagnostics::GridDensity<f64>;
pub type MomentReport64 = diagnostics::MomentReport<f64>;
pub type SymMat64 = linalg::SymMat<f64>;
