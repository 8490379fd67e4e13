//! Forward maps for the experiment suite: two closed-form maps and two
//! finite difference PDE solvers (1-D variable-coefficient elliptic and 2-D
//! heterogeneous heat conduction).

use crate::bayes::{ForwardModel, PriorSpec};
use crate::error::{Error, Result};
use crate::linalg::{solve_tridiagonal, BandedSpd, SymMat};
use crate::scalar::{count_as, real, Scalar};

/// Sensor locations of the two-parameter elliptic problem.
pub const UNIMODAL_SENSORS: [f64; 2] = [0.25, 0.75];

/// u(x; θ) = θ₂·x + exp(−θ₁)·(−x²/2 + x/2), observed at x = 0.25 and 0.75.
#[derive(Clone, Copy, Debug, Default)]
pub struct UnimodalModel;

impl UnimodalModel {
    fn shape<T: Scalar>(x: T) -> T {
        let half = real::<T>(0.5);
        half * x - half * x * x
    }

    pub fn solution_at<T: Scalar>(x: T, theta: &[T]) -> T {
        theta[1] * x + (-theta[0]).exp() * Self::shape(x)
    }
}

impl<T: Scalar> ForwardModel<T> for UnimodalModel {
    fn param_dim(&self) -> usize {
        2
    }

    fn obs_dim(&self) -> usize {
        2
    }

    fn apply(&self, theta: &[T]) -> Result<Vec<T>> {
        Ok(UNIMODAL_SENSORS
            .iter()
            .map(|&x| Self::solution_at(real(x), theta))
            .collect())
    }

    fn jacobian(&self, theta: &[T]) -> Option<Vec<Vec<T>>> {
        Some(
            UNIMODAL_SENSORS
                .iter()
                .map(|&x| {
                    let x = real::<T>(x);
                    vec![-(-theta[0]).exp() * Self::shape(x), x]
                })
                .collect(),
        )
    }
}

/// G(θ) = (θ₁ − θ₂)².
#[derive(Clone, Copy, Debug, Default)]
pub struct BimodalModel;

impl<T: Scalar> ForwardModel<T> for BimodalModel {
    fn param_dim(&self) -> usize {
        2
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn apply(&self, theta: &[T]) -> Result<Vec<T>> {
        let d = theta[0] - theta[1];
        Ok(vec![d * d])
    }

    fn jacobian(&self, theta: &[T]) -> Option<Vec<Vec<T>>> {
        let two = real::<T>(2.0);
        let d = theta[0] - theta[1];
        Some(vec![vec![two * d, -two * d]])
    }
}

/// Grid solution of the 1-D elliptic problem, with linear interpolation.
#[derive(Clone, Debug)]
pub struct Elliptic1dSolution<T> {
    h: T,
    values: Vec<T>,
}

impl<T: Scalar> Elliptic1dSolution<T> {
    pub fn nodes(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn node_position(&self, i: usize) -> T {
        count_as::<T>(i) * self.h
    }

    /// Linear interpolation at x ∈ [0, 1].
    pub fn eval(&self, x: T) -> T {
        let n = self.values.len();
        let pos = (x / self.h).max(T::zero());
        let i = pos
            .floor()
            .to_usize()
            .unwrap_or(0)
            .min(n.saturating_sub(2));
        let frac = pos - count_as::<T>(i);
        self.values[i] + frac * (self.values[i + 1] - self.values[i])
    }
}

/// Solves −d/dx(exp(p(x)) du/dx) = 1 on [0,1] with u(0) = u(1) = 0 by a
/// second-order conservative finite difference scheme; the coefficient is
/// evaluated at cell midpoints and the tridiagonal system solved directly.
pub fn solve_elliptic_1d<T: Scalar>(
    log_coeff: impl Fn(T) -> T,
    n_nodes: usize,
) -> Result<Elliptic1dSolution<T>> {
    if n_nodes < 11 {
        return Err(Error::SolverInput(format!(
            "need at least 11 nodes, got {n_nodes}"
        )));
    }
    let h = T::one() / count_as::<T>(n_nodes - 1);
    let m = n_nodes - 2; // interior unknowns
    let mut face = Vec::with_capacity(n_nodes - 1);
    for i in 0..n_nodes - 1 {
        let x_mid = (count_as::<T>(i) + real::<T>(0.5)) * h;
        let p = log_coeff(x_mid);
        if !p.is_finite() {
            return Err(Error::SolverInput(format!(
                "log-coefficient is not finite at x = {x_mid}"
            )));
        }
        face.push(p.exp());
    }
    let h2 = h * h;
    let mut diag = Vec::with_capacity(m);
    let mut lower = Vec::with_capacity(m - 1);
    let mut upper = Vec::with_capacity(m - 1);
    for i in 0..m {
        diag.push((face[i] + face[i + 1]) / h2);
        if i + 1 < m {
            lower.push(-face[i + 1] / h2);
            upper.push(-face[i + 1] / h2);
        }
    }
    let rhs = vec![T::one(); m];
    let interior = solve_tridiagonal(&lower, &diag, &upper, &rhs)?;
    let mut values = Vec::with_capacity(n_nodes);
    values.push(T::zero());
    values.extend(interior);
    values.push(T::zero());
    Ok(Elliptic1dSolution { h, values })
}

/// Evaluates p(x) = Σ_k θ_k · √2 sin(kπx) at the given points. The
/// coefficients θ_k already carry the prior eigenvalue scaling.
pub fn kl_expand<T: Scalar>(theta: &[T], xs: &[T]) -> Vec<T> {
    xs.iter().map(|&x| kl_expand_at(theta, x)).collect()
}

pub fn kl_expand_at<T: Scalar>(theta: &[T], x: T) -> T {
    let sqrt2 = real::<T>(std::f64::consts::SQRT_2);
    let pi = real::<T>(std::f64::consts::PI);
    theta
        .iter()
        .enumerate()
        .map(|(k, &t)| t * sqrt2 * (count_as::<T>(k + 1) * pi * x).sin())
        .fold(T::zero(), |a, b| a + b)
}

/// Setup of the truncated log-permeability inversion.
#[derive(Clone, Debug)]
pub struct KlSetup<T> {
    pub n_terms: usize,
    /// Smoothness exponent of the Laplacian-power prior.
    pub smoothness: T,
    pub mesh_nodes: usize,
    pub obs_points: Vec<T>,
    /// Per-observation noise variance (diagonal noise covariance).
    pub noise_var: T,
}

impl<T: Scalar> KlSetup<T> {
    pub fn new(
        n_terms: usize,
        smoothness: T,
        mesh_nodes: usize,
        obs_points: Vec<T>,
        noise_var: T,
    ) -> Result<Self> {
        if n_terms == 0 {
            return Err(Error::invalid("need at least one expansion term"));
        }
        if mesh_nodes < 11 {
            return Err(Error::SolverInput("need at least 11 mesh nodes".into()));
        }
        if obs_points.is_empty()
            || obs_points
                .iter()
                .any(|&x| !(x > T::zero() && x < T::one()))
        {
            return Err(Error::invalid(
                "observation points must lie strictly inside (0, 1)",
            ));
        }
        if !(noise_var.is_finite() && noise_var > T::zero()) {
            return Err(Error::invalid("noise variance must be positive"));
        }
        Ok(KlSetup {
            n_terms,
            smoothness,
            mesh_nodes,
            obs_points,
            noise_var,
        })
    }

    /// `count` equispaced interior observation points.
    pub fn equispaced_observations(count: usize) -> Vec<T> {
        let step = T::one() / count_as::<T>(count + 1);
        (1..=count).map(|i| count_as::<T>(i) * step).collect()
    }

    /// Prior: independent θ_k ~ N(0, λ_k^{−s}) with λ_k = (kπ)² the Dirichlet
    /// Laplacian eigenvalues, so Var(θ_k) = (kπ)^{−2s}.
    pub fn prior(&self) -> PriorSpec<T> {
        let pi = real::<T>(std::f64::consts::PI);
        let variances: Vec<T> = (1..=self.n_terms)
            .map(|k| {
                let lambda = (count_as::<T>(k) * pi) * (count_as::<T>(k) * pi);
                lambda.powf(-self.smoothness)
            })
            .collect();
        PriorSpec::diagonal_gaussian(&variances).expect("positive variances")
    }

    pub fn noise_cov(&self) -> SymMat<T> {
        SymMat::scaled_identity(self.obs_points.len(), self.noise_var)
    }
}

/// Forward map of the KL-expanded elliptic problem: expand θ into p, solve,
/// observe u at the setup's points.
#[derive(Clone, Debug)]
pub struct KlModel<T> {
    setup: KlSetup<T>,
}

impl<T: Scalar> KlModel<T> {
    pub fn new(setup: KlSetup<T>) -> Self {
        KlModel { setup }
    }

    pub fn setup(&self) -> &KlSetup<T> {
        &self.setup
    }
}

impl<T: Scalar> ForwardModel<T> for KlModel<T> {
    fn param_dim(&self) -> usize {
        self.setup.n_terms
    }

    fn obs_dim(&self) -> usize {
        self.setup.obs_points.len()
    }

    fn apply(&self, theta: &[T]) -> Result<Vec<T>> {
        let solution = solve_elliptic_1d(|x| kl_expand_at(theta, x), self.setup.mesh_nodes)?;
        Ok(self
            .setup
            .obs_points
            .iter()
            .map(|&x| solution.eval(x))
            .collect())
    }
}

/// Circular inclusion: center and radius.
#[derive(Clone, Copy, Debug)]
pub struct Disk<T> {
    pub center: (T, T),
    pub radius: T,
}

impl<T: Scalar> Disk<T> {
    pub fn contains(&self, x: T, y: T) -> bool {
        let dx = x - self.center.0;
        let dy = y - self.center.1;
        dx * dx + dy * dy <= self.radius * self.radius
    }
}

/// Stationary heat conduction on the unit square: background conductivity
/// κ₀ with two disk inclusions, Dirichlet temperature on the top edge,
/// prescribed flux through the bottom edge, insulated sides.
#[derive(Clone, Debug)]
pub struct HeatSetup<T> {
    pub grid_n: usize,
    pub kappa0: T,
    pub disks: [Disk<T>; 2],
    pub top_temperature: T,
    pub bottom_flux: T,
    pub sensors: Vec<(T, T)>,
}

impl<T: Scalar> HeatSetup<T> {
    pub fn new(
        grid_n: usize,
        kappa0: T,
        disks: [Disk<T>; 2],
        top_temperature: T,
        bottom_flux: T,
        sensors: Vec<(T, T)>,
    ) -> Result<Self> {
        if grid_n < 33 {
            return Err(Error::SolverInput(format!(
                "heat grid needs at least 33 nodes per side, got {grid_n}"
            )));
        }
        if !(kappa0.is_finite() && kappa0 > T::zero()) {
            return Err(Error::SolverInput("background conductivity must be positive".into()));
        }
        for d in &disks {
            let (cx, cy) = d.center;
            let r = d.radius;
            if !(r > T::zero()
                && cx - r > T::zero()
                && cx + r < T::one()
                && cy - r > T::zero()
                && cy + r < T::one())
            {
                return Err(Error::invalid("inclusion disk must lie inside the unit square"));
            }
        }
        let dx = disks[0].center.0 - disks[1].center.0;
        let dy = disks[0].center.1 - disks[1].center.1;
        let gap = (dx * dx + dy * dy).sqrt();
        if gap <= disks[0].radius + disks[1].radius {
            return Err(Error::invalid("inclusion disks must be disjoint"));
        }
        if sensors.is_empty() {
            return Err(Error::invalid("need at least one sensor"));
        }
        Ok(HeatSetup {
            grid_n,
            kappa0,
            disks,
            top_temperature,
            bottom_flux,
            sensors,
        })
    }

    /// The reconstruction geometry used by the experiments: 65×65 grid,
    /// κ₀ = 15, disks of radius 0.15 at (0.3, 0.4) and (0.7, 0.4), T = 200,
    /// q = 2000, five sensors equally spaced on the line y = 0.9.
    pub fn reference(grid_n: usize) -> Self {
        let sensors = (1..=5)
            .map(|k| (real::<T>(k as f64 / 6.0), real::<T>(0.9)))
            .collect();
        HeatSetup::new(
            grid_n,
            real(15.0),
            [
                Disk {
                    center: (real(0.3), real(0.4)),
                    radius: real(0.15),
                },
                Disk {
                    center: (real(0.7), real(0.4)),
                    radius: real(0.15),
                },
            ],
            real(200.0),
            real(2000.0),
            sensors,
        )
        .expect("reference geometry is valid")
    }

    fn kappa_at(&self, x: T, y: T, kappa1: T, kappa2: T) -> T {
        if self.disks[0].contains(x, y) {
            kappa1
        } else if self.disks[1].contains(x, y) {
            kappa2
        } else {
            self.kappa0
        }
    }
}

/// Grid temperature field with bilinear interpolation.
#[derive(Clone, Debug)]
pub struct HeatField<T> {
    n: usize,
    h: T,
    values: Vec<T>,
    top_flux: T,
}

impl<T: Scalar> HeatField<T> {
    pub fn grid_n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> T {
        self.values[j * self.n + i]
    }

    /// Discrete heat flux through the top edge (should balance the
    /// prescribed bottom flux).
    pub fn top_flux(&self) -> T {
        self.top_flux
    }

    /// Bilinear interpolation at (x, y) in the unit square.
    pub fn eval(&self, x: T, y: T) -> T {
        let n = self.n;
        let clamp = |p: T| p.max(T::zero()).min(T::one());
        let px = clamp(x) / self.h;
        let py = clamp(y) / self.h;
        let i = px.floor().to_usize().unwrap_or(0).min(n - 2);
        let j = py.floor().to_usize().unwrap_or(0).min(n - 2);
        let fx = px - count_as::<T>(i);
        let fy = py - count_as::<T>(j);
        let one = T::one();
        self.at(i, j) * (one - fx) * (one - fy)
            + self.at(i + 1, j) * fx * (one - fy)
            + self.at(i, j + 1) * (one - fx) * fy
            + self.at(i + 1, j + 1) * fx * fy
    }
}

/// Solves ∇·(κ∇u) = 0 with a vertex-centered conservative 5-point scheme and
/// harmonic-mean face conductivities. Dirichlet u = T on the top edge,
/// prescribed inflow flux q through the bottom edge, zero flux on the sides.
pub fn solve_heat_2d<T: Scalar>(
    setup: &HeatSetup<T>,
    kappa1: T,
    kappa2: T,
) -> Result<HeatField<T>> {
    if !(kappa1.is_finite() && kappa1 > T::zero() && kappa2.is_finite() && kappa2 > T::zero()) {
        return Err(Error::SolverInput(format!(
            "conductivities must be positive, got ({kappa1}, {kappa2})"
        )));
    }
    let n = setup.grid_n;
    let h = T::one() / count_as::<T>(n - 1);
    let two = real::<T>(2.0);
    let half = real::<T>(0.5);

    let kappa: Vec<T> = (0..n * n)
        .map(|id| {
            let (i, j) = (id % n, id / n);
            setup.kappa_at(count_as::<T>(i) * h, count_as::<T>(j) * h, kappa1, kappa2)
        })
        .collect();
    let face = |a: T, b: T| two * a * b / (a + b);

    // Unknowns: rows j = 0..n-2 (the top row is Dirichlet), index j*n + i.
    let unknowns = n * (n - 1);
    let mut matrix = BandedSpd::zeros(unknowns, n);
    let mut rhs = vec![T::zero(); unknowns];

    let width = |i: usize| if i == 0 || i == n - 1 { h * half } else { h };
    let height = |j: usize| if j == 0 { h * half } else { h };

    for j in 0..n - 1 {
        for i in 0..n {
            let p = j * n + i;
            let mut diag = T::zero();
            // West / east faces (length = CV height of row j).
            if i > 0 {
                let w = face(kappa[p], kappa[p - 1]) * height(j) / h;
                diag += w;
                matrix.add(p, p - 1, -w);
            }
            if i + 1 < n {
                let w = face(kappa[p], kappa[p + 1]) * height(j) / h;
                diag += w;
                // Stored once from the eastern row's west face.
            }
            // South face.
            if j > 0 {
                let w = face(kappa[p], kappa[p - n]) * width(i) / h;
                diag += w;
                matrix.add(p, p - n, -w);
            } else {
                rhs[p] += setup.bottom_flux * width(i);
            }
            // North face: neighbor is an unknown unless j+1 is the top row.
            let wn = face(kappa[p], kappa[p + n]) * width(i) / h;
            diag += wn;
            if j + 1 == n - 1 {
                rhs[p] += wn * setup.top_temperature;
            }
            matrix.add(p, p, diag);
        }
    }

    let chol = matrix.cholesky()?;
    let u = chol.solve(&rhs);

    let mut values = Vec::with_capacity(n * n);
    values.extend_from_slice(&u);
    values.extend(std::iter::repeat(setup.top_temperature).take(n));

    // Residual check: the factorization is direct, but an ill-conditioned
    // system would still show up here.
    let mut max_res = T::zero();
    let mut max_rhs = T::zero();
    for j in 0..n - 1 {
        for i in 0..n {
            let p = j * n + i;
            let mut acc = T::zero();
            let mut diag = T::zero();
            if i > 0 {
                let w = face(kappa[p], kappa[p - 1]) * height(j) / h;
                diag += w;
                acc -= w * u[p - 1];
            }
            if i + 1 < n {
                let w = face(kappa[p], kappa[p + 1]) * height(j) / h;
                diag += w;
                acc -= w * u[p + 1];
            }
            if j > 0 {
                let w = face(kappa[p], kappa[p - n]) * width(i) / h;
                diag += w;
                acc -= w * u[p - n];
            }
            let wn = face(kappa[p], kappa[p + n]) * width(i) / h;
            diag += wn;
            if j + 1 < n - 1 {
                acc -= wn * u[p + n];
            }
            acc += diag * u[p];
            max_res = max_res.max((acc - rhs[p]).abs());
            max_rhs = max_rhs.max(rhs[p].abs());
        }
    }
    if max_res > real::<T>(1e-10) * max_rhs.max(T::one()) {
        return Err(Error::SolverFailure(format!(
            "relative residual {} above 1e-10",
            max_res / max_rhs
        )));
    }

    // Flux through the plane between the top row and the row below it.
    let jt = n - 2;
    let mut top_flux = T::zero();
    for i in 0..n {
        let p = jt * n + i;
        let w = face(kappa[p], kappa[p + n]) * width(i) / h;
        top_flux += w * (values[p] - setup.top_temperature);
    }

    Ok(HeatField {
        n,
        h,
        values,
        top_flux,
    })
}

/// The reparameterization κ = 30 + 6·arctan(θ).
pub fn conductivity_from_param<T: Scalar>(theta: T) -> T {
    real::<T>(30.0) + real::<T>(6.0) * theta.atan()
}

/// Inverse of [`conductivity_from_param`].
pub fn param_from_conductivity<T: Scalar>(kappa: T) -> T {
    ((kappa - real::<T>(30.0)) / real::<T>(6.0)).tan()
}

/// Forward map of the heat problem: θ → (κ₁, κ₂) → PDE solve → sensors.
#[derive(Clone, Debug)]
pub struct HeatModel<T> {
    setup: HeatSetup<T>,
}

impl<T: Scalar> HeatModel<T> {
    pub fn new(setup: HeatSetup<T>) -> Self {
        HeatModel { setup }
    }

    pub fn setup(&self) -> &HeatSetup<T> {
        &self.setup
    }
}

impl<T: Scalar> ForwardModel<T> for HeatModel<T> {
    fn param_dim(&self) -> usize {
        2
    }

    fn obs_dim(&self) -> usize {
        self.setup.sensors.len()
    }

    fn apply(&self, theta: &[T]) -> Result<Vec<T>> {
        let kappa1 = conductivity_from_param(theta[0]);
        let kappa2 = conductivity_from_param(theta[1]);
        let field = solve_heat_2d(&self.setup, kappa1, kappa2)?;
        Ok(self
            .setup
            .sensors
            .iter()
            .map(|&(x, y)| field.eval(x, y))
            .collect())
    }
}
