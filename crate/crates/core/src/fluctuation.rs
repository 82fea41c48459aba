//! Fluctuation-corrected estimation for the random microstructure model
//! `1/k = 1/k₀ + σ μ(x/ε)`.
//!
//! To leading order `(pᵉ - p₀)(x) ≈ √ε σ ∫ Q(x, y) v₀(y) dB(y)` with
//! `v₀ = k₀ p₀'` the homogenized flux and `Q` the kernel of
//! [`GreensKernel`]. Writing `W(z) = ∫ₐᶻ v₀²` and `r(x) = h(x)/h(b)`,
//! `∫ Q(x_j, y) Q(x_l, y) v₀(y)² dy`
//! `= W(min(x_j, x_l)) - r_l W(x_j) - r_j W(x_l) + r_j r_l W(b)`,
//! which is how the observation covariance `C(k₀, ε)` is assembled.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::elliptic::{check_resolution, fmt_f64, solve_exact_nodal, GreensKernel, PressureSolution, SourceTerm};
use crate::error::{ensure, Error, Result};
use crate::fields::{compose_random_coefficient, gaussian_log_density, MicrostructureModel, MicrostructureSampler};
use crate::grid::{cumulative_trapezoid, Grid1D};
use crate::inference::{restart_points, scalar_estimate_from};
use crate::optimize::{minimize_with_restarts, NelderMeadOptions};
use crate::rng::{derive_seed, stream, Purpose};
use crate::stats::{excess_kurtosis, mean, skewness, variance};

/// `u₀(x) = θ₀ + Σ_m (θ_{2m-1} cos(mπx) + θ_{2m} sin(mπx))` on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierLogCoefficient {
    pub theta: Vec<f64>,
}

impl FourierLogCoefficient {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        ensure(!theta.is_empty(), || "need at least one coefficient".to_string())?;
        Ok(Self { theta })
    }

    pub fn log_k0(&self, x: f64) -> f64 {
        fourier_log(&self.theta, x)
    }

    pub fn k0(&self, x: f64) -> f64 {
        self.log_k0(x).exp()
    }
}

pub fn fourier_log(theta: &[f64], x: f64) -> f64 {
    let mut u = theta[0];
    for (i, t) in theta.iter().enumerate().skip(1) {
        let m = i.div_ceil(2) as f64;
        let arg = m * std::f64::consts::PI * x;
        u += t * if i % 2 == 1 { arg.cos() } else { arg.sin() };
    }
    u
}

/// Minimum quadrature nodes for covariance assembly.
pub const MIN_QUAD_NODES: usize = 512;

/// Jitter levels tried, as fractions of the trace.
pub const JITTER_LEVELS: [f64; 3] = [1e-12, 1e-10, 1e-8];

#[derive(Debug, Clone, PartialEq)]
pub struct FluctuationCovariance {
    pub points: Vec<f64>,
    pub matrix: DMatrix<f64>,
    pub gamma: f64,
    pub sigma: f64,
    pub eps: f64,
}

/// Cholesky factor with the jitter that was needed to obtain it.
#[derive(Debug, Clone)]
pub struct CovarianceFactor {
    pub chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    /// 0 for no jitter, otherwise `1 + index` into [`JITTER_LEVELS`].
    pub jitter_level: usize,
    pub log_det: f64,
}

impl CovarianceFactor {
    /// `rᵀ C⁻¹ r`.
    pub fn quadratic_form(&self, r: &[f64]) -> f64 {
        let v = DVector::from_column_slice(r);
        let s = self.chol.solve(&v);
        v.dot(&s)
    }
}

impl FluctuationCovariance {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Symmetric factorization, escalating the diagonal jitter through
    /// [`JITTER_LEVELS`] before giving up.
    pub fn factorize(&self) -> Result<CovarianceFactor> {
        let trace = self.matrix.trace();
        let attempt = |m: DMatrix<f64>, level: usize| {
            m.cholesky().map(|chol| {
                let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
                CovarianceFactor {
                    chol,
                    jitter_level: level,
                    log_det,
                }
            })
        };
        if let Some(f) = attempt(self.matrix.clone(), 0) {
            return Ok(f);
        }
        for (i, frac) in JITTER_LEVELS.iter().enumerate() {
            let mut m = self.matrix.clone();
            for d in 0..m.nrows() {
                m[(d, d)] += frac * trace;
            }
            if let Some(f) = attempt(m, i + 1) {
                return Ok(f);
            }
        }
        Err(Error::Covariance(format!(
            "factorization failed after jitter {:e} of trace {trace:e}",
            JITTER_LEVELS[JITTER_LEVELS.len() - 1]
        )))
    }

    /// Smallest eigenvalue, for diagnostics.
    pub fn min_eigenvalue(&self) -> f64 {
        self.matrix.clone().symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// `W` and `r = h/h(b)` tabulated on the quadrature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FluctuationKernel {
    pub grid: Grid1D,
    pub w: Vec<f64>,
    pub kernel: GreensKernel,
}

impl FluctuationKernel {
    /// From nodal `k₀` and the homogenized flux `v₀` on the same grid.
    pub fn from_flux(k0_values: &[f64], v0: &[f64], grid: &Grid1D) -> Result<Self> {
        let sq: Vec<f64> = v0.iter().map(|v| v * v).collect();
        Ok(Self {
            grid: *grid,
            w: cumulative_trapezoid(&sq, grid.spacing()),
            kernel: GreensKernel::from_nodal(k0_values, grid)?,
        })
    }

    /// `∫ Q(x, y) Q(z, y) v₀(y)² dy`.
    pub fn integral(&self, x: f64, z: f64) -> f64 {
        let w = |t: f64| self.grid.interpolate(&self.w, t);
        let (rx, rz) = (self.kernel.ratio(x), self.kernel.ratio(z));
        let wb = self.w[self.w.len() - 1];
        w(x.min(z)) - rz * w(x) - rx * w(z) + rx * rz * wb
    }
}

/// `C = γ² I + ε σ² [∫ Q(x_j, y) v₀(y)² Q(x_l, y) dy]` for nodal `k₀` on the
/// quadrature grid.
pub fn fluctuation_covariance_nodal(
    k0_values: &[f64],
    source: &SourceTerm,
    quad: &Grid1D,
    eps: f64,
    sigma: f64,
    gamma: f64,
    points: &[f64],
) -> Result<FluctuationCovariance> {
    ensure(quad.len() >= MIN_QUAD_NODES, || format!("quadrature grid needs at least {MIN_QUAD_NODES} nodes"))?;
    ensure(eps >= 0.0 && sigma >= 0.0 && gamma >= 0.0, || "eps, sigma and gamma must be nonnegative".to_string())?;
    for &x in points {
        ensure(x > quad.a() && x < quad.b(), || format!("observation point {x} must lie inside the domain"))?;
    }
    let p0 = solve_exact_nodal(k0_values, source, quad)?;
    let kernel = FluctuationKernel::from_flux(k0_values, &p0.v, quad)?;
    Ok(assemble(&kernel, eps, sigma, gamma, points))
}

fn assemble(kernel: &FluctuationKernel, eps: f64, sigma: f64, gamma: f64, points: &[f64]) -> FluctuationCovariance {
    let n = points.len();
    let scale = eps * sigma * sigma;
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        for l in j..n {
            let v = scale * kernel.integral(points[j], points[l]);
            m[(j, l)] = v;
            m[(l, j)] = v;
        }
        m[(j, j)] += gamma * gamma;
    }
    FluctuationCovariance {
        points: points.to_vec(),
        matrix: m,
        gamma,
        sigma,
        eps,
    }
}

pub fn fluctuation_covariance<K>(k0: K, source: &SourceTerm, quad: &Grid1D, eps: f64, sigma: f64, gamma: f64, points: &[f64]) -> Result<FluctuationCovariance>
where
    K: Fn(f64) -> f64,
{
    let kv: Vec<f64> = quad.nodes().iter().map(|&x| k0(x)).collect();
    fluctuation_covariance_nodal(&kv, source, quad, eps, sigma, gamma, points)
}

/// Solver grid for a random-coefficient solve at scale `ε`: it must resolve
/// both the solver rule and the sampler rule.
pub fn microstructure_grid(a: f64, b: f64, eps: f64) -> Result<Grid1D> {
    Grid1D::resolving(a, b, eps, crate::elliptic::NODES_PER_PERIOD)
}

/// Exact solve with a freshly drawn microstructure.
pub struct RandomSolver {
    grid: Grid1D,
    sampler: MicrostructureSampler,
    k0_values: Vec<f64>,
    sigma: f64,
    clamp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomSolve {
    pub solution: PressureSolution,
    pub clamp_fraction: f64,
}

impl RandomSolver {
    pub fn new<K: Fn(f64) -> f64>(k0: K, model: &MicrostructureModel, domain: (f64, f64)) -> Result<Self> {
        let grid = microstructure_grid(domain.0, domain.1, model.epsilon)?;
        check_resolution(&grid, model.epsilon)?;
        Ok(Self {
            sampler: MicrostructureSampler::new(model, &grid)?,
            k0_values: grid.nodes().iter().map(|&x| k0(x)).collect(),
            grid,
            sigma: model.sigma,
            clamp: model.clamp_ceiling,
        })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn solve(&self, source: &SourceTerm, seed: u64) -> Result<RandomSolve> {
        let sample = self.sampler.sample(seed);
        let k0 = &self.k0_values;
        let grid = self.grid;
        let coeff = compose_random_coefficient(|x| grid.interpolate(k0, x), &sample, self.sigma, self.clamp)?;
        Ok(RandomSolve {
            solution: solve_exact_nodal(&coeff.k_values, source, &self.grid)?,
            clamp_fraction: coeff.clamp_fraction(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CltPoint {
    pub x: f64,
    pub mean: f64,
    /// Empirical `Var[(pᵉ - p₀)/√ε]`.
    pub empirical_variance: f64,
    /// `σ² ∫ Q² v₀²` with the flux `v₀ = k₀ p₀'`.
    pub predicted_variance: f64,
    /// The same with `v₀ = k₀ p₀` in place of the flux.
    pub predicted_variance_literal: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CltReport {
    pub eps: f64,
    pub sigma: f64,
    pub replicates: usize,
    pub points: Vec<CltPoint>,
    pub mean_clamp_fraction: f64,
}

impl CltReport {
    /// `x,mean,empirical_variance,predicted_flux,predicted_literal,skewness,excess_kurtosis`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "x",
            "mean",
            "empirical_variance",
            "predicted_flux",
            "predicted_literal",
            "skewness",
            "excess_kurtosis",
        ])?;
        for p in &self.points {
            out.write_record(
                [
                    p.x,
                    p.mean,
                    p.empirical_variance,
                    p.predicted_variance,
                    p.predicted_variance_literal,
                    p.skewness,
                    p.excess_kurtosis,
                ]
                .map(fmt_f64),
            )?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Monte Carlo check of the Gaussian limit of `(pᵉ - p₀)/√ε`.
pub fn clt_diagnostic<K>(k0: K, source: &SourceTerm, domain: (f64, f64), model: &MicrostructureModel, points: &[f64], replicates: usize, seed: u64) -> Result<CltReport>
where
    K: Fn(f64) -> f64 + Sync,
{
    ensure(replicates >= 2, || "need at least two replicates".to_string())?;
    let solver = RandomSolver::new(&k0, model, domain)?;
    let grid = *solver.grid();
    let k0v: Vec<f64> = grid.nodes().iter().map(|&x| k0(x)).collect();
    let p0 = solve_exact_nodal(&k0v, source, &grid)?;
    let flux = FluctuationKernel::from_flux(&k0v, &p0.v, &grid)?;
    let literal_v: Vec<f64> = k0v.iter().zip(&p0.p).map(|(k, p)| k * p).collect();
    let literal = FluctuationKernel::from_flux(&k0v, &literal_v, &grid)?;
    let scale = model.epsilon.sqrt();
    let draws = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let s = solver.solve(source, derive_seed(seed, Purpose::Microstructure, r))?;
            let z: Vec<f64> = points
                .iter()
                .map(|&x| (s.solution.value_at(x) - p0.value_at(x)) / scale)
                .collect();
            Ok((z, s.clamp_fraction))
        })
        .collect::<Result<Vec<_>>>()?;
    let s2 = model.sigma * model.sigma;
    let pts = points
        .iter()
        .enumerate()
        .map(|(j, &x)| {
            let z: Vec<f64> = draws.iter().map(|d| d.0[j]).collect();
            CltPoint {
                x,
                mean: mean(&z),
                empirical_variance: variance(&z),
                predicted_variance: s2 * flux.integral(x, x),
                predicted_variance_literal: s2 * literal.integral(x, x),
                skewness: skewness(&z),
                excess_kurtosis: excess_kurtosis(&z),
            }
        })
        .collect();
    Ok(CltReport {
        eps: model.epsilon,
        sigma: model.sigma,
        replicates,
        points: pts,
        mean_clamp_fraction: mean(&draws.iter().map(|d| d.1).collect::<Vec<_>>()),
    })
}

/// Point-evaluation data on `[-1, 1]` and a Gaussian prior on the Fourier
/// coefficients of `log k₀`.
#[derive(Debug, Clone)]
pub struct MapProblem {
    pub points: Vec<f64>,
    pub y: Vec<f64>,
    pub gamma: f64,
    pub prior_mean: Vec<f64>,
    pub prior_sd: Vec<f64>,
    pub use_model_error: bool,
    pub sigma: f64,
    pub eps: f64,
    pub source: SourceTerm,
    /// Grid for the homogenized solve and covariance quadrature.
    pub quad: Grid1D,
}

impl MapProblem {
    pub fn validate(&self) -> Result<()> {
        ensure(self.points.len() == self.y.len(), || "points and data differ in length".to_string())?;
        ensure(self.prior_mean.len() == self.prior_sd.len() && !self.prior_mean.is_empty(), || {
            "prior mean and sd must have the same positive length".to_string()
        })?;
        ensure(self.prior_sd.iter().all(|s| *s > 0.0), || "prior variances must be positive".to_string())?;
        ensure(self.gamma > 0.0 || (self.use_model_error && self.eps * self.sigma > 0.0), || {
            "observation covariance would be singular".to_string()
        })
    }

    /// Homogenized predictions `p₀(x_j; θ)` and the flux kernel.
    fn forward(&self, theta: &[f64]) -> Result<(Vec<f64>, Vec<f64>, PressureSolution)> {
        let kv: Vec<f64> = self.quad.nodes().iter().map(|&x| fourier_log(theta, x).exp()).collect();
        let p0 = solve_exact_nodal(&kv, &self.source, &self.quad)?;
        let g = self.points.iter().map(|&x| p0.value_at(x)).collect();
        Ok((g, kv, p0))
    }

    pub fn predict(&self, theta: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(theta)?.0)
    }

    fn prior_term(&self, theta: &[f64]) -> Result<f64> {
        let centred: Vec<f64> = theta.iter().zip(&self.prior_mean).map(|(t, m)| t - m).collect();
        gaussian_log_density(&self.prior_sd, &centred)
    }
}

/// `½ log det C(θ) + ½ rᵀ C(θ)⁻¹ r - log π₀(θ)` with `r = y - G(θ)`.
pub fn neg_log_posterior(problem: &MapProblem, theta: &[f64]) -> Result<f64> {
    let (g, kv, p0) = problem.forward(theta)?;
    let r: Vec<f64> = problem.y.iter().zip(&g).map(|(y, g)| y - g).collect();
    let prior = problem.prior_term(theta)?;
    let likelihood = if problem.use_model_error {
        let kernel = FluctuationKernel::from_flux(&kv, &p0.v, &problem.quad)?;
        let c = assemble(&kernel, problem.eps, problem.sigma, problem.gamma, &problem.points);
        let f = c.factorize()?;
        0.5 * f.log_det + 0.5 * f.quadratic_form(&r)
    } else {
        let g2 = problem.gamma * problem.gamma;
        0.5 * r.len() as f64 * g2.ln() + 0.5 * r.iter().map(|v| v * v).sum::<f64>() / g2
    };
    Ok(likelihood - prior)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapEstimate {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub evals: usize,
    pub converged: bool,
}

impl MapEstimate {
    pub fn k_hat(&self, x: f64) -> f64 {
        fourier_log(&self.theta, x).exp()
    }
}

/// Nelder–Mead from the prior mean and the mean shifted by `±1` prior sd.
pub fn map_estimate(problem: &MapProblem, opts: NelderMeadOptions) -> Result<MapEstimate> {
    problem.validate()?;
    let objective = |t: &[f64]| neg_log_posterior(problem, t).unwrap_or(f64::INFINITY);
    let starts = restart_points(&problem.prior_mean, &problem.prior_sd);
    let step: Vec<f64> = problem.prior_sd.iter().map(|s| 0.25 * s).collect();
    let r = minimize_with_restarts(objective, &starts, &step, opts);
    ensure(r.best.fx.is_finite(), || "objective not finite at any simplex vertex".to_string())
        .map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(MapEstimate {
        theta: r.best.x.clone(),
        objective: r.best.fx,
        evals: r.total_evals,
        converged: r.best.converged,
    })
}

/// Prior centre `(ū, 0, …)` from the scalar estimator applied with the
/// `k ≡ 1` reference solution; `0` if the estimate fails its sign check.
pub fn crude_prior_mean(points: &[f64], y: &[f64], source: &SourceTerm, quad: &Grid1D, dim: usize) -> Result<Vec<f64>> {
    let pstar = solve_exact_nodal(&vec![1.0; quad.len()], source, quad)?;
    let lstar: Vec<f64> = points.iter().map(|&x| pstar.value_at(x)).collect();
    let e = scalar_estimate_from(y, &lstar)?;
    let mut m = vec![0.0; dim];
    if !e.sign_failure {
        m[0] = e.u_bar;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceStudyConfig {
    pub theta_true: Vec<f64>,
    pub n_points: usize,
    pub eps: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub replicates: usize,
    pub seed: u64,
    pub prior_sd: f64,
    pub output_points: usize,
    pub quad_nodes: usize,
    pub clamp_ceiling: Option<f64>,
    pub optimizer: NelderMeadOptions,
}

impl VarianceStudyConfig {
    /// `[-1, 1]`, N = 64, ε = 2⁻⁶, σ = 0.5, γ = 10⁻³, θ* = (0.3, 0.4, -0.2).
    pub fn reference_regime(replicates: usize, seed: u64) -> Self {
        Self {
            theta_true: vec![0.3, 0.4, -0.2],
            n_points: 64,
            eps: 1.0 / 64.0,
            sigma: 0.5,
            gamma: 1e-3,
            replicates,
            seed,
            prior_sd: 1.0,
            output_points: 101,
            quad_nodes: 1025,
            clamp_ceiling: None,
            optimizer: NelderMeadOptions::default(),
        }
    }
}

/// Maximum optimizer failure rate before a study is flagged.
pub const MAX_FAILURE_RATE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateEstimate {
    pub replicate: usize,
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
    pub clamp_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceStudy {
    pub x: Vec<f64>,
    pub k0_true: Vec<f64>,
    pub mean_k1: Vec<f64>,
    pub var_k1: Vec<f64>,
    pub mean_k2: Vec<f64>,
    pub var_k2: Vec<f64>,
    pub replicates: Vec<ReplicateEstimate>,
    pub requested: usize,
    pub failures: usize,
    pub mean_clamp_fraction: f64,
    pub max_clamp_fraction: f64,
}

impl VarianceStudy {
    pub fn ratio(&self) -> Vec<f64> {
        self.var_k1.iter().zip(&self.var_k2).map(|(a, b)| a / b).collect()
    }

    pub fn failure_rate(&self) -> f64 {
        self.failures as f64 / self.requested as f64
    }

    pub fn flagged(&self) -> bool {
        self.failure_rate() > MAX_FAILURE_RATE
    }

    /// Pointwise standard errors of the two mean curves.
    pub fn mean_std_errors(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.replicates.len() as f64;
        let se = |v: &[f64]| v.iter().map(|s| (s / n).sqrt()).collect();
        (se(&self.var_k1), se(&self.var_k2))
    }

    /// `x,k0_true,mean_k1,var_k1,mean_k2,var_k2,ratio`.
    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x", "k0_true", "mean_k1", "var_k1", "mean_k2", "var_k2", "ratio"])?;
        let ratio = self.ratio();
        for i in 0..self.x.len() {
            out.write_record(
                [
                    self.x[i],
                    self.k0_true[i],
                    self.mean_k1[i],
                    self.var_k1[i],
                    self.mean_k2[i],
                    self.var_k2[i],
                    ratio[i],
                ]
                .map(fmt_f64),
            )?;
        }
        out.flush()?;
        Ok(())
    }

    /// `replicate,x,k1,k2`, one row per replicate and output point.
    pub fn write_replicates_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["replicate", "x", "k1", "k2"])?;
        for r in &self.replicates {
            for &x in &self.x {
                out.write_record([
                    r.replicate.to_string(),
                    fmt_f64(x),
                    fmt_f64(fourier_log(&r.theta1, x).exp()),
                    fmt_f64(fourier_log(&r.theta2, x).exp()),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// `x_j = -1 + 2j/(N + 1)`.
pub fn observation_points(n: usize) -> Vec<f64> {
    (1..=n).map(|j| -1.0 + 2.0 * j as f64 / (n + 1) as f64).collect()
}

/// Replicated comparison of the fluctuation-aware and noise-only MAP
/// estimators.
pub fn variance_study(config: &VarianceStudyConfig) -> Result<VarianceStudy> {
    ensure(config.replicates >= 2, || "need at least two replicates".to_string())?;
    let domain = (-1.0, 1.0);
    let truth = FourierLogCoefficient::new(config.theta_true.clone())?;
    let model = MicrostructureModel::new(config.sigma, config.eps, crate::fields::Covariance::Gaussian)?;
    let model = match config.clamp_ceiling {
        Some(c) => model.with_clamp_ceiling(c),
        None => model,
    };
    let solver = RandomSolver::new(|x| truth.k0(x), &model, domain)?;
    let source = SourceTerm::constant(1.0);
    let quad = Grid1D::new(domain.0, domain.1, config.quad_nodes)?;
    let points = observation_points(config.n_points);
    let dim = config.theta_true.len();

    let outcomes: Vec<Option<ReplicateEstimate>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            let run = || -> Result<Option<ReplicateEstimate>> {
                let solve = solver.solve(&source, derive_seed(config.seed, Purpose::Microstructure, r as u64))?;
                let mut rng = stream(config.seed, Purpose::ObservationNoise, r as u64);
                let y: Vec<f64> = points
                    .iter()
                    .map(|&x| {
                        let xi: f64 = rng.sample(StandardNormal);
                        solve.solution.value_at(x) + config.gamma * xi
                    })
                    .collect();
                let prior_mean = crude_prior_mean(&points, &y, &source, &quad, dim)?;
                let mut problem = MapProblem {
                    points: points.clone(),
                    y,
                    gamma: config.gamma,
                    prior_mean,
                    prior_sd: vec![config.prior_sd; dim],
                    use_model_error: true,
                    sigma: config.sigma,
                    eps: config.eps,
                    source: source.clone(),
                    quad,
                };
                let k1 = map_estimate(&problem, config.optimizer)?;
                problem.use_model_error = false;
                let k2 = map_estimate(&problem, config.optimizer)?;
                if !(k1.converged && k2.converged) {
                    return Ok(None);
                }
                Ok(Some(ReplicateEstimate {
                    replicate: r,
                    theta1: k1.theta,
                    theta2: k2.theta,
                    clamp_fraction: solve.clamp_fraction,
                }))
            };
            run().ok().flatten()
        })
        .collect();
    let replicates: Vec<ReplicateEstimate> = outcomes.into_iter().flatten().collect();
    let failures = config.replicates - replicates.len();
    ensure(replicates.len() >= 2, || format!("only {} replicates succeeded", replicates.len()))
        .map_err(|e| Error::Numerical(e.to_string()))?;

    let x = Grid1D::new(domain.0, domain.1, config.output_points)?.nodes();
    let mut mean_k1 = Vec::with_capacity(x.len());
    let mut var_k1 = Vec::with_capacity(x.len());
    let mut mean_k2 = Vec::with_capacity(x.len());
    let mut var_k2 = Vec::with_capacity(x.len());
    for &xi in &x {
        let a: Vec<f64> = replicates.iter().map(|r| fourier_log(&r.theta1, xi).exp()).collect();
        let b: Vec<f64> = replicates.iter().map(|r| fourier_log(&r.theta2, xi).exp()).collect();
        mean_k1.push(mean(&a));
        var_k1.push(variance(&a));
        mean_k2.push(mean(&b));
        var_k2.push(variance(&b));
    }
    let clamps: Vec<f64> = replicates.iter().map(|r| r.clamp_fraction).collect();
    Ok(VarianceStudy {
        k0_true: x.iter().map(|&v| truth.k0(v)).collect(),
        x,
        mean_k1,
        var_k1,
        mean_k2,
        var_k2,
        requested: config.replicates,
        failures,
        mean_clamp_fraction: mean(&clamps),
        max_clamp_fraction: clamps.iter().cloned().fold(0.0, f64::max),
        replicates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn quad() -> Grid1D {
        Grid1D::new(-1.0, 1.0, 2001).unwrap()
    }

    #[test]
    fn covariance_reduces_to_noise_without_microstructure() {
        let f = SourceTerm::constant(1.0);
        let c = fluctuation_covariance(|_| 1.0, &f, &quad(), 0.0, 0.5, 0.1, &[-0.5, 0.0, 0.3]).unwrap();
        assert_eq!(c.matrix, DMatrix::identity(3, 3) * (0.1 * 0.1));
    }

    #[test]
    fn single_point_variance_closed_form() {
        let f = SourceTerm::constant(1.0);
        let c = fluctuation_covariance(|_| 1.0, &f, &quad(), 0.01, 0.5, 0.0, &[0.0]).unwrap();
        assert_abs_diff_eq!(c.matrix[(0, 0)], 0.01 * 0.25 / 6.0, epsilon = 1e-9);
    }

    #[test]
    fn covariance_matches_direct_kernel_quadrature() {
        let g = quad();
        let f = SourceTerm::constant(1.0);
        let k0 = |x: f64| (0.3 + 0.4 * (std::f64::consts::PI * x).cos()).exp();
        let pts = [-0.4, 0.1, 0.7];
        let c = fluctuation_covariance(k0, &f, &g, 1.0, 1.0, 0.0, &pts).unwrap();
        let kv: Vec<f64> = g.nodes().iter().map(|&x| k0(x)).collect();
        let p0 = solve_exact_nodal(&kv, &f, &g).unwrap();
        let q = GreensKernel::from_nodal(&kv, &g).unwrap();
        for (j, &xj) in pts.iter().enumerate() {
            for (l, &xl) in pts.iter().enumerate() {
                let vals: Vec<f64> = g
                    .nodes()
                    .iter()
                    .zip(&p0.v)
                    .map(|(&y, v)| q.eval(xj, y) * v * v * q.eval(xl, y))
                    .collect();
                let direct = crate::grid::trapezoid(&vals, g.spacing());
                assert_abs_diff_eq!(c.matrix[(j, l)], direct, epsilon = 2e-3 * direct.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn symmetric_points_have_equal_variance() {
        let f = SourceTerm::constant(1.0);
        let c = fluctuation_covariance(|x: f64| 1.0 + 0.5 * x * x, &f, &quad(), 0.02, 0.5, 1e-3, &[-0.4, 0.4]).unwrap();
        assert_abs_diff_eq!(c.matrix[(0, 0)], c.matrix[(1, 1)], epsilon = 1e-12);
        assert_eq!(c.factorize().unwrap().jitter_level, 0);
    }

    #[test]
    fn singular_covariance_gets_jitter_or_fails() {
        let f = SourceTerm::constant(1.0);
        let c = fluctuation_covariance(|_| 1.0, &f, &quad(), 0.01, 0.5, 0.0, &[0.2, 0.2]).unwrap();
        let fac = c.factorize().unwrap();
        assert!(fac.jitter_level <= 1);
        let zero = fluctuation_covariance(|_| 1.0, &f, &quad(), 0.0, 0.5, 0.0, &[0.2]).unwrap();
        assert!(matches!(zero.factorize(), Err(Error::Covariance(_))));
    }

    fn linear_problem(use_model_error: bool, eps: f64) -> MapProblem {
        MapProblem {
            points: vec![-0.5, 0.0, 0.5],
            y: vec![0.3, 0.4, 0.35],
            gamma: 0.05,
            prior_mean: vec![0.1],
            prior_sd: vec![0.7],
            use_model_error,
            sigma: 0.5,
            eps,
            source: SourceTerm::constant(1.0),
            quad: Grid1D::new(-1.0, 1.0, 1025).unwrap(),
        }
    }

    #[test]
    fn noise_only_objective_is_hand_assembled_gaussian() {
        let p = linear_problem(false, 0.0);
        let theta = [0.2];
        // p₀ = exp(-θ₀)(1 - x²)/2 in closed form
        let g: Vec<f64> = p.points.iter().map(|x| (-0.2f64).exp() * (1.0 - x * x) / 2.0).collect();
        let rss: f64 = p.y.iter().zip(&g).map(|(y, g)| (y - g).powi(2)).sum();
        let expected = 1.5 * (0.05f64 * 0.05).ln() + 0.5 * rss / 0.0025 + 0.5 * ((0.2 - 0.1) / 0.7f64).powi(2);
        assert_abs_diff_eq!(neg_log_posterior(&p, &theta).unwrap(), expected, epsilon = 1e-10);
        let with = linear_problem(true, 0.0);
        assert_abs_diff_eq!(neg_log_posterior(&with, &theta).unwrap(), expected, epsilon = 1e-10);
    }

    #[test]
    fn noise_free_data_recovers_truth() {
        let truth = [0.3, 0.4, -0.2];
        let quad = Grid1D::new(-1.0, 1.0, 1025).unwrap();
        let src = SourceTerm::constant(1.0);
        let points = observation_points(32);
        let kv: Vec<f64> = quad.nodes().iter().map(|&x| fourier_log(&truth, x).exp()).collect();
        let p0 = solve_exact_nodal(&kv, &src, &quad).unwrap();
        let y: Vec<f64> = points.iter().map(|&x| p0.value_at(x)).collect();
        let prior_mean = crude_prior_mean(&points, &y, &src, &quad, 3).unwrap();
        let p = MapProblem {
            points,
            y,
            gamma: 1e-3,
            prior_mean,
            prior_sd: vec![1.0; 3],
            use_model_error: true,
            sigma: 0.0,
            eps: 1.0 / 64.0,
            source: src,
            quad,
        };
        let e1 = map_estimate(&p, NelderMeadOptions::default()).unwrap();
        for (a, b) in e1.theta.iter().zip(&truth) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-4);
        }
        let mut q = p.clone();
        q.use_model_error = false;
        let e2 = map_estimate(&q, NelderMeadOptions::default()).unwrap();
        for (a, b) in e1.theta.iter().zip(&e2.theta) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-7);
        }
    }

    #[test]
    fn vacuous_data_returns_prior_mean() {
        let mut p = linear_problem(false, 0.0);
        p.gamma = 1e6;
        let e = map_estimate(&p, NelderMeadOptions::default()).unwrap();
        assert_abs_diff_eq!(e.theta[0], 0.1, epsilon = 1e-6);
    }
}
