//! Least-squares misfits, regularized estimation, the scalar large-data
//! estimator and finite-dimensional posterior diagnostics.
//!
//! The scalar estimator targets models of the form `G(u) = exp(-u) ℓ(p*)`
//! where `p*` solves the reference problem with `k ≡ 1`: the misfit is then
//! quadratic in `exp(-u)` and minimized in closed form by
//! `exp(-ū) = Σ y_j ℓ_j(p*) / Σ ℓ_j(p*)²`.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::elliptic::{fmt_f64, solve_exact, solve_two_scale, Functional, ObservationSet, PressureSolution, SourceTerm};
use crate::error::{ensure, Error, Result};
use crate::fields::{prior_log_density, CoefficientField, GaussianPrior};
use crate::grid::{max_abs, trapezoid, Grid1D};
use crate::homogenization::harmonic_homogenize;
use crate::optimize::{minimize_on_interval, minimize_with_restarts, IntervalMinimum, NelderMeadOptions};
use crate::rng::{stream, Purpose};
use crate::stats::{loglog_slope, mean, slope_through_origin, std_error};

type ForwardFn = Arc<dyn Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync>;

/// `½ Σ (y_j - g_j)² / Γ_jj`.
pub fn weighted_misfit(y: &[f64], predicted: &[f64], gamma_diag: &[f64]) -> Result<f64> {
    ensure(y.len() == predicted.len() && y.len() == gamma_diag.len(), || {
        format!("misfit dimensions differ: {} data, {} predictions, {} variances", y.len(), predicted.len(), gamma_diag.len())
    })?;
    let mut acc = 0.0;
    for ((yj, gj), v) in y.iter().zip(predicted).zip(gamma_diag) {
        if !(*v > 0.0) {
            return Err(Error::Covariance(format!("noise variance must be positive, got {v}")));
        }
        acc += 0.5 * (yj - gj).powi(2) / v;
    }
    Ok(acc)
}

/// Forward map `θ ↦ G(θ)` together with the diagonal noise covariance.
#[derive(Clone)]
pub struct MisfitSpec {
    forward: ForwardFn,
    pub gamma_diag: Vec<f64>,
}

impl std::fmt::Debug for MisfitSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MisfitSpec").field("gamma_diag", &self.gamma_diag).finish()
    }
}

impl MisfitSpec {
    pub fn new<G>(forward: G, gamma_diag: Vec<f64>) -> Result<Self>
    where
        G: Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync + 'static,
    {
        if let Some(v) = gamma_diag.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::Covariance(format!("noise variance must be positive, got {v}")));
        }
        Ok(Self {
            forward: Arc::new(forward),
            gamma_diag,
        })
    }

    pub fn forward(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let g = (self.forward)(theta)?;
        ensure(g.len() == self.gamma_diag.len(), || {
            format!("forward map returned {} values for {} data", g.len(), self.gamma_diag.len())
        })?;
        Ok(g)
    }
}

pub fn misfit(spec: &MisfitSpec, y: &[f64], theta: &[f64]) -> Result<f64> {
    weighted_misfit(y, &spec.forward(theta)?, &spec.gamma_diag)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarEstimate {
    /// `Σ y_j ℓ_j(p*) / Σ ℓ_j(p*)²`, the estimate of `exp(-u)`.
    pub ratio: f64,
    /// `-ln(ratio)`, NaN when the ratio is not positive.
    pub u_bar: f64,
    pub sign_failure: bool,
}

pub fn scalar_estimate_from(y: &[f64], lstar: &[f64]) -> Result<ScalarEstimate> {
    ensure(y.len() == lstar.len(), || format!("{} data for {} reference responses", y.len(), lstar.len()))?;
    let denom: f64 = lstar.iter().map(|l| l * l).sum();
    if !(denom > 0.0) {
        return Err(Error::DegenerateFunctionals(denom));
    }
    let ratio = y.iter().zip(lstar).map(|(y, l)| y * l).sum::<f64>() / denom;
    let sign_failure = !(ratio > 0.0);
    Ok(ScalarEstimate {
        ratio,
        u_bar: if sign_failure { f64::NAN } else { -ratio.ln() },
        sign_failure,
    })
}

pub fn scalar_estimate(obs: &ObservationSet, lstar: &[f64]) -> Result<ScalarEstimate> {
    scalar_estimate_from(&obs.y, lstar)
}

/// Solver grid for the unit-interval experiments.
pub const REFERENCE_NODES: usize = 4097;

/// `p*` for `k ≡ 1`, `f ≡ 1` on `[0, 1]`.
pub fn reference_pressure(grid: &Grid1D) -> Result<PressureSolution> {
    solve_exact(|_| 1.0, &SourceTerm::constant(1.0), grid)
}

/// `x_j = j/(N + 1)`, `j = 1..N`.
pub fn uniform_points(n: usize) -> Vec<f64> {
    (1..=n).map(|j| j as f64 / (n + 1) as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyRow {
    pub n: usize,
    /// `None` for the single-scale experiment.
    pub eps: Option<f64>,
    pub mean_err: f64,
    pub stderr: f64,
    pub flag_rate: f64,
    /// `(1/N) Σ ℓ_j(p*)²`, monitored for the liminf condition.
    pub mean_sq_response: f64,
    /// Cauchy–Schwarz bound `‖pᵉ - p₀‖_∞ √(N / Σℓ²)` on the noise-free error,
    /// where applicable.
    pub bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyTable {
    pub rows: Vec<ConsistencyRow>,
    /// Log-log slope of the mean error against `N` (per `ε` block for the
    /// multiscale experiment, in order of first appearance).
    pub slopes: Vec<f64>,
}

impl ConsistencyTable {
    /// `N,eps,mean_err,stderr,flag_rate`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["N", "eps", "mean_err", "stderr", "flag_rate"])?;
        for r in &self.rows {
            out.write_record([
                r.n.to_string(),
                r.eps.map(fmt_f64).unwrap_or_default(),
                fmt_f64(r.mean_err),
                fmt_f64(r.stderr),
                fmt_f64(r.flag_rate),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn rows_at(&self, eps: f64) -> Vec<ConsistencyRow> {
        self.rows.iter().filter(|r| r.eps == Some(eps)).copied().collect()
    }
}

/// Replicated noisy estimation from `clean` responses; returns the error
/// sample of `|exp(-ū) - target|` and the number of sign failures.
fn replicate_errors(clean: &[f64], lstar: &[f64], target: f64, gamma: f64, replicates: usize, seed: u64, block: u64) -> Result<(Vec<f64>, usize)> {
    let results = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, Purpose::ObservationNoise, (block << 32) | r);
            let y: Vec<f64> = clean
                .iter()
                .map(|c| {
                    let xi: f64 = rng.sample(StandardNormal);
                    c + gamma * xi
                })
                .collect();
            scalar_estimate_from(&y, lstar)
        })
        .collect::<Result<Vec<_>>>()?;
    let failures = results.iter().filter(|e| e.sign_failure).count();
    Ok((results.iter().map(|e| (e.ratio - target).abs()).collect(), failures))
}

fn summarize(errors: &[f64]) -> (f64, f64) {
    let m = mean(errors);
    let se = if errors.len() > 1 { std_error(errors) } else { 0.0 };
    (m, se)
}

/// Single-scale consistency: data `exp(-u₀) ℓ_j(p*) + γ ξ_j` at uniform
/// point evaluations.
pub fn consistency_experiment(u0: f64, n_list: &[usize], gamma: f64, replicates: usize, seed: u64) -> Result<ConsistencyTable> {
    ensure(replicates >= 1 && !n_list.is_empty(), || "need replicates and at least one N".to_string())?;
    let grid = Grid1D::new(0.0, 1.0, REFERENCE_NODES)?;
    let pstar = reference_pressure(&grid)?;
    let target = (-u0).exp();
    let mut rows = Vec::with_capacity(n_list.len());
    for (block, &n) in n_list.iter().enumerate() {
        let lstar: Vec<f64> = uniform_points(n).iter().map(|&x| pstar.value_at(x)).collect();
        let msr = lstar.iter().map(|l| l * l).sum::<f64>() / n as f64;
        if !(msr > 0.0) {
            return Err(Error::DegenerateFunctionals(msr));
        }
        let clean: Vec<f64> = lstar.iter().map(|l| target * l).collect();
        let (errors, failures) = replicate_errors(&clean, &lstar, target, gamma, replicates, seed, block as u64)?;
        let (m, se) = summarize(&errors);
        rows.push(ConsistencyRow {
            n,
            eps: None,
            mean_err: m,
            stderr: se,
            flag_rate: failures as f64 / replicates as f64,
            mean_sq_response: msr,
            bound: None,
        });
    }
    let ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let errs: Vec<f64> = rows.iter().map(|r| r.mean_err).collect();
    Ok(ConsistencyTable {
        slopes: vec![loglog_slope(&ns, &errs)],
        rows,
    })
}

/// Observation functionals for the multiscale experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FunctionalFamily {
    /// Point evaluations at `j/(N + 1)`.
    PointEval,
    /// Difference quotients of scale `h = ratio · ε` at points snapped to the
    /// cell lattice `ε ℤ`, so every quotient sees the same microstructure
    /// phase.
    DifferenceQuotient { ratio: f64 },
}

impl FunctionalFamily {
    pub fn functionals(&self, n: usize, eps: f64) -> Vec<Functional> {
        match *self {
            FunctionalFamily::PointEval => uniform_points(n).into_iter().map(|x| Functional::PointEval { x }).collect(),
            FunctionalFamily::DifferenceQuotient { ratio } => {
                let h = ratio * eps;
                let cells = (1.0 / eps).round();
                uniform_points(n)
                    .into_iter()
                    .map(|x| {
                        let j = (x / eps).round().clamp(1.0, cells - 1.0 - h.ceil().max(1.0).min(cells - 2.0));
                        Functional::DifferenceQuotient { x: j * eps, h }
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct MultiscaleConfig {
    pub u0: f64,
    pub n_list: Vec<usize>,
    pub eps_list: Vec<f64>,
    pub gamma: f64,
    pub replicates: usize,
    pub seed: u64,
    pub family: FunctionalFamily,
}

/// `κ` rescaled so that its harmonic mean is `exp(u₀)`.
pub fn calibrated_field(cell: &CoefficientField, u0: f64) -> Result<CoefficientField> {
    let k0 = harmonic_homogenize(cell, cell.domain().0);
    cell.scaled(u0.exp() / k0)
}

/// Data from the multiscale model `k(x/ε)` with homogenized coefficient
/// `exp(u₀)`, estimated with the homogenized scalar model.
pub fn multiscale_consistency_experiment(cell: &CoefficientField, config: &MultiscaleConfig) -> Result<ConsistencyTable> {
    ensure(cell.domain() == (0.0, 1.0), || "multiscale experiment runs on [0, 1]".to_string())?;
    ensure(config.replicates >= 1, || "need at least one replicate".to_string())?;
    let field = calibrated_field(cell, config.u0)?;
    let target = (-config.u0).exp();
    let source = SourceTerm::constant(1.0);
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for (ei, &eps) in config.eps_list.iter().enumerate() {
        let grid = Grid1D::resolving(0.0, 1.0, eps, 4 * crate::elliptic::NODES_PER_PERIOD)?;
        let sol = solve_two_scale(&field, eps, &source, &grid)?;
        let pstar = reference_pressure(&grid)?;
        let gap: Vec<f64> = sol.p.iter().zip(&pstar.p).map(|(a, b)| a - target * b).collect();
        let sup_gap = max_abs(&gap);
        let mut block_rows = Vec::new();
        for (ni, &n) in config.n_list.iter().enumerate() {
            let functionals = config.family.functionals(n, eps);
            let lstar = functionals
                .iter()
                .map(|l| l.apply_nodal(&grid, &pstar.p))
                .collect::<Result<Vec<_>>>()?;
            let clean = functionals
                .iter()
                .map(|l| l.apply_nodal(&grid, &sol.p))
                .collect::<Result<Vec<_>>>()?;
            let sum_sq: f64 = lstar.iter().map(|l| l * l).sum();
            if !(sum_sq > 0.0) {
                return Err(Error::DegenerateFunctionals(sum_sq));
            }
            let block = ((ei as u64) << 16) | ni as u64;
            let (errors, failures) = replicate_errors(&clean, &lstar, target, config.gamma, config.replicates, config.seed, block)?;
            let (m, se) = summarize(&errors);
            let bound = match config.family {
                FunctionalFamily::PointEval => Some(sup_gap * (n as f64 / sum_sq).sqrt()),
                FunctionalFamily::DifferenceQuotient { .. } => None,
            };
            block_rows.push(ConsistencyRow {
                n,
                eps: Some(eps),
                mean_err: m,
                stderr: se,
                flag_rate: failures as f64 / config.replicates as f64,
                mean_sq_response: sum_sq / n as f64,
                bound,
            });
        }
        let ns: Vec<f64> = block_rows.iter().map(|r| r.n as f64).collect();
        let errs: Vec<f64> = block_rows.iter().map(|r| r.mean_err).collect();
        slopes.push(loglog_slope(&ns, &errs));
        rows.extend(block_rows);
    }
    Ok(ConsistencyTable { rows, slopes })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundedSpec {
    pub alpha_bound: f64,
}

/// Global minimizer of a scalar misfit over `[-α, α]`; a constant misfit
/// returns the midpoint `0`.
pub fn bounded_solve<F>(phi: F, spec: BoundedSpec) -> Result<IntervalMinimum>
where
    F: FnMut(f64) -> f64,
{
    ensure(spec.alpha_bound > 0.0, || format!("bound must be positive, got {}", spec.alpha_bound))?;
    Ok(minimize_on_interval(phi, -spec.alpha_bound, spec.alpha_bound, 64, 1e-10))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TikhonovSpec {
    pub lambda: f64,
    pub e_norm_weights: Vec<f64>,
}

impl TikhonovSpec {
    pub fn penalty(&self, theta: &[f64]) -> f64 {
        0.5 * self.lambda * self.e_norm_weights.iter().zip(theta).map(|(w, t)| w * t * t).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TikhonovResult {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub evals: usize,
    pub converged: bool,
}

pub const MAX_OPT_DIM: usize = 8;

/// Restart points: the centre and `±s` along the diagonal.
pub fn restart_points(center: &[f64], spread: &[f64]) -> Vec<Vec<f64>> {
    let plus = center.iter().zip(spread).map(|(c, s)| c + s).collect();
    let minus = center.iter().zip(spread).map(|(c, s)| c - s).collect();
    vec![center.to_vec(), plus, minus]
}

/// Minimizes `(λ/2) Σ w_m θ_m² + Φ(θ)` by Nelder–Mead with three starts.
pub fn tikhonov_solve<F>(phi: F, spec: &TikhonovSpec, theta0: &[f64], opts: NelderMeadOptions) -> Result<TikhonovResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = theta0.len();
    ensure((1..=MAX_OPT_DIM).contains(&d), || format!("parameter dimension {d} outside 1..={MAX_OPT_DIM}"))?;
    ensure(spec.e_norm_weights.len() == d, || "penalty weights do not match parameter dimension".to_string())?;
    ensure(spec.lambda >= 0.0 && spec.e_norm_weights.iter().all(|w| *w > 0.0), || {
        "need lambda >= 0 and positive penalty weights".to_string()
    })?;
    let spread: Vec<f64> = spec
        .e_norm_weights
        .iter()
        .map(|w| {
            let prec = spec.lambda * w;
            if prec > 0.0 {
                (1.0 / prec.sqrt()).min(1.0)
            } else {
                1.0
            }
        })
        .collect();
    let objective = |t: &[f64]| spec.penalty(t) + phi(t);
    let step: Vec<f64> = spread.iter().map(|s| 0.5 * s).collect();
    let r = minimize_with_restarts(objective, &restart_points(theta0, &spread), &step, opts);
    Ok(TikhonovResult {
        theta: r.best.x.clone(),
        objective: r.best.fx,
        evals: r.total_evals,
        converged: r.best.converged,
    })
}

/// `-Φ(θ) + log π₀(θ)`, unnormalized.
pub fn posterior_log_density(prior: &GaussianPrior, phi_value: f64, theta: &[f64]) -> Result<f64> {
    Ok(prior_log_density(prior, theta)? - phi_value)
}

/// Normalized densities on a quadrature grid, with the coverage check.
fn normalized_sqrt_density(log_values: &[f64], boundary: &[usize], cell: f64, volume: f64) -> Result<Vec<f64>> {
    let max = log_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    ensure(max.is_finite(), || "log density is not finite anywhere on the grid".to_string())?;
    let dens: Vec<f64> = log_values.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = dens.iter().sum::<f64>() * cell;
    let tail = boundary.iter().map(|&i| dens[i] / z).fold(0.0, f64::max) * volume;
    if tail > 1e-8 {
        return Err(Error::Coverage { tail });
    }
    Ok(dens.iter().map(|d| (d / z).sqrt()).collect())
}

/// Trapezoid weights of a 1D grid (interior 1, ends ½).
fn trapezoid_weights(n: usize) -> Vec<f64> {
    let mut w = vec![1.0; n];
    w[0] = 0.5;
    w[n - 1] = 0.5;
    w
}

fn hellinger_from_values(l1: &[f64], l2: &[f64], weights: &[f64], boundary: &[usize], cell: f64, volume: f64) -> Result<f64> {
    // Normalize with the trapezoid weights folded in.
    let weighted = |l: &[f64]| -> Vec<f64> { l.iter().zip(weights).map(|(v, w)| v + w.ln()).collect() };
    let s1 = normalized_sqrt_density(&weighted(l1), boundary, cell, volume)?;
    let s2 = normalized_sqrt_density(&weighted(l2), boundary, cell, volume)?;
    let d2 = 0.5 * s1.iter().zip(&s2).map(|(a, b)| (a - b).powi(2)).sum::<f64>() * cell;
    Ok(d2.clamp(0.0, 1.0).sqrt())
}

/// Hellinger distance between two unnormalized scalar densities.
pub fn hellinger_distance<F, G>(logdens1: F, logdens2: G, grid: &Grid1D) -> Result<f64>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    let nodes = grid.nodes();
    let l1: Vec<f64> = nodes.iter().map(|&t| logdens1(t)).collect();
    let l2: Vec<f64> = nodes.iter().map(|&t| logdens2(t)).collect();
    let n = nodes.len();
    hellinger_from_values(&l1, &l2, &trapezoid_weights(n), &[0, n - 1], grid.spacing(), grid.length())
}

/// Hellinger distance between two unnormalized densities on a tensor grid.
pub fn hellinger_distance_2d<F, G>(logdens1: F, logdens2: G, g1: &Grid1D, g2: &Grid1D) -> Result<f64>
where
    F: Fn(f64, f64) -> f64,
    G: Fn(f64, f64) -> f64,
{
    let (x1, x2) = (g1.nodes(), g2.nodes());
    let (n1, n2) = (x1.len(), x2.len());
    let (w1, w2) = (trapezoid_weights(n1), trapezoid_weights(n2));
    let mut l1 = Vec::with_capacity(n1 * n2);
    let mut l2 = Vec::with_capacity(n1 * n2);
    let mut weights = Vec::with_capacity(n1 * n2);
    let mut boundary = Vec::new();
    for (i, &a) in x1.iter().enumerate() {
        for (j, &b) in x2.iter().enumerate() {
            if i == 0 || j == 0 || i == n1 - 1 || j == n2 - 1 {
                boundary.push(l1.len());
            }
            l1.push(logdens1(a, b));
            l2.push(logdens2(a, b));
            weights.push(w1[i] * w2[j]);
        }
    }
    hellinger_from_values(&l1, &l2, &weights, &boundary, g1.spacing() * g2.spacing(), g1.length() * g2.length())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityFit {
    pub perturbations: Vec<f64>,
    pub distances: Vec<f64>,
    /// Slope through the origin on the full perturbation range.
    pub lipschitz: f64,
    /// The same fit restricted to the lower half of the range.
    pub lipschitz_half: f64,
}

impl StabilityFit {
    pub fn is_stable(&self) -> bool {
        let r = self.lipschitz / self.lipschitz_half;
        r.is_finite() && (0.5..=2.0).contains(&r)
    }
}

/// Hellinger distances from the unperturbed posterior to posteriors built
/// from perturbed data, with the local Lipschitz constant fitted on the full
/// and halved perturbation ranges.
pub fn hellinger_stability<B, L>(build: B, perturbations: &[f64], grid: &Grid1D) -> Result<StabilityFit>
where
    B: Fn(f64) -> L,
    L: Fn(f64) -> f64,
{
    ensure(perturbations.len() >= 2, || "need at least two perturbation sizes".to_string())?;
    let base = build(0.0);
    let distances = perturbations
        .iter()
        .map(|&d| hellinger_distance(&base, build(d), grid))
        .collect::<Result<Vec<_>>>()?;
    let range = perturbations.iter().cloned().fold(0.0, f64::max);
    let (hx, hy): (Vec<f64>, Vec<f64>) = perturbations
        .iter()
        .zip(&distances)
        .filter(|(p, _)| **p <= 0.5 * range * (1.0 + 1e-12))
        .map(|(p, d)| (*p, *d))
        .unzip();
    ensure(!hx.is_empty(), || "no perturbations in the lower half of the range".to_string())?;
    Ok(StabilityFit {
        lipschitz: slope_through_origin(perturbations, &distances),
        lipschitz_half: slope_through_origin(&hx, &hy),
        perturbations: perturbations.to_vec(),
        distances,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallBallRow {
    pub delta: f64,
    /// Estimate of `J^δ(z₁)/J^δ(z₂)`.
    pub ratio: f64,
    pub stderr: f64,
    pub hits1: usize,
    pub hits2: usize,
    /// Zero hits in either ball.
    pub inconclusive: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmallBallReport {
    pub rows: Vec<SmallBallRow>,
    /// `exp(I(z₂) - I(z₁))` with `I = Φ - log π₀`.
    pub companion: f64,
}

impl SmallBallReport {
    /// `delta,ratio,stderr,hits1,hits2,inconclusive,companion`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["delta", "ratio", "stderr", "hits1", "hits2", "inconclusive", "companion"])?;
        for r in &self.rows {
            out.write_record([
                fmt_f64(r.delta),
                fmt_f64(r.ratio),
                fmt_f64(r.stderr),
                r.hits1.to_string(),
                r.hits2.to_string(),
                r.inconclusive.to_string(),
                fmt_f64(self.companion),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn in_ball(theta: &[f64], z: &[f64], delta: f64) -> bool {
    theta.iter().zip(z).all(|(t, c)| (t - c).abs() <= delta)
}

/// Posterior small-ball probability ratios by importance sampling from the
/// prior with weights `exp(-Φ)`; sup-norm balls on the truncation.
pub fn small_ball_ratio<P>(prior: &GaussianPrior, phi: P, z1: &[f64], z2: &[f64], deltas: &[f64], samples: usize, seed: u64) -> Result<SmallBallReport>
where
    P: Fn(&[f64]) -> f64 + Sync,
{
    let d = prior.dim();
    ensure(z1.len() == d && z2.len() == d, || "ball centres must match the prior dimension".to_string())?;
    ensure(samples >= 2, || "need at least two samples".to_string())?;
    let i1 = phi(z1) - prior_log_density(prior, z1)?;
    let i2 = phi(z2) - prior_log_density(prior, z2)?;
    const CHUNK: usize = 1 << 14;
    let chunks = samples.div_ceil(CHUNK);
    let k = deltas.len();
    // Per delta: Σa, Σb, Σa², Σb², Σab, hits1, hits2 with a = w·1₁, b = w·1₂.
    let partial: Vec<Vec<[f64; 7]>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, Purpose::Importance, c as u64);
            let mut acc = vec![[0.0; 7]; k];
            let count = CHUNK.min(samples - c * CHUNK);
            for _ in 0..count {
                let theta = prior.sample_coefficients(&mut rng);
                let near = deltas.iter().any(|&dl| in_ball(&theta, z1, dl) || in_ball(&theta, z2, dl));
                if !near {
                    continue;
                }
                let w = (-phi(&theta)).exp();
                for (a, &dl) in acc.iter_mut().zip(deltas) {
                    let a1 = if in_ball(&theta, z1, dl) { w } else { 0.0 };
                    let b1 = if in_ball(&theta, z2, dl) { w } else { 0.0 };
                    a[0] += a1;
                    a[1] += b1;
                    a[2] += a1 * a1;
                    a[3] += b1 * b1;
                    a[4] += a1 * b1;
                    a[5] += (a1 > 0.0) as u8 as f64;
                    a[6] += (b1 > 0.0) as u8 as f64;
                }
            }
            acc
        })
        .collect();
    let n = samples as f64;
    let rows = deltas
        .iter()
        .enumerate()
        .map(|(j, &delta)| {
            let mut s = [0.0; 7];
            for p in &partial {
                for (t, v) in s.iter_mut().zip(p[j]) {
                    *t += v;
                }
            }
            let (ma, mb) = (s[0] / n, s[1] / n);
            let va = s[2] / n - ma * ma;
            let vb = s[3] / n - mb * mb;
            let cab = s[4] / n - ma * mb;
            let (hits1, hits2) = (s[5] as usize, s[6] as usize);
            let inconclusive = hits1 == 0 || hits2 == 0;
            let ratio = if inconclusive { f64::NAN } else { ma / mb };
            let rel = va / (ma * ma) + vb / (mb * mb) - 2.0 * cab / (ma * mb);
            SmallBallRow {
                delta,
                ratio,
                stderr: if inconclusive { f64::NAN } else { ratio.abs() * (rel.max(0.0) / n).sqrt() },
                hits1,
                hits2,
                inconclusive,
            }
        })
        .collect();
    Ok(SmallBallReport {
        rows,
        companion: (i2 - i1).exp(),
    })
}

/// `theta,logdens` rows for a scalar density on a grid.
pub fn write_density_csv<W: Write, F: Fn(f64) -> f64>(logdens: F, grid: &Grid1D, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["theta", "logdens"])?;
    for t in grid.nodes() {
        out.write_record([fmt_f64(t), fmt_f64(logdens(t))])?;
    }
    out.flush()?;
    Ok(())
}

/// Unnormalized posterior mass on a grid, for closed-form comparisons.
pub fn normalizer<F: Fn(f64) -> f64>(logdens: F, grid: &Grid1D) -> f64 {
    let v: Vec<f64> = grid.nodes().iter().map(|&t| logdens(t).exp()).collect();
    trapezoid(&v, grid.spacing())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn misfit_examples() {
        assert_eq!(weighted_misfit(&[1.0], &[1.0], &[1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(weighted_misfit(&[3.0], &[1.0], &[4.0]).unwrap(), 0.5);
        let a = weighted_misfit(&[1.0, 2.0], &[0.0, 0.5], &[1.0, 2.0]).unwrap();
        let b = weighted_misfit(&[1.0, 2.0], &[0.0, 0.5], &[2.0, 4.0]).unwrap();
        assert_abs_diff_eq!(b, 0.5 * a, epsilon = 1e-15);
        assert!(matches!(weighted_misfit(&[1.0], &[0.0], &[0.0]), Err(Error::Covariance(_))));
        let spec = MisfitSpec::new(|t: &[f64]| Ok(vec![t[0], 2.0 * t[0]]), vec![1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(misfit(&spec, &[1.0, 2.0], &[1.0]).unwrap(), 0.0);
    }

    #[test]
    fn scalar_estimator_examples() {
        let lstar = [0.09375, 0.125, 0.09375];
        let y: Vec<f64> = lstar.iter().map(|l| 0.5 * l).collect();
        let e = scalar_estimate_from(&y, &lstar).unwrap();
        assert_abs_diff_eq!(e.ratio, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(e.u_bar, 2f64.ln(), epsilon = 1e-15);
        let zero = scalar_estimate_from(&[0.0; 3], &lstar).unwrap();
        assert!(zero.sign_failure && zero.u_bar.is_nan());
        assert!(matches!(scalar_estimate_from(&[1.0], &[0.0]), Err(Error::DegenerateFunctionals(_))));
    }

    #[test]
    fn reference_responses_match_closed_form() {
        let g = Grid1D::new(0.0, 1.0, REFERENCE_NODES).unwrap();
        let p = reference_pressure(&g).unwrap();
        for &(x, v) in &[(0.25, 0.09375), (0.5, 0.125), (0.75, 0.09375)] {
            assert_abs_diff_eq!(p.value_at(x), v, epsilon = 1e-12);
        }
    }

    #[test]
    fn noise_free_consistency_is_exact() {
        let t = consistency_experiment(2f64.ln(), &[16, 64], 0.0, 3, 1).unwrap();
        for r in &t.rows {
            assert!(r.mean_err < 1e-14);
        }
    }

    #[test]
    fn bounded_solve_cases() {
        let lstar = [0.09375, 0.125, 0.09375];
        let y: Vec<f64> = lstar.iter().map(|l| 0.5 * l).collect();
        let phi = |u: f64| {
            let g: Vec<f64> = lstar.iter().map(|l| (-u).exp() * l).collect();
            weighted_misfit(&y, &g, &[1e-4; 3]).unwrap()
        };
        let m = bounded_solve(phi, BoundedSpec { alpha_bound: 2.0 }).unwrap();
        assert_abs_diff_eq!(m.x, 2f64.ln(), epsilon = 1e-8);
        let m = bounded_solve(phi, BoundedSpec { alpha_bound: 0.5 }).unwrap();
        assert_eq!(m.x, 0.5);
        let m = bounded_solve(|_| 1.0, BoundedSpec { alpha_bound: 0.5 }).unwrap();
        assert_eq!(m.x, 0.0);
    }

    #[test]
    fn tikhonov_ridge_closed_form_and_penalty_domination() {
        let t = [1.0, -2.0];
        let phi = |x: &[f64]| 0.5 * ((x[0] - t[0]).powi(2) + (x[1] - t[1]).powi(2));
        let spec = TikhonovSpec {
            lambda: 3.0,
            e_norm_weights: vec![1.0, 0.5],
        };
        let r = tikhonov_solve(phi, &spec, &[0.0, 0.0], NelderMeadOptions::default()).unwrap();
        assert!(r.converged);
        assert_abs_diff_eq!(r.theta[0], 1.0 / 4.0, epsilon = 1e-7);
        assert_abs_diff_eq!(r.theta[1], -2.0 / 2.5, epsilon = 1e-7);
        let big = TikhonovSpec {
            lambda: 1e6,
            e_norm_weights: vec![1.0, 1.0],
        };
        let r = tikhonov_solve(phi, &big, &[0.0, 0.0], NelderMeadOptions::default()).unwrap();
        assert!(r.theta.iter().map(|v| v.abs()).fold(0.0, f64::max) <= 3.0 / 1e6);
    }

    #[test]
    fn hellinger_gaussian_closed_form() {
        let g = Grid1D::new(-12.0, 13.0, 20_001).unwrap();
        let d = hellinger_distance(|t| -0.5 * t * t, |t| -0.5 * (t - 1.0).powi(2), &g).unwrap();
        assert_abs_diff_eq!(d, (1.0 - (-1.0f64 / 8.0).exp()).sqrt(), epsilon = 1e-9);
        assert_eq!(hellinger_distance(|t| -t * t, |t| -t * t, &g).unwrap(), 0.0);
        let narrow = Grid1D::new(-3.0, 3.0, 601).unwrap();
        assert!(matches!(
            hellinger_distance(|t| -0.5 * t * t, |t| -0.5 * t * t, &narrow),
            Err(Error::Coverage { .. })
        ));
        let g2 = Grid1D::new(-9.0, 10.0, 401).unwrap();
        let d2 = hellinger_distance_2d(
            |a, b| -0.5 * (a * a + b * b),
            |a, b| -0.5 * ((a - 1.0).powi(2) + b * b),
            &g2,
            &g2,
        )
        .unwrap();
        assert_abs_diff_eq!(d2, d, epsilon = 1e-8);
    }

    #[test]
    fn small_ball_degenerate_cases() {
        let prior = GaussianPrior::new((0.0, 1.0), vec![1.0], 1.0).unwrap();
        let phi = |t: &[f64]| 0.5 * (t[0] - 1.0).powi(2) / 0.25;
        let r = small_ball_ratio(&prior, phi, &[0.3], &[0.3], &[0.05, 100.0], 20_000, 3).unwrap();
        assert_eq!(r.rows[0].ratio, 1.0);
        assert_abs_diff_eq!(r.companion, 1.0);
        let r = small_ball_ratio(&prior, phi, &[0.8], &[0.1], &[100.0], 20_000, 3).unwrap();
        assert_abs_diff_eq!(r.rows[0].ratio, 1.0, epsilon = 1e-12);
        let r = small_ball_ratio(&prior, phi, &[0.8], &[40.0], &[1e-3], 1000, 3).unwrap();
        assert!(r.rows[0].inconclusive);
    }
}
