//! Particle transport on the torus `[0, L)`.
//!
//! The Darcy velocity `v = -k p'` of the periodic problem `-(k p')' = f` is
//! `F - c` with `c` chosen so that `p` closes periodically. Particles follow
//! `dx = v(x)/φ dt + √(2 η₀ ε) dW` in the multiscale velocity and are compared
//! pathwise with the homogenized flow `dx/dt = v₀(x)/φ`. This is the one
//! dimensional instance only.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::elliptic::{fmt_f64, SourceTerm};
use crate::error::{ensure, Error, Result};
use crate::fields::CoefficientField;
use crate::grid::{max_abs, trapezoid, Grid1D};
use crate::homogenization::harmonic_homogenize;
use crate::rng::{stream, Purpose};
use crate::stats::{mean, std_error};

pub const DT_SAFETY: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportConfig {
    pub phi: f64,
    pub eta0: f64,
    pub t_end: f64,
    /// Requested step; studies use `min(dt, DT_SAFETY·ε²)`.
    pub dt: f64,
    pub x_init: f64,
    pub eps: f64,
    pub period: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl TransportConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.phi > 0.0, || format!("porosity must be positive, got {}", self.phi))?;
        ensure(self.eta0 >= 0.0, || format!("diffusivity must be >= 0, got {}", self.eta0))?;
        ensure(self.t_end > 0.0 && self.dt > 0.0, || "horizon and step must be positive".to_string())?;
        ensure(self.eps > 0.0 && self.period > 0.0, || "scale and period must be positive".to_string())?;
        ensure(self.replicates >= 1, || "need at least one replicate".to_string())?;
        ensure(self.dt <= DT_SAFETY * self.eps * self.eps * (1.0 + 1e-12), || {
            format!("step {} exceeds {DT_SAFETY}·ε² = {}", self.dt, DT_SAFETY * self.eps * self.eps)
        })
    }

    /// Number of steps and the uniform step that lands exactly on `t_end`.
    pub fn steps(&self) -> (usize, f64) {
        let n = (self.t_end / self.dt - 1e-9).ceil().max(1.0) as usize;
        (n, self.t_end / n as f64)
    }

    /// Copy at scale `eps` with the step tightened to the stability rule.
    pub fn at_scale(&self, eps: f64) -> Self {
        Self {
            eps,
            dt: self.dt.min(DT_SAFETY * eps * eps),
            ..*self
        }
    }
}

/// `|x - y|` on the circle of circumference `period`.
pub fn torus_distance(x: f64, y: f64, period: f64) -> f64 {
    let d = (x - y).rem_euclid(period);
    d.min(period - d)
}

/// Nodal velocity on `[0, L]`, evaluated periodically by linear
/// interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicVelocity {
    pub grid: Grid1D,
    pub v: Vec<f64>,
    pub c: f64,
}

impl PeriodicVelocity {
    pub fn period(&self) -> f64 {
        self.grid.length()
    }

    pub fn eval(&self, x: f64) -> f64 {
        let s = x.rem_euclid(self.period());
        self.grid.interpolate(&self.v, self.grid.a() + s)
    }

    pub fn sup_norm(&self) -> f64 {
        max_abs(&self.v)
    }
}

fn check_torus_source(source: &SourceTerm, grid: &Grid1D) -> Result<Vec<f64>> {
    let big_f = source.antiderivative_on(grid);
    let total = big_f[big_f.len() - 1];
    let scale = max_abs(&source.values_on(grid)).max(f64::MIN_POSITIVE) * grid.length();
    if total.abs() > 1e-10 * scale {
        return Err(Error::Solvability {
            mean: total / grid.length(),
        });
    }
    Ok(big_f)
}

/// `v = F - c` with `c = ∮k⁻¹F / ∮k⁻¹` from nodal coefficient values.
pub fn periodic_velocity_nodal(k_values: &[f64], source: &SourceTerm, grid: &Grid1D) -> Result<PeriodicVelocity> {
    ensure(k_values.len() == grid.len(), || "coefficient length does not match grid".to_string())?;
    let big_f = check_torus_source(source, grid)?;
    let recip: Vec<f64> = k_values.iter().map(|k| 1.0 / k).collect();
    let weighted: Vec<f64> = recip.iter().zip(&big_f).map(|(r, f)| r * f).collect();
    let c = trapezoid(&weighted, grid.spacing()) / trapezoid(&recip, grid.spacing());
    let mut v: Vec<f64> = big_f.iter().map(|f| f - c).collect();
    let n = v.len();
    v[n - 1] = v[0];
    Ok(PeriodicVelocity { grid: *grid, v, c })
}

fn check_periodic_scale(grid: &Grid1D, eps: f64) -> Result<()> {
    let cells = grid.length() / eps;
    ensure((cells - cells.round()).abs() < 1e-9 && cells.round() >= 1.0, || {
        format!("period {} is not a whole number of cells of size {eps}", grid.length())
    })
}

/// Multiscale velocity `vᵉ = -k(x, x/ε) p'` on the torus `[0, L]`.
pub fn periodic_velocity(field: &CoefficientField, source: &SourceTerm, eps: f64, grid: &Grid1D) -> Result<PeriodicVelocity> {
    crate::elliptic::check_resolution(grid, eps)?;
    check_periodic_scale(grid, eps)?;
    let kv = grid
        .nodes()
        .iter()
        .map(|&x| field.eval_two_scale(x, eps))
        .collect::<Result<Vec<_>>>()?;
    periodic_velocity_nodal(&kv, source, grid)
}

/// Homogenized velocity `v₀` from the harmonic-mean coefficient.
pub fn homogenized_velocity(field: &CoefficientField, source: &SourceTerm, grid: &Grid1D) -> Result<PeriodicVelocity> {
    let kv: Vec<f64> = if field.is_x_dependent() {
        grid.nodes().iter().map(|&x| harmonic_homogenize(field, x)).collect()
    } else {
        vec![harmonic_homogenize(field, grid.a()); grid.len()]
    };
    periodic_velocity_nodal(&kv, source, grid)
}

/// Euler–Maruyama path, unwrapped on the line, with Brownian increments from
/// the stream of `replicate`.
pub fn integrate_sde<V>(v: V, config: &TransportConfig, replicate: u64) -> Vec<f64>
where
    V: Fn(f64) -> f64,
{
    let (n, dt) = config.steps();
    let noise = (2.0 * config.eta0 * config.eps * dt).sqrt();
    let mut rng = stream(config.seed, Purpose::Brownian, replicate);
    let mut path = Vec::with_capacity(n + 1);
    let mut x = config.x_init;
    path.push(x);
    for _ in 0..n {
        let xi: f64 = if noise > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
        x += v(x) / config.phi * dt + noise * xi;
        path.push(x);
    }
    path
}

/// Classical fourth-order Runge–Kutta path of `dx/dt = v₀(x)/φ`.
pub fn integrate_ode<V>(v0: V, config: &TransportConfig) -> Vec<f64>
where
    V: Fn(f64) -> f64,
{
    let (n, dt) = config.steps();
    let g = |x: f64| v0(x) / config.phi;
    let mut path = Vec::with_capacity(n + 1);
    let mut x = config.x_init;
    path.push(x);
    for _ in 0..n {
        let k1 = g(x);
        let k2 = g(x + 0.5 * dt * k1);
        let k3 = g(x + 0.5 * dt * k2);
        let k4 = g(x + dt * k3);
        x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        path.push(x);
    }
    path
}

pub fn sup_path_distance(a: &[f64], b: &[f64], period: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| torus_distance(*x, *y, period)).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub eps: f64,
    pub dt: f64,
    pub steps: usize,
    /// `sup_t |xᵉ(t) - x₀(t)|` per replicate, in replicate order.
    pub errors: Vec<f64>,
    pub mean: f64,
    pub std_error: f64,
}

/// Monte Carlo estimate of `E sup_{t ≤ T} |xᵉ(t) - x₀(t)|` at one scale.
pub fn path_error_ensemble(field: &CoefficientField, source: &SourceTerm, config: &TransportConfig) -> Result<PathEnsemble> {
    config.validate()?;
    let grid = Grid1D::resolving(0.0, config.period, config.eps, crate::elliptic::NODES_PER_PERIOD)?;
    let v_eps = periodic_velocity(field, source, config.eps, &grid)?;
    let v0 = homogenized_velocity(field, source, &grid)?;
    let reference = integrate_ode(|x| v0.eval(x), config);
    let errors: Vec<f64> = (0..config.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let path = integrate_sde(|x| v_eps.eval(x), config, r);
            sup_path_distance(&path, &reference, config.period)
        })
        .collect();
    let (steps, dt) = config.steps();
    Ok(PathEnsemble {
        eps: config.eps,
        dt,
        steps,
        mean: mean(&errors),
        std_error: if errors.len() > 1 { std_error(&errors) } else { 0.0 },
        errors,
    })
}

pub fn path_error_study(field: &CoefficientField, source: &SourceTerm, config: &TransportConfig, eps_list: &[f64]) -> Result<Vec<PathEnsemble>> {
    eps_list
        .iter()
        .map(|&eps| path_error_ensemble(field, source, &config.at_scale(eps)))
        .collect()
}

/// `eps,mean_sup_error,mc_stderr,replicates`.
pub fn write_path_study_csv<W: Write>(study: &[PathEnsemble], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["eps", "mean_sup_error", "mc_stderr", "replicates"])?;
    for e in study {
        out.write_record([fmt_f64(e.eps), fmt_f64(e.mean), fmt_f64(e.std_error), e.errors.len().to_string()])?;
    }
    out.flush()?;
    Ok(())
}
