//! Coefficient fields: deterministic two-scale log-permeabilities, the
//! stationary Gaussian microstructure `μ` with its reciprocal composition
//! `1/k = 1/k₀ + σ μ(x/ε)`, and Karhunen–Loève Gaussian priors.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{ensure, Error, Result};
use crate::grid::{trapezoid, Grid1D};
use crate::rng::{stream, Purpose};

type LogPermFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Two-scale coefficient `k(x, y) = exp(u(x, y))`, 1-periodic in `y`,
/// bounded in `[alpha, beta]`.
#[derive(Clone)]
pub struct CoefficientField {
    log_perm: LogPermFn,
    alpha: f64,
    beta: f64,
    a: f64,
    b: f64,
    x_dependent: bool,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientField")
            .field("alpha", &self.alpha)
            .field("beta", &self.beta)
            .field("domain", &(self.a, self.b))
            .field("x_dependent", &self.x_dependent)
            .finish()
    }
}

const BOUND_SLACK: f64 = 1e-12;
const BOUND_SAMPLES: usize = 64;

impl CoefficientField {
    /// General field. `x_dependent = false` promises `u` ignores `x`, which
    /// lets cell problems be solved once instead of per macro point.
    pub fn new<U>(log_perm: U, alpha: f64, beta: f64, domain: (f64, f64), x_dependent: bool) -> Result<Self>
    where
        U: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        ensure(alpha > 0.0 && alpha <= beta && beta.is_finite(), || {
            format!("need 0 < alpha <= beta < inf, got alpha={alpha}, beta={beta}")
        })?;
        ensure(domain.0 < domain.1, || format!("empty domain {domain:?}"))?;
        let field = Self {
            log_perm: Arc::new(log_perm),
            alpha,
            beta,
            a: domain.0,
            b: domain.1,
            x_dependent,
        };
        field.check_bounds(BOUND_SAMPLES)?;
        Ok(field)
    }

    pub fn constant(value: f64, domain: (f64, f64)) -> Result<Self> {
        ensure(value > 0.0 && value.is_finite(), || format!("constant coefficient must be positive, got {value}"))?;
        let u = value.ln();
        Self::new(move |_, _| u, value, value, domain, false)
    }

    /// `u(y) = amplitude · sin(2π y)`.
    pub fn sinusoidal(amplitude: f64, domain: (f64, f64)) -> Result<Self> {
        let a = amplitude.abs();
        Self::new(
            move |_, y| amplitude * (2.0 * PI * y).sin(),
            (-a).exp(),
            a.exp(),
            domain,
            false,
        )
    }

    /// `k = low` on `[0, ½)` and `high` on `[½, 1)` in the fast variable.
    pub fn layered(low: f64, high: f64, domain: (f64, f64)) -> Result<Self> {
        ensure(low > 0.0 && high > 0.0, || "layer values must be positive".to_string())?;
        let (ul, uh) = (low.ln(), high.ln());
        Self::new(
            move |_, y| if y.rem_euclid(1.0) < 0.5 { ul } else { uh },
            low.min(high),
            low.max(high),
            domain,
            false,
        )
    }

    /// `u(x, y) = macro(x) + amplitude · sin(2π y)` with `macro` bounded by
    /// `macro_bound` in absolute value.
    pub fn modulated<M>(macro_log: M, macro_bound: f64, amplitude: f64, domain: (f64, f64)) -> Result<Self>
    where
        M: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let s = macro_bound.abs() + amplitude.abs();
        Self::new(
            move |x, y| macro_log(x) + amplitude * (2.0 * PI * y).sin(),
            (-s).exp(),
            s.exp(),
            domain,
            true,
        )
    }

    pub fn log_permeability(&self, x: f64, y: f64) -> f64 {
        (self.log_perm)(x, y)
    }

    pub fn k(&self, x: f64, y: f64) -> f64 {
        self.log_permeability(x, y).exp()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn is_x_dependent(&self) -> bool {
        self.x_dependent
    }

    fn admissible(&self, k: f64) -> bool {
        k.is_finite() && k >= self.alpha * (1.0 - BOUND_SLACK) && k <= self.beta * (1.0 + BOUND_SLACK)
    }

    /// `k(x, x/ε)`.
    pub fn eval_two_scale(&self, x: f64, eps: f64) -> Result<f64> {
        if !(x >= self.a && x <= self.b) {
            return Err(Error::Domain { x, a: self.a, b: self.b });
        }
        ensure(eps > 0.0, || format!("scale must be positive, got {eps}"))?;
        let k = self.k(x, x / eps);
        if self.admissible(k) {
            Ok(k)
        } else {
            Err(Error::Coefficient { x, k })
        }
    }

    /// Checks bounds and unit periodicity on a `samples × samples` lattice.
    pub fn check_bounds(&self, samples: usize) -> Result<()> {
        let samples = samples.max(2);
        for i in 0..samples {
            let x = self.a + (self.b - self.a) * i as f64 / (samples - 1) as f64;
            for j in 0..samples {
                let y = j as f64 / samples as f64;
                let k = self.k(x, y);
                if !self.admissible(k) {
                    return Err(Error::Coefficient { x, k });
                }
                let u0 = self.log_permeability(x, y);
                let u1 = self.log_permeability(x, y + 1.0);
                if (u0 - u1).abs() > 1e-9 * (1.0 + u0.abs()) {
                    return Err(Error::InvalidArgument(format!(
                        "log-permeability is not 1-periodic in y at (x, y) = ({x}, {y})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// `factor · k(x, y)`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        ensure(factor > 0.0 && factor.is_finite(), || format!("scale factor must be positive, got {factor}"))?;
        let inner = Arc::clone(&self.log_perm);
        let shift = factor.ln();
        Ok(Self {
            log_perm: Arc::new(move |x, y| inner(x, y) + shift),
            alpha: self.alpha * factor,
            beta: self.beta * factor,
            a: self.a,
            b: self.b,
            x_dependent: self.x_dependent,
        })
    }
}

/// Normalized stationary covariance `R` with `R(0) = 1`, `∫R = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Covariance {
    /// `exp(-π s²)`
    #[default]
    Gaussian,
    /// `exp(-2|s|)`
    Exponential,
}

impl Covariance {
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            Covariance::Gaussian => (-PI * s * s).exp(),
            Covariance::Exponential => (-2.0 * s.abs()).exp(),
        }
    }

    /// Lag beyond which `R` is below `1e-14`.
    fn support(&self) -> f64 {
        match self {
            Covariance::Gaussian => 3.2,
            Covariance::Exponential => 16.2,
        }
    }

    /// `(R(0), ∫R)` by trapezoid quadrature.
    pub fn normalization(&self) -> (f64, f64) {
        let half = 2.0 * self.support();
        let g = Grid1D::new(-half, half, 400_001).expect("static grid");
        let vals: Vec<f64> = g.nodes().iter().map(|&s| self.eval(s)).collect();
        (self.eval(0.0), trapezoid(&vals, g.spacing()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MicrostructureModel {
    pub sigma: f64,
    pub epsilon: f64,
    pub covariance: Covariance,
    /// Largest admissible `k`; `None` means `20 · sup k₀` at composition.
    pub clamp_ceiling: Option<f64>,
}

/// Fast-scale grids must put at least this many nodes in one correlation
/// length.
pub const MICRO_NODES_PER_CORRELATION: f64 = 8.0;
pub const DEFAULT_CLAMP_FACTOR: f64 = 20.0;
/// Clamp frequency above which a composed coefficient carries a warning.
pub const CLAMP_WARNING_FRACTION: f64 = 1e-3;

impl MicrostructureModel {
    pub fn new(sigma: f64, epsilon: f64, covariance: Covariance) -> Result<Self> {
        ensure(sigma >= 0.0 && sigma.is_finite(), || format!("sigma must be >= 0, got {sigma}"))?;
        ensure(epsilon > 0.0 && epsilon.is_finite(), || format!("epsilon must be > 0, got {epsilon}"))?;
        let (r0, total) = covariance.normalization();
        ensure((r0 - 1.0).abs() <= 1e-6 && (total - 1.0).abs() <= 1e-6, || {
            format!("covariance must satisfy R(0)=1 and ∫R=1, got {r0} and {total}")
        })?;
        Ok(Self {
            sigma,
            epsilon,
            covariance,
            clamp_ceiling: None,
        })
    }

    pub fn with_clamp_ceiling(mut self, ceiling: f64) -> Self {
        self.clamp_ceiling = Some(ceiling);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicrostructureSample {
    pub grid: Grid1D,
    pub mu_values: Vec<f64>,
    pub seed: u64,
}

/// Circulant-embedding sampler for `μ(x/ε)` on a fixed uniform grid. The
/// embedding spectrum is computed once and reused for every draw.
pub struct MicrostructureSampler {
    grid: Grid1D,
    sqrt_eigen: Vec<f64>,
    min_eigen_ratio: f64,
    fft: Arc<dyn rustfft::Fft<f64>>,
}

impl fmt::Debug for MicrostructureSampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MicrostructureSampler")
            .field("grid", &self.grid)
            .field("embedding", &self.sqrt_eigen.len())
            .field("min_eigen_ratio", &self.min_eigen_ratio)
            .finish()
    }
}

impl MicrostructureSampler {
    pub fn new(model: &MicrostructureModel, grid: &Grid1D) -> Result<Self> {
        let required = model.epsilon / MICRO_NODES_PER_CORRELATION;
        if grid.spacing() > required * (1.0 + 1e-12) {
            return Err(Error::Resolution {
                spacing: grid.spacing(),
                scale: model.epsilon,
                required,
            });
        }
        let ds = grid.spacing() / model.epsilon;
        let mut m = (2 * (grid.len() - 1)).next_power_of_two();
        while (m / 2) as f64 * ds < model.covariance.support() {
            m *= 2;
        }
        let mut row: Vec<Complex<f64>> = (0..m)
            .map(|j| Complex::new(model.covariance.eval(j.min(m - j) as f64 * ds), 0.0))
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(m);
        fft.process(&mut row);
        let max_eig = row.iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max);
        let min_eig = row.iter().map(|c| c.re).fold(f64::INFINITY, f64::min);
        // Tiny negative eigenvalues from the truncated Gaussian are rounding
        // noise; anything visible means the embedding is not valid.
        if min_eig < -1e-8 * max_eig {
            return Err(Error::Covariance(format!(
                "circulant embedding not nonnegative: min eigenvalue {min_eig:e}"
            )));
        }
        let scale = 1.0 / m as f64;
        let sqrt_eigen = row.iter().map(|c| (c.re.max(0.0) * scale).sqrt()).collect();
        Ok(Self {
            grid: *grid,
            sqrt_eigen,
            min_eigen_ratio: min_eig / max_eig,
            fft,
        })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn min_eigen_ratio(&self) -> f64 {
        self.min_eigen_ratio
    }

    pub fn sample(&self, seed: u64) -> MicrostructureSample {
        let mut rng = stream(seed, Purpose::Microstructure, 0);
        let mut buf: Vec<Complex<f64>> = self
            .sqrt_eigen
            .iter()
            .map(|&s| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex::new(s * re, s * im)
            })
            .collect();
        self.fft.process(&mut buf);
        MicrostructureSample {
            grid: self.grid,
            mu_values: buf[..self.grid.len()].iter().map(|c| c.re).collect(),
            seed,
        }
    }
}

/// One stationary draw of `μ(x/ε)` at the grid nodes.
pub fn sample_microstructure(model: &MicrostructureModel, grid: &Grid1D, seed: u64) -> Result<MicrostructureSample> {
    Ok(MicrostructureSampler::new(model, grid)?.sample(seed))
}

/// Nodal coefficient from the reciprocal model, with clamping statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomCoefficient {
    pub grid: Grid1D,
    pub k_values: Vec<f64>,
    pub clamp_ceiling: f64,
    pub clamped: usize,
    pub warning: bool,
}

impl RandomCoefficient {
    pub fn clamp_fraction(&self) -> f64 {
        self.clamped as f64 / self.k_values.len() as f64
    }

    /// Value between nodes by linear interpolation of `1/k`.
    pub fn value(&self, x: f64) -> f64 {
        let (i, t) = self.grid.locate(x);
        let r0 = 1.0 / self.k_values[i];
        let r1 = 1.0 / self.k_values[i + 1];
        1.0 / (r0 + t * (r1 - r0))
    }
}

/// `k(x) = 1 / max(1/k₀(x) + σ μ(x/ε), 1/ceiling)`.
pub fn compose_random_coefficient<K>(
    k0: K,
    sample: &MicrostructureSample,
    sigma: f64,
    clamp_ceiling: Option<f64>,
) -> Result<RandomCoefficient>
where
    K: Fn(f64) -> f64,
{
    let nodes = sample.grid.nodes();
    let k0_values: Vec<f64> = nodes.iter().map(|&x| k0(x)).collect();
    for (&x, &k) in nodes.iter().zip(&k0_values) {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::Coefficient { x, k });
        }
    }
    let ceiling = match clamp_ceiling {
        Some(c) => c,
        None => DEFAULT_CLAMP_FACTOR * k0_values.iter().cloned().fold(0.0, f64::max),
    };
    ensure(ceiling > 0.0, || format!("clamp ceiling must be positive, got {ceiling}"))?;
    let floor = 1.0 / ceiling;
    let mut clamped = 0;
    let k_values = k0_values
        .iter()
        .zip(&sample.mu_values)
        .map(|(&k0, &mu)| {
            let r = 1.0 / k0 + sigma * mu;
            if r < floor {
                clamped += 1;
                ceiling
            } else {
                1.0 / r
            }
        })
        .collect::<Vec<_>>();
    let warning = clamped as f64 > CLAMP_WARNING_FRACTION * k_values.len() as f64;
    Ok(RandomCoefficient {
        grid: sample.grid,
        k_values,
        clamp_ceiling: ceiling,
        clamped,
        warning,
    })
}

/// Orthonormal Fourier basis on `[a, b]`: `φ₀ = 1/√L`, then alternating
/// normalized cosines and sines of increasing frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlBasis {
    pub a: f64,
    pub b: f64,
}

impl KlBasis {
    pub fn eval(&self, m: usize, x: f64) -> f64 {
        let len = self.b - self.a;
        if m == 0 {
            return 1.0 / len.sqrt();
        }
        let freq = m.div_ceil(2) as f64;
        let arg = 2.0 * PI * freq * (x - self.a) / len;
        let norm = (2.0 / len).sqrt();
        if m % 2 == 1 {
            norm * arg.cos()
        } else {
            norm * arg.sin()
        }
    }
}

/// Truncated Karhunen–Loève prior `u = Σ σ_m η_m φ_m`. The scale `λ` only
/// enters through the Cameron–Martin weights of the matching Tikhonov
/// penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    pub basis: KlBasis,
    pub weights: Vec<f64>,
    pub scale: f64,
}

impl GaussianPrior {
    pub fn new(domain: (f64, f64), weights: Vec<f64>, scale: f64) -> Result<Self> {
        ensure(!weights.is_empty(), || "prior truncation must be at least 1".to_string())?;
        ensure(weights.iter().all(|w| *w >= 0.0 && w.is_finite()), || {
            "prior weights must be finite and nonnegative".to_string()
        })?;
        ensure(weights.windows(2).all(|w| w[1] <= w[0]), || "prior weights must be non-increasing".to_string())?;
        ensure(scale > 0.0 && scale.is_finite(), || format!("prior scale must be positive, got {scale}"))?;
        ensure(domain.0 < domain.1, || format!("empty domain {domain:?}"))?;
        Ok(Self {
            basis: KlBasis {
                a: domain.0,
                b: domain.1,
            },
            weights,
            scale,
        })
    }

    /// `σ_m = σ₀ (m + 1)^(-q)` for `m = 0..truncation`.
    pub fn with_decay(domain: (f64, f64), truncation: usize, sigma0: f64, q: f64, scale: f64) -> Result<Self> {
        let w = (0..truncation).map(|m| sigma0 * ((m + 1) as f64).powf(-q)).collect();
        Self::new(domain, w, scale)
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn field(&self, theta: &[f64], x: f64) -> f64 {
        theta.iter().enumerate().map(|(m, t)| t * self.basis.eval(m, x)).sum()
    }

    pub fn pointwise_variance(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(m, s)| (s * self.basis.eval(m, x)).powi(2))
            .sum()
    }

    /// `1/(λ σ_m²)`; infinite where the weight vanishes.
    pub fn cameron_martin_weights(&self) -> Vec<f64> {
        self.weights
            .iter()
            .map(|s| if *s > 0.0 { 1.0 / (self.scale * s * s) } else { f64::INFINITY })
            .collect()
    }

    pub fn sample_coefficients<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.weights
            .iter()
            .map(|s| {
                let eta: f64 = rng.sample(StandardNormal);
                s * eta
            })
            .collect()
    }

    pub fn log_density(&self, theta: &[f64]) -> Result<f64> {
        prior_log_density(self, theta)
    }
}

/// `-½ Σ θ_m²/σ_m²`, dropping the normalizing constant so the mode scores 0.
pub fn gaussian_log_density(weights: &[f64], theta: &[f64]) -> Result<f64> {
    ensure(weights.len() == theta.len(), || {
        format!("parameter dimension {} does not match prior truncation {}", theta.len(), weights.len())
    })?;
    let mut acc = 0.0;
    for (s, t) in weights.iter().zip(theta) {
        if *s == 0.0 {
            if *t != 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
        } else {
            acc -= 0.5 * (t / s).powi(2);
        }
    }
    Ok(acc)
}

pub fn prior_log_density(prior: &GaussianPrior, theta: &[f64]) -> Result<f64> {
    gaussian_log_density(&prior.weights, theta)
}

/// One KL draw evaluated at the grid nodes.
pub fn sample_prior_draw(prior: &GaussianPrior, grid: &Grid1D, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, Purpose::Prior, 0);
    let theta = prior.sample_coefficients(&mut rng);
    grid.nodes().iter().map(|&x| prior.field(&theta, x)).collect()
}
