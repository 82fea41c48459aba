use std::path::Path;

use homest::elliptic::SourceTerm;
use homest::fields::{CoefficientField, Covariance};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Top-level experiment file. Physical parameters have no defaults; only
/// numerical knobs do, and the resolved values are echoed in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    pub experiment: Experiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    Homogenize(HomogenizeConfig),
    Forward(ForwardConfig),
    Converge(ConvergeConfig),
    Transport(TransportSpec),
    EstimateScalar(EstimateScalarConfig),
    Clt(CltConfig),
    Map(MapConfig),
    Study(StudyConfig),
    Posterior(PosteriorConfig),
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Homogenize(_) => "homogenize",
            Experiment::Forward(_) => "forward",
            Experiment::Converge(_) => "converge",
            Experiment::Transport(_) => "transport",
            Experiment::EstimateScalar(_) => "estimate-scalar",
            Experiment::Clt(_) => "clt",
            Experiment::Map(_) => "map",
            Experiment::Study(_) => "study",
            Experiment::Posterior(_) => "posterior",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CoefficientSpec {
    /// `k ≡ value`.
    Constant { value: f64 },
    /// `k(y) = exp(amplitude sin 2πy)`.
    Sinusoidal { amplitude: f64 },
    /// `low` on the first half cell, `high` on the second.
    Layered { low: f64, high: f64 },
    /// `k(x, y) = exp(Σ θ_m φ_m(x) + amplitude sin 2πy)` with the Fourier
    /// basis of the log-permeability on the domain.
    Modulated { theta: Vec<f64>, amplitude: f64 },
}

impl CoefficientSpec {
    pub fn build(&self, domain: (f64, f64)) -> Result<CoefficientField, CliError> {
        let field = match self {
            CoefficientSpec::Constant { value } => CoefficientField::constant(*value, domain)?,
            CoefficientSpec::Sinusoidal { amplitude } => CoefficientField::sinusoidal(*amplitude, domain)?,
            CoefficientSpec::Layered { low, high } => CoefficientField::layered(*low, *high, domain)?,
            CoefficientSpec::Modulated { theta, amplitude } => {
                let bound: f64 = theta.iter().map(|t| t.abs()).sum();
                let theta = theta.clone();
                let (a, b) = domain;
                CoefficientField::modulated(
                    move |x| homest::fluctuation::fourier_log(&theta, -1.0 + 2.0 * (x - a) / (b - a)),
                    bound,
                    *amplitude,
                    domain,
                )?
            }
        };
        Ok(field)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SourceSpec {
    Constant { value: f64 },
    /// `amplitude sin(2πx/period)`.
    Sine { amplitude: f64, period: f64 },
    /// `Σ c_i x^i`.
    Polynomial { coefficients: Vec<f64> },
}

impl SourceSpec {
    pub fn build(&self) -> SourceTerm {
        match self {
            SourceSpec::Constant { value } => SourceTerm::constant(*value),
            SourceSpec::Sine { amplitude, period } => SourceTerm::sine(*amplitude, *period),
            SourceSpec::Polynomial { coefficients } => {
                let c = coefficients.clone();
                let anti: Vec<f64> = std::iter::once(0.0)
                    .chain(coefficients.iter().enumerate().map(|(i, v)| v / (i + 1) as f64))
                    .collect();
                SourceTerm::with_antiderivative(move |x| horner(&c, x), move |x| horner(&anti, x))
            }
        }
    }
}

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, v| acc * x + v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceSpec {
    #[default]
    Gaussian,
    Exponential,
}

impl From<CovarianceSpec> for Covariance {
    fn from(c: CovarianceSpec) -> Self {
        match c {
            CovarianceSpec::Gaussian => Covariance::Gaussian,
            CovarianceSpec::Exponential => Covariance::Exponential,
        }
    }
}

fn default_nodes_per_period() -> usize {
    16
}

fn default_macro_points() -> usize {
    homest::homogenization::CELL_MACRO_POINTS
}

fn default_cell_points() -> usize {
    257
}

fn default_nodes() -> usize {
    1025
}

fn default_quad_nodes() -> usize {
    1025
}

fn default_output_points() -> usize {
    101
}

fn default_prior_sd() -> f64 {
    1.0
}

fn default_dq_ratio() -> f64 {
    0.5
}

fn default_max_evals() -> usize {
    homest::optimize::NelderMeadOptions::default().max_evals
}

fn default_xtol() -> f64 {
    homest::optimize::NelderMeadOptions::default().xtol
}

fn default_density_nodes() -> usize {
    4001
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomogenizeConfig {
    pub coefficient: CoefficientSpec,
    pub domain: (f64, f64),
    #[serde(default = "default_macro_points")]
    pub macro_points: usize,
    #[serde(default = "default_cell_points")]
    pub cell_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardConfig {
    pub coefficient: CoefficientSpec,
    pub source: SourceSpec,
    pub domain: (f64, f64),
    /// Required unless the coefficient has no fast-scale dependence.
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default = "default_nodes")]
    pub min_nodes: usize,
    #[serde(default = "default_nodes_per_period")]
    pub nodes_per_period: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergeConfig {
    pub coefficient: CoefficientSpec,
    pub source: SourceSpec,
    pub domain: (f64, f64),
    pub eps_list: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportSpec {
    pub coefficient: CoefficientSpec,
    pub source: SourceSpec,
    pub period: f64,
    pub phi: f64,
    pub eta0: f64,
    pub t_end: f64,
    pub dt: f64,
    pub x_init: f64,
    pub eps_list: Vec<f64>,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateScalarConfig {
    pub u0: f64,
    pub n_list: Vec<usize>,
    pub gamma: f64,
    pub replicates: usize,
    /// Fast-scale cell for the multiscale variant, rescaled so that its
    /// harmonic mean is `exp(u0)`.
    pub cell: CoefficientSpec,
    pub eps_list: Vec<f64>,
    #[serde(default = "default_dq_ratio")]
    pub dq_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CltConfig {
    /// Fourier coefficients of `log k₀` on the domain.
    pub log_k0: Vec<f64>,
    pub source: SourceSpec,
    pub domain: (f64, f64),
    pub sigma: f64,
    pub eps: f64,
    #[serde(default)]
    pub covariance: CovarianceSpec,
    pub points: Vec<f64>,
    pub replicates: usize,
    #[serde(default)]
    pub clamp_ceiling: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// Fluctuation-aware likelihood.
    K1,
    /// Noise-only likelihood.
    K2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    #[serde(default = "default_max_evals")]
    pub max_evals: usize,
    #[serde(default = "default_xtol")]
    pub xtol: f64,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self {
            max_evals: default_max_evals(),
            xtol: default_xtol(),
        }
    }
}

impl OptimizerSpec {
    pub fn options(&self) -> homest::optimize::NelderMeadOptions {
        homest::optimize::NelderMeadOptions {
            max_evals: self.max_evals,
            xtol: self.xtol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    pub estimator: Estimator,
    pub theta_true: Vec<f64>,
    pub n_points: usize,
    pub eps: f64,
    pub sigma: f64,
    pub gamma: f64,
    #[serde(default = "default_prior_sd")]
    pub prior_sd: f64,
    #[serde(default = "default_quad_nodes")]
    pub quad_nodes: usize,
    #[serde(default = "default_output_points")]
    pub output_points: usize,
    #[serde(default)]
    pub clamp_ceiling: Option<f64>,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub theta_true: Vec<f64>,
    pub n_points: usize,
    pub eps: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub replicates: usize,
    #[serde(default = "default_prior_sd")]
    pub prior_sd: f64,
    #[serde(default = "default_quad_nodes")]
    pub quad_nodes: usize,
    #[serde(default = "default_output_points")]
    pub output_points: usize,
    #[serde(default)]
    pub clamp_ceiling: Option<f64>,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
}

/// Scalar log-permeability `u` with data `y_j = exp(-u) p*(x_j) + γ ξ_j` at
/// `x_j = j/(N+1)` and prior `N(0, prior_sd²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteriorConfig {
    pub u_true: f64,
    pub n_points: usize,
    pub gamma: f64,
    pub prior_sd: f64,
    /// Hellinger sweep: constant shifts added to the data.
    pub perturbations: Vec<f64>,
    pub z1: f64,
    pub z2: f64,
    pub deltas: Vec<f64>,
    pub samples: usize,
    pub u_range: (f64, f64),
    #[serde(default = "default_density_nodes")]
    pub density_nodes: usize,
}

pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
}
