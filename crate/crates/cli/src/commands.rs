use homest::elliptic::{fmt_f64, solve_exact, solve_two_scale, SourceTerm};
use homest::fields::{GaussianPrior, MicrostructureModel};
use homest::fluctuation::{
    clt_diagnostic, crude_prior_mean, fourier_log, map_estimate, observation_points, variance_study, MapProblem, RandomSolver,
    VarianceStudyConfig,
};
use homest::grid::Grid1D;
use homest::homogenization::{convergence_study, flux_discrepancy, harmonic_homogenize, solve_cell, study_grid};
use homest::inference::{
    consistency_experiment, hellinger_stability, multiscale_consistency_experiment, reference_pressure,
    small_ball_ratio, uniform_points, weighted_misfit, write_density_csv, FunctionalFamily, MultiscaleConfig, REFERENCE_NODES,
};
use homest::rng::{derive_seed, stream, Purpose};
use homest::transport::{path_error_study, write_path_study_csv, TransportConfig};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::*;
use crate::error::CliError;

/// Named CSV tables produced by one run, in output order.
pub type Tables = Vec<(String, Vec<u8>)>;

pub struct Outcome {
    pub tables: Tables,
    /// Set when the run completed but its results must not be trusted.
    pub flagged: Option<String>,
}

impl From<Tables> for Outcome {
    fn from(tables: Tables) -> Self {
        Self { tables, flagged: None }
    }
}

fn table<F>(name: &str, write: F) -> Result<(String, Vec<u8>), CliError>
where
    F: FnOnce(&mut Vec<u8>) -> homest::Result<()>,
{
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok((format!("{name}.csv"), buf))
}

fn rows<I>(header: &[&str], rows: I) -> Vec<u8>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), CliError> {
    if cond {
        Ok(())
    } else {
        Err(CliError::Config(msg()))
    }
}

/// `[-1, 1]` Fourier log-coefficient evaluated on an arbitrary interval.
fn mapped_log(theta: &[f64], domain: (f64, f64), x: f64) -> f64 {
    fourier_log(theta, -1.0 + 2.0 * (x - domain.0) / (domain.1 - domain.0))
}

pub fn run(experiment: &Experiment, seed: u64) -> Result<Outcome, CliError> {
    match experiment {
        Experiment::Homogenize(c) => homogenize(c).map(Into::into),
        Experiment::Forward(c) => forward(c).map(Into::into),
        Experiment::Converge(c) => converge(c).map(Into::into),
        Experiment::Transport(c) => transport(c, seed).map(Into::into),
        Experiment::EstimateScalar(c) => estimate_scalar(c, seed).map(Into::into),
        Experiment::Clt(c) => clt(c, seed).map(Into::into),
        Experiment::Map(c) => map(c, seed).map(Into::into),
        Experiment::Study(c) => study(c, seed),
        Experiment::Posterior(c) => posterior(c, seed).map(Into::into),
    }
}

fn homogenize(c: &HomogenizeConfig) -> Result<Tables, CliError> {
    check(c.macro_points >= 2, || "macro_points must be at least 2".into())?;
    let field = c.coefficient.build(c.domain)?;
    let g = Grid1D::new(c.domain.0, c.domain.1, c.macro_points)?;
    let k0 = rows(
        &["x", "k0"],
        g.nodes()
            .iter()
            .map(|&x| vec![fmt_f64(x), fmt_f64(harmonic_homogenize(&field, x))]),
    );
    let mid = 0.5 * (c.domain.0 + c.domain.1);
    let cell = solve_cell(&field, mid, c.cell_points)?;
    let dy = 1.0 / c.cell_points as f64;
    let chi = rows(
        &["x", "y", "chi"],
        cell.chi
            .iter()
            .enumerate()
            .map(|(j, v)| vec![fmt_f64(mid), fmt_f64(j as f64 * dy), fmt_f64(*v)]),
    );
    Ok(vec![("k0.csv".into(), k0), ("cell.csv".into(), chi)])
}

fn forward(c: &ForwardConfig) -> Result<Tables, CliError> {
    let (a, b) = c.domain;
    let source = c.source.build();
    let mut tables = Tables::new();
    let solution = match c.eps {
        Some(eps) => {
            check(eps > 0.0, || format!("eps must be positive, got {eps}"))?;
            let per_scale = ((b - a) / eps * c.nodes_per_period as f64).ceil() as usize + 1;
            let grid = Grid1D::new(a, b, per_scale.max(c.min_nodes))?;
            let field = c.coefficient.build(c.domain)?;
            let sol = solve_two_scale(&field, eps, &source, &grid)?;
            let d = flux_discrepancy(&field, &source, eps, &grid)?;
            tables.push((
                "homogenization.csv".into(),
                rows(
                    &["eps", "c_eps", "c_hom", "c_gap", "sup_velocity_error"],
                    [vec![eps, d.c_eps, d.c_hom, d.c_gap, d.sup_norm].into_iter().map(fmt_f64).collect()],
                ),
            ));
            sol
        }
        None => match &c.coefficient {
            CoefficientSpec::Constant { value } => {
                let grid = Grid1D::new(a, b, c.min_nodes)?;
                solve_exact(|_| *value, &source, &grid)?
            }
            _ => return Err(CliError::Config("eps is required for coefficients with a fast scale".into())),
        },
    };
    let big_f = source.antiderivative_on(&solution.grid);
    let residual = solution
        .v
        .iter()
        .zip(&big_f)
        .map(|(v, f)| (v + f - solution.c_eps).abs())
        .fold(0.0, f64::max);
    tables.insert(0, table("p", |w| solution.write_csv(w))?);
    tables.insert(
        1,
        (
            "flux.csv".into(),
            rows(&["c_eps", "flux_residual"], [vec![fmt_f64(solution.c_eps), fmt_f64(residual)]]),
        ),
    );
    Ok(tables)
}

fn converge(c: &ConvergeConfig) -> Result<Tables, CliError> {
    let field = c.coefficient.build(c.domain)?;
    let source = c.source.build();
    let grid = study_grid(&field, &c.eps_list)?;
    let report = convergence_study(&field, &source, &c.eps_list, &grid)?;
    Ok(vec![table("convergence", |w| report.write_csv(w))?])
}

fn transport(c: &TransportSpec, seed: u64) -> Result<Tables, CliError> {
    check(!c.eps_list.is_empty(), || "eps_list is empty".into())?;
    let field = c.coefficient.build((0.0, c.period))?;
    let source = c.source.build();
    let base = TransportConfig {
        phi: c.phi,
        eta0: c.eta0,
        t_end: c.t_end,
        dt: c.dt,
        x_init: c.x_init,
        eps: c.eps_list[0],
        period: c.period,
        replicates: c.replicates,
        seed,
    };
    let study = path_error_study(&field, &source, &base, &c.eps_list)?;
    Ok(vec![table("transport", |w| write_path_study_csv(&study, w))?])
}

fn estimate_scalar(c: &EstimateScalarConfig, seed: u64) -> Result<Tables, CliError> {
    let single = consistency_experiment(c.u0, &c.n_list, c.gamma, c.replicates, seed)?;
    let cell = c.cell.build((0.0, 1.0))?;
    let base = MultiscaleConfig {
        u0: c.u0,
        n_list: c.n_list.clone(),
        eps_list: c.eps_list.clone(),
        gamma: c.gamma,
        replicates: c.replicates,
        seed,
        family: FunctionalFamily::PointEval,
    };
    let point = multiscale_consistency_experiment(&cell, &base)?;
    let dq = multiscale_consistency_experiment(
        &cell,
        &MultiscaleConfig {
            family: FunctionalFamily::DifferenceQuotient { ratio: c.dq_ratio },
            ..base
        },
    )?;
    Ok(vec![
        table("consistency", |w| single.write_csv(w))?,
        table("multiscale_point", |w| point.write_csv(w))?,
        table("multiscale_difference_quotient", |w| dq.write_csv(w))?,
    ])
}

fn micro_model(sigma: f64, eps: f64, cov: CovarianceSpec, ceiling: Option<f64>) -> Result<MicrostructureModel, CliError> {
    let m = MicrostructureModel::new(sigma, eps, cov.into())?;
    Ok(match ceiling {
        Some(v) => m.with_clamp_ceiling(v),
        None => m,
    })
}

fn clt(c: &CltConfig, seed: u64) -> Result<Tables, CliError> {
    check(!c.log_k0.is_empty(), || "log_k0 needs at least one coefficient".into())?;
    let model = micro_model(c.sigma, c.eps, c.covariance, c.clamp_ceiling)?;
    let source = c.source.build();
    let theta = c.log_k0.clone();
    let domain = c.domain;
    let report = clt_diagnostic(
        move |x| mapped_log(&theta, domain, x).exp(),
        &source,
        domain,
        &model,
        &c.points,
        c.replicates,
        seed,
    )?;
    Ok(vec![table("clt", |w| report.write_csv(w))?])
}

fn map(c: &MapConfig, seed: u64) -> Result<Tables, CliError> {
    check(!c.theta_true.is_empty(), || "theta_true needs at least one coefficient".into())?;
    let domain = (-1.0, 1.0);
    let model = micro_model(c.sigma, c.eps, CovarianceSpec::Gaussian, c.clamp_ceiling)?;
    let truth = c.theta_true.clone();
    let solver = RandomSolver::new(|x| fourier_log(&truth, x).exp(), &model, domain)?;
    let source = SourceTerm::constant(1.0);
    let quad = Grid1D::new(domain.0, domain.1, c.quad_nodes)?;
    let points = observation_points(c.n_points);
    let solve = solver.solve(&source, derive_seed(seed, Purpose::Microstructure, 0))?;
    let mut rng = stream(seed, Purpose::ObservationNoise, 0);
    let y: Vec<f64> = points
        .iter()
        .map(|&x| {
            let xi: f64 = rng.sample(StandardNormal);
            solve.solution.value_at(x) + c.gamma * xi
        })
        .collect();
    let dim = c.theta_true.len();
    let problem = MapProblem {
        points: points.clone(),
        y: y.clone(),
        gamma: c.gamma,
        prior_mean: crude_prior_mean(&points, &y, &source, &quad, dim)?,
        prior_sd: vec![c.prior_sd; dim],
        use_model_error: matches!(c.estimator, Estimator::K1),
        sigma: c.sigma,
        eps: c.eps,
        source,
        quad,
    };
    let est = map_estimate(&problem, c.optimizer.options())?;
    if !est.converged {
        return Err(CliError::Numerical(homest::Error::Numerical(format!(
            "optimizer did not converge after {} evaluations",
            est.evals
        ))));
    }
    let out = Grid1D::new(domain.0, domain.1, c.output_points)?;
    Ok(vec![
        (
            "data.csv".into(),
            rows(&["x", "y"], points.iter().zip(&y).map(|(x, y)| vec![fmt_f64(*x), fmt_f64(*y)])),
        ),
        (
            "theta.csv".into(),
            rows(
                &["index", "theta_true", "theta_hat"],
                c.theta_true
                    .iter()
                    .zip(&est.theta)
                    .enumerate()
                    .map(|(i, (t, h))| vec![i.to_string(), fmt_f64(*t), fmt_f64(*h)]),
            ),
        ),
        (
            "map.csv".into(),
            rows(
                &["x", "k0_true", "k_hat"],
                out.nodes().iter().map(|&x| {
                    vec![
                        fmt_f64(x),
                        fmt_f64(fourier_log(&c.theta_true, x).exp()),
                        fmt_f64(est.k_hat(x)),
                    ]
                }),
            ),
        ),
    ])
}

fn study(c: &StudyConfig, seed: u64) -> Result<Outcome, CliError> {
    let cfg = VarianceStudyConfig {
        theta_true: c.theta_true.clone(),
        n_points: c.n_points,
        eps: c.eps,
        sigma: c.sigma,
        gamma: c.gamma,
        replicates: c.replicates,
        seed,
        prior_sd: c.prior_sd,
        output_points: c.output_points,
        quad_nodes: c.quad_nodes,
        clamp_ceiling: c.clamp_ceiling,
        optimizer: c.optimizer.options(),
    };
    let s = variance_study(&cfg)?;
    let diagnostics = rows(
        &["requested", "failures", "failure_rate", "mean_clamp_fraction", "max_clamp_fraction"],
        [vec![
            s.requested.to_string(),
            s.failures.to_string(),
            fmt_f64(s.failure_rate()),
            fmt_f64(s.mean_clamp_fraction),
            fmt_f64(s.max_clamp_fraction),
        ]],
    );
    let tables = vec![
        table("study", |w| s.write_summary_csv(w))?,
        table("replicates", |w| s.write_replicates_csv(w))?,
        ("diagnostics.csv".into(), diagnostics),
    ];
    let flagged = s.flagged().then(|| {
        format!(
            "{} of {} replicates failed ({:.1}%)",
            s.failures,
            s.requested,
            100.0 * s.failure_rate()
        )
    });
    Ok(Outcome { tables, flagged })
}

fn posterior(c: &PosteriorConfig, seed: u64) -> Result<Tables, CliError> {
    check(c.gamma > 0.0 && c.prior_sd > 0.0, || "gamma and prior_sd must be positive".into())?;
    check(c.u_range.0 < c.u_range.1, || "u_range must be increasing".into())?;
    let pstar = reference_pressure(&Grid1D::new(0.0, 1.0, REFERENCE_NODES)?)?;
    let points = uniform_points(c.n_points);
    let lstar: Vec<f64> = points.iter().map(|&x| pstar.value_at(x)).collect();
    let mut rng = stream(seed, Purpose::ObservationNoise, 0);
    let y: Vec<f64> = lstar
        .iter()
        .map(|l| {
            let xi: f64 = rng.sample(StandardNormal);
            (-c.u_true).exp() * l + c.gamma * xi
        })
        .collect();
    let gdiag = vec![c.gamma * c.gamma; y.len()];
    let misfit = |y: &[f64], u: f64| -> f64 {
        let pred: Vec<f64> = lstar.iter().map(|l| (-u).exp() * l).collect();
        weighted_misfit(y, &pred, &gdiag).unwrap_or(f64::INFINITY)
    };
    let sd2 = c.prior_sd * c.prior_sd;
    let build = |shift: f64| {
        let ys: Vec<f64> = y.iter().map(|v| v + shift).collect();
        let misfit = &misfit;
        move |u: f64| -misfit(&ys, u) - 0.5 * u * u / sd2
    };
    let grid = Grid1D::new(c.u_range.0, c.u_range.1, c.density_nodes)?;
    let density = table("density", |w| write_density_csv(build(0.0), &grid, w))?;
    let fit = hellinger_stability(build, &c.perturbations, &grid)?;
    let hellinger = rows(
        &["perturbation", "distance"],
        fit.perturbations
            .iter()
            .zip(&fit.distances)
            .map(|(p, d)| vec![fmt_f64(*p), fmt_f64(*d)]),
    );
    let stability = rows(
        &["lipschitz", "lipschitz_half", "stable"],
        [vec![fmt_f64(fit.lipschitz), fmt_f64(fit.lipschitz_half), fit.is_stable().to_string()]],
    );
    let prior = GaussianPrior::new((0.0, 1.0), vec![c.prior_sd], 1.0)?;
    let phi = |t: &[f64]| misfit(&y, t[0]);
    let sb = small_ball_ratio(&prior, phi, &[c.z1], &[c.z2], &c.deltas, c.samples, seed)?;
    Ok(vec![
        density,
        ("hellinger.csv".into(), hellinger),
        ("stability.csv".into(), stability),
        table("small_ball", |w| sb.write_csv(w))?,
    ])
}
