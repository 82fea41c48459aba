use homest::elliptic::{greens_kernel, lipschitz_probe, solve_exact, solve_fd, SourceTerm};
use homest::fields::{Covariance, GaussianPrior, MicrostructureModel, MicrostructureSampler};
use homest::grid::Grid1D;
use homest::rng::{stream, Purpose};
use homest::stats::{mean, variance};

fn k_smooth(x: f64) -> f64 {
    (0.5 * (3.0 * x).sin()).exp()
}

#[test]
fn finite_differences_converge_at_second_order() {
    let f = SourceTerm::new(|x| 1.0 + x * x);
    let reference = solve_exact(k_smooth, &f, &Grid1D::new(0.0, 1.0, 65_537).unwrap()).unwrap();
    let errs: Vec<f64> = [65, 129, 257]
        .iter()
        .map(|&n| {
            let g = Grid1D::new(0.0, 1.0, n).unwrap();
            let fd = solve_fd(k_smooth, &f, &g).unwrap();
            g.nodes()
                .iter()
                .zip(&fd.p)
                .map(|(&x, p)| (p - reference.value_at(x)).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio} from {errs:?}");
    }
}

#[test]
fn greens_kernel_reproduces_inverse_coefficient_perturbation() {
    let g = Grid1D::new(0.0, 1.0, 4097).unwrap();
    let f = SourceTerm::new(|x| 1.0 + x);
    let delta = 1e-5;
    let bump = |y: f64| (-(y - 0.4f64).powi(2) / 0.01).exp();
    let base = solve_exact(k_smooth, &f, &g).unwrap();
    let pert = solve_exact(|y| 1.0 / (1.0 / k_smooth(y) + delta * bump(y)), &f, &g).unwrap();
    let kernel = greens_kernel(k_smooth, &g).unwrap();
    let ys = g.nodes();
    for &x in &[0.25, 0.5, 0.8] {
        let vals: Vec<f64> = ys.iter().zip(&base.v).map(|(&y, v)| kernel.eval(x, y) * v * bump(y)).collect();
        let integral = homest::grid::trapezoid(&vals, g.spacing());
        let fd = (pert.value_at(x) - base.value_at(x)) / delta;
        assert!((fd - integral).abs() <= 0.01 * fd.abs(), "x={x}: {fd} vs {integral}");
    }
}

#[test]
fn scalar_lipschitz_probe_is_bounded() {
    let g = Grid1D::new(0.0, 1.0, 1025).unwrap();
    let f = SourceTerm::constant(1.0);
    let mut worst = 0.0f64;
    for (u1, u2) in [(0.0, 0.1), (-0.5, 0.5), (1.0, 1.2), (-1.0, -0.9)] {
        let (dp, du) = lipschitz_probe(u1, u2, &f, &g).unwrap();
        worst = worst.max(dp / du);
    }
    // |p1' - p2'| = |e^{-u1} - e^{-u2}| |x - 1/2|, so the ratio is at most e^{1}/sqrt(12).
    assert!(worst <= 1.0f64.exp() / 12f64.sqrt() * 1.01, "{worst}");
}

#[test]
fn microstructure_draws_have_the_model_covariance() {
    let eps = 0.05;
    let sigma = 0.7;
    let g = Grid1D::new(0.0, 1.0, 321).unwrap();
    let model = MicrostructureModel::new(sigma, eps, Covariance::Gaussian).unwrap();
    let sampler = MicrostructureSampler::new(&model, &g).unwrap();
    let draws: Vec<Vec<f64>> = (0..4000).map(|s| sampler.sample(s).mu_values).collect();
    let i = 100;
    for lag in [0usize, 4, 8, 16] {
        let prod: Vec<f64> = draws.iter().map(|d| d[i] * d[i + lag]).collect();
        let s = g.spacing() * lag as f64 / eps;
        let want = Covariance::Gaussian.eval(s);
        assert!((mean(&prod) - want).abs() <= 0.06, "lag {lag}: {} vs {want}", mean(&prod));
    }
    let at: Vec<f64> = draws.iter().map(|d| d[i]).collect();
    assert!(mean(&at).abs() <= 0.06);
}

#[test]
fn prior_draws_match_pointwise_variance() {
    let prior = GaussianPrior::with_decay((0.0, 1.0), 16, 1.0, 2.0, 1.0).unwrap();
    let mut rng = stream(7, Purpose::Prior, 0);
    let x = 0.3;
    let vals: Vec<f64> = (0..20_000)
        .map(|_| {
            let theta = prior.sample_coefficients(&mut rng);
            prior.field(&theta, x)
        })
        .collect();
    let want = prior.pointwise_variance(x);
    assert!((variance(&vals) / want - 1.0).abs() <= 0.05, "{} vs {want}", variance(&vals));
}
