//! Derivative-free minimizers: Nelder–Mead simplex with restarts, and a
//! bracketed golden-section search for scalar problems on an interval.
//!
//! Objectives here typically wrap an elliptic solve, so no gradients are
//! assumed anywhere.

use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Convergence threshold on the simplex diameter (max-norm).
    pub xtol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evals: 2000,
            xtol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub evals: usize,
    pub iterations: usize,
    pub converged: bool,
    pub simplex_diameter: f64,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Nelder–Mead from `x0` with an axis-aligned initial simplex of the given
/// per-coordinate steps.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], step: &[f64], opts: NelderMeadOptions) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    assert!(n >= 1, "Nelder-Mead needs at least one dimension");
    assert_eq!(step.len(), n);
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        sanitize(f(x))
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += if step[i] != 0.0 { step[i] } else { 0.05 };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evals)).collect();

    let diameter = |s: &[Vec<f64>]| {
        s[1..]
            .iter()
            .map(|v| v.iter().zip(&s[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max)
    };

    let mut iterations = 0;
    let mut converged = false;
    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        if diameter(&simplex) <= opts.xtol {
            converged = true;
            break;
        }
        if evals >= opts.max_evals {
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|v| v[k]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = along(REFLECT);
        let fr = eval(&xr, &mut evals);
        if fr < values[0] {
            let xe = along(REFLECT * EXPAND);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let xc = along(REFLECT * CONTRACT);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = along(-CONTRACT);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        for i in 1..=n {
            let v: Vec<f64> = simplex[0]
                .iter()
                .zip(&simplex[i])
                .map(|(b, x)| b + SHRINK * (x - b))
                .collect();
            values[i] = eval(&v, &mut evals);
            simplex[i] = v;
        }
    }

    NelderMeadResult {
        simplex_diameter: diameter(&simplex),
        x: simplex[0].clone(),
        fx: values[0],
        evals,
        iterations,
        converged,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartResult {
    pub best: NelderMeadResult,
    pub runs: Vec<NelderMeadResult>,
    pub total_evals: usize,
}

/// Independent Nelder–Mead runs from each start; the best value wins and
/// ties go to the earliest start.
pub fn minimize_with_restarts<F>(
    f: F,
    starts: &[Vec<f64>],
    step: &[f64],
    opts: NelderMeadOptions,
) -> RestartResult
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    assert!(!starts.is_empty());
    let runs: Vec<NelderMeadResult> = starts
        .par_iter()
        .map(|x0| nelder_mead(&f, x0, step, opts))
        .collect();
    let mut best = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.fx < runs[best].fx {
            best = i;
        }
    }
    RestartResult {
        total_evals: runs.iter().map(|r| r.evals).sum(),
        best: runs[best].clone(),
        runs,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalMinimum {
    pub x: f64,
    pub fx: f64,
    pub evals: usize,
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Global minimum of `f` on `[lo, hi]`: coarse scan with `coarse` points,
/// then golden-section refinement of the best bracket down to `tol`.
/// A constant objective returns the interval midpoint.
pub fn minimize_on_interval<F>(mut f: F, lo: f64, hi: f64, coarse: usize, tol: f64) -> IntervalMinimum
where
    F: FnMut(f64) -> f64,
{
    assert!(lo < hi && coarse >= 3);
    let h = (hi - lo) / (coarse - 1) as f64;
    let xs: Vec<f64> = (0..coarse)
        .map(|i| if i + 1 == coarse { hi } else { lo + i as f64 * h })
        .collect();
    let fs: Vec<f64> = xs.iter().map(|&x| sanitize(f(x))).collect();
    let mut evals = coarse;

    let fmin = fs.iter().cloned().fold(f64::INFINITY, f64::min);
    let fmax = fs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if fmin == fmax {
        let mid = 0.5 * (lo + hi);
        return IntervalMinimum {
            x: mid,
            fx: sanitize(f(mid)),
            evals: evals + 1,
        };
    }
    let best = fs.iter().position(|&v| v == fmin).unwrap_or(0);

    let mut a = xs[best.saturating_sub(1)];
    let mut b = xs[(best + 1).min(coarse - 1)];
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = sanitize(f(c));
    let mut fd = sanitize(f(d));
    evals += 2;
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = sanitize(f(c));
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = sanitize(f(d));
        }
        evals += 1;
    }
    let mut x = 0.5 * (a + b);
    let mut fx = sanitize(f(x));
    evals += 1;
    if fs[best] < fx {
        x = xs[best];
        fx = fs[best];
    }
    IntervalMinimum { x, fx, evals }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn nelder_mead_finds_rosenbrock_minimum() {
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = NelderMeadOptions {
            max_evals: 5000,
            xtol: 1e-10,
        };
        let r = nelder_mead(rosen, &[-1.2, 1.0], &[0.1, 0.1], opts);
        assert!(r.converged);
        assert_abs_diff_eq!(r.x[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(r.x[1], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn nelder_mead_flags_budget_exhaustion() {
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = NelderMeadOptions {
            max_evals: 20,
            xtol: 1e-12,
        };
        let r = nelder_mead(rosen, &[-1.2, 1.0], &[0.1, 0.1], opts);
        assert!(!r.converged);
        assert!(r.evals <= 20 + 3);
    }

    #[test]
    fn restarts_pick_the_best_basin() {
        let f = |x: &[f64]| (x[0] * x[0] - 1.0).powi(2) + 0.1 * x[0];
        let starts = vec![vec![2.0], vec![-2.0]];
        let r = minimize_with_restarts(f, &starts, &[0.1], NelderMeadOptions::default());
        assert!(r.best.x[0] < 0.0);
        assert_eq!(r.runs.len(), 2);
    }

    #[test]
    fn interval_search_handles_interior_boundary_and_flat() {
        let m = minimize_on_interval(|x| (x - 0.3).powi(2), -1.0, 1.0, 64, 1e-10);
        assert_abs_diff_eq!(m.x, 0.3, epsilon = 1e-8);
        let m = minimize_on_interval(|x| (x - 5.0).powi(2), -1.0, 1.0, 64, 1e-10);
        assert_abs_diff_eq!(m.x, 1.0, epsilon = 1e-9);
        let m = minimize_on_interval(|_| 2.0, -1.0, 3.0, 64, 1e-10);
        assert_eq!(m.x, 1.0);
    }
}
