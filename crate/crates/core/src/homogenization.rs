//! Periodic homogenization in one dimension.
//!
//! The effective coefficient is the harmonic mean `k₀(x) = ⟨k(x,·)⁻¹⟩⁻¹` and
//! the cell problem has the explicit solution
//! `χ(x, y) = -y + k₀(x) ∫₀ʸ k(x, s)⁻¹ ds + c₂(x)`, normalized to mean zero.
//! Convergence diagnostics compare the exact two-scale solution with `p₀` and
//! with the corrected approximation `p₀ + ε χ(x, x/ε) p₀'(x)`. All gradients
//! are formed analytically from the flux representation; none are finite
//! differences of an oscillating field.

use std::io::Write;

use rayon::prelude::*;

use crate::elliptic::{check_resolution, fmt_f64, solve_exact, solve_exact_nodal, solve_two_scale, PressureSolution, SourceTerm};
use crate::error::{ensure, Result};
use crate::fields::CoefficientField;
use crate::grid::{cumulative_trapezoid, derivative, max_abs, trapezoid, Grid1D};
use crate::stats::loglog_slope;

/// Points of the periodic rule used for cell averages.
pub const CELL_POINTS: usize = 1 << 12;

/// Macro positions at which cell problems are tabulated for fields that
/// depend on `x`.
pub const CELL_MACRO_POINTS: usize = 129;

fn cell_mean<G: Fn(f64) -> f64>(g: G, n: usize) -> f64 {
    (0..n).map(|j| g(j as f64 / n as f64)).sum::<f64>() / n as f64
}

/// `(∫₀¹ k(x, y)⁻¹ dy)⁻¹`, by the periodic rectangle rule with
/// [`CELL_POINTS`] points.
pub fn harmonic_homogenize(field: &CoefficientField, x: f64) -> f64 {
    1.0 / cell_mean(|y| 1.0 / field.k(x, y), CELL_POINTS)
}

pub fn arithmetic_mean(field: &CoefficientField, x: f64) -> f64 {
    cell_mean(|y| field.k(x, y), CELL_POINTS)
}

/// Tabulated cell solution `χ(x, ·)` at one macro point, on `n` periodic
/// nodes `y_j = j/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSolution {
    pub x: f64,
    pub chi: Vec<f64>,
    /// `c₁ = ⟨k⁻¹⟩⁻¹`, which is `k₀(x)`.
    pub c1: f64,
    pub c2: f64,
    /// `χ(x, 1) - χ(x, 0)` before periodic identification.
    pub closure: f64,
}

impl CellSolution {
    pub fn len(&self) -> usize {
        self.chi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chi.is_empty()
    }

    /// Periodic linear interpolation in `y`.
    pub fn eval(&self, y: f64) -> f64 {
        let n = self.chi.len();
        let s = y.rem_euclid(1.0) * n as f64;
        let i = (s.floor() as usize).min(n - 1);
        let t = s - i as f64;
        self.chi[i] + t * (self.chi[(i + 1) % n] - self.chi[i])
    }

    pub fn mean(&self) -> f64 {
        self.chi.iter().sum::<f64>() / self.chi.len() as f64
    }

    pub fn sup_norm(&self) -> f64 {
        max_abs(&self.chi)
    }
}

pub fn solve_cell(field: &CoefficientField, x: f64, n: usize) -> Result<CellSolution> {
    ensure(n >= 4, || format!("cell grid needs at least 4 points, got {n}"))?;
    let dy = 1.0 / n as f64;
    let recip: Vec<f64> = (0..=n).map(|j| 1.0 / field.k(x, j as f64 * dy)).collect();
    let integral = cumulative_trapezoid(&recip, dy);
    let c1 = 1.0 / integral[n];
    let raw: Vec<f64> = (0..=n).map(|j| -(j as f64 * dy) + c1 * integral[j]).collect();
    let closure = raw[n] - raw[0];
    let c2 = -raw[..n].iter().sum::<f64>() / n as f64;
    Ok(CellSolution {
        x,
        chi: raw[..n].iter().map(|v| v + c2).collect(),
        c1,
        c2,
        closure,
    })
}

/// `∂χ/∂y = -1 + k₀(x)/k(x, y)`, exact from the closed form.
pub fn dchi_dy(field: &CoefficientField, k0: f64, x: f64, y: f64) -> f64 {
    -1.0 + k0 / field.k(x, y)
}

pub fn homogenized_solve<K>(k0: K, source: &SourceTerm, grid: &Grid1D) -> Result<PressureSolution>
where
    K: Fn(f64) -> f64,
{
    solve_exact(k0, source, grid)
}

/// Homogenized coefficient, pressure and correctors on a fixed solver grid.
#[derive(Debug, Clone)]
pub struct HomogenizedModel {
    field: CoefficientField,
    pub grid: Grid1D,
    /// `k₀` at the grid nodes.
    pub k0: Vec<f64>,
    pub p0: PressureSolution,
    /// `p₀' = (c - F)/k₀` at the nodes.
    pub dp0: Vec<f64>,
    pub d2p0: Vec<f64>,
    cell_x: Vec<f64>,
    cells: Vec<CellSolution>,
}

impl HomogenizedModel {
    pub fn new(field: &CoefficientField, source: &SourceTerm, grid: &Grid1D) -> Result<Self> {
        let (a, b) = field.domain();
        ensure((grid.a() - a).abs() < 1e-12 && (grid.b() - b).abs() < 1e-12, || {
            format!("grid [{}, {}] does not match field domain [{a}, {b}]", grid.a(), grid.b())
        })?;
        let cell_x: Vec<f64> = if field.is_x_dependent() {
            Grid1D::new(a, b, CELL_MACRO_POINTS)?.nodes()
        } else {
            vec![a]
        };
        let cells = cell_x
            .par_iter()
            .map(|&x| solve_cell(field, x, CELL_POINTS))
            .collect::<Result<Vec<_>>>()?;
        let k0: Vec<f64> = if field.is_x_dependent() {
            grid.nodes().par_iter().map(|&x| harmonic_homogenize(field, x)).collect()
        } else {
            vec![cells[0].c1; grid.len()]
        };
        let p0 = solve_exact_nodal(&k0, source, grid)?;
        let dp0 = p0.gradient();
        let d2p0 = derivative(&dp0, grid.spacing());
        Ok(Self {
            field: field.clone(),
            grid: *grid,
            k0,
            p0,
            dp0,
            d2p0,
            cell_x,
            cells,
        })
    }

    pub fn field(&self) -> &CoefficientField {
        &self.field
    }

    pub fn k0_at(&self, x: f64) -> f64 {
        self.grid.interpolate(&self.k0, x)
    }

    pub fn u0_at(&self, x: f64) -> f64 {
        self.k0_at(x).ln()
    }

    pub fn cells(&self) -> &[CellSolution] {
        &self.cells
    }

    /// Bracketing cell index and weight for a macro position.
    fn cell_bracket(&self, x: f64) -> (usize, f64) {
        if self.cells.len() == 1 {
            return (0, 0.0);
        }
        let n = self.cell_x.len();
        let h = self.cell_x[1] - self.cell_x[0];
        let s = ((x - self.cell_x[0]) / h).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n - 2);
        (i, s - i as f64)
    }

    pub fn chi(&self, x: f64, y: f64) -> f64 {
        let (i, t) = self.cell_bracket(x);
        if self.cells.len() == 1 {
            return self.cells[0].eval(y);
        }
        (1.0 - t) * self.cells[i].eval(y) + t * self.cells[i + 1].eval(y)
    }

    pub fn dchi_dx(&self, x: f64, y: f64) -> f64 {
        if self.cells.len() == 1 {
            return 0.0;
        }
        let (i, _) = self.cell_bracket(x);
        let h = self.cell_x[i + 1] - self.cell_x[i];
        (self.cells[i + 1].eval(y) - self.cells[i].eval(y)) / h
    }

    /// `ε χ(x, x/ε) p₀'(x)` at grid node `i`.
    pub fn corrector_at_node(&self, i: usize, eps: f64) -> f64 {
        let x = self.grid.node(i);
        eps * self.chi(x, x / eps) * self.dp0[i]
    }
}

/// Two-term expansion `p₀ + ε χ p₀'` and its gradient at the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstOrderApprox {
    pub grid: Grid1D,
    pub eps: f64,
    pub p: Vec<f64>,
    /// `p₀'(1 + χ_y) + ε(χ_x p₀' + χ p₀'')`.
    pub dp: Vec<f64>,
}

pub fn first_order_approx(model: &HomogenizedModel, eps: f64) -> Result<FirstOrderApprox> {
    check_resolution(&model.grid, eps)?;
    let n = model.grid.len();
    let mut p = Vec::with_capacity(n);
    let mut dp = Vec::with_capacity(n);
    for i in 0..n {
        let x = model.grid.node(i);
        let y = x / eps;
        let chi = model.chi(x, y);
        let chi_y = dchi_dy(&model.field, model.k0[i], x, y);
        let chi_x = model.dchi_dx(x, y);
        p.push(model.p0.p[i] + eps * chi * model.dp0[i]);
        dp.push(model.dp0[i] * (1.0 + chi_y) + eps * (chi_x * model.dp0[i] + chi * model.d2p0[i]));
    }
    Ok(FirstOrderApprox {
        grid: model.grid,
        eps,
        p,
        dp,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub eps: f64,
    /// `‖pᵉ - p₀‖_{L²}`.
    pub err_l2: f64,
    /// `‖pᵉ - p₀‖_∞`.
    pub err_sup: f64,
    /// `‖pᵉ - pᵉ_a‖_{H¹}` with `‖e‖²_{H¹} = ‖e‖²_{L²} + ‖e'‖²_{L²}`.
    pub err_h1: f64,
    /// `‖pᵉ - pᵉ_a‖_{W^{1,∞}} = ‖e‖_∞ + ‖e'‖_∞`.
    pub err_w1inf: f64,
    /// `‖pᵉ - p₀‖_{W^{1,∞}}`, for comparison with the corrected error.
    pub err_w1inf_uncorrected: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRates {
    pub l2: f64,
    pub sup: f64,
    pub h1: f64,
    pub w1inf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub grid: Grid1D,
    pub rows: Vec<ConvergenceRow>,
    pub rates: ConvergenceRates,
}

impl ConvergenceReport {
    pub fn eps_list(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.eps).collect()
    }

    /// `eps,err_L2,err_sup,err_H1,err_W1inf` rows, then a `rate` footer with
    /// the fitted log-log slopes.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["eps", "err_L2", "err_sup", "err_H1", "err_W1inf"])?;
        for r in &self.rows {
            out.write_record([r.eps, r.err_l2, r.err_sup, r.err_h1, r.err_w1inf].map(fmt_f64))?;
        }
        let rt = self.rates;
        out.write_record([
            "rate".to_string(),
            fmt_f64(rt.l2),
            fmt_f64(rt.sup),
            fmt_f64(rt.h1),
            fmt_f64(rt.w1inf),
        ])?;
        out.flush()?;
        Ok(())
    }
}

/// Grid on the field's domain resolving the smallest scale with
/// [`crate::elliptic::NODES_PER_PERIOD`] nodes per period.
pub fn study_grid(field: &CoefficientField, eps_list: &[f64]) -> Result<Grid1D> {
    ensure(!eps_list.is_empty(), || "empty scale list".to_string())?;
    let eps_min = eps_list.iter().cloned().fold(f64::INFINITY, f64::min);
    ensure(eps_min > 0.0, || format!("scales must be positive, got {eps_min}"))?;
    let (a, b) = field.domain();
    Grid1D::resolving(a, b, eps_min, crate::elliptic::NODES_PER_PERIOD)
}

/// Error norms of the two-scale solution against `p₀` and against the
/// first-order approximation, all on one shared grid.
pub fn convergence_study(field: &CoefficientField, source: &SourceTerm, eps_list: &[f64], grid: &Grid1D) -> Result<ConvergenceReport> {
    ensure(eps_list.windows(2).all(|w| w[1] < w[0]), || "scale list must be strictly decreasing".to_string())?;
    for &eps in eps_list {
        check_resolution(grid, eps)?;
    }
    let model = HomogenizedModel::new(field, source, grid)?;
    let dx = grid.spacing();
    let rows = eps_list
        .par_iter()
        .map(|&eps| -> Result<ConvergenceRow> {
            let sol = solve_two_scale(field, eps, source, grid)?;
            let grad = sol.gradient();
            let approx = first_order_approx(&model, eps)?;
            let e0: Vec<f64> = sol.p.iter().zip(&model.p0.p).map(|(a, b)| a - b).collect();
            let de0: Vec<f64> = grad.iter().zip(&model.dp0).map(|(a, b)| a - b).collect();
            let e1: Vec<f64> = sol.p.iter().zip(&approx.p).map(|(a, b)| a - b).collect();
            let de1: Vec<f64> = grad.iter().zip(&approx.dp).map(|(a, b)| a - b).collect();
            let l2 = |v: &[f64]| trapezoid(&v.iter().map(|x| x * x).collect::<Vec<_>>(), dx).sqrt();
            Ok(ConvergenceRow {
                eps,
                err_l2: l2(&e0),
                err_sup: max_abs(&e0),
                err_h1: (l2(&e1).powi(2) + l2(&de1).powi(2)).sqrt(),
                err_w1inf: max_abs(&e1) + max_abs(&de1),
                err_w1inf_uncorrected: max_abs(&e0) + max_abs(&de0),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let col = |f: fn(&ConvergenceRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let rates = ConvergenceRates {
        l2: loglog_slope(&eps, &col(|r| r.err_l2)),
        sup: loglog_slope(&eps, &col(|r| r.err_sup)),
        h1: loglog_slope(&eps, &col(|r| r.err_h1)),
        w1inf: loglog_slope(&eps, &col(|r| r.err_w1inf)),
    };
    Ok(ConvergenceReport {
        grid: *grid,
        rows,
        rates,
    })
}

/// `‖vᵉ - V‖_∞` with `V = k₀ p₀'`, and `|c - cᵉ|`. In one dimension both
/// fluxes are a constant minus `F`, so the two numbers coincide.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluxDiscrepancy {
    pub sup_norm: f64,
    pub c_gap: f64,
    pub c_eps: f64,
    pub c_hom: f64,
}

pub fn flux_discrepancy(field: &CoefficientField, source: &SourceTerm, eps: f64, grid: &Grid1D) -> Result<FluxDiscrepancy> {
    let sol = solve_two_scale(field, eps, source, grid)?;
    let k0: Vec<f64> = if field.is_x_dependent() {
        grid.nodes().iter().map(|&x| harmonic_homogenize(field, x)).collect()
    } else {
        vec![harmonic_homogenize(field, grid.a()); grid.len()]
    };
    let hom = solve_exact_nodal(&k0, source, grid)?;
    let sup_norm = sol.v.iter().zip(&hom.v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(FluxDiscrepancy {
        sup_norm,
        c_gap: (hom.c_eps - sol.c_eps).abs(),
        c_eps: sol.c_eps,
        c_hom: hom.c_eps,
    })
}
