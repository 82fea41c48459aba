//! One-dimensional Dirichlet problem `-(k p')' = f`, `p(a) = p(b) = 0`.
//!
//! The exact solver uses the closed form of the two-point problem:
//! the flux `v = k p'` satisfies `v = -F + c` with `F' = f`, `F(a) = 0`,
//! and the Dirichlet condition at `b` fixes `c = ∫k⁻¹F / ∫k⁻¹`. Both
//! integrals and the pressure `p(x) = ∫ₐˣ k⁻¹(c - F)` are composite
//! trapezoid sums on the solver grid. A conservative finite-difference
//! scheme is kept alongside as an independent check.

use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use crate::error::{ensure, Error, Result};
use crate::fields::CoefficientField;
use crate::grid::{cumulative_trapezoid, max_abs, trapezoid, Grid1D};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Minimum nodes per fast period for two-scale solves.
pub const NODES_PER_PERIOD: usize = 16;

/// Forcing `f` with an optional closed-form antiderivative.
#[derive(Clone)]
pub struct SourceTerm {
    f: ScalarFn,
    antiderivative: Option<ScalarFn>,
}

impl fmt::Debug for SourceTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SourceTerm")
            .field("closed_form_antiderivative", &self.antiderivative.is_some())
            .finish()
    }
}

impl SourceTerm {
    /// `F` is obtained by cumulative quadrature on whichever grid is used.
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            f: Arc::new(f),
            antiderivative: None,
        }
    }

    /// `g` is any antiderivative; it is shifted so that `F(a) = 0`.
    pub fn with_antiderivative<F, G>(f: F, g: G) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        G: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            f: Arc::new(f),
            antiderivative: Some(Arc::new(g)),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::with_antiderivative(move |_| c, move |x| c * x)
    }

    /// `amplitude · sin(2π x / period)`; zero mean over any whole period.
    pub fn sine(amplitude: f64, period: f64) -> Self {
        let w = 2.0 * std::f64::consts::PI / period;
        Self::with_antiderivative(move |x| amplitude * (w * x).sin(), move |x| -amplitude * (w * x).cos() / w)
    }

    pub fn f(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    pub fn values_on(&self, grid: &Grid1D) -> Vec<f64> {
        grid.nodes().iter().map(|&x| self.f(x)).collect()
    }

    /// `F` at the grid nodes with `F(a) = 0`.
    pub fn antiderivative_on(&self, grid: &Grid1D) -> Vec<f64> {
        match &self.antiderivative {
            Some(g) => {
                let g0 = g(grid.a());
                grid.nodes().iter().map(|&x| g(x) - g0).collect()
            }
            None => cumulative_trapezoid(&self.values_on(grid), grid.spacing()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PressureSolution {
    pub grid: Grid1D,
    pub p: Vec<f64>,
    /// Flux `v = k dp/dx` at the nodes.
    pub v: Vec<f64>,
    /// Coefficient at the nodes.
    pub k: Vec<f64>,
    pub c_eps: f64,
}

impl PressureSolution {
    pub fn value_at(&self, x: f64) -> f64 {
        self.grid.interpolate(&self.p, x)
    }

    /// `dp/dx = v/k` at the nodes.
    pub fn gradient(&self) -> Vec<f64> {
        self.v.iter().zip(&self.k).map(|(v, k)| v / k).collect()
    }

    pub fn sup_norm(&self) -> f64 {
        max_abs(&self.p)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x", "p", "v"])?;
        for (i, x) in self.grid.nodes().iter().enumerate() {
            out.write_record([fmt_f64(*x), fmt_f64(self.p[i]), fmt_f64(self.v[i])])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Shortest round-trip decimal representation.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn checked_coefficient(grid: &Grid1D, k_values: &[f64]) -> Result<()> {
    ensure(k_values.len() == grid.len(), || {
        format!("{} coefficient values for {} nodes", k_values.len(), grid.len())
    })?;
    for (i, &k) in k_values.iter().enumerate() {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::Coefficient { x: grid.node(i), k });
        }
    }
    Ok(())
}

/// Exact-formula solve from nodal coefficient values.
pub fn solve_exact_nodal(k_values: &[f64], source: &SourceTerm, grid: &Grid1D) -> Result<PressureSolution> {
    checked_coefficient(grid, k_values)?;
    let dx = grid.spacing();
    let big_f = source.antiderivative_on(grid);
    let recip: Vec<f64> = k_values.iter().map(|k| 1.0 / k).collect();
    let weighted: Vec<f64> = recip.iter().zip(&big_f).map(|(r, f)| r * f).collect();
    let c = trapezoid(&weighted, dx) / trapezoid(&recip, dx);
    let v: Vec<f64> = big_f.iter().map(|f| c - f).collect();
    let slope: Vec<f64> = recip.iter().zip(&v).map(|(r, v)| r * v).collect();
    let mut p = cumulative_trapezoid(&slope, dx);
    let n = p.len();
    let residual = p[n - 1];
    let scale = max_abs(&p).max(f64::MIN_POSITIVE);
    if residual.abs() > 1e-10 * scale {
        return Err(Error::Numerical(format!(
            "exact solve closes with p(b) = {residual:e} (|p|_inf = {scale:e})"
        )));
    }
    p[n - 1] = 0.0;
    Ok(PressureSolution {
        grid: *grid,
        p,
        v,
        k: k_values.to_vec(),
        c_eps: c,
    })
}

pub fn solve_exact<K>(k: K, source: &SourceTerm, grid: &Grid1D) -> Result<PressureSolution>
where
    K: Fn(f64) -> f64,
{
    let kv: Vec<f64> = grid.nodes().iter().map(|&x| k(x)).collect();
    solve_exact_nodal(&kv, source, grid)
}

/// Exact solve of the two-scale problem `k(x, x/ε)`, enforcing the field
/// bounds and the fast-scale resolution rule.
pub fn solve_two_scale(field: &CoefficientField, eps: f64, source: &SourceTerm, grid: &Grid1D) -> Result<PressureSolution> {
    check_resolution(grid, eps)?;
    let kv = grid
        .nodes()
        .iter()
        .map(|&x| field.eval_two_scale(x, eps))
        .collect::<Result<Vec<_>>>()?;
    solve_exact_nodal(&kv, source, grid)
}

pub fn check_resolution(grid: &Grid1D, eps: f64) -> Result<()> {
    ensure(eps > 0.0, || format!("scale must be positive, got {eps}"))?;
    let required = eps / NODES_PER_PERIOD as f64;
    if grid.spacing() > required * (1.0 + 1e-9) {
        return Err(Error::Resolution {
            spacing: grid.spacing(),
            scale: eps,
            required,
        });
    }
    Ok(())
}

/// Conservative second-order finite differences with harmonic-average face
/// coefficients; a tridiagonal solve on the interior nodes.
pub fn solve_fd_nodal(k_values: &[f64], source: &SourceTerm, grid: &Grid1D) -> Result<PressureSolution> {
    checked_coefficient(grid, k_values)?;
    let n = grid.len();
    let dx = grid.spacing();
    let f = source.values_on(grid);
    let face: Vec<f64> = k_values
        .windows(2)
        .map(|w| 2.0 * w[0] * w[1] / (w[0] + w[1]))
        .collect();

    // Interior unknowns 1..n-1; row i: -face[i-1] p_{i-1} + (face[i-1]+face[i]) p_i - face[i] p_{i+1} = f_i dx².
    let m = n - 2;
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut lower = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    for r in 0..m {
        let i = r + 1;
        diag[r] = face[i - 1] + face[i];
        lower[r] = -face[i - 1];
        upper[r] = -face[i];
        rhs[r] = f[i] * dx * dx;
    }
    let interior = solve_tridiagonal(&lower, &diag, &upper, &rhs)?;
    let mut p = vec![0.0; n];
    p[1..n - 1].copy_from_slice(&interior);

    let face_flux: Vec<f64> = (0..n - 1).map(|i| face[i] * (p[i + 1] - p[i]) / dx).collect();
    let mut v = vec![0.0; n];
    v[0] = face_flux[0] + 0.5 * dx * f[0];
    for i in 1..n - 1 {
        v[i] = 0.5 * (face_flux[i - 1] + face_flux[i]);
    }
    v[n - 1] = face_flux[n - 2] - 0.5 * dx * f[n - 1];
    let big_f = source.antiderivative_on(grid);
    let c_eps = v.iter().zip(&big_f).map(|(v, f)| v + f).sum::<f64>() / n as f64;
    Ok(PressureSolution {
        grid: *grid,
        p,
        v,
        k: k_values.to_vec(),
        c_eps,
    })
}

pub fn solve_fd<K>(k: K, source: &SourceTerm, grid: &Grid1D) -> Result<PressureSolution>
where
    K: Fn(f64) -> f64,
{
    let kv: Vec<f64> = grid.nodes().iter().map(|&x| k(x)).collect();
    solve_fd_nodal(&kv, source, grid)
}

/// Thomas algorithm. `lower[0]` and `upper[m-1]` are ignored.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let m = diag.len();
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    let mut denom = diag[0];
    if denom.abs() < f64::MIN_POSITIVE {
        return Err(Error::Numerical("singular tridiagonal system".into()));
    }
    c[0] = upper[0] / denom;
    d[0] = rhs[0] / denom;
    for i in 1..m {
        denom = diag[i] - lower[i] * c[i - 1];
        if denom.abs() < f64::MIN_POSITIVE {
            return Err(Error::Numerical("singular tridiagonal system".into()));
        }
        c[i] = upper[i] / denom;
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / denom;
    }
    let mut x = vec![0.0; m];
    x[m - 1] = d[m - 1];
    for i in (0..m - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    Ok(x)
}

/// Linear observation functional on pressure fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Functional {
    PointEval { x: f64 },
    /// Mean over `[x - width/2, x + width/2]`.
    LocalAverage { x: f64, width: f64 },
    /// `(p(x + h) - p(x)) / h`; bounded on H¹ but not on L² as `h → 0`.
    DifferenceQuotient { x: f64, h: f64 },
}

impl Functional {
    pub fn kind(&self) -> &'static str {
        match self {
            Functional::PointEval { .. } => "point_eval",
            Functional::LocalAverage { .. } => "local_average",
            Functional::DifferenceQuotient { .. } => "scaled_difference_quotient",
        }
    }

    pub fn location(&self) -> f64 {
        match *self {
            Functional::PointEval { x } | Functional::LocalAverage { x, .. } | Functional::DifferenceQuotient { x, .. } => x,
        }
    }

    /// Width for averages, scale for quotients, 0 for point evaluations.
    pub fn width(&self) -> f64 {
        match *self {
            Functional::PointEval { .. } => 0.0,
            Functional::LocalAverage { width, .. } => width,
            Functional::DifferenceQuotient { h, .. } => h,
        }
    }

    /// Applies the functional to nodal values on `grid`.
    pub fn apply_nodal(&self, grid: &Grid1D, values: &[f64]) -> Result<f64> {
        match *self {
            Functional::PointEval { x } => {
                grid.check_contains(x)?;
                Ok(grid.interpolate(values, x))
            }
            Functional::LocalAverage { x, width } => {
                ensure(width > 0.0, || format!("average width must be positive, got {width}"))?;
                let (lo, hi) = (x - 0.5 * width, x + 0.5 * width);
                grid.check_contains(lo)?;
                grid.check_contains(hi)?;
                Ok(integrate_piecewise_linear(grid, values, lo, hi) / width)
            }
            Functional::DifferenceQuotient { x, h } => {
                ensure(h != 0.0, || "difference quotient needs h != 0".to_string())?;
                grid.check_contains(x)?;
                grid.check_contains(x + h)?;
                Ok((grid.interpolate(values, x + h) - grid.interpolate(values, x)) / h)
            }
        }
    }
}

fn integrate_piecewise_linear(grid: &Grid1D, values: &[f64], lo: f64, hi: f64) -> f64 {
    let (i0, _) = grid.locate(lo);
    let (i1, _) = grid.locate(hi);
    let mut total = 0.0;
    for i in i0..=i1 {
        let l = grid.node(i).max(lo);
        let r = grid.node(i + 1).min(hi);
        if r > l {
            total += 0.5 * (r - l) * (grid.interpolate(values, l) + grid.interpolate(values, r));
        }
    }
    total
}

pub fn apply_functional(functional: &Functional, sol: &PressureSolution) -> Result<f64> {
    functional.apply_nodal(&sol.grid, &sol.p)
}

/// Observed values `y_j = ℓ_j(p) + noise` with diagonal noise covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub functionals: Vec<Functional>,
    pub y: Vec<f64>,
    pub gamma: f64,
}

impl ObservationSet {
    pub fn new(functionals: Vec<Functional>, y: Vec<f64>, gamma: f64) -> Result<Self> {
        ensure(functionals.len() == y.len(), || {
            format!("{} functionals but {} data values", functionals.len(), y.len())
        })?;
        ensure(gamma >= 0.0 && gamma.is_finite(), || format!("noise level must be >= 0, got {gamma}"))?;
        Ok(Self { functionals, y, gamma })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Diagonal of `Γ = γ² I`.
    pub fn covariance_diagonal(&self) -> Vec<f64> {
        vec![self.gamma * self.gamma; self.len()]
    }

    pub fn predict(&self, sol: &PressureSolution) -> Result<Vec<f64>> {
        self.functionals.iter().map(|l| apply_functional(l, sol)).collect()
    }

    /// Reads `functional_kind,location,width,y` rows.
    pub fn read_csv<R: Read>(reader: R, gamma: f64) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["functional_kind", "location", "width", "y"];
        ensure(headers.iter().map(str::trim).eq(expected.iter().copied()), || {
            format!("observation csv header must be {expected:?}, got {headers:?}")
        })?;
        let mut functionals = Vec::new();
        let mut y = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("bad number {:?}: {e}", &rec[i])))
            };
            let (loc, width) = (num(1)?, num(2)?);
            let f = match rec[0].trim() {
                "point_eval" => Functional::PointEval { x: loc },
                "local_average" => Functional::LocalAverage { x: loc, width },
                "scaled_difference_quotient" => Functional::DifferenceQuotient { x: loc, h: width },
                other => return Err(Error::InvalidArgument(format!("unknown functional kind {other:?}"))),
            };
            functionals.push(f);
            y.push(num(3)?);
        }
        Self::new(functionals, y, gamma)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["functional_kind", "location", "width", "y"])?;
        for (l, y) in self.functionals.iter().zip(&self.y) {
            out.write_record([l.kind().to_string(), fmt_f64(l.location()), fmt_f64(l.width()), fmt_f64(*y)])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Kernel `Q(x, y) = 1_{y<x} - h(x)/h(b)` with `h(x) = ∫ₐˣ k₀⁻¹`.
///
/// `Q(x, y) v₀(y)` is the first-order response of `p(x)` to a unit
/// perturbation of `1/k₀` concentrated at `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct GreensKernel {
    grid: Grid1D,
    h: Vec<f64>,
}

impl GreensKernel {
    pub fn from_nodal(k0_values: &[f64], grid: &Grid1D) -> Result<Self> {
        checked_coefficient(grid, k0_values)?;
        let recip: Vec<f64> = k0_values.iter().map(|k| 1.0 / k).collect();
        Ok(Self {
            grid: *grid,
            h: cumulative_trapezoid(&recip, grid.spacing()),
        })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    /// `h(x)/h(b)`.
    pub fn ratio(&self, x: f64) -> f64 {
        self.grid.interpolate(&self.h, x) / self.h[self.h.len() - 1]
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let step = if y < x { 1.0 } else { 0.0 };
        step - self.ratio(x)
    }

    /// Rows indexed by `xs`, columns by `ys`.
    pub fn matrix(&self, xs: &[f64], ys: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|&x| ys.iter().map(|&y| self.eval(x, y)).collect()).collect()
    }
}

pub fn greens_kernel<K>(k0: K, grid: &Grid1D) -> Result<GreensKernel>
where
    K: Fn(f64) -> f64,
{
    let kv: Vec<f64> = grid.nodes().iter().map(|&x| k0(x)).collect();
    GreensKernel::from_nodal(&kv, grid)
}

/// `(|p₁ - p₂|_{H¹}, |u₁ - u₂|)` for scalar log-coefficients `k = exp(u)`.
pub fn lipschitz_probe(u1: f64, u2: f64, source: &SourceTerm, grid: &Grid1D) -> Result<(f64, f64)> {
    let (k1, k2) = (u1.exp(), u2.exp());
    let s1 = solve_exact(|_| k1, source, grid)?;
    let s2 = solve_exact(|_| k2, source, grid)?;
    let diff: Vec<f64> = s1
        .gradient()
        .iter()
        .zip(s2.gradient())
        .map(|(a, b)| (a - b).powi(2))
        .collect();
    Ok((trapezoid(&diff, grid.spacing()).sqrt(), (u1 - u2).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid01(n: usize) -> Grid1D {
        Grid1D::new(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn constant_poisson_closed_forms() {
        let f = SourceTerm::constant(1.0);
        let s = solve_exact(|_| 1.0, &f, &grid01(101)).unwrap();
        assert_abs_diff_eq!(s.value_at(0.5), 0.125, epsilon = 1e-14);
        assert_eq!(s.p[0], 0.0);
        assert_eq!(s.p[100], 0.0);

        let g = Grid1D::new(-1.0, 1.0, 201).unwrap();
        let s = solve_exact(|_| 1.0, &f, &g).unwrap();
        assert_abs_diff_eq!(s.value_at(0.0), 0.5, epsilon = 1e-14);

        let s = solve_exact(|_| 2.0, &f, &grid01(101)).unwrap();
        assert_abs_diff_eq!(s.value_at(0.5), 0.0625, epsilon = 1e-14);
    }

    #[test]
    fn flux_identity_holds_at_every_node() {
        let f = SourceTerm::new(|x: f64| 1.0 + x * x);
        let g = grid01(513);
        let s = solve_exact(|x| (3.0 * (40.0 * x).sin()).exp(), &f, &g).unwrap();
        let big_f = f.antiderivative_on(&g);
        for (v, bf) in s.v.iter().zip(&big_f) {
            assert!((v + bf - s.c_eps).abs() <= 1e-10 * s.c_eps.abs().max(1.0));
        }
    }

    #[test]
    fn nonpositive_coefficient_is_rejected() {
        let f = SourceTerm::constant(1.0);
        let r = solve_exact(|x| x - 0.5, &f, &grid01(11));
        assert!(matches!(r, Err(Error::Coefficient { .. })));
    }

    #[test]
    fn two_scale_solve_needs_resolution() {
        let field = CoefficientField::sinusoidal(1.0, (0.0, 1.0)).unwrap();
        let f = SourceTerm::constant(1.0);
        let coarse = grid01(101);
        assert!(matches!(solve_two_scale(&field, 1.0 / 16.0, &f, &coarse), Err(Error::Resolution { .. })));
        let fine = grid01(257);
        assert!(solve_two_scale(&field, 1.0 / 16.0, &f, &fine).is_ok());
    }

    #[test]
    fn fd_constant_case_and_boundary_rows() {
        let f = SourceTerm::constant(1.0);
        let s = solve_fd(|_| 1.0, &f, &grid01(201)).unwrap();
        assert_abs_diff_eq!(s.value_at(0.5), 0.125, epsilon = 1e-5);
        assert_eq!(s.p[0], 0.0);
        assert_eq!(s.p[200], 0.0);
    }

    #[test]
    fn functionals_on_closed_form_pressure() {
        let f = SourceTerm::constant(1.0);
        let s = solve_exact(|_| 1.0, &f, &grid01(4001)).unwrap();
        let v = apply_functional(&Functional::PointEval { x: 0.25 }, &s).unwrap();
        assert_abs_diff_eq!(v, 0.09375, epsilon = 1e-14);
        let d = apply_functional(&Functional::DifferenceQuotient { x: 0.25, h: 1e-3 }, &s).unwrap();
        assert!((d - 0.25).abs() <= 1e-3);
        let avg = apply_functional(&Functional::LocalAverage { x: 0.5, width: 0.2 }, &s).unwrap();
        // (1/w)∫ x(1-x)/2 over [0.4, 0.6]
        let exact = ((0.6f64.powi(2) / 4.0 - 0.6f64.powi(3) / 6.0) - (0.4f64.powi(2) / 4.0 - 0.4f64.powi(3) / 6.0)) / 0.2;
        assert_abs_diff_eq!(avg, exact, epsilon = 1e-6);
        assert!(matches!(
            apply_functional(&Functional::LocalAverage { x: 0.95, width: 0.2 }, &s),
            Err(Error::Domain { .. })
        ));
        assert!(apply_functional(&Functional::DifferenceQuotient { x: 0.99, h: 0.05 }, &s).is_err());
    }

    #[test]
    fn local_average_of_constant_is_constant() {
        let g = grid01(33);
        let vals = vec![2.5; 33];
        let avg = Functional::LocalAverage { x: 0.41, width: 0.13 }.apply_nodal(&g, &vals).unwrap();
        assert_abs_diff_eq!(avg, 2.5, epsilon = 1e-14);
    }

    #[test]
    fn greens_kernel_unit_coefficient() {
        let q = greens_kernel(|_| 1.0, &grid01(101)).unwrap();
        assert_abs_diff_eq!(q.eval(0.5, 0.25), 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(q.eval(0.25, 0.5), -0.25, epsilon = 1e-14);
        for &y in &[0.1, 0.5, 0.9] {
            assert_abs_diff_eq!(q.eval(0.0, y), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn observation_csv_round_trip() {
        let obs = ObservationSet::new(
            vec![
                Functional::PointEval { x: 0.25 },
                Functional::LocalAverage { x: 0.5, width: 0.1 },
                Functional::DifferenceQuotient { x: 0.6, h: 0.01 },
            ],
            vec![0.1, 0.2, -0.3],
            0.01,
        )
        .unwrap();
        let mut buf = Vec::new();
        obs.write_csv(&mut buf).unwrap();
        let back = ObservationSet::read_csv(buf.as_slice(), 0.01).unwrap();
        assert_eq!(back, obs);
        assert!(ObservationSet::read_csv("a,b\n1,2\n".as_bytes(), 0.1).is_err());
        assert!(ObservationSet::new(vec![], vec![1.0], 0.1).is_err());
    }

    #[test]
    fn lipschitz_probe_identical_inputs() {
        let f = SourceTerm::constant(1.0);
        let (d, du) = lipschitz_probe(0.3, 0.3, &f, &grid01(101)).unwrap();
        assert_eq!(d, 0.0);
        assert_eq!(du, 0.0);
    }
}
