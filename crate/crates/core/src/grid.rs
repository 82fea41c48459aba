//! Uniform 1D grids and the composite trapezoid quadrature used throughout.

use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    a: f64,
    b: f64,
    n: usize,
}

impl Grid1D {
    pub fn new(a: f64, b: f64, n: usize) -> Result<Self> {
        ensure(a.is_finite() && b.is_finite() && a < b, || {
            format!("grid endpoints must satisfy a < b, got [{a}, {b}]")
        })?;
        ensure(n >= 3, || format!("grid needs at least 3 nodes, got {n}"))?;
        Ok(Self { a, b, n })
    }

    /// Smallest grid on `[a, b]` with at least `per_period` nodes per
    /// length `scale`.
    pub fn resolving(a: f64, b: f64, scale: f64, per_period: usize) -> Result<Self> {
        ensure(scale > 0.0 && per_period > 0, || {
            format!("invalid resolution request scale={scale}, per_period={per_period}")
        })?;
        let cells = ((b - a) / scale * per_period as f64 - 1e-9).ceil().max(2.0) as usize;
        Self::new(a, b, cells + 1)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn length(&self) -> f64 {
        self.b - self.a
    }

    pub fn spacing(&self) -> f64 {
        (self.b - self.a) / (self.n - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.b
        } else {
            self.a + i as f64 * self.spacing()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.a && x <= self.b
    }

    pub fn check_contains(&self, x: f64) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain {
                x,
                a: self.a,
                b: self.b,
            })
        }
    }

    /// Cell index `i` and local coordinate `t ∈ [0, 1]` with
    /// `x = (1 - t) x_i + t x_{i+1}`.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let s = ((x - self.a) / self.spacing()).clamp(0.0, (self.n - 1) as f64);
        let i = (s.floor() as usize).min(self.n - 2);
        (i, s - i as f64)
    }

    /// Piecewise-linear interpolation of nodal values.
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        debug_assert_eq!(values.len(), self.n);
        let (i, t) = self.locate(x);
        values[i] + t * (values[i + 1] - values[i])
    }

    /// Refinement with every cell split in two.
    pub fn refined(&self) -> Self {
        Self {
            a: self.a,
            b: self.b,
            n: 2 * self.n - 1,
        }
    }
}

pub fn trapezoid(values: &[f64], dx: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => {
            let inner: f64 = values[1..n - 1].iter().sum();
            dx * (inner + 0.5 * (values[0] + values[n - 1]))
        }
    }
}

/// Running trapezoid integral; element `i` is the integral up to node `i`.
pub fn cumulative_trapezoid(values: &[f64], dx: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in values.windows(2) {
        acc += 0.5 * dx * (w[0] + w[1]);
        out.push(acc);
    }
    out.truncate(values.len());
    out
}

/// Second-order nodal derivative: central in the interior, one-sided
/// three-point at the ends.
pub fn derivative(values: &[f64], dx: f64) -> Vec<f64> {
    let n = values.len();
    assert!(n >= 3, "derivative needs at least 3 nodes");
    let mut d = vec![0.0; n];
    d[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * dx);
    for i in 1..n - 1 {
        d[i] = (values[i + 1] - values[i - 1]) / (2.0 * dx);
    }
    d[n - 1] = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * dx);
    d
}

pub fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rejects_degenerate_grids() {
        assert!(Grid1D::new(0.0, 1.0, 2).is_err());
        assert!(Grid1D::new(1.0, 1.0, 10).is_err());
        assert!(Grid1D::new(0.0, f64::NAN, 10).is_err());
    }

    #[test]
    fn nodes_are_uniform_and_hit_endpoints() {
        let g = Grid1D::new(-1.0, 1.0, 11).unwrap();
        let x = g.nodes();
        assert_eq!(x[0], -1.0);
        assert_eq!(x[10], 1.0);
        for w in x.windows(2) {
            assert_abs_diff_eq!(w[1] - w[0], 0.2, epsilon = 1e-15);
        }
    }

    #[test]
    fn resolving_grid_meets_node_count() {
        let g = Grid1D::resolving(0.0, 1.0, 1.0 / 16.0, 16).unwrap();
        assert_eq!(g.len(), 257);
        assert!(g.spacing() <= 1.0 / 256.0 + 1e-15);
    }

    #[test]
    fn trapezoid_is_exact_for_linear() {
        let g = Grid1D::new(0.0, 2.0, 5).unwrap();
        let v: Vec<f64> = g.nodes().iter().map(|x| 3.0 * x + 1.0).collect();
        assert_abs_diff_eq!(trapezoid(&v, g.spacing()), 8.0, epsilon = 1e-14);
        let c = cumulative_trapezoid(&v, g.spacing());
        assert_abs_diff_eq!(c[2], 2.5, epsilon = 1e-14);
        assert_eq!(c.len(), 5);
    }

    #[test]
    fn interpolation_reproduces_linear_functions() {
        let g = Grid1D::new(0.0, 1.0, 9).unwrap();
        let v: Vec<f64> = g.nodes().iter().map(|x| 2.0 - x).collect();
        for &x in &[0.0, 0.13, 0.5, 0.999, 1.0] {
            assert_abs_diff_eq!(g.interpolate(&v, x), 2.0 - x, epsilon = 1e-14);
        }
    }

    #[test]
    fn derivative_is_exact_for_quadratics() {
        let g = Grid1D::new(0.0, 1.0, 7).unwrap();
        let v: Vec<f64> = g.nodes().iter().map(|x| x * x).collect();
        let d = derivative(&v, g.spacing());
        for (x, dv) in g.nodes().iter().zip(&d) {
            assert_abs_diff_eq!(*dv, 2.0 * x, epsilon = 1e-12);
        }
    }
}
