//! Uniform 1-D grids, grid functions and the quadrature they carry.
//!
//! Every integral in the crate is a trapezoid sum on one of these grids, so
//! inner products, norms and adjoints are all taken with respect to the same
//! weights and stay mutually consistent.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform partition of `[lo, hi]` into `n - 1` cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    n: usize,
    lo: f64,
    hi: f64,
}

impl Grid1D {
    pub fn new(n: usize, lo: f64, hi: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 nodes, got {n}")));
        }
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidGrid(format!("non-finite endpoints [{lo}, {hi}]")));
        }
        if hi <= lo {
            return Err(Error::InvalidGrid(format!("empty interval [{lo}, {hi}]")));
        }
        Ok(Self { n, lo, hi })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    /// The `i`-th node. The last node is `hi` exactly.
    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.hi
        } else {
            self.lo + i as f64 * self.spacing()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    /// Trapezoid weights: `h` in the interior, `h/2` at both ends.
    pub fn weights(&self) -> Vec<f64> {
        let h = self.spacing();
        let mut w = vec![h; self.n];
        w[0] = 0.5 * h;
        w[self.n - 1] = 0.5 * h;
        w
    }

    /// Cell index and fractional position of `x`, or `None` outside `[lo, hi]`.
    pub fn locate(&self, x: f64) -> Option<(usize, f64)> {
        if !(x >= self.lo && x <= self.hi) {
            return None;
        }
        let mut s = (x - self.lo) / self.spacing();
        // snap round-off so that nodes evaluate to their tabulated values
        if (s - s.round()).abs() < 1e-10 {
            s = s.round();
        }
        let i = (s.floor() as usize).min(self.n - 2);
        Some((i, s - i as f64))
    }

    /// Same grid with both endpoints moved by `shift`.
    pub fn shifted(&self, shift: f64) -> Result<Self> {
        Self::new(self.n, self.lo + shift, self.hi + shift)
    }

    pub fn approx_eq(&self, other: &Grid1D) -> bool {
        let tol = 1e-12 * (self.hi - self.lo).abs().max(1.0);
        self.n == other.n && (self.lo - other.lo).abs() <= tol && (self.hi - other.hi).abs() <= tol
    }

    pub(crate) fn check_same(&self, other: &Grid1D) -> Result<()> {
        if self.approx_eq(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "({}, {}, {}) vs ({}, {}, {})",
                self.n, self.lo, self.hi, other.n, other.lo, other.hi
            )))
        }
    }
}

/// Convenience wrapper matching the other free-function entry points.
pub fn make_grid(n: usize, lo: f64, hi: f64) -> Result<Grid1D> {
    Grid1D::new(n, lo, hi)
}

/// A real function sampled on the nodes of a [`Grid1D`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFn {
    grid: Grid1D,
    values: Vec<f64>,
}

impl GridFn {
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a {}-node grid",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("grid function value at node {i}")));
        }
        Ok(Self { grid, values })
    }

    /// Builds from values that are finite by construction.
    pub(crate) fn from_vec_unchecked(grid: Grid1D, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn from_fn(grid: Grid1D, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.nodes().into_iter().map(f).collect())
    }

    pub fn constant(grid: Grid1D, c: f64) -> Result<Self> {
        Self::new(grid, vec![c; grid.len()])
    }

    pub fn zeros(grid: Grid1D) -> Self {
        Self { grid, values: vec![0.0; grid.len()] }
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.grid, self.values.iter().copied().map(f).collect())
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &GridFn) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Self::new(
            self.grid,
            self.values.iter().zip(&other.values).map(|(x, y)| x + a * y).collect(),
        )
    }

    pub fn sub(&self, other: &GridFn) -> Result<Self> {
        self.axpy(-1.0, other)
    }

    pub fn scale(&self, a: f64) -> Result<Self> {
        self.map(|v| a * v)
    }

    /// Trapezoid integral over the grid window.
    pub fn integral(&self) -> f64 {
        self.grid.weights().iter().zip(&self.values).map(|(w, v)| w * v).sum()
    }

    /// Norm induced by [`inner_product`].
    pub fn norm(&self) -> f64 {
        weighted_dot(&self.grid.weights(), &self.values, &self.values).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Piecewise-linear interpolation, zero outside the window.
    pub fn eval(&self, x: f64) -> f64 {
        interp_linear(&self.grid, &self.values, x)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["x", "value"])?;
        for (i, v) in self.values.iter().enumerate() {
            wtr.write_record([fmt_f64(self.grid.node(i)), fmt_f64(*v)])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Reads the `x,value` format written by [`GridFn::write_csv`]. The nodes
    /// must be uniform to within a relative `1e-9` of the spacing.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "x" || &headers[1] != "value" {
            return Err(Error::Parse(format!("expected header `x,value`, got {headers:?}")));
        }
        let mut xs = Vec::new();
        let mut vs = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: {e}", line + 2)))
            };
            xs.push(parse(&rec[0])?);
            vs.push(parse(&rec[1])?);
        }
        if xs.len() < 2 {
            return Err(Error::Parse("grid function needs at least two rows".into()));
        }
        let grid = Grid1D::new(xs.len(), xs[0], xs[xs.len() - 1])?;
        let h = grid.spacing();
        for (i, x) in xs.iter().enumerate() {
            if (x - grid.node(i)).abs() > 1e-9 * h {
                return Err(Error::Parse(format!("non-uniform node {x} at row {}", i + 2)));
            }
        }
        Self::new(grid, vs)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Trapezoid approximation of the integral of `f * g`.
pub fn inner_product(f: &GridFn, g: &GridFn) -> Result<f64> {
    f.grid.check_same(&g.grid)?;
    Ok(weighted_dot(&f.grid.weights(), &f.values, &g.values))
}

pub(crate) fn weighted_dot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, a), b)| w * (a * b)).sum()
}

/// Piecewise-linear interpolation of nodal values, zero off the window.
pub fn interp_eval(f: &GridFn, x: f64) -> f64 {
    f.eval(x)
}

pub(crate) fn interp_linear(grid: &Grid1D, values: &[f64], x: f64) -> f64 {
    match grid.locate(x) {
        Some((i, t)) => (1.0 - t) * values[i] + t * values[i + 1],
        None => 0.0,
    }
}

/// Running trapezoid integral from `lo`.
pub fn cumtrapz(f: &GridFn) -> GridFn {
    GridFn::from_vec_unchecked(f.grid, cumtrapz_slice(&f.values, f.grid.spacing()))
}

pub(crate) fn cumtrapz_slice(values: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in values.windows(2) {
        acc += 0.5 * h * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

/// Element of the product space `L2(u-grid) (+) R`.
#[derive(Debug, Clone, PartialEq)]
pub struct CodomainElem {
    pub ufun: GridFn,
    pub scalar: f64,
}

impl CodomainElem {
    pub fn new(ufun: GridFn, scalar: f64) -> Result<Self> {
        if !scalar.is_finite() {
            return Err(Error::NonFinite("codomain scalar row".into()));
        }
        Ok(Self { ufun, scalar })
    }

    pub fn zeros(grid: Grid1D) -> Self {
        Self { ufun: GridFn::zeros(grid), scalar: 0.0 }
    }

    /// Inner product with the scalar row weighted by `scalar_weight`.
    pub fn dot(&self, other: &CodomainElem, scalar_weight: f64) -> Result<f64> {
        Ok(inner_product(&self.ufun, &other.ufun)? + scalar_weight * self.scalar * other.scalar)
    }

    pub fn axpy(&self, a: f64, other: &CodomainElem) -> Result<Self> {
        Self::new(self.ufun.axpy(a, &other.ufun)?, self.scalar + a * other.scalar)
    }

    pub fn scale(&self, a: f64) -> Result<Self> {
        Self::new(self.ufun.scale(a)?, a * self.scalar)
    }

    pub fn is_finite(&self) -> bool {
        self.scalar.is_finite() && self.ufun.values.iter().all(|v| v.is_finite())
    }
}

/// `sqrt(<ufun, ufun> + scalar^2)`: the unweighted direct-sum norm.
pub fn codomain_norm(y: &CodomainElem) -> f64 {
    codomain_norm_weighted(y, 1.0)
}

pub fn codomain_norm_weighted(y: &CodomainElem, scalar_weight: f64) -> f64 {
    (y.ufun.norm().powi(2) + scalar_weight * y.scalar * y.scalar).sqrt()
}

/// Full-precision (17 significant digit) text form used by every CSV writer.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit(n: usize) -> Grid1D {
        Grid1D::new(n, 0.0, 1.0).unwrap()
    }

    #[test]
    fn make_grid_nodes() {
        let g = make_grid(3, 0.0, 1.0).unwrap();
        assert_eq!(g.nodes(), vec![0.0, 0.5, 1.0]);
        let g = make_grid(256, 0.0, 1.0).unwrap();
        assert_relative_eq!(g.spacing(), 1.0 / 255.0, max_relative = 1e-15);
        assert_eq!(g.node(255), 1.0);
        let g = make_grid(2, -1.0, 1.0).unwrap();
        assert_eq!(g.nodes(), vec![-1.0, 1.0]);
    }

    #[test]
    fn make_grid_rejects_bad_input() {
        assert!(make_grid(1, 0.0, 1.0).is_err());
        assert!(make_grid(5, 1.0, 1.0).is_err());
        assert!(make_grid(5, 2.0, 1.0).is_err());
        assert!(make_grid(5, 0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn inner_product_examples() {
        let g = unit(256);
        let zero = GridFn::zeros(g);
        let x = GridFn::from_fn(g, |x| x).unwrap();
        assert_eq!(inner_product(&zero, &x).unwrap(), 0.0);
        let one = GridFn::constant(g, 1.0).unwrap();
        assert_relative_eq!(inner_product(&one, &one).unwrap(), 1.0, max_relative = 1e-14);
        // closed form: int_0^1 x^2 dx = 1/3
        assert!((inner_product(&x, &x).unwrap() - 1.0 / 3.0).abs() < 1e-4);
    }

    #[test]
    fn inner_product_grid_mismatch() {
        let a = GridFn::zeros(unit(10));
        let b = GridFn::zeros(unit(11));
        assert!(matches!(inner_product(&a, &b), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn codomain_norm_examples() {
        let g = unit(256);
        assert_eq!(codomain_norm(&CodomainElem::zeros(g)), 0.0);
        let y = CodomainElem::new(GridFn::zeros(g), 3.0).unwrap();
        assert_eq!(codomain_norm(&y), 3.0);
        let y = CodomainElem::new(GridFn::constant(g, 1.0).unwrap(), 0.0).unwrap();
        assert_relative_eq!(codomain_norm(&y), 1.0, max_relative = 1e-14);
    }

    #[test]
    fn interp_examples() {
        let f = GridFn::new(Grid1D::new(2, 0.0, 1.0).unwrap(), vec![0.0, 1.0]).unwrap();
        assert_eq!(interp_eval(&f, 0.25), 0.25);
        assert_eq!(interp_eval(&f, 2.0), 0.0);
        assert_eq!(interp_eval(&f, -0.1), 0.0);
        let g = Grid1D::new(17, -2.0, 3.0).unwrap();
        let f = GridFn::from_fn(g, |x| x.sin()).unwrap();
        for i in 0..17 {
            assert_eq!(interp_eval(&f, g.node(i)), f.values()[i]);
        }
    }

    #[test]
    fn cumtrapz_examples() {
        let g = unit(101);
        let z = cumtrapz(&GridFn::zeros(g));
        assert!(z.values().iter().all(|&v| v == 0.0));
        let c = cumtrapz(&GridFn::constant(g, 1.0).unwrap());
        for (i, v) in c.values().iter().enumerate() {
            assert!((v - g.node(i)).abs() < 1e-12);
        }
    }

    #[test]
    fn cumtrapz_normal_density_matches_erf() {
        let g = Grid1D::new(401, -3.0, 2.5).unwrap();
        let pdf = GridFn::from_fn(g, |x| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt())
            .unwrap();
        let cdf = cumtrapz(&pdf);
        let phi = |x: f64| 0.5 * (1.0 + statrs::function::erf::erf(x / std::f64::consts::SQRT_2));
        let mass = phi(2.5) - phi(-3.0);
        assert!((cdf.values()[400] - mass).abs() < 1e-4);
        // monotone for a non-negative integrand
        assert!(cdf.values().windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn cumtrapz_difference_recovers_midpoint_average() {
        for n in [65usize, 129, 257] {
            let g = unit(n);
            let f = GridFn::from_fn(g, |x| (3.0 * x).cos() + x * x).unwrap();
            let c = cumtrapz(&f);
            let h = g.spacing();
            let err = (0..n - 1)
                .map(|i| {
                    let d = (c.values()[i + 1] - c.values()[i]) / h;
                    let mid = g.node(i) + 0.5 * h;
                    (d - ((3.0 * mid).cos() + mid * mid)).abs()
                })
                .fold(0.0, f64::max);
            assert!(err < 2.0 * h * h, "n={n} err={err}");
        }
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let g = Grid1D::new(33, -0.3, 1.7).unwrap();
        let f = GridFn::from_fn(g, |x| (7.0 * x).exp().sin() / 3.0).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x,value\n"));
        let back = GridFn::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.values(), f.values());
        assert!(back.grid().approx_eq(f.grid()));
    }

    #[test]
    fn csv_rejects_bad_header() {
        assert!(GridFn::read_csv("a,b\n0,1\n1,2\n".as_bytes()).is_err());
        assert!(GridFn::read_csv("x,value\n0,1\n0.7,2\n1,3\n".as_bytes()).is_err());
    }

    fn vals(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, n)
    }

    proptest! {
        #[test]
        fn inner_product_symmetric_and_bilinear(
            f in vals(24), g in vals(24), h in vals(24), a in -5.0f64..5.0, b in -5.0f64..5.0
        ) {
            let grid = Grid1D::new(24, -1.0, 2.0).unwrap();
            let f = GridFn::new(grid, f).unwrap();
            let g = GridFn::new(grid, g).unwrap();
            let h = GridFn::new(grid, h).unwrap();
            prop_assert_eq!(inner_product(&f, &g).unwrap(), inner_product(&g, &f).unwrap());
            let lhs = inner_product(&f.scale(a).unwrap().axpy(b, &g).unwrap(), &h).unwrap();
            let rhs = a * inner_product(&f, &h).unwrap() + b * inner_product(&g, &h).unwrap();
            let scale = (a.abs() * f.norm() + b.abs() * g.norm()) * h.norm() + 1e-300;
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);
        }

        #[test]
        fn codomain_norm_parallelogram(
            f in vals(16), g in vals(16), s in -10.0f64..10.0, t in -10.0f64..10.0
        ) {
            let grid = Grid1D::new(16, 0.0, 1.0).unwrap();
            let x = CodomainElem::new(GridFn::new(grid, f).unwrap(), s).unwrap();
            let y = CodomainElem::new(GridFn::new(grid, g).unwrap(), t).unwrap();
            let sum = codomain_norm(&x.axpy(1.0, &y).unwrap()).powi(2);
            let diff = codomain_norm(&x.axpy(-1.0, &y).unwrap()).powi(2);
            let rhs = 2.0 * codomain_norm(&x).powi(2) + 2.0 * codomain_norm(&y).powi(2);
            prop_assert!((sum + diff - rhs).abs() <= 1e-10 * rhs.max(1e-300));
        }
    }
}
