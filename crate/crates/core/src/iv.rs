//! Forward operators of instrumental regression with a binary instrument.
//!
//! The joint density `f(y, z, w)` is tabulated on a `y x z` grid for each of
//! the two instrument levels. Operators evaluate it off-grid along the curves
//! `y = u + phi(z)` (independence formulation) or `y = phi(z)` (quantile
//! formulation).
//!
//! Off-grid evaluation in `y` uses interpolants whose exact `y`-derivative is
//! the kernel of the operator's derivative, so `deriv_apply` is the true
//! derivative of the discrete `apply`:
//!
//! * CDF values: the antiderivative of the piecewise-linear density, a
//!   piecewise quadratic that agrees with the cumulative trapezoid table at
//!   the nodes. Below the window it is 0, above it the total mass.
//! * Density values: cubic Hermite interpolation of the nodal values and the
//!   central-difference slopes. Zero outside the window.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{cumtrapz_slice, fmt_f64, CodomainElem, Grid1D, GridFn};
use crate::irgnm::{DenseLinearization, ForwardModel, Linearization};

/// Relative tolerance on the total mass of a tabulated density.
pub const MASS_TOLERANCE: f64 = 0.02;

/// `f(y, z, w)` on `y_grid x z_grid x {0, 1}` with cached `d/dy f` and the
/// running `y`-integral `G`.
#[derive(Debug, Clone)]
pub struct JointDensityGrid {
    y_grid: Grid1D,
    z_grid: Grid1D,
    // per level, z-major: index iz * ny + iy
    f: [Vec<f64>; 2],
    dfy: [Vec<f64>; 2],
    cdf: [Vec<f64>; 2],
    w0: f64,
    fz: GridFn,
    ey: f64,
}

impl JointDensityGrid {
    /// `f0`, `f1` are z-major (`iz * ny + iy`). `w0` is the probability of
    /// the level `w = 0`; `fz` and `ey` are the marginal density of `Z` and
    /// the mean of `Y` used by the mean constraint.
    pub fn new(
        y_grid: Grid1D,
        z_grid: Grid1D,
        f0: Vec<f64>,
        f1: Vec<f64>,
        w0: f64,
        fz: GridFn,
        ey: f64,
    ) -> Result<Self> {
        let (ny, nz) = (y_grid.len(), z_grid.len());
        for (w, f) in [&f0, &f1].into_iter().enumerate() {
            if f.len() != ny * nz {
                return Err(Error::GridMismatch(format!("level {w}: {} values for {ny} x {nz}", f.len())));
            }
            if let Some(i) = f.iter().position(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Domain(format!("level {w}: density value {} at index {i}", f[i])));
            }
        }
        if !(w0 > 0.0 && w0 < 1.0) {
            return Err(Error::Domain(format!("w0 must lie in (0, 1), got {w0}")));
        }
        z_grid.check_same(fz.grid())?;
        if fz.values().iter().any(|v| *v < 0.0) {
            return Err(Error::Domain("marginal density of Z has negative values".into()));
        }
        if (fz.integral() - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Domain(format!("marginal density of Z has mass {}", fz.integral())));
        }
        if !ey.is_finite() {
            return Err(Error::NonFinite("mean of Y".into()));
        }
        let h = y_grid.spacing();
        let derive = |f: &[f64]| -> Vec<f64> {
            let mut d = vec![0.0; f.len()];
            for (col, dcol) in f.chunks(ny).zip(d.chunks_mut(ny)) {
                dcol[0] = (col[1] - col[0]) / h;
                dcol[ny - 1] = (col[ny - 1] - col[ny - 2]) / h;
                for i in 1..ny - 1 {
                    dcol[i] = (col[i + 1] - col[i - 1]) / (2.0 * h);
                }
            }
            d
        };
        let integrate = |f: &[f64]| -> Vec<f64> { f.chunks(ny).flat_map(|col| cumtrapz_slice(col, h)).collect() };
        let dfy = [derive(&f0), derive(&f1)];
        let cdf = [integrate(&f0), integrate(&f1)];
        let out = Self { y_grid, z_grid, f: [f0, f1], dfy, cdf, w0, fz, ey };
        let total = out.mass(0) + out.mass(1);
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Domain(format!("joint density has total mass {total}")));
        }
        Ok(out)
    }

    pub fn y_grid(&self) -> &Grid1D {
        &self.y_grid
    }

    pub fn z_grid(&self) -> &Grid1D {
        &self.z_grid
    }

    pub fn w0(&self) -> f64 {
        self.w0
    }

    pub fn w1(&self) -> f64 {
        1.0 - self.w0
    }

    pub fn level_weight(&self, w: usize) -> f64 {
        if w == 0 {
            self.w0
        } else {
            self.w1()
        }
    }

    pub fn fz(&self) -> &GridFn {
        &self.fz
    }

    pub fn ey(&self) -> f64 {
        self.ey
    }

    /// Density values along `y` at the `iz`-th z-node.
    pub fn f_col(&self, w: usize, iz: usize) -> &[f64] {
        let ny = self.y_grid.len();
        &self.f[w][iz * ny..(iz + 1) * ny]
    }

    pub fn dfy_col(&self, w: usize, iz: usize) -> &[f64] {
        let ny = self.y_grid.len();
        &self.dfy[w][iz * ny..(iz + 1) * ny]
    }

    pub fn cdf_col(&self, w: usize, iz: usize) -> &[f64] {
        let ny = self.y_grid.len();
        &self.cdf[w][iz * ny..(iz + 1) * ny]
    }

    pub fn value(&self, w: usize, iy: usize, iz: usize) -> f64 {
        self.f[w][iz * self.y_grid.len() + iy]
    }

    /// `int int f(y, z, w) dy dz` on the grid.
    pub fn mass(&self, w: usize) -> f64 {
        let ny = self.y_grid.len();
        self.z_grid
            .weights()
            .iter()
            .enumerate()
            .map(|(iz, wz)| wz * self.cdf[w][iz * ny + ny - 1])
            .sum()
    }

    /// Piecewise-linear density at `(y, z_iz, w)`, zero off the window.
    pub fn pdf_linear(&self, w: usize, iz: usize, y: f64) -> f64 {
        let col = self.f_col(w, iz);
        match self.y_grid.locate(y) {
            Some((i, t)) => (1.0 - t) * col[i] + t * col[i + 1],
            None => 0.0,
        }
    }

    /// Exact antiderivative of [`Self::pdf_linear`]; matches the cumulative
    /// trapezoid table at the nodes.
    pub fn cdf_interp(&self, w: usize, iz: usize, y: f64) -> f64 {
        let col = self.f_col(w, iz);
        let g = self.cdf_col(w, iz);
        if y <= self.y_grid.lo() {
            return 0.0;
        }
        match self.y_grid.locate(y) {
            Some((i, t)) => {
                let h = self.y_grid.spacing();
                g[i] + h * t * (col[i] + 0.5 * t * (col[i + 1] - col[i]))
            }
            None => g[g.len() - 1],
        }
    }

    /// Cubic Hermite interpolant of the density and its exact `y`-derivative.
    pub fn pdf_hermite(&self, w: usize, iz: usize, y: f64) -> (f64, f64) {
        let Some((i, t)) = self.y_grid.locate(y) else {
            return (0.0, 0.0);
        };
        let h = self.y_grid.spacing();
        let f = self.f_col(w, iz);
        let d = self.dfy_col(w, iz);
        let (t2, t3) = (t * t, t * t * t);
        let value = (2.0 * t3 - 3.0 * t2 + 1.0) * f[i]
            + (t3 - 2.0 * t2 + t) * h * d[i]
            + (-2.0 * t3 + 3.0 * t2) * f[i + 1]
            + (t3 - t2) * h * d[i + 1];
        let slope = ((6.0 * t2 - 6.0 * t) * f[i]
            + (3.0 * t2 - 4.0 * t + 1.0) * h * d[i]
            + (-6.0 * t2 + 6.0 * t) * f[i + 1]
            + (3.0 * t2 - 2.0 * t) * h * d[i + 1])
            / h;
        (value, slope)
    }

    /// Writes `header.json` plus one CSV block per level (`f_w0.csv`,
    /// `f_w1.csv`), rows indexed by `y`, columns by `z`.
    pub fn write_bundle(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let header = DensityHeader {
            y_grid: self.y_grid,
            z_grid: self.z_grid,
            w0: self.w0,
            w1: self.w1(),
            ey: self.ey,
            fz: self.fz.values().to_vec(),
        };
        std::fs::write(dir.join("header.json"), serde_json::to_string_pretty(&header)?)?;
        for w in 0..2 {
            self.write_level_csv(w, std::fs::File::create(dir.join(format!("f_w{w}.csv")))?)?;
        }
        Ok(())
    }

    fn write_level_csv<W: Write>(&self, w: usize, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut head = vec!["y".to_string()];
        head.extend(self.z_grid.nodes().into_iter().map(fmt_f64));
        wtr.write_record(&head)?;
        for iy in 0..self.y_grid.len() {
            let mut row = vec![fmt_f64(self.y_grid.node(iy))];
            row.extend((0..self.z_grid.len()).map(|iz| fmt_f64(self.value(w, iy, iz))));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_bundle(dir: &Path) -> Result<Self> {
        let header: DensityHeader = serde_json::from_str(&std::fs::read_to_string(dir.join("header.json"))?)?;
        let (ny, nz) = (header.y_grid.len(), header.z_grid.len());
        let mut levels = [vec![0.0; ny * nz], vec![0.0; ny * nz]];
        for (w, level) in levels.iter_mut().enumerate() {
            let mut rdr = csv::Reader::from_path(dir.join(format!("f_w{w}.csv")))?;
            let mut rows = 0;
            for (iy, rec) in rdr.records().enumerate() {
                let rec = rec?;
                if iy >= ny || rec.len() != nz + 1 {
                    return Err(Error::Parse(format!("f_w{w}.csv: unexpected shape at row {}", iy + 2)));
                }
                for iz in 0..nz {
                    level[iz * ny + iy] = rec[iz + 1]
                        .trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("f_w{w}.csv row {}: {e}", iy + 2)))?;
                }
                rows += 1;
            }
            if rows != ny {
                return Err(Error::Parse(format!("f_w{w}.csv: {rows} rows, expected {ny}")));
            }
        }
        let [f0, f1] = levels;
        let fz = GridFn::new(header.z_grid, header.fz)?;
        Self::new(header.y_grid, header.z_grid, f0, f1, header.w0, fz, header.ey)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DensityHeader {
    y_grid: Grid1D,
    z_grid: Grid1D,
    w0: f64,
    w1: f64,
    ey: f64,
    fz: Vec<f64>,
}

/// Marginal densities recomputed from the tabulated joint.
#[derive(Debug, Clone)]
pub struct Marginals {
    pub fz: GridFn,
    pub fw: (f64, f64),
    pub fy: GridFn,
}

pub fn marginals(d: &JointDensityGrid) -> Marginals {
    let (ny, nz) = (d.y_grid.len(), d.z_grid.len());
    let fz: Vec<f64> = (0..nz)
        .map(|iz| d.cdf_col(0, iz)[ny - 1] + d.cdf_col(1, iz)[ny - 1])
        .collect();
    let wz = d.z_grid.weights();
    let fy: Vec<f64> = (0..ny)
        .map(|iy| (0..nz).map(|iz| wz[iz] * (d.value(0, iy, iz) + d.value(1, iy, iz))).sum())
        .collect();
    Marginals {
        fz: GridFn::from_vec_unchecked(d.z_grid, fz),
        fw: (d.w0, d.w1()),
        fy: GridFn::from_vec_unchecked(d.y_grid, fy),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OperatorForm {
    /// Residual built from density values.
    DensityForm,
    /// Residual built from `y`-CDF values, integrated once in `u`.
    #[default]
    CdfForm,
}

/// Independence operator for a binary instrument:
///
/// ```text
/// F(phi)(u) = ( int w1 A(u + phi(z), z, 0) - w0 A(u + phi(z), z, 1) dz ,
///               int phi(z) fZ(z) dz - E[Y] )
/// ```
///
/// with `A` the density (density form) or the `y`-CDF (CDF form).
#[derive(Debug, Clone)]
pub struct BinaryIVOperator {
    density: Arc<JointDensityGrid>,
    u_grid: Grid1D,
    form: OperatorForm,
    scalar_weight: f64,
}

impl BinaryIVOperator {
    pub fn new(density: Arc<JointDensityGrid>, u_grid: Grid1D, form: OperatorForm) -> Self {
        Self { density, u_grid, form, scalar_weight: 1.0 }
    }

    pub fn with_scalar_weight(mut self, weight: f64) -> Result<Self> {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::Config(format!("scalar row weight must be positive, got {weight}")));
        }
        self.scalar_weight = weight;
        Ok(self)
    }

    pub fn density(&self) -> &JointDensityGrid {
        &self.density
    }

    pub fn form(&self) -> OperatorForm {
        self.form
    }

    pub fn u_grid(&self) -> &Grid1D {
        &self.u_grid
    }

    fn residual_value(&self, w: usize, iz: usize, y: f64) -> f64 {
        match self.form {
            OperatorForm::CdfForm => self.density.cdf_interp(w, iz, y),
            OperatorForm::DensityForm => self.density.pdf_hermite(w, iz, y).0,
        }
    }

    fn kernel_value(&self, w: usize, iz: usize, y: f64) -> f64 {
        match self.form {
            OperatorForm::CdfForm => self.density.pdf_linear(w, iz, y),
            OperatorForm::DensityForm => self.density.pdf_hermite(w, iz, y).1,
        }
    }

    fn scalar_row(&self, phi: &GridFn) -> f64 {
        let wz = self.density.z_grid.weights();
        wz.iter()
            .zip(phi.values())
            .zip(self.density.fz.values())
            .map(|((w, p), f)| w * p * f)
            .sum::<f64>()
            - self.density.ey
    }

    /// Row-major `M_ij = w1 k(u_i + phi_j, z_j, 0) - w0 k(u_i + phi_j, z_j, 1)`.
    pub fn kernel_matrix(&self, phi: &GridFn) -> Result<DenseLinearization> {
        self.density.z_grid.check_same(phi.grid())?;
        let (w0, w1) = (self.density.w0, self.density.w1());
        let nz = self.density.z_grid.len();
        let mut kernel = vec![0.0; self.u_grid.len() * nz];
        kernel.par_chunks_mut(nz).enumerate().for_each(|(i, row)| {
            let u = self.u_grid.node(i);
            for (j, (m, p)) in row.iter_mut().zip(phi.values()).enumerate() {
                *m = w1 * self.kernel_value(0, j, u + p) - w0 * self.kernel_value(1, j, u + p);
            }
        });
        DenseLinearization::new(
            self.density.z_grid,
            self.u_grid,
            kernel,
            Some(self.density.fz.values().to_vec()),
            self.scalar_weight,
        )
    }
}

impl ForwardModel for BinaryIVOperator {
    fn domain(&self) -> Grid1D {
        self.density.z_grid
    }

    fn codomain(&self) -> Grid1D {
        self.u_grid
    }

    fn scalar_weight(&self) -> f64 {
        self.scalar_weight
    }

    fn apply(&self, phi: &GridFn) -> Result<CodomainElem> {
        self.density.z_grid.check_same(phi.grid())?;
        let (w0, w1) = (self.density.w0, self.density.w1());
        let wz = self.density.z_grid.weights();
        let ufun: Vec<f64> = (0..self.u_grid.len())
            .into_par_iter()
            .map(|i| {
                let u = self.u_grid.node(i);
                phi.values()
                    .iter()
                    .enumerate()
                    .map(|(j, p)| wz[j] * (w1 * self.residual_value(0, j, u + p) - w0 * self.residual_value(1, j, u + p)))
                    .sum()
            })
            .collect();
        CodomainElem::new(GridFn::new(self.u_grid, ufun)?, self.scalar_row(phi))
    }

    fn deriv_apply(&self, phi: &GridFn, h: &GridFn) -> Result<CodomainElem> {
        self.kernel_matrix(phi)?.apply(h)
    }

    fn deriv_adjoint(&self, phi: &GridFn, y: &CodomainElem) -> Result<GridFn> {
        self.kernel_matrix(phi)?.adjoint(y)
    }

    fn linearize<'a>(&'a self, phi: &GridFn) -> Result<Box<dyn Linearization + 'a>> {
        Ok(Box::new(self.kernel_matrix(phi)?))
    }
}

/// Instrumental quantile regression:
/// `F(phi)(w) = int G(phi(z), z, w) dz - q f_W(w)`, one row per level.
///
/// The codomain is a two-node function on `[0, 1]` (node `w` holds level `w`)
/// and the scalar row is identically zero.
#[derive(Debug, Clone)]
pub struct QuantileIVOperator {
    density: Arc<JointDensityGrid>,
    q: f64,
    levels: Grid1D,
}

impl QuantileIVOperator {
    pub fn new(density: Arc<JointDensityGrid>, q: f64) -> Result<Self> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Domain(format!("quantile level must lie in (0, 1), got {q}")));
        }
        Ok(Self { density, q, levels: Grid1D::new(2, 0.0, 1.0)? })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    fn kernel_matrix(&self, phi: &GridFn) -> Result<DenseLinearization> {
        self.density.z_grid.check_same(phi.grid())?;
        let nz = self.density.z_grid.len();
        let mut kernel = vec![0.0; 2 * nz];
        for w in 0..2 {
            for (j, p) in phi.values().iter().enumerate() {
                kernel[w * nz + j] = self.density.pdf_linear(w, j, *p);
            }
        }
        DenseLinearization::new(self.density.z_grid, self.levels, kernel, None, 1.0)
    }
}

impl ForwardModel for QuantileIVOperator {
    fn domain(&self) -> Grid1D {
        self.density.z_grid
    }

    fn codomain(&self) -> Grid1D {
        self.levels
    }

    fn apply(&self, phi: &GridFn) -> Result<CodomainElem> {
        self.density.z_grid.check_same(phi.grid())?;
        let wz = self.density.z_grid.weights();
        let vals: Vec<f64> = (0..2)
            .map(|w| {
                let int: f64 = phi
                    .values()
                    .iter()
                    .enumerate()
                    .map(|(j, p)| wz[j] * self.density.cdf_interp(w, j, *p))
                    .sum();
                int - self.q * self.density.level_weight(w)
            })
            .collect();
        CodomainElem::new(GridFn::new(self.levels, vals)?, 0.0)
    }

    fn deriv_apply(&self, phi: &GridFn, h: &GridFn) -> Result<CodomainElem> {
        self.kernel_matrix(phi)?.apply(h)
    }

    fn deriv_adjoint(&self, phi: &GridFn, y: &CodomainElem) -> Result<GridFn> {
        self.kernel_matrix(phi)?.adjoint(y)
    }

    fn linearize<'a>(&'a self, phi: &GridFn) -> Result<Box<dyn Linearization + 'a>> {
        Ok(Box::new(self.kernel_matrix(phi)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::irgnm::adjoint_defect;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gauss(x: f64, m: f64, s: f64) -> f64 {
        (-0.5 * ((x - m) / s).powi(2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
    }

    /// Level densities `c_w * fZ(z) * N(y; m_w(z), 0.1)` with a uniform `Z`.
    fn toy_density(ny: usize, nz: usize, m0: impl Fn(f64) -> f64, m1: impl Fn(f64) -> f64, w0: f64) -> JointDensityGrid {
        let y = Grid1D::new(ny, -1.0, 2.0).unwrap();
        let z = Grid1D::new(nz, 0.0, 1.0).unwrap();
        let mut f0 = vec![0.0; ny * nz];
        let mut f1 = vec![0.0; ny * nz];
        for iz in 0..nz {
            let zz = z.node(iz);
            for iy in 0..ny {
                f0[iz * ny + iy] = w0 * gauss(y.node(iy), m0(zz), 0.1);
                f1[iz * ny + iy] = (1.0 - w0) * gauss(y.node(iy), m1(zz), 0.1);
            }
        }
        JointDensityGrid::new(y, z, f0, f1, w0, GridFn::constant(z, 1.0).unwrap(), 0.5).unwrap()
    }

    fn toy_operator(form: OperatorForm) -> BinaryIVOperator {
        let d = toy_density(120, 40, |z| 0.5 + 0.2 * z, |z| 0.4 + 0.3 * z * z, 0.6);
        let u = Grid1D::new(90, -1.2, 1.2).unwrap();
        BinaryIVOperator::new(Arc::new(d), u, form)
    }

    #[test]
    fn density_grid_validation() {
        let y = Grid1D::new(10, 0.0, 1.0).unwrap();
        let z = Grid1D::new(5, 0.0, 1.0).unwrap();
        let fz = GridFn::constant(z, 1.0).unwrap();
        let ok = vec![1.0; 50];
        assert!(JointDensityGrid::new(y, z, ok.clone(), ok.clone(), 0.5, fz.clone(), 0.0).is_err()); // mass 2
        let half = vec![0.5; 50];
        assert!(JointDensityGrid::new(y, z, half.clone(), half.clone(), 0.5, fz.clone(), 0.0).is_ok());
        assert!(JointDensityGrid::new(y, z, half.clone(), half.clone(), 1.0, fz.clone(), 0.0).is_err());
        let mut neg = half.clone();
        neg[3] = -0.1;
        assert!(JointDensityGrid::new(y, z, neg, half.clone(), 0.5, fz, 0.0).is_err());
        assert!(JointDensityGrid::new(y, z, vec![0.5; 49], half, 0.5, GridFn::constant(z, 1.0).unwrap(), 0.0).is_err());
    }

    #[test]
    fn cdf_interpolant_matches_table_and_extends() {
        let d = toy_density(60, 5, |_| 0.5, |_| 0.5, 0.5);
        let y = *d.y_grid();
        for iz in 0..5 {
            for iy in 0..60 {
                assert!((d.cdf_interp(0, iz, y.node(iy)) - d.cdf_col(0, iz)[iy]).abs() < 1e-14);
            }
            assert_eq!(d.cdf_interp(0, iz, -5.0), 0.0);
            assert_eq!(d.cdf_interp(0, iz, 5.0), d.cdf_col(0, iz)[59]);
            let g = d.cdf_col(0, iz);
            assert!(g.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn hermite_matches_nodes() {
        let d = toy_density(60, 5, |_| 0.5, |_| 0.3, 0.5);
        for iy in 0..60 {
            let (v, s) = d.pdf_hermite(1, 2, d.y_grid().node(iy));
            assert!((v - d.value(1, iy, 2)).abs() < 1e-12);
            assert!((s - d.dfy_col(1, 2)[iy]).abs() < 1e-9 * (1.0 + s.abs()));
        }
    }

    #[test]
    fn uninformative_instrument_gives_zero_ufun() {
        // f(., ., 1) = (w1/w0) f(., ., 0)
        let d = toy_density(80, 30, |z| 0.3 + z, |z| 0.3 + z, 0.7);
        let op = BinaryIVOperator::new(Arc::new(d), Grid1D::new(50, -1.0, 1.0).unwrap(), OperatorForm::DensityForm);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..5 {
            let phi = GridFn::new(op.domain(), (0..op.domain().len()).map(|_| rng.random_range(-0.3..0.3)).collect()).unwrap();
            let r = op.apply(&phi).unwrap();
            assert!(r.ufun.max_abs() < 1e-13);
        }
    }

    #[test]
    fn scalar_row_for_constants() {
        let op = toy_operator(OperatorForm::CdfForm);
        let c = 0.37;
        let phi = GridFn::constant(op.domain(), c).unwrap();
        let r = op.apply(&phi).unwrap();
        let mass = op.density().fz().integral();
        assert!((r.scalar - (c * mass - op.density().ey())).abs() < 1e-14);
    }

    #[test]
    fn zero_direction_and_zero_dual() {
        for form in [OperatorForm::CdfForm, OperatorForm::DensityForm] {
            let op = toy_operator(form);
            let phi = GridFn::constant(op.domain(), 0.1).unwrap();
            let d = op.deriv_apply(&phi, &GridFn::zeros(op.domain())).unwrap();
            assert_eq!(d.ufun.max_abs(), 0.0);
            assert_eq!(d.scalar, 0.0);
            let g = op.deriv_adjoint(&phi, &CodomainElem::zeros(op.codomain())).unwrap();
            assert_eq!(g.max_abs(), 0.0);
            let y = CodomainElem::new(GridFn::zeros(op.codomain()), 2.5).unwrap();
            let g = op.deriv_adjoint(&phi, &y).unwrap();
            let want = op.density().fz().scale(2.5).unwrap();
            assert!(g.sub(&want).unwrap().max_abs() < 1e-14);
        }
    }

    #[test]
    fn adjoint_identity_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for form in [OperatorForm::CdfForm, OperatorForm::DensityForm] {
            let op = toy_operator(form).with_scalar_weight(0.7).unwrap();
            let phi = GridFn::from_fn(op.domain(), |z| 0.1 * (5.0 * z).sin()).unwrap();
            let lin = op.linearize(&phi).unwrap();
            for _ in 0..50 {
                let h = GridFn::new(op.domain(), (0..op.domain().len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
                let y = CodomainElem::new(
                    GridFn::new(op.codomain(), (0..op.codomain().len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
                    rng.random_range(-1.0..1.0),
                )
                .unwrap();
                assert!(adjoint_defect(lin.as_ref(), &h, &y, 0.7).unwrap() < 1e-9);
            }
        }
    }

    #[test]
    fn quantile_tails() {
        let d = Arc::new(toy_density(100, 30, |_| 0.5, |_| 0.5, 0.6));
        let op = QuantileIVOperator::new(d.clone(), 0.3).unwrap();
        let low = op.apply(&GridFn::constant(op.domain(), -10.0).unwrap()).unwrap();
        assert!((low.ufun.values()[0] + 0.3 * 0.6).abs() < 1e-15);
        assert!((low.ufun.values()[1] + 0.3 * 0.4).abs() < 1e-15);
        let high = op.apply(&GridFn::constant(op.domain(), 10.0).unwrap()).unwrap();
        assert!((high.ufun.values()[0] - 0.7 * 0.6).abs() < 1e-4);
        assert!((high.ufun.values()[1] - 0.7 * 0.4).abs() < 1e-4);
        assert!(QuantileIVOperator::new(d, 1.0).is_err());
    }

    #[test]
    fn bundle_roundtrip() {
        let d = toy_density(30, 12, |z| 0.4 + 0.1 * z, |z| 0.5 - 0.1 * z, 0.55);
        let dir = tempfile::tempdir().unwrap();
        d.write_bundle(dir.path()).unwrap();
        let back = JointDensityGrid::read_bundle(dir.path()).unwrap();
        assert_eq!(back.w0(), d.w0());
        for w in 0..2 {
            for iz in 0..12 {
                assert_eq!(back.f_col(w, iz), d.f_col(w, iz));
            }
        }
        assert_eq!(back.fz().values(), d.fz().values());
    }
}
