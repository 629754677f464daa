//! Synthetic binary-instrument design with a known regression function.
//!
//! `Z | W = 0` is a truncated normal on `[0, 1]`; `Z | W = 1` is its image
//! under `z -> (z + shift) / scale`, supported on a sub-interval. The error
//! `U | Z, W` is normal with a mean `mu_w(z)` that depends on the instrument
//! level, so that `U` and `Z` are correlated while `U` and `W` are
//! independent.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::grid::{fmt_f64, Grid1D, GridFn};
use crate::iv::JointDensityGrid;

/// Nodes of the inverse-CDF table used by the sampler.
pub const SAMPLER_TABLE_NODES: usize = 10_000;

/// Minimum distance, in units of `sigma_u`, between the conditional means
/// and the edge of the `y`-window accepted by [`SimDesign::exact_density`].
pub const MIN_WINDOW_SIGMAS: f64 = 5.0;

/// Margin used by [`SimDesign::default_y_window`].
pub const DEFAULT_WINDOW_SIGMAS: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimDesign {
    pub amplitude: f64,
    pub phase: f64,
    pub offset: f64,
    pub w0: f64,
    pub mu0_slope: f64,
    pub mu0_intercept: f64,
    pub mu1_slope: f64,
    pub mu1_intercept: f64,
    pub sigma_u: f64,
    pub z_mean: f64,
    pub z_sd: f64,
    /// `f_ZW(z, 1) = c f_ZW(scale z - shift, 0)` with `c` fixed by the level mass.
    pub transform_scale: f64,
    pub transform_shift: f64,
}

impl Default for SimDesign {
    fn default() -> Self {
        Self {
            amplitude: 1.0 / 6.0,
            phase: 0.25,
            offset: 0.41,
            w0: 2.0 / 3.0,
            mu0_slope: 0.2,
            mu0_intercept: -0.1,
            mu1_slope: 0.25,
            mu1_intercept: -0.125,
            sigma_u: 0.09,
            z_mean: 0.5,
            z_sd: 0.3,
            transform_scale: 1.25,
            transform_shift: 0.125,
        }
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

fn normal_pdf(x: f64, sigma: f64) -> f64 {
    (-0.5 * (x / sigma).powi(2)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

impl SimDesign {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.amplitude,
            self.phase,
            self.offset,
            self.mu0_slope,
            self.mu0_intercept,
            self.mu1_slope,
            self.mu1_intercept,
            self.z_mean,
            self.transform_shift,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("design parameters must be finite".into()));
        }
        if !(self.w0 > 0.0 && self.w0 < 1.0) {
            return Err(Error::Config(format!("w0 must lie in (0, 1), got {}", self.w0)));
        }
        for (name, v) in [("sigma_u", self.sigma_u), ("z_sd", self.z_sd), ("transform_scale", self.transform_scale)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let (lo, hi) = self.level1_support();
        if !(lo < hi) {
            return Err(Error::Config("the transform maps [0, 1] outside itself".into()));
        }
        Ok(())
    }

    pub fn w1(&self) -> f64 {
        1.0 - self.w0
    }

    pub fn true_phi(&self, z: f64) -> f64 {
        self.amplitude * (2.0 * std::f64::consts::PI * (z + self.phase)).sin() + self.offset
    }

    pub fn mu(&self, w: usize, z: f64) -> f64 {
        if w == 0 {
            self.mu0_slope * z + self.mu0_intercept
        } else {
            self.mu1_slope * z + self.mu1_intercept
        }
    }

    /// Limit of least-squares regression of `Y` on `Z`, ignoring the instrument.
    pub fn naive_limit(&self, z: f64) -> f64 {
        self.w0 * self.mu(0, z) + self.w1() * self.mu(1, z) + self.true_phi(z)
    }

    /// Scaling factor `a` of `f_ZW(z, 0) = a exp(-((z - m)/s)^2 / 2)` on `[0, 1]`.
    pub fn normalization(&self) -> f64 {
        let (m, s) = (self.z_mean, self.z_sd);
        let gauss_mass = s * (2.0 * std::f64::consts::PI).sqrt() * (std_normal_cdf((1.0 - m) / s) - std_normal_cdf(-m / s));
        self.w0 / gauss_mass
    }

    fn level1_factor(&self) -> f64 {
        self.w1() / self.w0 * self.transform_scale
    }

    /// Support of `Z | W = 1`.
    pub fn level1_support(&self) -> (f64, f64) {
        let lo = (self.transform_shift / self.transform_scale).max(0.0);
        let hi = ((1.0 + self.transform_shift) / self.transform_scale).min(1.0);
        (lo, hi)
    }

    fn f_zw0_with(&self, a: f64, z: f64) -> f64 {
        if (0.0..=1.0).contains(&z) {
            a * (-0.5 * ((z - self.z_mean) / self.z_sd).powi(2)).exp()
        } else {
            0.0
        }
    }

    /// Joint density of `(Z, W)`.
    pub fn f_zw(&self, z: f64, w: usize) -> f64 {
        let a = self.normalization();
        if w == 0 {
            self.f_zw0_with(a, z)
        } else {
            self.level1_factor() * self.f_zw0_with(a, self.transform_scale * z - self.transform_shift)
        }
    }

    /// `f_YZW(y, z, w)`.
    pub fn joint_density(&self, y: f64, z: f64, w: usize) -> f64 {
        self.f_zw(z, w) * normal_pdf(y - self.true_phi(z) - self.mu(w, z), self.sigma_u)
    }

    /// Range of the conditional means `phi(z) + mu_w(z)` over the support.
    pub fn mean_range(&self) -> (f64, f64) {
        let (l1, h1) = self.level1_support();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (w, a, b) in [(0, 0.0, 1.0), (1, l1, h1)] {
            for i in 0..=4000 {
                let z = a + (b - a) * i as f64 / 4000.0;
                let m = self.true_phi(z) + self.mu(w, z);
                lo = lo.min(m);
                hi = hi.max(m);
            }
        }
        (lo, hi)
    }

    pub fn default_y_window(&self) -> (f64, f64) {
        let (lo, hi) = self.mean_range();
        let pad = DEFAULT_WINDOW_SIGMAS * self.sigma_u;
        (lo - pad, hi + pad)
    }

    pub fn default_y_grid(&self, n: usize) -> Result<Grid1D> {
        let (lo, hi) = self.default_y_window();
        Grid1D::new(n, lo, hi)
    }

    /// Tabulates `f_YZW` on the grids. `fZ` is the analytic marginal at the
    /// z-nodes and `E[Y]` is `int phi(z) fZ(z) dz` by trapezoid on `z_grid`.
    pub fn exact_density(&self, y_grid: Grid1D, z_grid: Grid1D) -> Result<JointDensityGrid> {
        self.validate()?;
        let (lo, hi) = self.mean_range();
        let need = MIN_WINDOW_SIGMAS * self.sigma_u;
        if y_grid.lo() > lo - need || y_grid.hi() < hi + need {
            return Err(Error::Precondition(format!(
                "y-window [{}, {}] must contain [{}, {}]",
                y_grid.lo(),
                y_grid.hi(),
                lo - need,
                hi + need
            )));
        }
        if z_grid.lo() > 0.0 || z_grid.hi() < 1.0 {
            return Err(Error::Precondition("z-grid must cover [0, 1]".into()));
        }
        let (ny, nz) = (y_grid.len(), z_grid.len());
        let mut levels = [vec![0.0; ny * nz], vec![0.0; ny * nz]];
        for (w, level) in levels.iter_mut().enumerate() {
            for iz in 0..nz {
                let z = z_grid.node(iz);
                let fzw = self.f_zw(z, w);
                let m = self.true_phi(z) + self.mu(w, z);
                for iy in 0..ny {
                    level[iz * ny + iy] = fzw * normal_pdf(y_grid.node(iy) - m, self.sigma_u);
                }
            }
        }
        let fz = GridFn::from_fn(z_grid, |z| self.f_zw(z, 0) + self.f_zw(z, 1))?;
        let phi = GridFn::from_fn(z_grid, |z| self.true_phi(z))?;
        let ey = crate::grid::inner_product(&phi, &fz)?;
        let [f0, f1] = levels;
        JointDensityGrid::new(y_grid, z_grid, f0, f1, self.w0, fz, ey)
    }

    /// `sup_u | int w1 f(u + phi(z), z, 0) - w0 f(u + phi(z), z, 1) dz |`
    /// with the analytic density and the trapezoid rule on `z_grid`.
    pub fn independence_residual(&self, z_grid: Grid1D, u_grid: Grid1D) -> Result<f64> {
        self.validate()?;
        let wz = z_grid.weights();
        let zs = z_grid.nodes();
        let phi: Vec<f64> = zs.iter().map(|z| self.true_phi(*z)).collect();
        let (w0, w1) = (self.w0, self.w1());
        Ok(u_grid
            .nodes()
            .into_iter()
            .map(|u| {
                zs.iter()
                    .enumerate()
                    .map(|(j, z)| {
                        let y = u + phi[j];
                        wz[j] * (w1 * self.joint_density(y, *z, 0) - w0 * self.joint_density(y, *z, 1))
                    })
                    .sum::<f64>()
                    .abs()
            })
            .fold(0.0, f64::max))
    }

    /// `E[U] = int f_ZW(z, 0) mu_0(z) + f_ZW(z, 1) mu_1(z) dz`, by composite
    /// Simpson on the support of each level.
    pub fn mean_u(&self) -> Result<f64> {
        self.validate()?;
        let (l1, h1) = self.level1_support();
        Ok(simpson(|z| self.f_zw(z, 0) * self.mu(0, z), 0.0, 1.0, 4000)
            + simpson(|z| self.f_zw(z, 1) * self.mu(1, z), l1, h1, 4000))
    }

    pub fn sampler(&self) -> Result<Sampler> {
        Sampler::new(*self)
    }

    /// `n` draws from a generator seeded with `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Sample> {
        self.sampler()?.draw(n, ChaCha8Rng::seed_from_u64(seed), Some(seed))
    }

    /// Draws for Monte Carlo replication `r`: stream `r` of the generator
    /// seeded with `master_seed`.
    pub fn sample_replication(&self, n: usize, master_seed: u64, r: u64) -> Result<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(r);
        self.sampler()?.draw(n, rng, Some(master_seed))
    }
}

pub(crate) fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let m = intervals + intervals % 2;
    let h = (b - a) / m as f64;
    let mut s = f(a) + f(b);
    for i in 1..m {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Inverse-CDF sampler for the design, built once and reused.
#[derive(Debug, Clone)]
pub struct Sampler {
    design: SimDesign,
    z_nodes: Vec<f64>,
    cdf: Vec<f64>,
}

impl Sampler {
    pub fn new(design: SimDesign) -> Result<Self> {
        design.validate()?;
        let (m, s) = (design.z_mean, design.z_sd);
        let n = SAMPLER_TABLE_NODES;
        let z_nodes: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let c0 = std_normal_cdf(-m / s);
        let c1 = std_normal_cdf((1.0 - m) / s);
        let mut cdf: Vec<f64> = z_nodes.iter().map(|z| (std_normal_cdf((z - m) / s) - c0) / (c1 - c0)).collect();
        cdf[0] = 0.0;
        cdf[n - 1] = 1.0;
        Ok(Self { design, z_nodes, cdf })
    }

    /// Quantile of `Z | W = 0` by linear interpolation in the table.
    pub fn z0_quantile(&self, p: f64) -> f64 {
        let i = self.cdf.partition_point(|c| *c <= p).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let t = if c1 > c0 { (p - c0) / (c1 - c0) } else { 0.0 };
        self.z_nodes[i - 1] + t * (self.z_nodes[i] - self.z_nodes[i - 1])
    }

    pub fn draw(&self, n: usize, mut rng: ChaCha8Rng, seed: Option<u64>) -> Result<Sample> {
        if n == 0 {
            return Err(Error::Domain("sample size must be positive".into()));
        }
        let d = &self.design;
        let mut y = Vec::with_capacity(n);
        let mut z = Vec::with_capacity(n);
        let mut w = Vec::with_capacity(n);
        for _ in 0..n {
            let level = usize::from(rng.random::<f64>() >= d.w0);
            let z0 = self.z0_quantile(rng.random::<f64>());
            let zi = if level == 0 { z0 } else { (z0 + d.transform_shift) / d.transform_scale };
            let eps: f64 = rng.sample(StandardNormal);
            y.push(d.true_phi(zi) + d.mu(level, zi) + d.sigma_u * eps);
            z.push(zi);
            w.push(level as u8);
        }
        Ok(Sample { y, z, w, seed })
    }
}

/// Observations `(y, z, w)` with `z` in `[0, 1]` and binary `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub w: Vec<u8>,
    pub seed: Option<u64>,
}

impl Sample {
    pub fn new(y: Vec<f64>, z: Vec<f64>, w: Vec<u8>) -> Result<Self> {
        if y.len() != z.len() || y.len() != w.len() {
            return Err(Error::Domain("sample columns differ in length".into()));
        }
        let s = Self { y, z, w, seed: None };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..self.len() {
            if !self.y[i].is_finite() || !self.z[i].is_finite() {
                return Err(Error::Domain(format!("row {}: non-finite value", i + 1)));
            }
            if !(0.0..=1.0).contains(&self.z[i]) {
                return Err(Error::Domain(format!("row {}: z = {} outside [0, 1]", i + 1, self.z[i])));
            }
            if self.w[i] > 1 {
                return Err(Error::Domain(format!("row {}: w = {} is not binary", i + 1, self.w[i])));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn level_count(&self, w: u8) -> usize {
        self.w.iter().filter(|v| **v == w).count()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["y", "z", "w"])?;
        for i in 0..self.len() {
            wtr.write_record([fmt_f64(self.y[i]), fmt_f64(self.z[i]), self.w[i].to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header != ["y", "z", "w"] {
            return Err(Error::Parse(format!("expected header y,z,w, got {}", header.join(","))));
        }
        let (mut y, mut z, mut w) = (Vec::new(), Vec::new(), Vec::new());
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(format!("row {}: {e}", i + 2)))?;
            if rec.len() != 3 {
                return Err(Error::Parse(format!("row {}: expected 3 fields", i + 2)));
            }
            let num = |k: usize| {
                rec[k].parse::<f64>().map_err(|e| Error::Parse(format!("row {}: {e}", i + 2)))
            };
            y.push(num(0)?);
            z.push(num(1)?);
            w.push(match &rec[2] {
                "0" => 0,
                "1" => 1,
                other => return Err(Error::Parse(format!("row {}: w = {other:?} is not 0 or 1", i + 2))),
            });
        }
        if y.is_empty() {
            return Err(Error::Parse("sample has no rows".into()));
        }
        Self::new(y, z, w)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}
