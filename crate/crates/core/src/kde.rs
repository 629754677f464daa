//! Product-Gaussian kernel density estimate of `f(y, z, w)` on grids.
//!
//! Each instrument level gets its own bandwidths. The `z`-kernel is reflected
//! at 0 and 1 so no mass leaks out of the unit interval.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid1D, GridFn};
use crate::iv::JointDensityGrid;
use crate::sim::Sample;

/// Accepted range of the total mass of an estimate.
pub const KDE_MASS_RANGE: (f64, f64) = (0.97, 1.01);

const CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BandwidthRule {
    /// Normal-reference rule for a two-dimensional product kernel,
    /// `h = s n^(-1/6)` with `s = min(sd, IQR / 1.349)`, per level.
    #[default]
    Silverman,
    Fixed { h_y: f64, h_z: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KdeConfig {
    pub bandwidth: BandwidthRule,
    /// Multiplies the bandwidths produced by the rule.
    pub bandwidth_scale: f64,
    /// Padding of the `y`-window beyond the data range, in bandwidths.
    pub y_window_pad: f64,
    pub n_y: usize,
    pub n_z: usize,
}

impl Default for KdeConfig {
    fn default() -> Self {
        Self { bandwidth: BandwidthRule::Silverman, bandwidth_scale: 1.0, y_window_pad: 4.0, n_y: 256, n_z: 256 }
    }
}

impl KdeConfig {
    pub fn validate(&self) -> Result<()> {
        if let BandwidthRule::Fixed { h_y, h_z } = self.bandwidth {
            if !(h_y > 0.0 && h_z > 0.0 && h_y.is_finite() && h_z.is_finite()) {
                return Err(Error::Config(format!("fixed bandwidths must be positive, got ({h_y}, {h_z})")));
            }
        }
        if !(self.bandwidth_scale > 0.0 && self.bandwidth_scale.is_finite()) {
            return Err(Error::Config(format!("bandwidth_scale must be positive, got {}", self.bandwidth_scale)));
        }
        if !(self.y_window_pad >= 0.0 && self.y_window_pad.is_finite()) {
            return Err(Error::Config(format!("y_window_pad must be non-negative, got {}", self.y_window_pad)));
        }
        if self.n_y < 3 || self.n_z < 3 {
            return Err(Error::Config("KDE grids need at least 3 nodes".into()));
        }
        Ok(())
    }
}

/// Bandwidths `(h_y, h_z)` of one instrument level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandwidths {
    pub h_y: f64,
    pub h_z: f64,
}

fn robust_scale(xs: &mut [f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    xs.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (xs.len() - 1) as f64;
        let i = pos.floor() as usize;
        let t = pos - i as f64;
        if i + 1 < xs.len() {
            xs[i] + t * (xs[i + 1] - xs[i])
        } else {
            xs[i]
        }
    };
    let iqr = q(0.75) - q(0.25);
    if iqr > 0.0 {
        sd.min(iqr / 1.349)
    } else {
        sd
    }
}

fn level_rows(s: &Sample, w: u8) -> (Vec<f64>, Vec<f64>) {
    (0..s.len()).filter(|&i| s.w[i] == w).map(|i| (s.y[i], s.z[i])).unzip()
}

/// Bandwidths per level under `cfg`.
pub fn select_bandwidths(s: &Sample, cfg: &KdeConfig) -> Result<[Bandwidths; 2]> {
    cfg.validate()?;
    let mut out = [Bandwidths { h_y: 0.0, h_z: 0.0 }; 2];
    for w in 0..2u8 {
        let (mut ys, mut zs) = level_rows(s, w);
        if ys.len() < 2 {
            return Err(Error::Domain(format!("level w = {w} has {} observations, need at least 2", ys.len())));
        }
        let (h_y, h_z) = match cfg.bandwidth {
            BandwidthRule::Fixed { h_y, h_z } => (h_y, h_z),
            BandwidthRule::Silverman => {
                let factor = (ys.len() as f64).powf(-1.0 / 6.0);
                let (sy, sz) = (robust_scale(&mut ys), robust_scale(&mut zs));
                if !(sy > 0.0 && sz > 0.0) {
                    return Err(Error::Domain(format!(
                        "level w = {w} has zero spread (sd_y = {sy}, sd_z = {sz}); use fixed bandwidths"
                    )));
                }
                (sy * factor, sz * factor)
            }
        };
        out[w as usize] = Bandwidths { h_y: h_y * cfg.bandwidth_scale, h_z: h_z * cfg.bandwidth_scale };
    }
    Ok(out)
}

/// Evaluation grids for `s`: `z` on `[0, 1]`, `y` over the data range padded
/// by `y_window_pad` times the largest `y`-bandwidth.
pub fn kde_grids(s: &Sample, cfg: &KdeConfig) -> Result<(Grid1D, Grid1D)> {
    let bw = select_bandwidths(s, cfg)?;
    let pad = cfg.y_window_pad * bw[0].h_y.max(bw[1].h_y);
    let lo = s.y.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = s.y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok((Grid1D::new(cfg.n_y, lo - pad, hi + pad)?, Grid1D::new(cfg.n_z, 0.0, 1.0)?))
}

fn gauss(x: f64, h: f64) -> f64 {
    (-0.5 * (x / h).powi(2)).exp() / (h * (2.0 * std::f64::consts::PI).sqrt())
}

fn reflected(z: f64, zi: f64, h: f64) -> f64 {
    gauss(z - zi, h) + gauss(z + zi, h) + gauss(2.0 - z - zi, h)
}

/// `sum_i Ky(y - y_i) Kz(z - z_i)` as a `ny x nz` column-major matrix,
/// accumulated chunk by chunk in a fixed order.
fn kernel_sum(ys: &[f64], zs: &[f64], bw: Bandwidths, y_grid: &Grid1D, z_grid: &Grid1D) -> DMatrix<f64> {
    let (ny, nz) = (y_grid.len(), z_grid.len());
    let (ynodes, znodes) = (y_grid.nodes(), z_grid.nodes());
    let partial: Vec<DMatrix<f64>> = ys
        .par_chunks(CHUNK)
        .zip(zs.par_chunks(CHUNK))
        .map(|(yc, zc)| {
            let ky = DMatrix::from_fn(ny, yc.len(), |r, c| gauss(ynodes[r] - yc[c], bw.h_y));
            let kz = DMatrix::from_fn(nz, zc.len(), |r, c| reflected(znodes[r], zc[c], bw.h_z));
            ky * kz.transpose()
        })
        .collect();
    partial.into_iter().fold(DMatrix::zeros(ny, nz), |acc, m| acc + m)
}

/// Kernel estimate of the joint density of `s` on the given grids.
pub fn kde_fit(s: &Sample, cfg: &KdeConfig, y_grid: Grid1D, z_grid: Grid1D) -> Result<JointDensityGrid> {
    s.validate()?;
    let bw = select_bandwidths(s, cfg)?;
    let n = s.len() as f64;
    let mut levels = Vec::with_capacity(2);
    let mut fz = vec![0.0; z_grid.len()];
    for w in 0..2u8 {
        let (ys, zs) = level_rows(s, w);
        let b = bw[w as usize];
        let sum = kernel_sum(&ys, &zs, b, &y_grid, &z_grid);
        levels.push(sum.as_slice().iter().map(|v| v / n).collect::<Vec<f64>>());
        for (iz, v) in fz.iter_mut().enumerate() {
            let z = z_grid.node(iz);
            *v += zs.iter().map(|zi| reflected(z, *zi, b.h_z)).sum::<f64>() / n;
        }
    }
    let w0 = s.level_count(0) as f64 / n;
    let ey = s.y.iter().sum::<f64>() / n;
    let f1 = levels.pop().unwrap();
    let f0 = levels.pop().unwrap();
    let density = JointDensityGrid::new(y_grid, z_grid, f0, f1, w0, GridFn::new(z_grid, fz)?, ey)?;
    let mass = density.mass(0) + density.mass(1);
    if !(KDE_MASS_RANGE.0..=KDE_MASS_RANGE.1).contains(&mass) {
        return Err(Error::Numerical(format!("estimate has total mass {mass}; refine the grids")));
    }
    Ok(density)
}

/// [`kde_fit`] on the grids chosen by [`kde_grids`].
pub fn kde_fit_auto(s: &Sample, cfg: &KdeConfig) -> Result<JointDensityGrid> {
    let (y, z) = kde_grids(s, cfg)?;
    kde_fit(s, cfg, y, z)
}
