//! End-to-end estimation: density (exact or kernel estimate), operator,
//! Gauss-Newton run, error report, and the Monte Carlo study built on it.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::grid::{fmt_f64, make_grid, GridFn};
use crate::irgnm::{irgnm_run, IterateTrace, TraceSummary};
use crate::iv::{BinaryIVOperator, JointDensityGrid};
use crate::kde::{kde_fit, kde_grids};
use crate::sim::Sample;

/// Exact design density on the default window and `[0, 1]`.
pub fn exact_density(cfg: &RunConfig) -> Result<JointDensityGrid> {
    let y = cfg.design.default_y_grid(cfg.grids.n_y)?;
    cfg.design.exact_density(y, cfg.z_grid()?)
}

/// Kernel estimate from `s` on the grids chosen for it.
pub fn estimated_density(cfg: &RunConfig, s: &Sample) -> Result<JointDensityGrid> {
    let kcfg = cfg.kde_config();
    let (y, z) = kde_grids(s, &kcfg)?;
    kde_fit(s, &kcfg, y, z)
}

/// Operator on the `u`-window `y-window - E[Y]` with `n_u` nodes.
pub fn build_operator(cfg: &RunConfig, density: Arc<JointDensityGrid>) -> Result<BinaryIVOperator> {
    let y = *density.y_grid();
    let u = make_grid(cfg.grids.n_u, y.lo() - density.ey(), y.hi() - density.ey())?;
    BinaryIVOperator::new(density, u, cfg.operator.form).with_scalar_weight(cfg.operator.scalar_weight)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateSummary {
    pub mode: String,
    pub sample_size: Option<usize>,
    pub mean_y: f64,
    /// `||phi_0 - phi_true||`.
    pub initial_error: f64,
    /// `||phi_K - phi_true||` for the selected iterate.
    pub final_error: f64,
    pub normalized_error: f64,
    pub trace: TraceSummary,
}

#[derive(Debug, Clone)]
pub struct Estimate {
    pub density: Arc<JointDensityGrid>,
    pub truth: GridFn,
    pub phi0: GridFn,
    pub trace: IterateTrace,
    /// Absolute error of every iterate against `truth`.
    pub errors: Vec<f64>,
    pub summary: EstimateSummary,
}

impl Estimate {
    pub fn selected(&self) -> &GridFn {
        self.trace.selected()
    }

    /// Pointwise naive regression limit `E[Y | Z = z]` of the design.
    pub fn naive(&self, cfg: &RunConfig) -> Result<GridFn> {
        GridFn::from_fn(*self.truth.grid(), |z| cfg.design.naive_limit(z))
    }

    /// CSV `k,alpha,abs_error,normalized_error`; row 0 is exactly 1.
    pub fn write_errors_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["k", "alpha", "abs_error", "normalized_error"])?;
        let e0 = self.errors[0];
        for (r, e) in self.trace.records.iter().zip(&self.errors) {
            wtr.write_record([r.k.to_string(), fmt_f64(r.alpha), fmt_f64(*e), fmt_f64(e / e0)])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Runs the method on `density` and measures against the design's `phi`.
pub fn estimate_with(cfg: &RunConfig, density: Arc<JointDensityGrid>, mode: &str, sample_size: Option<usize>) -> Result<Estimate> {
    let z = *density.z_grid();
    let op = build_operator(cfg, density.clone())?;
    let phi0 = cfg.penalty.initial_guess(z, density.ey())?;
    let penalty = cfg.penalty.build(&phi0)?;
    let trace = irgnm_run(&op, &penalty, &phi0, &cfg.irgnm)?;
    let truth = GridFn::from_fn(z, |x| cfg.design.true_phi(x))?;
    let errors = trace
        .records
        .iter()
        .map(|r| r.phi.sub(&truth).map(|d| d.norm()))
        .collect::<Result<Vec<f64>>>()?;
    let initial_error = errors[0];
    if !(initial_error > 0.0) {
        return Err(Error::Precondition("initial guess equals the true solution; errors cannot be normalized".into()));
    }
    let final_error = errors[trace.stop_index];
    let summary = EstimateSummary {
        mode: mode.to_string(),
        sample_size,
        mean_y: density.ey(),
        initial_error,
        final_error,
        normalized_error: final_error / initial_error,
        trace: trace.summary(),
    };
    Ok(Estimate { density, truth, phi0, trace, errors, summary })
}

pub fn estimate_exact(cfg: &RunConfig) -> Result<Estimate> {
    estimate_with(cfg, Arc::new(exact_density(cfg)?), "exact", None)
}

pub fn estimate_sample(cfg: &RunConfig, s: &Sample) -> Result<Estimate> {
    estimate_with(cfg, Arc::new(estimated_density(cfg, s)?), "kde", Some(s.len()))
}

/// Quantile by linear interpolation between order statistics (type 7).
/// `sorted` must be non-empty and ascending.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub const REPORT_QUANTILES: [f64; 4] = [0.25, 0.5, 0.75, 0.9];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Replication {
    pub n: usize,
    pub replication: u64,
    pub normalized_error: Option<f64>,
    pub stop_index: Option<usize>,
    pub failure: Option<String>,
    #[serde(skip)]
    pub estimate: Option<GridFn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub n: usize,
    pub replications: usize,
    pub failures: usize,
    pub mean: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p90: f64,
    /// Replication whose error is closest to the median (lowest id on ties).
    pub median_replication: u64,
}

impl McRow {
    pub fn failure_fraction(&self) -> f64 {
        self.failures as f64 / self.replications as f64
    }

    fn from_results(n: usize, results: &[Replication]) -> Option<Self> {
        let ok: Vec<(u64, f64)> = results.iter().filter_map(|r| r.normalized_error.map(|e| (r.replication, e))).collect();
        if ok.is_empty() {
            return None;
        }
        let mut sorted: Vec<f64> = ok.iter().map(|p| p.1).collect();
        sorted.sort_by(f64::total_cmp);
        let q = REPORT_QUANTILES.map(|p| quantile_type7(&sorted, p));
        let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
        let median_replication = ok
            .iter()
            .min_by(|a, b| (a.1 - q[1]).abs().total_cmp(&(b.1 - q[1]).abs()).then(a.0.cmp(&b.0)))
            .map(|p| p.0)
            .unwrap();
        Some(McRow {
            n,
            replications: results.len(),
            failures: results.len() - ok.len(),
            mean,
            p25: q[0],
            p50: q[1],
            p75: q[2],
            p90: q[3],
            median_replication,
        })
    }
}

#[derive(Debug, Clone)]
pub struct McReport {
    pub rows: Vec<McRow>,
    /// Per sample size, ordered by replication id.
    pub replications: Vec<Vec<Replication>>,
}

impl McReport {
    /// Sample sizes whose failure share exceeds `limit`, or which have no
    /// successful replication at all.
    pub fn over_failure_limit(&self, limit: f64) -> Vec<usize> {
        self.replications
            .iter()
            .filter(|reps| {
                let failed = reps.iter().filter(|r| r.normalized_error.is_none()).count();
                failed == reps.len() || failed as f64 / reps.len() as f64 > limit
            })
            .map(|reps| reps[0].n)
            .collect()
    }

    /// Table with columns `n,mean,p25,p50,p75,p90`.
    pub fn write_table_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["n", "mean", "p25", "p50", "p75", "p90"])?;
        for r in &self.rows {
            wtr.write_record([r.n.to_string(), fmt_f64(r.mean), fmt_f64(r.p25), fmt_f64(r.p50), fmt_f64(r.p75), fmt_f64(r.p90)])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// One row per replication: `n,replication,normalized_error,stop_index,failure`.
    pub fn write_replications_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["n", "replication", "normalized_error", "stop_index", "failure"])?;
        for r in self.replications.iter().flatten() {
            wtr.write_record([
                r.n.to_string(),
                r.replication.to_string(),
                r.normalized_error.map(fmt_f64).unwrap_or_default(),
                r.stop_index.map(|k| k.to_string()).unwrap_or_default(),
                r.failure.clone().unwrap_or_default(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn run_replication(cfg: &RunConfig, n: usize, r: u64) -> Replication {
    let mc = &cfg.montecarlo;
    let outcome = cfg
        .design
        .sample_replication(n, mc.master_seed, r)
        .and_then(|s| estimate_sample(cfg, &s));
    let mut rep = Replication { n, replication: r, normalized_error: None, stop_index: None, failure: None, estimate: None };
    match outcome {
        Ok(est) if est.trace.stop_reason.is_failure() => {
            rep.failure = Some(format!("{:?}", est.trace.stop_reason));
        }
        Ok(est) => {
            rep.normalized_error = Some(est.summary.normalized_error);
            rep.stop_index = Some(est.trace.stop_index);
            rep.estimate = Some(est.selected().clone());
        }
        Err(e) => rep.failure = Some(format!("{}: {e}", e.kind())),
    }
    rep
}

/// Replications run in parallel; replication `r` draws from stream `r` of
/// the master seed, so results do not depend on scheduling.
pub fn montecarlo(cfg: &RunConfig) -> Result<McReport> {
    cfg.validate()?;
    let mc = &cfg.montecarlo;
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for &n in &mc.n_list {
        let reps: Vec<Replication> =
            (0..mc.replications as u64).into_par_iter().map(|r| run_replication(cfg, n, r)).collect();
        if let Some(row) = McRow::from_results(n, &reps) {
            rows.push(row);
        }
        all.push(reps);
    }
    Ok(McReport { rows, replications: all })
}
