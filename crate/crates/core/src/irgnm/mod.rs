//! Iteratively regularized Gauss-Newton method with convex penalties.
//!
//! Starting from `phi_0`, each step linearizes the forward operator at the
//! previous iterate and solves the convex problem
//!
//! ```text
//! phi_k = argmin ||F'[phi_{k-1}](phi - phi_{k-1}) + F(phi_{k-1})||^2 + alpha_k R(phi)
//! ```
//!
//! with the geometric schedule `alpha_k = alpha_0 r^k`. The loop stops by an
//! a-priori rule (known noise levels), by the balancing principle, or after
//! a fixed number of steps.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{codomain_norm_weighted, fmt_f64, weighted_dot, CodomainElem, Grid1D, GridFn};
use crate::penalty::Penalty;

pub mod source;
pub mod stopping;
pub mod subproblem;

pub use source::{SourceCondition, SourceKind};
pub use stopping::{a_priori_stop_index, alpha_schedule, check_eta_q, lepskii_stop};
pub use subproblem::{solve_subproblem_convex, solve_subproblem_quadratic, SubproblemOutcome, SubproblemSolver};

/// Linear map `X -> Y` together with its adjoint for the quadrature inner
/// products on both sides.
pub trait Linearization: Send + Sync {
    fn apply(&self, h: &GridFn) -> Result<CodomainElem>;
    fn adjoint(&self, y: &CodomainElem) -> Result<GridFn>;
}

/// A differentiable operator `F: L2(z-grid) -> L2(u-grid) (+) R`.
pub trait ForwardModel: Send + Sync {
    fn domain(&self) -> Grid1D;
    fn codomain(&self) -> Grid1D;

    /// Weight of the scalar row in the codomain inner product.
    fn scalar_weight(&self) -> f64 {
        1.0
    }

    fn apply(&self, phi: &GridFn) -> Result<CodomainElem>;
    fn deriv_apply(&self, phi: &GridFn, h: &GridFn) -> Result<CodomainElem>;
    fn deriv_adjoint(&self, phi: &GridFn, y: &CodomainElem) -> Result<GridFn>;

    /// Frozen derivative at `phi`. Models with a cheap dense kernel override
    /// this so that repeated applications inside a solver stay fast.
    fn linearize<'a>(&'a self, phi: &GridFn) -> Result<Box<dyn Linearization + 'a>> {
        Ok(Box::new(ModelLinearization { model: self, phi: phi.clone() }))
    }
}

struct ModelLinearization<'a, M: ?Sized> {
    model: &'a M,
    phi: GridFn,
}

impl<M: ForwardModel + ?Sized> Linearization for ModelLinearization<'_, M> {
    fn apply(&self, h: &GridFn) -> Result<CodomainElem> {
        self.model.deriv_apply(&self.phi, h)
    }

    fn adjoint(&self, y: &CodomainElem) -> Result<GridFn> {
        self.model.deriv_adjoint(&self.phi, y)
    }
}

/// Kernel operator `(T h)(u_i) = sum_j wz_j M_ij h_j` with an optional scalar
/// row `sum_j wz_j c_j h_j`.
#[derive(Debug, Clone)]
pub struct DenseLinearization {
    cols: Grid1D,
    rows: Grid1D,
    kernel: Vec<f64>,
    scalar_row: Option<Vec<f64>>,
    scalar_weight: f64,
    wz: Vec<f64>,
    wu: Vec<f64>,
}

impl DenseLinearization {
    pub fn new(
        cols: Grid1D,
        rows: Grid1D,
        kernel: Vec<f64>,
        scalar_row: Option<Vec<f64>>,
        scalar_weight: f64,
    ) -> Result<Self> {
        if kernel.len() != rows.len() * cols.len() {
            return Err(Error::GridMismatch(format!(
                "kernel has {} entries, expected {} x {}",
                kernel.len(),
                rows.len(),
                cols.len()
            )));
        }
        if let Some(s) = &scalar_row {
            if s.len() != cols.len() {
                return Err(Error::GridMismatch("scalar row length".into()));
            }
        }
        Ok(Self { cols, rows, kernel, scalar_row, scalar_weight, wz: cols.weights(), wu: rows.weights() })
    }

    pub fn cols(&self) -> &Grid1D {
        &self.cols
    }

    pub fn rows(&self) -> &Grid1D {
        &self.rows
    }

    /// Row-major kernel values `M_ij`.
    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    pub fn scalar_row(&self) -> Option<&[f64]> {
        self.scalar_row.as_deref()
    }
}

impl Linearization for DenseLinearization {
    fn apply(&self, h: &GridFn) -> Result<CodomainElem> {
        self.cols.check_same(h.grid())?;
        let nz = self.cols.len();
        let wh: Vec<f64> = self.wz.iter().zip(h.values()).map(|(w, h)| w * h).collect();
        let ufun: Vec<f64> = self
            .kernel
            .par_chunks(nz)
            .map(|row| row.iter().zip(&wh).map(|(m, x)| m * x).sum())
            .collect();
        let scalar = match &self.scalar_row {
            Some(c) => c.iter().zip(&wh).map(|(c, x)| c * x).sum(),
            None => 0.0,
        };
        CodomainElem::new(GridFn::new(self.rows, ufun)?, scalar)
    }

    fn adjoint(&self, y: &CodomainElem) -> Result<GridFn> {
        self.rows.check_same(y.ufun.grid())?;
        let nz = self.cols.len();
        let mut out = vec![0.0; nz];
        for (i, row) in self.kernel.chunks(nz).enumerate() {
            let a = self.wu[i] * y.ufun.values()[i];
            if a != 0.0 {
                for (o, m) in out.iter_mut().zip(row) {
                    *o += a * m;
                }
            }
        }
        if let Some(c) = &self.scalar_row {
            let a = self.scalar_weight * y.scalar;
            for (o, c) in out.iter_mut().zip(c) {
                *o += a * c;
            }
        }
        GridFn::new(self.cols, out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StoppingRule {
    /// Stop at the smallest `K` with `alpha_{K+1} <= max(Theta^-1(delta), gamma^2)`.
    APriori { delta: f64, gamma: f64, source: SourceCondition },
    /// Balancing principle with noise proxy `rho_k = kappa delta / sqrt(alpha_k)`.
    /// `delta_proxy = None` uses the residual norm of the last iterate.
    Lepskii {
        #[serde(default = "default_kappa")]
        kappa: f64,
        #[serde(default)]
        delta_proxy: Option<f64>,
    },
    Fixed { k: usize },
}

fn default_kappa() -> f64 {
    1.0
}

impl Default for StoppingRule {
    fn default() -> Self {
        StoppingRule::Lepskii { kappa: 1.0, delta_proxy: None }
    }
}

pub const DEFAULT_K_MAX: usize = 150;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IrgnmConfig {
    pub alpha0: f64,
    /// `alpha_{k+1} = ratio * alpha_k`.
    pub ratio: f64,
    pub k_max: usize,
    pub subproblem: SubproblemSolver,
    pub stopping: StoppingRule,
    /// Tangential cone constant, reported against `q = 1/ratio` only.
    pub eta: Option<f64>,
}

impl Default for IrgnmConfig {
    fn default() -> Self {
        Self {
            alpha0: 1.0,
            ratio: 0.9,
            k_max: DEFAULT_K_MAX,
            subproblem: SubproblemSolver::default(),
            stopping: StoppingRule::default(),
            eta: None,
        }
    }
}

impl IrgnmConfig {
    pub fn alpha(&self, k: usize) -> f64 {
        self.alpha0 * self.ratio.powi(k as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return Err(Error::Config(format!("alpha0 must be positive, got {}", self.alpha0)));
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::Config(format!("ratio must lie in (0, 1), got {}", self.ratio)));
        }
        if self.k_max < 1 {
            return Err(Error::Config("k_max must be at least 1".into()));
        }
        if !(self.subproblem.tol() > 0.0) || self.subproblem.max_iter() == 0 {
            return Err(Error::Config("subproblem needs tol > 0 and max_iter >= 1".into()));
        }
        match &self.stopping {
            StoppingRule::APriori { source, .. } => source.validate()?,
            StoppingRule::Lepskii { kappa, delta_proxy } => {
                if !(*kappa > 0.0) {
                    return Err(Error::Config(format!("kappa must be positive, got {kappa}")));
                }
                if let Some(d) = delta_proxy {
                    if !(*d >= 0.0) {
                        return Err(Error::Config(format!("delta_proxy must be non-negative, got {d}")));
                    }
                }
            }
            StoppingRule::Fixed { .. } => {}
        }
        if let Some(eta) = self.eta {
            check_eta_q(eta, 1.0 / self.ratio).map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct IterateRecord {
    pub k: usize,
    pub alpha: f64,
    pub phi: GridFn,
    pub residual_norm: f64,
    pub subproblem_iters: usize,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    APriori,
    Lepskii,
    Fixed,
    SubproblemFailure,
    NumericalBlowup,
}

impl StopReason {
    pub fn is_failure(&self) -> bool {
        matches!(self, StopReason::SubproblemFailure | StopReason::NumericalBlowup)
    }
}

/// Everything the loop produced: all iterates, the selected index and why.
#[derive(Debug, Clone)]
pub struct IterateTrace {
    pub records: Vec<IterateRecord>,
    pub stop_index: usize,
    pub stop_reason: StopReason,
    /// Noise level used by the balancing principle, when it ran.
    pub noise_proxy: Option<f64>,
    pub eta_admissible: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceSummary {
    pub stop_index: usize,
    pub stop_reason: StopReason,
    pub iterations: usize,
    pub final_alpha: f64,
    pub selected_alpha: f64,
    pub selected_residual_norm: f64,
    pub noise_proxy: Option<f64>,
    pub eta_admissible: Option<bool>,
}

impl IterateTrace {
    pub fn selected(&self) -> &GridFn {
        &self.records[self.stop_index].phi
    }

    pub fn last(&self) -> &IterateRecord {
        self.records.last().expect("trace always holds the initial guess")
    }

    pub fn summary(&self) -> TraceSummary {
        let sel = &self.records[self.stop_index];
        TraceSummary {
            stop_index: self.stop_index,
            stop_reason: self.stop_reason,
            iterations: self.records.len() - 1,
            final_alpha: self.last().alpha,
            selected_alpha: sel.alpha,
            selected_residual_norm: sel.residual_norm,
            noise_proxy: self.noise_proxy,
            eta_admissible: self.eta_admissible,
        }
    }

    /// CSV with columns `k,alpha,residual_norm,subproblem_iters,kkt_residual`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["k", "alpha", "residual_norm", "subproblem_iters", "kkt_residual"])?;
        for r in &self.records {
            wtr.write_record([
                r.k.to_string(),
                fmt_f64(r.alpha),
                fmt_f64(r.residual_norm),
                r.subproblem_iters.to_string(),
                fmt_f64(r.kkt_residual),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Runs the Gauss-Newton loop from `phi0`.
pub fn irgnm_run(model: &dyn ForwardModel, penalty: &Penalty, phi0: &GridFn, cfg: &IrgnmConfig) -> Result<IterateTrace> {
    cfg.validate()?;
    model.domain().check_same(phi0.grid())?;
    if !penalty.eval(phi0)?.is_finite() {
        return Err(Error::Precondition("penalty is infinite at the initial guess".into()));
    }
    let center = match (&cfg.subproblem, penalty) {
        (SubproblemSolver::Cg { .. }, Penalty::Quadratic { phi0 }) => Some(phi0.clone()),
        (SubproblemSolver::Cg { .. }, other) => {
            return Err(Error::Config(format!(
                "conjugate gradients need the quadratic penalty, got {}",
                other.kind_name()
            )))
        }
        _ => None,
    };
    let sw = model.scalar_weight();

    let last_k = match &cfg.stopping {
        StoppingRule::APriori { delta, gamma, source } => a_priori_stop_index(cfg, source, *delta, *gamma)?.min(cfg.k_max),
        StoppingRule::Fixed { k } => (*k).min(cfg.k_max),
        StoppingRule::Lepskii { .. } => cfg.k_max,
    };

    let mut residual = model.apply(phi0)?;
    if !residual.is_finite() {
        return Err(Error::NonFinite("forward operator at the initial guess".into()));
    }
    let mut records = vec![IterateRecord {
        k: 0,
        alpha: cfg.alpha(0),
        phi: phi0.clone(),
        residual_norm: codomain_norm_weighted(&residual, sw),
        subproblem_iters: 0,
        kkt_residual: 0.0,
    }];
    let mut failure = None;

    for k in 1..=last_k {
        let alpha = cfg.alpha(k);
        let prev = &records.last().unwrap().phi;
        let lin = model.linearize(prev)?;
        let outcome = match (&cfg.subproblem, &center) {
            (SubproblemSolver::Cg { max_iter, tol }, Some(c)) => {
                solve_subproblem_quadratic(lin.as_ref(), &residual, alpha, c, prev, *tol, *max_iter)
            }
            (solver, _) => {
                solve_subproblem_convex(lin.as_ref(), &residual, alpha, penalty, prev, solver.tol(), solver.max_iter())
            }
        };
        let outcome = match outcome {
            Ok(o) => o,
            Err(Error::NonFinite(_)) => {
                failure = Some(StopReason::NumericalBlowup);
                break;
            }
            Err(e) => return Err(e),
        };
        if !outcome.converged {
            failure = Some(StopReason::SubproblemFailure);
            break;
        }
        let next = match model.apply(&outcome.phi) {
            Ok(r) if r.is_finite() => r,
            Ok(_) | Err(Error::NonFinite(_)) => {
                failure = Some(StopReason::NumericalBlowup);
                break;
            }
            Err(e) => return Err(e),
        };
        residual = next;
        records.push(IterateRecord {
            k,
            alpha,
            phi: outcome.phi,
            residual_norm: codomain_norm_weighted(&residual, sw),
            subproblem_iters: outcome.iterations,
            kkt_residual: outcome.kkt_residual,
        });
    }

    let mut noise_proxy = None;
    let (stop_index, stop_reason) = match (&cfg.stopping, failure) {
        (StoppingRule::Lepskii { kappa, delta_proxy }, f) => {
            let delta = delta_proxy.unwrap_or(records.last().unwrap().residual_norm);
            noise_proxy = Some(delta);
            let its: Vec<&GridFn> = records.iter().map(|r| &r.phi).collect();
            let k = lepskii_stop(&its, |m| kappa * delta / records[m].alpha.sqrt())?;
            (k, f.unwrap_or(StopReason::Lepskii))
        }
        (StoppingRule::APriori { .. }, f) => (records.len() - 1, f.unwrap_or(StopReason::APriori)),
        (StoppingRule::Fixed { .. }, f) => (records.len() - 1, f.unwrap_or(StopReason::Fixed)),
    };

    Ok(IterateTrace {
        records,
        stop_index,
        stop_reason,
        noise_proxy,
        eta_admissible: cfg.eta.map(|e| check_eta_q(e, 1.0 / cfg.ratio)).transpose()?,
    })
}

/// Checks `<T h, y> = <h, T* y>` for one pair; returns the relative defect.
pub fn adjoint_defect(lin: &dyn Linearization, h: &GridFn, y: &CodomainElem, scalar_weight: f64) -> Result<f64> {
    let th = lin.apply(h)?;
    let tsy = lin.adjoint(y)?;
    let lhs = th.dot(y, scalar_weight)?;
    let w = h.grid().weights();
    let rhs = weighted_dot(&w, h.values(), tsy.values());
    let scale = crate::grid::codomain_norm_weighted(&th, scalar_weight)
        * crate::grid::codomain_norm_weighted(y, scalar_weight)
        + h.norm() * tsy.norm();
    Ok((lhs - rhs).abs() / scale.max(f64::MIN_POSITIVE))
}
