//! Regularization schedule and stopping rules.

use crate::error::{Error, Result};
use crate::grid::GridFn;

use super::source::{stopping_threshold, SourceCondition};
use super::IrgnmConfig;

/// Constant in the ball-intersection form of the balancing principle.
pub const LEPSKII_BALL_FACTOR: f64 = 4.0;

/// `alpha_k = alpha0 * r^k`.
pub fn alpha_schedule(cfg: &IrgnmConfig, k: usize) -> f64 {
    cfg.alpha(k)
}

/// Smallest `K >= 0` with `alpha_{K+1} <= max(Theta^-1(delta), gamma^2)`.
pub fn a_priori_stop_index(cfg: &IrgnmConfig, sc: &SourceCondition, delta: f64, gamma: f64) -> Result<usize> {
    let threshold = stopping_threshold(sc, delta, gamma)?;
    if !(cfg.alpha0 > threshold) {
        return Err(Error::Precondition(format!(
            "alpha0 = {} must exceed max(Theta^-1(delta), gamma^2) = {threshold}",
            cfg.alpha0
        )));
    }
    // log estimate, then walk to the exact boundary of the discrete schedule
    let est = ((threshold / cfg.alpha0).ln() / cfg.ratio.ln()).ceil() - 1.0;
    let mut k = if est.is_finite() && est > 0.0 { est as usize } else { 0 };
    while k > 0 && cfg.alpha(k) <= threshold {
        k -= 1;
    }
    while cfg.alpha(k + 1) > threshold {
        k += 1;
    }
    Ok(k)
}

/// Balancing principle over a sequence of iterates:
/// `K = min { k : ||phi_m - phi_k|| <= 4 rho_m for all k < m <= last }`.
pub fn lepskii_stop(iterates: &[&GridFn], rho: impl Fn(usize) -> f64) -> Result<usize> {
    if iterates.is_empty() {
        return Err(Error::Precondition("balancing principle on an empty trace".into()));
    }
    let last = iterates.len() - 1;
    'outer: for k in 0..last {
        for m in (k + 1)..=last {
            let dist = iterates[m].sub(iterates[k])?.norm();
            if dist > LEPSKII_BALL_FACTOR * rho(m) {
                continue 'outer;
            }
        }
        return Ok(k);
    }
    Ok(last)
}

/// Admissibility of the tangential-cone constant: `4 eta (1+eta) (1-eta)^-3 < q^-3/2`.
pub fn check_eta_q(eta: f64, q: f64) -> Result<bool> {
    if !(0.0..1.0).contains(&eta) {
        return Err(Error::Domain(format!("eta must lie in [0, 1), got {eta}")));
    }
    if !(q > 1.0) || !q.is_finite() {
        return Err(Error::Domain(format!("q must exceed 1, got {q}")));
    }
    Ok(4.0 * eta * (1.0 + eta) / (1.0 - eta).powi(3) < q.powf(-1.5))
}
