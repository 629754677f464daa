//! Index functions `Lambda` describing smoothness of the solution, and the
//! derived `Theta(t) = sqrt(t) Lambda(t)` used by the a-priori stopping rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const INV_E: f64 = 0.36787944117144233;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceKind {
    /// `Lambda(t) = t^mu`, `0 < mu <= 1/2`.
    Holder { mu: f64 },
    /// `Lambda(t) = (-ln t)^(-p)` on `(0, 1/e]`.
    Logarithmic { p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceCondition {
    #[serde(flatten)]
    pub kind: SourceKind,
    /// Multiplier of the variational inequality. Only used for reporting.
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_beta() -> f64 {
    1.0
}

impl SourceCondition {
    pub fn holder(mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu <= 0.5) {
            return Err(Error::Domain(format!("Hoelder exponent must lie in (0, 1/2], got {mu}")));
        }
        Ok(Self { kind: SourceKind::Holder { mu }, beta: 1.0 })
    }

    pub fn logarithmic(p: f64) -> Result<Self> {
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::Domain(format!("logarithmic order must be positive, got {p}")));
        }
        Ok(Self { kind: SourceKind::Logarithmic { p }, beta: 1.0 })
    }

    pub fn with_beta(mut self, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Domain(format!("beta must be positive, got {beta}")));
        }
        self.beta = beta;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            SourceKind::Holder { mu } => Self::holder(mu).map(|_| ()),
            SourceKind::Logarithmic { p } => Self::logarithmic(p).map(|_| ()),
        }
    }

    /// Right end of the domain of `Lambda`.
    pub fn t_max(&self) -> f64 {
        match self.kind {
            SourceKind::Holder { .. } => f64::INFINITY,
            SourceKind::Logarithmic { .. } => INV_E,
        }
    }

    fn check_t(&self, t: f64) -> Result<()> {
        if !(t > 0.0) || t > self.t_max() {
            return Err(Error::Domain(format!("t = {t} outside (0, {}]", self.t_max())));
        }
        Ok(())
    }

    pub fn lambda(&self, t: f64) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.lambda_unchecked(t))
    }

    fn lambda_unchecked(&self, t: f64) -> f64 {
        match self.kind {
            SourceKind::Holder { mu } => t.powf(mu),
            SourceKind::Logarithmic { p } => (-t.ln()).powf(-p),
        }
    }

    fn theta_unchecked(&self, t: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else {
            t.sqrt() * self.lambda_unchecked(t)
        }
    }

    pub fn theta(&self, t: f64) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.theta_unchecked(t))
    }

    /// Inverse of the strictly increasing `Theta`, by bisection down to
    /// adjacent floating point numbers. Returns the largest `t` with
    /// `Theta(t) <= s`, so `Theta_inv(Theta(t)) >= t`.
    pub fn theta_inverse(&self, s: f64) -> Result<f64> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Domain(format!("Theta^-1 needs a positive argument, got {s}")));
        }
        let mut hi = match self.kind {
            SourceKind::Logarithmic { .. } => {
                let top = self.theta_unchecked(INV_E);
                if s > top {
                    return Err(Error::Domain(format!("{s} exceeds the range of Theta, max {top}")));
                }
                if s == top {
                    return Ok(INV_E);
                }
                INV_E
            }
            SourceKind::Holder { .. } => {
                let mut hi = 1.0f64;
                while self.theta_unchecked(hi) <= s {
                    hi *= 2.0;
                }
                hi
            }
        };
        let mut lo = 0.0f64;
        for _ in 0..4000 {
            let mid = lo + 0.5 * (hi - lo);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.theta_unchecked(mid) <= s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if lo <= 0.0 {
            return Err(Error::Numerical(format!("Theta^-1({s}) underflows")));
        }
        Ok(lo)
    }

    /// `Lambda(max(Theta^-1(delta), gamma^2))^2`, the squared-norm error order.
    pub fn rate_bound(&self, delta: f64, gamma: f64) -> Result<f64> {
        let t = stopping_threshold(self, delta, gamma)?;
        Ok(self.lambda(t)?.powi(2))
    }

    /// Checks concavity of `Lambda` and monotonicity of `sqrt(t)/Lambda(t)` on
    /// a log-spaced sample of `[t_min, t_hi]`, with `t_hi` capped at the
    /// domain end.
    ///
    /// The logarithmic index function is concave only up to `exp(-1 - p)`.
    pub fn check_shape(&self, t_min: f64, t_hi: f64, samples: usize) -> bool {
        let t_hi = t_hi.min(self.t_max());
        let ts: Vec<f64> = (0..samples)
            .map(|i| t_min * (t_hi / t_min).powf(i as f64 / (samples - 1) as f64))
            .collect();
        let ratio_ok = ts
            .windows(2)
            .all(|w| w[1].sqrt() / self.lambda_unchecked(w[1]) >= w[0].sqrt() / self.lambda_unchecked(w[0]) * (1.0 - 1e-12));
        let concave_ok = ts.windows(3).all(|w| {
            let (a, b, c) = (w[0], w[1], w[2]);
            let interp = self.lambda_unchecked(a)
                + (self.lambda_unchecked(c) - self.lambda_unchecked(a)) * (b - a) / (c - a);
            self.lambda_unchecked(b) >= interp - 1e-12 * interp.abs().max(1e-300)
        });
        ratio_ok && concave_ok
    }
}

/// `max(Theta^-1(delta), gamma^2)`, with `Theta^-1(0) = 0`.
pub fn stopping_threshold(sc: &SourceCondition, delta: f64, gamma: f64) -> Result<f64> {
    if !(delta >= 0.0 && gamma >= 0.0) || !delta.is_finite() || !gamma.is_finite() {
        return Err(Error::Domain(format!("noise levels must be non-negative, got ({delta}, {gamma})")));
    }
    if delta == 0.0 && gamma == 0.0 {
        return Err(Error::Domain("delta and gamma are both zero".into()));
    }
    let from_delta = if delta > 0.0 { sc.theta_inverse(delta)? } else { 0.0 };
    Ok(from_delta.max(gamma * gamma))
}

/// Free-function form of [`SourceCondition::lambda`].
pub fn lambda_eval(sc: &SourceCondition, t: f64) -> Result<f64> {
    sc.lambda(t)
}

/// `(Theta(s), Theta^-1(s))`.
pub fn theta_and_inverse(sc: &SourceCondition, s: f64) -> Result<(f64, f64)> {
    Ok((sc.theta(s)?, sc.theta_inverse(s)?))
}

pub fn rate_bound(sc: &SourceCondition, delta: f64, gamma: f64) -> Result<f64> {
    sc.rate_bound(delta, gamma)
}
