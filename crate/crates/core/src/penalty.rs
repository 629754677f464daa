//! Convex penalty functionals, their subgradients, proximal maps and the
//! Bregman distance they induce.
//!
//! All implemented penalties are separable: `R(phi) = int r(phi(x), x) dx`
//! with the trapezoid rule, so subgradients and proximal maps act pointwise.

use crate::error::{Error, Result};
use crate::grid::{weighted_dot, Grid1D, GridFn};

/// Default lower clamp for the entropy functional.
pub const DEFAULT_ENTROPY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum Penalty {
    /// `||phi - phi0||^2`.
    Quadratic { phi0: GridFn },
    /// `int phi ln phi`, continued linearly below `floor` so it stays convex
    /// and finite for non-positive arguments.
    Entropy { floor: f64 },
    /// `||phi - phi0||^2` plus the indicator of `lower <= phi <= upper`.
    QuadraticBox { phi0: GridFn, lower: f64, upper: f64 },
}

/// Dual element, paired with primal grid functions through the trapezoid rule.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgradientElem {
    grid: Grid1D,
    values: Vec<f64>,
}

impl SubgradientElem {
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        // reuse the GridFn validation
        let checked = GridFn::new(grid, values)?;
        Ok(Self { grid, values: checked.into_values() })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    /// `<self, h>` in the quadrature pairing.
    pub fn pair(&self, h: &GridFn) -> Result<f64> {
        self.grid.check_same(h.grid())?;
        Ok(weighted_dot(&self.grid.weights(), &self.values, h.values()))
    }
}

impl Penalty {
    pub fn quadratic(phi0: GridFn) -> Self {
        Penalty::Quadratic { phi0 }
    }

    pub fn entropy(floor: f64) -> Result<Self> {
        if !(floor > 0.0 && floor.is_finite()) {
            return Err(Error::Domain(format!("entropy floor must be positive, got {floor}")));
        }
        Ok(Penalty::Entropy { floor })
    }

    pub fn quadratic_with_box(phi0: GridFn, lower: f64, upper: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || lower >= upper {
            return Err(Error::Domain(format!("box needs lower < upper, got [{lower}, {upper}]")));
        }
        Ok(Penalty::QuadraticBox { phi0, lower, upper })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Penalty::Quadratic { .. } => "quadratic",
            Penalty::Entropy { .. } => "entropy",
            Penalty::QuadraticBox { .. } => "quadratic_with_box",
        }
    }

    /// Center of the quadratic part, if the penalty has one.
    pub fn center(&self) -> Option<&GridFn> {
        match self {
            Penalty::Quadratic { phi0 } | Penalty::QuadraticBox { phi0, .. } => Some(phi0),
            Penalty::Entropy { .. } => None,
        }
    }

    fn check_grid(&self, phi: &GridFn) -> Result<()> {
        match self.center() {
            Some(phi0) => phi0.grid().check_same(phi.grid()),
            None => Ok(()),
        }
    }

    fn in_box(&self, phi: &GridFn) -> bool {
        match self {
            Penalty::QuadraticBox { lower, upper, .. } => {
                phi.values().iter().all(|v| *v >= *lower && *v <= *upper)
            }
            _ => true,
        }
    }

    /// `R(phi)`; `+inf` encodes a violated box constraint.
    pub fn eval(&self, phi: &GridFn) -> Result<f64> {
        self.check_grid(phi)?;
        Ok(match self {
            Penalty::Quadratic { phi0 } => phi.sub(phi0)?.norm().powi(2),
            Penalty::QuadraticBox { phi0, .. } => {
                if self.in_box(phi) {
                    phi.sub(phi0)?.norm().powi(2)
                } else {
                    f64::INFINITY
                }
            }
            Penalty::Entropy { floor } => {
                let vals: Vec<f64> = phi.values().iter().map(|&t| entropy_point(t, *floor)).collect();
                weighted_dot(&phi.grid().weights(), &vals, &vec![1.0; vals.len()])
            }
        })
    }

    pub fn subgradient(&self, phi: &GridFn) -> Result<SubgradientElem> {
        self.check_grid(phi)?;
        let values = match self {
            Penalty::Quadratic { phi0 } => quad_grad(phi, phi0),
            Penalty::QuadraticBox { phi0, lower, upper } => {
                if !self.in_box(phi) {
                    return Err(Error::Domain(format!(
                        "point outside the box [{lower}, {upper}] has no subgradient"
                    )));
                }
                quad_grad(phi, phi0)
            }
            Penalty::Entropy { floor } => {
                phi.values().iter().map(|&t| t.max(*floor).ln() + 1.0).collect()
            }
        };
        SubgradientElem::new(*phi.grid(), values)
    }

    /// `R(phi) - R(psi) - <psi_star, phi - psi>`.
    pub fn bregman(&self, phi: &GridFn, psi: &GridFn, psi_star: &SubgradientElem) -> Result<f64> {
        let r_phi = self.eval(phi)?;
        let r_psi = self.eval(psi)?;
        if !r_phi.is_finite() || !r_psi.is_finite() {
            return Err(Error::Domain("Bregman distance at a point with infinite penalty".into()));
        }
        Ok(r_phi - r_psi - psi_star.pair(&phi.sub(psi)?)?)
    }

    /// `argmin_phi ||phi - v||^2 + tau * R(phi)`, solved pointwise.
    pub fn prox(&self, v: &GridFn, tau: f64) -> Result<GridFn> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Domain(format!("prox step must be positive, got {tau}")));
        }
        self.check_grid(v)?;
        let vals = match self {
            Penalty::Quadratic { phi0 } => v
                .values()
                .iter()
                .zip(phi0.values())
                .map(|(v, c)| (v + tau * c) / (1.0 + tau))
                .collect(),
            Penalty::QuadraticBox { phi0, lower, upper } => v
                .values()
                .iter()
                .zip(phi0.values())
                .map(|(v, c)| ((v + tau * c) / (1.0 + tau)).clamp(*lower, *upper))
                .collect(),
            Penalty::Entropy { floor } => {
                v.values().iter().map(|&v| entropy_prox_point(v, tau, *floor)).collect()
            }
        };
        GridFn::new(*v.grid(), vals)
    }
}

fn quad_grad(phi: &GridFn, phi0: &GridFn) -> Vec<f64> {
    phi.values().iter().zip(phi0.values()).map(|(p, c)| 2.0 * (p - c)).collect()
}

pub(crate) fn entropy_point(t: f64, floor: f64) -> f64 {
    if t >= floor {
        t * t.ln()
    } else {
        floor * floor.ln() + (floor.ln() + 1.0) * (t - floor)
    }
}

/// Root of `2(t - v) + tau (ln max(t, floor) + 1) = 0`.
pub(crate) fn entropy_prox_point(v: f64, tau: f64, floor: f64) -> f64 {
    let g = |t: f64| 2.0 * (t - v) + tau * (t.max(floor).ln() + 1.0);
    if g(floor) >= 0.0 {
        // root in the linear continuation
        return v - 0.5 * tau * (floor.ln() + 1.0);
    }
    let mut lo = floor;
    let mut hi = v.max((-1.0f64).exp()).max(floor);
    while g(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..200 {
        let gt = g(t);
        if gt > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let newton = t - gt / (2.0 + tau / t);
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - t).abs() <= 1e-16 * t.max(1e-300) || hi - lo <= 1e-16 * hi {
            return next;
        }
        t = next;
    }
    t
}
