//! Convex subproblems of a Newton step:
//!
//! `min_phi ||T (phi - phi_prev) + b||^2 + alpha R(phi)`
//!
//! with `T` the linearized forward operator and `b` the current residual.
//! The quadratic penalty is handled by conjugate gradients on the normal
//! equations; any penalty with a proximal map goes through FISTA.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{weighted_dot, CodomainElem, GridFn};
use crate::penalty::Penalty;

use super::Linearization;

pub const DEFAULT_CG_MAX_ITER: usize = 2000;
pub const DEFAULT_FISTA_MAX_ITER: usize = 5000;
pub const DEFAULT_SUBPROBLEM_TOL: f64 = 1e-8;
const POWER_STEPS: usize = 20;
const LIPSCHITZ_SAFETY: f64 = 1.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SubproblemSolver {
    Cg {
        #[serde(default = "default_cg_iters")]
        max_iter: usize,
        #[serde(default = "default_tol")]
        tol: f64,
    },
    Fista {
        #[serde(default = "default_fista_iters")]
        max_iter: usize,
        #[serde(default = "default_tol")]
        tol: f64,
    },
}

fn default_cg_iters() -> usize {
    DEFAULT_CG_MAX_ITER
}
fn default_fista_iters() -> usize {
    DEFAULT_FISTA_MAX_ITER
}
fn default_tol() -> f64 {
    DEFAULT_SUBPROBLEM_TOL
}

impl Default for SubproblemSolver {
    fn default() -> Self {
        SubproblemSolver::Cg { max_iter: DEFAULT_CG_MAX_ITER, tol: DEFAULT_SUBPROBLEM_TOL }
    }
}

impl SubproblemSolver {
    pub fn tol(&self) -> f64 {
        match *self {
            SubproblemSolver::Cg { tol, .. } | SubproblemSolver::Fista { tol, .. } => tol,
        }
    }

    pub fn max_iter(&self) -> usize {
        match *self {
            SubproblemSolver::Cg { max_iter, .. } | SubproblemSolver::Fista { max_iter, .. } => max_iter,
        }
    }
}

/// Result of one subproblem solve. `converged == false` carries the last
/// iterate and its residual.
#[derive(Debug, Clone)]
pub struct SubproblemOutcome {
    pub phi: GridFn,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub converged: bool,
}

/// Unique minimizer of `||T(phi - phi_prev) + b||^2 + alpha ||phi - phi0||^2`
/// by conjugate gradients on `(T*T + alpha I) phi = T*T phi_prev - T*b + alpha phi0`,
/// warm-started at `phi_prev`. Converged when the residual of the normal
/// equations is at most `tol (1 + ||rhs||)`.
pub fn solve_subproblem_quadratic(
    lin: &dyn Linearization,
    b: &CodomainElem,
    alpha: f64,
    phi0: &GridFn,
    phi_prev: &GridFn,
    tol: f64,
    max_iter: usize,
) -> Result<SubproblemOutcome> {
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    let grid = *phi_prev.grid();
    grid.check_same(phi0.grid())?;
    let w = grid.weights();
    let normal = |x: &[f64]| -> Result<Vec<f64>> {
        let tx = lin.apply(&GridFn::from_vec_unchecked(grid, x.to_vec()))?;
        let ttx = lin.adjoint(&tx)?;
        Ok(ttx.values().iter().zip(x).map(|(a, x)| a + alpha * x).collect())
    };

    // rhs = T*(T phi_prev - b) + alpha phi0
    let tp = lin.apply(phi_prev)?;
    let rhs_dual = lin.adjoint(&tp.axpy(-1.0, b)?)?;
    let rhs: Vec<f64> = rhs_dual.values().iter().zip(phi0.values()).map(|(r, c)| r + alpha * c).collect();
    let rhs_norm = weighted_dot(&w, &rhs, &rhs).sqrt();
    let target = tol * (1.0 + rhs_norm);

    let mut x = phi_prev.values().to_vec();
    let ax = normal(&x)?;
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rr = weighted_dot(&w, &r, &r);
    let mut iters = 0;
    while rr.sqrt() > target && iters < max_iter {
        let ap = normal(&p)?;
        let pap = weighted_dot(&w, &p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let step = rr / pap;
        for i in 0..x.len() {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        let rr_new = weighted_dot(&w, &r, &r);
        let beta = rr_new / rr;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
        iters += 1;
        if iters % 50 == 0 {
            // refresh the recursive residual against drift
            let ax = normal(&x)?;
            for i in 0..r.len() {
                r[i] = rhs[i] - ax[i];
            }
            rr = weighted_dot(&w, &r, &r);
        }
    }
    let ax = normal(&x)?;
    let res: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let kkt = weighted_dot(&w, &res, &res).sqrt();
    let phi = GridFn::new(grid, x)?;
    Ok(SubproblemOutcome { phi, iterations: iters, kkt_residual: kkt, converged: kkt <= target })
}

/// Largest eigenvalue of `T*T` by power iteration.
pub fn normal_operator_norm(lin: &dyn Linearization, start: &GridFn, steps: usize) -> Result<f64> {
    let grid = *start.grid();
    // deterministic, generic start vector that is unlikely to be orthogonal
    // to the top singular vector
    let mut v = GridFn::from_fn(grid, |x| 1.0 + 0.25 * (7.3 * x + 0.4).sin())?;
    let mut lambda = 0.0;
    for _ in 0..steps {
        let n = v.norm();
        if n == 0.0 {
            return Ok(0.0);
        }
        v = v.scale(1.0 / n)?;
        let w = lin.adjoint(&lin.apply(&v)?)?;
        lambda = crate::grid::inner_product(&v, &w)?;
        v = w;
    }
    Ok(lambda.max(0.0))
}

/// FISTA with gradient restart on `h(phi) = ||T(phi - phi_prev) + b||^2`
/// and the proximal map of `alpha R`. Step `1/L` with `L = 2.2 ||T*T||`
/// estimated by 20 power steps. Stops when `||x_{k+1} - y_k|| <= tol (1 + ||x_{k+1}||)`;
/// the reported KKT residual is the gradient-mapping norm `L ||x_{k+1} - y_k||`.
pub fn solve_subproblem_convex(
    lin: &dyn Linearization,
    b: &CodomainElem,
    alpha: f64,
    penalty: &Penalty,
    phi_prev: &GridFn,
    tol: f64,
    max_iter: usize,
) -> Result<SubproblemOutcome> {
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    let grid = *phi_prev.grid();
    let ttn = normal_operator_norm(lin, phi_prev, POWER_STEPS)?;
    // a zero operator still needs a finite step
    let lip = (2.0 * LIPSCHITZ_SAFETY * ttn).max(1e-12 * alpha).max(f64::MIN_POSITIVE);
    let tau = 2.0 * alpha / lip;

    let grad = |y: &GridFn| -> Result<GridFn> {
        let r = lin.apply(&y.sub(phi_prev)?)?.axpy(1.0, b)?;
        lin.adjoint(&r)?.scale(2.0)
    };

    // start from a feasible point
    let mut x = penalty.prox(phi_prev, tau.max(1e-300))?;
    if penalty.eval(phi_prev)?.is_finite() {
        x = phi_prev.clone();
    }
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut iters = 0;
    let mut kkt = f64::INFINITY;
    let mut converged = false;
    while iters < max_iter {
        let g = grad(&y)?;
        let x_next = penalty.prox(&y.axpy(-1.0 / lip, &g)?, tau)?;
        let step = x_next.sub(&y)?;
        let step_norm = step.norm();
        kkt = lip * step_norm;
        iters += 1;
        if step_norm <= tol * (1.0 + x_next.norm()) {
            x = x_next;
            converged = true;
            break;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let dx = x_next.sub(&x)?;
        // restart momentum when it points uphill
        if crate::grid::inner_product(&step, &dx)? < 0.0 {
            t = 1.0;
            y = x_next.clone();
        } else {
            y = x_next.axpy((t - 1.0) / t_next, &dx)?;
            t = t_next;
        }
        x = x_next;
    }
    Ok(SubproblemOutcome { phi: GridFn::new(grid, x.into_values())?, iterations: iters, kkt_residual: kkt, converged })
}
