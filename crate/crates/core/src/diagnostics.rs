//! Spectral diagnostics of linearized operators and convergence-rate
//! experiments on diagonal models.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CodomainElem, Grid1D, GridFn};
use crate::irgnm::{irgnm_run, ForwardModel, IrgnmConfig, SourceCondition, SourceKind, StoppingRule, SubproblemSolver};
use crate::penalty::Penalty;

/// Largest number of domain nodes accepted by [`assemble_jacobian`].
pub const MAX_JACOBIAN_COLUMNS: usize = 512;

const POWER_TOL: f64 = 1e-8;
const POWER_MAX_ITER: usize = 20_000;

/// Matrix of a linearized operator in orthonormal coordinates: columns are
/// scaled by `sqrt(w_z)`, function rows by `sqrt(w_u)` and the scalar row by
/// `sqrt(scalar_weight)`, so its singular values are those of the operator
/// between the weighted spaces.
#[derive(Debug, Clone)]
pub struct JacobianMatrix {
    matrix: DMatrix<f64>,
    domain: Grid1D,
    codomain: Grid1D,
    scalar_weight: f64,
}

impl JacobianMatrix {
    pub fn from_matrix(matrix: DMatrix<f64>, domain: Grid1D, codomain: Grid1D, scalar_weight: f64) -> Result<Self> {
        if matrix.ncols() != domain.len() || matrix.nrows() != codomain.len() + 1 {
            return Err(Error::GridMismatch(format!(
                "{} x {} matrix for {} columns and {} + 1 rows",
                matrix.nrows(),
                matrix.ncols(),
                domain.len(),
                codomain.len()
            )));
        }
        Ok(Self { matrix, domain, codomain, scalar_weight })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    /// The operator applied to `h`, undoing the coordinate scaling.
    pub fn apply(&self, h: &GridFn) -> Result<CodomainElem> {
        if !self.domain.approx_eq(h.grid()) {
            return Err(Error::GridMismatch("direction is not on the Jacobian's domain".into()));
        }
        let wz = self.domain.weights();
        let x = DVector::from_iterator(h.len(), h.values().iter().zip(&wz).map(|(v, w)| v * w.sqrt()));
        let y = &self.matrix * x;
        let wu = self.codomain.weights();
        let nu = self.codomain.len();
        let ufun: Vec<f64> = (0..nu).map(|i| y[i] / wu[i].sqrt()).collect();
        CodomainElem::new(GridFn::new(self.codomain, ufun)?, y[nu] / self.scalar_weight.sqrt())
    }
}

/// Materializes the derivative of `model` at `phi`, one basis direction per column.
pub fn assemble_jacobian(model: &dyn ForwardModel, phi: &GridFn) -> Result<JacobianMatrix> {
    let domain = model.domain();
    let codomain = model.codomain();
    let nz = domain.len();
    if nz > MAX_JACOBIAN_COLUMNS {
        return Err(Error::Precondition(format!(
            "dense Jacobian limited to {MAX_JACOBIAN_COLUMNS} columns, got {nz}"
        )));
    }
    let lin = model.linearize(phi)?;
    let (wz, wu) = (domain.weights(), codomain.weights());
    let sw = model.scalar_weight();
    let nu = codomain.len();
    let mut matrix = DMatrix::zeros(nu + 1, nz);
    for j in 0..nz {
        let mut e = vec![0.0; nz];
        e[j] = 1.0 / wz[j].sqrt();
        let col = lin.apply(&GridFn::new(domain, e)?)?;
        for i in 0..nu {
            matrix[(i, j)] = wu[i].sqrt() * col.ufun.values()[i];
        }
        matrix[(nu, j)] = sw.sqrt() * col.scalar;
    }
    JacobianMatrix::from_matrix(matrix, domain, codomain, sw)
}

/// All singular values, non-increasing.
pub fn singular_values(j: &JacobianMatrix) -> Vec<f64> {
    let mut s: Vec<f64> = j.matrix.clone().singular_values().iter().map(|v| v.max(0.0)).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Largest eigenvalue of the symmetric positive semi-definite `apply`, by
/// power iteration from a fixed start vector.
fn power_max(n: usize, apply: impl Fn(&DVector<f64>) -> DVector<f64>) -> f64 {
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.01 * ((i * 7919) % 101) as f64);
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let w = apply(&v);
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (next - lambda).abs() <= POWER_TOL * next.abs() {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Operator norm of `j` by power iteration on `J^T J`.
pub fn operator_norm(j: &JacobianMatrix) -> f64 {
    let m = &j.matrix;
    power_max(m.ncols(), |v| m.tr_mul(&(m * v))).sqrt()
}

/// `||A^T A - B^T B||^(1/2)`, the operator-noise bound for an estimated
/// operator `B` of `A`. Symmetric in its arguments.
pub fn gamma_bound(a: &JacobianMatrix, b: &JacobianMatrix) -> Result<f64> {
    if a.matrix.shape() != b.matrix.shape() {
        return Err(Error::GridMismatch(format!(
            "Jacobian shapes differ: {:?} vs {:?}",
            a.matrix.shape(),
            b.matrix.shape()
        )));
    }
    let d = a.matrix.tr_mul(&a.matrix) - b.matrix.tr_mul(&b.matrix);
    // the spectral norm of the symmetric D is sqrt(lambda_max(D^2))
    let norm_d = power_max(d.ncols(), |v| &d * (&d * v)).sqrt();
    Ok(norm_d.sqrt())
}

/// Least-squares line `y = slope x + intercept` with its coefficient of determination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Numerical("a line fit needs at least two points".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("line fit data".into()));
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Numerical("line fit with a single abscissa".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LineFit { slope, intercept: my - slope * mx, r_squared })
}

/// Fit of `ln sigma_j` against `j` for `j = 1..=count`.
pub fn spectral_decay_fit(sigma: &[f64], count: usize) -> Result<LineFit> {
    if sigma.len() < count {
        return Err(Error::Precondition(format!("{count} singular values requested, {} available", sigma.len())));
    }
    if sigma[..count].iter().any(|s| *s <= 0.0) {
        return Err(Error::Numerical("zero singular value in the fit range".into()));
    }
    let x: Vec<f64> = (1..=count).map(|j| j as f64).collect();
    let y: Vec<f64> = sigma[..count].iter().map(|s| s.ln()).collect();
    fit_line(&x, &y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Decay {
    /// `sigma_j = j^(-a)`.
    Polynomial { a: f64 },
    /// `sigma_j = exp(-c j)`.
    Exponential { c: f64 },
}

impl Decay {
    pub fn sigma(&self, j: usize) -> f64 {
        match *self {
            Decay::Polynomial { a } => (j as f64).powf(-a),
            Decay::Exponential { c } => (-c * j as f64).exp(),
        }
    }
}

/// `F(x) = diag(sigma) x - data` on a unit-spacing grid.
#[derive(Debug, Clone)]
pub struct DiagonalModel {
    grid: Grid1D,
    sigma: Vec<f64>,
    data: Vec<f64>,
}

impl DiagonalModel {
    pub fn new(sigma: Vec<f64>, data: Vec<f64>) -> Result<Self> {
        if sigma.len() != data.len() || sigma.len() < 2 {
            return Err(Error::Domain("diagonal model needs matching lengths of at least 2".into()));
        }
        let grid = Grid1D::new(sigma.len(), 1.0, sigma.len() as f64)?;
        Ok(Self { grid, sigma, data })
    }

    pub fn grid(&self) -> Grid1D {
        self.grid
    }

    fn scaled(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.sigma).map(|(x, s)| x * s).collect()
    }
}

impl ForwardModel for DiagonalModel {
    fn domain(&self) -> Grid1D {
        self.grid
    }

    fn codomain(&self) -> Grid1D {
        self.grid
    }

    fn apply(&self, phi: &GridFn) -> Result<CodomainElem> {
        let v = self.scaled(phi.values()).into_iter().zip(&self.data).map(|(a, b)| a - b).collect();
        CodomainElem::new(GridFn::new(self.grid, v)?, 0.0)
    }

    fn deriv_apply(&self, _phi: &GridFn, h: &GridFn) -> Result<CodomainElem> {
        CodomainElem::new(GridFn::new(self.grid, self.scaled(h.values()))?, 0.0)
    }

    fn deriv_adjoint(&self, _phi: &GridFn, y: &CodomainElem) -> Result<GridFn> {
        GridFn::new(self.grid, self.scaled(y.ufun.values()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateConfig {
    pub dimension: usize,
    pub deltas: Vec<f64>,
    pub seed: u64,
    pub cg_tol: f64,
    pub k_max: usize,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self { dimension: 400, deltas: vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6], seed: 1, cg_tol: 1e-13, k_max: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub delta: f64,
    pub stop_index: usize,
    pub error: f64,
}

/// Outcome of a rate experiment. For Hoelder conditions `fitted` is the
/// slope of `ln error` against `ln delta`; for logarithmic conditions it is
/// `p` in `error ~ C (-ln delta)^(-p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub fitted: f64,
    pub target: f64,
    pub r_squared: f64,
    pub points: Vec<RatePoint>,
}

/// Runs the method with the a-priori stopping rule on a diagonal model whose
/// solution satisfies `sc` by construction, once per noise level.
pub fn rate_experiment(sc: &SourceCondition, decay: Decay, cfg: &RateConfig) -> Result<RateReport> {
    sc.validate()?;
    if cfg.deltas.len() < 2 || cfg.deltas.iter().any(|d| !(*d > 0.0 && *d < 1.0)) {
        return Err(Error::Config("rate experiment needs at least two noise levels in (0, 1)".into()));
    }
    let n = cfg.dimension;
    let sigma: Vec<f64> = (1..=n).map(|j| decay.sigma(j)).collect();
    let t_max = sc.t_max();
    let mut truth: Vec<f64> = sigma
        .iter()
        .enumerate()
        .map(|(i, s)| sc.lambda((s * s).min(t_max)).map(|l| l * ((i + 1) as f64).powf(-0.51)))
        .collect::<Result<_>>()?;
    let probe = DiagonalModel::new(sigma.clone(), vec![0.0; n])?;
    let grid = probe.grid();
    let norm = GridFn::new(grid, truth.clone())?.norm();
    truth.iter_mut().for_each(|v| *v /= norm);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let xi: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let xi_norm = GridFn::new(grid, xi.clone())?.norm();
    let truth_fn = GridFn::new(grid, truth.clone())?;

    let points: Vec<RatePoint> = cfg
        .deltas
        .par_iter()
        .map(|&delta| -> Result<RatePoint> {
            let data = sigma.iter().zip(&truth).zip(&xi).map(|((s, x), e)| s * x + delta * e / xi_norm).collect();
            let model = DiagonalModel::new(sigma.clone(), data)?;
            let zero = GridFn::zeros(grid);
            let irgnm = IrgnmConfig {
                k_max: cfg.k_max,
                subproblem: SubproblemSolver::Cg { max_iter: 20 * n, tol: cfg.cg_tol },
                stopping: StoppingRule::APriori { delta, gamma: 0.0, source: *sc },
                ..IrgnmConfig::default()
            };
            let trace = irgnm_run(&model, &Penalty::quadratic(zero.clone()), &zero, &irgnm)?;
            if trace.stop_reason.is_failure() {
                return Err(Error::Numerical(format!("rate run at delta = {delta} stopped with {:?}", trace.stop_reason)));
            }
            Ok(RatePoint { delta, stop_index: trace.stop_index, error: trace.selected().sub(&truth_fn)?.norm() })
        })
        .collect::<Result<_>>()?;

    let ln_err: Vec<f64> = points.iter().map(|p| p.error.ln()).collect();
    let (fit, fitted, target) = match sc.kind {
        SourceKind::Holder { mu } => {
            let x: Vec<f64> = points.iter().map(|p| p.delta.ln()).collect();
            let f = fit_line(&x, &ln_err)?;
            (f, f.slope, 2.0 * mu / (2.0 * mu + 1.0))
        }
        SourceKind::Logarithmic { p } => {
            let x: Vec<f64> = points.iter().map(|pt| (-pt.delta.ln()).ln()).collect();
            let f = fit_line(&x, &ln_err)?;
            (f, -f.slope, p)
        }
    };
    if !(fitted.is_finite() && fitted > 0.0) {
        return Err(Error::Numerical(format!("degenerate rate fit: {fitted}")));
    }
    Ok(RateReport { fitted, target, r_squared: fit.r_squared, points })
}
