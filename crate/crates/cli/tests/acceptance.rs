//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use irgnm_iv::diagnostics::{spectral_decay_fit, Decay, RateConfig};
use irgnm_iv::irgnm::{a_priori_stop_index, adjoint_defect, check_eta_q, source::stopping_threshold, SourceCondition};
use irgnm_iv::pipeline::{estimate_exact, montecarlo};
use irgnm_iv::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EXACT_INITIAL_RANGE: (f64, f64) = (0.11, 0.15);
const EXACT_FINAL_MAX: f64 = 0.02;
const EXACT_BUDGET: Duration = Duration::from_secs(5 * 60);

const MC_REPLICATIONS: usize = 100;
const MC_TARGETS: [(usize, f64, f64); 2] = [(1_000, 0.5751, 0.15), (10_000, 0.3524, 0.12)];
const MC_BUDGET: Duration = Duration::from_secs(60 * 60);

const SVD_FIT_COUNT: usize = 20;
const SVD_MIN_R2: f64 = 0.95;
const SVD_BUDGET: Duration = Duration::from_secs(60);

const INDEPENDENCE_MAX: f64 = 5e-3;
/// Splitting every cell in three should shrink a second-order error by 9;
/// 80% of that is accepted.
const REFINEMENT_MIN_RATIO: f64 = 0.8 * 9.0;

const RATE_RELATIVE_TOL: f64 = 0.2;
const LOG_RATE_RELATIVE_TOL: f64 = 0.3;

const ADJOINT_TOL: f64 = 1e-9;
const FD_MIN_ORDER: f64 = 0.9;
const BREGMAN_TOL: f64 = 1e-10;
const RANDOM_DRAWS: usize = 100;

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, id: &str, name: &str, pass: bool, detail: String) {
        if !pass {
            self.failed += 1;
        }
        println!("{} [{id}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn criterion_exact(rep: &mut Report) {
    let t = Instant::now();
    let est = estimate_exact(&RunConfig::default()).expect("exact estimate runs");
    let elapsed = t.elapsed();
    let s = &est.summary;
    let best = est.errors.iter().copied().fold(f64::INFINITY, f64::min);
    let init_ok = (EXACT_INITIAL_RANGE.0..=EXACT_INITIAL_RANGE.1).contains(&s.initial_error);
    let final_ok = s.final_error <= EXACT_FINAL_MAX;
    rep.line(
        "1",
        "exact-density inversion",
        init_ok && final_ok && elapsed <= EXACT_BUDGET,
        format!(
            "initial error {:.4} in [{}, {}] {}; final error {:.4} <= {} {} (stop k = {}, best over all iterates {:.4}); {:.1?}",
            s.initial_error,
            EXACT_INITIAL_RANGE.0,
            EXACT_INITIAL_RANGE.1,
            if init_ok { "ok" } else { "no" },
            s.final_error,
            EXACT_FINAL_MAX,
            if final_ok { "ok" } else { "no" },
            s.trace.stop_index,
            best,
            elapsed
        ),
    );
}

fn criterion_montecarlo(rep: &mut Report) {
    let mut cfg = RunConfig::default();
    cfg.montecarlo.replications = MC_REPLICATIONS;
    cfg.montecarlo.n_list = MC_TARGETS.iter().map(|t| t.0).collect();
    let t = Instant::now();
    let report = montecarlo(&cfg).expect("monte carlo runs");
    let elapsed = t.elapsed();
    let mut pass = elapsed <= MC_BUDGET && report.rows.len() == MC_TARGETS.len();
    let mut parts = Vec::new();
    for ((n, target, tol), row) in MC_TARGETS.iter().zip(&report.rows) {
        let ok = row.n == *n && (row.p50 - target).abs() <= *tol && row.failure_fraction() <= cfg.montecarlo.max_failure_fraction;
        pass &= ok;
        parts.push(format!(
            "n={n}: median {:.4} vs {target} +- {tol} {} (mean {:.4}, p25 {:.4}, p75 {:.4}, p90 {:.4}, failures {})",
            row.p50,
            if ok { "ok" } else { "no" },
            row.mean,
            row.p25,
            row.p75,
            row.p90,
            row.failures
        ));
    }
    let decreasing = report.rows.len() == 2 && report.rows[1].p50 < report.rows[0].p50;
    pass &= decreasing;
    parts.push(format!("median decreases with n: {}", if decreasing { "ok" } else { "no" }));
    rep.line(
        "2",
        &format!("Monte Carlo table, R = {MC_REPLICATIONS}"),
        pass,
        format!("{}; {:.1?} on {} threads", parts.join("; "), elapsed, rayon::current_num_threads()),
    );
}

fn criterion_svd(rep: &mut Report) {
    let t = Instant::now();
    let cfg = RunConfig::default();
    let dens = Arc::new(pipeline::exact_density(&cfg).unwrap());
    let op = pipeline::build_operator(&cfg, dens.clone()).unwrap();
    let truth = GridFn::from_fn(*dens.z_grid(), |z| cfg.design.true_phi(z)).unwrap();
    let sigma = singular_values(&assemble_jacobian(&op, &truth).unwrap());
    let fit = spectral_decay_fit(&sigma, SVD_FIT_COUNT).unwrap();
    let elapsed = t.elapsed();
    rep.line(
        "3",
        "singular-value decay",
        fit.r_squared >= SVD_MIN_R2 && elapsed <= SVD_BUDGET,
        format!(
            "R^2 of ln sigma_j on j = 1..{SVD_FIT_COUNT} is {:.4} >= {SVD_MIN_R2} (slope {:.3}, sigma_1 {:.3e}, sigma_20 {:.3e}); {:.1?}",
            fit.r_squared, fit.slope, sigma[0], sigma[19], elapsed
        ),
    );
}

fn independence_grids(n: usize) -> (Grid1D, Grid1D) {
    let d = SimDesign::default();
    let y = d.default_y_grid(n).unwrap();
    (Grid1D::new(n, 0.0, 1.0).unwrap(), y.shifted(-d.offset).unwrap())
}

fn criterion_independence(rep: &mut Report) {
    let d = SimDesign::default();
    let (z, u) = independence_grids(256);
    let coarse = d.independence_residual(z, u).unwrap();
    let (z3, u3) = independence_grids(766);
    let fine = d.independence_residual(z3, u3).unwrap();
    let ratio = coarse / fine;
    rep.line(
        "4",
        "independence identity",
        coarse <= INDEPENDENCE_MAX && ratio >= REFINEMENT_MIN_RATIO,
        format!(
            "sup residual {coarse:.3e} <= {INDEPENDENCE_MAX:e} at 256 nodes; {fine:.3e} at 766 nodes, ratio {ratio:.2} >= {REFINEMENT_MIN_RATIO}"
        ),
    );
}

fn criterion_rates(rep: &mut Report) {
    let cfg = RateConfig::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for mu in [0.25, 0.5] {
        let r = rate_experiment(&SourceCondition::holder(mu).unwrap(), Decay::Polynomial { a: 2.0 }, &cfg).unwrap();
        let ok = (r.fitted - r.target).abs() <= RATE_RELATIVE_TOL * r.target;
        pass &= ok;
        parts.push(format!("mu={mu}: slope {:.3} vs {:.3} {}", r.fitted, r.target, if ok { "ok" } else { "no" }));
    }
    let r = rate_experiment(&SourceCondition::logarithmic(1.0).unwrap(), Decay::Exponential { c: 0.5 }, &cfg).unwrap();
    let ok = (r.fitted - r.target).abs() <= LOG_RATE_RELATIVE_TOL * r.target;
    pass &= ok;
    parts.push(format!("log p=1: fitted p {:.3} {}", r.fitted, if ok { "ok" } else { "no" }));
    rep.line("5", "rate law on the diagonal model (within 20%, log case 30%)", pass, parts.join("; "));
}

fn random_fn(rng: &mut ChaCha8Rng, g: Grid1D, lo: f64, hi: f64) -> GridFn {
    GridFn::new(g, (0..g.len()).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn invariant_adjoint_and_fd(rep: &mut Report) {
    let cfg = RunConfig::default();
    let dens = Arc::new(pipeline::exact_density(&cfg).unwrap());
    let z = *dens.z_grid();
    let truth = GridFn::from_fn(z, |x| cfg.design.true_phi(x)).unwrap();
    let phi = GridFn::constant(z, dens.ey()).unwrap().axpy(0.5, &truth).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst_adjoint: f64 = 0.0;
    let mut worst_order = f64::INFINITY;
    for form in [OperatorForm::CdfForm, OperatorForm::DensityForm] {
        let mut c = cfg.clone();
        c.operator.form = form;
        let op = pipeline::build_operator(&c, dens.clone()).unwrap();
        let lin = op.linearize(&phi).unwrap();
        for _ in 0..RANDOM_DRAWS / 2 {
            let h = random_fn(&mut rng, z, -1.0, 1.0);
            let y = CodomainElem::new(random_fn(&mut rng, op.codomain(), -1.0, 1.0), rng.random_range(-1.0..1.0)).unwrap();
            worst_adjoint = worst_adjoint.max(adjoint_defect(lin.as_ref(), &h, &y, op.scalar_weight()).unwrap());
        }
        let h = GridFn::from_fn(z, |x| (3.0 * x).cos() + 0.5 * x).unwrap();
        let f0 = op.apply(&phi).unwrap();
        let d = op.deriv_apply(&phi, &h).unwrap();
        let errs: Vec<f64> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|eps| {
                let f1 = op.apply(&phi.axpy(*eps, &h).unwrap()).unwrap();
                codomain_norm(&f1.axpy(-1.0, &f0).unwrap().scale(1.0 / eps).unwrap().axpy(-1.0, &d).unwrap())
            })
            .collect();
        for k in 0..2 {
            worst_order = worst_order.min((errs[k] / errs[k + 1]).log10());
        }
    }
    rep.line(
        "6a",
        "adjoint identity",
        worst_adjoint <= ADJOINT_TOL,
        format!("worst relative defect {worst_adjoint:.2e} <= {ADJOINT_TOL:e} over {RANDOM_DRAWS} pairs, both operator forms"),
    );
    rep.line(
        "6b",
        "derivative vs finite differences",
        worst_order >= FD_MIN_ORDER,
        format!("smallest observed order {worst_order:.3} >= {FD_MIN_ORDER}"),
    );
}

fn invariant_bregman(rep: &mut Report) {
    let g = Grid1D::new(64, 0.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut min_d = f64::INFINITY;
    let mut worst_identity: f64 = 0.0;
    let mut worst_pinsker = f64::INFINITY;
    let entropy = Penalty::entropy(1e-12).unwrap();
    for _ in 0..RANDOM_DRAWS {
        let (a, b) = (random_fn(&mut rng, g, -2.0, 2.0), random_fn(&mut rng, g, -2.0, 2.0));
        let quad = Penalty::quadratic(random_fn(&mut rng, g, -1.0, 1.0));
        let d = quad.bregman(&a, &b, &quad.subgradient(&b).unwrap()).unwrap();
        min_d = min_d.min(d);
        worst_identity = worst_identity.max((d - a.sub(&b).unwrap().norm().powi(2)).abs());

        let (a, b) = (random_fn(&mut rng, g, 0.01, 3.0), random_fn(&mut rng, g, 0.01, 3.0));
        let d = entropy.bregman(&a, &b, &entropy.subgradient(&b).unwrap()).unwrap();
        min_d = min_d.min(d);
        let a = a.scale(1.0 / a.integral()).unwrap();
        let b = b.scale(1.0 / b.integral()).unwrap();
        let d = entropy.bregman(&a, &b, &entropy.subgradient(&b).unwrap()).unwrap();
        let l1 = a.sub(&b).unwrap().map(f64::abs).unwrap().integral();
        worst_pinsker = worst_pinsker.min(d - 0.5 * l1 * l1);
    }
    rep.line(
        "6c",
        "Bregman non-negativity and quadratic identity",
        min_d >= -BREGMAN_TOL && worst_identity <= BREGMAN_TOL,
        format!("min distance {min_d:.3e}, worst |D - ||a-b||^2| {worst_identity:.2e} <= {BREGMAN_TOL:e}"),
    );
    rep.line(
        "6d",
        "entropy Pinsker bound for unit-mass pairs",
        worst_pinsker >= -BREGMAN_TOL,
        format!("min of D - |a-b|_1^2 / 2 is {worst_pinsker:.3e} >= 0"),
    );
}

fn invariant_stopping(rep: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let mut mismatches = 0;
    let mut drawn = 0;
    while drawn < RANDOM_DRAWS {
        let sc = if rng.random_bool(0.5) {
            SourceCondition::holder(rng.random_range(0.01..=0.5)).unwrap()
        } else {
            SourceCondition::logarithmic(rng.random_range(0.2..4.0)).unwrap()
        };
        let delta = 10f64.powf(rng.random_range(-12.0..-1.0));
        let gamma = rng.random_range(0.0..0.3);
        let cfg = IrgnmConfig { ratio: rng.random_range(0.5..0.99), ..IrgnmConfig::default() };
        let threshold = stopping_threshold(&sc, delta, gamma).unwrap();
        if threshold >= cfg.alpha0 {
            continue;
        }
        drawn += 1;
        let k = a_priori_stop_index(&cfg, &sc, delta, gamma).unwrap();
        let brute = (0..).find(|&k| cfg.alpha(k + 1) <= threshold).unwrap();
        mismatches += usize::from(k != brute);
    }
    rep.line(
        "6e",
        "a-priori stop index vs enumeration",
        mismatches == 0,
        format!("{mismatches} mismatches in {RANDOM_DRAWS} draws"),
    );

    let table = [(0.0, 1.0 / 0.9, true), (0.05, 1.0 / 0.9, true), (0.3, 1.0 / 0.9, false)];
    let wrong = table.iter().filter(|(eta, q, want)| check_eta_q(*eta, *q).unwrap() != *want).count();
    rep.line("6f", "eta/q admissibility truth table", wrong == 0, format!("{} of 3 examples match", 3 - wrong));
}

fn run_bin(args: &[&str], threads: &str) -> bool {
    Command::new(env!("CARGO_BIN_EXE_irgnm-iv"))
        .args(args)
        .env("IRGNM_IV_THREADS", threads)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn invariant_determinism(rep: &mut Report) {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let mut ok = true;
    for (tag, threads) in [("a", "1"), ("b", "4")] {
        let sample = root.join(format!("sample_{tag}.csv"));
        let out = root.join(format!("est_{tag}"));
        let mc = root.join(format!("mc_{tag}"));
        ok &= run_bin(&["simulate", "--n", "5000", "--seed", "99", "--out", &s(&sample)], threads);
        ok &= run_bin(&["estimate", "--sample", &s(&sample), "--out", &s(&out)], threads);
        ok &= run_bin(
            &["montecarlo", "--out", &s(&mc), "--montecarlo.replications", "4", "--montecarlo.n_list", "[1000]"],
            threads,
        );
    }
    let files = [
        ("sample_a.csv", "sample_b.csv"),
        ("est_a/trace.csv", "est_b/trace.csv"),
        ("est_a/phi_hat.csv", "est_b/phi_hat.csv"),
        ("est_a/errors.csv", "est_b/errors.csv"),
        ("mc_a/table.csv", "mc_b/table.csv"),
        ("mc_a/replications.csv", "mc_b/replications.csv"),
    ];
    let differing: Vec<&str> = files
        .iter()
        .filter(|(a, b)| std::fs::read(root.join(a)).ok() != std::fs::read(root.join(b)).ok())
        .map(|(a, _)| *a)
        .collect();
    rep.line(
        "6g",
        "full-pipeline bit-determinism",
        ok && differing.is_empty(),
        format!(
            "commands {}; {} of {} CSV outputs identical across 1 and 4 threads{}",
            if ok { "succeeded" } else { "failed" },
            files.len() - differing.len(),
            files.len(),
            if differing.is_empty() { String::new() } else { format!(" (differ: {differing:?})") }
        ),
    );
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut rep = Report { failed: 0 };
    criterion_exact(&mut rep);
    criterion_svd(&mut rep);
    criterion_independence(&mut rep);
    criterion_rates(&mut rep);
    invariant_adjoint_and_fd(&mut rep);
    invariant_bregman(&mut rep);
    invariant_stopping(&mut rep);
    invariant_determinism(&mut rep);
    criterion_montecarlo(&mut rep);
    println!("acceptance: {} criteria failed", rep.failed);
    if rep.failed > 0 {
        std::process::exit(1);
    }
}
