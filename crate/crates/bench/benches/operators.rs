use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use irgnm_iv::pipeline::{build_operator, exact_density};
use irgnm_iv::*;

fn setup(n: usize) -> (RunConfig, BinaryIVOperator, GridFn, f64) {
    let mut cfg = RunConfig::default();
    cfg.grids.n_y = n;
    cfg.grids.n_z = n;
    cfg.grids.n_u = n;
    let dens = Arc::new(exact_density(&cfg).unwrap());
    let z = *dens.z_grid();
    let phi = GridFn::from_fn(z, |x| cfg.design.true_phi(x)).unwrap();
    let ey = dens.ey();
    let op = build_operator(&cfg, dens).unwrap();
    (cfg, op, phi, ey)
}

fn operator(c: &mut Criterion) {
    for n in [64, 256] {
        let (_, op, phi, _) = setup(n);
        let h = GridFn::constant(op.domain(), 0.1).unwrap();
        c.bench_function(&format!("apply {n}"), |b| b.iter(|| op.apply(black_box(&phi)).unwrap()));
        let lin = op.linearize(&phi).unwrap();
        c.bench_function(&format!("linearized apply {n}"), |b| b.iter(|| lin.apply(black_box(&h)).unwrap()));
        c.bench_function(&format!("linearize {n}"), |b| b.iter(|| op.linearize(black_box(&phi)).unwrap().apply(&h).unwrap()));
    }
}

fn heavy(c: &mut Criterion) {
    let mut g = c.benchmark_group("heavy");
    g.sample_size(10);

    let (cfg, op, phi, ey) = setup(128);
    let jac = assemble_jacobian(&op, &phi).unwrap();
    g.bench_function("singular values 128", |b| b.iter(|| singular_values(black_box(&jac))));

    let phi0 = GridFn::constant(op.domain(), ey).unwrap();
    let irgnm = IrgnmConfig { k_max: 10, stopping: StoppingRule::Fixed { k: 10 }, ..IrgnmConfig::default() };
    let penalty = Penalty::quadratic(phi0.clone());
    g.bench_function("irgnm 10 steps 128", |b| b.iter(|| irgnm_run(&op, &penalty, &phi0, &irgnm).unwrap()));

    let sample = cfg.design.sample(10_000, 1).unwrap();
    let kde = cfg.kde_config();
    let (y, z) = irgnm_iv::kde::kde_grids(&sample, &kde).unwrap();
    g.bench_function("kde 10k 128", |b| b.iter(|| kde_fit(black_box(&sample), &kde, y, z).unwrap()));
    g.finish();
}

criterion_group!(benches, operator, heavy);
criterion_main!(benches);
