use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use irgnm_iv::diagnostics::{assemble_jacobian, singular_values, spectral_decay_fit, Decay};
use irgnm_iv::grid::{fmt_f64, GridFn};
use irgnm_iv::irgnm::SourceKind;
use irgnm_iv::kde::select_bandwidths;
use irgnm_iv::pipeline::{self, build_operator, estimate_exact, estimate_sample, estimated_density, exact_density};
use irgnm_iv::{rate_experiment, RunConfig, Sample};
use serde_json::{json, Value};

use crate::plot::{histogram, line_chart, Chart, Scale, Series};
use crate::{CliError, Invocation};

type CmdResult = Result<Value, CliError>;

fn load(inv: &Invocation) -> Result<RunConfig, CliError> {
    Ok(RunConfig::load(inv.config.as_deref(), &inv.overrides)?)
}

fn out_dir(inv: &Invocation, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = inv.out.clone().unwrap_or_else(|| cfg.outputs.directory.clone());
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> irgnm_iv::Result<()>) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text)?;
    Ok(())
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).map_err(irgnm_iv::Error::from)?;
    write_text(path, &(text + "\n"))
}

fn load_sample(inv: &Invocation) -> Result<Option<Sample>, CliError> {
    match inv.sample.as_deref() {
        None | Some("exact") => Ok(None),
        Some(path) => Ok(Some(Sample::load_csv(Path::new(path))?)),
    }
}

pub fn simulate(inv: Invocation) -> CmdResult {
    let cfg = load(&inv)?;
    let path = inv.out.clone().unwrap_or_else(|| cfg.outputs.directory.join("sample.csv"));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let s = cfg.design.sample(cfg.simulate.n, cfg.simulate.seed)?;
    s.save_csv(&path)?;
    Ok(json!({
        "command": "simulate",
        "n": s.len(),
        "seed": cfg.simulate.seed,
        "level_counts": [s.level_count(0), s.level_count(1)],
        "sample": path,
    }))
}

pub fn kde(inv: Invocation) -> CmdResult {
    let cfg = load(&inv)?;
    let s = load_sample(&inv)?.ok_or_else(|| CliError::input("usage", "kde needs --sample <csv>"))?;
    let dir = inv.out.clone().unwrap_or_else(|| cfg.outputs.directory.join("density"));
    fs::create_dir_all(&dir)?;
    let bw = select_bandwidths(&s, &cfg.kde_config())?;
    let d = estimated_density(&cfg, &s)?;
    d.write_bundle(&dir)?;
    Ok(json!({
        "command": "kde",
        "n": s.len(),
        "bandwidths": bw,
        "mass": [d.mass(0), d.mass(1)],
        "w0": d.w0(),
        "mean_y": d.ey(),
        "bundle": dir,
    }))
}

pub fn estimate(inv: Invocation) -> CmdResult {
    let cfg = load(&inv)?;
    let sample = load_sample(&inv)?;
    let est = match &sample {
        None => estimate_exact(&cfg)?,
        Some(s) => estimate_sample(&cfg, s)?,
    };
    let dir = out_dir(&inv, &cfg)?;
    write_json(&dir.join("config.json"), &cfg)?;
    write_with(&dir.join("trace.csv"), |w| est.trace.write_csv(w))?;
    write_json(&dir.join("stop.json"), &est.trace.summary())?;
    write_with(&dir.join("errors.csv"), |w| est.write_errors_csv(w))?;
    est.selected().save_csv(&dir.join("phi_hat.csv"))?;
    write_json(&dir.join("summary.json"), &est.summary)?;

    let naive = est.naive(&cfg)?;
    let z = est.truth.grid().nodes();
    let svg = line_chart(
        &Chart {
            title: &format!("Reconstruction ({}), normalized error {:.4}", est.summary.mode, est.summary.normalized_error),
            x_label: "z",
            y_label: "phi(z)",
            x_scale: Scale::Linear,
            y_scale: Scale::Linear,
            markers: false,
        },
        &[
            Series { label: "true", x: &z, y: est.truth.values(), dashed: false },
            Series { label: "estimate", x: &z, y: est.selected().values(), dashed: false },
            Series { label: "initial guess", x: &z, y: est.phi0.values(), dashed: true },
            Series { label: "naive regression", x: &z, y: naive.values(), dashed: true },
        ],
    );
    write_text(&dir.join("overlay.svg"), &svg)?;

    if est.trace.stop_reason.is_failure() {
        return Err(CliError::numerical(format!(
            "iteration stopped by {:?} after {} steps; partial results in {}",
            est.trace.stop_reason,
            est.trace.records.len() - 1,
            dir.display()
        )));
    }
    let mut v = serde_json::to_value(&est.summary).map_err(irgnm_iv::Error::from)?;
    v["command"] = json!("estimate");
    v["outputs"] = json!(dir);
    Ok(v)
}

pub fn montecarlo(inv: Invocation) -> CmdResult {
    let cfg = load(&inv)?;
    let dir = out_dir(&inv, &cfg)?;
    let report = pipeline::montecarlo(&cfg)?;
    write_json(&dir.join("config.json"), &cfg)?;
    write_with(&dir.join("table.csv"), |w| report.write_table_csv(w))?;
    write_with(&dir.join("replications.csv"), |w| report.write_replications_csv(w))?;
    write_json(&dir.join("report.json"), &report.rows)?;

    let z = cfg.z_grid()?;
    let truth = GridFn::from_fn(z, |x| cfg.design.true_phi(x))?;
    for (row, reps) in report.rows.iter().zip(&report.replications) {
        let errors: Vec<f64> = reps.iter().filter_map(|r| r.normalized_error).collect();
        let svg = histogram(&format!("Normalized errors, n = {}", row.n), "normalized L2 error", &errors, 20);
        write_text(&dir.join(format!("hist_n{}.svg", row.n)), &svg)?;
        let median = reps
            .iter()
            .find(|r| r.replication == row.median_replication)
            .and_then(|r| r.estimate.as_ref())
            .expect("median replication succeeded");
        median.save_csv(&dir.join(format!("median_n{}.csv", row.n)))?;
        let x = z.nodes();
        let svg = line_chart(
            &Chart {
                title: &format!("Median reconstruction, n = {} (replication {})", row.n, row.median_replication),
                x_label: "z",
                y_label: "phi(z)",
                x_scale: Scale::Linear,
                y_scale: Scale::Linear,
                markers: false,
            },
            &[
                Series { label: "true", x: &x, y: truth.values(), dashed: false },
                Series { label: "median estimate", x: &x, y: median.values(), dashed: false },
            ],
        );
        write_text(&dir.join(format!("median_n{}.svg", row.n)), &svg)?;
    }

    let over = report.over_failure_limit(cfg.montecarlo.max_failure_fraction);
    if !over.is_empty() {
        return Err(CliError::numerical(format!(
            "failure share above {} for n in {:?}; see {}",
            cfg.montecarlo.max_failure_fraction,
            over,
            dir.join("replications.csv").display()
        )));
    }
    Ok(json!({ "command": "montecarlo", "rows": report.rows, "outputs": dir }))
}

pub fn svd(inv: Invocation) -> CmdResult {
    let cfg = load(&inv)?;
    let density = match load_sample(&inv)? {
        None => exact_density(&cfg)?,
        Some(s) => estimated_density(&cfg, &s)?,
    };
    let dir = out_dir(&inv, &cfg)?;
    let op = build_operator(&cfg, std::sync::Arc::new(density))?;
    let truth = GridFn::from_fn(cfg.z_grid()?, |x| cfg.design.true_phi(x))?;
    let sigma = singular_values(&assemble_jacobian(&op, &truth)?);
    let fit = spectral_decay_fit(&sigma, cfg.svd.fit_count)?;

    write_with(&dir.join("spectrum.csv"), |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["j", "sigma"])?;
        for (j, s) in sigma.iter().enumerate() {
            wtr.write_record([(j + 1).to_string(), fmt_f64(*s)])?;
        }
        wtr.flush()?;
        Ok(())
    })?;
    let j: Vec<f64> = (1..=sigma.len()).map(|j| j as f64).collect();
    let svg = line_chart(
        &Chart {
            title: "Singular values of the linearized operator",
            x_label: "j",
            y_label: "sigma_j",
            x_scale: Scale::Linear,
            y_scale: Scale::Log,
            markers: true,
        },
        &[Series { label: "sigma_j", x: &j, y: &sigma, dashed: false }],
    );
    write_text(&dir.join("spectrum.svg"), &svg)?;
    let summary = json!({
        "command": "svd",
        "count": sigma.len(),
        "sigma_max": sigma[0],
        "fit_count": cfg.svd.fit_count,
        "log_slope": fit.slope,
        "log_intercept": fit.intercept,
        "r_squared": fit.r_squared,
        "outputs": dir,
    });
    write_json(&dir.join("svd.json"), &summary)?;
    Ok(summary)
}

pub fn rates(inv: Invocation) -> CmdResult {
    let cfg = load(&inv)?;
    let dir = out_dir(&inv, &cfg)?;
    let rc = &cfg.rates;
    let report = rate_experiment(&rc.source, rc.decay, &rc.experiment)?;
    let (kind, parameter) = match rc.source.kind {
        SourceKind::Holder { mu } => ("holder", mu),
        SourceKind::Logarithmic { p } => ("logarithmic", p),
    };
    let decay = match rc.decay {
        Decay::Polynomial { a } => format!("polynomial:{a}"),
        Decay::Exponential { c } => format!("exponential:{c}"),
    };
    write_with(&dir.join("rates.csv"), |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["delta", "stop_index", "error"])?;
        for p in &report.points {
            wtr.write_record([fmt_f64(p.delta), p.stop_index.to_string(), fmt_f64(p.error)])?;
        }
        wtr.flush()?;
        Ok(())
    })?;
    write_with(&dir.join("rates_fit.csv"), |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["source", "parameter", "decay", "fitted", "target", "r_squared"])?;
        wtr.write_record([
            kind.to_string(),
            fmt_f64(parameter),
            decay.clone(),
            fmt_f64(report.fitted),
            fmt_f64(report.target),
            fmt_f64(report.r_squared),
        ])?;
        wtr.flush()?;
        Ok(())
    })?;
    let deltas: Vec<f64> = report.points.iter().map(|p| p.delta).collect();
    let errors: Vec<f64> = report.points.iter().map(|p| p.error).collect();
    let svg = line_chart(
        &Chart {
            title: &format!("Error against noise level ({kind} {parameter}, {decay})"),
            x_label: "delta",
            y_label: "error",
            x_scale: Scale::Log,
            y_scale: Scale::Log,
            markers: true,
        },
        &[Series { label: "final error", x: &deltas, y: &errors, dashed: false }],
    );
    write_text(&dir.join("rates.svg"), &svg)?;
    let summary = json!({
        "command": "rates",
        "source": kind,
        "parameter": parameter,
        "decay": decay,
        "fitted": report.fitted,
        "target": report.target,
        "r_squared": report.r_squared,
        "points": report.points,
        "outputs": dir,
    });
    write_json(&dir.join("rates.json"), &summary)?;
    Ok(summary)
}
