//! Experiment drivers behind the command-line subcommands. Every driver
//! writes its outputs into one directory, each file atomically.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use log::info;

use super::bundle::{load_bundle, save_bundle, Bundle};
use super::config::ExperimentConfig;
use super::metrics::{evaluate_testset, fmt_real, rows_to_csv, ResultRow, TestTruth, VariantErrors};
use super::qmat::{write_atomic, write_qmat};
use crate::error::{Error, Result};
use crate::greedy::{run_greedy_with, GreedyLog, GreedyMode};
use crate::models::{build_benchmark, AffineModel, ParamVector};
use crate::quadmanifold::QuadMapFitter;
use crate::rom::{galerkin_reduce, solve_batch, SolveOptions};
use crate::scalar::Real;
use crate::snapshots::{pod, SnapshotSet};

pub fn build_model<T: Real>(cfg: &ExperimentConfig) -> Result<AffineModel<T>> {
    build_benchmark(cfg.case, cfg.effective_overrides())
}

fn params_csv<T: Real>(params: &[ParamVector<T>]) -> String {
    let mut s = String::from("index,mu\n");
    for (k, p) in params.iter().enumerate() {
        let vals: Vec<String> = p.to_f64().iter().map(|x| format!("{x:.10e}")).collect();
        let _ = writeln!(s, "{k},{}", vals.join(";"));
    }
    s
}

/// Solves the full-order model at `cfg.mu` (default: the first testing
/// parameter) and writes the sampled states and a summary.
pub fn fom_solve<T: Real>(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let model = build_model::<T>(cfg)?;
    let mu = match &cfg.mu {
        Some(v) => ParamVector::new(v.iter().map(|&x| T::lit(x)).collect()),
        None => cfg.test.generate::<T>().swap_remove(0),
    };
    let start = Instant::now();
    let traj = model.solve_fom(&mu)?;
    let elapsed = start.elapsed().as_secs_f64();
    let snaps = SnapshotSet::collect(&traj, cfg.greedy.l_sam, 0)?;
    write_qmat(&out.join("fom.qmat"), snaps.data.as_ref())?;
    let u = traj.solution_matrix();
    let summary = format!(
        "case={}\nmu={}\nn_dof={}\nn_steps={}\ndt={:e}\nfinal_time={:e}\nscheme={}\nstride={}\nnorm_fro={:e}\nwall_time_s={:.6}\n",
        cfg.case,
        mu.to_f64().iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(";"),
        model.n_dof,
        model.n_steps,
        model.dt.as_f64(),
        model.final_time().as_f64(),
        model.scheme.name(),
        cfg.greedy.l_sam,
        u.norm_l2().as_f64(),
        elapsed
    );
    write_atomic(&out.join("fom_summary.txt"), summary.as_bytes())
}

fn iterations_csv(log_rows: &[(usize, usize, usize, Option<f64>, f64, usize, bool, usize, f64)]) -> String {
    let mut s = String::from("m,r,mu_selected_index,lambda,estimator_max,estimator_argmax,degenerate,fom_solves,wall_time_s\n");
    for (m, r, mu, lam, est, arg, deg, fom, t) in log_rows {
        let _ = writeln!(
            s,
            "{m},{r},{mu},{},{},{arg},{deg},{fom},{t:.6}",
            lam.map(fmt_real).unwrap_or_default(),
            fmt_real(*est)
        );
    }
    s
}

/// Greedy training (quadratic or linear) with a test-set evaluation after
/// every iteration. `out` becomes a bundle directory; `log.csv` is rewritten
/// after each iteration so partial runs leave a usable table.
pub fn train<T: Real>(cfg: &ExperimentConfig, out: &Path, mode: GreedyMode) -> Result<(GreedyLog<T>, Vec<ResultRow>)> {
    fs::create_dir_all(out)?;
    write_atomic(&out.join("config.conf"), cfg.to_text().as_bytes())?;
    let model = build_model::<T>(cfg)?;
    let train_set = cfg.train.generate::<T>();
    let truth = TestTruth::compute(&model, cfg.test.generate::<T>())?;
    write_atomic(&out.join("train_params.csv"), params_csv(&train_set).as_bytes())?;
    write_atomic(&out.join("test_params.csv"), params_csv(&truth.params).as_bytes())?;

    let mut rows = Vec::new();
    let mut details = Vec::new();
    let log_path = out.join("log.csv");
    let iter_path = out.join("iterations.csv");
    let log = run_greedy_with(&model, &train_set, &cfg.greedy, mode, |state| {
        let rec = state.record;
        let errs = evaluate_testset(&model, state.basis, state.map, &truth)?;
        rows.push(ResultRow {
            r: rec.r,
            errors: VariantErrors::mean(&errs),
            estimator_max: Some(rec.estimator_max),
            lambda_selected: rec.lambda,
            mu_selected_index: Some(rec.mu_selected_index),
            wall_time_s: rec.wall_time_s,
        });
        details.push((
            rec.m,
            rec.r,
            rec.mu_selected_index,
            rec.lambda,
            rec.estimator_max,
            rec.estimator_argmax,
            rec.degenerate,
            rec.fom_solves,
            rec.wall_time_s,
        ));
        write_atomic(&log_path, rows_to_csv(&rows).as_bytes())?;
        write_atomic(&iter_path, iterations_csv(&details).as_bytes())
    })?;
    let bundle = Bundle {
        case: cfg.case,
        overrides: cfg.effective_overrides(),
        basis: log.basis.clone(),
        map: log.map.clone(),
        log_csv: rows_to_csv(&rows),
    };
    save_bundle(out, &bundle)?;
    Ok((log, rows))
}

/// Evaluates a stored bundle on the configured testing set. Writes
/// `evaluate.csv` (averages) and `evaluate_per_mu.csv`.
pub fn evaluate<T: Real>(cfg: &ExperimentConfig, bundle_dir: &Path, out: &Path) -> Result<ResultRow> {
    fs::create_dir_all(out)?;
    let bundle: Bundle<T> = load_bundle(bundle_dir)?;
    if bundle.case != cfg.case {
        return Err(Error::Config(format!(
            "bundle was trained for {}, configuration is for {}",
            bundle.case, cfg.case
        )));
    }
    let model: AffineModel<T> = build_benchmark(bundle.case, bundle.overrides)?;
    let start = Instant::now();
    let truth = TestTruth::compute(&model, cfg.test.generate::<T>())?;
    let errs = evaluate_testset(&model, &bundle.basis, bundle.map.as_ref(), &truth)?;
    let row = ResultRow {
        r: bundle.r(),
        errors: VariantErrors::mean(&errs),
        estimator_max: None,
        lambda_selected: bundle.map.as_ref().map(|m| m.lambda.as_f64()),
        mu_selected_index: None,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    let mut per = String::from("mu_index,mu,err_qm_rom,err_qm_recon,err_lin_rom,err_lin_recon\n");
    for (k, (e, mu)) in errs.iter().zip(&truth.params).enumerate() {
        let vals: Vec<String> = mu.to_f64().iter().map(|x| format!("{x:.10e}")).collect();
        let _ = writeln!(
            per,
            "{k},{},{},{},{},{}",
            vals.join(";"),
            fmt_real(e.qm_rom),
            fmt_real(e.qm_recon),
            fmt_real(e.lin_rom),
            fmt_real(e.lin_recon)
        );
    }
    write_atomic(&out.join("evaluate_per_mu.csv"), per.as_bytes())?;
    write_atomic(&out.join("evaluate.csv"), rows_to_csv(std::slice::from_ref(&row)).as_bytes())?;
    Ok(row)
}

/// Plain POD on all training snapshots, one quadratic fit per `(r, lambda)`
/// and test-set errors of all four variants. Writes `lambda_sweep.csv`.
pub fn lambda_sweep<T: Real>(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<ResultRow>> {
    fs::create_dir_all(out)?;
    let start = Instant::now();
    let model = build_model::<T>(cfg)?;
    let train_set = cfg.train.generate::<T>();
    let mut snapshots = SnapshotSet::empty(model.n_dof, cfg.greedy.l_sam);
    for (k, mu) in train_set.iter().enumerate() {
        let traj = model.solve_fom(mu)?;
        snapshots.push(&traj, k)?;
    }
    info!("sweep: {} snapshots of dimension {}", snapshots.n_cols(), snapshots.n_rows());
    let truth = TestTruth::compute(&model, cfg.test.generate::<T>())?;
    let r_top = cfg.sweep_r.iter().copied().max().ok_or(Error::Empty("sweep r list"))?;
    let (full, _) = pod(snapshots.data.as_ref(), r_top)?;
    let mut rows = Vec::new();
    for &r in &cfg.sweep_r {
        let basis = full.truncate(r);
        let fitter = QuadMapFitter::new(&basis, snapshots.data.as_ref())?;
        let lin = evaluate_testset(&model, &basis, None, &truth)?;
        for &lambda in &cfg.sweep_lambda {
            let (map, _) = fitter.fit(T::lit(lambda))?;
            let qm = evaluate_testset(&model, &basis, Some(&map), &truth)?;
            let mut mean = VariantErrors::mean(&qm);
            let lin_mean = VariantErrors::mean(&lin);
            mean.lin_rom = lin_mean.lin_rom;
            mean.lin_recon = lin_mean.lin_recon;
            info!("sweep r = {r}, lambda = {lambda:e}: qm rom {:.3e}, lin rom {:.3e}", mean.qm_rom, mean.lin_rom);
            rows.push(ResultRow {
                r,
                errors: mean,
                estimator_max: None,
                lambda_selected: Some(lambda),
                mu_selected_index: None,
                wall_time_s: start.elapsed().as_secs_f64(),
            });
            write_atomic(&out.join("lambda_sweep.csv"), rows_to_csv(&rows).as_bytes())?;
        }
    }
    Ok(rows)
}

/// Online wall times (median over repeats).
#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    pub r_qm: usize,
    pub r_lin: usize,
    pub qm_rom_s: f64,
    pub lin_rom_s: f64,
    pub fom_s: f64,
}

impl TimingReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,r,median_s,fom_over_method\n");
        for (name, r, t) in [
            ("qm_rom", self.r_qm.to_string(), self.qm_rom_s),
            ("lin_rom", self.r_lin.to_string(), self.lin_rom_s),
            ("fom", String::new(), self.fom_s),
        ] {
            let _ = writeln!(s, "{name},{r},{t:.6e},{:.3}", self.fom_s / t);
        }
        s
    }
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn time_median(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut ts = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        f()?;
        ts.push(t.elapsed().as_secs_f64());
    }
    Ok(median(ts))
}

/// Times the reduced solves of two bundles and the full-order solve at one
/// parameter. Reduced operators are assembled once beforehand; only the
/// time stepping is timed. Bundles missing from the configuration are
/// trained first (capped at `timing_r_qm` / `timing_r_lin`) into
/// `out/qm` and `out/lin`.
pub fn timing_report<T: Real>(cfg: &ExperimentConfig, out: &Path) -> Result<TimingReport> {
    fs::create_dir_all(out)?;
    let obtain = |path: &Option<std::path::PathBuf>, mode: GreedyMode, r: usize, sub: &str| -> Result<Bundle<T>> {
        match path {
            Some(p) => load_bundle(p),
            None => {
                let mut c = cfg.clone();
                c.greedy.r_max = Some(r);
                c.greedy.m_max = c.greedy.m_max.max(r);
                let dir = out.join(sub);
                train::<T>(&c, &dir, mode)?;
                load_bundle(&dir)
            }
        }
    };
    let qm = obtain(&cfg.timing_qm_bundle, GreedyMode::Quadratic, cfg.timing_r_qm, "qm")?;
    let lin = obtain(&cfg.timing_lin_bundle, GreedyMode::Linear, cfg.timing_r_lin, "lin")?;
    let model = build_model::<T>(cfg)?;
    let mu = match &cfg.timing_mu {
        Some(v) => ParamVector::new(v.iter().map(|&x| T::lit(x)).collect()),
        None => cfg.test.generate::<T>().swap_remove(0),
    };
    let reps = cfg.timing_repeats;
    let rom_time = |b: &Bundle<T>| -> Result<f64> {
        let ops = galerkin_reduce(&model, &b.basis, b.map.as_ref())?;
        let one = std::slice::from_ref(&mu);
        time_median(reps, || {
            let rt = solve_batch(&model, &ops, &b.basis, b.map.as_ref(), one, SolveOptions::default())?;
            if !rt[0].stable {
                return Err(Error::Unstable {
                    first_bad_step: rt[0].first_bad_step,
                });
            }
            Ok(())
        })
    };
    let qm_rom_s = rom_time(&qm)?;
    let lin_rom_s = rom_time(&lin)?;
    let fom_s = time_median(reps, || model.solve_fom(&mu).map(|_| ()))?;
    let report = TimingReport {
        r_qm: qm.r(),
        r_lin: lin.r(),
        qm_rom_s,
        lin_rom_s,
        fom_s,
    };
    write_atomic(&out.join("timing.csv"), report.to_csv().as_bytes())?;
    Ok(report)
}

const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Plots every results table in this directory. Rows with `inf` are dropped."""
import csv
import glob
import math
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))
COLUMNS = ["err_qm_rom", "err_qm_recon", "err_lin_rom", "err_lin_recon"]


def number(s):
    try:
        v = float(s)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def load(path):
    with open(path) as f:
        return list(csv.DictReader(f))


def plot_table(path, rows):
    groups = {}
    for row in rows:
        key = row.get("lambda_selected", "") if "sweep" in os.path.basename(path) else ""
        groups.setdefault(key, []).append(row)
    fig, axes = plt.subplots(1, len(groups), figsize=(5 * len(groups), 4), squeeze=False)
    for ax, (key, grp) in zip(axes[0], sorted(groups.items())):
        for col in COLUMNS:
            pts = [(int(r["r"]), number(r[col])) for r in grp]
            pts = [(x, y) for x, y in pts if y is not None and y > 0]
            if pts:
                ax.semilogy(*zip(*pts), marker="o", label=col)
        ax.set_xlabel("r")
        ax.set_ylabel("average relative error")
        if key:
            ax.set_title("lambda = " + key)
        ax.legend()
    fig.tight_layout()
    fig.savefig(os.path.splitext(path)[0] + ".png", dpi=150)
    plt.close(fig)


def plot_lambda(path, rows):
    pts = [(int(r["r"]), number(r["lambda_selected"])) for r in rows]
    pts = [(x, y) for x, y in pts if y is not None and y > 0]
    if not pts:
        return
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.semilogy(*zip(*pts), marker="s")
    ax.set_xlabel("r")
    ax.set_ylabel("selected lambda")
    fig.tight_layout()
    fig.savefig(os.path.splitext(path)[0] + "_lambda.png", dpi=150)
    plt.close(fig)


for path in sorted(glob.glob(os.path.join(HERE, "*.csv"))):
    rows = load(path)
    if not rows or "err_qm_rom" not in rows[0]:
        continue
    plot_table(path, rows)
    if "sweep" not in os.path.basename(path):
        plot_lambda(path, rows)
"#;

/// Copies result tables into `out` and writes `plot.py` next to them.
/// `inputs` may name CSV files or directories (their top-level CSVs are
/// taken, prefixed with the directory name).
pub fn emit_plot_script(inputs: &[&Path], out: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(out)?;
    let mut copied = Vec::new();
    let mut copy = |src: &Path, name: String| -> Result<()> {
        let bytes = fs::read(src)?;
        write_atomic(&out.join(&name), &bytes)?;
        copied.push(name);
        Ok(())
    };
    for input in inputs {
        if input.is_dir() {
            let prefix = input.file_name().map(|s| s.to_string_lossy().to_string()).unwrap_or_default();
            let mut entries: Vec<_> = fs::read_dir(input)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            entries.sort();
            for p in entries {
                let name = format!("{prefix}_{}", p.file_name().expect("file").to_string_lossy());
                copy(&p, name)?;
            }
        } else if input.is_file() {
            let name = input.file_name().expect("file").to_string_lossy().to_string();
            copy(input, name)?;
        } else {
            return Err(Error::Config(format!("plot input {} does not exist", input.display())));
        }
    }
    write_atomic(&out.join("plot.py"), PLOT_SCRIPT.as_bytes())?;
    Ok(copied)
}
