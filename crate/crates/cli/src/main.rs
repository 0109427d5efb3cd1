//! `qmrom` command-line harness.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;
use qmrom::greedy::GreedyMode;
use qmrom::harness::{experiments, ExperimentConfig};
use qmrom::models::CaseId;
use qmrom::Error;

#[derive(Parser)]
#[command(name = "qmrom", version, about = "Greedy quadratic-manifold reduced-order models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the `out` key).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Benchmark case; required when no configuration file is given.
    #[arg(long)]
    case: Option<String>,
    /// Use the reduced desk-scale grid for the case.
    #[arg(long)]
    desk_scale: bool,
    /// Worker threads for the parameter sweeps.
    #[arg(long)]
    threads: Option<usize>,
    /// Extra `key=value` settings applied after the configuration file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the full-order model at one parameter.
    FomSolve(Common),
    /// Greedy quadratic-manifold training with per-iteration test errors.
    Train(Common),
    /// Greedy training of a linear ROM.
    TrainLinear(Common),
    /// Evaluate a stored bundle on the testing set.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Bundle directory (overrides the `bundle` key).
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// POD plus quadratic fits over a grid of basis sizes and regularization
    /// parameters.
    LambdaSweep(Common),
    /// Online timing of the quadratic ROM, the linear ROM and the full model.
    Timing(Common),
    /// Collect result tables and write a plotting script.
    Plot {
        #[command(flatten)]
        common: Common,
        /// CSV files or result directories to include.
        inputs: Vec<PathBuf>,
    },
}

fn config_error(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

fn load_config(c: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match (&c.config, &c.case) {
        (Some(path), case) => {
            let cfg = ExperimentConfig::from_file(path)?;
            if let Some(case) = case {
                let case: CaseId = case.parse()?;
                if case != cfg.case {
                    return Err(config_error(format!(
                        "--case {case} contradicts case = {} in {}",
                        cfg.case,
                        path.display()
                    )));
                }
            }
            cfg
        }
        (None, Some(case)) => ExperimentConfig::paper_defaults(case.parse()?),
        (None, None) => return Err(config_error("either --config or --case is required")),
    };
    let mut kv = BTreeMap::new();
    for s in &c.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| config_error(format!("--set expects KEY=VALUE, got `{s}`")))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    cfg.apply(kv)?;
    if c.desk_scale {
        cfg.desk_scale = true;
    }
    if let Some(o) = &c.out {
        cfg.out = Some(o.clone());
    }
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig, default: &str) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn init_threads(c: &Common) -> Result<(), Error> {
    if let Some(n) = c.threads {
        if n == 0 {
            return Err(config_error("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(config_error)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::FomSolve(c) => {
            init_threads(&c)?;
            let cfg = load_config(&c)?;
            let out = out_dir(&cfg, "fom");
            experiments::fom_solve::<f64>(&cfg, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Train(c) => train(&c, GreedyMode::Quadratic)?,
        Command::TrainLinear(c) => train(&c, GreedyMode::Linear)?,
        Command::Evaluate { common, bundle } => {
            init_threads(&common)?;
            let cfg = load_config(&common)?;
            let bundle = bundle
                .or_else(|| cfg.bundle.clone())
                .ok_or_else(|| config_error("evaluate needs --bundle or a `bundle` key"))?;
            let out = out_dir(&cfg, "evaluate");
            let row = experiments::evaluate::<f64>(&cfg, &bundle, &out)?;
            println!("{}", qmrom::harness::CSV_HEADER);
            println!("{}", row.to_csv());
        }
        Command::LambdaSweep(c) => {
            init_threads(&c)?;
            let cfg = load_config(&c)?;
            let out = out_dir(&cfg, "lambda_sweep");
            let rows = experiments::lambda_sweep::<f64>(&cfg, &out)?;
            println!("{} rows written to {}", rows.len(), out.join("lambda_sweep.csv").display());
        }
        Command::Timing(c) => {
            init_threads(&c)?;
            let cfg = load_config(&c)?;
            let out = out_dir(&cfg, "timing");
            let report = experiments::timing_report::<f64>(&cfg, &out)?;
            print!("{}", report.to_csv());
        }
        Command::Plot { common, inputs } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&cfg, "plots");
            let refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
            let copied = experiments::emit_plot_script(&refs, &out)?;
            println!("{} tables and plot.py written to {}", copied.len(), out.display());
        }
    }
    Ok(())
}

fn train(c: &Common, mode: GreedyMode) -> Result<(), Error> {
    init_threads(c)?;
    let cfg = load_config(c)?;
    let out = out_dir(&cfg, if mode == GreedyMode::Linear { "train_linear" } else { "train" });
    let (log, rows) = experiments::train::<f64>(&cfg, &out, mode)?;
    println!(
        "{} iterations, r = {}, {} full-order solves; bundle in {}",
        rows.len(),
        log.basis.r(),
        log.fom_solves,
        out.display()
    );
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::UnknownCase(_)
        | Error::Cfl { .. }
        | Error::ParameterOutOfRange { .. }
        | Error::MissingField(_)
        | Error::Version { .. }
        | Error::Format { .. }
        | Error::Checksum { .. }
        | Error::Provenance(_)
        | Error::Stride { .. } => 2,
        Error::NonFinite { .. }
        | Error::Unstable { .. }
        | Error::Decomposition(_)
        | Error::Rank { .. }
        | Error::Dimension { .. }
        | Error::Empty(_) => 3,
        Error::Io(_) => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
