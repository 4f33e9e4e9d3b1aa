//! `metapac` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 verification failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::format::sig9;
use crate::harness::{run_experiment, verify_report, ExperimentConfig, Method, TrialReport, SUMMARY_HEADER};
use crate::meta::{meta_calibrate, GuaranteeSpec, TaskCalibrationBundle};
use crate::pac::{ScoreSample, Threshold};
use crate::synthetic::{Family, MetaDistribution};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_VERIFY_FAIL: i32 = 3;

/// Default-seed fallback when neither the flag nor the config file sets one.
pub const SEED_ENV: &str = "METAPAC_SEED";

#[derive(Debug, Parser)]
#[command(name = "metapac", version, about = "PAC and meta-PAC prediction-set calibration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Meta-calibrate from precomputed per-task score files.
    Calibrate {
        /// Directory with one subdirectory per task, each holding calib.csv.
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        delta: f64,
    },
    /// Run a synthetic nested Monte Carlo experiment and write reports.
    Simulate(RunArgs),
    /// Run an experiment and check the meta-PAC rate against 1 - δ.
    Verify(RunArgs),
    /// Print the per-method summary table of a report.json.
    Report {
        report: PathBuf,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON experiment config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Calibration tasks N.
    #[arg(short = 'N', long)]
    pub num_tasks: Option<usize>,
    /// Calibration examples per task n.
    #[arg(short = 'n', long)]
    pub calib_size: Option<usize>,
    /// Adaptation examples per task t.
    #[arg(short = 't', long)]
    pub adapt_size: Option<usize>,
    #[arg(short = 'O', long)]
    pub outer: Option<usize>,
    #[arg(short = 'I', long)]
    pub inner: Option<usize>,
    /// Evaluation examples per inner trial.
    #[arg(short = 'E', long)]
    pub eval_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated: meta_ps, pooled_ps, ps_test, fixed:<τ>.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Experiment config file. Every key is optional; unknown keys are errors.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub eps: Option<f64>,
    pub alpha: Option<f64>,
    pub delta: Option<f64>,
    pub num_tasks: Option<usize>,
    pub calib_size: Option<usize>,
    pub adapt_size: Option<usize>,
    pub outer_trials: Option<usize>,
    pub inner_trials: Option<usize>,
    pub eval_size: Option<usize>,
    pub seed: Option<u64>,
    pub methods: Option<Vec<Method>>,
    pub ps_test_size: Option<usize>,
    pub inner_stream: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub meta: Option<MetaDistribution>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub const DEFAULT_OUTPUT_DIR: &str = "metapac-out";

/// Merges defaults, config file, environment seed and flags (in rising
/// precedence, except that the environment seed only fills a gap).
pub fn resolve_config(
    file: &ConfigFile,
    args: &RunArgs,
    env_seed: Option<&str>,
) -> Result<(ExperimentConfig, PathBuf), Error> {
    let mut cfg = ExperimentConfig::default();
    let s = &mut cfg.spec;
    s.eps = args.eps.or(file.eps).unwrap_or(s.eps);
    s.alpha = args.alpha.or(file.alpha).unwrap_or(s.alpha);
    s.delta = args.delta.or(file.delta).unwrap_or(s.delta);
    s.num_tasks = args.num_tasks.or(file.num_tasks).unwrap_or(s.num_tasks);
    s.calib_size = args.calib_size.or(file.calib_size).unwrap_or(s.calib_size);
    s.adapt_size = args.adapt_size.or(file.adapt_size).unwrap_or(s.adapt_size);
    cfg.outer_trials = args.outer.or(file.outer_trials).unwrap_or(cfg.outer_trials);
    cfg.inner_trials = args.inner.or(file.inner_trials).unwrap_or(cfg.inner_trials);
    cfg.eval_size = args.eval_size.or(file.eval_size).unwrap_or(cfg.eval_size);
    cfg.ps_test_size = file.ps_test_size;
    cfg.inner_stream = file.inner_stream.unwrap_or(0);
    if let Some(meta) = file.meta {
        cfg.meta = meta;
    }

    let env_seed = match env_seed {
        Some(v) => Some(
            v.trim()
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?,
        ),
        None => None,
    };
    cfg.seed = args.seed.or(file.seed).or(env_seed).unwrap_or(cfg.seed);

    if let Some(names) = &args.methods {
        cfg.methods = names
            .iter()
            .map(|n| n.trim().parse())
            .collect::<Result<_, _>>()?;
    } else if let Some(methods) = &file.methods {
        cfg.methods = methods.clone();
    }

    let out = args
        .out
        .clone()
        .or_else(|| file.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    cfg.validate()?;
    Ok((cfg, out))
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::OutOfRange { .. } | Error::Config(_) | Error::UnsupportedFamily(..) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Parses `args` and runs the command, writing to the given streams.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return EXIT_USAGE;
            }
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    match dispatch(cli.command, env_seed.as_deref(), out) {
        Ok(code) => code,
        Err((code, e)) => {
            let _ = writeln!(err, "error: {e}");
            code
        }
    }
}

type CmdResult = Result<i32, (i32, Error)>;

fn usage(e: Error) -> (i32, Error) {
    (EXIT_USAGE, e)
}

fn classified(e: Error) -> (i32, Error) {
    (exit_code(&e), e)
}

fn dispatch(cmd: Command, env_seed: Option<&str>, out: &mut dyn Write) -> CmdResult {
    match cmd {
        Command::Calibrate {
            tasks,
            eps,
            alpha,
            delta,
        } => cmd_calibrate(&tasks, eps, alpha, delta, out),
        Command::Simulate(args) => {
            let (cfg, dir) = load_run_config(&args, env_seed)?;
            cmd_simulate(&cfg, &dir, out)
        }
        Command::Verify(args) => {
            let (cfg, dir) = load_run_config(&args, env_seed)?;
            let write_dir = args.out.is_some().then_some(dir);
            cmd_verify(&cfg, write_dir.as_deref(), out)
        }
        Command::Report { report } => cmd_report(&report, out),
    }
}

fn load_run_config(args: &RunArgs, env_seed: Option<&str>) -> Result<(ExperimentConfig, PathBuf), (i32, Error)> {
    let file = match &args.config {
        Some(p) => ConfigFile::load(p).map_err(usage)?,
        None => ConfigFile::default(),
    };
    resolve_config(&file, args, env_seed).map_err(usage)
}

/// Output of `metapac calibrate`.
#[derive(Debug, Serialize, Deserialize)]
pub struct CalibrationOutput {
    pub threshold: Threshold,
    pub per_task_thresholds: Vec<Threshold>,
    pub tasks: Vec<String>,
}

/// Loads every `<tasks_dir>/<task>/calib.csv`, tasks in name order.
pub fn load_task_dir(tasks_dir: &Path) -> Result<(Vec<String>, Vec<TaskCalibrationBundle>), Error> {
    let entries = std::fs::read_dir(tasks_dir).map_err(|e| Error::io(tasks_dir, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(tasks_dir, e))?;
        if entry.path().is_dir() {
            dirs.push(entry.path());
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Data {
            path: tasks_dir.to_path_buf(),
            line: 0,
            message: "no task subdirectories".into(),
        });
    }
    let mut names = Vec::with_capacity(dirs.len());
    let mut bundles = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let sample = ScoreSample::from_csv_path(dir.join("calib.csv"))?;
        names.push(dir.file_name().unwrap_or_default().to_string_lossy().into_owned());
        bundles.push(TaskCalibrationBundle::from_scores(sample));
    }
    Ok((names, bundles))
}

pub fn cmd_calibrate(tasks: &Path, eps: f64, alpha: f64, delta: f64, out: &mut dyn Write) -> CmdResult {
    let (names, bundles) = load_task_dir(tasks).map_err(classified)?;
    let spec = GuaranteeSpec {
        eps,
        alpha,
        delta,
        num_tasks: bundles.len(),
        calib_size: bundles.iter().map(|b| b.calibration_scores.len()).min().unwrap_or(0),
        adapt_size: 0,
    };
    let cal = meta_calibrate(&bundles, &spec).map_err(classified)?;
    let output = CalibrationOutput {
        threshold: cal.threshold,
        per_task_thresholds: cal.per_task_thresholds,
        tasks: names,
    };
    let json = serde_json::to_string(&output).expect("serializes");
    writeln!(out, "{json}").map_err(|e| (EXIT_DATA, Error::io("<stdout>", e)))?;
    Ok(EXIT_OK)
}

pub fn cmd_simulate(cfg: &ExperimentConfig, dir: &Path, out: &mut dyn Write) -> CmdResult {
    let report = run_experiment(cfg).map_err(classified)?;
    report.write_to_dir(dir).map_err(|e| (EXIT_DATA, e))?;
    let _ = writeln!(out, "wrote {}", dir.display());
    render_table(&report, out).map_err(|e| (EXIT_DATA, Error::io("<stdout>", e)))?;
    Ok(EXIT_OK)
}

pub fn cmd_verify(cfg: &ExperimentConfig, dir: Option<&Path>, out: &mut dyn Write) -> CmdResult {
    if cfg.meta.family != Family::Analytic1d {
        return Err(usage(Error::UnsupportedFamily(
            "exact verification",
            cfg.meta.family.name(),
        )));
    }
    let report = run_experiment(cfg).map_err(classified)?;
    if let Some(dir) = dir {
        report.write_to_dir(dir).map_err(|e| (EXIT_DATA, e))?;
    }
    let checks = verify_report(&report);
    let io = |e| (EXIT_DATA, Error::io("<stdout>", e));
    for c in &checks {
        writeln!(
            out,
            "{:<12} outer_success_fraction={} bar={} band={} {}",
            c.method.to_string(),
            sig9(c.rate),
            sig9(c.bar),
            sig9(c.band),
            if c.pass { "PASS" } else { "FAIL" }
        )
        .map_err(io)?;
    }
    let pass = match checks.iter().find(|c| c.method == Method::MetaPs) {
        Some(c) => c.pass,
        None => checks.iter().all(|c| c.pass),
    };
    writeln!(out, "{}", if pass { "PASS" } else { "FAIL" }).map_err(io)?;
    Ok(if pass { EXIT_OK } else { EXIT_VERIFY_FAIL })
}

pub fn cmd_report(path: &Path, out: &mut dyn Write) -> CmdResult {
    let report = TrialReport::from_json_path(path).map_err(|e| (EXIT_DATA, e))?;
    render_table(&report, out).map_err(|e| (EXIT_DATA, Error::io("<stdout>", e)))?;
    Ok(EXIT_OK)
}

/// Whitespace-aligned version of `summary.csv`; empty cells print as `-`.
pub fn render_table(report: &TrialReport, out: &mut dyn Write) -> std::io::Result<()> {
    let mut rows: Vec<Vec<String>> = vec![SUMMARY_HEADER.iter().map(|s| s.to_string()).collect()];
    rows.extend(report.summary_rows().into_iter().map(|r| {
        r.into_iter()
            .map(|c| if c.is_empty() { "-".to_string() } else { c })
            .collect()
    }));
    let widths: Vec<usize> = (0..SUMMARY_HEADER.len())
        .map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0))
        .collect();
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        writeln!(out, "{}", line.join("  ").trim_end())?;
    }
    Ok(())
}
