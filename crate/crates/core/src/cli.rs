//! Command-line front end and file output.
//!
//! Exit codes: 0 success, 1 config or usage error, 2 runtime error,
//! 3 at least one batch trial failed.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::compare::{compare, mean_std, CompareSettings, ComparisonTable, MethodSummary};
use crate::config::{check_structure, PlannerKind, ScenarioConfig};
use crate::error::{ConfigError, Error};
use crate::safety::FilterStatus;
use crate::sim::{run, StepMetrics};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_TRIAL_FAILED: i32 = 3;

/// Column order of `metrics.csv` and of every per-trial CSV.
pub const METRICS_HEADER: &str = "step,sq_err_loc,sq_err_track,trace_loc,trace_track,lambda2_est,lambda2_true,\
min_dist_est,min_dist_true,filter_status,perturbation,planner_evaluations,filter_iterations";
/// Wall-clock planner time lives apart so `metrics.csv` stays byte-reproducible.
pub const TIMING_HEADER: &str = "step,planner_time";
pub const COMPARE_HEADER: &str = "n,trial,method,trace,seconds";

type Column = (&'static str, fn(&StepMetrics) -> f64);

/// Metrics averaged by `aggregate.csv`, in column order.
const AGGREGATED: [Column; 9] = [
    ("sq_err_loc", |m| m.sq_err_loc),
    ("sq_err_track", |m| m.sq_err_track),
    ("trace_loc", |m| m.trace_loc),
    ("trace_track", |m| m.trace_track),
    ("lambda2_est", |m| m.lambda2_est),
    ("lambda2_true", |m| m.lambda2_true),
    ("min_dist_est", |m| m.min_dist_est),
    ("min_dist_true", |m| m.min_dist_true),
    ("perturbation", |m| m.perturbation),
];

#[derive(Debug, Parser)]
#[command(
    name = "tracklink",
    version,
    about = "Joint localization and target tracking with connectivity-safe planning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one closed-loop scenario.
    Run(RunArgs),
    /// Run the scenario over consecutive seeds and aggregate.
    Batch(BatchArgs),
    /// Single-step comparison of the continuous, greedy, and random planners.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config planner.
    #[arg(long)]
    pub planner: Option<PlannerKind>,
    /// Overrides the continuous planner's evaluation budget.
    #[arg(long)]
    pub budget: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, default_value_t = 30)]
    pub trials: usize,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 4, 6, 8])]
    pub n_list: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    pub trials: usize,
    /// Continuous-planner evaluations per input dimension.
    #[arg(long, default_value_t = 100)]
    pub budget: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Fixed 9-significant-digit rendering, `%g` style.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        trim_zeros(format!("{:.*}", (8 - exp) as usize, x))
    } else {
        format!(
            "{}e{}{:02}",
            trim_zeros(mantissa.to_string()),
            if exp < 0 { '-' } else { '+' },
            exp.abs()
        )
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn status_str(s: Option<FilterStatus>) -> &'static str {
    s.map_or("none", FilterStatus::as_str)
}

pub fn metrics_csv(rows: &[StepMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in rows {
        let f = format_float;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            m.step,
            f(m.sq_err_loc),
            f(m.sq_err_track),
            f(m.trace_loc),
            f(m.trace_track),
            f(m.lambda2_est),
            f(m.lambda2_true),
            f(m.min_dist_est),
            f(m.min_dist_true),
            status_str(m.filter_status),
            f(m.perturbation),
            m.planner_evaluations,
            m.filter_iterations
        )
        .expect("write to string");
    }
    out
}

pub fn timing_csv(rows: &[StepMetrics]) -> String {
    let mut out = String::from(TIMING_HEADER);
    out.push('\n');
    for m in rows {
        writeln!(out, "{},{}", m.step, format_float(m.planner_time)).expect("write to string");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub steps: usize,
    pub final_trace_loc: f64,
    pub final_trace_track: f64,
    pub final_sq_err_loc: f64,
    pub final_sq_err_track: f64,
    pub min_lambda2_est: f64,
    pub min_lambda2_true: f64,
    pub min_dist_est: f64,
    pub min_dist_true: f64,
    /// Rows with estimated `λ₂` below the connectivity threshold.
    pub connectivity_violations: usize,
    /// Rows with estimated minimum distance below `d_min`.
    pub separation_violations: usize,
    pub violations: usize,
    pub filter_fallbacks: usize,
}

pub fn summarize(rows: &[StepMetrics], cfg: &ScenarioConfig) -> RunSummary {
    let last = rows.last().expect("a run has at least one row");
    let min = |f: fn(&StepMetrics) -> f64| rows.iter().map(f).fold(f64::INFINITY, f64::min);
    let connectivity_violations = rows
        .iter()
        .filter(|m| cfg.n_robots >= 2 && m.lambda2_est < cfg.eps_conn)
        .count();
    let separation_violations = rows.iter().filter(|m| m.min_dist_est < cfg.d_min).count();
    RunSummary {
        steps: rows.len() - 1,
        final_trace_loc: last.trace_loc,
        final_trace_track: last.trace_track,
        final_sq_err_loc: last.sq_err_loc,
        final_sq_err_track: last.sq_err_track,
        min_lambda2_est: min(|m| m.lambda2_est),
        min_lambda2_true: min(|m| m.lambda2_true),
        min_dist_est: min(|m| m.min_dist_est),
        min_dist_true: min(|m| m.min_dist_true),
        connectivity_violations,
        separation_violations,
        violations: connectivity_violations + separation_violations,
        filter_fallbacks: rows
            .iter()
            .filter(|m| m.filter_status == Some(FilterStatus::InfeasibleFallback))
            .count(),
    }
}

/// Per-step mean and population std of each aggregated metric across runs
/// of equal length.
pub fn aggregate_csv(runs: &[Vec<StepMetrics>]) -> String {
    let mut out = String::from("step");
    for (name, _) in AGGREGATED {
        write!(out, ",{name}_mean,{name}_std").expect("write to string");
    }
    out.push('\n');
    let len = runs.iter().map(Vec::len).min().unwrap_or(0);
    for k in 0..len {
        write!(out, "{}", runs[0][k].step).expect("write to string");
        for (_, get) in AGGREGATED {
            let (mean, std) = mean_std(runs.iter().map(|r| get(&r[k])));
            write!(out, ",{},{}", format_float(mean), format_float(std)).expect("write to string");
        }
        out.push('\n');
    }
    out
}

pub fn compare_csv(table: &ComparisonTable) -> String {
    let mut out = String::from(COMPARE_HEADER);
    out.push('\n');
    for r in &table.rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.n,
            r.trial,
            r.method.as_str(),
            format_float(r.trace),
            format_float(r.seconds)
        )
        .expect("write to string");
    }
    out
}

#[derive(Debug, Serialize)]
struct CompareSummary {
    trials: usize,
    budget_per_dim: usize,
    action_magnitude: f64,
    continuous_radius: f64,
    methods: Vec<MethodSummary>,
}

#[derive(Debug)]
enum Failure {
    Config(ConfigError),
    Runtime(String),
    Trials(usize),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(c) => Failure::Config(c),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(format!("output: {e}"))
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> io::Result<()> {
    fs::write(dir.join(name), contents)
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("summary serializes");
    s.push('\n');
    s
}

/// Loads the config, applies overrides, and re-validates.
fn load_scenario(args: &ScenarioArgs) -> Result<ScenarioConfig, ConfigError> {
    let text = fs::read_to_string(&args.config)?;
    let mut cfg = ScenarioConfig::from_json(&text)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(planner) = args.planner {
        cfg.planner = planner;
    }
    if let Some(budget) = args.budget {
        cfg.continuous_budget = budget;
    }
    // A zero horizon is a valid (initial-state only) run.
    check_structure(&cfg)?;
    cfg.sigma_norm = Some(cfg.sigma());
    cfg.q_target = Some(cfg.q_target());
    Ok(cfg)
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let cfg = load_scenario(&args.scenario)?;
    let rows = run(&cfg)?;
    let out = &args.scenario.out;
    fs::create_dir_all(out)?;
    write_file(out, "metrics.csv", &metrics_csv(&rows))?;
    write_file(out, "timing.csv", &timing_csv(&rows))?;
    write_file(out, "summary.json", &to_json(&summarize(&rows, &cfg)))?;
    Ok(())
}

fn cmd_batch(args: &BatchArgs) -> Result<(), Failure> {
    if args.trials == 0 {
        return Err(ConfigError::invalid("trials", "must be at least 1").into());
    }
    let base = load_scenario(&args.scenario)?;
    let out = &args.scenario.out;
    fs::create_dir_all(out)?;
    let results: Vec<(usize, Result<Vec<StepMetrics>, Error>)> = (0..args.trials)
        .into_par_iter()
        .map(|t| {
            let mut cfg = base.clone();
            cfg.seed = base.seed.wrapping_add(t as u64);
            (t, run(&cfg))
        })
        .collect();

    let mut runs = Vec::new();
    let mut failures = String::new();
    for (t, result) in results {
        match result {
            Ok(rows) => {
                write_file(out, &format!("trial_{t:03}.csv"), &metrics_csv(&rows))?;
                runs.push(rows);
            }
            Err(e) => {
                eprintln!("trial {t} (seed {}): {e}", base.seed.wrapping_add(t as u64));
                writeln!(failures, "{t},{e}").expect("write to string");
            }
        }
    }
    write_file(out, "aggregate.csv", &aggregate_csv(&runs))?;
    if failures.is_empty() {
        Ok(())
    } else {
        write_file(out, "failures.csv", &format!("trial,error\n{failures}"))?;
        Err(Failure::Trials(args.trials - runs.len()))
    }
}

fn cmd_compare(args: &CompareArgs) -> Result<(), Failure> {
    if args.trials == 0 {
        return Err(ConfigError::invalid("trials", "must be at least 1").into());
    }
    if args.n_list.is_empty() || args.n_list.contains(&0) {
        return Err(ConfigError::invalid("n_list", "needs positive team sizes").into());
    }
    let settings = CompareSettings {
        budget_per_dim: args.budget,
        seed: args.seed,
        ..CompareSettings::default()
    };
    if args.budget * 2 < crate::planner::CEM_POPULATION {
        return Err(ConfigError::invalid("budget", "too small for one generation at n = 1").into());
    }
    let table = compare(&args.n_list, args.trials, &settings)?;
    fs::create_dir_all(&args.out)?;
    write_file(&args.out, "compare.csv", &compare_csv(&table))?;
    let summary = CompareSummary {
        trials: args.trials,
        budget_per_dim: settings.budget_per_dim,
        action_magnitude: settings.action_magnitude,
        continuous_radius: settings.continuous_radius,
        methods: table.summary(),
    };
    write_file(&args.out, "compare_summary.json", &to_json(&summary))?;
    Ok(())
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Batch(a) => cmd_batch(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            EXIT_RUNTIME
        }
        Err(Failure::Trials(n)) => {
            eprintln!("error: {n} trial(s) failed");
            EXIT_TRIAL_FAILED
        }
    }
}
