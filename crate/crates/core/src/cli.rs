//! Command-line front end: `generate`, `run`, `ablate` and `report`.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{mu_all, read_jsonl, summarize_lines, write_jsonl, EvalLine, SummaryLine};
use crate::experiment::{execute, grid, persist, synthetic_pair};
use crate::plan::{
    parse_plan, DatasetSource, ExperimentPlan, LearnerKind, PlanOverrides, PolicyChoice,
};
use crate::stream::{export_features, Scheme};

#[derive(Debug, Parser)]
#[command(
    name = "verse",
    version,
    about = "Streaming class-incremental learning experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic dataset as train/test feature files.
    Generate {
        #[command(flatten)]
        plan: PlanArgs,
    },
    /// Run the learner × scheme × seed grid.
    Run {
        #[command(flatten)]
        plan: PlanArgs,
        /// Print the resolved grid without training.
        #[arg(long)]
        dry_run: bool,
    },
    /// Repeat the grid across values of one hyperparameter.
    Ablate {
        #[command(flatten)]
        plan: PlanArgs,
        /// buffer_capacity | lambda | accept_rate | ema_on_off | replacement_policy
        #[arg(long)]
        axis: String,
        /// Comma-separated values for the axis.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        dry_run: bool,
    },
    /// Recompute summaries from persisted records.
    Report {
        /// Directory holding `records.jsonl`.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args, Default, Clone)]
pub struct PlanArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run seeds, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    pub scheme: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub learner: Option<Vec<String>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub accept_rate: Option<f64>,
    #[arg(long)]
    pub replay_count: Option<usize>,
    #[arg(long)]
    pub buffer_capacity: Option<usize>,
    #[arg(long)]
    pub policy: Option<String>,
}

impl PlanArgs {
    pub fn overrides(&self) -> Result<PlanOverrides> {
        fn parse_all<T: std::str::FromStr<Err = Error>>(
            v: &Option<Vec<String>>,
        ) -> Result<Option<Vec<T>>> {
            v.as_ref()
                .map(|items| items.iter().map(|s| s.parse()).collect())
                .transpose()
        }
        Ok(PlanOverrides {
            master_seed: self.seed,
            seeds: self.seeds.clone(),
            schemes: parse_all::<Scheme>(&self.scheme)?,
            learners: parse_all::<LearnerKind>(&self.learner)?,
            output_dir: self.out.clone(),
            workers: self.workers,
            alpha: self.alpha,
            beta: self.beta,
            lambda: self.lambda,
            gamma: self.gamma,
            accept_rate: self.accept_rate,
            replay_count: self.replay_count,
            buffer_capacity: self.buffer_capacity,
            policy: self
                .policy
                .as_deref()
                .map(str::parse::<PolicyChoice>)
                .transpose()?,
        })
    }

    pub fn resolve(&self) -> Result<ExperimentPlan> {
        parse_plan(self.config.as_deref(), &self.overrides()?)
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn print_summary_table(lines: &[SummaryLine], out: &mut dyn Write) -> Result<()> {
    writeln!(
        out,
        "{:<16} {:<15} {:>6} {:>8} {:>9}  status",
        "learner", "scheme", "seed", "mu_all", "omega_all"
    )
    .map_err(io_err)?;
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    for l in lines {
        writeln!(
            out,
            "{:<16} {:<15} {:>6} {:>8} {:>9}  {}",
            l.learner,
            l.scheme,
            l.seed,
            fmt(l.mu_all),
            fmt(l.omega_all),
            l.error.as_deref().unwrap_or("ok")
        )
        .map_err(io_err)?;
    }
    Ok(())
}

fn print_grid(plan: &ExperimentPlan, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "plan {}", plan.fingerprint()).map_err(io_err)?;
    for cell in grid(plan) {
        writeln!(out, "  {cell}").map_err(io_err)?;
    }
    Ok(())
}

/// Runs the plan, prints one row per run and returns the process exit code.
pub fn cmd_run(plan: &ExperimentPlan, dry_run: bool, out: &mut dyn Write) -> i32 {
    match try_run(plan, dry_run, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            1
        }
    }
}

fn try_run(plan: &ExperimentPlan, dry_run: bool, out: &mut dyn Write) -> Result<i32> {
    plan.validate()?;
    if dry_run {
        print_grid(plan, out)?;
        return Ok(0);
    }
    let output = execute(plan)?;
    persist(plan, &output, &plan.output_dir)?;
    print_summary_table(&output.summaries(), out)?;
    for failure in &output.failures {
        writeln!(out, "run failed: {}: {}", failure.cell, failure.message).map_err(io_err)?;
    }
    Ok(if output.failures.is_empty() { 0 } else { 1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    BufferCapacity,
    Lambda,
    AcceptRate,
    EmaOnOff,
    ReplacementPolicy,
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "buffer_capacity" => Ok(AblationAxis::BufferCapacity),
            "lambda" => Ok(AblationAxis::Lambda),
            "accept_rate" => Ok(AblationAxis::AcceptRate),
            "ema_on_off" | "ema" => Ok(AblationAxis::EmaOnOff),
            "replacement_policy" | "policy" => Ok(AblationAxis::ReplacementPolicy),
            _ => Err(Error::Unknown {
                kind: "ablation axis",
                name: s.to_string(),
            }),
        }
    }
}

impl AblationAxis {
    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::BufferCapacity => "buffer_capacity",
            AblationAxis::Lambda => "lambda",
            AblationAxis::AcceptRate => "accept_rate",
            AblationAxis::EmaOnOff => "ema_on_off",
            AblationAxis::ReplacementPolicy => "replacement_policy",
        }
    }

    /// Copy of `plan` with the axis set to `value`.
    pub fn apply(self, plan: &ExperimentPlan, value: &str) -> Result<ExperimentPlan> {
        let bad = || Error::Config(format!("invalid value `{value}` for axis {}", self.name()));
        let mut p = plan.clone();
        match self {
            AblationAxis::BufferCapacity => {
                p.memory.buffer_capacity = value.parse().map_err(|_| bad())?
            }
            AblationAxis::Lambda => p.verse.lambda = value.parse().map_err(|_| bad())?,
            AblationAxis::AcceptRate => p.verse.accept_rate = value.parse().map_err(|_| bad())?,
            AblationAxis::EmaOnOff => match value {
                "on" | "true" => {}
                // Φ stays at its initialization; distillation weight is unchanged.
                "off" | "false" => p.verse.accept_rate = 0.0,
                _ => return Err(bad()),
            },
            AblationAxis::ReplacementPolicy => p.memory.policy = value.parse()?,
        }
        p.output_dir = plan
            .output_dir
            .join(format!("ablate-{}", self.name()))
            .join(value);
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub axis: String,
    pub value: String,
    pub learner: String,
    pub scheme: Scheme,
    pub runs: usize,
    pub median_mu_all: Option<f64>,
    pub mean_omega_all: Option<f64>,
}

fn ablation_rows(axis: AblationAxis, value: &str, summaries: &[SummaryLine]) -> Vec<AblationRow> {
    let mut keys: Vec<(String, Scheme)> = Vec::new();
    for s in summaries {
        let key = (s.learner.clone(), s.scheme);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(learner, scheme)| {
            let group: Vec<&SummaryLine> = summaries
                .iter()
                .filter(|s| s.learner == learner && s.scheme == scheme)
                .collect();
            let mus: Vec<f64> = group.iter().filter_map(|s| s.mu_all).collect();
            let omegas: Vec<f64> = group.iter().filter_map(|s| s.omega_all).collect();
            AblationRow {
                axis: axis.name().to_string(),
                value: value.to_string(),
                learner,
                scheme,
                runs: group.len(),
                median_mu_all: crate::eval::median(&mus),
                mean_omega_all: mu_all(&omegas).ok(),
            }
        })
        .collect()
}

/// Runs one sub-experiment per axis value and prints a summary row per
/// (value, learner, scheme).
pub fn cmd_ablate(
    plan: &ExperimentPlan,
    axis: &str,
    values: &[String],
    dry_run: bool,
    out: &mut dyn Write,
) -> i32 {
    match try_ablate(plan, axis, values, dry_run, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            1
        }
    }
}

fn try_ablate(
    plan: &ExperimentPlan,
    axis: &str,
    values: &[String],
    dry_run: bool,
    out: &mut dyn Write,
) -> Result<i32> {
    let axis: AblationAxis = axis.parse()?;
    if values.is_empty() {
        return Err(Error::Config("ablation needs at least one value".into()));
    }
    let plans = values
        .iter()
        .map(|v| axis.apply(plan, v))
        .collect::<Result<Vec<_>>>()?;
    if dry_run {
        for (value, p) in values.iter().zip(&plans) {
            writeln!(out, "{} = {value}", axis.name()).map_err(io_err)?;
            print_grid(p, out)?;
        }
        return Ok(0);
    }
    let mut rows = Vec::new();
    let mut failed = false;
    for (value, p) in values.iter().zip(&plans) {
        let output = execute(p)?;
        persist(p, &output, &p.output_dir)?;
        failed |= !output.failures.is_empty();
        rows.extend(ablation_rows(axis, value, &output.summaries()));
    }
    let dir = plan.output_dir.join(format!("ablate-{}", axis.name()));
    write_jsonl(&dir.join("ablation.jsonl"), &rows)?;
    writeln!(
        out,
        "{:<18} {:<12} {:<16} {:<15} {:>5} {:>13} {:>14}",
        "axis", "value", "learner", "scheme", "runs", "median_mu_all", "mean_omega_all"
    )
    .map_err(io_err)?;
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    for r in &rows {
        writeln!(
            out,
            "{:<18} {:<12} {:<16} {:<15} {:>5} {:>13} {:>14}",
            r.axis,
            r.value,
            r.learner,
            r.scheme,
            r.runs,
            fmt(r.median_mu_all),
            fmt(r.mean_omega_all)
        )
        .map_err(io_err)?;
    }
    Ok(if failed { 1 } else { 0 })
}

/// Writes `train.csv` and `test.csv` of the plan's synthetic dataset to the output directory.
pub fn cmd_generate(plan: &ExperimentPlan, out: &mut dyn Write) -> Result<()> {
    let DatasetSource::Synthetic(_) = &plan.dataset else {
        return Err(Error::Config(
            "generate needs a synthetic dataset source".into(),
        ));
    };
    let pair = synthetic_pair(plan)?;
    let dir = &plan.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, data) in [("train.csv", &pair.train), ("test.csv", &pair.test)] {
        let path = dir.join(name);
        export_features(data, &path)?;
        writeln!(out, "wrote {} ({} samples)", path.display(), data.len()).map_err(io_err)?;
    }
    Ok(())
}

/// Re-summarizes `records.jsonl` in `dir`.
pub fn cmd_report(dir: &Path, out: &mut dyn Write) -> Result<Vec<SummaryLine>> {
    let lines: Vec<EvalLine> = read_jsonl(&dir.join("records.jsonl"))?;
    let summary = summarize_lines(&lines);
    print_summary_table(&summary, out)?;
    Ok(summary)
}

/// Entry point shared by the binary; returns the exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(out, "{e}");
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Generate { plan } => plan
            .resolve()
            .and_then(|p| cmd_generate(&p, out))
            .map(|_| 0),
        Command::Run { plan, dry_run } => plan.resolve().map(|p| cmd_run(&p, dry_run, out)),
        Command::Ablate {
            plan,
            axis,
            values,
            dry_run,
        } => plan
            .resolve()
            .map(|p| cmd_ablate(&p, &axis, &values, dry_run, out)),
        Command::Report { out: dir } => cmd_report(&dir, out).map(|lines| {
            if lines.iter().any(|l| l.error.is_some()) {
                1
            } else {
                0
            }
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_names() {
        for name in [
            "buffer_capacity",
            "lambda",
            "accept_rate",
            "ema_on_off",
            "replacement_policy",
        ] {
            assert_eq!(name.parse::<AblationAxis>().unwrap().name(), name);
        }
        assert!("momentum".parse::<AblationAxis>().is_err());
    }

    #[test]
    fn ema_off_freezes_semantic_memory() {
        let plan = ExperimentPlan::default();
        let on = AblationAxis::EmaOnOff.apply(&plan, "on").unwrap();
        let off = AblationAxis::EmaOnOff.apply(&plan, "off").unwrap();
        assert_eq!(on.verse.accept_rate, plan.verse.accept_rate);
        assert_eq!(off.verse.accept_rate, 0.0);
        assert_eq!(off.verse.lambda, plan.verse.lambda);
        assert!(AblationAxis::EmaOnOff.apply(&plan, "maybe").is_err());
    }

    #[test]
    fn accept_rate_flag_parses_negative() {
        let cli =
            Cli::try_parse_from(["verse", "run", "--accept-rate", "-0.1", "--dry-run"]).unwrap();
        let Command::Run { plan, .. } = cli.command else {
            panic!("expected run")
        };
        let err = plan.resolve().unwrap_err();
        assert!(err.to_string().contains("accept_rate in [0,1]"));
    }
}
