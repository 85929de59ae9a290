//! Grid orchestration: data preparation, per-cell streaming runs with
//! anytime evaluation, and persistence of the resulting records.

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{
    evaluate, write_jsonl, EvalPoint, EvalScope, OfflineReferences, RunRecord, SummaryLine,
};
use crate::learner::{InferenceModel, Learner, LearnerSpec};
use crate::plan::{DatasetSource, ExperimentPlan, LearnerKind};
use crate::seed::derive_seed;
use crate::stream::{
    generate_synthetic, ingest_features, make_schedule, Dataset, DatasetPair, FeatureFileSpec,
    Scheme, Split, StreamSchedule,
};
use crate::substrate::{FrozenExtractor, NetworkShape, ParamVector};

// Seed-derivation labels.
const DATA: u64 = 0xD;
const EXTRACTOR: u64 = 0xE;
const SCHEDULE: u64 = 0x5;
const INIT: u64 = 0x1;
const LEARNER: u64 = 0x7;
const OFFLINE: u64 = 0x0F;

/// Embedded train/test splits and the network shape that consumes them.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
    pub shape: NetworkShape,
}

/// Raw synthetic splits for the plan; the generator seed is derived from the master seed.
pub fn synthetic_pair(plan: &ExperimentPlan) -> Result<DatasetPair> {
    let DatasetSource::Synthetic(cfg) = &plan.dataset else {
        return Err(Error::Config("dataset source is not synthetic".into()));
    };
    let mut cfg = cfg.clone();
    cfg.seed = derive_seed(plan.master_seed, &[DATA, cfg.seed]);
    generate_synthetic(&cfg)
}

pub fn prepare_data(plan: &ExperimentPlan) -> Result<PreparedData> {
    let (train, test) = match &plan.dataset {
        DatasetSource::Synthetic(_) => {
            let pair = synthetic_pair(plan)?;
            (pair.train, pair.test)
        }
        DatasetSource::Files {
            train,
            test,
            num_classes,
        } => (
            ingest_features(train, &FeatureFileSpec::new(*num_classes, Split::Train))?,
            ingest_features(test, &FeatureFileSpec::new(*num_classes, Split::Test))?,
        ),
    };
    if train.dim != test.dim {
        return Err(Error::Dimension {
            context: "test feature width",
            expected: train.dim,
            actual: test.dim,
        });
    }
    let (train, test) = if plan.extractor.enabled {
        let extractor = FrozenExtractor::new(
            train.dim,
            plan.extractor.embed_dim,
            plan.extractor.activation,
            derive_seed(plan.master_seed, &[EXTRACTOR]),
        )?;
        (train.embed(&extractor)?, test.embed(&extractor)?)
    } else {
        (train, test)
    };
    let shape = NetworkShape::new(
        train.dim,
        plan.network.hidden_dims.clone(),
        train.num_classes,
    )?
    .with_activation(plan.network.activation);
    Ok(PreparedData { train, test, shape })
}

/// Stream positions (number of samples consumed) after which to evaluate.
pub fn eval_positions(
    schedule: &StreamSchedule,
    train: &Dataset,
    every: Option<usize>,
) -> Vec<u64> {
    let n = schedule.len() as u64;
    let mut positions: Vec<u64> = match every {
        Some(k) => (1..=n).filter(|t| t % k as u64 == 0).collect(),
        None if schedule.scheme.is_class_contiguous() => schedule
            .order
            .windows(2)
            .enumerate()
            .filter(|(_, w)| train.samples[w[0]].y != train.samples[w[1]].y)
            .map(|(i, _)| i as u64 + 1)
            .collect(),
        None => (1..=n).filter(|t| t % 50 == 0).collect(),
    };
    if positions.last() != Some(&n) {
        positions.push(n);
    }
    positions
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GridCell {
    pub learner: LearnerKind,
    pub scheme: Scheme,
    pub seed: u64,
}

impl std::fmt::Display for GridCell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} / {} / seed {}",
            self.learner.name(),
            self.scheme,
            self.seed
        )
    }
}

pub fn grid(plan: &ExperimentPlan) -> Vec<GridCell> {
    let mut cells = Vec::new();
    for &scheme in &plan.schemes {
        for &seed in &plan.seeds {
            for &learner in &plan.learners {
                cells.push(GridCell {
                    learner,
                    scheme,
                    seed,
                });
            }
        }
    }
    cells
}

/// Curves collected while streaming.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamRun {
    pub primary: Vec<EvalPoint>,
    /// Curve of the other VERSE model (Φ when inference uses θ, and vice versa).
    pub secondary: Option<Vec<EvalPoint>>,
    pub learner: Learner,
}

/// Feeds the schedule to the learner one sample at a time, evaluating on
/// the test classes seen so far after each position in `eval_at`.
pub fn stream_learner(
    mut learner: Learner,
    schedule: &StreamSchedule,
    data: &PreparedData,
    eval_at: &[u64],
    both_models: bool,
) -> Result<StreamRun> {
    let mut seen = BTreeSet::new();
    let mut primary = Vec::with_capacity(eval_at.len());
    let verse_other = match learner.spec() {
        LearnerSpec::Verse(cfg) if both_models => Some(cfg.inference_model),
        _ => None,
    };
    let mut secondary = verse_other.map(|_| Vec::with_capacity(eval_at.len()));
    let mut next = eval_at.iter().peekable();
    for sample in schedule.stream(&data.train) {
        seen.insert(sample.y);
        let t = sample.stream_index;
        learner.observe(sample)?;
        if next.peek() == Some(&&t) {
            next.next();
            let scope = EvalScope::Classes(seen.clone());
            let seen_classes: Vec<usize> = seen.iter().copied().collect();
            primary.push(EvalPoint {
                t,
                seen_classes: seen_classes.clone(),
                accuracy: evaluate(learner.inference_params(), &data.test, &scope)?,
            });
            if let (Some(model), Some(curve)) = (verse_other, secondary.as_mut()) {
                let state = learner.state();
                let other = match model {
                    InferenceModel::Working => state.sem.phi(),
                    InferenceModel::Semantic => &state.theta,
                };
                curve.push(EvalPoint {
                    t,
                    seen_classes,
                    accuracy: evaluate(other, &data.test, &scope)?,
                });
            }
        }
    }
    Ok(StreamRun {
        primary,
        secondary,
        learner,
    })
}

/// Streams one grid cell through its learner without computing offline references.
pub fn stream_cell(
    plan: &ExperimentPlan,
    data: &PreparedData,
    cell: GridCell,
) -> Result<StreamRun> {
    let scheme_label = Scheme::ALL.iter().position(|&s| s == cell.scheme).unwrap() as u64;
    let schedule = make_schedule(
        &data.train,
        cell.scheme,
        derive_seed(plan.master_seed, &[SCHEDULE, scheme_label, cell.seed]),
    )?;
    let eval_at = eval_positions(&schedule, &data.train, plan.eval_every);
    let theta = ParamVector::init(
        &data.shape,
        derive_seed(plan.master_seed, &[INIT, cell.seed]),
    );
    let learner = Learner::new(
        plan.learner_spec(cell.learner, cell.scheme),
        theta,
        derive_seed(plan.master_seed, &[LEARNER, cell.seed]),
    )?;
    stream_learner(learner, &schedule, data, &eval_at, plan.report_both_models)
}

/// Runs one grid cell and returns its record(s).
pub fn run_cell(
    plan: &ExperimentPlan,
    data: &PreparedData,
    offline: &OfflineReferences<'_>,
    cell: GridCell,
) -> Result<Vec<RunRecord>> {
    let spec = plan.learner_spec(cell.learner, cell.scheme);
    let run = stream_cell(plan, data, cell)?;

    let offline_refs = run
        .primary
        .iter()
        .map(|p| offline.accuracy(&p.seen_classes.iter().copied().collect()))
        .collect::<Result<Vec<f64>>>()?;
    let config = serde_json::to_value(&spec)?;
    let mut records = vec![RunRecord {
        learner: cell.learner.name().to_string(),
        scheme: cell.scheme,
        seed: cell.seed,
        eval_points: run.primary,
        offline_refs: offline_refs.clone(),
        config: config.clone(),
    }];
    if let (Some(points), LearnerSpec::Verse(cfg)) = (run.secondary, &spec) {
        let suffix = match cfg.inference_model {
            InferenceModel::Working => "semantic",
            InferenceModel::Semantic => "working",
        };
        records.push(RunRecord {
            learner: format!("{}:{suffix}", cell.learner.name()),
            scheme: cell.scheme,
            seed: cell.seed,
            eval_points: points,
            offline_refs,
            config,
        });
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub cell: GridCell,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentOutput {
    pub records: Vec<RunRecord>,
    pub failures: Vec<RunFailure>,
}

impl ExperimentOutput {
    pub fn summaries(&self) -> Vec<SummaryLine> {
        let mut lines: Vec<SummaryLine> = self.records.iter().map(RunRecord::summary).collect();
        lines.extend(self.failures.iter().map(|f| SummaryLine {
            learner: f.cell.learner.name().to_string(),
            scheme: f.cell.scheme,
            seed: f.cell.seed,
            mu_all: None,
            omega_all: None,
            error: Some(f.message.clone()),
        }));
        lines
    }

    /// Median μ_all over seeds for `learner` on `scheme`.
    pub fn median_mu(&self, learner: &str, scheme: Scheme) -> Option<f64> {
        let values: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.learner == learner && r.scheme == scheme)
            .filter_map(|r| r.mu_all().ok())
            .collect();
        crate::eval::median(&values)
    }
}

/// Executes the plan's grid without touching the filesystem.
pub fn execute(plan: &ExperimentPlan) -> Result<ExperimentOutput> {
    plan.validate()?;
    let data = prepare_data(plan)?;
    let offline = OfflineReferences::new(
        &data.train,
        &data.test,
        data.shape.clone(),
        plan.offline.clone(),
        derive_seed(plan.master_seed, &[OFFLINE]),
    );
    let cells = grid(plan);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results: Vec<(GridCell, Result<Vec<RunRecord>>)> = pool.install(|| {
        cells
            .par_iter()
            .map(|&cell| (cell, run_cell(plan, &data, &offline, cell)))
            .collect()
    });
    let mut out = ExperimentOutput::default();
    for (cell, result) in results {
        match result {
            Ok(records) => out.records.extend(records),
            Err(e) => out.failures.push(RunFailure {
                cell,
                message: e.to_string(),
            }),
        }
    }
    Ok(out)
}

/// Writes `plan.toml`, `plan.sha256`, `records.jsonl` and `summary.jsonl` to `dir`.
pub fn persist(plan: &ExperimentPlan, output: &ExperimentOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let plan_path = dir.join("plan.toml");
    std::fs::write(&plan_path, plan.to_toml()).map_err(|e| Error::io(&plan_path, e))?;
    let hash_path = dir.join("plan.sha256");
    std::fs::write(&hash_path, format!("{}\n", plan.fingerprint()))
        .map_err(|e| Error::io(&hash_path, e))?;

    // Offline curves are shared by every learner on the same (scheme, seed).
    let mut offline_written = BTreeSet::new();
    let mut lines = Vec::new();
    for record in &output.records {
        if offline_written.insert((record.scheme, record.seed)) {
            lines.extend(record.offline_lines());
        }
        lines.extend(record.eval_lines());
    }
    write_jsonl(&dir.join("records.jsonl"), lines)?;
    write_jsonl(&dir.join("summary.jsonl"), output.summaries())
}

/// Runs the grid and persists it under `plan.output_dir`.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentOutput> {
    let output = execute(plan)?;
    persist(plan, &output, &plan.output_dir)?;
    Ok(output)
}
