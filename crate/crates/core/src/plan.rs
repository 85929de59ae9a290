//! Experiment plans: TOML configuration, command-line overrides, defaults
//! and validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::OfflineConfig;
use crate::learner::{InferenceModel, LearnerSpec, VerseConfig};
use crate::memory::ReplacementPolicy;
use crate::stream::{Scheme, SyntheticConfig};
use crate::substrate::Activation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Verse,
    Replay,
    Finetune,
}

impl LearnerKind {
    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::Verse => "verse",
            LearnerKind::Replay => "replay",
            LearnerKind::Finetune => "finetune",
        }
    }
}

impl std::str::FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "verse" => Ok(LearnerKind::Verse),
            "replay" | "tiny_er" | "er" => Ok(LearnerKind::Replay),
            "finetune" | "fine_tune" | "fine-tune" => Ok(LearnerKind::Finetune),
            other => Err(Error::Unknown {
                kind: "learner",
                name: other.to_string(),
            }),
        }
    }
}

/// Buffer replacement choice; `auto` picks reservoir for temporally ordered
/// streams and class-balanced replacement otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PolicyChoice {
    #[default]
    Auto,
    Reservoir,
    ClassBalanced,
}

impl PolicyChoice {
    pub fn resolve(self, scheme: Scheme) -> ReplacementPolicy {
        match self {
            PolicyChoice::Reservoir => ReplacementPolicy::Reservoir,
            PolicyChoice::ClassBalanced => ReplacementPolicy::ClassBalanced,
            PolicyChoice::Auto if scheme.is_temporally_ordered() => ReplacementPolicy::Reservoir,
            PolicyChoice::Auto => ReplacementPolicy::ClassBalanced,
        }
    }
}

impl std::str::FromStr for PolicyChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(PolicyChoice::Auto),
            other => other.parse::<ReplacementPolicy>().map(|p| match p {
                ReplacementPolicy::Reservoir => PolicyChoice::Reservoir,
                ReplacementPolicy::ClassBalanced => PolicyChoice::ClassBalanced,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SyntheticConfig),
    /// Pre-extracted features in the delimited feature-file format.
    Files {
        train: PathBuf,
        test: PathBuf,
        num_classes: usize,
    },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic(SyntheticConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorConfig {
    pub enabled: bool,
    pub embed_dim: usize,
    pub activation: Activation,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            enabled: true,
            embed_dim: 64,
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden_dims: vec![32, 32],
            activation: Activation::Relu,
        }
    }
}

/// Episodic memory settings shared by every rehearsal learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemoryConfig {
    pub buffer_capacity: usize,
    pub replay_count: usize,
    pub policy: PolicyChoice,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig {
            buffer_capacity: 200,
            replay_count: 16,
            policy: PolicyChoice::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerseSection {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub accept_rate: f64,
    pub inference_model: InferenceModel,
}

impl Default for VerseSection {
    fn default() -> Self {
        let d = VerseConfig::default();
        VerseSection {
            alpha: d.alpha,
            beta: d.beta,
            lambda: d.lambda_distill,
            gamma: d.gamma,
            accept_rate: 0.4,
            inference_model: d.inference_model,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// SGD step size of the fine-tune and replay learners.
    pub lr: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { lr: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentPlan {
    /// Every random stream in the grid is derived from this value.
    pub master_seed: u64,
    pub seeds: Vec<u64>,
    pub schemes: Vec<Scheme>,
    pub learners: Vec<LearnerKind>,
    pub output_dir: PathBuf,
    pub workers: usize,
    /// Evaluate every N steps; unset means class boundaries for
    /// class-contiguous schemes and every 50 steps otherwise.
    pub eval_every: Option<usize>,
    /// Also record the curve of the model not selected for inference.
    pub report_both_models: bool,
    pub dataset: DatasetSource,
    pub extractor: ExtractorConfig,
    pub network: NetworkConfig,
    pub memory: MemoryConfig,
    pub verse: VerseSection,
    pub baseline: BaselineConfig,
    pub offline: OfflineConfig,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            master_seed: 0,
            seeds: (0..10).collect(),
            schemes: vec![Scheme::ClassInstance],
            learners: vec![
                LearnerKind::Verse,
                LearnerKind::Replay,
                LearnerKind::Finetune,
            ],
            output_dir: PathBuf::from("verse-out"),
            workers: 1,
            eval_every: None,
            report_both_models: false,
            dataset: DatasetSource::default(),
            extractor: ExtractorConfig::default(),
            network: NetworkConfig::default(),
            memory: MemoryConfig::default(),
            verse: VerseSection::default(),
            baseline: BaselineConfig::default(),
            offline: OfflineConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlanOverrides {
    pub master_seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub schemes: Option<Vec<Scheme>>,
    pub learners: Option<Vec<LearnerKind>>,
    pub output_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub accept_rate: Option<f64>,
    pub replay_count: Option<usize>,
    pub buffer_capacity: Option<usize>,
    pub policy: Option<PolicyChoice>,
}

impl PlanOverrides {
    pub fn apply(&self, plan: &mut ExperimentPlan) {
        macro_rules! set {
            ($src:ident => $($dst:tt)+) => {
                if let Some(v) = &self.$src {
                    plan.$($dst)+ = v.clone();
                }
            };
        }
        set!(master_seed => master_seed);
        set!(seeds => seeds);
        set!(schemes => schemes);
        set!(learners => learners);
        set!(output_dir => output_dir);
        set!(workers => workers);
        set!(alpha => verse.alpha);
        set!(beta => verse.beta);
        set!(lambda => verse.lambda);
        set!(gamma => verse.gamma);
        set!(accept_rate => verse.accept_rate);
        set!(replay_count => memory.replay_count);
        set!(buffer_capacity => memory.buffer_capacity);
        set!(policy => memory.policy);
    }
}

/// Loads `config` (if any), applies `overrides` and validates the result.
pub fn parse_plan(config: Option<&Path>, overrides: &PlanOverrides) -> Result<ExperimentPlan> {
    let mut plan = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            plan_from_toml(&text).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
                other => other,
            })?
        }
        None => ExperimentPlan::default(),
    };
    overrides.apply(&mut plan);
    plan.validate()?;
    Ok(plan)
}

pub fn plan_from_toml(text: &str) -> Result<ExperimentPlan> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

impl ExperimentPlan {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plan serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.seeds.is_empty() {
            return fail("seeds must be nonempty".into());
        }
        if self.schemes.is_empty() {
            return fail("schemes must be nonempty".into());
        }
        if self.learners.is_empty() {
            return fail("learners must be nonempty".into());
        }
        if self.workers == 0 {
            return fail("workers >= 1, got 0".into());
        }
        if self.eval_every == Some(0) {
            return fail("eval_every >= 1, got 0".into());
        }
        if self.network.hidden_dims.contains(&0) {
            return fail("network.hidden_dims entries must be >= 1".into());
        }
        if self.extractor.enabled && self.extractor.embed_dim == 0 {
            return fail("extractor.embed_dim >= 1, got 0".into());
        }
        if !(self.baseline.lr > 0.0) {
            return fail(format!("baseline.lr > 0, got {}", self.baseline.lr));
        }
        if self.offline.batch_size == 0 {
            return fail("offline.batch_size >= 1, got 0".into());
        }
        if !(self.offline.lr > 0.0) {
            return fail(format!("offline.lr > 0, got {}", self.offline.lr));
        }
        match &self.dataset {
            DatasetSource::Synthetic(cfg) => cfg.validate()?,
            DatasetSource::Files {
                train,
                test,
                num_classes,
            } => {
                if *num_classes < 2 {
                    return fail(format!("dataset.num_classes >= 2, got {num_classes}"));
                }
                for path in [train, test] {
                    if !path.is_file() {
                        return fail(format!("feature file {} does not exist", path.display()));
                    }
                }
            }
        }
        for scheme in &self.schemes {
            for kind in &self.learners {
                self.learner_spec(*kind, *scheme).validate()?;
            }
        }
        Ok(())
    }

    pub fn verse_config(&self, scheme: Scheme) -> VerseConfig {
        VerseConfig {
            alpha: self.verse.alpha,
            beta: self.verse.beta,
            lambda_distill: self.verse.lambda,
            gamma: self.verse.gamma,
            accept_rate: self.verse.accept_rate,
            replay_count: self.memory.replay_count,
            buffer_capacity: self.memory.buffer_capacity,
            policy: self.memory.policy.resolve(scheme),
            inference_model: self.verse.inference_model,
        }
    }

    pub fn learner_spec(&self, kind: LearnerKind, scheme: Scheme) -> LearnerSpec {
        match kind {
            LearnerKind::Verse => LearnerSpec::Verse(self.verse_config(scheme)),
            LearnerKind::Finetune => LearnerSpec::Finetune {
                lr: self.baseline.lr,
            },
            LearnerKind::Replay => LearnerSpec::Replay {
                lr: self.baseline.lr,
                replay_count: self.memory.replay_count,
                buffer_capacity: self.memory.buffer_capacity,
                policy: self.memory.policy.resolve(scheme),
            },
        }
    }

    /// SHA-256 of the resolved plan's TOML form.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}
