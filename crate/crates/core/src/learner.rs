//! Streaming learners: the virtual-gradient learner and the fine-tune and
//! experience-replay baselines, all consuming one sample per step.

use std::path::Path;

use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{EpisodicBuffer, FeatureSample, ReplacementPolicy};
use crate::seed::derive_seed;
use crate::semantic::SemanticMemory;
use crate::substrate::{axpy_update, gradient, Batch, Objective, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InferenceModel {
    /// The working parameters θ.
    #[default]
    Working,
    /// The semantic memory Φ.
    Semantic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerseConfig {
    /// Virtual-step learning rate.
    pub alpha: f64,
    /// Global-step learning rate.
    pub beta: f64,
    /// Weight of the logit-distillation term.
    #[serde(rename = "lambda")]
    pub lambda_distill: f64,
    /// EMA momentum of the semantic memory.
    pub gamma: f64,
    /// Probability that the semantic memory is refreshed at a step.
    pub accept_rate: f64,
    /// Size of each rehearsal subset.
    pub replay_count: usize,
    pub buffer_capacity: usize,
    pub policy: ReplacementPolicy,
    pub inference_model: InferenceModel,
}

impl Default for VerseConfig {
    fn default() -> Self {
        VerseConfig {
            alpha: 0.005,
            beta: 0.01,
            lambda_distill: 0.3,
            gamma: 0.9,
            accept_rate: 0.1,
            replay_count: 16,
            buffer_capacity: 200,
            policy: ReplacementPolicy::Reservoir,
            inference_model: InferenceModel::Working,
        }
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} in [0,1], got {v}")))
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} > 0, got {v}")))
    }
}

impl VerseConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive("alpha", self.alpha)?;
        check_positive("beta", self.beta)?;
        if !(self.lambda_distill >= 0.0 && self.lambda_distill.is_finite()) {
            return Err(Error::Config(format!(
                "lambda >= 0, got {}",
                self.lambda_distill
            )));
        }
        check_unit("gamma", self.gamma)?;
        check_unit("accept_rate", self.accept_rate)?;
        if self.replay_count == 0 {
            return Err(Error::Config("replay_count >= 1, got 0".into()));
        }
        if self.buffer_capacity == 0 {
            return Err(Error::Config("buffer_capacity >= 1, got 0".into()));
        }
        Ok(())
    }
}

/// Which learner runs and with what settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    Verse(VerseConfig),
    /// One SGD step per sample, nothing else.
    Finetune {
        lr: f64,
    },
    /// One SGD step on the sample plus a rehearsal subset, then a buffer insert.
    Replay {
        lr: f64,
        replay_count: usize,
        buffer_capacity: usize,
        policy: ReplacementPolicy,
    },
}

impl LearnerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LearnerSpec::Verse(_) => "verse",
            LearnerSpec::Finetune { .. } => "finetune",
            LearnerSpec::Replay { .. } => "replay",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LearnerSpec::Verse(cfg) => cfg.validate(),
            LearnerSpec::Finetune { lr } => check_positive("lr", *lr),
            LearnerSpec::Replay {
                lr,
                replay_count,
                buffer_capacity,
                ..
            } => {
                check_positive("lr", *lr)?;
                if *replay_count == 0 || *buffer_capacity == 0 {
                    return Err(Error::Config(
                        "replay_count and buffer_capacity >= 1".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    fn memory_params(&self) -> (usize, ReplacementPolicy, f64, f64) {
        match self {
            LearnerSpec::Verse(c) => (c.buffer_capacity, c.policy, c.gamma, c.accept_rate),
            LearnerSpec::Finetune { .. } => (1, ReplacementPolicy::Reservoir, 1.0, 0.0),
            LearnerSpec::Replay {
                buffer_capacity,
                policy,
                ..
            } => (*buffer_capacity, *policy, 1.0, 0.0),
        }
    }
}

/// Everything a learner carries between steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerState {
    pub theta: ParamVector,
    pub sem: SemanticMemory,
    pub buffer: EpisodicBuffer,
    /// Number of stream samples consumed.
    pub step_count: u64,
    /// Draws the rehearsal subsets.
    pub rng: ChaCha8Rng,
}

impl LearnerState {
    pub fn new(
        theta: ParamVector,
        capacity: usize,
        policy: ReplacementPolicy,
        gamma: f64,
        accept_rate: f64,
        seed: u64,
    ) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("buffer_capacity >= 1, got 0".into()));
        }
        let sem = SemanticMemory::new(&theta, gamma, accept_rate, derive_seed(seed, &[1]))?;
        Ok(LearnerState {
            theta,
            sem,
            buffer: EpisodicBuffer::new(capacity, policy, derive_seed(seed, &[2])),
            step_count: 0,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, &[3])),
        })
    }

    fn check_sample(&self, sample: &FeatureSample) -> Result<()> {
        let shape = self.theta.shape();
        if sample.z.len() != shape.input_dim {
            return Err(Error::Dimension {
                context: "stream sample",
                expected: shape.input_dim,
                actual: sample.z.len(),
            });
        }
        if sample.y >= shape.num_classes {
            return Err(Error::Label {
                label: sample.y,
                num_classes: shape.num_classes,
            });
        }
        if sample.z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(
                "stream sample has non-finite features".into(),
            ));
        }
        Ok(())
    }
}

fn batch_of<'a, I>(samples: I, num_classes: usize) -> Result<Batch>
where
    I: IntoIterator<Item = &'a FeatureSample>,
{
    Batch::from_rows(
        samples.into_iter().map(|s| (s.z.as_slice(), s.y)),
        num_classes,
    )
}

/// `θ − α ∇CE` on the new sample joined with a rehearsal subset. `theta` is untouched.
pub fn virtual_update<R: Rng + ?Sized>(
    theta: &ParamVector,
    new_sample: &FeatureSample,
    buffer: &EpisodicBuffer,
    alpha: f64,
    replay_count: usize,
    rng: &mut R,
) -> Result<ParamVector> {
    let k = theta.shape().num_classes;
    let rehearsal = buffer.sample_subset(replay_count, rng);
    let joint = batch_of(std::iter::once(new_sample).chain(rehearsal), k)?;
    let grad = gradient(theta, &Objective::cross_entropy(&joint))?;
    axpy_update(theta, &grad, alpha)
}

/// Rehearsal plus self-distillation loss evaluated at `theta_v`:
/// `CE(F_θv(D_M)) + λ · MSE(F_Φ(D_l), F_θv(D_l))`.
pub fn composite_objective<'a>(
    memory_batch: &'a Batch,
    distill_batch: &'a Batch,
    targets: ArrayView2<'a, f64>,
    lambda: f64,
) -> Objective<'a> {
    Objective::cross_entropy(memory_batch).with_distillation(
        lambda,
        distill_batch.inputs().view(),
        targets,
    )
}

/// First-order global step: the gradient is taken at `theta_v` and applied to
/// `theta`. Returns `None` when the buffer is empty.
#[allow(clippy::too_many_arguments)]
pub fn global_update<R: Rng + ?Sized>(
    theta: &ParamVector,
    theta_v: &ParamVector,
    sem: &SemanticMemory,
    buffer: &EpisodicBuffer,
    beta: f64,
    lambda: f64,
    replay_count: usize,
    rng: &mut R,
) -> Result<Option<ParamVector>> {
    if buffer.is_empty() {
        return Ok(None);
    }
    let k = theta.shape().num_classes;
    let distill = batch_of(buffer.sample_subset(replay_count, rng), k)?;
    let memory = batch_of(buffer.sample_subset(replay_count, rng), k)?;
    let targets = sem.distill_targets(distill.inputs().view())?;
    let objective = composite_objective(&memory, &distill, targets.view(), lambda);
    let grad = gradient(theta_v, &objective)?;
    axpy_update(theta, &grad, beta).map(Some)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// `‖θ^v − θ‖` before the global step.
    pub virtual_shift: f64,
    pub global_applied: bool,
    pub semantic_updated: bool,
}

/// One iteration of the virtual-gradient learner. Errors leave `state` unchanged.
pub fn process_stream_step(
    state: &mut LearnerState,
    sample: FeatureSample,
    cfg: &VerseConfig,
) -> Result<StepReport> {
    state.check_sample(&sample)?;
    let mut rng = state.rng.clone();
    let theta_v = virtual_update(
        &state.theta,
        &sample,
        &state.buffer,
        cfg.alpha,
        cfg.replay_count,
        &mut rng,
    )?;
    let virtual_shift = state
        .theta
        .values()
        .iter()
        .zip(theta_v.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let global = global_update(
        &state.theta,
        &theta_v,
        &state.sem,
        &state.buffer,
        cfg.beta,
        cfg.lambda_distill,
        cfg.replay_count,
        &mut rng,
    )?;
    let global_applied = global.is_some();
    // Warm-up: with nothing to rehearse the virtual step is kept.
    let theta = global.unwrap_or(theta_v);
    if !theta.is_finite() {
        return Err(Error::Config(format!(
            "non-finite parameters at step {}",
            state.step_count + 1
        )));
    }

    state.theta = theta;
    state.rng = rng;
    let semantic_updated = state.sem.maybe_update(&state.theta)?;
    state.buffer.insert(sample);
    state.step_count += 1;
    Ok(StepReport {
        virtual_shift,
        global_applied,
        semantic_updated,
    })
}

/// Plain SGD on the lone sample.
pub fn finetune_step(state: &mut LearnerState, sample: FeatureSample, lr: f64) -> Result<()> {
    state.check_sample(&sample)?;
    let batch = batch_of([&sample], state.theta.shape().num_classes)?;
    let grad = gradient(&state.theta, &Objective::cross_entropy(&batch))?;
    let theta = axpy_update(&state.theta, &grad, lr)?;
    if !theta.is_finite() {
        return Err(Error::Config(
            "non-finite parameters after fine-tune step".into(),
        ));
    }
    state.theta = theta;
    state.step_count += 1;
    Ok(())
}

/// SGD on the sample joined with a rehearsal subset, then a buffer insert.
pub fn replay_step(
    state: &mut LearnerState,
    sample: FeatureSample,
    lr: f64,
    replay_count: usize,
) -> Result<()> {
    state.check_sample(&sample)?;
    let mut rng = state.rng.clone();
    let rehearsal = state.buffer.sample_subset(replay_count, &mut rng);
    let batch = batch_of(
        std::iter::once(&sample).chain(rehearsal),
        state.theta.shape().num_classes,
    )?;
    let grad = gradient(&state.theta, &Objective::cross_entropy(&batch))?;
    let theta = axpy_update(&state.theta, &grad, lr)?;
    if !theta.is_finite() {
        return Err(Error::Config(
            "non-finite parameters after replay step".into(),
        ));
    }
    state.theta = theta;
    state.rng = rng;
    state.buffer.insert(sample);
    state.step_count += 1;
    Ok(())
}

/// A learner bound to its configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Learner {
    spec: LearnerSpec,
    state: LearnerState,
}

impl Learner {
    pub fn new(spec: LearnerSpec, theta: ParamVector, seed: u64) -> Result<Self> {
        spec.validate()?;
        let (capacity, policy, gamma, accept_rate) = spec.memory_params();
        let state = LearnerState::new(theta, capacity, policy, gamma, accept_rate, seed)?;
        Ok(Learner { spec, state })
    }

    pub fn spec(&self) -> &LearnerSpec {
        &self.spec
    }

    pub fn name(&self) -> &'static str {
        self.spec.name()
    }

    pub fn state(&self) -> &LearnerState {
        &self.state
    }

    pub fn observe(&mut self, sample: FeatureSample) -> Result<()> {
        match &self.spec {
            LearnerSpec::Verse(cfg) => {
                process_stream_step(&mut self.state, sample, cfg).map(|_| ())
            }
            LearnerSpec::Finetune { lr } => finetune_step(&mut self.state, sample, *lr),
            LearnerSpec::Replay {
                lr, replay_count, ..
            } => replay_step(&mut self.state, sample, *lr, *replay_count),
        }
    }

    /// Parameters used for predictions.
    pub fn inference_params(&self) -> &ParamVector {
        match &self.spec {
            LearnerSpec::Verse(VerseConfig {
                inference_model: InferenceModel::Semantic,
                ..
            }) => self.state.sem.phi(),
            _ => &self.state.theta,
        }
    }

    /// Stable fingerprint of θ, Φ, buffer, counters and RNG states.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(&self.state).expect("state serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: Checkpoint::VERSION,
            learner: self.clone(),
        }
    }

    pub fn from_checkpoint(checkpoint: Checkpoint) -> Result<Self> {
        if checkpoint.version != Checkpoint::VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {})",
                checkpoint.version,
                Checkpoint::VERSION
            )));
        }
        checkpoint.learner.spec.validate()?;
        Ok(checkpoint.learner)
    }
}

/// Versioned snapshot of a learner that resumes bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub learner: Learner,
}

impl Checkpoint {
    pub const VERSION: u32 = 1;

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::substrate::NetworkShape;

    fn shape() -> NetworkShape {
        NetworkShape::new(3, vec![6], 3).unwrap()
    }

    fn sample(t: u64) -> FeatureSample {
        let x = t as f64;
        FeatureSample {
            z: vec![(x * 0.7).sin(), (x * 1.3).cos(), 0.1 * (t % 5) as f64],
            y: (t % 3) as usize,
            stream_index: t,
            instance_id: t / 4,
            frame_index: t % 4,
        }
    }

    fn verse_state(cfg: &VerseConfig, seed: u64) -> LearnerState {
        LearnerState::new(
            ParamVector::init(&shape(), seed),
            cfg.buffer_capacity,
            cfg.policy,
            cfg.gamma,
            cfg.accept_rate,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn zero_alpha_is_identity() {
        let theta = ParamVector::init(&shape(), 1);
        let mut buf = EpisodicBuffer::new(10, ReplacementPolicy::Reservoir, 0);
        for t in 0..5 {
            buf.insert(sample(t));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = virtual_update(&theta, &sample(9), &buf, 0.0, 4, &mut rng).unwrap();
        assert_eq!(out, theta);
    }

    #[test]
    fn empty_buffer_virtual_step_is_plain_sgd() {
        let theta = ParamVector::init(&shape(), 1);
        let buf = EpisodicBuffer::new(10, ReplacementPolicy::Reservoir, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample(2);
        let out = virtual_update(&theta, &s, &buf, 0.05, 16, &mut rng).unwrap();
        let batch = Batch::from_rows([(s.z.as_slice(), s.y)], 3).unwrap();
        let g = gradient(&theta, &Objective::cross_entropy(&batch)).unwrap();
        assert_eq!(out, axpy_update(&theta, &g, 0.05).unwrap());
    }

    #[test]
    fn global_update_edge_cases() {
        let cfg = VerseConfig::default();
        let state = verse_state(&cfg, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let theta_v = ParamVector::init(&shape(), 8);
        assert!(global_update(
            &state.theta,
            &theta_v,
            &state.sem,
            &state.buffer,
            0.01,
            0.3,
            16,
            &mut rng
        )
        .unwrap()
        .is_none());

        let mut buf = EpisodicBuffer::new(50, ReplacementPolicy::Reservoir, 0);
        for t in 0..20 {
            buf.insert(sample(t));
        }
        let out = global_update(
            &state.theta,
            &theta_v,
            &state.sem,
            &buf,
            0.0,
            0.3,
            16,
            &mut rng,
        )
        .unwrap()
        .unwrap();
        assert_eq!(out, state.theta);

        // With λ = 0 the step is β ∇CE at θ^v on D_M; replay the same draws.
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = a.clone();
        let out = global_update(
            &state.theta,
            &theta_v,
            &state.sem,
            &buf,
            0.02,
            0.0,
            8,
            &mut a,
        )
        .unwrap()
        .unwrap();
        let _distill = buf.sample_subset(8, &mut b);
        let memory = batch_of(buf.sample_subset(8, &mut b), 3).unwrap();
        let g = gradient(&theta_v, &Objective::cross_entropy(&memory)).unwrap();
        assert_eq!(out, axpy_update(&state.theta, &g, 0.02).unwrap());
    }

    #[test]
    fn first_step_learns_and_stores() {
        let cfg = VerseConfig::default();
        let mut state = verse_state(&cfg, 2);
        let before = state.theta.clone();
        let s = sample(1);
        let report = process_stream_step(&mut state, s.clone(), &cfg).unwrap();
        assert!(!report.global_applied);
        assert_eq!(state.buffer.samples(), std::slice::from_ref(&s));
        let batch = Batch::from_rows([(s.z.as_slice(), s.y)], 3).unwrap();
        let g = gradient(&before, &Objective::cross_entropy(&batch)).unwrap();
        assert_eq!(state.theta, axpy_update(&before, &g, cfg.alpha).unwrap());
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn bad_sample_leaves_state_untouched() {
        let cfg = VerseConfig::default();
        let mut state = verse_state(&cfg, 2);
        for t in 0..5 {
            process_stream_step(&mut state, sample(t), &cfg).unwrap();
        }
        let snapshot = state.clone();
        let mut bad = sample(6);
        bad.z.push(1.0);
        assert!(process_stream_step(&mut state, bad, &cfg).is_err());
        assert_eq!(state, snapshot);
        let mut bad = sample(6);
        bad.y = 7;
        assert!(finetune_step(&mut state, bad.clone(), 0.1).is_err());
        assert!(replay_step(&mut state, bad, 0.1, 4).is_err());
        assert_eq!(state, snapshot);
    }

    #[test]
    fn finetune_reductions() {
        let cfg = VerseConfig::default();
        let mut state = verse_state(&cfg, 3);
        let before = state.theta.clone();
        finetune_step(&mut state, sample(1), 0.0).unwrap();
        assert_eq!(state.theta, before);

        // Fine-tune equals the warm-up path of the virtual-gradient step with α = lr.
        let mut ft = verse_state(&cfg, 3);
        let mut verse = verse_state(&cfg, 3);
        let vcfg = VerseConfig {
            alpha: 0.2,
            ..cfg.clone()
        };
        finetune_step(&mut ft, sample(4), 0.2).unwrap();
        process_stream_step(&mut verse, sample(4), &vcfg).unwrap();
        assert_eq!(ft.theta, verse.theta);
    }

    #[test]
    fn replay_with_empty_buffer_matches_finetune() {
        let cfg = VerseConfig::default();
        let mut ft = verse_state(&cfg, 3);
        let mut rp = verse_state(&cfg, 3);
        finetune_step(&mut ft, sample(4), 0.2).unwrap();
        replay_step(&mut rp, sample(4), 0.2, 16).unwrap();
        assert_eq!(ft.theta, rp.theta);
        assert_eq!(rp.buffer.len(), 1);
    }

    #[test]
    fn replay_uses_whole_small_buffer() {
        let cfg = VerseConfig::default();
        let mut rp = verse_state(&cfg, 3);
        for t in 0..4 {
            replay_step(&mut rp, sample(t), 0.1, 16).unwrap();
        }
        let before = rp.theta.clone();
        let s = sample(10);
        let all: Vec<&FeatureSample> = std::iter::once(&s).chain(rp.buffer.samples()).collect();
        let batch = batch_of(all, 3).unwrap();
        let g = gradient(&before, &Objective::cross_entropy(&batch)).unwrap();
        replay_step(&mut rp, s, 0.1, 16).unwrap();
        assert_eq!(rp.theta, axpy_update(&before, &g, 0.1).unwrap());
    }

    #[test]
    fn config_validation() {
        assert!(VerseConfig::default().validate().is_ok());
        let bad = VerseConfig {
            accept_rate: 1.5,
            ..VerseConfig::default()
        };
        assert!(bad
            .validate()
            .unwrap_err()
            .to_string()
            .contains("accept_rate in [0,1]"));
        let bad = VerseConfig {
            replay_count: 0,
            ..VerseConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn checkpoint_resumes_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let spec = LearnerSpec::Verse(VerseConfig {
            accept_rate: 0.5,
            buffer_capacity: 8,
            ..VerseConfig::default()
        });
        let mut full = Learner::new(spec, ParamVector::init(&shape(), 0), 17).unwrap();
        for t in 0..30 {
            full.observe(sample(t)).unwrap();
        }
        full.to_checkpoint().save(&path).unwrap();
        let mut resumed = Learner::from_checkpoint(Checkpoint::load(&path).unwrap()).unwrap();
        assert_eq!(resumed, full);
        for t in 30..60 {
            full.observe(sample(t)).unwrap();
            resumed.observe(sample(t)).unwrap();
        }
        assert_eq!(resumed.checksum(), full.checksum());

        let mut stale = full.to_checkpoint();
        stale.version = 99;
        assert!(Learner::from_checkpoint(stale).is_err());
    }
}
