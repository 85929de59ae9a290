//! Streaming class-incremental lifelong learning.
//!
//! A learner sees each training example exactly once, in an order that may be
//! temporally correlated, and can be evaluated between any two steps. The
//! central learner ([`learner::process_stream_step`]) takes a provisional
//! *virtual* step on the new example plus a rehearsal subset, then moves the
//! working parameters with the gradient of a rehearsal-and-distillation loss
//! evaluated at the virtual point. A tiny episodic buffer
//! ([`memory::EpisodicBuffer`]) supplies rehearsal samples and a semantic
//! memory ([`semantic::SemanticMemory`]), a stochastically refreshed moving
//! average of the working parameters, supplies distillation targets.
//!
//! Module map:
//!
//! - [`substrate`]: the plastic MLP, losses, analytic gradients, frozen extractor
//! - [`memory`]: episodic buffer with reservoir and class-balanced replacement
//! - [`semantic`]: EMA semantic memory
//! - [`stream`]: synthetic sequences, feature files, the four stream orderings
//! - [`learner`]: the virtual-gradient learner, fine-tune and replay baselines, checkpoints
//! - [`eval`]: anytime evaluation, `mu_all` / `omega_all`, offline upper bound, records
//! - [`experiment`]: grid execution and persistence
//! - [`plan`], [`cli`]: configuration and the `verse` command line

pub mod cli;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod learner;
pub mod memory;
pub mod plan;
pub mod seed;
pub mod semantic;
pub mod stream;
pub mod substrate;

pub use error::{Error, Result};
pub use eval::{evaluate, mu_all, omega_all, train_offline, EvalScope, RunRecord};
pub use experiment::{execute, run_experiment, ExperimentOutput};
pub use learner::{
    finetune_step, global_update, process_stream_step, replay_step, virtual_update, Checkpoint,
    Learner, LearnerSpec, LearnerState, VerseConfig,
};
pub use memory::{EpisodicBuffer, FeatureSample, ReplacementPolicy};
pub use plan::{parse_plan, ExperimentPlan, LearnerKind, PlanOverrides};
pub use semantic::SemanticMemory;
pub use stream::{
    generate_synthetic, make_schedule, Dataset, Scheme, StreamSchedule, SyntheticConfig,
};
pub use substrate::{
    axpy_update, cross_entropy, forward, gradient, mse_logits, Batch, FrozenExtractor,
    NetworkShape, Objective, ParamVector,
};
