//! Stop a learner halfway, save it, reload it and finish: the result matches
//! an uninterrupted run bit for bit.
//!
//! ```bash
//! cargo run --release -p verse --example checkpoint_resume
//! ```

use verse::experiment::prepare_data;
use verse::plan::{ExperimentPlan, LearnerKind};
use verse::{make_schedule, Checkpoint, Learner, ParamVector, Scheme};

fn main() -> verse::Result<()> {
    let plan = ExperimentPlan::default();
    let data = prepare_data(&plan)?;
    let schedule = make_schedule(&data.train, Scheme::ClassInstance, 1)?;
    let samples: Vec<_> = schedule.stream(&data.train).collect();
    let spec = plan.learner_spec(LearnerKind::Verse, Scheme::ClassInstance);
    let fresh = || Learner::new(spec.clone(), ParamVector::init(&data.shape, 2), 3);

    let mut straight = fresh()?;
    for s in &samples {
        straight.observe(s.clone())?;
    }

    let half = samples.len() / 2;
    let mut first = fresh()?;
    for s in &samples[..half] {
        first.observe(s.clone())?;
    }
    let path = std::env::temp_dir().join("verse-checkpoint.json");
    first.to_checkpoint().save(&path)?;
    let mut resumed = Learner::from_checkpoint(Checkpoint::load(&path)?)?;
    for s in &samples[half..] {
        resumed.observe(s.clone())?;
    }
    println!("checkpoint after {half} steps at {}", path.display());
    println!("uninterrupted {}", straight.checksum());
    println!("resumed       {}", resumed.checksum());
    println!("identical: {}", straight == resumed);
    Ok(())
}
