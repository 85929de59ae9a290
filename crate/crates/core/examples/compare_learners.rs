//! VERSE against the fine-tune and replay baselines on every stream ordering.
//!
//! ```bash
//! cargo run --release -p verse --example compare_learners -- [seeds]
//! ```

use verse::experiment::execute;
use verse::plan::{ExperimentPlan, LearnerKind};
use verse::stream::Scheme;

fn main() -> verse::Result<()> {
    let seeds: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(5);
    let plan = ExperimentPlan {
        seeds: (0..seeds).collect(),
        schemes: Scheme::ALL.to_vec(),
        learners: vec![
            LearnerKind::Verse,
            LearnerKind::Replay,
            LearnerKind::Finetune,
        ],
        report_both_models: true,
        workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        ..ExperimentPlan::default()
    };
    let output = execute(&plan)?;
    println!("median mu_all over {seeds} seeds");
    println!(
        "{:<16} {:>8} {:>10} {:>9} {:>15}",
        "learner", "iid", "class_iid", "instance", "class_instance"
    );
    for learner in ["verse", "verse:semantic", "replay", "finetune"] {
        print!("{learner:<16}");
        for (scheme, width) in Scheme::ALL.into_iter().zip([9, 11, 10, 16]) {
            let mu = output.median_mu(learner, scheme).unwrap_or(f64::NAN);
            print!("{mu:>width$.4}");
        }
        println!();
    }
    for f in &output.failures {
        eprintln!("failed: {}: {}", f.cell, f.message);
    }
    Ok(())
}
