//! Stream the default synthetic dataset through VERSE once and print the
//! accuracy curve at each class boundary.
//!
//! ```bash
//! cargo run --release -p verse --example quickstart
//! ```

use verse::experiment::{prepare_data, stream_cell, GridCell};
use verse::plan::{ExperimentPlan, LearnerKind};
use verse::stream::Scheme;

fn main() -> verse::Result<()> {
    let plan = ExperimentPlan::default();
    let data = prepare_data(&plan)?;
    println!(
        "{} training and {} test embeddings of width {}",
        data.train.len(),
        data.test.len(),
        data.train.dim
    );
    let cell = GridCell {
        learner: LearnerKind::Verse,
        scheme: Scheme::ClassInstance,
        seed: 0,
    };
    let run = stream_cell(&plan, &data, cell)?;
    println!("{:>6} {:>6} {:>9}", "t", "seen", "accuracy");
    for p in &run.primary {
        println!("{:>6} {:>6} {:>9.4}", p.t, p.seen_classes.len(), p.accuracy);
    }
    let acc: Vec<f64> = run.primary.iter().map(|p| p.accuracy).collect();
    println!("mu_all = {:.4}", verse::mu_all(&acc)?);
    Ok(())
}
