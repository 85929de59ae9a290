//! Sweep one ablation axis on class-instance streams and print median mu_all.
//!
//! ```bash
//! cargo run --release -p verse --example ablation_sweep -- lambda 0.0,0.3,1.0
//! cargo run --release -p verse --example ablation_sweep -- buffer_capacity 50,200,800
//! ```

use verse::cli::AblationAxis;
use verse::experiment::{prepare_data, stream_cell, GridCell};
use verse::plan::{ExperimentPlan, LearnerKind};
use verse::stream::Scheme;

fn main() -> verse::Result<()> {
    let mut args = std::env::args().skip(1);
    let axis: AblationAxis = args.next().as_deref().unwrap_or("accept_rate").parse()?;
    let values = args.next().unwrap_or_else(|| "0.0,0.1,0.4".into());
    let base = ExperimentPlan::default();
    let data = prepare_data(&base)?;
    for value in values.split(',') {
        let plan = axis.apply(&base, value)?;
        let mut mus = Vec::new();
        for seed in 0..5 {
            let cell = GridCell {
                learner: LearnerKind::Verse,
                scheme: Scheme::ClassInstance,
                seed,
            };
            let run = stream_cell(&plan, &data, cell)?;
            let acc: Vec<f64> = run.primary.iter().map(|p| p.accuracy).collect();
            mus.push(verse::mu_all(&acc)?);
        }
        let median = verse::eval::median(&mus).unwrap_or(f64::NAN);
        println!("{} = {value:<6} median mu_all {median:.4}", axis.name());
    }
    Ok(())
}
