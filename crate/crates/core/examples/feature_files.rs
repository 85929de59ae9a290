//! Export embeddings to CSV feature files and run an experiment from them.
//!
//! ```bash
//! cargo run --release -p verse --example feature_files -- /tmp/verse-features
//! ```

use std::path::PathBuf;

use verse::plan::{DatasetSource, ExperimentPlan, LearnerKind};
use verse::stream::{export_features, ingest_features, FeatureFileSpec, Split};
use verse::{generate_synthetic, run_experiment, Scheme, SyntheticConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "verse-features".into()),
    );
    std::fs::create_dir_all(&dir)?;
    let config = SyntheticConfig {
        frames_per_instance: 60,
        ..SyntheticConfig::default()
    };
    let pair = generate_synthetic(&config)?;
    let (train, test) = (dir.join("train.csv"), dir.join("test.csv"));
    export_features(&pair.train, &train)?;
    export_features(&pair.test, &test)?;
    let back = ingest_features(
        &train,
        &FeatureFileSpec::new(config.num_classes, Split::Train),
    )?;
    println!(
        "wrote and re-read {} rows of width {}",
        back.len(),
        back.dim
    );

    let plan = ExperimentPlan {
        seeds: vec![0, 1, 2],
        schemes: vec![Scheme::ClassInstance],
        learners: vec![LearnerKind::Verse, LearnerKind::Replay],
        output_dir: dir.join("run"),
        dataset: DatasetSource::Files {
            train,
            test,
            num_classes: config.num_classes,
        },
        ..ExperimentPlan::default()
    };
    let output = run_experiment(&plan)?;
    for s in output.summaries() {
        println!(
            "{:<8} seed {} mu_all {:.4} omega_all {:.4}",
            s.learner,
            s.seed,
            s.mu_all.unwrap_or(f64::NAN),
            s.omega_all.unwrap_or(f64::NAN)
        );
    }
    println!("records in {}", plan.output_dir.display());
    Ok(())
}
