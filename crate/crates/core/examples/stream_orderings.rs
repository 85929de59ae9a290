//! The four stream orderings on a tiny dataset, shown as (class, instance, frame) runs.
//!
//! ```bash
//! cargo run -p verse --example stream_orderings
//! ```

use verse::{generate_synthetic, make_schedule, Scheme, SyntheticConfig};

fn main() -> verse::Result<()> {
    let pair = generate_synthetic(&SyntheticConfig {
        num_classes: 3,
        instances_per_class: 3,
        frames_per_instance: 4,
        raw_dim: 4,
        ..SyntheticConfig::default()
    })?;
    for scheme in Scheme::ALL {
        let schedule = make_schedule(&pair.train, scheme, 7)?;
        let labels: Vec<String> = schedule
            .stream(&pair.train)
            .map(|s| {
                format!(
                    "{}{}.{}",
                    s.y,
                    char::from(b'a' + (s.instance_id % 26) as u8),
                    s.frame_index
                )
            })
            .collect();
        println!("{:<15} {}", scheme.name(), labels.join(" "));
    }
    println!("(each token is class, instance letter, frame index)");
    Ok(())
}
