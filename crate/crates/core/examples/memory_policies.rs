//! Reservoir against class-balanced replacement on a class-contiguous stream.
//!
//! ```bash
//! cargo run -p verse --example memory_policies
//! ```

use verse::{EpisodicBuffer, FeatureSample, ReplacementPolicy};

fn main() {
    // Class 0 dominates the stream; classes 1..4 arrive late and briefly.
    let stream = (0..2000u64).map(|t| FeatureSample {
        z: vec![t as f64],
        y: if t < 1600 {
            0
        } else {
            1 + ((t - 1600) / 100) as usize
        },
        stream_index: t + 1,
        instance_id: t,
        frame_index: 0,
    });
    let mut reservoir = EpisodicBuffer::new(50, ReplacementPolicy::Reservoir, 1);
    let mut balanced = EpisodicBuffer::new(50, ReplacementPolicy::ClassBalanced, 1);
    for s in stream {
        reservoir.insert(s.clone());
        balanced.insert(s);
    }
    for (name, buffer) in [("reservoir", &reservoir), ("class_balanced", &balanced)] {
        println!("{name:<15} {:?}", buffer.class_histogram());
    }
}
