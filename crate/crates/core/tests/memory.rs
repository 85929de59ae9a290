mod common;

use std::collections::BTreeMap;

use common::*;
use proptest::prelude::*;
use verse::{EpisodicBuffer, ReplacementPolicy};

#[test]
fn reservoir_inclusion_is_uniform() {
    const TRIALS: u64 = 10_000;
    const OFFERS: u64 = 1000;
    const CAPACITY: usize = 100;
    let mut hits = vec![0u32; OFFERS as usize];
    for trial in 0..TRIALS {
        let mut buffer = EpisodicBuffer::new(CAPACITY, ReplacementPolicy::Reservoir, trial);
        for i in 0..OFFERS {
            buffer.insert(labelled(i, 0));
        }
        for s in buffer.samples() {
            hits[s.stream_index as usize] += 1;
        }
    }
    let expected = CAPACITY as f64 / OFFERS as f64;
    let worst = hits
        .iter()
        .map(|&h| (h as f64 / TRIALS as f64 - expected).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 0.02, "worst deviation {worst}");
}

#[test]
fn subset_pairs_are_uniform() {
    const DRAWS: usize = 50_000;
    let mut buffer = EpisodicBuffer::new(10, ReplacementPolicy::Reservoir, 0);
    for i in 0..10 {
        buffer.insert(labelled(i, 0));
    }
    let mut rng = rng(21);
    let mut counts: BTreeMap<(u64, u64), usize> = BTreeMap::new();
    for _ in 0..DRAWS {
        let pick = buffer.sample_subset(2, &mut rng);
        assert_eq!(pick.len(), 2);
        let (a, b) = (pick[0].instance_id, pick[1].instance_id);
        assert_ne!(a, b);
        *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
    }
    assert_eq!(counts.len(), 45);
    let p = 1.0 / 45.0;
    let se = (p * (1.0 - p) / DRAWS as f64).sqrt();
    for (pair, &c) in &counts {
        let freq = c as f64 / DRAWS as f64;
        assert!((freq - p).abs() <= 3.0 * se, "pair {pair:?} freq {freq}");
    }
}

#[test]
fn subset_of_large_buffer_is_distinct() {
    let mut buffer = EpisodicBuffer::new(100, ReplacementPolicy::Reservoir, 0);
    for i in 0..100 {
        buffer.insert(labelled(i, 0));
    }
    let pick = buffer.sample_subset(16, &mut rng(3));
    let mut ids: Vec<u64> = pick.iter().map(|s| s.instance_id).collect();
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), 16);
}

#[test]
fn small_buffer_returns_everything() {
    let mut buffer = EpisodicBuffer::new(10, ReplacementPolicy::Reservoir, 0);
    for i in 0..3 {
        buffer.insert(labelled(i, 0));
    }
    assert_eq!(buffer.sample_subset(16, &mut rng(0)).len(), 3);
    let empty = EpisodicBuffer::new(10, ReplacementPolicy::Reservoir, 0);
    assert!(empty.sample_subset(16, &mut rng(0)).is_empty());
}

#[test]
fn below_capacity_keeps_arrival_order() {
    let mut buffer = EpisodicBuffer::new(5, ReplacementPolicy::Reservoir, 0);
    for i in 0..5 {
        buffer.insert(labelled(i, 0));
    }
    let ids: Vec<u64> = buffer.samples().iter().map(|s| s.instance_id).collect();
    assert_eq!(ids, vec![0, 1, 2, 3, 4]);
}

#[test]
fn class_balanced_evicts_from_largest_class() {
    let mut buffer = EpisodicBuffer::new(4, ReplacementPolicy::ClassBalanced, 0);
    for (i, y) in [0, 0, 0, 1].into_iter().enumerate() {
        buffer.insert(labelled(i as u64, y));
    }
    buffer.insert(labelled(4, 1));
    assert_eq!(buffer.class_histogram(), BTreeMap::from([(0, 2), (1, 2)]));
}

#[test]
fn histogram_counts() {
    let mut buffer = EpisodicBuffer::new(8, ReplacementPolicy::Reservoir, 0);
    assert!(buffer.class_histogram().is_empty());
    for (i, y) in [0, 0, 1].into_iter().enumerate() {
        buffer.insert(labelled(i as u64, y));
    }
    assert_eq!(buffer.class_histogram(), BTreeMap::from([(0, 2), (1, 1)]));
}

#[test]
fn class_balanced_uniform_stream_stays_balanced() {
    // Bound of 2 taken from an independent simulation of 2000 such streams.
    for seed in 0..50 {
        let mut buffer = EpisodicBuffer::new(100, ReplacementPolicy::ClassBalanced, seed);
        let mut r = rng(seed + 1000);
        for i in 0..1000 {
            buffer.insert(labelled(i, rand::Rng::random_range(&mut r, 0..10)));
        }
        let hist = buffer.class_histogram();
        let max = hist.values().max().unwrap();
        let min = hist.values().min().unwrap();
        assert_eq!(hist.len(), 10);
        assert!(max - min <= 2, "seed {seed}: {hist:?}");
    }
}

fn run_stream(
    policy: ReplacementPolicy,
    capacity: usize,
    labels: &[usize],
    seed: u64,
) -> EpisodicBuffer {
    let mut buffer = EpisodicBuffer::new(capacity, policy, seed);
    for (i, &y) in labels.iter().enumerate() {
        buffer.insert(labelled(i as u64, y));
    }
    buffer
}

fn policy() -> impl Strategy<Value = ReplacementPolicy> {
    prop_oneof![
        Just(ReplacementPolicy::Reservoir),
        Just(ReplacementPolicy::ClassBalanced)
    ]
}

proptest! {
    #[test]
    fn length_tracks_offers(
        policy in policy(),
        capacity in 1usize..30,
        labels in prop::collection::vec(0usize..5, 0..120),
        seed in any::<u64>(),
    ) {
        let mut buffer = EpisodicBuffer::new(capacity, policy, seed);
        for (i, &y) in labels.iter().enumerate() {
            buffer.insert(labelled(i as u64, y));
            prop_assert!(buffer.len() <= capacity);
            prop_assert_eq!(buffer.len() as u64, buffer.seen_count().min(capacity as u64));
        }
    }

    #[test]
    fn same_seed_same_contents(
        policy in policy(),
        capacity in 1usize..20,
        labels in prop::collection::vec(0usize..5, 0..80),
        seed in any::<u64>(),
    ) {
        let a = run_stream(policy, capacity, &labels, seed);
        let b = run_stream(policy, capacity, &labels, seed);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn class_balanced_spares_strict_minorities(
        capacity in 2usize..20,
        labels in prop::collection::vec(0usize..4, 1..80),
        seed in any::<u64>(),
    ) {
        let mut buffer = EpisodicBuffer::new(capacity, ReplacementPolicy::ClassBalanced, seed);
        for (i, &y) in labels.iter().enumerate() {
            let before = buffer.class_histogram();
            let full = buffer.len() == capacity;
            buffer.insert(labelled(i as u64, y));
            if !full {
                continue;
            }
            let max = *before.values().max().unwrap();
            let after = buffer.class_histogram();
            for (class, &count) in before.iter().filter(|(_, &c)| c < max) {
                prop_assert!(after.get(class).copied().unwrap_or(0) >= count);
            }
        }
    }
}
