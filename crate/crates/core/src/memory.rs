//! Tiny episodic memory: a fixed-capacity store of feature embeddings.

use std::collections::BTreeMap;

use rand::seq::{index, IndexedRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A frozen embedding with its label and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSample {
    pub z: Vec<f64>,
    pub y: usize,
    /// Stream position at which the sample arrived (0 until it is streamed).
    pub stream_index: u64,
    /// Source sequence the sample was taken from.
    pub instance_id: u64,
    /// Position within its source sequence.
    pub frame_index: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplacementPolicy {
    Reservoir,
    ClassBalanced,
}

impl std::str::FromStr for ReplacementPolicy {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reservoir" => Ok(ReplacementPolicy::Reservoir),
            "class_balanced" | "class-balanced" => Ok(ReplacementPolicy::ClassBalanced),
            other => Err(crate::Error::Unknown {
                kind: "replacement policy",
                name: other.to_string(),
            }),
        }
    }
}

impl std::fmt::Display for ReplacementPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReplacementPolicy::Reservoir => "reservoir",
            ReplacementPolicy::ClassBalanced => "class_balanced",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodicBuffer {
    capacity: usize,
    samples: Vec<FeatureSample>,
    seen_count: u64,
    policy: ReplacementPolicy,
    rng: ChaCha8Rng,
}

impl EpisodicBuffer {
    /// # Panics
    /// If `capacity` is zero.
    pub fn new(capacity: usize, policy: ReplacementPolicy, seed: u64) -> Self {
        assert!(capacity > 0, "episodic buffer capacity must be positive");
        EpisodicBuffer {
            capacity,
            samples: Vec::with_capacity(capacity),
            seen_count: 0,
            policy,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn seen_count(&self) -> u64 {
        self.seen_count
    }

    pub fn policy(&self) -> ReplacementPolicy {
        self.policy
    }

    pub fn samples(&self) -> &[FeatureSample] {
        &self.samples
    }

    /// Offers a sample to the buffer. Below capacity it is always kept.
    pub fn insert(&mut self, sample: FeatureSample) {
        self.seen_count += 1;
        if self.samples.len() < self.capacity {
            self.samples.push(sample);
            return;
        }
        match self.policy {
            ReplacementPolicy::Reservoir => {
                // Keep with probability capacity / seen_count.
                let slot = self.rng.random_range(0..self.seen_count);
                if (slot as usize) < self.capacity {
                    self.samples[slot as usize] = sample;
                }
            }
            ReplacementPolicy::ClassBalanced => {
                let hist = self.class_histogram();
                let max = *hist.values().max().expect("full buffer is nonempty");
                let tied: Vec<usize> = hist
                    .iter()
                    .filter(|(_, &c)| c == max)
                    .map(|(&k, _)| k)
                    .collect();
                let victim_class = *tied.choose(&mut self.rng).expect("at least one class");
                let residents: Vec<usize> = self
                    .samples
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| s.y == victim_class)
                    .map(|(i, _)| i)
                    .collect();
                let slot = *residents.choose(&mut self.rng).expect("class is resident");
                self.samples[slot] = sample;
            }
        }
    }

    /// Uniform draw without replacement of `min(count, len)` residents.
    pub fn sample_subset<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<&FeatureSample> {
        let amount = count.min(self.samples.len());
        if amount == self.samples.len() {
            return self.samples.iter().collect();
        }
        index::sample(rng, self.samples.len(), amount)
            .into_iter()
            .map(|i| &self.samples[i])
            .collect()
    }

    pub fn class_histogram(&self) -> BTreeMap<usize, usize> {
        let mut hist = BTreeMap::new();
        for s in &self.samples {
            *hist.entry(s.y).or_insert(0) += 1;
        }
        hist
    }
}
