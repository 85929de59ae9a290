//! Datasets, the synthetic sequence generator, feature-file ingestion and
//! the four single-pass stream orderings.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::FeatureSample;
use crate::substrate::FrozenExtractor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<FeatureSample>,
    pub num_classes: usize,
    pub dim: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        samples: Vec<FeatureSample>,
        num_classes: usize,
        dim: usize,
        split: Split,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be >= 2, got {num_classes}"
            )));
        }
        for s in &samples {
            if s.z.len() != dim {
                return Err(Error::Dimension {
                    context: "dataset sample",
                    expected: dim,
                    actual: s.z.len(),
                });
            }
            if s.y >= num_classes {
                return Err(Error::Label {
                    label: s.y,
                    num_classes,
                });
            }
        }
        Ok(Dataset {
            samples,
            num_classes,
            dim,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn classes(&self) -> BTreeSet<usize> {
        self.samples.iter().map(|s| s.y).collect()
    }

    /// Keeps only samples whose label is in `classes`.
    pub fn restrict(&self, classes: &BTreeSet<usize>) -> Dataset {
        Dataset {
            samples: self
                .samples
                .iter()
                .filter(|s| classes.contains(&s.y))
                .cloned()
                .collect(),
            num_classes: self.num_classes,
            dim: self.dim,
            split: self.split,
        }
    }

    /// Maps every sample through the frozen extractor.
    pub fn embed(&self, extractor: &FrozenExtractor) -> Result<Dataset> {
        let samples = self
            .samples
            .iter()
            .map(|s| {
                Ok(FeatureSample {
                    z: extractor.extract(&s.z)?,
                    ..s.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            samples,
            num_classes: self.num_classes,
            dim: extractor.embed_dim(),
            split: self.split,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetPair {
    pub train: Dataset,
    pub test: Dataset,
}

impl DatasetPair {
    pub fn embed(&self, extractor: &FrozenExtractor) -> Result<DatasetPair> {
        Ok(DatasetPair {
            train: self.train.embed(extractor)?,
            test: self.test.embed(extractor)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub instances_per_class: usize,
    pub frames_per_instance: usize,
    pub raw_dim: usize,
    /// Expected norm of each class mean.
    pub class_separation: f64,
    /// Expected distance of an instance anchor from its class mean.
    pub instance_spread: f64,
    /// Length of each random-walk step between consecutive frames.
    pub temporal_step: f64,
    /// Standard deviation of per-coordinate observation noise.
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_classes: 10,
            instances_per_class: 4,
            frames_per_instance: 200,
            raw_dim: 32,
            class_separation: 4.0,
            instance_spread: 1.0,
            temporal_step: 0.3,
            noise_scale: 0.01,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.num_classes < 2 {
            return fail(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            ));
        }
        if self.instances_per_class < 2 {
            return fail(format!(
                "instances_per_class must be >= 2 so every class has train and test instances, got {}",
                self.instances_per_class
            ));
        }
        if self.frames_per_instance == 0 || self.raw_dim == 0 {
            return fail("frames_per_instance and raw_dim must be >= 1".into());
        }
        if !(self.class_separation > 0.0) {
            return fail(format!(
                "class_separation must be > 0, got {}",
                self.class_separation
            ));
        }
        for (name, v) in [
            ("instance_spread", self.instance_spread),
            ("temporal_step", self.temporal_step),
            ("noise_scale", self.noise_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            v * scale
        })
        .collect()
}

fn unit_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v = gaussian_vec(rng, dim, 1.0);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Classes of temporally coherent sequences: each instance is a random walk
/// around its own anchor near the class mean. Whole instances are assigned to
/// either the train or test split (roughly 80/20, at least one of each per class).
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<DatasetPair> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.raw_dim;
    let norm_scale = 1.0 / (d as f64).sqrt();
    let n_test = ((cfg.instances_per_class as f64) * 0.2).round().max(1.0) as usize;

    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..cfg.num_classes {
        let mean = gaussian_vec(&mut rng, d, cfg.class_separation * norm_scale);
        let mut slots: Vec<usize> = (0..cfg.instances_per_class).collect();
        slots.shuffle(&mut rng);
        let held_out: BTreeSet<usize> = slots[..n_test].iter().copied().collect();
        for inst in 0..cfg.instances_per_class {
            let instance_id = (class * cfg.instances_per_class + inst) as u64;
            let offset = gaussian_vec(&mut rng, d, cfg.instance_spread * norm_scale);
            let mut pos: Vec<f64> = mean.iter().zip(&offset).map(|(m, o)| m + o).collect();
            let target = if held_out.contains(&inst) {
                &mut test
            } else {
                &mut train
            };
            for frame in 0..cfg.frames_per_instance {
                if frame > 0 && cfg.temporal_step > 0.0 {
                    let dir = unit_vec(&mut rng, d);
                    for (p, u) in pos.iter_mut().zip(&dir) {
                        *p += cfg.temporal_step * u;
                    }
                }
                let z = if cfg.noise_scale > 0.0 {
                    let noise = gaussian_vec(&mut rng, d, cfg.noise_scale);
                    pos.iter().zip(&noise).map(|(p, n)| p + n).collect()
                } else {
                    pos.clone()
                };
                target.push(FeatureSample {
                    z,
                    y: class,
                    stream_index: 0,
                    instance_id,
                    frame_index: frame as u64,
                });
            }
        }
    }
    Ok(DatasetPair {
        train: Dataset::new(train, cfg.num_classes, d, Split::Train)?,
        test: Dataset::new(test, cfg.num_classes, d, Split::Test)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Iid,
    ClassIid,
    Instance,
    ClassInstance,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::Iid,
        Scheme::ClassIid,
        Scheme::Instance,
        Scheme::ClassInstance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Iid => "iid",
            Scheme::ClassIid => "class_iid",
            Scheme::Instance => "instance",
            Scheme::ClassInstance => "class_instance",
        }
    }

    /// Whether every class occupies one contiguous stretch of the stream.
    pub fn is_class_contiguous(self) -> bool {
        matches!(self, Scheme::ClassIid | Scheme::ClassInstance)
    }

    pub fn is_temporally_ordered(self) -> bool {
        matches!(self, Scheme::Instance | Scheme::ClassInstance)
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.name() == s || sc.name().replace('_', "-") == s)
            .ok_or_else(|| Error::Unknown {
                kind: "scheme",
                name: s.to_string(),
            })
    }
}

/// A single-pass visiting order over the training samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamSchedule {
    pub order: Vec<usize>,
    pub scheme: Scheme,
    pub seed: u64,
}

impl StreamSchedule {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Samples in stream order with `stream_index` set to their 1-based position.
    pub fn stream<'a>(&'a self, train: &'a Dataset) -> impl Iterator<Item = FeatureSample> + 'a {
        self.order
            .iter()
            .enumerate()
            .map(move |(pos, &i)| FeatureSample {
                stream_index: pos as u64 + 1,
                ..train.samples[i].clone()
            })
    }
}

/// Indices grouped by instance, each group sorted by frame index.
fn instances_in_order(samples: &[FeatureSample], indices: &[usize]) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for &i in indices {
        groups.entry(samples[i].instance_id).or_default().push(i);
    }
    groups
        .into_values()
        .map(|mut g| {
            g.sort_by_key(|&i| samples[i].frame_index);
            g
        })
        .collect()
}

fn by_class(samples: &[FeatureSample]) -> BTreeMap<usize, Vec<usize>> {
    let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        classes.entry(s.y).or_default().push(i);
    }
    classes
}

pub fn make_schedule(train: &Dataset, scheme: Scheme, seed: u64) -> Result<StreamSchedule> {
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = &train.samples;
    let all: Vec<usize> = (0..samples.len()).collect();
    let order = match scheme {
        Scheme::Iid => {
            let mut order = all;
            order.shuffle(&mut rng);
            order
        }
        Scheme::ClassIid => {
            let mut classes: Vec<Vec<usize>> = by_class(samples).into_values().collect();
            classes.shuffle(&mut rng);
            classes
                .into_iter()
                .flat_map(|mut members| {
                    members.shuffle(&mut rng);
                    members
                })
                .collect()
        }
        Scheme::Instance => {
            let mut groups = instances_in_order(samples, &all);
            groups.shuffle(&mut rng);
            groups.concat()
        }
        Scheme::ClassInstance => {
            let mut classes: Vec<Vec<usize>> = by_class(samples).into_values().collect();
            classes.shuffle(&mut rng);
            classes
                .into_iter()
                .flat_map(|members| {
                    let mut groups = instances_in_order(samples, &members);
                    groups.shuffle(&mut rng);
                    groups.concat()
                })
                .collect()
        }
    };
    Ok(StreamSchedule {
        order,
        scheme,
        seed,
    })
}

/// Layout of a delimited feature file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFileSpec {
    pub num_classes: usize,
    pub split: Split,
    #[serde(default = "default_delimiter")]
    pub delimiter: u8,
}

fn default_delimiter() -> u8 {
    b','
}

impl FeatureFileSpec {
    pub fn new(num_classes: usize, split: Split) -> Self {
        FeatureFileSpec {
            num_classes,
            split,
            delimiter: default_delimiter(),
        }
    }
}

const FIXED_COLUMNS: [&str; 3] = ["instance_id", "frame_index", "label"];

/// Reads `instance_id, frame_index, label, f0 .. f{d-1}` rows after a header
/// row whose feature columns fix the dimension.
pub fn ingest_features(path: &Path, spec: &FeatureFileSpec) -> Result<Dataset> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(spec.delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| parse_err(1, format!("unreadable header: {e}")))?
        .clone();
    if header.len() <= FIXED_COLUMNS.len()
        || header.iter().take(3).ne(FIXED_COLUMNS.iter().copied())
    {
        return Err(parse_err(
            1,
            "header must be `instance_id,frame_index,label,f0,...`".into(),
        ));
    }
    let dim = header.len() - FIXED_COLUMNS.len();

    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != header.len() {
            return Err(parse_err(
                line,
                format!(
                    "expected {} fields ({} features), found {}",
                    header.len(),
                    dim,
                    record.len()
                ),
            ));
        }
        let int = |col: usize| -> Result<u64> {
            record[col].trim().parse::<u64>().map_err(|e| {
                parse_err(
                    line,
                    format!("{}: `{}`: {e}", FIXED_COLUMNS[col], &record[col]),
                )
            })
        };
        let instance_id = int(0)?;
        let frame_index = int(1)?;
        let label = int(2)? as usize;
        if label >= spec.num_classes {
            return Err(parse_err(
                line,
                format!(
                    "label {label} out of range for {} classes",
                    spec.num_classes
                ),
            ));
        }
        let z = record
            .iter()
            .skip(FIXED_COLUMNS.len())
            .map(|f| {
                let v: f64 = f
                    .trim()
                    .parse()
                    .map_err(|e| parse_err(line, format!("feature `{f}`: {e}")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(parse_err(line, format!("non-finite feature `{f}`")))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        samples.push(FeatureSample {
            z,
            y: label,
            stream_index: 0,
            instance_id,
            frame_index,
        });
    }
    Dataset::new(samples, spec.num_classes, dim, spec.split)
}

/// Writes the dataset in the format read by [`ingest_features`].
pub fn export_features(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>, s: String| {
        out.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
    };
    let mut header = FIXED_COLUMNS.join(",");
    for i in 0..dataset.dim {
        header.push_str(&format!(",f{i}"));
    }
    header.push('\n');
    write(&mut out, header)?;
    for s in &dataset.samples {
        let mut row = format!("{},{},{}", s.instance_id, s.frame_index, s.y);
        for v in &s.z {
            // `Display` for f64 is the shortest representation that round-trips.
            row.push_str(&format!(",{v}"));
        }
        row.push('\n');
        write(&mut out, row)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(frames: usize) -> Dataset {
        let mut samples = Vec::new();
        for class in 0..2 {
            for frame in 0..frames {
                samples.push(FeatureSample {
                    z: vec![class as f64, frame as f64],
                    y: class,
                    stream_index: 0,
                    instance_id: class as u64,
                    frame_index: frame as u64,
                });
            }
        }
        // Scramble storage order so schedules cannot rely on it.
        samples.reverse();
        Dataset::new(samples, 2, 2, Split::Train).unwrap()
    }

    #[test]
    fn class_instance_on_two_sequences() {
        let data = tiny(3);
        for seed in 0..10 {
            let sched = make_schedule(&data, Scheme::ClassInstance, seed).unwrap();
            let seq: Vec<(usize, u64)> = sched
                .order
                .iter()
                .map(|&i| (data.samples[i].y, data.samples[i].frame_index))
                .collect();
            let first = seq[0].0;
            let other = 1 - first;
            assert_eq!(
                seq,
                vec![
                    (first, 0),
                    (first, 1),
                    (first, 2),
                    (other, 0),
                    (other, 1),
                    (other, 2)
                ]
            );
        }
    }

    #[test]
    fn static_walk_without_noise() {
        let cfg = SyntheticConfig {
            temporal_step: 0.0,
            noise_scale: 0.0,
            ..SyntheticConfig::default()
        };
        let data = generate_synthetic(&cfg).unwrap();
        let mut by_instance: BTreeMap<u64, Vec<&FeatureSample>> = BTreeMap::new();
        for s in data.train.samples.iter().chain(&data.test.samples) {
            by_instance.entry(s.instance_id).or_default().push(s);
        }
        for frames in by_instance.values() {
            assert!(frames.iter().all(|f| f.z == frames[0].z));
        }
    }

    #[test]
    fn split_is_by_instance() {
        let data = generate_synthetic(&SyntheticConfig::default()).unwrap();
        let train_ids: BTreeSet<u64> = data.train.samples.iter().map(|s| s.instance_id).collect();
        let test_ids: BTreeSet<u64> = data.test.samples.iter().map(|s| s.instance_id).collect();
        assert!(train_ids.is_disjoint(&test_ids));
        assert_eq!(data.train.classes().len(), 10);
        assert_eq!(data.test.classes().len(), 10);
        assert_eq!(data.train.len(), 10 * 3 * 200);
        assert_eq!(data.test.len(), 10 * 200);
    }

    #[test]
    fn degenerate_configs_rejected() {
        let one_class = SyntheticConfig {
            num_classes: 1,
            ..SyntheticConfig::default()
        };
        assert!(generate_synthetic(&one_class).is_err());
        let no_sep = SyntheticConfig {
            class_separation: 0.0,
            ..SyntheticConfig::default()
        };
        assert!(generate_synthetic(&no_sep).is_err());
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert!("zigzag".parse::<Scheme>().is_err());
    }
}
