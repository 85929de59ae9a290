//! Anytime evaluation, the normalized and absolute accuracy summaries, the
//! offline upper bound, and the line-delimited result records.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stream::{Dataset, Scheme};
use crate::substrate::{
    axpy_update, cross_entropy, forward, gradient, Batch, NetworkShape, Objective, ParamVector,
};

/// Which test samples are eligible at an evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalScope {
    All,
    Classes(BTreeSet<usize>),
}

impl EvalScope {
    fn admits(&self, y: usize) -> bool {
        match self {
            EvalScope::All => true,
            EvalScope::Classes(c) => c.contains(&y),
        }
    }
}

fn argmax(row: ndarray::ArrayView1<'_, f64>) -> usize {
    // First maximum wins, so ties go to the lowest class index.
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Fraction of eligible test samples whose argmax logit is the true label.
pub fn evaluate(params: &ParamVector, test: &Dataset, scope: &EvalScope) -> Result<f64> {
    let eligible: Vec<_> = test.samples.iter().filter(|s| scope.admits(s.y)).collect();
    if eligible.is_empty() {
        return Err(Error::EmptyEvalSet(format!("{scope:?}")));
    }
    let batch = Batch::from_rows(
        eligible.iter().map(|s| (s.z.as_slice(), s.y)),
        test.num_classes,
    )?;
    let logits = forward(params, batch.inputs().view())?;
    let correct = logits
        .outer_iter()
        .zip(batch.labels())
        .filter(|(row, &y)| argmax(row.view()) == y)
        .count();
    Ok(correct as f64 / eligible.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    /// Number of stream samples consumed before the evaluation.
    pub t: u64,
    pub seen_classes: Vec<usize>,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub learner: String,
    pub scheme: Scheme,
    pub seed: u64,
    pub eval_points: Vec<EvalPoint>,
    /// Offline accuracy aligned with `eval_points`.
    pub offline_refs: Vec<f64>,
    pub config: serde_json::Value,
}

impl RunRecord {
    pub fn accuracies(&self) -> Vec<f64> {
        self.eval_points.iter().map(|p| p.accuracy).collect()
    }

    pub fn omega_all(&self) -> Result<f64> {
        let ts: Vec<u64> = self.eval_points.iter().map(|p| p.t).collect();
        omega_all(&self.accuracies(), &self.offline_refs, &ts)
    }

    pub fn mu_all(&self) -> Result<f64> {
        mu_all(&self.accuracies())
    }
}

/// Mean over testing events of `α_t / α_offline,t`. Not clamped to 1.
pub fn omega_all(accuracies: &[f64], offline: &[f64], ts: &[u64]) -> Result<f64> {
    if accuracies.is_empty() {
        return Err(Error::EmptyRecord);
    }
    if offline.len() != accuracies.len() {
        return Err(Error::Dimension {
            context: "offline references",
            expected: accuracies.len(),
            actual: offline.len(),
        });
    }
    let mut total = 0.0;
    for (i, (&a, &o)) in accuracies.iter().zip(offline).enumerate() {
        if !(o > 0.0) {
            return Err(Error::ZeroOfflineReference {
                t: ts.get(i).copied().unwrap_or(i as u64),
            });
        }
        total += a / o;
    }
    Ok(total / accuracies.len() as f64)
}

/// Mean absolute accuracy over testing events.
pub fn mu_all(accuracies: &[f64]) -> Result<f64> {
    if accuracies.is_empty() {
        return Err(Error::EmptyRecord);
    }
    Ok(accuracies.iter().sum::<f64>() / accuracies.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OfflineConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        OfflineConfig {
            epochs: 30,
            lr: 0.05,
            batch_size: 16,
        }
    }
}

/// Shuffled mini-batch SGD over the full training split.
pub fn train_offline(
    train: &Dataset,
    shape: &NetworkShape,
    cfg: &OfflineConfig,
    seed: u64,
) -> Result<ParamVector> {
    if train.is_empty() {
        return Err(Error::Config("offline training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("offline batch_size >= 1, got 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamVector::init(shape, seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = Batch::from_rows(
                chunk
                    .iter()
                    .map(|&i| (train.samples[i].z.as_slice(), train.samples[i].y)),
                train.num_classes,
            )?;
            let objective = Objective::cross_entropy(&batch);
            epoch_loss += cross_entropy(
                forward(&params, batch.inputs().view())?.view(),
                batch.labels(),
            )?;
            params = axpy_update(&params, &gradient(&params, &objective)?, cfg.lr)?;
        }
        if !epoch_loss.is_finite() || !params.is_finite() {
            return Err(Error::Diverged { epoch });
        }
    }
    Ok(params)
}

/// Offline accuracies keyed by the set of classes seen so far. Each distinct
/// class set trains one offline model on those classes.
#[derive(Debug)]
pub struct OfflineReferences<'a> {
    train: &'a Dataset,
    test: &'a Dataset,
    shape: NetworkShape,
    cfg: OfflineConfig,
    seed: u64,
    cache: Mutex<HashMap<BTreeSet<usize>, f64>>,
}

impl<'a> OfflineReferences<'a> {
    pub fn new(
        train: &'a Dataset,
        test: &'a Dataset,
        shape: NetworkShape,
        cfg: OfflineConfig,
        seed: u64,
    ) -> Self {
        OfflineReferences {
            train,
            test,
            shape,
            cfg,
            seed,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn accuracy(&self, classes: &BTreeSet<usize>) -> Result<f64> {
        if let Some(&acc) = self.cache.lock().expect("offline cache").get(classes) {
            return Ok(acc);
        }
        let params = train_offline(
            &self.train.restrict(classes),
            &self.shape,
            &self.cfg,
            self.seed,
        )?;
        let acc = evaluate(&params, self.test, &EvalScope::Classes(classes.clone()))?;
        self.cache
            .lock()
            .expect("offline cache")
            .insert(classes.clone(), acc);
        Ok(acc)
    }
}

/// One line of `records.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalLine {
    pub learner: String,
    pub scheme: Scheme,
    pub seed: u64,
    pub t: u64,
    pub seen_classes: Vec<usize>,
    pub accuracy: f64,
}

/// One line of `summary.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryLine {
    pub learner: String,
    pub scheme: Scheme,
    pub seed: u64,
    pub mu_all: Option<f64>,
    pub omega_all: Option<f64>,
    pub error: Option<String>,
}

pub const OFFLINE_LEARNER: &str = "offline";

impl RunRecord {
    pub fn eval_lines(&self) -> impl Iterator<Item = EvalLine> + '_ {
        self.eval_points.iter().map(move |p| EvalLine {
            learner: self.learner.clone(),
            scheme: self.scheme,
            seed: self.seed,
            t: p.t,
            seen_classes: p.seen_classes.clone(),
            accuracy: p.accuracy,
        })
    }

    pub fn offline_lines(&self) -> impl Iterator<Item = EvalLine> + '_ {
        self.eval_points
            .iter()
            .zip(&self.offline_refs)
            .map(move |(p, &o)| EvalLine {
                learner: OFFLINE_LEARNER.to_string(),
                scheme: self.scheme,
                seed: self.seed,
                t: p.t,
                seen_classes: p.seen_classes.clone(),
                accuracy: o,
            })
    }

    pub fn summary(&self) -> SummaryLine {
        let (mu, omega) = (self.mu_all(), self.omega_all());
        SummaryLine {
            learner: self.learner.clone(),
            scheme: self.scheme,
            seed: self.seed,
            mu_all: mu.as_ref().ok().copied(),
            omega_all: omega.as_ref().ok().copied(),
            error: mu.err().or(omega.err()).map(|e| e.to_string()),
        }
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            message: e.to_string(),
        })?);
    }
    Ok(items)
}

/// Rebuilds per-run summaries from persisted eval lines, pairing each
/// learner curve with the offline curve of the same scheme and seed.
pub fn summarize_lines(lines: &[EvalLine]) -> Vec<SummaryLine> {
    use std::collections::BTreeMap;
    type Key = (String, Scheme, u64);
    let mut curves: BTreeMap<Key, Vec<&EvalLine>> = BTreeMap::new();
    let mut offline: HashMap<(Scheme, u64, u64), f64> = HashMap::new();
    let mut first_seen: Vec<Key> = Vec::new();
    for l in lines {
        if l.learner == OFFLINE_LEARNER {
            offline.insert((l.scheme, l.seed, l.t), l.accuracy);
            continue;
        }
        let key = (l.learner.clone(), l.scheme, l.seed);
        if !curves.contains_key(&key) {
            first_seen.push(key.clone());
        }
        curves.entry(key).or_default().push(l);
    }
    first_seen
        .into_iter()
        .map(|key| {
            let points = &curves[&key];
            let acc: Vec<f64> = points.iter().map(|p| p.accuracy).collect();
            let ts: Vec<u64> = points.iter().map(|p| p.t).collect();
            let refs: Option<Vec<f64>> = points
                .iter()
                .map(|p| offline.get(&(p.scheme, p.seed, p.t)).copied())
                .collect();
            let mu = mu_all(&acc);
            let omega = match refs {
                Some(r) => omega_all(&acc, &r, &ts),
                None => Err(Error::Config("missing offline reference lines".into())),
            };
            SummaryLine {
                learner: key.0,
                scheme: key.1,
                seed: key.2,
                mu_all: mu.as_ref().ok().copied(),
                omega_all: omega.as_ref().ok().copied(),
                error: mu.err().or(omega.err()).map(|e| e.to_string()),
            }
        })
        .collect()
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::FeatureSample;
    use crate::stream::Split;

    fn dataset(labels: &[usize], k: usize) -> Dataset {
        let samples = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| FeatureSample {
                z: vec![i as f64, 1.0],
                y,
                stream_index: 0,
                instance_id: i as u64,
                frame_index: 0,
            })
            .collect();
        Dataset::new(samples, k, 2, Split::Test).unwrap()
    }

    fn class_zero_network(k: usize) -> ParamVector {
        let shape = NetworkShape::new(2, vec![], k).unwrap();
        let mut p = ParamVector::zeros(&shape);
        let n = p.len();
        // Bias of class 0 is the first bias entry.
        p.values_mut()[n - k] = 1.0;
        p
    }

    #[test]
    fn evaluate_examples() {
        let net = class_zero_network(10);
        let all_zero = dataset(&[0; 7], 10);
        assert_eq!(evaluate(&net, &all_zero, &EvalScope::All).unwrap(), 1.0);
        let balanced: Vec<usize> = (0..50).map(|i| i % 10).collect();
        let balanced = dataset(&balanced, 10);
        assert_eq!(evaluate(&net, &balanced, &EvalScope::All).unwrap(), 0.1);
        let scope = EvalScope::Classes(BTreeSet::from([0, 1]));
        assert_eq!(evaluate(&net, &balanced, &scope).unwrap(), 0.5);
        let none = EvalScope::Classes(BTreeSet::from([42]));
        assert!(evaluate(&net, &balanced, &none).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        let shape = NetworkShape::new(2, vec![], 3).unwrap();
        let zero = ParamVector::zeros(&shape);
        let data = dataset(&[0, 1, 2], 3);
        assert!((evaluate(&zero, &data, &EvalScope::All).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn metric_examples() {
        let ts = [1, 2];
        assert_eq!(omega_all(&[0.5, 0.5], &[1.0, 1.0], &ts).unwrap(), 0.5);
        assert_eq!(omega_all(&[0.8, 0.6], &[0.8, 0.6], &ts).unwrap(), 1.0);
        let above = omega_all(&[0.96, 0.5], &[0.8, 0.5], &ts).unwrap();
        assert!(above > 1.0);
        match omega_all(&[0.5, 0.5], &[1.0, 0.0], &[10, 20]) {
            Err(Error::ZeroOfflineReference { t }) => assert_eq!(t, 20),
            other => panic!("unexpected {other:?}"),
        }
        assert!((mu_all(&[0.7, 0.7, 0.7]).unwrap() - 0.7).abs() < 1e-15);
        assert!((mu_all(&[0.2, 0.4, 0.6]).unwrap() - 0.4).abs() < 1e-15);
        assert!(mu_all(&[]).is_err());
        let a = [0.3, 0.9, 0.45];
        assert_eq!(
            mu_all(&a).unwrap(),
            omega_all(&a, &[1.0; 3], &[1, 2, 3]).unwrap()
        );
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
