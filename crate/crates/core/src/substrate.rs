//! Dense plastic network, its losses and hand-derived gradients.
//!
//! Parameters live in one flat `f64` vector. Layer `l` occupies a weight
//! block of `in_l * out_l` entries (row-major, `in × out`) followed by its
//! `out_l` biases. Hidden layers apply the configured activation; the output
//! layer emits raw logits.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    LeakyRelu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    0.01 * x
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed in terms of the pre-activation.
    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.01
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Architecture of the plastic multilayer perceptron.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkShape {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    #[serde(default)]
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy)]
struct LayerSpan {
    fan_in: usize,
    fan_out: usize,
    weights: usize,
    biases: usize,
}

impl NetworkShape {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Result<Self> {
        let shape = NetworkShape {
            input_dim,
            hidden_dims,
            num_classes,
            activation: Activation::default(),
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Shape(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if self.input_dim == 0 {
            return Err(Error::Shape("input_dim must be >= 1".into()));
        }
        if let Some(pos) = self.hidden_dims.iter().position(|&d| d == 0) {
            return Err(Error::Shape(format!("hidden layer {pos} has width 0")));
        }
        Ok(())
    }

    fn spans(&self) -> Vec<LayerSpan> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.num_classes);
        let mut offset = 0;
        dims.windows(2)
            .map(|w| {
                let span = LayerSpan {
                    fan_in: w[0],
                    fan_out: w[1],
                    weights: offset,
                    biases: offset + w[0] * w[1],
                };
                offset += w[0] * w[1] + w[1];
                span
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.spans()
            .iter()
            .map(|s| s.fan_in * s.fan_out + s.fan_out)
            .sum()
    }
}

/// Flat parameter set of the plastic network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    shape: NetworkShape,
}

impl ParamVector {
    pub fn zeros(shape: &NetworkShape) -> Self {
        ParamVector {
            values: vec![0.0; shape.param_count()],
            shape: shape.clone(),
        }
    }

    pub fn from_values(shape: &NetworkShape, values: Vec<f64>) -> Result<Self> {
        let expected = shape.param_count();
        if values.len() != expected {
            return Err(Error::Dimension {
                context: "parameter vector",
                expected,
                actual: values.len(),
            });
        }
        Ok(ParamVector {
            values,
            shape: shape.clone(),
        })
    }

    /// Fan-in scaled uniform weights `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, zero biases.
    pub fn init(shape: &NetworkShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamVector::zeros(shape);
        for span in shape.spans() {
            let bound = 1.0 / (span.fan_in as f64).sqrt();
            for w in &mut params.values[span.weights..span.biases] {
                *w = rng.random_range(-bound..bound);
            }
        }
        params
    }

    pub fn shape(&self) -> &NetworkShape {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub(crate) fn check_same_shape(&self, other: &ParamVector) -> Result<()> {
        if self.values.len() != other.values.len() {
            return Err(Error::Dimension {
                context: "parameter vector length",
                expected: self.values.len(),
                actual: other.values.len(),
            });
        }
        if self.shape != other.shape {
            return Err(Error::Shape(
                "parameter vectors describe different networks".into(),
            ));
        }
        Ok(())
    }

    fn weights(&self, span: LayerSpan) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape(
            (span.fan_in, span.fan_out),
            &self.values[span.weights..span.biases],
        )
        .expect("layer span matches shape")
    }

    fn biases(&self, span: LayerSpan) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.values[span.biases..span.biases + span.fan_out])
    }
}

/// Returns `params - lr * grad`.
pub fn axpy_update(params: &ParamVector, grad: &ParamVector, lr: f64) -> Result<ParamVector> {
    params.check_same_shape(grad)?;
    let values = params
        .values
        .iter()
        .zip(&grad.values)
        .map(|(p, g)| p - lr * g)
        .collect();
    Ok(ParamVector {
        values,
        shape: params.shape.clone(),
    })
}

/// Inputs and labels of a mini-batch of embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Array2<f64>,
    labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::EmptyBatch);
        }
        if inputs.nrows() != labels.len() {
            return Err(Error::Dimension {
                context: "batch labels",
                expected: inputs.nrows(),
                actual: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Label { label, num_classes });
        }
        Ok(Batch { inputs, labels })
    }

    /// Stacks `(embedding, label)` rows into a batch.
    pub fn from_rows<'a, I>(rows: I, num_classes: usize) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a [f64], usize)>,
    {
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut dim = None;
        for (z, y) in rows {
            match dim {
                None => dim = Some(z.len()),
                Some(d) if d != z.len() => {
                    return Err(Error::Dimension {
                        context: "batch row",
                        expected: d,
                        actual: z.len(),
                    })
                }
                _ => {}
            }
            data.extend_from_slice(z);
            labels.push(y);
        }
        let dim = dim.ok_or(Error::EmptyBatch)?;
        let inputs =
            Array2::from_shape_vec((labels.len(), dim), data).expect("rows have uniform width");
        Batch::new(inputs, labels, num_classes)
    }

    pub fn inputs(&self) -> &Array2<f64> {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

struct ForwardCache {
    /// Layer inputs: `acts[0]` is the batch, `acts[l]` the output of hidden layer `l - 1`.
    acts: Vec<Array2<f64>>,
    /// Pre-activations of each hidden layer.
    pres: Vec<Array2<f64>>,
    logits: Array2<f64>,
}

fn check_inputs(params: &ParamVector, inputs: &ArrayView2<'_, f64>) -> Result<()> {
    if inputs.ncols() != params.shape.input_dim {
        return Err(Error::Dimension {
            context: "network input columns",
            expected: params.shape.input_dim,
            actual: inputs.ncols(),
        });
    }
    Ok(())
}

fn forward_cached(params: &ParamVector, inputs: ArrayView2<'_, f64>) -> Result<ForwardCache> {
    check_inputs(params, &inputs)?;
    let spans = params.shape.spans();
    let activation = params.shape.activation;
    let mut acts = vec![inputs.to_owned()];
    let mut pres = Vec::with_capacity(spans.len() - 1);
    let last = spans.len() - 1;
    for (l, &span) in spans.iter().enumerate() {
        let pre = acts[l].dot(&params.weights(span)) + params.biases(span);
        if l == last {
            return Ok(ForwardCache {
                acts,
                pres,
                logits: pre,
            });
        }
        acts.push(pre.mapv(|x| activation.apply(x)));
        pres.push(pre);
    }
    unreachable!("network has an output layer")
}

/// Raw logits `n × K` of the plastic network.
pub fn forward(params: &ParamVector, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_inputs(params, &inputs)?;
    let spans = params.shape.spans();
    let activation = params.shape.activation;
    let last = spans.len() - 1;
    let mut h = inputs.to_owned();
    for (l, &span) in spans.iter().enumerate() {
        h = h.dot(&params.weights(span)) + params.biases(span);
        if l != last {
            h.mapv_inplace(|x| activation.apply(x));
        }
    }
    Ok(h)
}

fn log_softmax_row(row: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    row.mapv(|v| v - lse)
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
pub fn cross_entropy(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    if logits.nrows() == 0 {
        return Err(Error::EmptyBatch);
    }
    if logits.nrows() != labels.len() {
        return Err(Error::Dimension {
            context: "cross-entropy labels",
            expected: logits.nrows(),
            actual: labels.len(),
        });
    }
    let k = logits.ncols();
    let mut total = 0.0;
    for (row, &y) in logits.outer_iter().zip(labels) {
        if y >= k {
            return Err(Error::Label {
                label: y,
                num_classes: k,
            });
        }
        total -= log_softmax_row(row)[y];
    }
    Ok(total / labels.len() as f64)
}

/// Mean over all elements of the squared difference.
pub fn mse_logits(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<f64> {
    check_same_dims(&a, &b)?;
    if a.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let sum: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum();
    Ok(sum / a.len() as f64)
}

fn check_same_dims(a: &ArrayView2<'_, f64>, b: &ArrayView2<'_, f64>) -> Result<()> {
    if a.nrows() != b.nrows() {
        return Err(Error::Dimension {
            context: "logit rows",
            expected: a.nrows(),
            actual: b.nrows(),
        });
    }
    if a.ncols() != b.ncols() {
        return Err(Error::Dimension {
            context: "logit columns",
            expected: a.ncols(),
            actual: b.ncols(),
        });
    }
    Ok(())
}

/// One weighted term of a training objective.
#[derive(Debug, Clone, Copy)]
pub enum LossTerm<'a> {
    CrossEntropy {
        batch: &'a Batch,
        weight: f64,
    },
    /// Squared distance between the network's logits on `inputs` and fixed `targets`.
    LogitMse {
        inputs: ArrayView2<'a, f64>,
        targets: ArrayView2<'a, f64>,
        weight: f64,
    },
}

/// Weighted sum of loss terms.
#[derive(Debug, Clone, Default)]
pub struct Objective<'a> {
    terms: Vec<LossTerm<'a>>,
}

impl<'a> Objective<'a> {
    pub fn cross_entropy(batch: &'a Batch) -> Self {
        Objective {
            terms: vec![LossTerm::CrossEntropy { batch, weight: 1.0 }],
        }
    }

    pub fn logit_mse(inputs: ArrayView2<'a, f64>, targets: ArrayView2<'a, f64>) -> Self {
        Objective {
            terms: vec![LossTerm::LogitMse {
                inputs,
                targets,
                weight: 1.0,
            }],
        }
    }

    /// Adds `lambda * MSE(F(inputs), targets)`.
    pub fn with_distillation(
        mut self,
        lambda: f64,
        inputs: ArrayView2<'a, f64>,
        targets: ArrayView2<'a, f64>,
    ) -> Self {
        self.terms.push(LossTerm::LogitMse {
            inputs,
            targets,
            weight: lambda,
        });
        self
    }

    pub fn terms(&self) -> &[LossTerm<'a>] {
        &self.terms
    }
}

/// Value of the objective at `params`.
pub fn loss(params: &ParamVector, objective: &Objective<'_>) -> Result<f64> {
    let mut total = 0.0;
    for term in &objective.terms {
        total += match *term {
            LossTerm::CrossEntropy { batch, weight } => {
                weight * cross_entropy(forward(params, batch.inputs.view())?.view(), &batch.labels)?
            }
            LossTerm::LogitMse {
                inputs,
                targets,
                weight,
            } => weight * mse_logits(forward(params, inputs)?.view(), targets)?,
        };
    }
    Ok(total)
}

/// Analytic gradient of the objective at `params`.
pub fn gradient(params: &ParamVector, objective: &Objective<'_>) -> Result<ParamVector> {
    let mut grad = ParamVector::zeros(&params.shape);
    for term in &objective.terms {
        match *term {
            LossTerm::CrossEntropy { batch, weight } => {
                let cache = forward_cached(params, batch.inputs.view())?;
                let n = batch.len() as f64;
                let mut delta = cache.logits.clone();
                for (mut row, &y) in delta.outer_iter_mut().zip(&batch.labels) {
                    let log_p = log_softmax_row(row.view());
                    row.assign(&log_p.mapv(f64::exp));
                    row[y] -= 1.0;
                }
                delta /= n;
                backprop(params, &cache, delta, weight, &mut grad);
            }
            LossTerm::LogitMse {
                inputs,
                targets,
                weight,
            } => {
                let cache = forward_cached(params, inputs)?;
                check_same_dims(&cache.logits.view(), &targets)?;
                let count = cache.logits.len() as f64;
                let delta = (&cache.logits - &targets) * (2.0 / count);
                backprop(params, &cache, delta, weight, &mut grad);
            }
        }
    }
    Ok(grad)
}

/// Accumulates `weight * dL/dθ` given `delta = dL/dlogits`.
fn backprop(
    params: &ParamVector,
    cache: &ForwardCache,
    mut delta: Array2<f64>,
    weight: f64,
    grad: &mut ParamVector,
) {
    let spans = params.shape.spans();
    let activation = params.shape.activation;
    for (l, &span) in spans.iter().enumerate().rev() {
        let g_w = cache.acts[l].t().dot(&delta);
        let g_b = delta.sum_axis(Axis(0));
        let out = &mut grad.values;
        for (dst, src) in out[span.weights..span.biases].iter_mut().zip(g_w.iter()) {
            *dst += weight * src;
        }
        for (dst, src) in out[span.biases..span.biases + span.fan_out]
            .iter_mut()
            .zip(g_b.iter())
        {
            *dst += weight * src;
        }
        if l > 0 {
            let mut upstream = delta.dot(&params.weights(span).t());
            upstream.zip_mut_with(&cache.pres[l - 1], |d, &pre| {
                *d *= activation.derivative(pre)
            });
            delta = upstream;
        }
    }
}

/// Non-plastic feature extractor: a seeded random projection followed by a
/// fixed elementwise nonlinearity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenExtractor {
    projection: Array2<f64>,
    seed: u64,
    activation: Activation,
}

impl FrozenExtractor {
    /// Entries drawn i.i.d. from `N(0, 1/raw_dim)`.
    pub fn new(
        raw_dim: usize,
        embed_dim: usize,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        if raw_dim == 0 || embed_dim == 0 {
            return Err(Error::Config(
                "extractor dimensions must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (raw_dim as f64).sqrt();
        let projection = Array2::from_shape_simple_fn((raw_dim, embed_dim), || {
            let v: f64 = StandardNormal.sample(&mut rng);
            v * scale
        });
        Ok(FrozenExtractor {
            projection,
            seed,
            activation,
        })
    }

    pub fn raw_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn embed_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn projection(&self) -> &Array2<f64> {
        &self.projection
    }

    pub fn extract(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.raw_dim() {
            return Err(Error::Dimension {
                context: "extractor input",
                expected: self.raw_dim(),
                actual: raw.len(),
            });
        }
        let z = ArrayView1::from(raw).dot(&self.projection);
        Ok(z.iter().map(|&v| self.activation.apply(v)).collect())
    }
}
