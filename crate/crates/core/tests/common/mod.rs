#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use verse::substrate::{loss, Activation, Batch, NetworkShape, Objective, ParamVector};
use verse::FeatureSample;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn sample(z: Vec<f64>, y: usize) -> FeatureSample {
    FeatureSample {
        z,
        y,
        stream_index: 0,
        instance_id: 0,
        frame_index: 0,
    }
}

pub fn labelled(id: u64, y: usize) -> FeatureSample {
    FeatureSample {
        z: vec![id as f64],
        y,
        stream_index: id,
        instance_id: id,
        frame_index: 0,
    }
}

pub fn random_shape(rng: &mut ChaCha8Rng) -> NetworkShape {
    let input = rng.random_range(1..=6);
    let depth = rng.random_range(0..=2);
    let hidden = (0..depth).map(|_| rng.random_range(1..=6)).collect();
    let classes = rng.random_range(2..=5);
    let activation = match rng.random_range(0..3) {
        0 => Activation::Relu,
        1 => Activation::LeakyRelu,
        _ => Activation::Tanh,
    };
    NetworkShape::new(input, hidden, classes)
        .unwrap()
        .with_activation(activation)
}

pub fn random_params(shape: &NetworkShape, rng: &mut ChaCha8Rng) -> ParamVector {
    let values = (0..shape.param_count())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    ParamVector::from_values(shape, values).unwrap()
}

pub fn random_inputs(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-2.0..2.0))
}

pub fn random_batch(shape: &NetworkShape, rows: usize, rng: &mut ChaCha8Rng) -> Batch {
    let inputs = random_inputs(rows, shape.input_dim, rng);
    let labels = (0..rows)
        .map(|_| rng.random_range(0..shape.num_classes))
        .collect();
    Batch::new(inputs, labels, shape.num_classes).unwrap()
}

/// Central differences of the objective, one coordinate at a time.
pub fn numeric_gradient(params: &ParamVector, objective: &Objective<'_>, h: f64) -> Vec<f64> {
    let mut probe = params.clone();
    (0..params.len())
        .map(|i| {
            let base = params.values()[i];
            probe.values_mut()[i] = base + h;
            let up = loss(&probe, objective).unwrap();
            probe.values_mut()[i] = base - h;
            let down = loss(&probe, objective).unwrap();
            probe.values_mut()[i] = base;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - n| / max(|a|, |n|, floor)` maximised over coordinates.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn median(values: &[f64]) -> f64 {
    verse::eval::median(values).expect("nonempty")
}
