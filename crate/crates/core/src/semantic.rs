//! Semantic memory: a shadow copy of the plastic network that tracks the
//! working parameters through a stochastically gated moving average.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::substrate::{forward, ParamVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticMemory {
    phi: ParamVector,
    gamma: f64,
    accept_rate: f64,
    rng: ChaCha8Rng,
}

impl SemanticMemory {
    /// Starts as a copy of the working parameters.
    pub fn new(theta: &ParamVector, gamma: f64, accept_rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Config(format!("gamma in [0,1], got {gamma}")));
        }
        if !(0.0..=1.0).contains(&accept_rate) {
            return Err(Error::Config(format!(
                "accept_rate in [0,1], got {accept_rate}"
            )));
        }
        Ok(SemanticMemory {
            phi: theta.clone(),
            gamma,
            accept_rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn phi(&self) -> &ParamVector {
        &self.phi
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn accept_rate(&self) -> f64 {
        self.accept_rate
    }

    /// Draws `u ~ U(0,1)`; when `u < r` moves `phi` to `gamma * phi + (1 - gamma) * theta`.
    pub fn maybe_update(&mut self, theta: &ParamVector) -> Result<bool> {
        self.phi.check_same_shape(theta)?;
        let u: f64 = self.rng.random();
        if u >= self.accept_rate {
            return Ok(false);
        }
        let (g, h) = (self.gamma, 1.0 - self.gamma);
        for (p, &t) in self.phi.values_mut().iter_mut().zip(theta.values()) {
            let blended = g * *p + h * t;
            // Rounding can land one ulp outside the segment.
            *p = blended.clamp(p.min(t), p.max(t));
        }
        Ok(true)
    }

    /// Logits of the semantic network, used as distillation targets.
    pub fn distill_targets(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        forward(&self.phi, inputs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::substrate::NetworkShape;
    use ndarray::array;

    fn scalar_params(v: f64) -> ParamVector {
        // 1-input 2-class linear net has 4 parameters; only the first is probed.
        let shape = NetworkShape::new(1, vec![], 2).unwrap();
        ParamVector::from_values(&shape, vec![v, 0.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn zero_rate_never_moves() {
        let theta = ParamVector::init(&NetworkShape::new(3, vec![4], 2).unwrap(), 1);
        let mut sem = SemanticMemory::new(&theta, 0.5, 0.0, 3).unwrap();
        let other = ParamVector::init(theta.shape(), 2);
        for _ in 0..500 {
            assert!(!sem.maybe_update(&other).unwrap());
        }
        assert_eq!(sem.phi(), &theta);
    }

    #[test]
    fn copy_when_gamma_zero() {
        let theta = ParamVector::init(&NetworkShape::new(3, vec![4], 2).unwrap(), 1);
        let target = ParamVector::init(theta.shape(), 9);
        let mut sem = SemanticMemory::new(&theta, 0.0, 1.0, 3).unwrap();
        assert!(sem.maybe_update(&target).unwrap());
        assert_eq!(sem.phi(), &target);
    }

    #[test]
    fn ema_arithmetic() {
        let mut sem = SemanticMemory::new(&scalar_params(1.0), 0.9, 1.0, 0).unwrap();
        sem.maybe_update(&scalar_params(0.0)).unwrap();
        assert_eq!(sem.phi().values()[0], 0.9);
    }

    #[test]
    fn gamma_one_keeps_phi() {
        let theta = ParamVector::init(&NetworkShape::new(3, vec![4], 2).unwrap(), 1);
        let target = ParamVector::init(theta.shape(), 9);
        let mut sem = SemanticMemory::new(&theta, 1.0, 1.0, 3).unwrap();
        assert!(sem.maybe_update(&target).unwrap());
        assert_eq!(sem.phi(), &theta);
    }

    #[test]
    fn rejects_bad_rates_and_shapes() {
        let theta = scalar_params(0.0);
        assert!(SemanticMemory::new(&theta, 1.5, 0.1, 0).is_err());
        let err = SemanticMemory::new(&theta, 0.9, -0.1, 0).unwrap_err();
        assert!(err.to_string().contains("accept_rate in [0,1]"));
        let mut sem = SemanticMemory::new(&theta, 0.9, 1.0, 0).unwrap();
        let wrong = ParamVector::zeros(&NetworkShape::new(2, vec![], 2).unwrap());
        assert!(sem.maybe_update(&wrong).is_err());
    }

    #[test]
    fn targets_match_initial_model() {
        let theta = ParamVector::init(&NetworkShape::new(2, vec![5], 3).unwrap(), 4);
        let mut sem = SemanticMemory::new(&theta, 0.9, 0.0, 0).unwrap();
        let x = array![[0.5, -1.0], [2.0, 0.25]];
        let expected = forward(&theta, x.view()).unwrap();
        assert_eq!(sem.distill_targets(x.view()).unwrap(), expected);
        let moved = ParamVector::init(theta.shape(), 5);
        for _ in 0..20 {
            sem.maybe_update(&moved).unwrap();
        }
        assert_eq!(sem.distill_targets(x.view()).unwrap(), expected);
    }
}
