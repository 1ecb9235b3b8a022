use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autograd::GradientSet;
use crate::error::{Error, Result};
use crate::layers::Sequential;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.0005,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr < 1.0) {
            return Err(Error::Config(format!(
                "lr must lie in (0, 1), got {}",
                self.lr
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("Adam eps must be positive".into()));
        }
        Ok(())
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Real> {
    pub config: AdamConfig,
    pub t: u64,
    pub m: BTreeMap<String, Tensor<T>>,
    pub v: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One bias-corrected update of every parameter that has a gradient:
    /// `m ← β1·m + (1−β1)·g`, `v ← β2·v + (1−β2)·g²`,
    /// `p ← p − lr·m̂ / (√v̂ + eps)`.
    ///
    /// Nothing is modified when any gradient is non-finite.
    pub fn step<'a, I>(&mut self, params: I, grads: &GradientSet<T>) -> Result<()>
    where
        I: IntoIterator<Item = (String, &'a mut Tensor<T>)>,
    {
        let params: Vec<_> = params
            .into_iter()
            .filter(|(name, _)| grads.get(name).is_some())
            .collect();
        for (name, p) in &params {
            let g = grads.get(name).expect("filtered above");
            if g.shape() != p.shape() {
                return Err(Error::Shape(format!(
                    "{name}: gradient {:?} vs parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }
        self.t += 1;
        let c = self.config;
        let correct1 = 1.0 - c.beta1.powi(self.t as i32);
        let correct2 = 1.0 - c.beta2.powi(self.t as i32);
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
        let (c1, c2) = (T::from_f64(correct1), T::from_f64(correct2));
        let (lr, eps) = (T::from_f64(c.lr), T::from_f64(c.eps));
        for (name, p) in params {
            let g = grads.get(&name).expect("filtered above").data();
            let m = self.m.entry(name.clone()).or_insert_with(|| p.zeros_like());
            let v = self.v.entry(name).or_insert_with(|| p.zeros_like());
            let (m, v, p) = (m.data_mut(), v.data_mut(), p.data_mut());
            for i in 0..p.len() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Applies one Adam update to the trainable parameters of `model`.
pub fn adam_step<T: Real>(
    model: &mut Sequential<T>,
    grads: &GradientSet<T>,
    state: &mut AdamState<T>,
) -> Result<()> {
    state.step(model.parameters_mut(), grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(name: &str, g: Tensor<f64>) -> GradientSet<f64> {
        let mut set = GradientSet::default();
        set.insert(name, g);
        set
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let mut state = AdamState::new(AdamConfig::default());
        state
            .step(
                [("p".to_string(), &mut p)],
                &single("p", Tensor::zeros(&[3]).unwrap()),
            )
            .unwrap();
        assert_eq!(p, before);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr_sign() {
        let mut p = Tensor::from_vec(&[3], vec![0.0, 0.0, 0.0]).unwrap();
        let mut state = AdamState::new(AdamConfig::default());
        let g = Tensor::from_vec(&[3], vec![0.3, -2.0, 1e-3]).unwrap();
        state
            .step([("p".to_string(), &mut p)], &single("p", g.clone()))
            .unwrap();
        for (pi, gi) in p.data().iter().zip(g.data().iter()) {
            let want = -0.0005 * gi.signum();
            assert!((pi - want).abs() < 1e-8, "{pi} vs {want}");
        }
    }

    #[test]
    fn rejects_non_finite_without_mutation() {
        let mut a = Tensor::full(&[2], 1.0).unwrap();
        let mut b = Tensor::full(&[2], 1.0).unwrap();
        let mut grads = single("a", Tensor::full(&[2], 0.1).unwrap());
        grads.insert(
            "b",
            Tensor::from_vec(&[2], vec![0.1, f64::INFINITY]).unwrap(),
        );
        let mut state = AdamState::new(AdamConfig::default());
        let err = state
            .step(
                [("a".to_string(), &mut a), ("b".to_string(), &mut b)],
                &grads,
            )
            .unwrap_err();
        assert!(err.to_string().contains('b'));
        assert_eq!(a.data()[0], 1.0);
        assert_eq!(state.t, 0);
        assert!(state.m.is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(AdamConfig::default().validate().is_ok());
        assert!(AdamConfig {
            lr: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(AdamConfig {
            beta1: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
