use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm cap over the gradients of the updated parameters.
    pub clip: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: Some(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
    step: u64,
}

/// What one update did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

/// Adaptive moment estimation restricted to an explicit active set.
///
/// Moments are created lazily, so a parameter that has never been active has
/// no optimizer state. Each parameter keeps its own step count for bias
/// correction, since groups are active on different subsets of steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    state: BTreeMap<ParamId, Moments<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            state: BTreeMap::new(),
        }
    }

    pub fn has_state(&self, pid: ParamId) -> bool {
        self.state.contains_key(&pid)
    }

    pub fn step_count(&self, pid: ParamId) -> u64 {
        self.state.get(&pid).map_or(0, |s| s.step)
    }

    /// Updates exactly `active` from the accumulated gradients, then zeroes
    /// every gradient buffer in the store.
    pub fn step(&mut self, store: &mut ParamStore<T>, active: &[ParamId]) -> Result<UpdateStats> {
        let mut sq = 0.0f64;
        for &pid in active {
            for g in store.get(pid).grad() {
                let g = g.as_f64();
                sq += g * g;
            }
        }
        let grad_norm = sq.sqrt();
        if !grad_norm.is_finite() {
            store.zero_grads();
            return Err(Error::Numerical(format!("gradient norm is {grad_norm}")));
        }
        let scale = match self.config.clip {
            Some(cap) if grad_norm > cap => cap / grad_norm,
            _ => 1.0,
        };
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one, eps, lr, scale_t) = (T::one(), T::of(c.eps), T::of(c.lr), T::of(scale));
        for &pid in active {
            let (values, grad) = store.get_mut(pid).values_and_grad_mut();
            let st = self.state.entry(pid).or_insert_with(|| Moments {
                m: vec![T::zero(); values.len()],
                v: vec![T::zero(); values.len()],
                step: 0,
            });
            st.step += 1;
            let bc1 = T::of(1.0 - c.beta1.powf(st.step as f64));
            let bc2 = T::of(1.0 - c.beta2.powf(st.step as f64));
            for i in 0..values.len() {
                let g = grad[i] * scale_t;
                st.m[i] = b1 * st.m[i] + (one - b1) * g;
                st.v[i] = b2 * st.v[i] + (one - b2) * g * g;
                let mhat = st.m[i] / bc1;
                let vhat = st.v[i] / bc2;
                values[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        store.zero_grads();
        Ok(UpdateStats {
            grad_norm,
            clipped: scale < 1.0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{ParamGroup, Tensor};

    fn store() -> (ParamStore<f64>, ParamId, ParamId) {
        let mut s = ParamStore::new();
        let a = s.add("a", ParamGroup::Base, Tensor::vector(vec![1.0, -2.0])).unwrap();
        let b = s.add("b", ParamGroup::Base, Tensor::vector(vec![3.0])).unwrap();
        (s, a, b)
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let (mut s, a, b) = store();
        s.accumulate(a, &[0.5, -0.25]);
        s.accumulate(b, &[7.0]);
        let mut opt = Adam::new(AdamConfig {
            clip: None,
            ..AdamConfig::default()
        });
        opt.step(&mut s, &[a]).unwrap();
        let v = s.get(a).values();
        assert!((v[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((v[1] - (-2.0 + 1e-3)).abs() < 1e-9);
        assert_eq!(s.get(b).values(), &[3.0]);
        assert!(!opt.has_state(b));
        assert!(s.get(b).grad().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn clipping_reports_the_raw_norm() {
        let (mut s, a, _) = store();
        s.accumulate(a, &[3.0, 4.0]);
        let mut opt = Adam::new(AdamConfig::default());
        let stats = opt.step(&mut s, &[a]).unwrap();
        assert_eq!(stats.grad_norm, 5.0);
        assert!(stats.clipped);
    }

    #[test]
    fn zero_learning_rate_is_bitwise_inert() {
        let (mut s, a, b) = store();
        let before = s.clone();
        s.accumulate(a, &[0.3, 0.1]);
        s.accumulate(b, &[-1.0]);
        let mut opt = Adam::new(AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        });
        opt.step(&mut s, &[a, b]).unwrap();
        assert_eq!(s.snapshot(&ParamGroup::Base), before.snapshot(&ParamGroup::Base));
    }

    #[test]
    fn non_finite_gradient_is_a_numerical_error() {
        let (mut s, a, _) = store();
        s.accumulate(a, &[f64::NAN, 0.0]);
        let mut opt = Adam::new(AdamConfig::default());
        assert!(matches!(opt.step(&mut s, &[a]), Err(Error::Numerical(_))));
    }
}
