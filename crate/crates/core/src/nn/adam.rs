//! Adam with per-group freezing.

use crate::nn::model::{Gradients, ModelParams, ParamGroup};
use crate::scalar::Scalar;

/// Which parameter groups an optimizer step may change, plus whether the
/// batch-norm running statistics stay fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreezeMask {
    trainable: [bool; 12],
    pub bn_stats_frozen: bool,
}

impl FreezeMask {
    pub fn all_trainable() -> Self {
        FreezeMask {
            trainable: [true; 12],
            bn_stats_frozen: false,
        }
    }

    pub fn all_frozen() -> Self {
        FreezeMask {
            trainable: [false; 12],
            bn_stats_frozen: true,
        }
    }

    /// Only the two fully connected layers train; batch-norm statistics fixed.
    pub fn head_only() -> Self {
        let mut trainable = [false; 12];
        for g in ParamGroup::ALL {
            trainable[g.index()] = g.is_head();
        }
        FreezeMask {
            trainable,
            bn_stats_frozen: true,
        }
    }

    pub fn is_trainable(&self, g: ParamGroup) -> bool {
        self.trainable[g.index()]
    }

    pub fn set_trainable(&mut self, g: ParamGroup, on: bool) {
        self.trainable[g.index()] = on;
    }

    /// True when no convolution or batch-norm parameter or statistic can
    /// change, so trunk activations are a fixed function of the input.
    pub fn trunk_frozen(&self) -> bool {
        self.bn_stats_frozen
            && ParamGroup::ALL
                .iter()
                .filter(|g| !g.is_head())
                .all(|&g| !self.trainable[g.index()])
    }

    /// Every mask entry: the 12 learnable groups followed by the running
    /// statistics, as `(name, trainable)`.
    pub fn entries(&self) -> Vec<(&'static str, bool)> {
        let mut out: Vec<_> = ParamGroup::ALL
            .iter()
            .map(|&g| (g.name(), self.trainable[g.index()]))
            .collect();
        out.push(("bn.running_stats", !self.bn_stats_frozen));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates per parameter group and the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
    pub hyper: AdamHyper,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(model: &ModelParams<T>, lr: f64) -> Self {
        let zeros = || {
            ParamGroup::ALL
                .iter()
                .map(|&g| vec![T::zero(); model.group(g).len()])
                .collect()
        };
        AdamState {
            m: zeros(),
            v: zeros(),
            t: 0,
            hyper: AdamHyper {
                lr,
                ..AdamHyper::default()
            },
        }
    }
}

/// One bias-corrected Adam update of a flat parameter buffer at step `t`
/// (1-based): `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_update<T: Scalar>(param: &mut [T], grad: &[T], m: &mut [T], v: &mut [T], t: u64, h: &AdamHyper) {
    let (b1, b2) = (T::of(h.beta1), T::of(h.beta2));
    let c1 = T::one() / (T::one() - T::of(h.beta1.powf(t as f64)));
    let c2 = T::one() / (T::one() - T::of(h.beta2.powf(t as f64)));
    let (lr, eps) = (T::of(h.lr), T::of(h.eps));
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (T::one() - b1) * g;
        v[i] = b2 * v[i] + (T::one() - b2) * g * g;
        let m_hat = m[i] * c1;
        let v_hat = v[i] * c2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Advances the step counter, then updates every trainable group. Frozen
/// groups and their moments are left untouched.
pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    mask: &FreezeMask,
) {
    state.t += 1;
    for g in ParamGroup::ALL {
        if !mask.is_trainable(g) {
            continue;
        }
        let i = g.index();
        adam_update(
            params.group_mut(g),
            grads.get(g),
            &mut state.m[i],
            &mut state.v[i],
            state.t,
            &state.hyper,
        );
    }
}
