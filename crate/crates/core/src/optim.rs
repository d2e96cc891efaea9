//! Adam with bias correction and a stepped learning-rate decay schedule.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::params::{Gradients, ParameterStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    /// Initial learning rate.
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Multiplicative decay factor eta applied every `decay_every` epochs.
    pub decay_factor: f64,
    pub decay_every: u64,
    /// Recorded in run metadata verbatim; not a standard Adam parameter and
    /// not used by the update (see `beta1` for the replication escape hatch).
    pub momentum_metadata: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr0: 0.002,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            decay_factor: 0.75,
            decay_every: 50,
            momentum_metadata: 0.002,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr0 <= 0.0 {
            return Err(Error::config(format!("lr0 must be > 0, got {}", self.lr0)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must lie in [0,1), got {b}")));
            }
        }
        if self.eps <= 0.0 {
            return Err(Error::config(format!("eps must be > 0, got {}", self.eps)));
        }
        if !(0.0 < self.decay_factor && self.decay_factor <= 1.0) {
            return Err(Error::config(format!(
                "decay_factor must lie in (0,1], got {}",
                self.decay_factor
            )));
        }
        if self.decay_every == 0 {
            return Err(Error::config("decay_every must be >= 1 epoch"));
        }
        Ok(())
    }

    /// lr(epoch) = lr0 * eta^floor(epoch / decay_every); pure in (epoch, cfg)
    /// so the schedule is recomputable from the log at any point.
    pub fn lr_at_epoch(&self, epoch: u64) -> f64 {
        self.lr0 * self.decay_factor.powi((epoch / self.decay_every) as i32)
    }
}

/// First/second moment estimates mirroring a ParameterStore, plus the step
/// counter and the current learning rate.
#[derive(Clone, Debug)]
pub struct AdamState<E: Scalar> {
    m: IndexMap<String, Tensor<E>>,
    v: IndexMap<String, Tensor<E>>,
    pub t: u64,
    pub lr: f64,
}

impl<E: Scalar> AdamState<E> {
    pub fn new(params: &ParameterStore<E>, cfg: &AdamConfig) -> Self {
        let zeros = |p: &ParameterStore<E>| {
            p.iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
                .collect()
        };
        AdamState {
            m: zeros(params),
            v: zeros(params),
            t: 0,
            lr: cfg.lr0,
        }
    }

    pub fn moments(&self) -> impl Iterator<Item = (&String, &Tensor<E>, &Tensor<E>)> {
        self.m.iter().map(|(k, m)| (k, m, &self.v[k]))
    }

    /// Rebuild from checkpointed moment tensors; names must mirror `params`.
    pub fn from_parts(
        params: &ParameterStore<E>,
        m: IndexMap<String, Tensor<E>>,
        v: IndexMap<String, Tensor<E>>,
        t: u64,
        lr: f64,
    ) -> Result<Self> {
        for (name, tensor) in params.iter() {
            for (label, map) in [("first", &m), ("second", &v)] {
                let got = map.get(name).ok_or_else(|| {
                    Error::data(format!(
                        "checkpoint misses {label}-moment tensor for '{name}'"
                    ))
                })?;
                if got.shape() != tensor.shape() {
                    return Err(Error::data(format!(
                        "checkpoint {label}-moment for '{name}' has shape {}, parameter has {}",
                        got.shape(),
                        tensor.shape()
                    )));
                }
            }
        }
        if m.len() != params.len() || v.len() != params.len() {
            return Err(Error::data(
                "checkpoint moment count does not match parameter count",
            ));
        }
        Ok(AdamState { m, v, t, lr })
    }
}

/// One bias-corrected Adam step over every parameter. Consumes the gradient
/// set; every parameter must have a gradient entry.
pub fn adam_step<E: Scalar>(
    params: &mut ParameterStore<E>,
    grads: Gradients<E>,
    state: &mut AdamState<E>,
    cfg: &AdamConfig,
) -> Result<()> {
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    let beta1 = E::from_f64(cfg.beta1);
    let beta2 = E::from_f64(cfg.beta2);
    let one_m_beta1 = E::from_f64(1.0 - cfg.beta1);
    let one_m_beta2 = E::from_f64(1.0 - cfg.beta2);
    let inv_bc1 = E::from_f64(1.0 / bc1);
    let inv_bc2 = E::from_f64(1.0 / bc2);
    let lr = E::from_f64(state.lr);
    let eps = E::from_f64(cfg.eps);

    for (name, theta) in params.iter_mut() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::contract(format!("missing gradient for parameter '{name}'")))?;
        if g.shape() != theta.shape() {
            return Err(Error::contract(format!(
                "gradient shape {} does not match parameter '{name}' shape {}",
                g.shape(),
                theta.shape()
            )));
        }
        let m = &mut state.m[name];
        let v = &mut state.v[name];
        for i in 0..theta.numel() {
            let gi = g.data()[i];
            let mi = beta1 * m.data()[i] + one_m_beta1 * gi;
            let vi = beta2 * v.data()[i] + one_m_beta2 * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi * inv_bc1;
            let v_hat = vi * inv_bc2;
            theta.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Apply the stepped decay schedule for the given epoch.
pub fn apply_lr_decay<E: Scalar>(state: &mut AdamState<E>, cfg: &AdamConfig, epoch: u64) {
    state.lr = cfg.lr_at_epoch(epoch);
}
