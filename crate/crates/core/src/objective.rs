//! The composite adversarial + L1 objective, decomposed into the per-network
//! training losses.
//!
//! The discriminator maximizes correct patch classification, realized as
//! bce(real, 1) + bce(fake, 0) with the fake path detached. The generator
//! minimizes the non-saturating adversarial term bce(fake, 1) (optionally
//! the literal saturating form, which has the same fixed point) plus
//! lambda * mean |y - y_hat|.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::tape::{NetTag, Tape, TensorId};
use crate::tensor::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveConfig {
    /// Weight of the L1 term.
    pub lambda: f64,
    /// Scores are clamped to [eps_log, 1 - eps_log] before any log.
    pub bce_clamp: f64,
    /// Train the generator on mean log(1 - D) instead of mean -log D.
    pub saturating: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            lambda: 10.0,
            bce_clamp: 1e-7,
            saturating: false,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(0.0 < self.bce_clamp && self.bce_clamp < 0.5) {
            return Err(Error::config(format!(
                "bce_clamp must lie in (0, 0.5), got {}",
                self.bce_clamp
            )));
        }
        Ok(())
    }
}

/// Per-step loss decomposition, one line of the training log.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub d_loss_real: f64,
    pub d_loss_fake: f64,
    pub d_loss_total: f64,
    pub g_adv_loss: f64,
    pub g_l1_loss: f64,
    pub g_total: f64,
}

impl LossReport {
    pub fn all_finite(&self) -> bool {
        [
            self.d_loss_real,
            self.d_loss_fake,
            self.d_loss_total,
            self.g_adv_loss,
            self.g_l1_loss,
            self.g_total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Which side of the binary cross entropy a score map is held against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BceTarget {
    /// -log(s): the map should look real.
    Real,
    /// -log(1-s): the map should look fake.
    Fake,
}

/// Mean |y - y_hat| over all elements; the subgradient at 0 is 0.
pub fn l1_loss<E: Scalar>(tape: &mut Tape<E>, y: TensorId, y_hat: TensorId) -> Result<TensorId> {
    let diff = tape.sub(y, y_hat)?;
    let a = tape.abs(diff)?;
    tape.mean(a)
}

/// Mean binary cross entropy of a patch score map against a constant target,
/// with scores clamped to [clamp, 1-clamp] before the log.
pub fn bce<E: Scalar>(
    tape: &mut Tape<E>,
    scores: TensorId,
    target: BceTarget,
    clamp: f64,
) -> Result<TensorId> {
    let lo = E::from_f64(clamp);
    let hi = E::from_f64(1.0 - clamp);
    let p = match target {
        BceTarget::Real => scores,
        // 1 - s, as (-s) + 1
        BceTarget::Fake => {
            let neg = tape.mul_scalar(scores, -E::one())?;
            tape.add_scalar(neg, E::one())?
        }
    };
    // the log argument itself is clamped, so the loss is bounded by -ln(clamp)
    let p = tape.clamp(p, lo, hi)?;
    let logp = tape.log(p)?;
    let nll = tape.mul_scalar(logp, -E::one())?;
    tape.mean(nll)
}

/// Discriminator training loss: bce(real, 1) + bce(fake, 0).
///
/// `fake_scores` must come from a detached candidate; if generator
/// parameters are still reachable from it, gradients would leak into the
/// generator during the discriminator phase, and the call is rejected.
pub fn discriminator_loss<E: Scalar>(
    tape: &mut Tape<E>,
    real_scores: TensorId,
    fake_scores: TensorId,
    cfg: &ObjectiveConfig,
) -> Result<DLoss> {
    if tape.shape(real_scores) != tape.shape(fake_scores) {
        return Err(Error::shape(format!(
            "score maps must match, got real {} vs fake {}",
            tape.shape(real_scores),
            tape.shape(fake_scores)
        )));
    }
    if tape.reaches_tagged_param(fake_scores, NetTag::Generator) {
        return Err(Error::contract(
            "fake scores still carry generator gradient linkage; detach the candidate before the discriminator phase",
        ));
    }
    let real = bce(tape, real_scores, BceTarget::Real, cfg.bce_clamp)?;
    let fake = bce(tape, fake_scores, BceTarget::Fake, cfg.bce_clamp)?;
    let total = tape.add(real, fake)?;
    Ok(DLoss { total, real, fake })
}

/// Handles to the discriminator loss and its two components.
#[derive(Debug)]
pub struct DLoss {
    pub total: TensorId,
    pub real: TensorId,
    pub fake: TensorId,
}

/// Generator training loss: adversarial term + lambda * L1, with handles to
/// both components (logged per step).
pub fn generator_loss<E: Scalar>(
    tape: &mut Tape<E>,
    fake_scores: TensorId,
    y: TensorId,
    y_hat: TensorId,
    cfg: &ObjectiveConfig,
) -> Result<GLoss> {
    if tape.shape(y) != tape.shape(y_hat) {
        return Err(Error::shape(format!(
            "generator_loss targets must match, got y {} vs y_hat {}",
            tape.shape(y),
            tape.shape(y_hat)
        )));
    }
    let adv = if cfg.saturating {
        // mean log(1 - s): same fixed point, gradient vanishes for a
        // confident discriminator
        let b = bce(tape, fake_scores, BceTarget::Fake, cfg.bce_clamp)?;
        tape.mul_scalar(b, -E::one())?
    } else {
        bce(tape, fake_scores, BceTarget::Real, cfg.bce_clamp)?
    };
    let l1 = l1_loss(tape, y, y_hat)?;
    let total = if cfg.lambda == 0.0 {
        // bitwise reduction to the pure adversarial loss
        adv
    } else {
        let weighted = tape.mul_scalar(l1, E::from_f64(cfg.lambda))?;
        tape.add(adv, weighted)?
    };
    Ok(GLoss { total, adv, l1 })
}

/// Handles to the generator loss and its components.
#[derive(Debug)]
pub struct GLoss {
    pub total: TensorId,
    pub adv: TensorId,
    pub l1: TensorId,
}

/// Arithmetic mean of the n patch scores: the per-image realness summary.
pub fn aggregate_patch_scores<E: Scalar>(tape: &Tape<E>, scores: TensorId) -> Result<f64> {
    let t = tape.value(scores);
    if t.numel() == 0 {
        return Err(Error::contract(
            "aggregate_patch_scores on an empty score map",
        ));
    }
    Ok(t.data().iter().map(|v| v.as_f64()).sum::<f64>() / t.numel() as f64)
}
