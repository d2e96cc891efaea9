//! Central finite-difference gradient checking.
//!
//! Runs entirely in the caller's scalar type; in practice `f64`, where a
//! step of 1e-3 leaves plenty of headroom below the 1e-4 tolerance. A
//! coordinate whose ±h forward passes have different kink fingerprints (or
//! touch a kink within the margin) is excluded by the subgradient rule and
//! reported as skipped.

use rand::Rng;

use super::tape::{Tape, TensorId};
use super::Scalar;
use crate::error::{Error, Result};
use crate::params::{Gradients, Lease, ParameterStore};

/// One checked coordinate.
#[derive(Clone, Debug)]
pub struct CoordCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Outcome of a gradient check run.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
    /// Worst offenders, sorted by descending relative error (up to 10).
    pub worst: Vec<CoordCheck>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err <= tolerance
    }
}

/// Relative error with the denominator floored at 1 so coordinates with tiny
/// gradients are compared absolutely (finite differences with h = 1e-3 carry
/// ~1e-7 absolute truncation error, which would swamp a pure ratio there).
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Compare analytic gradients of `f` against central differences on
/// `samples` randomly chosen parameter coordinates.
///
/// `f` must be deterministic given fixed non-parameter inputs: it receives a
/// fresh tape plus a lease of `params` and returns the scalar loss id.
pub fn grad_check<E, F, R>(
    f: F,
    params: &ParameterStore<E>,
    samples: usize,
    step: f64,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    E: Scalar,
    F: Fn(&mut Tape<E>, &Lease) -> Result<TensorId>,
    R: Rng,
{
    if step <= 0.0 {
        return Err(Error::config(format!(
            "finite-difference step must be > 0, got {step}"
        )));
    }
    // analytic pass
    let mut tape = Tape::new();
    let lease = params.lease(&mut tape, None, true);
    let loss = f(&mut tape, &lease)?;
    let loss_value = tape.value(loss).item()?.as_f64();
    if !loss_value.is_finite() {
        return Err(Error::numeric(format!(
            "objective evaluated non-finite: {loss_value}"
        )));
    }
    tape.backward(loss)?;
    let analytic = Gradients::collect(&tape, &lease);

    // coordinate sampling: (param index, element index), uniform over elements
    let flat: Vec<(&String, usize)> = params.iter().map(|(n, t)| (n, t.numel())).collect();
    let total: usize = flat.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::contract("grad_check on an empty parameter store"));
    }

    let mut report = GradCheckReport {
        checked: 0,
        skipped: 0,
        max_rel_err: 0.0,
        worst: Vec::new(),
    };
    let mut all: Vec<CoordCheck> = Vec::new();

    // kink-adjacent coordinates are excluded, so keep drawing until the
    // requested number of valid checks is reached (bounded by 5x attempts)
    let mut attempts = 0usize;
    while report.checked < samples && attempts < samples * 5 {
        attempts += 1;
        let mut pick = rng.gen_range(0..total);
        let (name, index) = {
            let mut found = (flat[0].0, 0usize);
            for (n, count) in &flat {
                if pick < *count {
                    found = (n, pick);
                    break;
                }
                pick -= count;
            }
            found
        };

        let eval = |delta: f64| -> Result<(f64, (u64, bool))> {
            let mut shifted = params.clone();
            shifted.get_mut(name)?.data_mut()[index] += E::from_f64(delta);
            let mut tape = Tape::new();
            let lease = shifted.lease(&mut tape, None, false);
            let loss = f(&mut tape, &lease)?;
            let v = tape.value(loss).item()?.as_f64();
            if !v.is_finite() {
                return Err(Error::numeric(format!(
                    "objective non-finite at perturbed {name}[{index}]"
                )));
            }
            Ok((v, tape.kink_fingerprint()))
        };

        let (f_plus, fp_plus) = eval(step)?;
        let (f_minus, fp_minus) = eval(-step)?;
        if fp_plus != fp_minus || fp_plus.1 || fp_minus.1 {
            // crossed or touched an abs/relu/clamp kink: subgradient rule
            report.skipped += 1;
            continue;
        }
        let numeric = (f_plus - f_minus) / (2.0 * step);
        let a = analytic
            .get(name)
            .map(|t| t.data()[index].as_f64())
            .unwrap_or(0.0);
        let e = rel_err(a, numeric);
        report.checked += 1;
        report.max_rel_err = report.max_rel_err.max(e);
        all.push(CoordCheck {
            param: name.clone(),
            index,
            analytic: a,
            numeric,
            rel_err: e,
        });
    }

    all.sort_by(|x, y| y.rel_err.total_cmp(&x.rel_err));
    all.truncate(10);
    report.worst = all;
    Ok(report)
}
