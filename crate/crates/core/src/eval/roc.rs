//! ROC sweep and trapezoidal AUC.

use crate::error::{Error, Result};

/// Ordered (false-positive-rate, true-positive-rate) points from sweeping
/// the decision threshold over the distinct score values, descending, with
/// (0,0) first and (1,1) last. Tied scores advance the sweep in one step,
/// which makes the trapezoidal area equal to the Mann-Whitney statistic
/// with ties counted one half.
#[derive(Clone, Debug)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Past this many in-mask pixels scores are snapped to 256 bins before the
/// sweep, bounding the curve size on pooled full-dataset evaluations.
const QUANTIZE_ABOVE: usize = 1_000_000;

pub fn roc_auc(scores: &[f32], gt: &[u8], mask: Option<&[u8]>) -> Result<RocCurve> {
    if scores.len() != gt.len() {
        return Err(Error::contract(format!(
            "roc_auc inputs differ in length: scores {} vs gt {}",
            scores.len(),
            gt.len()
        )));
    }
    let mut pairs: Vec<(f32, bool)> = Vec::with_capacity(scores.len());
    for i in 0..scores.len() {
        if let Some(m) = mask {
            if m[i] == 0 {
                continue;
            }
        }
        if gt[i] > 1 {
            return Err(Error::contract(format!(
                "roc_auc expects binary gt, found {}",
                gt[i]
            )));
        }
        pairs.push((scores[i], gt[i] == 1));
    }
    let positives = pairs.iter().filter(|(_, l)| *l).count();
    let negatives = pairs.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::numeric(format!(
            "AUC undefined: ground truth has {positives} positive and {negatives} negative in-mask pixels; both classes are required"
        )));
    }

    if pairs.len() > QUANTIZE_ABOVE {
        for (s, _) in pairs.iter_mut() {
            *s = (*s * 255.0).round() / 255.0;
        }
    }
    // descending by score
    pairs.sort_unstable_by(|a, b| b.0.total_cmp(&a.0));

    let (p, n) = (positives as f64, negatives as f64);
    let mut points = vec![(0.0, 0.0)];
    let mut auc = 0.0;
    let (mut tp, mut fp) = (0u64, 0u64);
    let (mut prev_fpr, mut prev_tpr) = (0.0f64, 0.0f64);
    let mut i = 0;
    while i < pairs.len() {
        // advance over the whole tie group at once
        let threshold = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == threshold {
            if pairs[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (fpr, tpr) = (fp as f64 / n, tp as f64 / p);
        auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        points.push((fpr, tpr));
        (prev_fpr, prev_tpr) = (fpr, tpr);
    }
    debug_assert_eq!(points.last(), Some(&(1.0, 1.0)));
    Ok(RocCurve { points, auc })
}
