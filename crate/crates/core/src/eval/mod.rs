//! Quantitative evaluation: confusion counts, Acc/Se/Sp, ROC/AUC, Otsu
//! binarization, and report/image emission.
//!
//! Vessel pixels are the positive class; when a field-of-view mask is given,
//! only mask==1 pixels count.

mod otsu;
mod report;
mod roc;

pub use otsu::{otsu_from_histogram, otsu_threshold, OtsuResult};
pub use report::{
    append_report_row, binary_to_map, emit_outputs, evaluate_dirs, prob_to_map, quantize_prob,
    write_report, EvalSummary,
};
pub use roc::{roc_auc, RocCurve};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

/// Count TP/FP/TN/FN over mask==1 pixels (the entire image without a mask).
pub fn confusion(pred: &[u8], gt: &[u8], mask: Option<&[u8]>) -> Result<ConfusionCounts> {
    if pred.len() != gt.len() {
        return Err(Error::contract(format!(
            "confusion inputs differ in length: pred {} vs gt {}",
            pred.len(),
            gt.len()
        )));
    }
    if let Some(m) = mask {
        if m.len() != gt.len() {
            return Err(Error::contract(format!(
                "mask length {} does not match gt {}",
                m.len(),
                gt.len()
            )));
        }
    }
    let mut c = ConfusionCounts::default();
    for i in 0..gt.len() {
        let (p, g) = (pred[i], gt[i]);
        if p > 1 || g > 1 {
            return Err(Error::contract(format!(
                "confusion expects binary inputs, found pred={p} gt={g} at index {i}"
            )));
        }
        if let Some(m) = mask {
            if m[i] == 0 {
                continue;
            }
        }
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 0) => c.tn += 1,
            (0, 1) => c.fn_ += 1,
            _ => unreachable!(),
        }
    }
    Ok(c)
}

/// Scalar metrics with degenerate-denominator flags. A metric whose
/// denominator is empty is reported as 1.0 with its flag set, keeping
/// aggregate rows computable while preserving the signal.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub se: f64,
    pub sp: f64,
    pub se_degenerate: bool,
    pub sp_degenerate: bool,
}

/// acc = (TP+TN)/total, se = TP/(TP+FN), sp = TN/(TN+FP).
pub fn metrics(counts: &ConfusionCounts) -> Result<Metrics> {
    let total = counts.total();
    if total == 0 {
        return Err(Error::contract("metrics on zero evaluated pixels"));
    }
    let acc = (counts.tp + counts.tn) as f64 / total as f64;
    let (se, se_degenerate) = ratio_or_flag(counts.tp, counts.tp + counts.fn_);
    let (sp, sp_degenerate) = ratio_or_flag(counts.tn, counts.tn + counts.fp);
    Ok(Metrics {
        acc,
        se,
        sp,
        se_degenerate,
        sp_degenerate,
    })
}

fn ratio_or_flag(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (1.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Classify score > threshold as vessel.
pub fn binarize(scores: &[f32], threshold: f64) -> Vec<u8> {
    scores
        .iter()
        .map(|&s| (s as f64 > threshold) as u8)
        .collect()
}

/// One report row: counts, metrics, AUC, the threshold used, and flags.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsRow {
    pub id: String,
    pub counts: ConfusionCounts,
    pub acc: f64,
    pub se: f64,
    pub sp: f64,
    pub auc: Option<f64>,
    pub threshold: f64,
    pub se_degenerate: bool,
    pub sp_degenerate: bool,
    pub auc_degenerate: bool,
    pub threshold_degenerate: bool,
}

/// How the binarization threshold is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ThresholdMode {
    Otsu,
    Fixed(f64),
}

/// Evaluate one probability map against a binary ground truth.
pub fn evaluate_map(
    id: &str,
    scores: &[f32],
    gt: &[u8],
    mask: Option<&[u8]>,
    mode: ThresholdMode,
) -> Result<MetricsRow> {
    let (threshold, threshold_degenerate) = match mode {
        ThresholdMode::Fixed(t) => (t, false),
        ThresholdMode::Otsu => {
            let r = otsu_threshold(scores, mask)?;
            (r.threshold, r.degenerate)
        }
    };
    let pred = binarize(scores, threshold);
    let counts = confusion(&pred, gt, mask)?;
    let m = metrics(&counts)?;
    let (auc, auc_degenerate) = match roc_auc(scores, gt, mask) {
        Ok(curve) => (Some(curve.auc), false),
        Err(Error::Numeric(_)) => (None, true),
        Err(e) => return Err(e),
    };
    Ok(MetricsRow {
        id: id.to_string(),
        counts,
        acc: m.acc,
        se: m.se,
        sp: m.sp,
        auc,
        threshold,
        se_degenerate: m.se_degenerate,
        sp_degenerate: m.sp_degenerate,
        auc_degenerate,
        threshold_degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let gt = [0, 1, 1, 0, 1];
        let c = confusion(&gt, &gt, None).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        let m = metrics(&c).unwrap();
        assert_eq!((m.acc, m.se, m.sp), (1.0, 1.0, 1.0));
    }

    #[test]
    fn hand_counted_eight_pixel_case() {
        // TP=2, FP=1, FN=1, TN=4 on an 8-pixel mask
        let gt = [1, 1, 1, 0, 0, 0, 0, 0];
        let pred = [1, 1, 0, 1, 0, 0, 0, 0];
        let c = confusion(&pred, &gt, None).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (2, 1, 1, 4));
        let m = metrics(&c).unwrap();
        assert_eq!(m.acc, 0.75);
        assert!((m.se - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.sp - 0.8).abs() < 1e-15);

        // inverting the prediction swaps the roles of Se and Sp's parts
        let inv: Vec<u8> = pred.iter().map(|&v| 1 - v).collect();
        let ci = confusion(&inv, &gt, None).unwrap();
        assert_eq!((ci.tp, ci.fn_), (1, 2));
        assert_eq!((ci.tn, ci.fp), (1, 4));
    }

    #[test]
    fn degenerate_background_only_flags_se() {
        let gt = [0u8; 6];
        let pred = [0u8; 6];
        let m = metrics(&confusion(&pred, &gt, None).unwrap()).unwrap();
        assert_eq!(m.se, 1.0);
        assert!(m.se_degenerate);
        assert!(!m.sp_degenerate);
    }

    #[test]
    fn mask_excludes_pixels() {
        let gt = [1, 0, 1, 0];
        let pred = [1, 1, 0, 0];
        let mask = [1, 0, 0, 1];
        let c = confusion(&pred, &gt, Some(&mask)).unwrap();
        assert_eq!(c.total(), 2);
        assert_eq!((c.tp, c.tn), (1, 1));
    }

    #[test]
    fn non_binary_rejected() {
        assert!(confusion(&[2], &[1], None).is_err());
        assert!(confusion(&[1], &[7], None).is_err());
    }

    #[test]
    fn accuracy_is_prevalence_weighted_se_sp() {
        let c = ConfusionCounts {
            tp: 13,
            fp: 5,
            tn: 40,
            fn_: 7,
        };
        let m = metrics(&c).unwrap();
        let p = (c.tp + c.fn_) as f64;
        let n = (c.tn + c.fp) as f64;
        let weighted = (p * m.se + n * m.sp) / (p + n);
        assert!((m.acc - weighted).abs() < 1e-15);
    }
}
