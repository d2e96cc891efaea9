//! Otsu threshold selection over a 256-bin histogram of in-mask scores.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OtsuResult {
    /// Threshold in [0,1]; classify score > threshold as vessel.
    pub threshold: f64,
    /// Set when the histogram cannot be split (constant map): the constant
    /// value is returned and everything classifies as background.
    pub degenerate: bool,
}

/// Bin index maximizing the between-class variance, ties broken toward the
/// lowest bin. Returns the degenerate flag when no split exists.
#[allow(clippy::needless_range_loop)]
pub fn otsu_from_histogram(hist: &[u64; 256]) -> (usize, bool) {
    let total: u64 = hist.iter().sum();
    let weighted_total: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &h)| i as f64 * h as f64)
        .sum();

    let mut best_bin = 0usize;
    let mut best_var = f64::NEG_INFINITY;
    let mut found = false;
    let mut w0 = 0f64;
    let mut sum0 = 0f64;
    for t in 0..256usize {
        w0 += hist[t] as f64;
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total as f64 - w0;
        if w0 == 0.0 {
            continue;
        }
        if w1 == 0.0 {
            break;
        }
        let mu0 = sum0 / w0;
        let mu1 = (weighted_total - sum0) / w1;
        let var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if var > best_var {
            best_var = var;
            best_bin = t;
            found = true;
        }
    }
    if !found {
        // all mass in one bin: report that bin
        let only = hist.iter().position(|&h| h > 0).unwrap_or(0);
        return (only, true);
    }
    (best_bin, false)
}

/// Quantize in-mask scores to 256 bins and search for the Otsu threshold.
pub fn otsu_threshold(scores: &[f32], mask: Option<&[u8]>) -> Result<OtsuResult> {
    if let Some(m) = mask {
        if m.len() != scores.len() {
            return Err(Error::contract(format!(
                "mask length {} does not match scores {}",
                m.len(),
                scores.len()
            )));
        }
    }
    let mut hist = [0u64; 256];
    let mut any = false;
    let mut max_score = f64::NEG_INFINITY;
    for (i, &s) in scores.iter().enumerate() {
        if let Some(m) = mask {
            if m[i] == 0 {
                continue;
            }
        }
        let bin = ((s as f64 * 255.0).round() as i64).clamp(0, 255) as usize;
        hist[bin] += 1;
        max_score = max_score.max(s as f64);
        any = true;
    }
    if !any {
        return Err(Error::contract("otsu_threshold with no in-mask pixels"));
    }
    let (bin, degenerate) = otsu_from_histogram(&hist);
    if degenerate {
        // unsplittable histogram: return the constant value itself so that
        // `score > threshold` classifies everything as background
        return Ok(OtsuResult {
            threshold: max_score,
            degenerate,
        });
    }
    Ok(OtsuResult {
        threshold: bin as f64 / 255.0,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bimodal_tie_breaks_to_lowest_bin() {
        let mut hist = [0u64; 256];
        hist[0] = 50;
        hist[255] = 50;
        let (bin, degenerate) = otsu_from_histogram(&hist);
        assert_eq!(bin, 0);
        assert!(!degenerate);
    }

    #[test]
    fn constant_map_is_degenerate() {
        let scores = [0.42f32; 10];
        let r = otsu_threshold(&scores, None).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.threshold, 0.42f32 as f64); // the constant value itself
                                                 // classifying score > threshold leaves everything background
        assert!(scores.iter().all(|&s| (s as f64) <= r.threshold));
    }

    #[test]
    fn separates_two_clusters() {
        let mut scores = vec![0.05f32; 60];
        scores.extend(vec![0.9f32; 40]);
        let r = otsu_threshold(&scores, None).unwrap();
        assert!(!r.degenerate);
        assert!(r.threshold > 0.05 && r.threshold < 0.9, "{}", r.threshold);
    }
}
