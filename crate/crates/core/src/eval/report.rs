//! Probability-map / binary-map emission and directory-level evaluation.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{evaluate_map, metrics, roc_auc, ConfusionCounts, MetricsRow, ThresholdMode};
use crate::data::netpbm::{self, PixelMap};
use crate::error::{Error, Result};

/// Quantize a probability in [0,1] to u8 by round-half-up.
pub fn quantize_prob(p: f32) -> u8 {
    ((p as f64 * 255.0 + 0.5).floor()).clamp(0.0, 255.0) as u8
}

pub fn prob_to_map(scores: &[f32], width: usize, height: usize) -> PixelMap {
    debug_assert_eq!(scores.len(), width * height);
    PixelMap {
        width,
        height,
        channels: 1,
        data: scores.iter().map(|&p| quantize_prob(p)).collect(),
    }
}

pub fn binary_to_map(bits: &[u8], width: usize, height: usize) -> PixelMap {
    debug_assert_eq!(bits.len(), width * height);
    PixelMap {
        width,
        height,
        channels: 1,
        data: bits.iter().map(|&b| if b != 0 { 255 } else { 0 }).collect(),
    }
}

/// Append one row as a JSON line.
pub fn append_report_row(path: &Path, row: &MetricsRow) -> Result<()> {
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let line = serde_json::to_string(row)
        .map_err(|e| Error::data(format!("report row serialization failed: {e}")))?;
    writeln!(file, "{line}").map_err(|e| Error::io(path, e))
}

/// Emit `<id>_prob.pgm`, `<id>_bin.pgm` and append the metrics row to the
/// report file.
#[allow(clippy::too_many_arguments)]
pub fn emit_outputs(
    out_dir: &Path,
    id: &str,
    scores: &[f32],
    binary: &[u8],
    width: usize,
    height: usize,
    row: &MetricsRow,
    report_path: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    netpbm::write_file(
        &out_dir.join(format!("{id}_prob.pgm")),
        &prob_to_map(scores, width, height),
    )?;
    netpbm::write_file(
        &out_dir.join(format!("{id}_bin.pgm")),
        &binary_to_map(binary, width, height),
    )?;
    append_report_row(report_path, row)
}

#[derive(Clone, Debug)]
pub struct EvalSummary {
    pub rows: Vec<MetricsRow>,
    /// Micro-average: pooled pixel counts over all images, pooled-pixel AUC.
    pub aggregate: MetricsRow,
}

/// Write all per-image rows plus the aggregate row as JSON lines.
pub fn write_report(path: &Path, summary: &EvalSummary) -> Result<()> {
    let mut out = String::new();
    for row in summary
        .rows
        .iter()
        .chain(std::iter::once(&summary.aggregate))
    {
        let line = serde_json::to_string(row)
            .map_err(|e| Error::data(format!("report serialization failed: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn stems_of_dir(dir: &Path, strip_prob_suffix: bool) -> Result<BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::data(format!("not a directory: {}", dir.display())));
    }
    let mut map = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase());
        if !matches!(ext.as_deref(), Some("pgm") | Some("ppm")) {
            continue;
        }
        let mut stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        if strip_prob_suffix {
            if let Some(s) = stem.strip_suffix("_prob") {
                stem = s.to_string();
            }
        }
        map.insert(stem, path);
    }
    Ok(map)
}

/// Evaluate a directory of probability maps against a directory of ground
/// truth maps, matched by basename stem (`<stem>_prob.pgm` also matches
/// `<stem>.pgm`). Unmatched stems on either side are an error, listed
/// exhaustively.
pub fn evaluate_dirs(
    pred_dir: &Path,
    gt_dir: &Path,
    mask_dir: Option<&Path>,
    mode: ThresholdMode,
) -> Result<EvalSummary> {
    let preds = stems_of_dir(pred_dir, true)?;
    let gts = stems_of_dir(gt_dir, false)?;
    if gts.is_empty() {
        return Err(Error::data(format!(
            "no ground-truth maps under {}",
            gt_dir.display()
        )));
    }

    let missing_pred: Vec<&String> = gts.keys().filter(|s| !preds.contains_key(*s)).collect();
    let missing_gt: Vec<&String> = preds.keys().filter(|s| !gts.contains_key(*s)).collect();
    if !missing_pred.is_empty() || !missing_gt.is_empty() {
        return Err(Error::data(format!(
            "unmatched stems between {} and {}: missing predictions for [{}], predictions without ground truth [{}]",
            pred_dir.display(),
            gt_dir.display(),
            missing_pred.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", "),
            missing_gt.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", "),
        )));
    }

    let mut rows = Vec::new();
    let mut pooled_counts = ConfusionCounts::default();
    let mut pooled_scores: Vec<f32> = Vec::new();
    let mut pooled_gt: Vec<u8> = Vec::new();
    let mut fixed_threshold = None;
    if let ThresholdMode::Fixed(t) = mode {
        fixed_threshold = Some(t);
    }

    for (stem, gt_path) in &gts {
        let gt_map = netpbm::read_file(gt_path)?;
        if gt_map.channels != 1 {
            return Err(Error::data(format!(
                "ground truth {} must be grayscale",
                gt_path.display()
            )));
        }
        let pred_map = netpbm::read_file(&preds[stem])?;
        if (pred_map.width, pred_map.height) != (gt_map.width, gt_map.height)
            || pred_map.channels != 1
        {
            return Err(Error::data(format!(
                "prediction {} is {}x{}x{} but ground truth is {}x{}x1",
                preds[stem].display(),
                pred_map.width,
                pred_map.height,
                pred_map.channels,
                gt_map.width,
                gt_map.height
            )));
        }
        let mask = match mask_dir {
            Some(dir) => {
                let mpath = dir.join(format!("{stem}.pgm"));
                let m = netpbm::read_file(&mpath)?;
                if (m.width, m.height) != (gt_map.width, gt_map.height) {
                    return Err(Error::data(format!(
                        "mask {} does not match ground truth extents",
                        mpath.display()
                    )));
                }
                Some(m.binarized())
            }
            None => None,
        };

        let scores: Vec<f32> = pred_map.data.iter().map(|&v| v as f32 / 255.0).collect();
        let gt_bits = gt_map.binarized();
        let row = evaluate_map(
            stem,
            &scores,
            &gt_bits.data,
            mask.as_ref().map(|m| m.data.as_slice()),
            mode,
        )?;
        pooled_counts.add(&row.counts);
        match &mask {
            Some(m) =>
            {
                #[allow(clippy::needless_range_loop)]
                for i in 0..scores.len() {
                    if m.data[i] != 0 {
                        pooled_scores.push(scores[i]);
                        pooled_gt.push(gt_bits.data[i]);
                    }
                }
            }
            None => {
                pooled_scores.extend_from_slice(&scores);
                pooled_gt.extend_from_slice(&gt_bits.data);
            }
        }
        rows.push(row);
    }

    let pooled_metrics = metrics(&pooled_counts)?;
    let (pooled_auc, auc_degenerate) = match roc_auc(&pooled_scores, &pooled_gt, None) {
        Ok(curve) => (Some(curve.auc), false),
        Err(Error::Numeric(_)) => (None, true),
        Err(e) => return Err(e),
    };
    let aggregate = MetricsRow {
        id: "aggregate".to_string(),
        counts: pooled_counts,
        acc: pooled_metrics.acc,
        se: pooled_metrics.se,
        sp: pooled_metrics.sp,
        auc: pooled_auc,
        // per-image Otsu has no single aggregate threshold; report the fixed
        // one when it exists and -1 otherwise
        threshold: fixed_threshold.unwrap_or(-1.0),
        se_degenerate: pooled_metrics.se_degenerate,
        sp_degenerate: pooled_metrics.sp_degenerate,
        auc_degenerate,
        threshold_degenerate: false,
    };
    Ok(EvalSummary { rows, aggregate })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_examples() {
        assert_eq!(quantize_prob(0.5), 128); // round(0.5 * 255) half-up
        assert_eq!(quantize_prob(1.0), 255);
        assert_eq!(quantize_prob(0.0), 0);
    }

    #[test]
    fn self_evaluation_is_perfect() {
        let dir = tempfile::tempdir().unwrap();
        let pred_dir = dir.path().join("pred");
        let gt_dir = dir.path().join("gt");
        std::fs::create_dir_all(&pred_dir).unwrap();
        std::fs::create_dir_all(&gt_dir).unwrap();
        for stem in ["a", "b"] {
            let mut m = PixelMap::gray(4, 4);
            for i in 0..16 {
                m.data[i] = if (i + stem.len()) % 3 == 0 { 255 } else { 0 };
            }
            netpbm::write_file(&gt_dir.join(format!("{stem}.pgm")), &m).unwrap();
            netpbm::write_file(&pred_dir.join(format!("{stem}.pgm")), &m).unwrap();
        }
        let summary = evaluate_dirs(&pred_dir, &gt_dir, None, ThresholdMode::Fixed(0.5)).unwrap();
        assert_eq!(summary.aggregate.acc, 1.0);
        assert_eq!(summary.aggregate.se, 1.0);
        assert_eq!(summary.aggregate.sp, 1.0);
        assert_eq!(summary.aggregate.auc, Some(1.0));
        // pooled counts equal the sum of per-image counts
        let mut sum = ConfusionCounts::default();
        for r in &summary.rows {
            sum.add(&r.counts);
        }
        assert_eq!(sum, summary.aggregate.counts);
    }

    #[test]
    fn unmatched_stems_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        let pred_dir = dir.path().join("pred");
        let gt_dir = dir.path().join("gt");
        std::fs::create_dir_all(&pred_dir).unwrap();
        std::fs::create_dir_all(&gt_dir).unwrap();
        let m = PixelMap::gray(2, 2);
        netpbm::write_file(&gt_dir.join("one.pgm"), &m).unwrap();
        netpbm::write_file(&gt_dir.join("two.pgm"), &m).unwrap();
        netpbm::write_file(&pred_dir.join("three.pgm"), &m).unwrap();
        let err = evaluate_dirs(&pred_dir, &gt_dir, None, ThresholdMode::Fixed(0.5)).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("one") && msg.contains("two") && msg.contains("three"),
            "{msg}"
        );
    }

    #[test]
    fn prob_suffix_matches_plain_stem() {
        let dir = tempfile::tempdir().unwrap();
        let pred_dir = dir.path().join("pred");
        let gt_dir = dir.path().join("gt");
        std::fs::create_dir_all(&pred_dir).unwrap();
        std::fs::create_dir_all(&gt_dir).unwrap();
        let mut m = PixelMap::gray(2, 2);
        m.data = vec![0, 255, 255, 0];
        netpbm::write_file(&gt_dir.join("img.pgm"), &m).unwrap();
        netpbm::write_file(&pred_dir.join("img_prob.pgm"), &m).unwrap();
        let summary = evaluate_dirs(&pred_dir, &gt_dir, None, ThresholdMode::Fixed(0.5)).unwrap();
        assert_eq!(summary.rows.len(), 1);
        assert_eq!(summary.rows[0].acc, 1.0);
    }

    #[test]
    fn emitted_row_recomputes_from_emitted_counts() {
        let dir = tempfile::tempdir().unwrap();
        let scores = [0.9f32, 0.2, 0.7, 0.1];
        let gt = [1u8, 0, 1, 1];
        let row = evaluate_map("t", &scores, &gt, None, ThresholdMode::Fixed(0.5)).unwrap();
        let report = dir.path().join("report.jsonl");
        emit_outputs(
            dir.path(),
            "t",
            &scores,
            &super::super::binarize(&scores, 0.5),
            2,
            2,
            &row,
            &report,
        )
        .unwrap();
        let text = std::fs::read_to_string(&report).unwrap();
        let parsed: MetricsRow = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        let m = metrics(&parsed.counts).unwrap();
        assert_eq!(m.acc, parsed.acc);
        assert_eq!(m.se, parsed.se);
        assert_eq!(m.sp, parsed.sp);
        assert!(dir.path().join("t_prob.pgm").is_file());
        assert!(dir.path().join("t_bin.pgm").is_file());
    }
}
