//! Checkpoint-driven inference: pad, tile with overlap, run the generator in
//! eval mode per tile, average the overlaps, unpad, and emit the probability
//! map (plus a coverage map for auditability).

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{self, Checkpoint};
use crate::data::netpbm::{self, PixelMap};
use crate::data::patches::{normalize, pad_to_multiple, tile_origins, Reassembler};
use crate::error::{Error, Result};
use crate::eval::prob_to_map;
use crate::models::{generator_forward, NoiseSpec};
use crate::params::RunningStats;
use crate::tensor::tape::{BnMode, NetTag, Tape};

/// Test-time noise policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZMode {
    /// Fresh draws from a stream seeded with this value.
    Seeded(u64),
    /// z = 0 everywhere (deterministic deployment).
    Zero,
}

#[derive(Clone, Debug)]
pub struct InferOutcome {
    pub prob_path: PathBuf,
    pub coverage_path: PathBuf,
    /// Full-size probability map (unpadded), row-major.
    pub scores: Vec<f32>,
    pub width: usize,
    pub height: usize,
}

/// Run the generator from `ckpt` over one image file and write
/// `<out>/<stem>_prob.pgm` and `<out>/coverage/<stem>.pgm`.
pub fn infer_file(
    ckpt: &Checkpoint,
    image_path: &Path,
    out_dir: &Path,
    z: ZMode,
) -> Result<InferOutcome> {
    let image = netpbm::read_file(image_path)?;
    let stem = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| Error::data(format!("cannot derive stem from {}", image_path.display())))?;
    let (scores, coverage, width, height) = infer_map(ckpt, &image, z)?;

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let prob_path = out_dir.join(format!("{stem}_prob.pgm"));
    netpbm::write_file(&prob_path, &prob_to_map(&scores, width, height))?;

    let cov_dir = out_dir.join("coverage");
    std::fs::create_dir_all(&cov_dir).map_err(|e| Error::io(&cov_dir, e))?;
    let coverage_path = cov_dir.join(format!("{stem}.pgm"));
    let cov_map = PixelMap {
        width,
        height,
        channels: 1,
        data: coverage.iter().map(|&c| c.min(255) as u8).collect(),
    };
    netpbm::write_file(&coverage_path, &cov_map)?;

    Ok(InferOutcome {
        prob_path,
        coverage_path,
        scores,
        width,
        height,
    })
}

/// Tile-and-average inference over an in-memory image. Returns the unpadded
/// score map and per-pixel coverage counts.
pub fn infer_map(
    ckpt: &Checkpoint,
    image: &PixelMap,
    z: ZMode,
) -> Result<(Vec<f32>, Vec<u32>, usize, usize)> {
    let cfg = ckpt.config()?;
    if image.channels != cfg.generator.image_channels {
        return Err(Error::data(format!(
            "image has {} channels but the checkpointed generator expects {}",
            image.channels, cfg.generator.image_channels
        )));
    }
    audit_model_shapes(ckpt)?;

    let multiple = cfg.generator.required_multiple();
    let patch = cfg.data.patch.size.max(multiple);
    let stride = cfg.data.patch.stride;
    let (padded, crop) = pad_to_multiple(image, multiple, patch);
    let (new_w, new_h) = (padded.width, padded.height);

    let mut rng = match z {
        ZMode::Seeded(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        ZMode::Zero => None,
    };
    let noise = NoiseSpec {
        channels: cfg.generator.noise_channels,
    };

    // eval mode never mutates the stats; clone once for the &mut API
    let mut stats: RunningStats<f32> = ckpt.gen_stats.clone();
    let mut asm = Reassembler::new(new_w, new_h);
    for &y0 in &tile_origins(new_h, patch, stride) {
        for &x0 in &tile_origins(new_w, patch, stride) {
            let tile = crate::data::patches::crop_map(&padded, x0, y0, patch, patch);
            let mut tape: Tape<f32> = Tape::new();
            let lease = ckpt.gen.lease(&mut tape, Some(NetTag::Generator), false);
            let x_id = tape.leaf(normalize::<f32>(&tile), false);
            let z_t = match rng.as_mut() {
                Some(r) => noise.sample::<f32, _>(r, 1, patch, patch),
                None => noise.zeros::<f32>(1, patch, patch),
            };
            let z_id = tape.leaf(z_t, false);
            let out = generator_forward(
                &mut tape,
                &cfg.generator,
                &lease,
                &mut stats,
                x_id,
                z_id,
                BnMode::Eval,
            )?;
            asm.add_tile(x0, y0, patch, patch, tape.value(out).data());
        }
    }
    let (avg, coverage) = asm.finish()?;

    // crop both maps back to the source extents
    let mut scores = Vec::with_capacity(crop.width * crop.height);
    let mut cov = Vec::with_capacity(crop.width * crop.height);
    for y in 0..crop.height {
        for x in 0..crop.width {
            scores.push(avg[y * new_w + x]);
            cov.push(coverage[y * new_w + x]);
        }
    }
    Ok((scores, cov, crop.width, crop.height))
}

/// Verify that the checkpoint's tensors match the model its embedded config
/// describes; a mismatch means the file pairs a config with foreign weights.
fn audit_model_shapes(ckpt: &Checkpoint) -> Result<()> {
    let cfg = ckpt.config()?;
    let (expect_gen, _) = crate::models::build_generator::<f32>(&cfg.generator, 0)?;
    let (expect_disc, _) = crate::models::build_discriminator::<f32>(&cfg.discriminator, 0)?;
    for (expected, actual, which) in [
        (&expect_gen, &ckpt.gen, "generator"),
        (&expect_disc, &ckpt.disc, "discriminator"),
    ] {
        if expected.len() != actual.len() {
            return Err(Error::config(format!(
                "checkpoint/config mismatch: embedded config implies {} {which} tensors, checkpoint holds {}",
                expected.len(),
                actual.len()
            )));
        }
        for ((en, et), (an, at)) in expected.iter().zip(actual.iter()) {
            if en != an || et.shape() != at.shape() {
                return Err(Error::config(format!(
                    "checkpoint/config mismatch in {which}: expected tensor '{en}' of shape {}, found '{an}' of shape {}",
                    et.shape(),
                    at.shape()
                )));
            }
        }
    }
    Ok(())
}

/// Convenience: load the checkpoint file then run [`infer_file`].
pub fn infer_from_path(
    ckpt_path: &Path,
    image_path: &Path,
    out_dir: &Path,
    z: ZMode,
) -> Result<InferOutcome> {
    let ckpt = checkpoint::load(ckpt_path)?;
    infer_file(&ckpt, image_path, out_dir, z)
}
