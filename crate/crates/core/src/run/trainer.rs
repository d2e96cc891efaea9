//! Alternating adversarial training loop with checkpointing and logging.
//!
//! One step: draw a batch and fresh noise, run the generator once
//! (its batch-norm statistics update here), train the discriminator on the
//! real pair and the detached fake pair, then train the generator through
//! the freshly updated discriminator. Discriminator parameters change only
//! in the D phase, generator parameters only in the G phase.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{self, Checkpoint, RngState};
use super::config::RunConfig;
use crate::data::augment::augment;
use crate::data::netpbm::{self, PixelMap};
use crate::data::patches::{
    binary_to_tensor, crop_sample, normalize, pad_reflect, pad_to_multiple, pad_zero, random_origin,
};
use crate::data::{load_dataset, load_record, LoadOptions, SamplePair};
use crate::error::{Error, Result};
use crate::models::{
    build_discriminator, build_generator, discriminator_forward, generator_forward, NoiseSpec,
};
use crate::objective::{aggregate_patch_scores, discriminator_loss, generator_loss, LossReport};
use crate::optim::{adam_step, apply_lr_decay, AdamState};
use crate::params::{Gradients, ParameterStore, RunningStats};
use crate::tensor::tape::{BnMode, NetTag, Tape};
use crate::tensor::Scalar;
use crate::tensor::{Shape, Tensor};

/// One line of the training log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainStepReport {
    pub epoch: u64,
    #[serde(flatten)]
    pub losses: LossReport,
    pub lr_g: f64,
    pub lr_d: f64,
    pub mean_real_score: f64,
    pub mean_fake_score: f64,
    pub wall_ms: f64,
    pub threads: usize,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub steps: u64,
    pub epochs: u64,
    pub final_checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub last_report: Option<TrainStepReport>,
}

/// Training data: either records sampled with random crops each epoch, or a
/// fixed list of prepared samples (desk-scale runs and tests).
enum SampleSource {
    Records(Vec<PaddedRecord>),
    Fixed(Vec<SamplePair>),
}

struct PaddedRecord {
    id: String,
    image: PixelMap,
    label: PixelMap,
    mask: PixelMap,
}

pub struct Trainer {
    cfg: RunConfig,
    out_dir: PathBuf,
    source: SampleSource,
    gen: ParameterStore<f32>,
    gen_stats: RunningStats<f32>,
    disc: ParameterStore<f32>,
    disc_stats: RunningStats<f32>,
    adam_g: AdamState<f32>,
    adam_d: AdamState<f32>,
    noise_rng: ChaCha8Rng,
    patch_rng: ChaCha8Rng,
    augment_rng: ChaCha8Rng,
    epoch: u64,
    step: u64,
    log: Option<std::io::BufWriter<std::fs::File>>,
}

// distinct seed streams derived from the run seed
const SEED_GEN_INIT: u64 = 0x67656e5f696e6974;
const SEED_DISC_INIT: u64 = 0x646973635f696e69;
const SEED_NOISE: u64 = 0x6e6f697365;
const SEED_PATCH: u64 = 0x7061746368;
const SEED_AUGMENT: u64 = 0x6175676d656e74;

impl Trainer {
    /// Set up a run over a dataset directory. Writes the canonical config,
    /// the manifest, and any synthesized masks into `out_dir` before step 0.
    pub fn new(
        mut cfg: RunConfig,
        data_root: &Path,
        out_dir: &Path,
        resume: Option<&Path>,
    ) -> Result<Self> {
        cfg.finalize()?;
        let manifest = load_dataset(
            data_root,
            cfg.data.kind,
            &LoadOptions {
                stare_leave_one_out: cfg.data.stare_leave_one_out,
            },
        )?;
        if manifest.train.is_empty() {
            return Err(Error::data(format!(
                "dataset at {} has no training images",
                data_root.display()
            )));
        }
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        manifest.write_json(&out_dir.join("manifest.json"))?;

        let multiple = cfg.generator.required_multiple();
        let min_side = if cfg.data.whole_image {
            multiple
        } else {
            cfg.data.patch.size
        };
        let mut records = Vec::with_capacity(manifest.train.len());
        for paths in &manifest.train {
            let rec = load_record(paths)?;
            let label = rec
                .label
                .clone()
                .ok_or_else(|| Error::data(format!("training image '{}' has no label", rec.id)))?;
            let mask = rec
                .fov_mask
                .clone()
                .expect("load_record always yields a mask");
            if rec.fov_synthesized {
                let dir = out_dir.join("masks_synth");
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                netpbm::write_file(&dir.join(format!("{}.pgm", rec.id)), &mask)?;
                eprintln!(
                    "warning: no field-of-view mask for '{}'; synthesized one (emitted under masks_synth/)",
                    rec.id
                );
            }
            let (image, _) = pad_to_multiple(&rec.image, multiple, min_side);
            let (new_w, new_h) = (image.width, image.height);
            records.push(PaddedRecord {
                id: rec.id.clone(),
                image,
                label: pad_reflect(&label, new_w, new_h),
                mask: pad_zero(&mask, new_w, new_h),
            });
        }
        Self::build(cfg, SampleSource::Records(records), out_dir, resume)
    }

    /// Set up a run over a fixed list of prepared samples (no dataset dir).
    pub fn with_samples(
        mut cfg: RunConfig,
        samples: Vec<SamplePair>,
        out_dir: &Path,
        resume: Option<&Path>,
    ) -> Result<Self> {
        cfg.finalize()?;
        if samples.is_empty() {
            return Err(Error::data("no training samples provided"));
        }
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        Self::build(cfg, SampleSource::Fixed(samples), out_dir, resume)
    }

    fn build(
        cfg: RunConfig,
        source: SampleSource,
        out_dir: &Path,
        resume: Option<&Path>,
    ) -> Result<Self> {
        let config_text = cfg.serialize();
        std::fs::write(out_dir.join("run_config.txt"), &config_text)
            .map_err(|e| Error::io(out_dir, e))?;

        let seed = cfg.train.seed;
        let mut trainer = if let Some(ckpt_path) = resume {
            let ckpt = checkpoint::load(ckpt_path)?;
            // run-length keys (epoch budget, cadence) may differ on resume
            if ckpt.compatible_hash() != super::config::compatible_hash_of(&config_text) {
                return Err(Error::config(format!(
                    "checkpoint {} was written with a different config (hash {:#x} vs {:#x}); refusing to resume",
                    ckpt_path.display(),
                    ckpt.compatible_hash(),
                    super::config::compatible_hash_of(&config_text)
                )));
            }
            Trainer {
                cfg,
                out_dir: out_dir.to_path_buf(),
                source,
                gen: ckpt.gen,
                gen_stats: ckpt.gen_stats,
                disc: ckpt.disc,
                disc_stats: ckpt.disc_stats,
                adam_g: ckpt.adam_g,
                adam_d: ckpt.adam_d,
                noise_rng: ckpt.noise_rng.restore(),
                patch_rng: ckpt.patch_rng.restore(),
                augment_rng: ckpt.augment_rng.restore(),
                epoch: ckpt.epoch,
                step: ckpt.step,
                log: None,
            }
        } else {
            let (gen, gen_stats) = build_generator::<f32>(&cfg.generator, seed ^ SEED_GEN_INIT)?;
            let (disc, disc_stats) =
                build_discriminator::<f32>(&cfg.discriminator, seed ^ SEED_DISC_INIT)?;
            let adam_g = AdamState::new(&gen, &cfg.optimizer_g);
            let adam_d = AdamState::new(&disc, &cfg.optimizer_d);
            Trainer {
                cfg,
                out_dir: out_dir.to_path_buf(),
                source,
                gen,
                gen_stats,
                disc,
                disc_stats,
                adam_g,
                adam_d,
                noise_rng: ChaCha8Rng::seed_from_u64(seed ^ SEED_NOISE),
                patch_rng: ChaCha8Rng::seed_from_u64(seed ^ SEED_PATCH),
                augment_rng: ChaCha8Rng::seed_from_u64(seed ^ SEED_AUGMENT),
                epoch: 0,
                step: 0,
                log: None,
            }
        };
        let log_path = trainer.out_dir.join("train_log.jsonl");
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;
        trainer.log = Some(std::io::BufWriter::new(file));
        Ok(trainer)
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn gen(&self) -> &ParameterStore<f32> {
        &self.gen
    }

    pub fn disc(&self) -> &ParameterStore<f32> {
        &self.disc
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            gen: self.gen.clone(),
            gen_stats: self.gen_stats.clone(),
            disc: self.disc.clone(),
            disc_stats: self.disc_stats.clone(),
            adam_g: self.adam_g.clone(),
            adam_d: self.adam_d.clone(),
            epoch: self.epoch,
            step: self.step,
            noise_rng: RngState::capture(&self.noise_rng),
            patch_rng: RngState::capture(&self.patch_rng),
            augment_rng: RngState::capture(&self.augment_rng),
            config_text: self.cfg.serialize(),
        }
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.checkpoint())
    }

    /// Draw the shuffled sample deck for one epoch.
    fn epoch_deck(&mut self) -> Vec<SamplePair> {
        let per_image = self.cfg.data.patches_per_image;
        match &self.source {
            SampleSource::Fixed(samples) => {
                let mut indices: Vec<usize> = (0..samples.len())
                    .flat_map(|i| std::iter::repeat_n(i, per_image))
                    .collect();
                indices.shuffle(&mut self.patch_rng);
                let picked: Vec<SamplePair> =
                    indices.into_iter().map(|i| samples[i].clone()).collect();
                picked
                    .into_iter()
                    .map(|s| {
                        if self.cfg.augment.enabled {
                            augment(s, &self.cfg.augment, &mut self.augment_rng)
                        } else {
                            s
                        }
                    })
                    .collect()
            }
            SampleSource::Records(records) => {
                let mut indices: Vec<usize> = (0..records.len())
                    .flat_map(|i| std::iter::repeat_n(i, per_image))
                    .collect();
                indices.shuffle(&mut self.patch_rng);
                let mut out = Vec::with_capacity(indices.len());
                for idx in indices {
                    let rec = &records[idx];
                    let sample = if self.cfg.data.whole_image {
                        SamplePair {
                            id: rec.id.clone(),
                            image: rec.image.clone(),
                            label: rec.label.clone(),
                            mask: rec.mask.clone(),
                        }
                    } else {
                        let p = self.cfg.data.patch.size;
                        let x0 = random_origin(&mut self.patch_rng, rec.image.width, p);
                        let y0 = random_origin(&mut self.patch_rng, rec.image.height, p);
                        crop_sample(&rec.id, &rec.image, &rec.label, &rec.mask, x0, y0, p)
                    };
                    out.push(if self.cfg.augment.enabled {
                        augment(sample, &self.cfg.augment, &mut self.augment_rng)
                    } else {
                        sample
                    });
                }
                out
            }
        }
    }

    /// One full training pass up to `cfg.train.epochs`, with checkpoints at
    /// the configured cadence and a final checkpoint.
    pub fn run(&mut self) -> Result<TrainSummary> {
        let ckpt_dir = self.out_dir.join("checkpoints");
        std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
        let mut last_report = None;

        while self.epoch < self.cfg.train.epochs {
            apply_lr_decay(&mut self.adam_g, &self.cfg.optimizer_g, self.epoch);
            apply_lr_decay(&mut self.adam_d, &self.cfg.optimizer_d, self.epoch);
            let deck = self.epoch_deck();
            let batch_size = self.cfg.train.batch_size;
            for batch in deck.chunks(batch_size) {
                match self.step_once(batch) {
                    Ok(report) => last_report = Some(report),
                    Err(e) if e.kind() == crate::error::ErrorKind::Numeric => {
                        self.write_abort_artifacts(batch, &e, &ckpt_dir)?;
                        return Err(e);
                    }
                    Err(e) => return Err(e),
                }
            }
            self.epoch += 1;
            if self
                .epoch
                .is_multiple_of(self.cfg.train.checkpoint_every_epochs)
                && self.epoch < self.cfg.train.epochs
            {
                self.save_checkpoint(&ckpt_dir.join(format!("epoch_{:05}.ckpt", self.epoch)))?;
            }
        }
        let final_path = ckpt_dir.join("final.ckpt");
        self.save_checkpoint(&final_path)?;
        if let Some(log) = self.log.as_mut() {
            log.flush().map_err(|e| Error::io(&self.out_dir, e))?;
        }
        Ok(TrainSummary {
            steps: self.step,
            epochs: self.epoch,
            final_checkpoint: final_path,
            log_path: self.out_dir.join("train_log.jsonl"),
            last_report,
        })
    }

    fn write_abort_artifacts(
        &self,
        batch: &[SamplePair],
        err: &Error,
        ckpt_dir: &Path,
    ) -> Result<()> {
        let params_finite = self.gen.iter().all(|(_, t)| t.all_finite())
            && self.disc.iter().all(|(_, t)| t.all_finite());
        let last_good = if params_finite {
            let p = ckpt_dir.join("abort_last_good.ckpt");
            self.save_checkpoint(&p)?;
            Some(p.display().to_string())
        } else {
            None
        };
        let diag = serde_json::json!({
            "step": self.step,
            "epoch": self.epoch,
            "batch_ids": batch.iter().map(|s| s.id.clone()).collect::<Vec<_>>(),
            "error": err.to_string(),
            "last_good_checkpoint": last_good,
        });
        let path = self.out_dir.join("abort_diagnostics.json");
        std::fs::write(&path, serde_json::to_string_pretty(&diag).unwrap())
            .map_err(|e| Error::io(&path, e))
    }

    /// Assemble (x, y) batch tensors from aligned samples.
    fn stack_batch(&self, batch: &[SamplePair]) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let first = &batch[0].image;
        let (w, h, c) = (first.width, first.height, first.channels);
        for s in batch {
            if s.image.width != w || s.image.height != h || s.image.channels != c {
                return Err(Error::contract(format!(
                    "batch mixes sample extents: '{}' is {}x{}, expected {}x{}",
                    s.id, s.image.width, s.image.height, w, h
                )));
            }
        }
        let mut x = Tensor::zeros(Shape::new(batch.len(), c, h, w));
        let mut y = Tensor::zeros(Shape::new(batch.len(), 1, h, w));
        let xlen = c * h * w;
        let ylen = h * w;
        for (i, s) in batch.iter().enumerate() {
            let xi = normalize::<f32>(&s.image);
            x.data_mut()[i * xlen..(i + 1) * xlen].copy_from_slice(xi.data());
            let yi = binary_to_tensor::<f32>(&s.label);
            y.data_mut()[i * ylen..(i + 1) * ylen].copy_from_slice(yi.data());
        }
        Ok((x, y))
    }

    /// One alternating training step on an explicit batch.
    pub fn step_once(&mut self, batch: &[SamplePair]) -> Result<TrainStepReport> {
        let t0 = Instant::now();
        let (x, y) = self.stack_batch(batch)?;
        let (n, h, w) = (x.shape().n(), x.shape().h(), x.shape().w());
        let noise = NoiseSpec {
            channels: self.cfg.generator.noise_channels,
        };
        let z = noise.sample::<f32, _>(&mut self.noise_rng, n, h, w);

        // generator forward (training-mode stats update happens here, once)
        let mut tape_g: Tape<f32> = Tape::new();
        let gen_lease = self.gen.lease(&mut tape_g, Some(NetTag::Generator), true);
        let x_g = tape_g.leaf(x.clone(), false);
        let z_g = tape_g.leaf(z, false);
        let y_g = tape_g.leaf(y.clone(), false);
        let fake = generator_forward(
            &mut tape_g,
            &self.cfg.generator,
            &gen_lease,
            &mut self.gen_stats,
            x_g,
            z_g,
            BnMode::Train {
                update_running: true,
            },
        )?;
        let fake_value = tape_g.value(fake).clone();

        // discriminator phase(s): real pair vs detached fake pair
        let mut d_report = (0.0, 0.0, 0.0);
        let mut mean_real = 0.0;
        let mut mean_fake = 0.0;
        for _ in 0..self.cfg.train.d_steps {
            let mut tape_d: Tape<f32> = Tape::new();
            let disc_lease = self
                .disc
                .lease(&mut tape_d, Some(NetTag::Discriminator), true);
            let x_d = tape_d.leaf(x.clone(), false);
            let y_d = tape_d.leaf(y.clone(), false);
            let fake_d = tape_d.leaf(fake_value.clone(), false);
            let real_scores = discriminator_forward(
                &mut tape_d,
                &self.cfg.discriminator,
                &disc_lease,
                &mut self.disc_stats,
                x_d,
                y_d,
                BnMode::Train {
                    update_running: true,
                },
            )?;
            let fake_scores = discriminator_forward(
                &mut tape_d,
                &self.cfg.discriminator,
                &disc_lease,
                &mut self.disc_stats,
                x_d,
                fake_d,
                BnMode::Train {
                    update_running: true,
                },
            )?;
            let d = discriminator_loss(&mut tape_d, real_scores, fake_scores, &self.cfg.objective)?;
            d_report = (
                tape_d.value(d.real).item()?.as_f64(),
                tape_d.value(d.fake).item()?.as_f64(),
                tape_d.value(d.total).item()?.as_f64(),
            );
            mean_real = aggregate_patch_scores(&tape_d, real_scores)?;
            mean_fake = aggregate_patch_scores(&tape_d, fake_scores)?;
            if !(d_report.2.is_finite()) {
                return Err(Error::numeric(format!(
                    "non-finite discriminator loss {} at step {}",
                    d_report.2, self.step
                )));
            }
            tape_d.backward(d.total)?;
            let grads = Gradients::collect(&tape_d, &disc_lease);
            if !grads.all_finite() {
                return Err(Error::numeric(format!(
                    "non-finite discriminator gradients at step {}",
                    self.step
                )));
            }
            adam_step(
                &mut self.disc,
                grads,
                &mut self.adam_d,
                &self.cfg.optimizer_d,
            )?;
        }

        // generator phase through the updated discriminator
        let disc_lease_g = self
            .disc
            .lease(&mut tape_g, Some(NetTag::Discriminator), false);
        let fake_scores_g = discriminator_forward(
            &mut tape_g,
            &self.cfg.discriminator,
            &disc_lease_g,
            &mut self.disc_stats,
            x_g,
            fake,
            BnMode::Train {
                update_running: false,
            },
        )?;
        let g = generator_loss(&mut tape_g, fake_scores_g, y_g, fake, &self.cfg.objective)?;
        let g_report = (
            tape_g.value(g.adv).item()?.as_f64(),
            tape_g.value(g.l1).item()?.as_f64(),
            tape_g.value(g.total).item()?.as_f64(),
        );
        if !g_report.2.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite generator loss {} at step {}",
                g_report.2, self.step
            )));
        }
        tape_g.backward(g.total)?;
        let grads = Gradients::collect(&tape_g, &gen_lease);
        if !grads.all_finite() {
            return Err(Error::numeric(format!(
                "non-finite generator gradients at step {}",
                self.step
            )));
        }
        adam_step(
            &mut self.gen,
            grads,
            &mut self.adam_g,
            &self.cfg.optimizer_g,
        )?;

        self.step += 1;
        let report = TrainStepReport {
            epoch: self.epoch,
            losses: LossReport {
                step: self.step,
                d_loss_real: d_report.0,
                d_loss_fake: d_report.1,
                d_loss_total: d_report.2,
                g_adv_loss: g_report.0,
                g_l1_loss: g_report.1,
                g_total: g_report.2,
            },
            lr_g: self.adam_g.lr,
            lr_d: self.adam_d.lr,
            mean_real_score: mean_real,
            mean_fake_score: mean_fake,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            threads: rayon::current_num_threads(),
        };
        if !report.losses.all_finite() {
            return Err(Error::numeric(format!(
                "non-finite loss report at step {}",
                self.step
            )));
        }
        if let Some(log) = self.log.as_mut() {
            let line = serde_json::to_string(&report)
                .map_err(|e| Error::data(format!("log serialization failed: {e}")))?;
            writeln!(log, "{line}").map_err(|e| Error::io(&self.out_dir, e))?;
            log.flush().map_err(|e| Error::io(&self.out_dir, e))?;
        }
        Ok(report)
    }
}
