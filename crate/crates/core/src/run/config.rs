//! Run configuration: every tunable of a training/inference run in one
//! struct, serialized as flat `key = value` text with section prefixes.
//! The serialized form is canonical: it is written into the output
//! directory before step 0, embedded in checkpoints, and hashed for the
//! resume compatibility check.

use crate::data::augment::AugmentationConfig;
use crate::data::patches::PatchSpec;
use crate::data::DatasetKind;
use crate::error::{Error, Result};
use crate::eval::ThresholdMode;
use crate::models::{DiscriminatorConfig, GeneratorConfig};
use crate::objective::ObjectiveConfig;
use crate::optim::AdamConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub kind: DatasetKind,
    pub patch: PatchSpec,
    /// Random training crops drawn from each image per epoch.
    pub patches_per_image: usize,
    /// Train on whole padded images instead of crops (forces batch size 1).
    pub whole_image: bool,
    pub stare_leave_one_out: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            kind: DatasetKind::Generic,
            patch: PatchSpec::default(),
            patches_per_image: 8,
            whole_image: false,
            stare_leave_one_out: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub checkpoint_every_epochs: u64,
    /// Discriminator updates per generator update.
    pub d_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 4,
            seed: 42,
            checkpoint_every_epochs: 10,
            d_steps: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub use_mask: bool,
    /// "otsu" or "fixed".
    pub otsu: bool,
    pub fixed_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            use_mask: true,
            otsu: true,
            fixed_threshold: 0.5,
        }
    }
}

impl EvalConfig {
    pub fn threshold_mode(&self) -> ThresholdMode {
        if self.otsu {
            ThresholdMode::Otsu
        } else {
            ThresholdMode::Fixed(self.fixed_threshold)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferConfig {
    /// Draw z from the seeded stream; false means z = 0 everywhere.
    pub z_seeded: bool,
    pub z_seed: u64,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            z_seeded: true,
            z_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub objective: ObjectiveConfig,
    pub optimizer_g: AdamConfig,
    pub optimizer_d: AdamConfig,
    pub data: DataConfig,
    pub augment: AugmentationConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub infer: InferConfig,
}

impl RunConfig {
    /// Validate every section plus the cross-cutting constraints, and align
    /// the discriminator's input channels with the generator's.
    pub fn finalize(&mut self) -> Result<()> {
        self.discriminator.condition_channels = self.generator.image_channels;
        self.discriminator.candidate_channels = self.generator.output_channels;
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.objective.validate()?;
        self.optimizer_g.validate()?;
        self.optimizer_d.validate()?;
        if !self.data.whole_image {
            self.data
                .patch
                .validate(self.generator.required_multiple())?;
        }
        if self.data.patches_per_image == 0 {
            return Err(Error::config("data.patches_per_image must be >= 1"));
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return Err(Error::config(
                "train.epochs and train.batch_size must be >= 1",
            ));
        }
        if self.train.checkpoint_every_epochs == 0 {
            return Err(Error::config("train.checkpoint_every_epochs must be >= 1"));
        }
        if self.train.d_steps == 0 {
            return Err(Error::config("train.d_steps must be >= 1"));
        }
        if self.data.whole_image && self.train.batch_size != 1 {
            return Err(Error::config(
                "whole-image training requires train.batch_size = 1",
            ));
        }
        for (name, p) in [
            ("hflip_prob", self.augment.hflip_prob),
            ("vflip_prob", self.augment.vflip_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!(
                    "augment.{name} must lie in [0,1], got {p}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.eval.fixed_threshold) {
            return Err(Error::config("eval.fixed_threshold must lie in [0,1]"));
        }
        Ok(())
    }

    /// Canonical flat-text serialization; every key is present.
    pub fn serialize(&self) -> String {
        let g = &self.generator;
        let d = &self.discriminator;
        let o = &self.objective;
        let mut s = String::new();
        let kv = |s: &mut String, k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv(
            &mut s,
            "generator.image_channels",
            g.image_channels.to_string(),
        );
        kv(
            &mut s,
            "generator.noise_channels",
            g.noise_channels.to_string(),
        );
        kv(&mut s, "generator.depth", g.depth.to_string());
        kv(
            &mut s,
            "generator.base_channels",
            g.base_channels.to_string(),
        );
        kv(&mut s, "generator.max_channels", g.max_channels.to_string());
        kv(
            &mut s,
            "generator.output_channels",
            g.output_channels.to_string(),
        );
        kv(
            &mut s,
            "generator.skip_connections",
            g.skip_connections.to_string(),
        );
        kv(&mut s, "generator.norm_eps", g.norm_eps.to_string());
        kv(
            &mut s,
            "generator.norm_momentum",
            g.norm_momentum.to_string(),
        );
        kv(&mut s, "discriminator.depth", d.depth.to_string());
        kv(
            &mut s,
            "discriminator.base_channels",
            d.base_channels.to_string(),
        );
        kv(
            &mut s,
            "discriminator.max_channels",
            d.max_channels.to_string(),
        );
        kv(&mut s, "discriminator.norm_eps", d.norm_eps.to_string());
        kv(
            &mut s,
            "discriminator.norm_momentum",
            d.norm_momentum.to_string(),
        );
        kv(&mut s, "objective.lambda", o.lambda.to_string());
        kv(&mut s, "objective.bce_clamp", o.bce_clamp.to_string());
        kv(&mut s, "objective.saturating", o.saturating.to_string());
        for (prefix, a) in [
            ("optimizer.g", &self.optimizer_g),
            ("optimizer.d", &self.optimizer_d),
        ] {
            kv(&mut s, &format!("{prefix}.lr0"), a.lr0.to_string());
            kv(&mut s, &format!("{prefix}.beta1"), a.beta1.to_string());
            kv(&mut s, &format!("{prefix}.beta2"), a.beta2.to_string());
            kv(&mut s, &format!("{prefix}.eps"), a.eps.to_string());
            kv(
                &mut s,
                &format!("{prefix}.decay_factor"),
                a.decay_factor.to_string(),
            );
            kv(
                &mut s,
                &format!("{prefix}.decay_every"),
                a.decay_every.to_string(),
            );
            kv(
                &mut s,
                &format!("{prefix}.momentum_metadata"),
                a.momentum_metadata.to_string(),
            );
        }
        kv(
            &mut s,
            "data.kind",
            format!("{:?}", self.data.kind).to_lowercase(),
        );
        kv(&mut s, "data.patch_size", self.data.patch.size.to_string());
        kv(
            &mut s,
            "data.patch_stride",
            self.data.patch.stride.to_string(),
        );
        kv(
            &mut s,
            "data.patches_per_image",
            self.data.patches_per_image.to_string(),
        );
        kv(
            &mut s,
            "data.whole_image",
            self.data.whole_image.to_string(),
        );
        kv(
            &mut s,
            "data.stare_leave_one_out",
            self.data
                .stare_leave_one_out
                .map_or("none".to_string(), |v| v.to_string()),
        );
        kv(&mut s, "augment.enabled", self.augment.enabled.to_string());
        kv(
            &mut s,
            "augment.hflip_prob",
            self.augment.hflip_prob.to_string(),
        );
        kv(
            &mut s,
            "augment.vflip_prob",
            self.augment.vflip_prob.to_string(),
        );
        kv(&mut s, "augment.rot90", self.augment.rot90.to_string());
        kv(&mut s, "train.epochs", self.train.epochs.to_string());
        kv(
            &mut s,
            "train.batch_size",
            self.train.batch_size.to_string(),
        );
        kv(&mut s, "train.seed", self.train.seed.to_string());
        kv(
            &mut s,
            "train.checkpoint_every_epochs",
            self.train.checkpoint_every_epochs.to_string(),
        );
        kv(&mut s, "train.d_steps", self.train.d_steps.to_string());
        kv(&mut s, "eval.use_mask", self.eval.use_mask.to_string());
        kv(
            &mut s,
            "eval.threshold",
            if self.eval.otsu {
                "otsu".into()
            } else {
                "fixed".to_string()
            },
        );
        kv(
            &mut s,
            "eval.fixed_threshold",
            self.eval.fixed_threshold.to_string(),
        );
        kv(
            &mut s,
            "infer.z_mode",
            if self.infer.z_seeded {
                "seeded".into()
            } else {
                "zero".to_string()
            },
        );
        kv(&mut s, "infer.z_seed", self.infer.z_seed.to_string());
        s
    }

    /// Parse flat `key = value` text over the defaults. Unknown keys and
    /// malformed values are configuration errors naming the line.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!(
                    "line {}: expected 'key = value', got '{line}'",
                    lineno + 1
                ))
            })?;
            let (key, value) = (key.trim(), value.trim());
            cfg.apply(key, value)
                .map_err(|e| Error::config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.finalize()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::config(format!("bad value '{v}' for {key}")))
        }
        fn boolean(key: &str, v: &str) -> Result<bool> {
            match v {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(Error::config(format!(
                    "bad boolean '{v}' for {key} (true|false)"
                ))),
            }
        }
        match key {
            "generator.image_channels" => self.generator.image_channels = num(key, value)?,
            "generator.noise_channels" => self.generator.noise_channels = num(key, value)?,
            "generator.depth" => self.generator.depth = num(key, value)?,
            "generator.base_channels" => self.generator.base_channels = num(key, value)?,
            "generator.max_channels" => self.generator.max_channels = num(key, value)?,
            "generator.output_channels" => self.generator.output_channels = num(key, value)?,
            "generator.skip_connections" => self.generator.skip_connections = boolean(key, value)?,
            "generator.norm_eps" => self.generator.norm_eps = num(key, value)?,
            "generator.norm_momentum" => self.generator.norm_momentum = num(key, value)?,
            "discriminator.depth" => self.discriminator.depth = num(key, value)?,
            "discriminator.base_channels" => self.discriminator.base_channels = num(key, value)?,
            "discriminator.max_channels" => self.discriminator.max_channels = num(key, value)?,
            "discriminator.norm_eps" => self.discriminator.norm_eps = num(key, value)?,
            "discriminator.norm_momentum" => self.discriminator.norm_momentum = num(key, value)?,
            "objective.lambda" => self.objective.lambda = num(key, value)?,
            "objective.bce_clamp" => self.objective.bce_clamp = num(key, value)?,
            "objective.saturating" => self.objective.saturating = boolean(key, value)?,
            _ if key.starts_with("optimizer.") => {
                let rest = &key["optimizer.".len()..];
                let (which, field) = rest
                    .split_once('.')
                    .ok_or_else(|| Error::config(format!("unknown key '{key}'")))?;
                let adam = match which {
                    "g" => &mut self.optimizer_g,
                    "d" => &mut self.optimizer_d,
                    _ => return Err(Error::config(format!("unknown key '{key}'"))),
                };
                match field {
                    "lr0" => adam.lr0 = num(key, value)?,
                    "beta1" => adam.beta1 = num(key, value)?,
                    "beta2" => adam.beta2 = num(key, value)?,
                    "eps" => adam.eps = num(key, value)?,
                    "decay_factor" => adam.decay_factor = num(key, value)?,
                    "decay_every" => adam.decay_every = num(key, value)?,
                    "momentum_metadata" => adam.momentum_metadata = num(key, value)?,
                    _ => return Err(Error::config(format!("unknown key '{key}'"))),
                }
            }
            "data.kind" => self.data.kind = value.parse()?,
            "data.patch_size" => self.data.patch.size = num(key, value)?,
            "data.patch_stride" => self.data.patch.stride = num(key, value)?,
            "data.patches_per_image" => self.data.patches_per_image = num(key, value)?,
            "data.whole_image" => self.data.whole_image = boolean(key, value)?,
            "data.stare_leave_one_out" => {
                self.data.stare_leave_one_out = if value == "none" {
                    None
                } else {
                    Some(num(key, value)?)
                };
            }
            "augment.enabled" => self.augment.enabled = boolean(key, value)?,
            "augment.hflip_prob" => self.augment.hflip_prob = num(key, value)?,
            "augment.vflip_prob" => self.augment.vflip_prob = num(key, value)?,
            "augment.rot90" => self.augment.rot90 = boolean(key, value)?,
            "train.epochs" => self.train.epochs = num(key, value)?,
            "train.batch_size" => self.train.batch_size = num(key, value)?,
            "train.seed" => self.train.seed = num(key, value)?,
            "train.checkpoint_every_epochs" => {
                self.train.checkpoint_every_epochs = num(key, value)?
            }
            "train.d_steps" => self.train.d_steps = num(key, value)?,
            "eval.use_mask" => self.eval.use_mask = boolean(key, value)?,
            "eval.threshold" => {
                self.eval.otsu = match value {
                    "otsu" => true,
                    "fixed" => false,
                    _ => {
                        return Err(Error::config(format!(
                            "bad value '{value}' for eval.threshold (otsu|fixed)"
                        )))
                    }
                }
            }
            "eval.fixed_threshold" => self.eval.fixed_threshold = num(key, value)?,
            "infer.z_mode" => {
                self.infer.z_seeded = match value {
                    "seeded" => true,
                    "zero" => false,
                    _ => {
                        return Err(Error::config(format!(
                            "bad value '{value}' for infer.z_mode (seeded|zero)"
                        )))
                    }
                }
            }
            "infer.z_seed" => self.infer.z_seed = num(key, value)?,
            _ => return Err(Error::config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// FNV-1a over the canonical serialization.
    pub fn hash(&self) -> u64 {
        fnv1a(self.serialize().as_bytes())
    }

    /// Hash for resume compatibility: run-length keys (epoch budget and
    /// checkpoint cadence) may change between a checkpoint and its resume,
    /// everything else must match.
    pub fn compatible_hash(&self) -> u64 {
        compatible_hash_of(&self.serialize())
    }
}

/// See [`RunConfig::compatible_hash`].
pub fn compatible_hash_of(serialized: &str) -> u64 {
    let filtered: String = serialized
        .lines()
        .filter(|l| {
            !l.starts_with("train.epochs") && !l.starts_with("train.checkpoint_every_epochs")
        })
        .fold(String::new(), |mut acc, l| {
            acc.push_str(l);
            acc.push('\n');
            acc
        });
    fnv1a(filtered.as_bytes())
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h = (h ^ b as u64).wrapping_mul(0x100000001b3);
    }
    h
}
