//! Encoder/decoder generator with skip connections.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    channel_plan, check_positive, insert_conv, insert_norm, stage_spec, Init, LEAKY_SLOPE,
    STAGE_KERNEL,
};
use crate::error::{Error, Result};
use crate::params::{Lease, ParameterStore, RunningStats};
use crate::tensor::tape::{ActivationKind, BnMode, Tape, TensorId};
use crate::tensor::{Scalar, Shape};

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    /// Channels of the conditional input (3 for RGB fundus images).
    pub image_channels: usize,
    /// Noise channels concatenated to the input (1).
    pub noise_channels: usize,
    /// Number of stride-2 downsampling stages.
    pub depth: usize,
    /// Channels after the first stage; doubles per stage up to `max_channels`.
    pub base_channels: usize,
    pub max_channels: usize,
    pub output_channels: usize,
    /// Ablation switch for the encoder-to-decoder skip concatenations.
    pub skip_connections: bool,
    pub norm_eps: f64,
    pub norm_momentum: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            image_channels: 3,
            noise_channels: 1,
            depth: 5,
            base_channels: 64,
            max_channels: 512,
            output_channels: 1,
            skip_connections: true,
            norm_eps: 1e-5,
            norm_momentum: 0.1,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive("generator image_channels", self.image_channels)?;
        check_positive("generator noise_channels", self.noise_channels)?;
        check_positive("generator depth", self.depth)?;
        check_positive("generator base_channels", self.base_channels)?;
        check_positive("generator max_channels", self.max_channels)?;
        check_positive("generator output_channels", self.output_channels)?;
        if self.norm_eps <= 0.0 {
            return Err(Error::config("generator norm_eps must be > 0"));
        }
        Ok(())
    }

    /// Input spatial extents must be divisible by this.
    pub fn required_multiple(&self) -> usize {
        1 << self.depth
    }

    /// Output channels of each encoder stage.
    pub fn encoder_channels(&self) -> Vec<usize> {
        channel_plan(self.base_channels, self.max_channels, self.depth)
    }

    /// Output channels of each decoder stage (mirror of the encoder, last
    /// stage emits the probability map).
    pub fn decoder_channels(&self) -> Vec<usize> {
        let enc = self.encoder_channels();
        let mut dec: Vec<usize> = (0..self.depth.saturating_sub(1))
            .map(|j| enc[self.depth - 2 - j])
            .collect();
        dec.push(self.output_channels);
        dec
    }

    /// Input channels of each decoder stage: the previous decoder output
    /// plus the mirrored encoder stage. Independent of the ablation flag,
    /// which zeroes the skip data without changing any shapes.
    pub fn decoder_input_channels(&self) -> Vec<usize> {
        let enc = self.encoder_channels();
        let dec = self.decoder_channels();
        (0..self.depth)
            .map(|j| {
                if j == 0 {
                    enc[self.depth - 1]
                } else {
                    dec[j - 1] + enc[self.depth - 1 - j]
                }
            })
            .collect()
    }
}

fn enc_prefix(i: usize) -> String {
    format!("gen/enc{}", i + 1)
}

fn dec_prefix(j: usize) -> String {
    format!("gen/dec{}", j + 1)
}

/// Build a freshly initialized generator: stride-2 conv encoder (batch norm
/// except the first stage, leaky relu), transposed-conv decoder (batch norm
/// except the last stage, relu), sigmoid head.
pub fn build_generator<E: Scalar>(
    cfg: &GeneratorConfig,
    seed: u64,
) -> Result<(ParameterStore<E>, RunningStats<E>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = Init::new(&mut rng);
    let mut store = ParameterStore::new();
    let mut stats = RunningStats::new();

    let enc = cfg.encoder_channels();
    let mut in_ch = cfg.image_channels + cfg.noise_channels;
    for (i, &out_ch) in enc.iter().enumerate() {
        let prefix = enc_prefix(i);
        let kshape = Shape::new(out_ch, in_ch, STAGE_KERNEL, STAGE_KERNEL);
        insert_conv(
            &mut store,
            &mut init,
            &format!("{prefix}/conv"),
            kshape,
            out_ch,
        )?;
        if i > 0 {
            insert_norm(
                &mut store,
                &mut stats,
                &mut init,
                &format!("{prefix}/norm"),
                out_ch,
            )?;
        }
        in_ch = out_ch;
    }

    let dec_in = cfg.decoder_input_channels();
    let dec_out = cfg.decoder_channels();
    for j in 0..cfg.depth {
        let prefix = dec_prefix(j);
        // transposed-conv kernels are laid out (inC, outC, kH, kW)
        let kshape = Shape::new(dec_in[j], dec_out[j], STAGE_KERNEL, STAGE_KERNEL);
        insert_conv(
            &mut store,
            &mut init,
            &format!("{prefix}/conv"),
            kshape,
            dec_out[j],
        )?;
        if j + 1 < cfg.depth {
            insert_norm(
                &mut store,
                &mut stats,
                &mut init,
                &format!("{prefix}/norm"),
                dec_out[j],
            )?;
        }
    }
    Ok((store, stats))
}

/// Run the generator on conditional input `x` and noise `z` (concatenated
/// along channels). Output is a probability map in (0,1) with the input's
/// spatial extents.
pub fn generator_forward<E: Scalar>(
    tape: &mut Tape<E>,
    cfg: &GeneratorConfig,
    lease: &Lease,
    stats: &mut RunningStats<E>,
    x: TensorId,
    z: TensorId,
    mode: BnMode,
) -> Result<TensorId> {
    let xs = tape.shape(x);
    let zs = tape.shape(z);
    if xs.c() != cfg.image_channels {
        return Err(Error::shape(format!(
            "generator expects {} image channels, got input {}",
            cfg.image_channels, xs
        )));
    }
    if zs.c() != cfg.noise_channels || zs.n() != xs.n() || zs.spatial() != xs.spatial() {
        return Err(Error::contract(format!(
            "noise shape {zs} incompatible with input {xs} (want {}x{}x{}x{})",
            xs.n(),
            cfg.noise_channels,
            xs.h(),
            xs.w()
        )));
    }
    let multiple = cfg.required_multiple();
    if !xs.h().is_multiple_of(multiple) || !xs.w().is_multiple_of(multiple) {
        return Err(Error::config(format!(
            "generator input extents {}x{} must be divisible by {multiple} (depth {})",
            xs.h(),
            xs.w(),
            cfg.depth
        )));
    }

    let spec = stage_spec();
    let mut h = tape.concat_channels(x, z)?;
    let mut enc_outs = Vec::with_capacity(cfg.depth);
    for i in 0..cfg.depth {
        let prefix = enc_prefix(i);
        let k = lease.id(&format!("{prefix}/conv/kernel"))?;
        let b = lease.id(&format!("{prefix}/conv/bias"))?;
        h = tape.conv2d(h, k, b, spec)?;
        if i > 0 {
            let norm = format!("{prefix}/norm");
            let gamma = lease.id(&format!("{norm}/gamma"))?;
            let beta = lease.id(&format!("{norm}/beta"))?;
            let (rm, rv) = stats.pair_mut(&norm)?;
            h = tape.batch_norm2d(
                h,
                gamma,
                beta,
                rm,
                rv,
                mode,
                cfg.norm_eps,
                cfg.norm_momentum,
            )?;
        }
        h = tape.activation(h, ActivationKind::LeakyRelu { alpha: LEAKY_SLOPE })?;
        enc_outs.push(h);
    }

    for j in 0..cfg.depth {
        let prefix = dec_prefix(j);
        let k = lease.id(&format!("{prefix}/conv/kernel"))?;
        let b = lease.id(&format!("{prefix}/conv/bias"))?;
        h = tape.conv_transpose2d(h, k, b, spec)?;
        if j + 1 < cfg.depth {
            let norm = format!("{prefix}/norm");
            let gamma = lease.id(&format!("{norm}/gamma"))?;
            let beta = lease.id(&format!("{norm}/beta"))?;
            let (rm, rv) = stats.pair_mut(&norm)?;
            h = tape.batch_norm2d(
                h,
                gamma,
                beta,
                rm,
                rv,
                mode,
                cfg.norm_eps,
                cfg.norm_momentum,
            )?;
            h = tape.activation(h, ActivationKind::Relu)?;
            let skip = enc_outs[cfg.depth - 2 - j];
            let skip = if cfg.skip_connections {
                skip
            } else {
                // ablation: same shapes, skip data cut
                tape.constant(crate::tensor::Tensor::zeros(tape.shape(skip)))
            };
            h = tape.concat_channels(h, skip)?;
        } else {
            h = tape.activation(h, ActivationKind::Sigmoid)?;
        }
    }
    Ok(h)
}
