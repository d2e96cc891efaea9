//! The conditional generator and the patch-based discriminator.
//!
//! Both networks are built from stride-2 4x4 conv stages; the generator
//! mirrors its encoder with transposed-conv stages joined by skip
//! connections, the discriminator ends in a 1-channel conv head whose
//! output grid is the per-patch score map.

mod discriminator;
mod generator;

pub use discriminator::{build_discriminator, discriminator_forward, DiscriminatorConfig};
pub use generator::{build_generator, generator_forward, GeneratorConfig};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::tensor::conv::ConvSpec;
use crate::tensor::{Scalar, Shape, Tensor};

/// All stages share this geometry: 4x4 kernel, stride 2, pad 1, which
/// exactly halves (conv) or doubles (transposed conv) even extents.
pub const STAGE_KERNEL: usize = 4;
pub fn stage_spec() -> ConvSpec {
    ConvSpec::new(2, 1)
}

/// Slope of the encoder/discriminator leaky relu.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Noise fed to the generator: one standard-normal channel per sample,
/// drawn fresh from the seeded stream at every training step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoiseSpec {
    pub channels: usize,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec { channels: 1 }
    }
}

impl NoiseSpec {
    pub fn sample<E: Scalar, R: Rng>(
        &self,
        rng: &mut R,
        n: usize,
        h: usize,
        w: usize,
    ) -> Tensor<E> {
        let dist = Normal::new(0.0f64, 1.0).expect("valid normal");
        let shape = Shape::new(n, self.channels, h, w);
        let data = (0..shape.numel())
            .map(|_| E::from_f64(dist.sample(rng)))
            .collect();
        Tensor::from_vec(shape, data).expect("matching length")
    }

    /// All-zero noise for deterministic deployment.
    pub fn zeros<E: Scalar>(&self, n: usize, h: usize, w: usize) -> Tensor<E> {
        Tensor::zeros(Shape::new(n, self.channels, h, w))
    }
}

/// Conv kernels and norm gains are drawn from narrow normals; biases and
/// shifts start at zero. Draws happen in f64 so a given seed produces the
/// same network in f32 and f64.
pub(crate) struct Init<'r, R: Rng> {
    rng: &'r mut R,
}

impl<'r, R: Rng> Init<'r, R> {
    pub fn new(rng: &'r mut R) -> Self {
        Init { rng }
    }

    pub fn conv_kernel<E: Scalar>(&mut self, shape: Shape) -> Tensor<E> {
        self.normal(shape, 0.0, 0.02)
    }

    pub fn norm_gamma<E: Scalar>(&mut self, channels: usize) -> Tensor<E> {
        self.normal(Shape::new(1, channels, 1, 1), 1.0, 0.02)
    }

    fn normal<E: Scalar>(&mut self, shape: Shape, mean: f64, std: f64) -> Tensor<E> {
        let dist = Normal::new(mean, std).expect("valid normal");
        let data = (0..shape.numel())
            .map(|_| E::from_f64(dist.sample(self.rng)))
            .collect();
        Tensor::from_vec(shape, data).expect("matching length")
    }
}

pub(crate) fn insert_conv<E: Scalar, R: Rng>(
    store: &mut ParameterStore<E>,
    init: &mut Init<'_, R>,
    prefix: &str,
    kernel_shape: Shape,
    out_channels: usize,
) -> Result<()> {
    store.insert(format!("{prefix}/kernel"), init.conv_kernel(kernel_shape))?;
    store.insert(
        format!("{prefix}/bias"),
        Tensor::zeros(Shape::new(1, out_channels, 1, 1)),
    )?;
    Ok(())
}

pub(crate) fn insert_norm<E: Scalar, R: Rng>(
    store: &mut ParameterStore<E>,
    stats: &mut crate::params::RunningStats<E>,
    init: &mut Init<'_, R>,
    prefix: &str,
    channels: usize,
) -> Result<()> {
    store.insert(format!("{prefix}/gamma"), init.norm_gamma(channels))?;
    store.insert(
        format!("{prefix}/beta"),
        Tensor::zeros(Shape::new(1, channels, 1, 1)),
    )?;
    stats.register(prefix, channels)?;
    Ok(())
}

/// Doubling-with-cap channel plan shared by both networks.
pub(crate) fn channel_plan(base: usize, max: usize, depth: usize) -> Vec<usize> {
    (0..depth).map(|i| (base << i).min(max)).collect()
}

pub(crate) fn check_positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::config(format!("{name} must be positive")));
    }
    Ok(())
}
