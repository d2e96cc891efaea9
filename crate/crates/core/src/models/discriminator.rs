//! Patch-based discriminator: stride-2 conv stages followed by a 1-channel
//! conv head. Each cell of the head's output grid scores one receptive-field
//! patch of the (condition, candidate) pair; patches are treated as
//! independent — no cross-patch pooling happens before the score map.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    channel_plan, check_positive, insert_conv, insert_norm, stage_spec, Init, LEAKY_SLOPE,
    STAGE_KERNEL,
};
use crate::error::{Error, Result};
use crate::params::{Lease, ParameterStore, RunningStats};
use crate::tensor::conv::ConvSpec;
use crate::tensor::tape::{ActivationKind, BnMode, Tape, TensorId};
use crate::tensor::{Scalar, Shape};

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    /// Channels of the conditional input (3 for RGB fundus images).
    pub condition_channels: usize,
    /// Channels of the candidate map under judgement (1).
    pub candidate_channels: usize,
    /// Number of stride-2 stages before the score head.
    pub depth: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub norm_eps: f64,
    pub norm_momentum: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            condition_channels: 3,
            candidate_channels: 1,
            depth: 3,
            base_channels: 64,
            max_channels: 512,
            norm_eps: 1e-5,
            norm_momentum: 0.1,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive("discriminator condition_channels", self.condition_channels)?;
        check_positive("discriminator candidate_channels", self.candidate_channels)?;
        check_positive("discriminator depth", self.depth)?;
        check_positive("discriminator base_channels", self.base_channels)?;
        check_positive("discriminator max_channels", self.max_channels)?;
        if self.norm_eps <= 0.0 {
            return Err(Error::config("discriminator norm_eps must be > 0"));
        }
        Ok(())
    }

    pub fn stage_channels(&self) -> Vec<usize> {
        channel_plan(self.base_channels, self.max_channels, self.depth)
    }

    fn head_spec() -> ConvSpec {
        ConvSpec::new(1, 1)
    }

    /// Patch grid (gH, gW) of the score map for a given input size. Errors
    /// when any stage or the head would produce an empty output, i.e. when
    /// the patch count n would be 0.
    pub fn patch_grid(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let mut cur = (h, w);
        let spec = stage_spec();
        for i in 0..self.depth {
            cur = spec
                .conv_out_extent(cur, (STAGE_KERNEL, STAGE_KERNEL))
                .ok_or_else(|| {
                    Error::config(format!(
                        "discriminator stage {} reduces {}x{} below 1x1; patch count would be 0",
                        i + 1,
                        h,
                        w
                    ))
                })?;
        }
        Self::head_spec()
            .conv_out_extent(cur, (STAGE_KERNEL, STAGE_KERNEL))
            .ok_or_else(|| {
                Error::config(format!(
                    "discriminator head reduces {}x{} below 1x1; patch count would be 0",
                    h, w
                ))
            })
    }

    /// Patch count n = gH * gW.
    pub fn patch_count(&self, h: usize, w: usize) -> Result<usize> {
        let (gh, gw) = self.patch_grid(h, w)?;
        Ok(gh * gw)
    }

    /// Side length of the input patch scored by one output cell, from the
    /// standard receptive-field recurrence rf' = rf*stride + (k - stride).
    pub fn receptive_field(&self) -> usize {
        let mut rf = 1usize;
        rf += STAGE_KERNEL - 1; // head, stride 1
        for _ in 0..self.depth {
            rf = rf * 2 + (STAGE_KERNEL - 2);
        }
        rf
    }
}

fn stage_prefix(i: usize) -> String {
    format!("disc/stage{}", i + 1)
}

/// Build a freshly initialized discriminator.
pub fn build_discriminator<E: Scalar>(
    cfg: &DiscriminatorConfig,
    seed: u64,
) -> Result<(ParameterStore<E>, RunningStats<E>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = Init::new(&mut rng);
    let mut store = ParameterStore::new();
    let mut stats = RunningStats::new();

    let mut in_ch = cfg.condition_channels + cfg.candidate_channels;
    for (i, &out_ch) in cfg.stage_channels().iter().enumerate() {
        let prefix = stage_prefix(i);
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
    let kshape = Shape::new(1, in_ch, STAGE_KERNEL, STAGE_KERNEL);
    insert_conv(&mut store, &mut init, "disc/head", kshape, 1)?;
    Ok((store, stats))
}

/// Score every patch of the (condition, candidate) pair. Returns the patch
/// score map, shape (N, 1, gH, gW) with every value in (0,1).
pub fn discriminator_forward<E: Scalar>(
    tape: &mut Tape<E>,
    cfg: &DiscriminatorConfig,
    lease: &Lease,
    stats: &mut RunningStats<E>,
    x: TensorId,
    candidate: TensorId,
    mode: BnMode,
) -> Result<TensorId> {
    let xs = tape.shape(x);
    let cs = tape.shape(candidate);
    if xs.c() != cfg.condition_channels {
        return Err(Error::shape(format!(
            "discriminator expects {} condition channels, got {}",
            cfg.condition_channels, xs
        )));
    }
    if cs.c() != cfg.candidate_channels || cs.n() != xs.n() || cs.spatial() != xs.spatial() {
        return Err(Error::contract(format!(
            "candidate shape {cs} incompatible with condition {xs} (want {}x{}x{}x{})",
            xs.n(),
            cfg.candidate_channels,
            xs.h(),
            xs.w()
        )));
    }
    // fail fast (and with a clearer message) when the grid would be empty
    cfg.patch_grid(xs.h(), xs.w())?;

    let spec = stage_spec();
    let mut h = tape.concat_channels(x, candidate)?;
    for i in 0..cfg.depth {
        let prefix = stage_prefix(i);
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
    }
    let k = lease.id("disc/head/kernel")?;
    let b = lease.id("disc/head/bias")?;
    h = tape.conv2d(h, k, b, DiscriminatorConfig::head_spec())?;
    tape.activation(h, ActivationKind::Sigmoid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::tape::NetTag;
    use crate::tensor::Tensor;

    fn small_cfg() -> DiscriminatorConfig {
        DiscriminatorConfig {
            depth: 2,
            base_channels: 8,
            max_channels: 16,
            ..Default::default()
        }
    }

    #[test]
    fn patch_grid_follows_extent_formula() {
        let cfg = DiscriminatorConfig::default();
        // 256 -> 128 -> 64 -> 32 (three stride-2 stages), head k4 s1 p1: 31
        assert_eq!(cfg.patch_grid(256, 256).unwrap(), (31, 31));
        assert_eq!(cfg.patch_count(256, 256).unwrap(), 961);
        // 128 -> 64 -> 32 -> 16, head: 15
        assert_eq!(cfg.patch_grid(128, 128).unwrap(), (15, 15));
    }

    #[test]
    fn vanishing_grid_is_config_error() {
        let cfg = DiscriminatorConfig::default();
        assert!(cfg.patch_grid(4, 4).is_err());
    }

    #[test]
    fn receptive_field_recurrence() {
        assert_eq!(DiscriminatorConfig::default().receptive_field(), 46);
        let shallow = DiscriminatorConfig {
            depth: 1,
            ..Default::default()
        };
        assert_eq!(shallow.receptive_field(), 10);
    }

    #[test]
    fn zero_weights_score_every_patch_half() {
        let cfg = small_cfg();
        let (store, mut stats) = build_discriminator::<f32>(&cfg, 3).unwrap();
        let mut zeroed = ParameterStore::new();
        for (name, t) in store.iter() {
            zeroed
                .insert(name.clone(), Tensor::zeros(t.shape()))
                .unwrap();
        }
        let mut tape = Tape::new();
        let lease = zeroed.lease(&mut tape, Some(NetTag::Discriminator), false);
        let x = tape.leaf(Tensor::full(Shape::new(1, 3, 16, 16), 0.4), false);
        let cand = tape.leaf(Tensor::full(Shape::new(1, 1, 16, 16), 0.6), false);
        let scores =
            discriminator_forward(&mut tape, &cfg, &lease, &mut stats, x, cand, BnMode::Eval)
                .unwrap();
        assert!(tape.value(scores).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn scores_lie_strictly_inside_unit_interval() {
        let cfg = small_cfg();
        let (store, mut stats) = build_discriminator::<f32>(&cfg, 5).unwrap();
        let mut tape = Tape::new();
        let lease = store.lease(&mut tape, Some(NetTag::Discriminator), false);
        let x = tape.leaf(Tensor::full(Shape::new(2, 3, 16, 16), 0.9), false);
        let cand = tape.leaf(Tensor::full(Shape::new(2, 1, 16, 16), 0.1), false);
        let scores = discriminator_forward(
            &mut tape,
            &cfg,
            &lease,
            &mut stats,
            x,
            cand,
            BnMode::Train {
                update_running: false,
            },
        )
        .unwrap();
        let (gh, gw) = cfg.patch_grid(16, 16).unwrap();
        assert_eq!(tape.shape(scores), Shape::new(2, 1, gh, gw));
        assert!(tape
            .value(scores)
            .data()
            .iter()
            .all(|&v| 0.0 < v && v < 1.0));
    }

    #[test]
    fn batch_order_permutation_permutes_scores() {
        let cfg = small_cfg();
        let (store, stats) = build_discriminator::<f32>(&cfg, 5).unwrap();
        let mk = |flip: bool| {
            let mut stats = stats.clone();
            let mut tape = Tape::new();
            let lease = store.lease(&mut tape, Some(NetTag::Discriminator), false);
            let mut xv = Vec::new();
            let mut cv = Vec::new();
            let samples: [f32; 2] = if flip { [0.8, 0.2] } else { [0.2, 0.8] };
            for &s in &samples {
                xv.extend(std::iter::repeat_n(s, 3 * 16 * 16));
                cv.extend(std::iter::repeat_n(1.0 - s, 16 * 16));
            }
            let x = tape.leaf(
                Tensor::from_vec(Shape::new(2, 3, 16, 16), xv).unwrap(),
                false,
            );
            let cand = tape.leaf(
                Tensor::from_vec(Shape::new(2, 1, 16, 16), cv).unwrap(),
                false,
            );
            let scores =
                discriminator_forward(&mut tape, &cfg, &lease, &mut stats, x, cand, BnMode::Eval)
                    .unwrap();
            tape.value(scores).clone()
        };
        let fwd = mk(false);
        let rev = mk(true);
        let half = fwd.numel() / 2;
        assert_eq!(&fwd.data()[..half], &rev.data()[half..]);
        assert_eq!(&fwd.data()[half..], &rev.data()[..half]);
    }
}
