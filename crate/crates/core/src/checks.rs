//! Prebuilt finite-difference gradient suites over every layer type, the
//! composite losses, and the full networks at desk scale. All suites run in
//! f64 with step 1e-3 against a 1e-4 relative tolerance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::models::{
    build_discriminator, build_generator, discriminator_forward, generator_forward,
    DiscriminatorConfig, GeneratorConfig,
};
use crate::objective::{
    bce, discriminator_loss, generator_loss, l1_loss, BceTarget, ObjectiveConfig,
};
use crate::params::ParameterStore;
use crate::tensor::conv::ConvSpec;
use crate::tensor::gradcheck::{grad_check, GradCheckReport};
use crate::tensor::tape::{ActivationKind, BnMode, NetTag};
use crate::tensor::{Shape, Tensor};

pub const FD_STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;
const SAMPLES_PER_CHECK: usize = 20;

#[derive(Clone, Debug)]
pub struct NamedReport {
    pub name: String,
    pub report: GradCheckReport,
}

impl NamedReport {
    pub fn passes(&self) -> bool {
        self.report.passes(TOLERANCE)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Conv,
    Loss,
    Model,
    All,
}

impl std::str::FromStr for Suite {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv" => Ok(Suite::Conv),
            "loss" => Ok(Suite::Loss),
            "model" => Ok(Suite::Model),
            "all" => Ok(Suite::All),
            other => Err(crate::error::Error::config(format!(
                "unknown gradcheck module '{other}' (expected all|conv|loss|model)"
            ))),
        }
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    let data = (0..shape.numel()).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).expect("matching length")
}

fn single_param(name: &str, t: Tensor<f64>) -> ParameterStore<f64> {
    let mut store = ParameterStore::new();
    store.insert(name, t).expect("fresh store");
    store
}

/// Layer-type suite: conv2d, conv_transpose2d, batch norm (both modes),
/// every activation, and the elementwise ops, each wrapped nonlinearly so
/// the checked gradients are position-dependent.
pub fn suite_conv() -> Result<Vec<NamedReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0);
    let mut out = Vec::new();

    for (name, stride, pad) in [
        ("conv2d s1 p0", 1, 0),
        ("conv2d s2 p1", 2, 1),
        ("conv2d s1 p1", 1, 1),
    ] {
        let mut params = ParameterStore::new();
        params.insert(
            "x",
            rand_tensor(&mut rng, Shape::new(1, 3, 8, 8), -1.0, 1.0),
        )?;
        params.insert(
            "k",
            rand_tensor(&mut rng, Shape::new(4, 3, 3, 3), -0.5, 0.5),
        )?;
        params.insert(
            "b",
            rand_tensor(&mut rng, Shape::new(1, 4, 1, 1), -0.2, 0.2),
        )?;
        let spec = ConvSpec::new(stride, pad);
        let report = grad_check(
            move |tape, lease| {
                let y = tape.conv2d(lease.id("x")?, lease.id("k")?, lease.id("b")?, spec)?;
                let sq = tape.mul(y, y)?;
                tape.mean(sq)
            },
            &params,
            SAMPLES_PER_CHECK,
            FD_STEP,
            &mut rng,
        )?;
        out.push(NamedReport {
            name: name.into(),
            report,
        });
    }

    for (name, stride, pad) in [
        ("conv_transpose2d s1 p0", 1, 0),
        ("conv_transpose2d s2 p1", 2, 1),
    ] {
        let mut params = ParameterStore::new();
        params.insert(
            "x",
            rand_tensor(&mut rng, Shape::new(1, 4, 5, 5), -1.0, 1.0),
        )?;
        params.insert(
            "k",
            rand_tensor(&mut rng, Shape::new(4, 2, 4, 4), -0.5, 0.5),
        )?;
        params.insert(
            "b",
            rand_tensor(&mut rng, Shape::new(1, 2, 1, 1), -0.2, 0.2),
        )?;
        let spec = ConvSpec::new(stride, pad);
        let report = grad_check(
            move |tape, lease| {
                let y =
                    tape.conv_transpose2d(lease.id("x")?, lease.id("k")?, lease.id("b")?, spec)?;
                let sq = tape.mul(y, y)?;
                tape.mean(sq)
            },
            &params,
            SAMPLES_PER_CHECK,
            FD_STEP,
            &mut rng,
        )?;
        out.push(NamedReport {
            name: name.into(),
            report,
        });
    }

    for (name, eval_mode) in [("batch_norm2d train", false), ("batch_norm2d eval", true)] {
        let mut params = ParameterStore::new();
        params.insert(
            "x",
            rand_tensor(&mut rng, Shape::new(2, 3, 4, 4), -2.0, 2.0),
        )?;
        params.insert(
            "gamma",
            rand_tensor(&mut rng, Shape::new(1, 3, 1, 1), 0.5, 1.5),
        )?;
        params.insert(
            "beta",
            rand_tensor(&mut rng, Shape::new(1, 3, 1, 1), -0.5, 0.5),
        )?;
        let rm = rand_tensor(&mut rng, Shape::new(1, 3, 1, 1), -0.3, 0.3);
        let rv = rand_tensor(&mut rng, Shape::new(1, 3, 1, 1), 0.5, 1.5);
        let report = grad_check(
            move |tape, lease| {
                let mut rm = rm.clone();
                let mut rv = rv.clone();
                let mode = if eval_mode {
                    BnMode::Eval
                } else {
                    BnMode::Train {
                        update_running: false,
                    }
                };
                let y = tape.batch_norm2d(
                    lease.id("x")?,
                    lease.id("gamma")?,
                    lease.id("beta")?,
                    &mut rm,
                    &mut rv,
                    mode,
                    1e-5,
                    0.1,
                )?;
                let sq = tape.mul(y, y)?;
                tape.mean(sq)
            },
            &params,
            SAMPLES_PER_CHECK,
            FD_STEP,
            &mut rng,
        )?;
        out.push(NamedReport {
            name: name.into(),
            report,
        });
    }

    for (name, kind) in [
        ("relu", ActivationKind::Relu),
        ("leaky_relu 0.2", ActivationKind::LeakyRelu { alpha: 0.2 }),
        ("sigmoid", ActivationKind::Sigmoid),
        ("tanh", ActivationKind::Tanh),
    ] {
        let params = single_param(
            "x",
            rand_tensor(&mut rng, Shape::new(1, 4, 6, 6), -2.0, 2.0),
        );
        let report = grad_check(
            move |tape, lease| {
                let y = tape.activation(lease.id("x")?, kind)?;
                let sq = tape.mul(y, y)?;
                tape.mean(sq)
            },
            &params,
            SAMPLES_PER_CHECK,
            FD_STEP,
            &mut rng,
        )?;
        out.push(NamedReport {
            name: format!("activation {name}"),
            report,
        });
    }

    // elementwise family: ((a-b)*a + |b|) averaged, log on a positive branch,
    // concat split across channels
    {
        let mut params = ParameterStore::new();
        params.insert(
            "a",
            rand_tensor(&mut rng, Shape::new(1, 2, 5, 5), -1.0, 1.0),
        )?;
        params.insert(
            "b",
            rand_tensor(&mut rng, Shape::new(1, 2, 5, 5), -1.0, 1.0),
        )?;
        let report = grad_check(
            |tape, lease| {
                let a = lease.id("a")?;
                let b = lease.id("b")?;
                let diff = tape.sub(a, b)?;
                let prod = tape.mul(diff, a)?;
                let mag = tape.abs(b)?;
                let sum = tape.add(prod, mag)?;
                let scaled = tape.mul_scalar(sum, 0.7)?;
                let shifted = tape.add_scalar(scaled, 0.1)?;
                tape.mean(shifted)
            },
            &params,
            SAMPLES_PER_CHECK,
            FD_STEP,
            &mut rng,
        )?;
        out.push(NamedReport {
            name: "elementwise add/sub/mul/abs/scalars".into(),
            report,
        });
    }
    {
        let params = single_param("x", rand_tensor(&mut rng, Shape::new(1, 1, 4, 4), 0.2, 3.0));
        let report = grad_check(
            |tape, lease| {
                let y = tape.log(lease.id("x")?)?;
                tape.mean(y)
            },
            &params,
            SAMPLES_PER_CHECK,
            FD_STEP,
            &mut rng,
        )?;
        out.push(NamedReport {
            name: "elementwise log".into(),
            report,
        });
    }
    {
        let mut params = ParameterStore::new();
        params.insert(
            "a",
            rand_tensor(&mut rng, Shape::new(2, 2, 3, 3), -1.0, 1.0),
        )?;
        params.insert(
            "b",
            rand_tensor(&mut rng, Shape::new(2, 3, 3, 3), -1.0, 1.0),
        )?;
        let report = grad_check(
            |tape, lease| {
                let cat = tape.concat_channels(lease.id("a")?, lease.id("b")?)?;
                let sq = tape.mul(cat, cat)?;
                tape.mean(sq)
            },
            &params,
            SAMPLES_PER_CHECK,
            FD_STEP,
            &mut rng,
        )?;
        out.push(NamedReport {
            name: "elementwise concat_channels".into(),
            report,
        });
    }
    {
        let params = single_param(
            "x",
            rand_tensor(&mut rng, Shape::new(1, 1, 3, 5), -2.0, 2.0),
        );
        let report = grad_check(
            |tape, lease| {
                let c = tape.clamp(lease.id("x")?, -1.0, 1.0)?;
                let sq = tape.mul(c, c)?;
                tape.mean(sq)
            },
            &params,
            SAMPLES_PER_CHECK,
            FD_STEP,
            &mut rng,
        )?;
        out.push(NamedReport {
            name: "elementwise clamp".into(),
            report,
        });
    }
    Ok(out)
}

/// Objective suite: L1, both BCE targets, the discriminator loss through a
/// real (tiny) discriminator, and the generator composite.
pub fn suite_loss() -> Result<Vec<NamedReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x105);
    let objective = ObjectiveConfig::default();
    let mut out = Vec::new();

    {
        let mut params = ParameterStore::new();
        params.insert(
            "y_hat",
            rand_tensor(&mut rng, Shape::new(1, 1, 6, 6), 0.05, 0.95),
        )?;
        let y = rand_tensor(&mut rng, Shape::new(1, 1, 6, 6), 0.0, 1.0);
        let report = grad_check(
            move |tape, lease| {
                let target = tape.constant(y.clone());
                l1_loss(tape, target, lease.id("y_hat")?)
            },
            &params,
            SAMPLES_PER_CHECK,
            FD_STEP,
            &mut rng,
        )?;
        out.push(NamedReport {
            name: "l1_loss".into(),
            report,
        });
    }

    for (name, target) in [("bce real", BceTarget::Real), ("bce fake", BceTarget::Fake)] {
        let params = single_param(
            "logits",
            rand_tensor(&mut rng, Shape::new(1, 1, 4, 4), -2.0, 2.0),
        );
        let clamp = objective.bce_clamp;
        let report = grad_check(
            move |tape, lease| {
                let s = tape.activation(lease.id("logits")?, ActivationKind::Sigmoid)?;
                bce(tape, s, target, clamp)
            },
            &params,
            SAMPLES_PER_CHECK,
            FD_STEP,
            &mut rng,
        )?;
        out.push(NamedReport {
            name: name.into(),
            report,
        });
    }

    // discriminator BCE loss on a random 1x2x16x16 input (condition +
    // candidate channel), gradients w.r.t. the discriminator parameters
    {
        let dcfg = DiscriminatorConfig {
            condition_channels: 1,
            candidate_channels: 1,
            depth: 2,
            base_channels: 4,
            max_channels: 8,
            ..Default::default()
        };
        let (disc, disc_stats) = build_discriminator::<f64>(&dcfg, 0xd15c)?;
        let x = rand_tensor(&mut rng, Shape::new(1, 1, 16, 16), 0.0, 1.0);
        let real = rand_tensor(&mut rng, Shape::new(1, 1, 16, 16), 0.0, 1.0);
        let fake = rand_tensor(&mut rng, Shape::new(1, 1, 16, 16), 0.0, 1.0);
        let obj = objective.clone();
        let report = grad_check(
            move |tape, lease| {
                let mut stats = disc_stats.clone();
                let x_id = tape.leaf(x.clone(), false);
                let real_id = tape.leaf(real.clone(), false);
                let fake_id = tape.leaf(fake.clone(), false);
                let rs = discriminator_forward(
                    tape,
                    &dcfg,
                    lease,
                    &mut stats,
                    x_id,
                    real_id,
                    BnMode::Train {
                        update_running: false,
                    },
                )?;
                let fs = discriminator_forward(
                    tape,
                    &dcfg,
                    lease,
                    &mut stats,
                    x_id,
                    fake_id,
                    BnMode::Train {
                        update_running: false,
                    },
                )?;
                Ok(discriminator_loss(tape, rs, fs, &obj)?.total)
            },
            &disc,
            SAMPLES_PER_CHECK,
            FD_STEP,
            &mut rng,
        )?;
        out.push(NamedReport {
            name: "discriminator bce loss (1x2x16x16)".into(),
            report,
        });
    }
    Ok(out)
}

/// Full-network suite: the generator composite loss on a 1-channel 16x16
/// sample, and the discriminator loss with both pairs, each against its own
/// parameter store.
pub fn suite_model() -> Result<Vec<NamedReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x3de1);
    let objective = ObjectiveConfig::default();
    let mut out = Vec::new();

    let gcfg = GeneratorConfig {
        image_channels: 1,
        noise_channels: 1,
        depth: 2,
        base_channels: 4,
        max_channels: 8,
        ..Default::default()
    };
    let dcfg = DiscriminatorConfig {
        condition_channels: 1,
        candidate_channels: 1,
        depth: 2,
        base_channels: 4,
        max_channels: 8,
        ..Default::default()
    };
    let (gen, gen_stats) = build_generator::<f64>(&gcfg, 0x9e4)?;
    let (disc, disc_stats) = build_discriminator::<f64>(&dcfg, 0xd15)?;
    let x = rand_tensor(&mut rng, Shape::new(1, 1, 16, 16), 0.0, 1.0);
    let y = rand_tensor(&mut rng, Shape::new(1, 1, 16, 16), 0.0, 1.0);
    let z = rand_tensor(&mut rng, Shape::new(1, 1, 16, 16), -1.0, 1.0);

    // generator loss: gradients w.r.t. generator parameters, discriminator
    // leased as constants
    {
        let (gcfg, dcfg) = (gcfg.clone(), dcfg.clone());
        let (disc, gen_stats, disc_stats) = (disc.clone(), gen_stats.clone(), disc_stats.clone());
        let (x, y, z) = (x.clone(), y.clone(), z.clone());
        let obj = objective.clone();
        let report = grad_check(
            move |tape, lease| {
                let mut gstats = gen_stats.clone();
                let mut dstats = disc_stats.clone();
                let x_id = tape.leaf(x.clone(), false);
                let y_id = tape.leaf(y.clone(), false);
                let z_id = tape.leaf(z.clone(), false);
                let fake = generator_forward(
                    tape,
                    &gcfg,
                    lease,
                    &mut gstats,
                    x_id,
                    z_id,
                    BnMode::Train {
                        update_running: false,
                    },
                )?;
                let dlease = disc.lease(tape, Some(NetTag::Discriminator), false);
                let fs = discriminator_forward(
                    tape,
                    &dcfg,
                    &dlease,
                    &mut dstats,
                    x_id,
                    fake,
                    BnMode::Train {
                        update_running: false,
                    },
                )?;
                Ok(generator_loss(tape, fs, y_id, fake, &obj)?.total)
            },
            &gen,
            SAMPLES_PER_CHECK,
            FD_STEP,
            &mut rng,
        )?;
        out.push(NamedReport {
            name: "generator composite loss (1x1x16x16)".into(),
            report,
        });
    }

    // discriminator loss: gradients w.r.t. discriminator parameters, fake
    // candidate produced by the frozen generator and detached
    {
        let report = grad_check(
            move |tape, lease| {
                let mut gstats = gen_stats.clone();
                let mut dstats = disc_stats.clone();
                let x_id = tape.leaf(x.clone(), false);
                let y_id = tape.leaf(y.clone(), false);
                let z_id = tape.leaf(z.clone(), false);
                let glease = gen.lease(tape, Some(NetTag::Generator), false);
                let fake = generator_forward(
                    tape,
                    &gcfg,
                    &glease,
                    &mut gstats,
                    x_id,
                    z_id,
                    BnMode::Train {
                        update_running: false,
                    },
                )?;
                let fake = tape.detach(fake);
                let rs = discriminator_forward(
                    tape,
                    &dcfg,
                    lease,
                    &mut dstats,
                    x_id,
                    y_id,
                    BnMode::Train {
                        update_running: false,
                    },
                )?;
                let fs = discriminator_forward(
                    tape,
                    &dcfg,
                    lease,
                    &mut dstats,
                    x_id,
                    fake,
                    BnMode::Train {
                        update_running: false,
                    },
                )?;
                Ok(discriminator_loss(tape, rs, fs, &objective)?.total)
            },
            &disc,
            SAMPLES_PER_CHECK,
            FD_STEP,
            &mut rng,
        )?;
        out.push(NamedReport {
            name: "discriminator loss (real+fake pairs)".into(),
            report,
        });
    }
    Ok(out)
}

/// Run the requested suite(s).
pub fn run_suite(which: Suite) -> Result<Vec<NamedReport>> {
    let mut out = Vec::new();
    if matches!(which, Suite::Conv | Suite::All) {
        out.extend(suite_conv()?);
    }
    if matches!(which, Suite::Loss | Suite::All) {
        out.extend(suite_loss()?);
    }
    if matches!(which, Suite::Model | Suite::All) {
        out.extend(suite_model()?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_suite_passes() {
        for r in suite_conv().unwrap() {
            assert!(
                r.passes(),
                "{}: max rel err {} (checked {}, skipped {})",
                r.name,
                r.report.max_rel_err,
                r.report.checked,
                r.report.skipped
            );
        }
    }

    #[test]
    fn loss_suite_passes() {
        for r in suite_loss().unwrap() {
            assert!(
                r.passes(),
                "{}: max rel err {}",
                r.name,
                r.report.max_rel_err
            );
        }
    }

    #[test]
    fn model_suite_passes() {
        for r in suite_model().unwrap() {
            assert!(
                r.passes(),
                "{}: max rel err {}",
                r.name,
                r.report.max_rel_err
            );
        }
    }
}
