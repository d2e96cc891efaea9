//! Define-by-run reverse-mode autodiff tape.
//!
//! A fresh tape is built for every forward pass; `backward` runs one reverse
//! sweep and then marks the tape consumed (no double backward). Nodes form a
//! topological order by construction: an op can only reference ids that
//! already exist.

use super::conv::{
    conv2d_backward, conv2d_forward, conv_transpose2d_backward, conv_transpose2d_forward, ConvSpec,
};
use super::norm::{bn_backward, bn_forward_eval, bn_forward_train, BnSaved};
use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a tensor recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

/// Which network a leased parameter belongs to; used to audit gradient
/// isolation between the generator and discriminator phases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetTag {
    Generator,
    Discriminator,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActivationKind {
    Relu,
    LeakyRelu { alpha: f64 },
    Sigmoid,
    Tanh,
}

/// Batch-norm execution mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics; optionally fold them into the
    /// running stats (a training step updates them exactly once per net).
    Train { update_running: bool },
    /// Normalize with the running statistics.
    Eval,
}

enum Op<E: Scalar> {
    Leaf,
    Detached,
    Conv2d {
        x: TensorId,
        w: TensorId,
        b: TensorId,
        spec: ConvSpec,
        cols: Vec<Vec<E>>,
    },
    ConvTranspose2d {
        x: TensorId,
        w: TensorId,
        b: TensorId,
        spec: ConvSpec,
    },
    BatchNorm {
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        saved: BnSaved<E>,
    },
    Activation {
        x: TensorId,
        kind: ActivationKind,
    },
    Add {
        a: TensorId,
        b: TensorId,
    },
    Sub {
        a: TensorId,
        b: TensorId,
    },
    Mul {
        a: TensorId,
        b: TensorId,
    },
    AddScalar {
        x: TensorId,
    },
    MulScalar {
        x: TensorId,
        s: E,
    },
    Abs {
        x: TensorId,
    },
    Log {
        x: TensorId,
    },
    Clamp {
        x: TensorId,
        lo: E,
        hi: E,
    },
    Mean {
        x: TensorId,
    },
    ConcatChannels {
        a: TensorId,
        b: TensorId,
    },
}

impl<E: Scalar> Op<E> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Detached => "detach",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::BatchNorm { .. } => "batch_norm2d",
            Op::Activation { .. } => "activation",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::AddScalar { .. } => "add_scalar",
            Op::MulScalar { .. } => "mul_scalar",
            Op::Abs { .. } => "abs",
            Op::Log { .. } => "log",
            Op::Clamp { .. } => "clamp",
            Op::Mean { .. } => "mean",
            Op::ConcatChannels { .. } => "concat_channels",
        }
    }

    fn inputs(&self) -> Vec<TensorId> {
        match *self {
            Op::Leaf | Op::Detached => vec![],
            Op::Conv2d { x, w, b, .. } | Op::ConvTranspose2d { x, w, b, .. } => vec![x, w, b],
            Op::BatchNorm { x, gamma, beta, .. } => vec![x, gamma, beta],
            Op::Activation { x, .. }
            | Op::AddScalar { x }
            | Op::MulScalar { x, .. }
            | Op::Abs { x }
            | Op::Log { x }
            | Op::Clamp { x, .. }
            | Op::Mean { x } => vec![x],
            Op::Add { a, b }
            | Op::Sub { a, b }
            | Op::Mul { a, b }
            | Op::ConcatChannels { a, b } => {
                vec![a, b]
            }
        }
    }
}

struct Node<E: Scalar> {
    value: Tensor<E>,
    grad: Option<Vec<E>>,
    needs: bool,
    tag: Option<NetTag>,
    op: Op<E>,
}

/// Margin around relu/abs/clamp kinks: forward passes that come this close
/// to a kink are flagged so gradient checks can exclude the coordinate.
pub const KINK_MARGIN: f64 = 1e-6;

pub struct Tape<E: Scalar> {
    nodes: Vec<Node<E>>,
    consumed: bool,
    kink_hash: u64,
    kink_near: bool,
}

impl<E: Scalar> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> Tape<E> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
            kink_hash: 0xcbf29ce484222325,
            kink_near: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: TensorId) -> &Tensor<E> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: TensorId) -> Shape {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].needs
    }

    /// Fingerprint of the sign pattern at every kink-bearing op, plus a flag
    /// for values within [`KINK_MARGIN`] of a kink. Two forward passes whose
    /// fingerprints differ straddle a kink somewhere.
    pub fn kink_fingerprint(&self) -> (u64, bool) {
        (self.kink_hash, self.kink_near)
    }

    fn record_kink_distance(&mut self, d: f64) {
        // FNV-1a over the sign bit
        let bit = (d > 0.0) as u64;
        self.kink_hash = (self.kink_hash ^ (bit + 1)).wrapping_mul(0x100000001b3);
        if d.abs() < KINK_MARGIN {
            self.kink_near = true;
        }
    }

    fn push(
        &mut self,
        value: Tensor<E>,
        needs: bool,
        tag: Option<NetTag>,
        op: Op<E>,
    ) -> Result<TensorId> {
        if cfg!(debug_assertions) && !value.all_finite() {
            return Err(Error::numeric(format!(
                "non-finite values in output of {} (shape {})",
                op.name(),
                value.shape()
            )));
        }
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            value,
            grad: None,
            needs,
            tag,
            op,
        });
        Ok(id)
    }

    fn needs(&self, id: TensorId) -> bool {
        self.nodes[id.0].needs
    }

    // ── graph construction ──────────────────────────────────────────────

    pub fn leaf(&mut self, value: Tensor<E>, requires_grad: bool) -> TensorId {
        self.push(value, requires_grad, None, Op::Leaf)
            .expect("finite leaf")
    }

    pub fn leaf_tagged(&mut self, value: Tensor<E>, requires_grad: bool, tag: NetTag) -> TensorId {
        self.push(value, requires_grad, Some(tag), Op::Leaf)
            .expect("finite leaf")
    }

    pub fn constant(&mut self, value: Tensor<E>) -> TensorId {
        self.leaf(value, false)
    }

    /// Copy of `id`'s value with no gradient linkage.
    pub fn detach(&mut self, id: TensorId) -> TensorId {
        let value = self.nodes[id.0].value.clone();
        self.push(value, false, None, Op::Detached)
            .expect("finite detach")
    }

    pub fn conv2d(
        &mut self,
        x: TensorId,
        w: TensorId,
        b: TensorId,
        spec: ConvSpec,
    ) -> Result<TensorId> {
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        let (out, cols) = conv2d_forward(self.value(x), self.value(w), self.value(b), &spec)?;
        // saved column buffers are only useful if backward will run
        let cols = if needs { cols } else { Vec::new() };
        self.push(
            out,
            needs,
            None,
            Op::Conv2d {
                x,
                w,
                b,
                spec,
                cols,
            },
        )
    }

    pub fn conv_transpose2d(
        &mut self,
        x: TensorId,
        w: TensorId,
        b: TensorId,
        spec: ConvSpec,
    ) -> Result<TensorId> {
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        let out = conv_transpose2d_forward(self.value(x), self.value(w), self.value(b), &spec)?;
        self.push(out, needs, None, Op::ConvTranspose2d { x, w, b, spec })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm2d(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        running_mean: &mut Tensor<E>,
        running_var: &mut Tensor<E>,
        mode: BnMode,
        eps: f64,
        momentum: f64,
    ) -> Result<TensorId> {
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let (out, saved) = match mode {
            BnMode::Train { update_running } => {
                let (out, saved, bmean, bvar) =
                    bn_forward_train(self.value(x), self.value(gamma), self.value(beta), eps)?;
                if update_running {
                    let m = E::from_f64(momentum);
                    let keep = E::from_f64(1.0 - momentum);
                    for (r, b) in running_mean.data_mut().iter_mut().zip(&bmean) {
                        *r = keep * *r + m * *b;
                    }
                    for (r, b) in running_var.data_mut().iter_mut().zip(&bvar) {
                        *r = keep * *r + m * *b;
                    }
                }
                (out, saved)
            }
            BnMode::Eval => bn_forward_eval(
                self.value(x),
                self.value(gamma),
                self.value(beta),
                running_mean,
                running_var,
                eps,
            )?,
        };
        self.push(
            out,
            needs,
            None,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
            },
        )
    }

    pub fn activation(&mut self, x: TensorId, kind: ActivationKind) -> Result<TensorId> {
        if let ActivationKind::LeakyRelu { alpha } = kind {
            if !(0.0 < alpha && alpha < 1.0) {
                return Err(Error::config(format!(
                    "leaky_relu alpha must be in (0,1), got {alpha}"
                )));
            }
        }
        let xv = self.value(x).clone();
        let mut out = Tensor::zeros(xv.shape());
        match kind {
            ActivationKind::Relu => {
                for (o, &v) in out.data_mut().iter_mut().zip(xv.data()) {
                    *o = if v > E::zero() { v } else { E::zero() };
                    // kink recorded below
                }
                for &v in xv.data() {
                    self.record_kink_distance(v.as_f64());
                }
            }
            ActivationKind::LeakyRelu { alpha } => {
                let a = E::from_f64(alpha);
                for (o, &v) in out.data_mut().iter_mut().zip(xv.data()) {
                    *o = if v > E::zero() { v } else { a * v };
                }
                for &v in xv.data() {
                    self.record_kink_distance(v.as_f64());
                }
            }
            ActivationKind::Sigmoid => {
                // keep outputs strictly inside (0,1) even where exp
                // saturates: clamp to the nearest representable neighbors
                let lo = E::min_positive_value();
                let hi = E::one() - E::epsilon() / E::from_f64(2.0);
                for (o, &v) in out.data_mut().iter_mut().zip(xv.data()) {
                    let y = E::one() / (E::one() + (-v).exp());
                    *o = y.max(lo).min(hi);
                }
            }
            ActivationKind::Tanh => {
                for (o, &v) in out.data_mut().iter_mut().zip(xv.data()) {
                    *o = v.tanh();
                }
            }
        }
        let needs = self.needs(x);
        self.push(out, needs, None, Op::Activation { x, kind })
    }

    fn binary_shape_check(&self, a: TensorId, b: TensorId, what: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(format!(
                "{what} requires equal shapes, got {sa} vs {sb}"
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_shape_check(a, b, "add")?;
        let mut out = self.value(a).clone();
        for (o, &v) in out.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *o += v;
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(out, needs, None, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_shape_check(a, b, "sub")?;
        let mut out = self.value(a).clone();
        for (o, &v) in out.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *o -= v;
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(out, needs, None, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_shape_check(a, b, "mul")?;
        let mut out = self.value(a).clone();
        for (o, &v) in out.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *o *= v;
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(out, needs, None, Op::Mul { a, b })
    }

    pub fn add_scalar(&mut self, x: TensorId, s: E) -> Result<TensorId> {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v += s);
        let needs = self.needs(x);
        self.push(out, needs, None, Op::AddScalar { x })
    }

    pub fn mul_scalar(&mut self, x: TensorId, s: E) -> Result<TensorId> {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= s);
        let needs = self.needs(x);
        self.push(out, needs, None, Op::MulScalar { x, s })
    }

    /// |x| elementwise; the subgradient at 0 is 0.
    pub fn abs(&mut self, x: TensorId) -> Result<TensorId> {
        let xv = self.value(x).clone();
        let mut out = Tensor::zeros(xv.shape());
        for (o, &v) in out.data_mut().iter_mut().zip(xv.data()) {
            *o = v.abs();
        }
        for &v in xv.data() {
            self.record_kink_distance(v.as_f64());
        }
        let needs = self.needs(x);
        self.push(out, needs, None, Op::Abs { x })
    }

    /// Natural log; rejects non-positive inputs, naming the first offender.
    pub fn log(&mut self, x: TensorId) -> Result<TensorId> {
        if let Some(i) = self.value(x).data().iter().position(|&v| v <= E::zero()) {
            return Err(Error::numeric(format!(
                "log of non-positive value {} at flat index {i}",
                self.value(x).data()[i]
            )));
        }
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.ln());
        let needs = self.needs(x);
        self.push(out, needs, None, Op::Log { x })
    }

    pub fn clamp(&mut self, x: TensorId, lo: E, hi: E) -> Result<TensorId> {
        let xv = self.value(x).clone();
        let mut out = Tensor::zeros(xv.shape());
        for (o, &v) in out.data_mut().iter_mut().zip(xv.data()) {
            *o = if v < lo {
                lo
            } else if v > hi {
                hi
            } else {
                v
            };
        }
        for &v in xv.data() {
            self.record_kink_distance(v.as_f64() - lo.as_f64());
            self.record_kink_distance(hi.as_f64() - v.as_f64());
        }
        let needs = self.needs(x);
        self.push(out, needs, None, Op::Clamp { x, lo, hi })
    }

    /// Mean over all elements, as a (1,1,1,1) tensor. f64 accumulation.
    pub fn mean(&mut self, x: TensorId) -> Result<TensorId> {
        let xv = self.value(x);
        let sum: f64 = xv.data().iter().map(|v| v.as_f64()).sum();
        let out = Tensor::scalar(E::from_f64(sum / xv.numel() as f64));
        let needs = self.needs(x);
        self.push(out, needs, None, Op::Mean { x })
    }

    /// Stack `a` and `b` along the channel axis.
    pub fn concat_channels(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.n() != sb.n() || sa.h() != sb.h() || sa.w() != sb.w() {
            return Err(Error::shape(format!(
                "concat_channels requires equal N,H,W, got {sa} vs {sb}"
            )));
        }
        let (n, hw) = (sa.n(), sa.h() * sa.w());
        let (ca, cb) = (sa.c(), sb.c());
        let mut out = Tensor::zeros(Shape::new(n, ca + cb, sa.h(), sa.w()));
        for s in 0..n {
            let dst = &mut out.data_mut()[s * (ca + cb) * hw..(s + 1) * (ca + cb) * hw];
            dst[..ca * hw]
                .copy_from_slice(&self.nodes[a.0].value.data()[s * ca * hw..(s + 1) * ca * hw]);
            dst[ca * hw..]
                .copy_from_slice(&self.nodes[b.0].value.data()[s * cb * hw..(s + 1) * cb * hw]);
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(out, needs, None, Op::ConcatChannels { a, b })
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Populates gradients on every
    /// requires-grad node reachable from `loss`; consumes the tape.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.consumed {
            return Err(Error::contract(
                "backward already ran on this tape; higher-order derivatives are unsupported — rebuild the graph",
            ));
        }
        self.consumed = true;
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {}",
                self.nodes[loss.0].value.shape()
            )));
        }
        if !self.nodes[loss.0].needs {
            return Ok(()); // loss does not depend on any trainable tensor
        }
        self.nodes[loss.0].grad = Some(vec![E::one()]);

        for i in (0..=loss.0).rev() {
            if self.nodes[i].grad.is_none() || !self.nodes[i].needs {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf | Op::Detached) {
                continue; // keep leaf gradients for extraction
            }
            let (before, at) = self.nodes.split_at_mut(i);
            let node = &mut at[0];
            let g = node.grad.take().expect("checked above");
            let out_shape = node.value.shape();

            match &node.op {
                Op::Leaf | Op::Detached => unreachable!(),
                Op::Conv2d {
                    x,
                    w,
                    b,
                    spec,
                    cols,
                } => {
                    let dy = Tensor::from_vec(out_shape, g).expect("grad shape");
                    let wants = (before[x.0].needs, before[w.0].needs, before[b.0].needs);
                    let (dx, dk, db) = conv2d_backward(
                        &dy,
                        before[x.0].value.shape(),
                        &before[w.0].value,
                        spec,
                        cols,
                        wants,
                    );
                    if let Some(dx) = dx {
                        accumulate(before, *x, dx.data());
                    }
                    if let Some(dk) = dk {
                        accumulate(before, *w, dk.data());
                    }
                    if let Some(db) = db {
                        accumulate(before, *b, db.data());
                    }
                }
                Op::ConvTranspose2d { x, w, b, spec } => {
                    let dy = Tensor::from_vec(out_shape, g).expect("grad shape");
                    let wants = (before[x.0].needs, before[w.0].needs, before[b.0].needs);
                    let (dx, dk, db) = conv_transpose2d_backward(
                        &dy,
                        &before[x.0].value,
                        &before[w.0].value,
                        spec,
                        wants,
                    );
                    if let Some(dx) = dx {
                        accumulate(before, *x, dx.data());
                    }
                    if let Some(dk) = dk {
                        accumulate(before, *w, dk.data());
                    }
                    if let Some(db) = db {
                        accumulate(before, *b, db.data());
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    saved,
                } => {
                    let (dx, dgamma, dbeta) =
                        bn_backward(&g, out_shape, &before[gamma.0].value, saved);
                    accumulate(before, *x, dx.data());
                    accumulate(before, *gamma, dgamma.data());
                    accumulate(before, *beta, dbeta.data());
                }
                Op::Activation { x, kind } => {
                    let kind = *kind;
                    let xi = *x;
                    let mut dx = g;
                    match kind {
                        ActivationKind::Relu => {
                            for (d, &v) in dx.iter_mut().zip(before[xi.0].value.data()) {
                                if v <= E::zero() {
                                    *d = E::zero();
                                }
                            }
                        }
                        ActivationKind::LeakyRelu { alpha } => {
                            let a = E::from_f64(alpha);
                            for (d, &v) in dx.iter_mut().zip(before[xi.0].value.data()) {
                                if v <= E::zero() {
                                    *d *= a;
                                }
                            }
                        }
                        ActivationKind::Sigmoid => {
                            for (d, &y) in dx.iter_mut().zip(node.value.data()) {
                                *d *= y * (E::one() - y);
                            }
                        }
                        ActivationKind::Tanh => {
                            for (d, &y) in dx.iter_mut().zip(node.value.data()) {
                                *d *= E::one() - y * y;
                            }
                        }
                    }
                    accumulate(before, xi, &dx);
                }
                Op::Add { a, b } => {
                    accumulate(before, *a, &g);
                    accumulate(before, *b, &g);
                }
                Op::Sub { a, b } => {
                    accumulate(before, *a, &g);
                    let neg: Vec<E> = g.iter().map(|&v| -v).collect();
                    accumulate(before, *b, &neg);
                }
                Op::Mul { a, b } => {
                    let (ai, bi) = (*a, *b);
                    let da: Vec<E> = g
                        .iter()
                        .zip(before[bi.0].value.data())
                        .map(|(&gv, &bv)| gv * bv)
                        .collect();
                    let db: Vec<E> = g
                        .iter()
                        .zip(before[ai.0].value.data())
                        .map(|(&gv, &av)| gv * av)
                        .collect();
                    accumulate(before, ai, &da);
                    accumulate(before, bi, &db);
                }
                Op::AddScalar { x } => accumulate(before, *x, &g),
                Op::MulScalar { x, s } => {
                    let s = *s;
                    let dx: Vec<E> = g.iter().map(|&v| v * s).collect();
                    accumulate(before, *x, &dx);
                }
                Op::Abs { x } => {
                    let xi = *x;
                    let dx: Vec<E> = g
                        .iter()
                        .zip(before[xi.0].value.data())
                        .map(|(&gv, &v)| {
                            if v > E::zero() {
                                gv
                            } else if v < E::zero() {
                                -gv
                            } else {
                                E::zero()
                            }
                        })
                        .collect();
                    accumulate(before, xi, &dx);
                }
                Op::Log { x } => {
                    let xi = *x;
                    let dx: Vec<E> = g
                        .iter()
                        .zip(before[xi.0].value.data())
                        .map(|(&gv, &v)| gv / v)
                        .collect();
                    accumulate(before, xi, &dx);
                }
                Op::Clamp { x, lo, hi } => {
                    let (lo, hi, xi) = (*lo, *hi, *x);
                    let dx: Vec<E> = g
                        .iter()
                        .zip(before[xi.0].value.data())
                        .map(|(&gv, &v)| if v < lo || v > hi { E::zero() } else { gv })
                        .collect();
                    accumulate(before, xi, &dx);
                }
                Op::Mean { x } => {
                    let xi = *x;
                    let n = before[xi.0].value.numel();
                    let scale = E::one() / E::from_f64(n as f64);
                    let gv = g[0] * scale;
                    let dx = vec![gv; n];
                    accumulate(before, xi, &dx);
                }
                Op::ConcatChannels { a, b } => {
                    let (ai, bi) = (*a, *b);
                    let (sa, sb) = (before[ai.0].value.shape(), before[bi.0].value.shape());
                    let (n, hw) = (sa.n(), sa.h() * sa.w());
                    let (ca, cb) = (sa.c(), sb.c());
                    let mut da = vec![E::zero(); sa.numel()];
                    let mut db = vec![E::zero(); sb.numel()];
                    for s in 0..n {
                        let src = &g[s * (ca + cb) * hw..(s + 1) * (ca + cb) * hw];
                        da[s * ca * hw..(s + 1) * ca * hw].copy_from_slice(&src[..ca * hw]);
                        db[s * cb * hw..(s + 1) * cb * hw].copy_from_slice(&src[ca * hw..]);
                    }
                    accumulate(before, ai, &da);
                    accumulate(before, bi, &db);
                }
            }
        }
        Ok(())
    }

    /// Gradient of a node after `backward`, if one was accumulated.
    pub fn grad(&self, id: TensorId) -> Option<&[E]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Gradient as a tensor; zeros when the node was not on the loss path.
    pub fn grad_tensor(&self, id: TensorId) -> Tensor<E> {
        let shape = self.nodes[id.0].value.shape();
        match &self.nodes[id.0].grad {
            Some(g) => Tensor::from_vec(shape, g.clone()).expect("grad shape matches"),
            None => Tensor::zeros(shape),
        }
    }

    /// True when any requires-grad leaf tagged `tag` is an ancestor of `id`.
    /// Used to audit that detached fakes carry no generator linkage.
    pub fn reaches_tagged_param(&self, id: TensorId, tag: NetTag) -> bool {
        let mut seen = vec![false; id.0 + 1];
        let mut stack = vec![id];
        while let Some(cur) = stack.pop() {
            if seen[cur.0] {
                continue;
            }
            seen[cur.0] = true;
            let node = &self.nodes[cur.0];
            if node.tag == Some(tag) && node.needs {
                return true;
            }
            stack.extend(node.op.inputs());
        }
        false
    }
}

fn accumulate<E: Scalar>(nodes: &mut [Node<E>], id: TensorId, contrib: &[E]) {
    let node = &mut nodes[id.0];
    if !node.needs {
        return;
    }
    let grad = node
        .grad
        .get_or_insert_with(|| vec![E::zero(); node.value.numel()]);
    debug_assert_eq!(grad.len(), contrib.len());
    for (g, &c) in grad.iter_mut().zip(contrib) {
        *g += c;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_backward_distributes_evenly() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(
            Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            true,
        );
        let m = tape.mean(x).unwrap();
        assert_eq!(tape.value(m).item().unwrap(), 2.5);
        tape.backward(m).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.25; 4]);
    }

    #[test]
    fn sigmoid_grad_at_zero_is_quarter() {
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf(Tensor::scalar(0.0), true);
        let s = tape.activation(w, ActivationKind::Sigmoid).unwrap();
        assert_eq!(tape.value(s).item().unwrap(), 0.5);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[0.25]);
    }

    #[test]
    fn tanh_matches_high_precision_oracle_on_grid() {
        // f32 path against the f64 math-library oracle over a wide grid
        let vals: Vec<f32> = (-60..=60).map(|i| i as f32 * 0.1).collect();
        let n = vals.len();
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::from_vec(Shape::new(1, 1, 1, n), vals.clone()).unwrap(), false);
        let y = tape.activation(x, ActivationKind::Tanh).unwrap();
        for (got, v) in tape.value(y).data().iter().zip(&vals) {
            let want = (*v as f64).tanh();
            assert!((got.as_f64() - want).abs() <= 1e-6, "tanh({v}) = {got} vs {want}");
        }
    }

    #[test]
    fn abs_of_difference_matches_scalar_loop_exactly() {
        let a_vals = [0.75f64, -0.5, 0.125, 2.0, -3.25];
        let b_vals = [0.25f64, 0.5, 0.125, -1.0, -3.5];
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::from_vec(Shape::new(1, 1, 1, 5), a_vals.to_vec()).unwrap(), false);
        let b = tape.leaf(Tensor::from_vec(Shape::new(1, 1, 1, 5), b_vals.to_vec()).unwrap(), false);
        let d = tape.sub(a, b).unwrap();
        let m = tape.abs(d).unwrap();
        for i in 0..5 {
            assert_eq!(tape.value(m).data()[i], (a_vals[i] - b_vals[i]).abs());
        }
    }

    #[test]
    fn leaky_relu_negative_side() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(-2.0), false);
        let y = tape
            .activation(x, ActivationKind::LeakyRelu { alpha: 0.2 })
            .unwrap();
        assert!((tape.value(y).item().unwrap() + 0.4).abs() < 1e-12);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(Shape::new(1, 1, 2, 2)), true);
        let y = tape.add_scalar(x, 1.0).unwrap();
        let err = tape.backward(y).unwrap_err();
        assert!(err.to_string().contains("scalar"));
    }

    #[test]
    fn double_backward_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(3.0), true);
        let y = tape.mul_scalar(x, 2.0).unwrap();
        tape.backward(y).unwrap();
        let err = tape.backward(y).unwrap_err();
        assert!(err.to_string().contains("already ran"));
    }

    #[test]
    fn off_path_leaf_gets_zero_grad() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(3.0), true);
        let unused = tape.leaf(Tensor::scalar(5.0), true);
        let y = tape.mul_scalar(x, 2.0).unwrap();
        tape.backward(y).unwrap();
        assert!(tape.grad(unused).is_none());
        assert!(tape.grad_tensor(unused).data().iter().all(|&v| v == 0.0));
        assert_eq!(tape.grad(x).unwrap(), &[2.0]);
    }

    #[test]
    fn concat_splits_gradient() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::full(Shape::new(1, 2, 2, 2), 1.0), true);
        let b = tape.leaf(Tensor::full(Shape::new(1, 3, 2, 2), 2.0), true);
        let cat = tape.concat_channels(a, b).unwrap();
        assert_eq!(tape.shape(cat), Shape::new(1, 5, 2, 2));
        let m = tape.mean(cat).unwrap();
        tape.backward(m).unwrap();
        let n = 20.0;
        assert!(tape
            .grad(a)
            .unwrap()
            .iter()
            .all(|&v| (v - 1.0 / n).abs() < 1e-15));
        assert!(tape
            .grad(b)
            .unwrap()
            .iter()
            .all(|&v| (v - 1.0 / n).abs() < 1e-15));
    }

    #[test]
    fn detach_blocks_gradient_and_tag_audit_sees_it() {
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf_tagged(Tensor::scalar(2.0), true, NetTag::Generator);
        let y = tape.mul_scalar(w, 3.0).unwrap();
        assert!(tape.reaches_tagged_param(y, NetTag::Generator));
        let d = tape.detach(y);
        assert!(!tape.reaches_tagged_param(d, NetTag::Generator));
        let z = tape.mul_scalar(d, 5.0).unwrap();
        tape.backward(z).unwrap();
        assert!(tape.grad(w).is_none());
    }

    #[test]
    fn log_rejects_non_positive_with_index() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(
            Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![1.0, 0.0, 2.0]).unwrap(),
            false,
        );
        let err = tape.log(x).unwrap_err();
        assert!(err.to_string().contains("index 1"), "{err}");
    }
}
