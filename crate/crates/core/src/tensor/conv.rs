//! conv2d / conv_transpose2d kernels (cross-correlation semantics, no kernel
//! flip) via im2col + GEMM, with their exact adjoint backward passes.
//!
//! conv2d kernels are laid out `(outC, inC, kH, kW)`; conv_transpose2d
//! kernels `(inC, outC, kH, kW)`, i.e. the same layout the gradient-of-conv
//! shape rule dictates.

use super::linalg::{col2im, im2col, mm_nn, mm_nt, mm_tn, AxisSpec};
use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Stride and zero-padding of a convolution; the kernel extents live in the
/// kernel tensor itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    /// (stride_h, stride_w), both >= 1
    pub stride: (usize, usize),
    /// (pad_h, pad_w) zero padding
    pub padding: (usize, usize),
}

impl ConvSpec {
    pub fn new(stride: usize, padding: usize) -> Self {
        ConvSpec {
            stride: (stride, stride),
            padding: (padding, padding),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(Error::config("convolution stride must be positive"));
        }
        Ok(())
    }

    /// `floor((in + 2 pad - k) / stride) + 1`, or None when < 1.
    pub fn conv_out_extent(
        &self,
        input: (usize, usize),
        kernel: (usize, usize),
    ) -> Option<(usize, usize)> {
        let ext = |i: usize, k: usize, s: usize, p: usize| -> Option<usize> {
            (i + 2 * p >= k).then(|| (i + 2 * p - k) / s + 1)
        };
        Some((
            ext(input.0, kernel.0, self.stride.0, self.padding.0)?,
            ext(input.1, kernel.1, self.stride.1, self.padding.1)?,
        ))
    }

    /// `(in - 1) stride - 2 pad + k`, or None when < 1.
    pub fn transpose_out_extent(
        &self,
        input: (usize, usize),
        kernel: (usize, usize),
    ) -> Option<(usize, usize)> {
        let ext = |i: usize, k: usize, s: usize, p: usize| -> Option<usize> {
            let v = (i - 1) * s + k;
            (v > 2 * p).then(|| v - 2 * p)
        };
        Some((
            ext(input.0, kernel.0, self.stride.0, self.padding.0)?,
            ext(input.1, kernel.1, self.stride.1, self.padding.1)?,
        ))
    }

    fn axes(&self, kernel: (usize, usize)) -> (AxisSpec, AxisSpec) {
        (
            AxisSpec {
                kernel: kernel.0,
                stride: self.stride.0,
                pad: self.padding.0,
            },
            AxisSpec {
                kernel: kernel.1,
                stride: self.stride.1,
                pad: self.padding.1,
            },
        )
    }
}

fn check_bias<E: Scalar>(bias: &Tensor<E>, out_c: usize) -> Result<()> {
    if bias.shape().c() != out_c || bias.numel() != out_c {
        return Err(Error::shape(format!(
            "bias shape {} incompatible with {} output channels (expected 1x{}x1x1)",
            bias.shape(),
            out_c,
            out_c
        )));
    }
    Ok(())
}

/// Forward cross-correlation. Returns the output and the per-sample im2col
/// buffers, which the backward pass reuses.
pub fn conv2d_forward<E: Scalar>(
    x: &Tensor<E>,
    kernel: &Tensor<E>,
    bias: &Tensor<E>,
    spec: &ConvSpec,
) -> Result<(Tensor<E>, Vec<Vec<E>>)> {
    spec.validate()?;
    let (n, c_in, h, w) = (x.shape().n(), x.shape().c(), x.shape().h(), x.shape().w());
    let ks = kernel.shape();
    let (c_out, k_in, kh, kw) = (ks.n(), ks.c(), ks.h(), ks.w());
    if c_in != k_in {
        return Err(Error::shape(format!(
            "conv2d channel mismatch: input {} has {} channels, kernel {} expects {}",
            x.shape(),
            c_in,
            ks,
            k_in
        )));
    }
    check_bias(bias, c_out)?;
    let (oh, ow) = spec.conv_out_extent((h, w), (kh, kw)).ok_or_else(|| {
        Error::config(format!(
            "conv2d yields empty output: input {}x{} kernel {}x{} stride {:?} pad {:?}",
            h, w, kh, kw, spec.stride, spec.padding
        ))
    })?;

    let rows = c_in * kh * kw;
    let (ax_h, ax_w) = spec.axes((kh, kw));
    let mut out = Tensor::zeros(Shape::new(n, c_out, oh, ow));
    let mut cols = Vec::with_capacity(n);
    for s in 0..n {
        let mut col = vec![E::zero(); rows * oh * ow];
        im2col(
            &mut col,
            &x.data()[s * c_in * h * w..(s + 1) * c_in * h * w],
            c_in,
            h,
            w,
            ax_h,
            ax_w,
            oh,
            ow,
        );
        let y = &mut out.data_mut()[s * c_out * oh * ow..(s + 1) * c_out * oh * ow];
        for c in 0..c_out {
            let bv = bias.data()[c];
            y[c * oh * ow..(c + 1) * oh * ow]
                .iter_mut()
                .for_each(|v| *v = bv);
        }
        mm_nn(y, kernel.data(), &col, c_out, rows, oh * ow);
        cols.push(col);
    }
    Ok((out, cols))
}

/// (d_input, d_kernel, d_bias); entries are None when not requested.
pub type ConvGrads<E> = (Option<Tensor<E>>, Option<Tensor<E>>, Option<Tensor<E>>);

/// Gradients of [`conv2d_forward`] w.r.t. input, kernel and bias.
/// Any of the three outputs can be skipped by passing `false`.
#[allow(clippy::needless_range_loop)]
pub fn conv2d_backward<E: Scalar>(
    dy: &Tensor<E>,
    x_shape: Shape,
    kernel: &Tensor<E>,
    spec: &ConvSpec,
    cols: &[Vec<E>],
    wants: (bool, bool, bool),
) -> ConvGrads<E> {
    let (n, c_in, h, w) = (x_shape.n(), x_shape.c(), x_shape.h(), x_shape.w());
    let ks = kernel.shape();
    let (c_out, kh, kw) = (ks.n(), ks.h(), ks.w());
    let (oh, ow) = (dy.shape().h(), dy.shape().w());
    let rows = c_in * kh * kw;
    let (ax_h, ax_w) = spec.axes((kh, kw));

    let mut dx = wants.0.then(|| Tensor::zeros(x_shape));
    let mut dk = wants.1.then(|| Tensor::zeros(ks));
    let mut db = wants.2.then(|| Tensor::zeros(Shape::new(1, c_out, 1, 1)));

    let mut dcol = vec![E::zero(); rows * oh * ow];
    for s in 0..n {
        let dy_s = &dy.data()[s * c_out * oh * ow..(s + 1) * c_out * oh * ow];
        if let Some(dk) = dk.as_mut() {
            mm_nt(dk.data_mut(), dy_s, &cols[s], c_out, oh * ow, rows);
        }
        if let Some(db) = db.as_mut() {
            for c in 0..c_out {
                let sum: E = dy_s[c * oh * ow..(c + 1) * oh * ow].iter().copied().sum();
                db.data_mut()[c] += sum;
            }
        }
        if let Some(dx) = dx.as_mut() {
            dcol.iter_mut().for_each(|v| *v = E::zero());
            mm_tn(&mut dcol, kernel.data(), dy_s, c_out, rows, oh * ow);
            let dst = &mut dx.data_mut()[s * c_in * h * w..(s + 1) * c_in * h * w];
            col2im(dst, &dcol, c_in, h, w, ax_h, ax_w, oh, ow);
        }
    }
    (dx, dk, db)
}

/// Forward transposed convolution: the adjoint of [`conv2d_forward`] with the
/// same spec, plus a per-output-channel bias.
pub fn conv_transpose2d_forward<E: Scalar>(
    x: &Tensor<E>,
    kernel: &Tensor<E>,
    bias: &Tensor<E>,
    spec: &ConvSpec,
) -> Result<Tensor<E>> {
    spec.validate()?;
    let (n, c_in, ih, iw) = (x.shape().n(), x.shape().c(), x.shape().h(), x.shape().w());
    let ks = kernel.shape();
    let (k_in, c_out, kh, kw) = (ks.n(), ks.c(), ks.h(), ks.w());
    if c_in != k_in {
        return Err(Error::shape(format!(
            "conv_transpose2d channel mismatch: input {} has {} channels, kernel {} expects {}",
            x.shape(),
            c_in,
            ks,
            k_in
        )));
    }
    check_bias(bias, c_out)?;
    let (oh, ow) = spec
        .transpose_out_extent((ih, iw), (kh, kw))
        .ok_or_else(|| {
            Error::config(format!(
            "conv_transpose2d yields empty output: input {}x{} kernel {}x{} stride {:?} pad {:?}",
            ih, iw, kh, kw, spec.stride, spec.padding
        ))
        })?;

    let ckk = c_out * kh * kw;
    let (ax_h, ax_w) = spec.axes((kh, kw));
    let mut out = Tensor::zeros(Shape::new(n, c_out, oh, ow));
    let mut col = vec![E::zero(); ckk * ih * iw];
    for s in 0..n {
        let x_s = &x.data()[s * c_in * ih * iw..(s + 1) * c_in * ih * iw];
        col.iter_mut().for_each(|v| *v = E::zero());
        mm_tn(&mut col, kernel.data(), x_s, c_in, ckk, ih * iw);
        let y = &mut out.data_mut()[s * c_out * oh * ow..(s + 1) * c_out * oh * ow];
        for c in 0..c_out {
            let bv = bias.data()[c];
            y[c * oh * ow..(c + 1) * oh * ow]
                .iter_mut()
                .for_each(|v| *v = bv);
        }
        col2im(y, &col, c_out, oh, ow, ax_h, ax_w, ih, iw);
    }
    Ok(out)
}

/// Gradients of [`conv_transpose2d_forward`].
pub fn conv_transpose2d_backward<E: Scalar>(
    dy: &Tensor<E>,
    x: &Tensor<E>,
    kernel: &Tensor<E>,
    spec: &ConvSpec,
    wants: (bool, bool, bool),
) -> ConvGrads<E> {
    let (n, c_in, ih, iw) = (x.shape().n(), x.shape().c(), x.shape().h(), x.shape().w());
    let ks = kernel.shape();
    let (c_out, kh, kw) = (ks.c(), ks.h(), ks.w());
    let (oh, ow) = (dy.shape().h(), dy.shape().w());
    let ckk = c_out * kh * kw;
    let (ax_h, ax_w) = spec.axes((kh, kw));

    let mut dx = wants.0.then(|| Tensor::zeros(x.shape()));
    let mut dk = wants.1.then(|| Tensor::zeros(ks));
    let mut db = wants.2.then(|| Tensor::zeros(Shape::new(1, c_out, 1, 1)));

    let mut dcol = vec![E::zero(); ckk * ih * iw];
    for s in 0..n {
        let dy_s = &dy.data()[s * c_out * oh * ow..(s + 1) * c_out * oh * ow];
        if dx.is_some() || dk.is_some() {
            im2col(&mut dcol, dy_s, c_out, oh, ow, ax_h, ax_w, ih, iw);
        }
        if let Some(dx) = dx.as_mut() {
            let dst = &mut dx.data_mut()[s * c_in * ih * iw..(s + 1) * c_in * ih * iw];
            mm_nn(dst, kernel.data(), &dcol, c_in, ckk, ih * iw);
        }
        if let Some(dk) = dk.as_mut() {
            let x_s = &x.data()[s * c_in * ih * iw..(s + 1) * c_in * ih * iw];
            mm_nt(dk.data_mut(), x_s, &dcol, c_in, ih * iw, ckk);
        }
        if let Some(db) = db.as_mut() {
            for c in 0..c_out {
                let sum: E = dy_s[c * oh * ow..(c + 1) * oh * ow].iter().copied().sum();
                db.data_mut()[c] += sum;
            }
        }
    }
    (dx, dk, db)
}
