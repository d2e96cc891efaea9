//! Batch normalization forward/backward kernels.
//!
//! Train mode normalizes per channel over `(N, H, W)` with biased batch
//! variance; eval mode applies the stored running statistics as constants.
//! Channel sums accumulate in f64 so that f32 training losses stay accurate
//! enough for the tight loss-identity checks.

use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Context saved by the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct BnSaved<E: Scalar> {
    /// Normalized input, same layout as x.
    pub xhat: Vec<E>,
    /// Per-channel 1/sqrt(var + eps).
    pub inv_std: Vec<E>,
    /// Eval mode treats mean/var as constants in backward.
    pub eval_mode: bool,
}

fn check_affine<E: Scalar>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    eps: f64,
) -> Result<()> {
    let c = x.shape().c();
    if gamma.numel() != c || beta.numel() != c {
        return Err(Error::shape(format!(
            "batch_norm affine params must have {} elements (one per channel), got gamma {} beta {}",
            c,
            gamma.shape(),
            beta.shape()
        )));
    }
    if eps <= 0.0 {
        return Err(Error::config(format!(
            "batch_norm eps must be > 0, got {eps}"
        )));
    }
    Ok(())
}

/// Per-channel mean and biased variance over (N, H, W), f64 accumulation.
pub fn channel_moments<E: Scalar>(x: &Tensor<E>) -> (Vec<f64>, Vec<f64>) {
    let s = x.shape();
    let (n, c, hw) = (s.n(), s.c(), s.h() * s.w());
    let count = (n * hw) as f64;
    let mut means = vec![0.0f64; c];
    let mut vars = vec![0.0f64; c];
    for ch in 0..c {
        let mut sum = 0.0f64;
        for b in 0..n {
            let plane = &x.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            for &v in plane {
                sum += v.as_f64();
            }
        }
        let mean = sum / count;
        let mut var = 0.0f64;
        for b in 0..n {
            let plane = &x.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            for &v in plane {
                let d = v.as_f64() - mean;
                var += d * d;
            }
        }
        means[ch] = mean;
        vars[ch] = var / count;
    }
    (means, vars)
}

/// Train-mode forward. Returns output, saved context, and the batch moments
/// (for the caller's running-stat update).
#[allow(clippy::type_complexity)]
pub fn bn_forward_train<E: Scalar>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    eps: f64,
) -> Result<(Tensor<E>, BnSaved<E>, Vec<E>, Vec<E>)> {
    check_affine(x, gamma, beta, eps)?;
    let s = x.shape();
    let (n, c, hw) = (s.n(), s.c(), s.h() * s.w());
    let (means, vars) = channel_moments(x);

    let mut y = Tensor::zeros(s);
    let mut xhat = vec![E::zero(); x.numel()];
    let mut inv_std = vec![E::zero(); c];
    #[allow(clippy::needless_range_loop)]
    for ch in 0..c {
        let mean = E::from_f64(means[ch]);
        let istd = E::from_f64(1.0 / (vars[ch] + eps).sqrt());
        inv_std[ch] = istd;
        let (g, b) = (gamma.data()[ch], beta.data()[ch]);
        for bi in 0..n {
            let base = (bi * c + ch) * hw;
            for i in 0..hw {
                let xh = (x.data()[base + i] - mean) * istd;
                xhat[base + i] = xh;
                y.data_mut()[base + i] = g * xh + b;
            }
        }
    }
    let bmean = means.iter().map(|&v| E::from_f64(v)).collect();
    let bvar = vars.iter().map(|&v| E::from_f64(v)).collect();
    Ok((
        y,
        BnSaved {
            xhat,
            inv_std,
            eval_mode: false,
        },
        bmean,
        bvar,
    ))
}

/// Eval-mode forward using running statistics.
pub fn bn_forward_eval<E: Scalar>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    running_mean: &Tensor<E>,
    running_var: &Tensor<E>,
    eps: f64,
) -> Result<(Tensor<E>, BnSaved<E>)> {
    check_affine(x, gamma, beta, eps)?;
    let s = x.shape();
    let (n, c, hw) = (s.n(), s.c(), s.h() * s.w());
    if running_mean.numel() != c || running_var.numel() != c {
        return Err(Error::shape(format!(
            "running stats must have {} elements, got mean {} var {}",
            c,
            running_mean.shape(),
            running_var.shape()
        )));
    }

    let mut y = Tensor::zeros(s);
    let mut xhat = vec![E::zero(); x.numel()];
    let mut inv_std = vec![E::zero(); c];
    #[allow(clippy::needless_range_loop)]
    for ch in 0..c {
        let mean = running_mean.data()[ch];
        let istd = E::from_f64(1.0 / (running_var.data()[ch].as_f64() + eps).sqrt());
        inv_std[ch] = istd;
        let (g, b) = (gamma.data()[ch], beta.data()[ch]);
        for bi in 0..n {
            let base = (bi * c + ch) * hw;
            for i in 0..hw {
                let xh = (x.data()[base + i] - mean) * istd;
                xhat[base + i] = xh;
                y.data_mut()[base + i] = g * xh + b;
            }
        }
    }
    Ok((
        y,
        BnSaved {
            xhat,
            inv_std,
            eval_mode: true,
        },
    ))
}

/// Backward pass for either mode.
pub fn bn_backward<E: Scalar>(
    dy: &[E],
    shape: Shape,
    gamma: &Tensor<E>,
    saved: &BnSaved<E>,
) -> (Tensor<E>, Tensor<E>, Tensor<E>) {
    let (n, c, hw) = (shape.n(), shape.c(), shape.h() * shape.w());
    let count = (n * hw) as f64;
    let mut dx = Tensor::zeros(shape);
    let mut dgamma = Tensor::zeros(Shape::new(1, c, 1, 1));
    let mut dbeta = Tensor::zeros(Shape::new(1, c, 1, 1));

    for ch in 0..c {
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for bi in 0..n {
            let base = (bi * c + ch) * hw;
            for i in 0..hw {
                let g = dy[base + i].as_f64();
                sum_dy += g;
                sum_dy_xhat += g * saved.xhat[base + i].as_f64();
            }
        }
        dgamma.data_mut()[ch] = E::from_f64(sum_dy_xhat);
        dbeta.data_mut()[ch] = E::from_f64(sum_dy);

        let g = gamma.data()[ch];
        let istd = saved.inv_std[ch];
        if saved.eval_mode {
            // mean/var constant: dx = dy * gamma * inv_std
            let scale = g * istd;
            for bi in 0..n {
                let base = (bi * c + ch) * hw;
                for i in 0..hw {
                    dx.data_mut()[base + i] = dy[base + i] * scale;
                }
            }
        } else {
            // dx = gamma*istd * (dy - mean(dy) - xhat * mean(dy*xhat))
            let mean_dy = E::from_f64(sum_dy / count);
            let mean_dy_xhat = E::from_f64(sum_dy_xhat / count);
            let scale = g * istd;
            for bi in 0..n {
                let base = (bi * c + ch) * hw;
                for i in 0..hw {
                    let v = dy[base + i] - mean_dy - saved.xhat[base + i] * mean_dy_xhat;
                    dx.data_mut()[base + i] = scale * v;
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}
