//! Matrix kernels backing the convolution ops: three GEMM variants plus
//! im2col/col2im. All accumulation orders are fixed per output element, so
//! results are bitwise identical for any rayon thread count.

use rayon::prelude::*;

use super::Scalar;

/// Below this many multiply-adds the serial path is used.
const PAR_MIN_MACS: usize = 1 << 16;

fn row_block(k: usize, n: usize) -> usize {
    // aim for ~256k MACs per task
    ((1 << 18) / (k * n).max(1)).max(1)
}

/// `c[m,n] += a[m,k] @ b[k,n]`
pub fn mm_nn<E: Scalar>(c: &mut [E], a: &[E], b: &[E], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let body = |i0: usize, c_rows: &mut [E]| {
        for (di, c_row) in c_rows.chunks_exact_mut(n).enumerate() {
            let a_row = &a[(i0 + di) * k..(i0 + di) * k + k];
            for (p, &a_ip) in a_row.iter().enumerate() {
                let b_row = &b[p * n..p * n + n];
                for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                    *cv += a_ip * bv;
                }
            }
        }
    };
    if m * k * n < PAR_MIN_MACS {
        body(0, c);
    } else {
        let rb = row_block(k, n);
        c.par_chunks_mut(rb * n)
            .enumerate()
            .for_each(|(bi, rows)| body(bi * rb, rows));
    }
}

/// `c[m,n] += a[m,k] @ transpose(b[n,k])`
pub fn mm_nt<E: Scalar>(c: &mut [E], a: &[E], b: &[E], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    let body = |i0: usize, c_rows: &mut [E]| {
        for (di, c_row) in c_rows.chunks_exact_mut(n).enumerate() {
            let a_row = &a[(i0 + di) * k..(i0 + di) * k + k];
            for (j, cv) in c_row.iter_mut().enumerate() {
                *cv += dot_lanes(a_row, &b[j * k..j * k + k]);
            }
        }
    };
    if m * k * n < PAR_MIN_MACS {
        body(0, c);
    } else {
        let rb = row_block(k, n);
        c.par_chunks_mut(rb * n)
            .enumerate()
            .for_each(|(bi, rows)| body(bi * rb, rows));
    }
}

/// `c[m,n] += transpose(a[k,m]) @ b[k,n]`
pub fn mm_tn<E: Scalar>(c: &mut [E], a: &[E], b: &[E], k: usize, m: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let body = |i0: usize, c_rows: &mut [E]| {
        let rows = c_rows.len() / n;
        for p in 0..k {
            let b_row = &b[p * n..p * n + n];
            for di in 0..rows {
                let a_pi = a[p * m + i0 + di];
                let c_row = &mut c_rows[di * n..di * n + n];
                for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                    *cv += a_pi * bv;
                }
            }
        }
    };
    if m * k * n < PAR_MIN_MACS {
        body(0, c);
    } else {
        let rb = row_block(k, n);
        c.par_chunks_mut(rb * n)
            .enumerate()
            .for_each(|(bi, rows)| body(bi * rb, rows));
    }
}

/// Dot product with eight independent lanes so the loop vectorizes without
/// float reassociation; the combine order is fixed, keeping results
/// deterministic.
#[inline]
pub fn dot_lanes<E: Scalar>(a: &[E], b: &[E]) -> E {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [E::zero(); 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let ai = &a[i * 8..i * 8 + 8];
        let bi = &b[i * 8..i * 8 + 8];
        for l in 0..8 {
            acc[l] += ai[l] * bi[l];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for i in chunks * 8..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Geometry of an im2col/col2im mapping for one spatial axis.
#[derive(Clone, Copy, Debug)]
pub struct AxisSpec {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Gather `x (c,h,w)` into `col ((c*kh*kw), (oh*ow))` with zero padding.
#[allow(clippy::too_many_arguments, clippy::needless_range_loop)]
pub fn im2col<E: Scalar>(
    col: &mut [E],
    x: &[E],
    c: usize,
    h: usize,
    w: usize,
    ax_h: AxisSpec,
    ax_w: AxisSpec,
    oh: usize,
    ow: usize,
) {
    debug_assert_eq!(col.len(), c * ax_h.kernel * ax_w.kernel * oh * ow);
    debug_assert_eq!(x.len(), c * h * w);
    let mut row = 0usize;
    for ch in 0..c {
        let xc = &x[ch * h * w..(ch + 1) * h * w];
        for ki in 0..ax_h.kernel {
            for kj in 0..ax_w.kernel {
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                row += 1;
                for oi in 0..oh {
                    let ih = (oi * ax_h.stride + ki) as isize - ax_h.pad as isize;
                    let drow = &mut dst[oi * ow..(oi + 1) * ow];
                    if ih < 0 || ih >= h as isize {
                        drow.iter_mut().for_each(|v| *v = E::zero());
                        continue;
                    }
                    let xrow = &xc[ih as usize * w..(ih as usize + 1) * w];
                    // valid oj range: 0 <= oj*stride + kj - pad < w
                    let base = kj as isize - ax_w.pad as isize;
                    let lo = ceil_div_nonneg(-base, ax_w.stride).min(ow);
                    let hi = ceil_div_nonneg(w as isize - base, ax_w.stride).min(ow);
                    drow[..lo].iter_mut().for_each(|v| *v = E::zero());
                    drow[hi..].iter_mut().for_each(|v| *v = E::zero());
                    if ax_w.stride == 1 {
                        let start = (base + lo as isize) as usize;
                        drow[lo..hi].copy_from_slice(&xrow[start..start + (hi - lo)]);
                    } else {
                        for oj in lo..hi {
                            let iw = (oj * ax_w.stride) as isize + base;
                            drow[oj] = xrow[iw as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add `col` back into `x`: the exact adjoint of [`im2col`].
/// Sequential by construction (overlapping windows share pixels).
#[allow(clippy::too_many_arguments, clippy::needless_range_loop)]
pub fn col2im<E: Scalar>(
    x: &mut [E],
    col: &[E],
    c: usize,
    h: usize,
    w: usize,
    ax_h: AxisSpec,
    ax_w: AxisSpec,
    oh: usize,
    ow: usize,
) {
    debug_assert_eq!(col.len(), c * ax_h.kernel * ax_w.kernel * oh * ow);
    debug_assert_eq!(x.len(), c * h * w);
    let mut row = 0usize;
    for ch in 0..c {
        let xc = &mut x[ch * h * w..(ch + 1) * h * w];
        for ki in 0..ax_h.kernel {
            for kj in 0..ax_w.kernel {
                let src = &col[row * oh * ow..(row + 1) * oh * ow];
                row += 1;
                for oi in 0..oh {
                    let ih = (oi * ax_h.stride + ki) as isize - ax_h.pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let srow = &src[oi * ow..(oi + 1) * ow];
                    let xrow = &mut xc[ih as usize * w..(ih as usize + 1) * w];
                    let base = kj as isize - ax_w.pad as isize;
                    let lo = ceil_div_nonneg(-base, ax_w.stride).min(ow);
                    let hi = ceil_div_nonneg(w as isize - base, ax_w.stride).min(ow);
                    for oj in lo..hi {
                        let iw = (oj * ax_w.stride) as isize + base;
                        xrow[iw as usize] += srow[oj];
                    }
                }
            }
        }
    }
}

/// Smallest non-negative integer `q` with `q*d >= v` (clamped at 0).
fn ceil_div_nonneg(v: isize, d: usize) -> usize {
    if v <= 0 {
        0
    } else {
        (v as usize).div_ceil(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_variants_agree_with_naive() {
        let (m, k, n) = (7, 13, 9);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.71).cos()).collect();
        let want = naive_mm(&a, &b, m, k, n);

        let mut c = vec![0.0; m * n];
        mm_nn(&mut c, &a, &b, m, k, n);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        // b transposed into (n,k) layout
        let mut bt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let mut c = vec![0.0; m * n];
        mm_nt(&mut c, &a, &bt, m, k, n);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        // a transposed into (k,m) layout
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let mut c = vec![0.0; m * n];
        mm_tn(&mut c, &at, &b, k, m, n);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(u), v> == <u, col2im(v)> for random u, v
        let (c, h, w) = (2, 5, 6);
        let ax_h = AxisSpec {
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        let ax_w = AxisSpec {
            kernel: 2,
            stride: 1,
            pad: 0,
        };
        let oh = (h + 2 * ax_h.pad - ax_h.kernel) / ax_h.stride + 1;
        let ow = (w + 2 * ax_w.pad - ax_w.kernel) / ax_w.stride + 1;
        let rows = c * ax_h.kernel * ax_w.kernel;

        let u: Vec<f64> = (0..c * h * w)
            .map(|i| ((i * 31 % 17) as f64) - 8.0)
            .collect();
        let v: Vec<f64> = (0..rows * oh * ow)
            .map(|i| ((i * 13 % 11) as f64) - 5.0)
            .collect();

        let mut col = vec![0.0; rows * oh * ow];
        im2col(&mut col, &u, c, h, w, ax_h, ax_w, oh, ow);
        let lhs: f64 = col.iter().zip(&v).map(|(a, b)| a * b).sum();

        let mut back = vec![0.0; c * h * w];
        col2im(&mut back, &v, c, h, w, ax_h, ax_w, oh, ow);
        let rhs: f64 = back.iter().zip(&u).map(|(a, b)| a * b).sum();

        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }
}
