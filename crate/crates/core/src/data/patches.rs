//! Padding, patch extraction, tiling, and overlap-averaged reassembly.

use rand::Rng;

use super::netpbm::PixelMap;
use super::SamplePair;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Patch sampling geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchSpec {
    pub size: usize,
    pub stride: usize,
}

impl Default for PatchSpec {
    fn default() -> Self {
        PatchSpec {
            size: 128,
            stride: 64,
        }
    }
}

impl PatchSpec {
    pub fn validate(&self, required_multiple: usize) -> Result<()> {
        if self.size == 0 || self.stride == 0 {
            return Err(Error::config("patch size and stride must be positive"));
        }
        if self.stride > self.size {
            return Err(Error::config(format!(
                "patch stride {} exceeds patch size {}; tiling would leave gaps",
                self.stride, self.size
            )));
        }
        if !self.size.is_multiple_of(required_multiple) {
            return Err(Error::config(format!(
                "patch size {} must be divisible by {required_multiple} (generator depth)",
                self.size
            )));
        }
        Ok(())
    }
}

/// Original extents needed to invert padding exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropInfo {
    pub width: usize,
    pub height: usize,
}

pub fn next_multiple(x: usize, m: usize) -> usize {
    x.div_ceil(m) * m
}

/// Mirror index with edge repetition, folded so any pad width works.
fn reflect_index(i: usize, n: usize) -> usize {
    let period = 2 * n;
    let k = i % period;
    if k < n {
        k
    } else {
        period - 1 - k
    }
}

/// Reflect-pad right/bottom to the next multiple (at least `min_side`),
/// returning the crop info that inverts the padding exactly. Masks should
/// use [`pad_zero`] at the same target extents instead, so padded pixels
/// stay outside the metrics.
pub fn pad_to_multiple(map: &PixelMap, multiple: usize, min_side: usize) -> (PixelMap, CropInfo) {
    let new_w = next_multiple(map.width.max(min_side), multiple);
    let new_h = next_multiple(map.height.max(min_side), multiple);
    let crop = CropInfo {
        width: map.width,
        height: map.height,
    };
    (pad_reflect(map, new_w, new_h), crop)
}

/// Pad on the right/bottom to (new_w, new_h) by symmetric reflection.
pub fn pad_reflect(map: &PixelMap, new_w: usize, new_h: usize) -> PixelMap {
    assert!(new_w >= map.width && new_h >= map.height);
    let mut out = PixelMap {
        width: new_w,
        height: new_h,
        channels: map.channels,
        data: vec![0; new_w * new_h * map.channels],
    };
    for y in 0..new_h {
        let sy = reflect_index(y, map.height);
        for x in 0..new_w {
            let sx = reflect_index(x, map.width);
            for c in 0..map.channels {
                out.set(x, y, c, map.get(sx, sy, c));
            }
        }
    }
    out
}

/// Pad on the right/bottom with zeros (used for FOV masks, so padded pixels
/// are excluded from metrics).
pub fn pad_zero(map: &PixelMap, new_w: usize, new_h: usize) -> PixelMap {
    assert!(new_w >= map.width && new_h >= map.height);
    let mut out = PixelMap {
        width: new_w,
        height: new_h,
        channels: map.channels,
        data: vec![0; new_w * new_h * map.channels],
    };
    for y in 0..map.height {
        for x in 0..map.width {
            for c in 0..map.channels {
                out.set(x, y, c, map.get(x, y, c));
            }
        }
    }
    out
}

/// Crop back to the original extents recorded in `crop`.
pub fn unpad(map: &PixelMap, crop: CropInfo) -> PixelMap {
    crop_map(map, 0, 0, crop.width, crop.height)
}

pub fn crop_map(map: &PixelMap, x0: usize, y0: usize, w: usize, h: usize) -> PixelMap {
    assert!(x0 + w <= map.width && y0 + h <= map.height);
    let mut out = PixelMap {
        width: w,
        height: h,
        channels: map.channels,
        data: Vec::with_capacity(w * h * map.channels),
    };
    for y in y0..y0 + h {
        let start = (y * map.width + x0) * map.channels;
        out.data
            .extend_from_slice(&map.data[start..start + w * map.channels]);
    }
    out
}

/// Tile origins along one axis: every multiple of `stride` whose window
/// fits, plus a final origin flush against the far edge so every pixel is
/// covered. Count = ceil((extent - patch)/stride) + 1.
pub fn tile_origins(extent: usize, patch: usize, stride: usize) -> Vec<usize> {
    if patch >= extent {
        return vec![0];
    }
    let mut origins: Vec<usize> = (0..)
        .map(|i| i * stride)
        .take_while(|&o| o + patch <= extent)
        .collect();
    if *origins.last().expect("origin 0 always fits") != extent - patch {
        origins.push(extent - patch);
    }
    origins
}

/// Accumulates overlapping probability tiles and averages them; tracks the
/// per-pixel coverage count.
pub struct Reassembler {
    width: usize,
    height: usize,
    sum: Vec<f64>,
    count: Vec<u32>,
}

impl Reassembler {
    pub fn new(width: usize, height: usize) -> Self {
        Reassembler {
            width,
            height,
            sum: vec![0.0; width * height],
            count: vec![0; width * height],
        }
    }

    pub fn add_tile(&mut self, x0: usize, y0: usize, w: usize, h: usize, scores: &[f32]) {
        assert_eq!(scores.len(), w * h);
        assert!(x0 + w <= self.width && y0 + h <= self.height);
        for y in 0..h {
            for x in 0..w {
                let i = (y0 + y) * self.width + (x0 + x);
                self.sum[i] += scores[y * w + x] as f64;
                self.count[i] += 1;
            }
        }
    }

    /// Average map plus the coverage counts; every pixel must be covered.
    pub fn finish(self) -> Result<(Vec<f32>, Vec<u32>)> {
        if let Some(i) = self.count.iter().position(|&c| c == 0) {
            return Err(Error::contract(format!(
                "tiling left pixel ({}, {}) uncovered",
                i % self.width,
                i / self.width
            )));
        }
        let avg = self
            .sum
            .iter()
            .zip(&self.count)
            .map(|(&s, &c)| (s / c as f64) as f32)
            .collect();
        Ok((avg, self.count))
    }
}

/// value/255 per channel, shape (1, C, H, W).
pub fn normalize<E: Scalar>(map: &PixelMap) -> Tensor<E> {
    let shape = Shape::new(1, map.channels, map.height, map.width);
    let mut data = vec![E::zero(); shape.numel()];
    let scale = E::from_f64(1.0 / 255.0);
    for c in 0..map.channels {
        for y in 0..map.height {
            for x in 0..map.width {
                data[(c * map.height + y) * map.width + x] =
                    E::from_f64(map.get(x, y, c) as f64) * scale;
            }
        }
    }
    Tensor::from_vec(shape, data).expect("matching length")
}

/// Binary map {0,1} to a float tensor of shape (1, 1, H, W).
pub fn binary_to_tensor<E: Scalar>(map: &PixelMap) -> Tensor<E> {
    debug_assert_eq!(map.channels, 1);
    let shape = Shape::new(1, 1, map.height, map.width);
    let data = map
        .data
        .iter()
        .map(|&v| if v != 0 { E::one() } else { E::zero() })
        .collect();
    Tensor::from_vec(shape, data).expect("matching length")
}

/// Cut one aligned patch out of a (image, label, mask) triple.
pub fn crop_sample(
    id: &str,
    image: &PixelMap,
    label: &PixelMap,
    mask: &PixelMap,
    x0: usize,
    y0: usize,
    size: usize,
) -> SamplePair {
    SamplePair {
        id: format!("{id}@{x0},{y0}"),
        image: crop_map(image, x0, y0, size, size),
        label: crop_map(label, x0, y0, size, size),
        mask: crop_map(mask, x0, y0, size, size),
    }
}

/// Uniformly random patch origin over the valid range.
pub fn random_origin<R: Rng>(rng: &mut R, extent: usize, patch: usize) -> usize {
    if patch >= extent {
        0
    } else {
        rng.gen_range(0..=extent - patch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> PixelMap {
        let mut m = PixelMap::gray(w, h);
        for y in 0..h {
            for x in 0..w {
                m.set(x, y, 0, ((x * 7 + y * 13) % 256) as u8);
            }
        }
        m
    }

    #[test]
    fn drive_extents_pad_to_documented_values() {
        // 565x584 with multiple 32 -> 576x608
        assert_eq!(next_multiple(565, 32), 576);
        assert_eq!(next_multiple(584, 32), 608);
    }

    #[test]
    fn unpad_inverts_pad_exactly() {
        let m = ramp(13, 9);
        let padded = pad_reflect(&m, 16, 16);
        let crop = CropInfo {
            width: 13,
            height: 9,
        };
        assert_eq!(unpad(&padded, crop), m);
        // already-divisible input stays unchanged
        let m2 = ramp(16, 16);
        assert_eq!(pad_reflect(&m2, 16, 16), m2);
    }

    #[test]
    fn reflect_padding_mirrors_the_edge() {
        let mut m = PixelMap::gray(3, 1);
        m.data = vec![10, 20, 30];
        let p = pad_reflect(&m, 7, 1);
        // symmetric reflection: 10 20 30 | 30 20 10 10
        assert_eq!(p.data, vec![10, 20, 30, 30, 20, 10, 10]);
    }

    #[test]
    fn tiling_counts_match_formula() {
        // count per axis = ceil((extent - patch)/stride) + 1
        assert_eq!(tile_origins(576, 128, 64).len(), 8);
        assert_eq!(tile_origins(608, 128, 64).len(), 9); // 480/64 = 7.5 rounds up
                                                         // patch == extent: exactly one
        assert_eq!(tile_origins(128, 128, 64), vec![0]);
        // non-divisible overhang gets a flush final origin
        assert_eq!(tile_origins(100, 64, 32), vec![0, 32, 36]);
    }

    #[test]
    fn reassembly_covers_every_pixel_and_averages() {
        let (w, h) = (10, 6);
        let mut asm = Reassembler::new(w, h);
        for &y0 in &tile_origins(h, 4, 2) {
            for &x0 in &tile_origins(w, 4, 2) {
                asm.add_tile(x0, y0, 4, 4, &[0.5; 16]);
            }
        }
        let (avg, count) = asm.finish().unwrap();
        assert!(count.iter().all(|&c| c >= 1));
        assert!(avg.iter().all(|&v| (v - 0.5).abs() < 1e-7));
    }

    #[test]
    fn uncovered_pixel_is_detected() {
        let mut asm = Reassembler::new(4, 4);
        asm.add_tile(0, 0, 2, 2, &[1.0; 4]);
        assert!(asm.finish().is_err());
    }

    #[test]
    fn normalize_endpoints_and_midpoint() {
        let mut m = PixelMap::gray(3, 1);
        m.data = vec![0, 128, 255];
        let t: Tensor<f32> = normalize(&m);
        assert_eq!(t.data()[0], 0.0);
        assert!((t.data()[1] - 128.0 / 255.0).abs() < 1e-7);
        assert_eq!(t.data()[2], 1.0);
        assert!((t.data()[1] - 0.501961).abs() < 1e-6);
    }

    #[test]
    fn quantization_round_trip_error_is_bounded() {
        // exhaustive 0..=255 sweep: re-quantization error <= 1/510
        for v in 0..=255u8 {
            let m = PixelMap {
                width: 1,
                height: 1,
                channels: 1,
                data: vec![v],
            };
            let t: Tensor<f64> = normalize(&m);
            let back = (t.data()[0] * 255.0).round() as u8;
            assert_eq!(back, v);
            let requant_err = (t.data()[0] - back as f64 / 255.0).abs();
            assert!(requant_err <= 1.0 / 510.0);
        }
    }
}
