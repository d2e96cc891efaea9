//! Joint geometric augmentation of (image, label, mask) triples.

use rand::Rng;

use super::netpbm::PixelMap;
use super::SamplePair;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentationConfig {
    pub enabled: bool,
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    /// Rotate by a uniformly drawn multiple of 90 degrees. Quarter turns are
    /// only applied to square samples; non-square samples draw from {0, 180}.
    pub rot90: bool,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            enabled: true,
            hflip_prob: 0.5,
            vflip_prob: 0.5,
            rot90: true,
        }
    }
}

pub fn flip_h(map: &PixelMap) -> PixelMap {
    let mut out = map.clone();
    for y in 0..map.height {
        for x in 0..map.width {
            for c in 0..map.channels {
                out.set(x, y, c, map.get(map.width - 1 - x, y, c));
            }
        }
    }
    out
}

pub fn flip_v(map: &PixelMap) -> PixelMap {
    let mut out = map.clone();
    for y in 0..map.height {
        for x in 0..map.width {
            for c in 0..map.channels {
                out.set(x, y, c, map.get(x, map.height - 1 - y, c));
            }
        }
    }
    out
}

/// Rotate clockwise by `k` quarter turns.
pub fn rot90(map: &PixelMap, k: usize) -> PixelMap {
    let k = k % 4;
    if k == 0 {
        return map.clone();
    }
    let (w, h) = match k {
        1 | 3 => (map.height, map.width),
        _ => (map.width, map.height),
    };
    let mut out = PixelMap {
        width: w,
        height: h,
        channels: map.channels,
        data: vec![0; map.data.len()],
    };
    for y in 0..map.height {
        for x in 0..map.width {
            let (nx, ny) = match k {
                1 => (map.height - 1 - y, x),
                2 => (map.width - 1 - x, map.height - 1 - y),
                3 => (y, map.width - 1 - x),
                _ => unreachable!(),
            };
            for c in 0..map.channels {
                out.set(nx, ny, c, map.get(x, y, c));
            }
        }
    }
    out
}

/// Apply one random flip/rotation draw to all three maps identically.
pub fn augment<R: Rng>(sample: SamplePair, cfg: &AugmentationConfig, rng: &mut R) -> SamplePair {
    if !cfg.enabled {
        return sample;
    }
    let do_h = rng.gen_bool(cfg.hflip_prob);
    let do_v = rng.gen_bool(cfg.vflip_prob);
    let square = sample.image.width == sample.image.height;
    let quarter = if cfg.rot90 {
        if square {
            rng.gen_range(0..4usize)
        } else {
            2 * rng.gen_range(0..2usize)
        }
    } else {
        0
    };

    let apply = |m: &PixelMap| -> PixelMap {
        let mut m = m.clone();
        if do_h {
            m = flip_h(&m);
        }
        if do_v {
            m = flip_v(&m);
        }
        if quarter != 0 {
            m = rot90(&m, quarter);
        }
        m
    };

    SamplePair {
        id: sample.id,
        image: apply(&sample.image),
        label: apply(&sample.label),
        mask: apply(&sample.mask),
    }
}
