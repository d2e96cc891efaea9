//! Shared fixtures: procedurally generated fundus-like samples with strongly
//! correlated vessel labels, so desk-scale adversarial runs have something
//! learnable to overfit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vesselgan_core::data::netpbm::PixelMap;
use vesselgan_core::data::SamplePair;

/// Draw a wandering vessel stroke of the given half-width into the label.
fn draw_vessel<R: Rng>(label: &mut PixelMap, rng: &mut R, half_width: usize) {
    let (w, h) = (label.width as f64, label.height as f64);
    let mut x = rng.gen_range(0.0..w);
    let mut y = rng.gen_range(0.0..h);
    let mut angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let steps = (w + h) as usize;
    for _ in 0..steps {
        angle += rng.gen_range(-0.3..0.3);
        x += angle.cos();
        y += angle.sin();
        if x < 0.0 || y < 0.0 || x >= w || y >= h {
            break;
        }
        let (cx, cy) = (x as usize, y as usize);
        let hw = half_width as isize;
        for dy in -hw..=hw {
            for dx in -hw..=hw {
                let (px, py) = (cx as isize + dx, cy as isize + dy);
                if px >= 0 && py >= 0 && (px as usize) < label.width && (py as usize) < label.height
                {
                    label.set(px as usize, py as usize, 0, 1);
                }
            }
        }
    }
}

/// A fundus-like RGB image plus a binary vessel label and a full mask.
/// Vessels are dark strokes on a warm bright background with mild noise.
pub fn synthetic_sample(size: usize, seed: u64) -> SamplePair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut label = PixelMap::gray(size, size);
    for _ in 0..6 {
        let half_width = rng.gen_range(1..3);
        draw_vessel(&mut label, &mut rng, half_width);
    }
    let mut image = PixelMap::rgb(size, size);
    for y in 0..size {
        for x in 0..size {
            let vessel = label.get(x, y, 0) == 1;
            let n = rng.gen_range(-12i32..12);
            let (r, g, b) = if vessel { (70, 25, 15) } else { (190, 95, 45) };
            image.set(x, y, 0, (r + n).clamp(0, 255) as u8);
            image.set(x, y, 1, (g + n).clamp(0, 255) as u8);
            image.set(x, y, 2, (b + n).clamp(0, 255) as u8);
        }
    }
    let mut mask = PixelMap::gray(size, size);
    mask.data.iter_mut().for_each(|v| *v = 1);
    SamplePair {
        id: format!("synthetic-{seed}"),
        image,
        label,
        mask,
    }
}
