//! Fixtures for the acceptance suite: synthetic fundus-like samples and
//! on-disk datasets in the documented layout.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vesselgan_core::data::netpbm::{self, PixelMap};
use vesselgan_core::data::SamplePair;

fn draw_vessel<R: Rng>(label: &mut PixelMap, rng: &mut R, half_width: usize) {
    let (w, h) = (label.width as f64, label.height as f64);
    let mut x = rng.gen_range(0.0..w);
    let mut y = rng.gen_range(0.0..h);
    let mut angle = rng.gen_range(0.0..std::f64::consts::TAU);
    for _ in 0..(w + h) as usize {
        angle += rng.gen_range(-0.3..0.3);
        x += angle.cos();
        y += angle.sin();
        if x < 0.0 || y < 0.0 || x >= w || y >= h {
            break;
        }
        let (cx, cy) = (x as isize, y as isize);
        let hw = half_width as isize;
        for dy in -hw..=hw {
            for dx in -hw..=hw {
                let (px, py) = (cx + dx, cy + dy);
                if px >= 0 && py >= 0 && (px as usize) < label.width && (py as usize) < label.height
                {
                    label.set(px as usize, py as usize, 0, 1);
                }
            }
        }
    }
}

/// Fundus-like RGB sample with dark vessel strokes on a warm background,
/// a matching binary label and an all-ones field-of-view mask.
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

/// Write a dataset in the documented layout: images/<stem>.ppm,
/// labels/<stem>.pgm, masks/<stem>.pgm.
pub fn write_dataset(root: &Path, stems: &[&str], size: usize) {
    for sub in ["images", "labels", "masks"] {
        std::fs::create_dir_all(root.join(sub)).unwrap();
    }
    for (i, stem) in stems.iter().enumerate() {
        let sample = synthetic_sample(size, 1000 + i as u64);
        netpbm::write_file(
            &root.join("images").join(format!("{stem}.ppm")),
            &sample.image,
        )
        .unwrap();
        let label255 = PixelMap {
            width: sample.label.width,
            height: sample.label.height,
            channels: 1,
            data: sample
                .label
                .data
                .iter()
                .map(|&v| if v != 0 { 255 } else { 0 })
                .collect(),
        };
        netpbm::write_file(&root.join("labels").join(format!("{stem}.pgm")), &label255).unwrap();
        let mask255 = PixelMap {
            width: sample.mask.width,
            height: sample.mask.height,
            channels: 1,
            data: sample
                .mask
                .data
                .iter()
                .map(|&v| if v != 0 { 255 } else { 0 })
                .collect(),
        };
        netpbm::write_file(&root.join("masks").join(format!("{stem}.pgm")), &mask255).unwrap();
    }
}

/// Tiny run configuration (depth-2 generator, depth-1 discriminator) that
/// trains in milliseconds; returned as config-file text.
pub fn tiny_config_text() -> String {
    "\
generator.depth = 2
generator.base_channels = 4
generator.max_channels = 8
discriminator.depth = 1
discriminator.base_channels = 4
discriminator.max_channels = 8
data.patch_size = 16
data.patch_stride = 16
data.patches_per_image = 2
train.epochs = 2
train.batch_size = 2
train.seed = 7
train.checkpoint_every_epochs = 1
"
    .to_string()
}
