//! Dataset ingestion for DRIVE/STARE-style fundus layouts.
//!
//! Expected layout under the dataset root (all NetPBM, see README for
//! conversion one-liners):
//!
//! ```text
//! <root>/images/<stem>.ppm   # RGB fundus images
//! <root>/labels/<stem>.pgm   # binary vessel maps (any nonzero = vessel)
//! <root>/masks/<stem>.pgm    # optional field-of-view masks
//! ```
//!
//! Files are matched by shared basename stem.

pub mod augment;
pub mod netpbm;
pub mod patches;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use netpbm::PixelMap;

/// One loaded dataset entry.
#[derive(Clone, Debug)]
pub struct ImageRecord {
    pub id: String,
    /// RGB (or grayscale) fundus image.
    pub image: PixelMap,
    /// Binary vessel map in {0,1}, present for training images.
    pub label: Option<PixelMap>,
    /// Binary field-of-view mask in {0,1}.
    pub fov_mask: Option<PixelMap>,
    /// True when the mask was synthesized rather than read from disk.
    pub fov_synthesized: bool,
    pub source_width: usize,
    pub source_height: usize,
}

/// Aligned (input, target, mask) patch handed to the training loop.
#[derive(Clone, Debug)]
pub struct SamplePair {
    pub id: String,
    pub image: PixelMap,
    /// Values in {0,1}.
    pub label: PixelMap,
    /// Values in {0,1}; 0 marks pixels excluded from metrics.
    pub mask: PixelMap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Drive,
    Stare,
    Generic,
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drive" => Ok(DatasetKind::Drive),
            "stare" => Ok(DatasetKind::Stare),
            "generic" => Ok(DatasetKind::Generic),
            other => Err(Error::config(format!(
                "unknown dataset kind '{other}' (expected drive|stare|generic)"
            ))),
        }
    }
}

/// Paths of one record, resolved and validated at manifest build time.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecordPaths {
    pub stem: String,
    pub image: PathBuf,
    pub label: Option<PathBuf>,
    pub mask: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub kind: DatasetKind,
    pub split: String,
    pub train: Vec<RecordPaths>,
    pub test: Vec<RecordPaths>,
    /// Stems that had no mask on disk (masks get synthesized on load).
    pub missing_masks: Vec<String>,
}

impl DatasetManifest {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::data(format!("manifest serialization failed: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    /// STARE only: hold out exactly this (0-based, filename-order) index as
    /// the test set and train on the rest.
    pub stare_leave_one_out: Option<usize>,
}

fn stem_of(path: &Path) -> Option<String> {
    path.file_stem().map(|s| s.to_string_lossy().into_owned())
}

/// Leading decimal number of a stem, e.g. "21_training" -> 21.
fn leading_number(stem: &str) -> Option<u32> {
    let digits: String = stem.chars().take_while(|c| c.is_ascii_digit()).collect();
    digits.parse().ok()
}

/// Build a manifest from the documented directory layout and the split rule
/// for `kind`:
/// - drive: official 20/20 split — stems containing "training"/"test", or by
///   the DRIVE numbering (01-20 test, 21-40 training)
/// - stare: first half train / second half test in filename order, or
///   leave-one-out via [`LoadOptions`]
/// - generic: stems containing "test" are test, everything else trains
pub fn load_dataset(root: &Path, kind: DatasetKind, opts: &LoadOptions) -> Result<DatasetManifest> {
    let images_dir = root.join("images");
    if !images_dir.is_dir() {
        return Err(Error::data(format!(
            "missing images directory {}",
            images_dir.display()
        )));
    }
    let mut stems: BTreeMap<String, PathBuf> = BTreeMap::new();
    let entries = std::fs::read_dir(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&images_dir, e))?.path();
        let ext = path
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase());
        if !matches!(ext.as_deref(), Some("ppm") | Some("pgm")) {
            continue;
        }
        let stem = stem_of(&path)
            .ok_or_else(|| Error::data(format!("cannot derive stem from {}", path.display())))?;
        if stems.insert(stem.clone(), path).is_some() {
            return Err(Error::data(format!("duplicate image stem '{stem}'")));
        }
    }
    if stems.is_empty() {
        return Err(Error::data(format!(
            "no .ppm/.pgm images under {}",
            images_dir.display()
        )));
    }

    let mut records = Vec::new();
    let mut missing_masks = Vec::new();
    for (stem, image) in &stems {
        let label = existing(&root.join("labels").join(format!("{stem}.pgm")));
        let mask = existing(&root.join("masks").join(format!("{stem}.pgm")));
        if mask.is_none() {
            missing_masks.push(stem.clone());
        }
        records.push(RecordPaths {
            stem: stem.clone(),
            image: image.clone(),
            label,
            mask,
        });
    }

    let (train, test, split) = split_records(records, kind, opts)?;

    // every train image needs a label
    for r in &train {
        if r.label.is_none() {
            return Err(Error::data(format!(
                "training image '{}' has no label at labels/{}.pgm",
                r.stem, r.stem
            )));
        }
    }
    // every listed file must exist and parse
    for r in train.iter().chain(&test) {
        for path in [Some(&r.image), r.label.as_ref(), r.mask.as_ref()]
            .into_iter()
            .flatten()
        {
            netpbm::read_file(path)?;
        }
    }

    Ok(DatasetManifest {
        kind,
        split,
        train,
        test,
        missing_masks,
    })
}

fn existing(path: &Path) -> Option<PathBuf> {
    path.is_file().then(|| path.to_path_buf())
}

fn split_records(
    records: Vec<RecordPaths>,
    kind: DatasetKind,
    opts: &LoadOptions,
) -> Result<(Vec<RecordPaths>, Vec<RecordPaths>, String)> {
    match kind {
        DatasetKind::Drive => {
            let mut train = Vec::new();
            let mut test = Vec::new();
            for r in records {
                if r.stem.contains("training") {
                    train.push(r);
                } else if r.stem.contains("test") {
                    test.push(r);
                } else if let Some(n) = leading_number(&r.stem) {
                    if n >= 21 {
                        train.push(r);
                    } else {
                        test.push(r);
                    }
                } else {
                    return Err(Error::data(format!(
                        "cannot place '{}' in the DRIVE split: stem has neither training/test marker nor a leading number",
                        r.stem
                    )));
                }
            }
            Ok((train, test, "drive official 20/20".into()))
        }
        DatasetKind::Stare => {
            if let Some(holdout) = opts.stare_leave_one_out {
                if holdout >= records.len() {
                    return Err(Error::config(format!(
                        "leave-one-out index {holdout} out of range for {} images",
                        records.len()
                    )));
                }
                let mut train = records;
                let test = vec![train.remove(holdout)];
                Ok((train, test, format!("stare leave-one-out #{holdout}")))
            } else {
                let half = records.len() / 2;
                let test = records[half..].to_vec();
                let train = records[..half].to_vec();
                Ok((
                    train,
                    test,
                    format!(
                        "stare first-{half}-train/last-{}-test",
                        half + records.len() % 2
                    ),
                ))
            }
        }
        DatasetKind::Generic => {
            let (test, train): (Vec<_>, Vec<_>) =
                records.into_iter().partition(|r| r.stem.contains("test"));
            Ok((train, test, "generic by 'test' stem marker".into()))
        }
    }
}

/// Load and validate one record: parse the image, binarize the label, read
/// or synthesize the field-of-view mask.
pub fn load_record(paths: &RecordPaths) -> Result<ImageRecord> {
    let image = netpbm::read_file(&paths.image)?;
    let label = match &paths.label {
        Some(p) => {
            let raw = netpbm::read_file(p)?;
            if raw.channels != 1 {
                return Err(Error::data(format!(
                    "label {} must be grayscale",
                    p.display()
                )));
            }
            if (raw.width, raw.height) != (image.width, image.height) {
                return Err(Error::data(format!(
                    "label {} is {}x{} but image is {}x{}",
                    p.display(),
                    raw.width,
                    raw.height,
                    image.width,
                    image.height
                )));
            }
            Some(raw.binarized())
        }
        None => None,
    };
    let (fov_mask, fov_synthesized) = match &paths.mask {
        Some(p) => {
            let raw = netpbm::read_file(p)?;
            if (raw.width, raw.height) != (image.width, image.height) {
                return Err(Error::data(format!(
                    "mask {} is {}x{} but image is {}x{}",
                    p.display(),
                    raw.width,
                    raw.height,
                    image.width,
                    image.height
                )));
            }
            (Some(raw.binarized()), false)
        }
        None => (Some(synthesize_fov(&image)), true),
    };
    Ok(ImageRecord {
        id: paths.stem.clone(),
        source_width: image.width,
        source_height: image.height,
        image,
        label,
        fov_mask,
        fov_synthesized,
    })
}

/// Field-of-view synthesis for datasets without masks (STARE): threshold the
/// red channel at 40/255, then erode by one pixel.
pub fn synthesize_fov(image: &PixelMap) -> PixelMap {
    let mut fov = PixelMap::gray(image.width, image.height);
    for y in 0..image.height {
        for x in 0..image.width {
            fov.set(x, y, 0, (image.get(x, y, 0) >= 40) as u8);
        }
    }
    erode_3x3(&fov)
}

fn erode_3x3(map: &PixelMap) -> PixelMap {
    let mut out = PixelMap::gray(map.width, map.height);
    for y in 0..map.height {
        for x in 0..map.width {
            let mut keep = true;
            'scan: for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= map.width as i64 || ny >= map.height as i64 {
                        keep = false;
                        break 'scan;
                    }
                    if map.get(nx as usize, ny as usize, 0) == 0 {
                        keep = false;
                        break 'scan;
                    }
                }
            }
            out.set(x, y, 0, keep as u8);
        }
    }
    out
}
