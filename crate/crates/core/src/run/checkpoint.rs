//! Binary checkpoint format.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "VGN1" | version u32 | tensor_count u32
//! per tensor: name_len u32 | name utf8 | rank u8 (=4) | extents u32 x 4
//!             | payload f32-LE row-major
//! trailer: epoch u64 | step u64 | adam_g_t u64 | adam_d_t u64
//!          | lr_g f64 | lr_d f64
//!          | rng states x 3 (noise, patch, augment): seed [u8;32] + word_pos u128
//!          | config_len u32 | canonical config text
//!          | fnv1a-64 checksum of everything before this field
//! ```
//!
//! Tensor names carry their section: `gen/...`, `disc/...` (parameters),
//! `stats/<layer>/running_{mean,var}` (batch-norm stats), and
//! `adam_{g,d}/{m,v}/<param>` (optimizer moments). Serialization preserves
//! insertion order, so save -> load -> save is byte-identical.

use std::path::Path;

use indexmap::IndexMap;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{fnv1a, RunConfig};
use crate::error::{Error, Result};
use crate::optim::AdamState;
use crate::params::{ParameterStore, RunningStats};
use crate::tensor::{Shape, Tensor};

const MAGIC: &[u8; 4] = b"VGN1";
const VERSION: u32 = 1;

/// Serializable state of one seeded RNG stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Full training state: both networks, norm statistics, both optimizers,
/// counters, RNG streams and the canonical config text.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub gen: ParameterStore<f32>,
    pub gen_stats: RunningStats<f32>,
    pub disc: ParameterStore<f32>,
    pub disc_stats: RunningStats<f32>,
    pub adam_g: AdamState<f32>,
    pub adam_d: AdamState<f32>,
    pub epoch: u64,
    pub step: u64,
    pub noise_rng: RngState,
    pub patch_rng: RngState,
    pub augment_rng: RngState,
    pub config_text: String,
}

impl Checkpoint {
    pub fn config(&self) -> Result<RunConfig> {
        RunConfig::parse(&self.config_text)
    }

    pub fn config_hash(&self) -> u64 {
        fnv1a(self.config_text.as_bytes())
    }

    /// Hash that ignores run-length keys; see [`RunConfig::compatible_hash`].
    pub fn compatible_hash(&self) -> u64 {
        super::config::compatible_hash_of(&self.config_text)
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn tensor(&mut self, name: &str, t: &Tensor<f32>) {
        self.buf
            .extend_from_slice(&(name.len() as u32).to_le_bytes());
        self.buf.extend_from_slice(name.as_bytes());
        self.buf.push(4u8);
        for e in t.shape().0 {
            self.buf.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in t.data() {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn serialize(ckpt: &Checkpoint) -> Vec<u8> {
    let mut tensors: Vec<(String, &Tensor<f32>)> = Vec::new();
    for (name, t) in ckpt.gen.iter() {
        tensors.push((name.clone(), t));
    }
    for (name, t) in ckpt.disc.iter() {
        tensors.push((name.clone(), t));
    }
    for (layer, mean, var) in ckpt.gen_stats.iter().chain(ckpt.disc_stats.iter()) {
        tensors.push((format!("stats/{layer}/running_mean"), mean));
        tensors.push((format!("stats/{layer}/running_var"), var));
    }
    for (which, state) in [("adam_g", &ckpt.adam_g), ("adam_d", &ckpt.adam_d)] {
        for (name, m, v) in state.moments() {
            tensors.push((format!("{which}/m/{name}"), m));
            tensors.push((format!("{which}/v/{name}"), v));
        }
    }

    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.buf.extend_from_slice(&VERSION.to_le_bytes());
    w.buf
        .extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        w.tensor(name, t);
    }
    w.buf.extend_from_slice(&ckpt.epoch.to_le_bytes());
    w.buf.extend_from_slice(&ckpt.step.to_le_bytes());
    w.buf.extend_from_slice(&ckpt.adam_g.t.to_le_bytes());
    w.buf.extend_from_slice(&ckpt.adam_d.t.to_le_bytes());
    w.buf.extend_from_slice(&ckpt.adam_g.lr.to_le_bytes());
    w.buf.extend_from_slice(&ckpt.adam_d.lr.to_le_bytes());
    for rng in [&ckpt.noise_rng, &ckpt.patch_rng, &ckpt.augment_rng] {
        w.buf.extend_from_slice(&rng.seed);
        w.buf.extend_from_slice(&rng.word_pos.to_le_bytes());
    }
    w.buf
        .extend_from_slice(&(ckpt.config_text.len() as u32).to_le_bytes());
    w.buf.extend_from_slice(ckpt.config_text.as_bytes());
    let checksum = fnv1a(&w.buf);
    w.buf.extend_from_slice(&checksum.to_le_bytes());
    w.buf
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, serialize(ckpt)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::data(format!(
                "checkpoint truncated at byte {} while reading {what} ({n} bytes needed)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn deserialize(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 8 {
        return Err(Error::data("checkpoint too short for header"));
    }
    // checksum first: any flipped byte fails loudly
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    let computed = fnv1a(body);
    if stored != computed {
        return Err(Error::data(format!(
            "checkpoint checksum mismatch: stored {stored:#018x}, computed {computed:#018x} — file is corrupt"
        )));
    }

    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::data("bad checkpoint magic (expected 'VGN1')"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::data(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let count = r.u32("tensor count")? as usize;

    let mut tensors: IndexMap<String, Tensor<f32>> = IndexMap::with_capacity(count);
    for i in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| Error::data(format!("tensor {i}: name is not UTF-8")))?
            .to_string();
        let rank = r.take(1, "rank")?[0];
        if rank != 4 {
            return Err(Error::data(format!(
                "tensor '{name}': rank {rank}, expected 4"
            )));
        }
        let mut extents = [0usize; 4];
        for e in extents.iter_mut() {
            *e = r.u32("extent")? as usize;
        }
        let shape = Shape(extents);
        let numel = shape.numel();
        let payload = r.take(numel * 4, "payload")?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::from_vec(shape, data)
            .map_err(|e| Error::data(format!("tensor '{name}': {e}")))?;
        if tensors.insert(name.clone(), tensor).is_some() {
            return Err(Error::data(format!(
                "duplicate tensor name '{name}' in checkpoint"
            )));
        }
    }

    let epoch = r.u64("epoch")?;
    let step = r.u64("step")?;
    let adam_g_t = r.u64("adam_g step")?;
    let adam_d_t = r.u64("adam_d step")?;
    let lr_g = r.f64("lr_g")?;
    let lr_d = r.f64("lr_d")?;
    let mut rngs = Vec::with_capacity(3);
    for what in ["noise rng", "patch rng", "augment rng"] {
        let seed: [u8; 32] = r.take(32, what)?.try_into().unwrap();
        let word_pos = u128::from_le_bytes(r.take(16, what)?.try_into().unwrap());
        rngs.push(RngState { seed, word_pos });
    }
    let config_len = r.u32("config length")? as usize;
    let config_text = std::str::from_utf8(r.take(config_len, "config text")?)
        .map_err(|_| Error::data("embedded config is not UTF-8"))?
        .to_string();
    if r.pos != body.len() {
        return Err(Error::data(format!(
            "checkpoint has {} unexpected trailing bytes",
            body.len() - r.pos
        )));
    }

    // partition the flat tensor list back into sections
    let mut gen = ParameterStore::new();
    let mut disc = ParameterStore::new();
    let mut gen_stats = RunningStats::new();
    let mut disc_stats = RunningStats::new();
    let mut adam: IndexMap<String, IndexMap<String, Tensor<f32>>> = IndexMap::new();
    for k in ["adam_g/m", "adam_g/v", "adam_d/m", "adam_d/v"] {
        adam.insert(k.to_string(), IndexMap::new());
    }
    type StatPair = (Option<Tensor<f32>>, Option<Tensor<f32>>);
    let mut stat_pairs: IndexMap<String, StatPair> = IndexMap::new();

    for (name, tensor) in tensors {
        if let Some(rest) = name.strip_prefix("stats/") {
            let (layer, which) = rest
                .rsplit_once('/')
                .ok_or_else(|| Error::data(format!("malformed stats tensor name '{name}'")))?;
            let entry = stat_pairs.entry(layer.to_string()).or_default();
            match which {
                "running_mean" => entry.0 = Some(tensor),
                "running_var" => entry.1 = Some(tensor),
                _ => return Err(Error::data(format!("malformed stats tensor name '{name}'"))),
            }
        } else if let Some(rest) = name.strip_prefix("adam_g/m/") {
            adam["adam_g/m"].insert(rest.to_string(), tensor);
        } else if let Some(rest) = name.strip_prefix("adam_g/v/") {
            adam["adam_g/v"].insert(rest.to_string(), tensor);
        } else if let Some(rest) = name.strip_prefix("adam_d/m/") {
            adam["adam_d/m"].insert(rest.to_string(), tensor);
        } else if let Some(rest) = name.strip_prefix("adam_d/v/") {
            adam["adam_d/v"].insert(rest.to_string(), tensor);
        } else if name.starts_with("gen/") {
            gen.insert(name, tensor)?;
        } else if name.starts_with("disc/") {
            disc.insert(name, tensor)?;
        } else {
            return Err(Error::data(format!(
                "tensor '{name}' belongs to no known section"
            )));
        }
    }

    for (layer, (mean, var)) in stat_pairs {
        let mean =
            mean.ok_or_else(|| Error::data(format!("stats layer '{layer}' misses running_mean")))?;
        let var =
            var.ok_or_else(|| Error::data(format!("stats layer '{layer}' misses running_var")))?;
        let channels = mean.numel();
        let target = if layer.starts_with("gen/") {
            &mut gen_stats
        } else {
            &mut disc_stats
        };
        target.register(&layer, channels)?;
        let (m, v) = target.pair_mut(&layer)?;
        *m = mean;
        *v = var;
    }

    let adam_g = AdamState::from_parts(
        &gen,
        adam.shift_remove("adam_g/m").unwrap(),
        adam.shift_remove("adam_g/v").unwrap(),
        adam_g_t,
        lr_g,
    )?;
    let adam_d = AdamState::from_parts(
        &disc,
        adam.shift_remove("adam_d/m").unwrap(),
        adam.shift_remove("adam_d/v").unwrap(),
        adam_d_t,
        lr_d,
    )?;

    Ok(Checkpoint {
        gen,
        gen_stats,
        disc,
        disc_stats,
        adam_g,
        adam_d,
        epoch,
        step,
        noise_rng: rngs[0].clone(),
        patch_rng: rngs[1].clone(),
        augment_rng: rngs[2].clone(),
        config_text,
    })
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    deserialize(&bytes).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{
        build_discriminator, build_generator, DiscriminatorConfig, GeneratorConfig,
    };
    use crate::optim::AdamConfig;

    fn tiny_checkpoint() -> Checkpoint {
        let gcfg = GeneratorConfig {
            depth: 2,
            base_channels: 4,
            max_channels: 8,
            ..Default::default()
        };
        let dcfg = DiscriminatorConfig {
            depth: 1,
            base_channels: 4,
            max_channels: 8,
            ..Default::default()
        };
        let (gen, gen_stats) = build_generator::<f32>(&gcfg, 11).unwrap();
        let (disc, disc_stats) = build_discriminator::<f32>(&dcfg, 12).unwrap();
        let acfg = AdamConfig::default();
        let adam_g = AdamState::new(&gen, &acfg);
        let adam_d = AdamState::new(&disc, &acfg);
        let mut cfg = RunConfig {
            generator: gcfg,
            discriminator: dcfg,
            ..RunConfig::default()
        };
        cfg.finalize().unwrap();
        let noise = ChaCha8Rng::seed_from_u64(1);
        let mut patch = ChaCha8Rng::seed_from_u64(2);
        let augment = ChaCha8Rng::seed_from_u64(3);
        use rand::RngCore;
        patch.next_u64(); // advance so word_pos round-trips nontrivially
        Checkpoint {
            gen,
            gen_stats,
            disc,
            disc_stats,
            adam_g,
            adam_d,
            epoch: 3,
            step: 77,
            noise_rng: RngState::capture(&noise),
            patch_rng: RngState::capture(&patch),
            augment_rng: RngState::capture(&augment),
            config_text: cfg.serialize(),
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let ckpt = tiny_checkpoint();
        let bytes = serialize(&ckpt);
        let loaded = deserialize(&bytes).unwrap();
        let again = serialize(&loaded);
        assert_eq!(bytes, again);
        assert_eq!(loaded.epoch, 3);
        assert_eq!(loaded.step, 77);
        assert_eq!(loaded.patch_rng, ckpt.patch_rng);
    }

    #[test]
    fn any_flipped_byte_is_detected() {
        let bytes = serialize(&tiny_checkpoint());
        // flip a byte in the middle of some tensor payload
        for &offset in &[100usize, bytes.len() / 2, bytes.len() - 20] {
            let mut corrupt = bytes.clone();
            corrupt[offset] ^= 0x40;
            assert!(
                deserialize(&corrupt).is_err(),
                "flip at {offset} went undetected"
            );
        }
    }

    #[test]
    fn bad_magic_and_version_rejected() {
        let mut bytes = serialize(&tiny_checkpoint());
        bytes[0] = b'X';
        // fix the checksum so the magic check itself is exercised
        let n = bytes.len();
        let sum = fnv1a(&bytes[..n - 8]);
        bytes[n - 8..].copy_from_slice(&sum.to_le_bytes());
        let err = deserialize(&bytes).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn tensor_count_matches_params_plus_moments_plus_stats() {
        let ckpt = tiny_checkpoint();
        let bytes = serialize(&ckpt);
        let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let expected = ckpt.gen.len() + ckpt.disc.len()            // parameters
            + 2 * (ckpt.gen.len() + ckpt.disc.len())               // adam m and v
            + 2 * (ckpt.gen_stats.len() + ckpt.disc_stats.len()); // running stats
        assert_eq!(count, expected);
    }

    #[test]
    fn rng_state_round_trips_mid_stream() {
        use rand::RngCore;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..13 {
            rng.next_u32();
        }
        let state = RngState::capture(&rng);
        let mut restored = state.restore();
        for _ in 0..50 {
            assert_eq!(rng.next_u64(), restored.next_u64());
        }
    }
}
