//! Self-describing binary checkpoints.
//!
//! Layout: the magic `MCKP1`, a length-prefixed JSON header (model kind,
//! the model's own configuration, the training iteration, and the run
//! configuration hash), then a count of named tensors, each serialized as
//! a length-prefixed name, a dimension list, and little-endian `f32`
//! values. Values are quantized to `f32` on write, exactly like the
//! dataset format, so a save/load cycle is idempotent. Optimizer moment
//! tables ride along under the `opt.` name prefix and are ignored by model
//! loading.

use crate::data::SkeletonTopology;
use crate::discriminator::{DiscriminatorConfig, DiscriminatorState};
use crate::error::{Error, Result};
use crate::evaluation::RecognizerState;
use crate::generator::{GeneratorConfig, GeneratorState};
use crate::gp::GpConfig;
use crate::nn::{Adam, MomentTables};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"MCKP1";

/// Bound on header and tensor sizes, rejecting absurd length prefixes from
/// corrupt files before allocation.
const MAX_HEADER_BYTES: u32 = 1 << 20;
const MAX_TENSOR_ELEMENTS: u64 = 1 << 28;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// What the tensors are: "generator", "critic", or "recognizer".
    pub kind: String,
    /// The model's own configuration (plus topology for graph models).
    pub config: serde_json::Value,
    pub iteration: u64,
    /// Hash of the run configuration that produced this checkpoint.
    pub config_hash: String,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    /// Named tensors in sorted order.
    pub tensors: BTreeMap<String, ArrayD<f64>>,
}

fn quantize(a: &ArrayD<f64>) -> ArrayD<f64> {
    a.mapv(|v| v as f32 as f64)
}

impl Checkpoint {
    pub fn new(
        kind: &str,
        config: serde_json::Value,
        iteration: u64,
        config_hash: &str,
    ) -> Self {
        Checkpoint {
            header: CheckpointHeader {
                kind: kind.to_string(),
                config,
                iteration,
                config_hash: config_hash.to_string(),
            },
            tensors: BTreeMap::new(),
        }
    }

    /// Stores a tensor (quantized to f32 precision).
    pub fn insert(&mut self, name: &str, value: &ArrayD<f64>) {
        self.tensors.insert(name.to_string(), quantize(value));
    }

    /// Adds optimizer moment tables under `opt.m.` / `opt.v.` prefixes plus
    /// the step counter as a scalar `opt.t`.
    pub fn insert_optimizer(&mut self, adam: &Adam) {
        let (m, v) = adam.moments();
        for (name, a) in m {
            self.insert(&format!("opt.m.{name}"), a);
        }
        for (name, a) in v {
            self.insert(&format!("opt.v.{name}"), a);
        }
        self.tensors.insert(
            "opt.t".into(),
            ArrayD::from_elem(IxDyn(&[]), adam.step_count() as f64),
        );
    }

    /// Rebuilds an [`Adam`] moment set (`t`, first moments, second moments)
    /// if the checkpoint carries one.
    pub fn optimizer_state(&self) -> Option<(u64, MomentTables, MomentTables)> {
        let t = self.tensors.get("opt.t")?;
        let t = t.iter().next().copied().unwrap_or(0.0) as u64;
        let mut m = HashMap::new();
        let mut v = HashMap::new();
        for (name, a) in &self.tensors {
            if let Some(rest) = name.strip_prefix("opt.m.") {
                m.insert(rest.to_string(), a.clone());
            } else if let Some(rest) = name.strip_prefix("opt.v.") {
                v.insert(rest.to_string(), a.clone());
            }
        }
        Some((t, m, v))
    }

    /// Copies stored tensors into `params` by name. Every parameter must be
    /// present with an identical shape; `opt.`-prefixed tensors are ignored.
    pub fn apply(&self, params: Vec<(String, &mut ArrayD<f64>)>) -> Result<()> {
        for (name, p) in params {
            let stored = self.tensors.get(&name).ok_or_else(|| {
                Error::data(format!("checkpoint: missing tensor {name}"))
            })?;
            if stored.shape() != p.shape() {
                return Err(Error::data(format!(
                    "checkpoint: tensor {name} has shape {:?}, model expects {:?}",
                    stored.shape(),
                    p.shape()
                )));
            }
            p.assign(stored);
        }
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let ctx = "writing checkpoint";
        let wrap = |e: std::io::Error| Error::io(e, ctx);
        w.write_all(CHECKPOINT_MAGIC).map_err(wrap)?;
        let header =
            serde_json::to_vec(&self.header).map_err(|e| Error::data(e.to_string()))?;
        w.write_u32::<LittleEndian>(header.len() as u32).map_err(wrap)?;
        w.write_all(&header).map_err(wrap)?;
        w.write_u32::<LittleEndian>(self.tensors.len() as u32)
            .map_err(wrap)?;
        for (name, a) in &self.tensors {
            let name_bytes = name.as_bytes();
            w.write_u32::<LittleEndian>(name_bytes.len() as u32)
                .map_err(wrap)?;
            w.write_all(name_bytes).map_err(wrap)?;
            w.write_u32::<LittleEndian>(a.ndim() as u32).map_err(wrap)?;
            for &d in a.shape() {
                w.write_u32::<LittleEndian>(d as u32).map_err(wrap)?;
            }
            for &v in a.iter() {
                w.write_f32::<LittleEndian>(v as f32).map_err(wrap)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Checkpoint> {
        let ctx = "reading checkpoint";
        let wrap = |e: std::io::Error| Error::io(e, ctx);
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic).map_err(wrap)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::data(format!(
                "checkpoint: bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"
            )));
        }
        let header_len = r.read_u32::<LittleEndian>().map_err(wrap)?;
        if header_len > MAX_HEADER_BYTES {
            return Err(Error::data(format!(
                "checkpoint: header length {header_len} exceeds limit"
            )));
        }
        let mut header_bytes = vec![0u8; header_len as usize];
        r.read_exact(&mut header_bytes).map_err(wrap)?;
        let header: CheckpointHeader = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::data(format!("checkpoint: bad header: {e}")))?;
        let count = r.read_u32::<LittleEndian>().map_err(wrap)?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.read_u32::<LittleEndian>().map_err(wrap)?;
            if name_len > MAX_HEADER_BYTES {
                return Err(Error::data("checkpoint: oversized tensor name".to_string()));
            }
            let mut name_bytes = vec![0u8; name_len as usize];
            r.read_exact(&mut name_bytes).map_err(wrap)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|e| Error::data(format!("checkpoint: bad tensor name: {e}")))?;
            let ndim = r.read_u32::<LittleEndian>().map_err(wrap)?;
            if ndim > 16 {
                return Err(Error::data(format!(
                    "checkpoint: tensor {name} claims {ndim} dimensions"
                )));
            }
            let mut dims = Vec::with_capacity(ndim as usize);
            let mut total = 1u64;
            for _ in 0..ndim {
                let d = r.read_u32::<LittleEndian>().map_err(wrap)? as usize;
                total = total.saturating_mul(d.max(1) as u64);
                dims.push(d);
            }
            if total > MAX_TENSOR_ELEMENTS {
                return Err(Error::data(format!(
                    "checkpoint: tensor {name} implies {total} elements"
                )));
            }
            let len: usize = dims.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                data.push(r.read_f32::<LittleEndian>().map_err(wrap)? as f64);
            }
            let a = ArrayD::from_shape_vec(IxDyn(&dims), data)
                .map_err(|e| Error::data(format!("checkpoint: tensor {name}: {e}")))?;
            tensors.insert(name, a);
        }
        Ok(Checkpoint { header, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path.as_ref())
            .map_err(|e| Error::io(e, format!("creating {}", path.as_ref().display())))?;
        let mut buf = std::io::BufWriter::new(&mut f);
        self.write_to(&mut buf)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let f = std::fs::File::open(path.as_ref())
            .map_err(|e| Error::io(e, format!("opening {}", path.as_ref().display())))?;
        Checkpoint::read_from(&mut std::io::BufReader::new(f))
    }
}

/// The `config` payload for graph models, which need the skeleton topology
/// to rebuild their stage plans.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphModelConfig {
    pub model: DiscriminatorConfig,
    pub topology: SkeletonTopology,
}

/// The `config` payload for the generator: the model plus the latent prior
/// it was trained against, so sampling needs nothing but the checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorBundle {
    pub model: GeneratorConfig,
    pub prior: GpConfig,
}

pub fn checkpoint_generator(
    gen: &GeneratorState,
    prior: &GpConfig,
    iteration: u64,
    config_hash: &str,
    adam: Option<&Adam>,
) -> Result<Checkpoint> {
    let config = serde_json::to_value(GeneratorBundle {
        model: gen.cfg.clone(),
        prior: prior.clone(),
    })
    .map_err(|e| Error::data(e.to_string()))?;
    let mut ckpt = Checkpoint::new("generator", config, iteration, config_hash);
    for (name, a) in gen.named_params() {
        ckpt.insert(&name, a);
    }
    if let Some(adam) = adam {
        ckpt.insert_optimizer(adam);
    }
    Ok(ckpt)
}

pub fn load_generator(ckpt: &Checkpoint) -> Result<(GeneratorState, GpConfig)> {
    if ckpt.header.kind != "generator" {
        return Err(Error::data(format!(
            "checkpoint holds a {}, not a generator",
            ckpt.header.kind
        )));
    }
    let bundle: GeneratorBundle = serde_json::from_value(ckpt.header.config.clone())
        .map_err(|e| Error::data(format!("checkpoint: bad generator config: {e}")))?;
    let mut state = GeneratorState::init(&bundle.model, &mut ChaCha8Rng::seed_from_u64(0))?;
    ckpt.apply(state.named_params_mut())?;
    Ok((state, bundle.prior))
}

pub fn checkpoint_critic(
    disc: &DiscriminatorState,
    topology: &SkeletonTopology,
    iteration: u64,
    config_hash: &str,
    adam: Option<&Adam>,
) -> Result<Checkpoint> {
    let config = serde_json::to_value(GraphModelConfig {
        model: disc.cfg.clone(),
        topology: topology.clone(),
    })
    .map_err(|e| Error::data(e.to_string()))?;
    let mut ckpt = Checkpoint::new("critic", config, iteration, config_hash);
    for (name, a) in disc.named_params() {
        ckpt.insert(&name, a);
    }
    if let Some(adam) = adam {
        ckpt.insert_optimizer(adam);
    }
    Ok(ckpt)
}

pub fn load_critic(ckpt: &Checkpoint) -> Result<DiscriminatorState> {
    if ckpt.header.kind != "critic" {
        return Err(Error::data(format!(
            "checkpoint holds a {}, not a critic",
            ckpt.header.kind
        )));
    }
    let cfg: GraphModelConfig = serde_json::from_value(ckpt.header.config.clone())
        .map_err(|e| Error::data(format!("checkpoint: bad critic config: {e}")))?;
    let mut state = DiscriminatorState::init(
        &cfg.model,
        &cfg.topology,
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    ckpt.apply(state.named_params_mut())?;
    Ok(state)
}

pub fn checkpoint_recognizer(
    rec: &RecognizerState,
    topology: &SkeletonTopology,
    iteration: u64,
    config_hash: &str,
) -> Result<Checkpoint> {
    let config = serde_json::to_value(GraphModelConfig {
        model: rec.cfg.clone(),
        topology: topology.clone(),
    })
    .map_err(|e| Error::data(e.to_string()))?;
    let mut ckpt = Checkpoint::new("recognizer", config, iteration, config_hash);
    for (name, a) in rec.named_params() {
        ckpt.insert(&name, a);
    }
    Ok(ckpt)
}

pub fn load_recognizer(ckpt: &Checkpoint) -> Result<RecognizerState> {
    if ckpt.header.kind != "recognizer" {
        return Err(Error::data(format!(
            "checkpoint holds a {}, not a recognizer",
            ckpt.header.kind
        )));
    }
    let cfg: GraphModelConfig = serde_json::from_value(ckpt.header.config.clone())
        .map_err(|e| Error::data(format!("checkpoint: bad recognizer config: {e}")))?;
    let mut state = RecognizerState::init(
        &cfg.model,
        &cfg.topology,
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    ckpt.apply(state.named_params_mut())?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Representation;
    use crate::generator::{GeneratorConfig, PositionalEncoding};
    use tempfile::tempdir;

    fn toy_gen() -> GeneratorState {
        let cfg = GeneratorConfig {
            latent_channels: 4,
            persons: 2,
            frames: 5,
            joints: 5,
            dims: 3,
            representation: Representation::JointPositions,
            class_count: 3,
            dim: 8,
            heads: 2,
            layers: 1,
            mlp_ratio: 2,
            positional: PositionalEncoding::Learned,
            shared_latent: true,
        };
        GeneratorState::init(&cfg, &mut ChaCha8Rng::seed_from_u64(99)).unwrap()
    }

    fn toy_prior() -> GpConfig {
        GpConfig::new(5, 4)
    }

    #[test]
    fn generator_round_trips_with_f32_idempotence() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("gen.ckpt");
        let gen = toy_gen();
        let ckpt = checkpoint_generator(&gen, &toy_prior(), 123, "deadbeef", None).unwrap();
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.header.kind, "generator");
        assert_eq!(loaded.header.iteration, 123);
        assert_eq!(loaded.header.config_hash, "deadbeef");
        let (restored, prior) = load_generator(&loaded).unwrap();
        assert_eq!(restored.cfg, gen.cfg);
        assert_eq!(prior, toy_prior());
        // quantization happened: stored values are f32-representable, the
        // fresh f64 weights generally are not
        let (first_name, first) = &gen.named_params()[0];
        assert_ne!(
            &ckpt.tensors[first_name], first,
            "expected f32 rounding on {first_name}"
        );
        // second save/load cycle is bit-identical: quantization is idempotent
        let ckpt2 =
            checkpoint_generator(&restored, &toy_prior(), 123, "deadbeef", None).unwrap();
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        ckpt.write_to(&mut buf_a).unwrap();
        ckpt2.write_to(&mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b, "round trip must be byte-stable");
    }

    #[test]
    fn optimizer_moments_round_trip() {
        let gen = toy_gen();
        let mut adam = Adam::new(1e-3, 0.0, 0.999);
        // run one synthetic step so moments exist
        let grads: std::collections::HashMap<String, ArrayD<f64>> = gen
            .named_params()
            .into_iter()
            .map(|(n, a)| (n, a.mapv(|v| v * 0.01)))
            .collect();
        let mut gen2 = gen.clone();
        adam.step(gen2.named_params_mut(), &grads);
        let ckpt = checkpoint_generator(&gen2, &toy_prior(), 1, "h", Some(&adam)).unwrap();
        let (t, m, v) = ckpt.optimizer_state().expect("moments stored");
        assert_eq!(t, 1);
        assert_eq!(m.len(), gen.named_params().len());
        assert_eq!(v.len(), m.len());
        let mut adam2 = Adam::new(1e-3, 0.0, 0.999);
        adam2.restore(t, m, v);
        assert_eq!(adam2.step_count(), 1);
    }

    #[test]
    fn wrong_kind_and_shape_are_rejected() {
        let gen = toy_gen();
        let ckpt = checkpoint_generator(&gen, &toy_prior(), 0, "h", None).unwrap();
        assert!(load_critic(&ckpt).is_err());
        // shape mismatch: same names, different width
        let mut other_cfg = gen.cfg.clone();
        other_cfg.dim = 12;
        other_cfg.heads = 3;
        let mut other =
            GeneratorState::init(&other_cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let err = ckpt.apply(other.named_params_mut()).unwrap_err();
        assert!(format!("{err}").contains("shape"));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let gen = toy_gen();
        let ckpt = checkpoint_generator(&gen, &toy_prior(), 0, "h", None).unwrap();
        let mut buf = Vec::new();
        ckpt.write_to(&mut buf).unwrap();
        // bad magic
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(Checkpoint::read_from(&mut bad.as_slice()).is_err());
        // truncation
        let short = &buf[..buf.len() / 2];
        assert!(Checkpoint::read_from(&mut &short[..]).is_err());
    }

    #[test]
    fn critic_and_recognizer_round_trip() {
        use crate::data::SkeletonTopology;
        use crate::discriminator::DiscriminatorConfig;
        let topo = SkeletonTopology::toy5();
        let cfg = DiscriminatorConfig {
            persons: 1,
            frames: 6,
            joints: 5,
            dims: 3,
            class_count: 2,
            stage_channels: vec![4, 6],
            stage_coarsen: vec![true, true],
            temporal_kernel: 4,
            temporal_stride: 2,
            spatial_subsets: 2,
            leaky_slope: 0.2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let disc = DiscriminatorState::init(&cfg, &topo, &mut rng).unwrap();
        let ckpt = checkpoint_critic(&disc, &topo, 55, "h", None).unwrap();
        let mut buf = Vec::new();
        ckpt.write_to(&mut buf).unwrap();
        let back = load_critic(&Checkpoint::read_from(&mut buf.as_slice()).unwrap()).unwrap();
        assert_eq!(back.cfg, disc.cfg);
        assert_eq!(back.plans.len(), disc.plans.len());

        let rec = RecognizerState::init(&cfg, &topo, &mut rng).unwrap();
        let ckpt = checkpoint_recognizer(&rec, &topo, 0, "h").unwrap();
        let mut buf = Vec::new();
        ckpt.write_to(&mut buf).unwrap();
        let back =
            load_recognizer(&Checkpoint::read_from(&mut buf.as_slice()).unwrap()).unwrap();
        assert_eq!(back.cfg, rec.cfg);
    }
}
