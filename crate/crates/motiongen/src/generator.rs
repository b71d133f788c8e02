//! Motion generator: latent sequences in, multi-person motion out.
//!
//! A latent sequence is projected to model width and laid out as a
//! `frames x persons` token grid. One class-embedding token is prepended
//! along the temporal axis, every token receives a positional encoding
//! `PE(t, p) = concat(TPE(t), PPE(p))`, and the grid then runs through `L`
//! alternating attention stages: an interaction stage attending across
//! persons within each frame, then a temporal stage attending across frames
//! within each person. With a single person the interaction stage is skipped
//! entirely. The class token position is discarded before the affine output
//! projection back to motion channels.

use crate::data::{MotionSequence, Representation};
use crate::error::{Error, Result};
use crate::nn::{normal_init, Affine, AffineV, ParamBag, TransformerBlock, TransformerBlockV};
use crate::tensor::{concat, Graph, Var};
use ndarray::{Array3, Array4, ArrayD, Axis, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Positional table flavor. Learned tables are trained parameters;
/// sinusoidal tables are fixed functions of position regenerated from the
/// configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalEncoding {
    Learned,
    Sinusoidal,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GeneratorConfig {
    /// Latent channels per frame, C0.
    pub latent_channels: usize,
    pub persons: usize,
    pub frames: usize,
    pub joints: usize,
    pub dims: usize,
    pub representation: Representation,
    pub class_count: usize,
    /// Model width d.
    pub dim: usize,
    pub heads: usize,
    /// Number of interaction/temporal stage pairs.
    pub layers: usize,
    pub mlp_ratio: usize,
    pub positional: PositionalEncoding,
    /// One latent shared by all persons (true) or an independent latent per
    /// person (false).
    pub shared_latent: bool,
}

impl GeneratorConfig {
    /// Flattened output channels: root trajectory plus joint data.
    pub fn out_channels(&self) -> usize {
        3 + self.joints * self.dims
    }

    /// Temporal/person encoding widths: an even split for multi-person, the
    /// full width for one person.
    pub fn pe_dims(&self) -> (usize, usize) {
        if self.persons == 1 {
            (self.dim, 0)
        } else {
            (self.dim / 2, self.dim / 2)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_channels == 0
            || self.persons == 0
            || self.frames == 0
            || self.joints == 0
            || self.dims == 0
            || self.class_count == 0
            || self.layers == 0
            || self.mlp_ratio == 0
        {
            return Err(Error::config("generator: zero-sized dimension"));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "generator: width {} must divide into {} heads",
                self.dim, self.heads
            )));
        }
        if self.persons > 1 && !self.dim.is_multiple_of(2) {
            return Err(Error::config(
                "generator: width must be even to split positional encodings",
            ));
        }
        Ok(())
    }
}

/// Fixed sinusoidal table `[len, dim]` with interleaved sine/cosine pairs.
pub fn sinusoidal_table(len: usize, dim: usize) -> ArrayD<f64> {
    ArrayD::from_shape_fn(IxDyn(&[len, dim]), |ix| {
        let (pos, i) = (ix[0] as f64, ix[1]);
        let pair = (i / 2) as f64;
        let freq = 1.0 / 10000f64.powf(2.0 * pair / dim.max(1) as f64);
        if i % 2 == 0 {
            (pos * freq).sin()
        } else {
            (pos * freq).cos()
        }
    })
}

/// One generator stage pair. The interaction block is absent exactly when
/// the configuration is single-person.
#[derive(Debug, Clone)]
pub struct GeneratorLayer {
    pub interaction: Option<TransformerBlock>,
    pub temporal: TransformerBlock,
}

#[derive(Debug, Clone)]
pub struct GeneratorState {
    pub cfg: GeneratorConfig,
    pub input_projection: Affine,
    /// `[class_count, dim]` class token table.
    pub class_embedding: ArrayD<f64>,
    /// `[frames + 1, d_t]` temporal positions, including the class token row.
    pub tpe: ArrayD<f64>,
    /// `[persons, d_p]` person positions; empty second axis for one person.
    pub ppe: ArrayD<f64>,
    pub blocks: Vec<GeneratorLayer>,
    pub output_projection: Affine,
}

impl GeneratorState {
    pub fn init<R: Rng + ?Sized>(cfg: &GeneratorConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (dt, dp) = cfg.pe_dims();
        let (tpe, ppe) = match cfg.positional {
            PositionalEncoding::Learned => (
                normal_init(rng, &[cfg.frames + 1, dt], 0.02),
                normal_init(rng, &[cfg.persons, dp], 0.02),
            ),
            PositionalEncoding::Sinusoidal => (
                sinusoidal_table(cfg.frames + 1, dt),
                sinusoidal_table(cfg.persons, dp),
            ),
        };
        let blocks = (0..cfg.layers)
            .map(|_| GeneratorLayer {
                interaction: (cfg.persons > 1)
                    .then(|| TransformerBlock::init(rng, cfg.dim, cfg.heads, cfg.mlp_ratio)),
                temporal: TransformerBlock::init(rng, cfg.dim, cfg.heads, cfg.mlp_ratio),
            })
            .collect();
        Ok(GeneratorState {
            cfg: cfg.clone(),
            input_projection: Affine::init(rng, cfg.latent_channels, cfg.dim),
            class_embedding: normal_init(rng, &[cfg.class_count, cfg.dim], 0.02),
            tpe,
            ppe,
            blocks,
            output_projection: Affine::init(rng, cfg.dim, cfg.out_channels()),
        })
    }

    /// Trainable parameters in canonical order. Sinusoidal positional tables
    /// are fixed functions of the configuration and are excluded.
    pub fn named_params(&self) -> Vec<(String, &ArrayD<f64>)> {
        let mut out: Vec<(String, &ArrayD<f64>)> = vec![
            ("input_projection.w".into(), &self.input_projection.w),
            ("input_projection.b".into(), &self.input_projection.b),
            ("class_embedding".into(), &self.class_embedding),
        ];
        if self.cfg.positional == PositionalEncoding::Learned {
            out.push(("tpe".into(), &self.tpe));
            if self.cfg.persons > 1 {
                out.push(("ppe".into(), &self.ppe));
            }
        }
        for (i, layer) in self.blocks.iter().enumerate() {
            if let Some(blk) = &layer.interaction {
                push_block_params(&mut out, &format!("blocks.{i}.interaction"), blk);
            }
            push_block_params(&mut out, &format!("blocks.{i}.temporal"), &layer.temporal);
        }
        out.push(("output_projection.w".into(), &self.output_projection.w));
        out.push(("output_projection.b".into(), &self.output_projection.b));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut ArrayD<f64>)> {
        let learned = self.cfg.positional == PositionalEncoding::Learned;
        let persons = self.cfg.persons;
        let mut out: Vec<(String, &mut ArrayD<f64>)> = vec![
            ("input_projection.w".into(), &mut self.input_projection.w),
            ("input_projection.b".into(), &mut self.input_projection.b),
            ("class_embedding".into(), &mut self.class_embedding),
        ];
        if learned {
            out.push(("tpe".into(), &mut self.tpe));
            if persons > 1 {
                out.push(("ppe".into(), &mut self.ppe));
            }
        }
        for (i, layer) in self.blocks.iter_mut().enumerate() {
            if let Some(blk) = &mut layer.interaction {
                push_block_params_mut(&mut out, &format!("blocks.{i}.interaction"), blk);
            }
            push_block_params_mut(&mut out, &format!("blocks.{i}.temporal"), &mut layer.temporal);
        }
        out.push(("output_projection.w".into(), &mut self.output_projection.w));
        out.push(("output_projection.b".into(), &mut self.output_projection.b));
        out
    }

    /// Registers all trainable parameters on the graph and returns the wired
    /// forward view.
    pub fn inject<'g>(&self, bag: &mut ParamBag<'g>) -> GeneratorV<'g> {
        let g = bag_graph(bag);
        let input_projection = self.input_projection.inject(bag, "input_projection");
        let class_embedding = bag.add("class_embedding", &self.class_embedding);
        let learned = self.cfg.positional == PositionalEncoding::Learned;
        let tpe = if learned {
            bag.add("tpe", &self.tpe)
        } else {
            g.constant(self.tpe.clone())
        };
        let ppe = if self.cfg.persons > 1 {
            if learned {
                bag.add("ppe", &self.ppe)
            } else {
                g.constant(self.ppe.clone())
            }
        } else {
            g.constant(self.ppe.clone())
        };
        let blocks = self
            .blocks
            .iter()
            .enumerate()
            .map(|(i, layer)| GeneratorLayerV {
                interaction: layer
                    .interaction
                    .as_ref()
                    .map(|blk| blk.inject(bag, &format!("blocks.{i}.interaction"))),
                temporal: layer.temporal.inject(bag, &format!("blocks.{i}.temporal")),
            })
            .collect();
        let output_projection = self.output_projection.inject(bag, "output_projection");
        GeneratorV {
            cfg: self.cfg.clone(),
            input_projection,
            class_embedding,
            tpe,
            ppe,
            blocks,
            output_projection,
        }
    }

    /// One-sequence convenience wrapper: runs the batched forward pass with
    /// batch size one and unflattens to a [`MotionSequence`].
    pub fn generate(&self, latents: &Array3<f64>, label: usize) -> Result<MotionSequence> {
        let (p, t, c0) = latents.dim();
        if (p, t, c0) != (self.cfg.persons, self.cfg.frames, self.cfg.latent_channels) {
            return Err(Error::config(format!(
                "generate: latents {:?}, expected ({}, {}, {})",
                latents.dim(),
                self.cfg.persons,
                self.cfg.frames,
                self.cfg.latent_channels
            )));
        }
        if label >= self.cfg.class_count {
            return Err(Error::config(format!(
                "generate: label {label} out of {} classes",
                self.cfg.class_count
            )));
        }
        let mut batch = Array4::<f64>::zeros((1, p, t, c0));
        batch.index_axis_mut(Axis(0), 0).assign(latents);
        let g = Graph::new();
        let mut bag = ParamBag::new(&g);
        let gv = self.inject(&mut bag);
        let out = gv.forward(g.constant(batch.into_dyn()), &[label]);
        let flat = out.value();
        let flat3 = flat
            .index_axis(Axis(0), 0)
            .to_owned()
            .into_dimensionality::<ndarray::Ix3>()
            .expect("generator output rank");
        MotionSequence::unflatten(
            &flat3,
            self.cfg.joints,
            self.cfg.dims,
            self.cfg.representation,
        )
    }
}

fn bag_graph<'g>(bag: &ParamBag<'g>) -> &'g Graph {
    bag.graph()
}

fn push_block_params<'a>(
    out: &mut Vec<(String, &'a ArrayD<f64>)>,
    prefix: &str,
    blk: &'a TransformerBlock,
) {
    out.push((format!("{prefix}.norm1.gamma"), &blk.norm1.gamma));
    out.push((format!("{prefix}.norm1.beta"), &blk.norm1.beta));
    out.push((format!("{prefix}.attn.wq.w"), &blk.attn.wq.w));
    out.push((format!("{prefix}.attn.wq.b"), &blk.attn.wq.b));
    out.push((format!("{prefix}.attn.wk.w"), &blk.attn.wk.w));
    out.push((format!("{prefix}.attn.wk.b"), &blk.attn.wk.b));
    out.push((format!("{prefix}.attn.wv.w"), &blk.attn.wv.w));
    out.push((format!("{prefix}.attn.wv.b"), &blk.attn.wv.b));
    out.push((format!("{prefix}.attn.wo.w"), &blk.attn.wo.w));
    out.push((format!("{prefix}.attn.wo.b"), &blk.attn.wo.b));
    out.push((format!("{prefix}.norm2.gamma"), &blk.norm2.gamma));
    out.push((format!("{prefix}.norm2.beta"), &blk.norm2.beta));
    out.push((format!("{prefix}.mlp.fc1.w"), &blk.mlp.fc1.w));
    out.push((format!("{prefix}.mlp.fc1.b"), &blk.mlp.fc1.b));
    out.push((format!("{prefix}.mlp.fc2.w"), &blk.mlp.fc2.w));
    out.push((format!("{prefix}.mlp.fc2.b"), &blk.mlp.fc2.b));
}

fn push_block_params_mut<'a>(
    out: &mut Vec<(String, &'a mut ArrayD<f64>)>,
    prefix: &str,
    blk: &'a mut TransformerBlock,
) {
    out.push((format!("{prefix}.norm1.gamma"), &mut blk.norm1.gamma));
    out.push((format!("{prefix}.norm1.beta"), &mut blk.norm1.beta));
    out.push((format!("{prefix}.attn.wq.w"), &mut blk.attn.wq.w));
    out.push((format!("{prefix}.attn.wq.b"), &mut blk.attn.wq.b));
    out.push((format!("{prefix}.attn.wk.w"), &mut blk.attn.wk.w));
    out.push((format!("{prefix}.attn.wk.b"), &mut blk.attn.wk.b));
    out.push((format!("{prefix}.attn.wv.w"), &mut blk.attn.wv.w));
    out.push((format!("{prefix}.attn.wv.b"), &mut blk.attn.wv.b));
    out.push((format!("{prefix}.attn.wo.w"), &mut blk.attn.wo.w));
    out.push((format!("{prefix}.attn.wo.b"), &mut blk.attn.wo.b));
    out.push((format!("{prefix}.norm2.gamma"), &mut blk.norm2.gamma));
    out.push((format!("{prefix}.norm2.beta"), &mut blk.norm2.beta));
    out.push((format!("{prefix}.mlp.fc1.w"), &mut blk.mlp.fc1.w));
    out.push((format!("{prefix}.mlp.fc1.b"), &mut blk.mlp.fc1.b));
    out.push((format!("{prefix}.mlp.fc2.w"), &mut blk.mlp.fc2.w));
    out.push((format!("{prefix}.mlp.fc2.b"), &mut blk.mlp.fc2.b));
}

pub struct GeneratorLayerV<'g> {
    pub interaction: Option<TransformerBlockV<'g>>,
    pub temporal: TransformerBlockV<'g>,
}

pub struct GeneratorV<'g> {
    cfg: GeneratorConfig,
    input_projection: AffineV<'g>,
    class_embedding: Var<'g>,
    tpe: Var<'g>,
    ppe: Var<'g>,
    blocks: Vec<GeneratorLayerV<'g>>,
    output_projection: AffineV<'g>,
}

impl<'g> GeneratorV<'g> {
    /// Builds the token grid `[batch, frames + 1, persons, dim]`: projected
    /// latents, class token prepended on the temporal axis, positional
    /// encodings added everywhere.
    pub fn embed(&self, latents: Var<'g>, labels: &[usize]) -> Var<'g> {
        let shape = latents.shape();
        assert_eq!(shape.len(), 4, "latents must be [batch, persons, frames, c0]");
        let (b, p, t) = (shape[0], shape[1], shape[2]);
        assert_eq!(p, self.cfg.persons);
        assert_eq!(t, self.cfg.frames);
        assert_eq!(labels.len(), b, "one label per batch row");
        let d = self.cfg.dim;

        // [b, p, t, d] -> [b, t, p, d]
        let projected = self.input_projection.forward(latents).permute(&[0, 2, 1, 3]);
        // class token row: [b, d] -> [b, 1, p, d]
        let cls = self
            .class_embedding
            .gather_rows(labels)
            .reshape(&[b, 1, 1, d])
            .broadcast_to(&[b, 1, p, d]);
        let tokens = concat(&[cls, projected], 1);

        // positional grid [t + 1, p, d]
        let (dt, dp) = self.cfg.pe_dims();
        let tpe = self
            .tpe
            .reshape(&[t + 1, 1, dt])
            .broadcast_to(&[t + 1, p, dt]);
        let pe = if dp == 0 {
            tpe
        } else {
            let ppe = self.ppe.reshape(&[1, p, dp]).broadcast_to(&[t + 1, p, dp]);
            concat(&[tpe, ppe], 2)
        };
        tokens.add(pe)
    }

    /// Interaction stage `i`: attention across persons within each frame.
    /// Identity when the configuration is single-person.
    pub fn interaction_layer(&self, i: usize, tokens: Var<'g>) -> Var<'g> {
        match &self.blocks[i].interaction {
            Some(blk) => blk.forward(tokens),
            None => tokens,
        }
    }

    /// Temporal stage `i`: attention across frames within each person.
    pub fn temporal_layer(&self, i: usize, tokens: Var<'g>) -> Var<'g> {
        let out = self.blocks[i]
            .temporal
            .forward(tokens.permute(&[0, 2, 1, 3]));
        out.permute(&[0, 2, 1, 3])
    }

    /// Drops the class token row and projects to motion channels, returning
    /// `[batch, persons, frames, channels]`.
    pub fn project_out(&self, tokens: Var<'g>) -> Var<'g> {
        let shape = tokens.shape();
        let t = shape[1] - 1;
        let motion = tokens.slice_axis(1, 1, t).permute(&[0, 2, 1, 3]);
        self.output_projection.forward(motion)
    }

    /// Full forward pass: `[batch, persons, frames, c0]` latents and one
    /// label per row to `[batch, persons, frames, out_channels]`.
    pub fn forward(&self, latents: Var<'g>, labels: &[usize]) -> Var<'g> {
        let mut tokens = self.embed(latents, labels);
        for i in 0..self.blocks.len() {
            tokens = self.interaction_layer(i, tokens);
            tokens = self.temporal_layer(i, tokens);
        }
        self.project_out(tokens)
    }
}

/// Draws generator input latents as `[batch, persons, frames, c0]`. With a
/// shared latent every person slice of a sample is the same draw; otherwise
/// each person gets an independent draw.
pub fn sample_latents<R: Rng + ?Sized>(
    prior: &crate::gp::GpPrior,
    batch: usize,
    persons: usize,
    shared: bool,
    rng: &mut R,
) -> Array4<f64> {
    let t = prior.config().frames;
    let c0 = prior.config().channels;
    let mut out = Array4::<f64>::zeros((batch, persons, t, c0));
    for b in 0..batch {
        if shared {
            let z = prior.sample(rng);
            for p in 0..persons {
                out.index_axis_mut(Axis(0), b)
                    .index_axis_mut(Axis(0), p)
                    .assign(&z);
            }
        } else {
            for p in 0..persons {
                let z = prior.sample(rng);
                out.index_axis_mut(Axis(0), b)
                    .index_axis_mut(Axis(0), p)
                    .assign(&z);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{GpConfig, GpPrior};
    use crate::tensor::fdcheck::{central_diff, max_rel_err};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_config(persons: usize) -> GeneratorConfig {
        GeneratorConfig {
            latent_channels: 4,
            persons,
            frames: 5,
            joints: 5,
            dims: 3,
            representation: Representation::JointPositions,
            class_count: 3,
            dim: 8,
            heads: 2,
            layers: 2,
            mlp_ratio: 2,
            positional: PositionalEncoding::Learned,
            shared_latent: true,
        }
    }

    fn random_latents(cfg: &GeneratorConfig, batch: usize, seed: u64) -> Array4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_fn(
            (batch, cfg.persons, cfg.frames, cfg.latent_channels),
            |_| rng.sample::<f64, _>(rand_distr::StandardNormal),
        )
    }

    #[test]
    fn generate_produces_contracted_shape() {
        let cfg = toy_config(2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let state = GeneratorState::init(&cfg, &mut rng).unwrap();
        let latents = random_latents(&cfg, 1, 2);
        let seq = state
            .generate(
                &latents.index_axis(Axis(0), 0).to_owned(),
                1,
            )
            .unwrap();
        assert_eq!(seq.persons(), 2);
        assert_eq!(seq.frames(), 5);
        assert_eq!(seq.joints(), 5);
        assert_eq!(seq.dims(), 3);
        assert_eq!(seq.repr, Representation::JointPositions);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = toy_config(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let state = GeneratorState::init(&cfg, &mut rng).unwrap();
        let latents = random_latents(&cfg, 1, 4);
        let z = latents.index_axis(Axis(0), 0).to_owned();
        let a = state.generate(&z, 0).unwrap();
        let b = state.generate(&z, 0).unwrap();
        assert_eq!(a.poses, b.poses);
        assert_eq!(a.roots, b.roots);
    }

    #[test]
    fn class_label_changes_output() {
        let cfg = toy_config(1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let state = GeneratorState::init(&cfg, &mut rng).unwrap();
        let latents = random_latents(&cfg, 1, 6);
        let z = latents.index_axis(Axis(0), 0).to_owned();
        let a = state.generate(&z, 0).unwrap();
        let b = state.generate(&z, 2).unwrap();
        assert_ne!(a.poses, b.poses);
    }

    #[test]
    fn interaction_stage_mixes_only_within_frames() {
        let cfg = toy_config(2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let state = GeneratorState::init(&cfg, &mut rng).unwrap();
        let base = random_latents(&cfg, 1, 8);
        let mut bumped = base.clone();
        // perturb one token: person 0, frame 2
        bumped[(0, 0, 2, 1)] += 0.75;

        let run = |latents: &Array4<f64>| -> ArrayD<f64> {
            let g = Graph::new();
            let mut bag = ParamBag::new(&g);
            let gv = state.inject(&mut bag);
            let tokens = gv.embed(g.constant(latents.clone().into_dyn()), &[1]);
            gv.interaction_layer(0, tokens).value()
        };
        let a = run(&base);
        let b = run(&bumped);
        // token grid axis 1 is time with the class token at 0; frame 2 sits
        // at row 3
        for t in 0..6 {
            for p in 0..2 {
                let differs = (0..cfg.dim)
                    .any(|d| a[[0, t, p, d]] != b[[0, t, p, d]]);
                if t == 3 {
                    assert!(differs, "perturbed frame should change at person {p}");
                } else {
                    assert!(!differs, "frame {t} person {p} leaked across frames");
                }
            }
        }
    }

    #[test]
    fn temporal_stage_mixes_only_within_persons() {
        let cfg = toy_config(2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let state = GeneratorState::init(&cfg, &mut rng).unwrap();
        let base = random_latents(&cfg, 1, 10);
        let mut bumped = base.clone();
        bumped[(0, 1, 0, 2)] += 0.5;

        let run = |latents: &Array4<f64>| -> ArrayD<f64> {
            let g = Graph::new();
            let mut bag = ParamBag::new(&g);
            let gv = state.inject(&mut bag);
            let tokens = gv.embed(g.constant(latents.clone().into_dyn()), &[0]);
            gv.temporal_layer(0, tokens).value()
        };
        let a = run(&base);
        let b = run(&bumped);
        for t in 0..6 {
            for p in 0..2 {
                let differs = (0..cfg.dim)
                    .any(|d| a[[0, t, p, d]] != b[[0, t, p, d]]);
                if p == 1 {
                    assert!(differs, "frame {t} of the perturbed person must change");
                } else {
                    assert!(!differs, "frame {t} person {p} leaked across persons");
                }
            }
        }
    }

    #[test]
    fn full_stage_pair_reaches_every_token() {
        let cfg = toy_config(2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let state = GeneratorState::init(&cfg, &mut rng).unwrap();
        let base = random_latents(&cfg, 1, 12);
        let mut bumped = base.clone();
        bumped[(0, 0, 2, 0)] += 0.5;
        let run = |latents: &Array4<f64>| -> ArrayD<f64> {
            let g = Graph::new();
            let mut bag = ParamBag::new(&g);
            let gv = state.inject(&mut bag);
            let tokens = gv.embed(g.constant(latents.clone().into_dyn()), &[0]);
            let tokens = gv.interaction_layer(0, tokens);
            gv.temporal_layer(0, tokens).value()
        };
        let a = run(&base);
        let b = run(&bumped);
        for t in 0..6 {
            for p in 0..2 {
                let differs = (0..cfg.dim)
                    .any(|d| a[[0, t, p, d]] != b[[0, t, p, d]]);
                assert!(differs, "token ({t}, {p}) unreachable after stage pair");
            }
        }
    }

    #[test]
    fn single_person_stack_skips_interaction() {
        let cfg = toy_config(1);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let state = GeneratorState::init(&cfg, &mut rng).unwrap();
        assert!(state.blocks.iter().all(|b| b.interaction.is_none()));
        let names: Vec<String> = state.named_params().into_iter().map(|(n, _)| n).collect();
        assert!(names.iter().all(|n| !n.contains("interaction")));
        assert!(!names.iter().any(|n| n == "ppe"));
        // forward still works
        let latents = random_latents(&cfg, 2, 14);
        let g = Graph::new();
        let mut bag = ParamBag::new(&g);
        let gv = state.inject(&mut bag);
        let out = gv.forward(g.constant(latents.into_dyn()), &[0, 2]);
        assert_eq!(out.shape(), vec![2, 1, 5, 18]);
    }

    #[test]
    fn sinusoidal_tables_are_fixed_and_excluded_from_params() {
        let mut cfg = toy_config(2);
        cfg.positional = PositionalEncoding::Sinusoidal;
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let state = GeneratorState::init(&cfg, &mut rng).unwrap();
        let names: Vec<String> = state.named_params().into_iter().map(|(n, _)| n).collect();
        assert!(!names.iter().any(|n| n == "tpe" || n == "ppe"));
        assert_eq!(state.tpe, sinusoidal_table(cfg.frames + 1, cfg.dim / 2));
        // rows differ across positions
        assert_ne!(
            state.tpe.index_axis(Axis(0), 0),
            state.tpe.index_axis(Axis(0), 3)
        );
        let latents = random_latents(&cfg, 1, 16);
        let g = Graph::new();
        let mut bag = ParamBag::new(&g);
        let gv = state.inject(&mut bag);
        let out = gv.forward(g.constant(latents.into_dyn()), &[1]);
        assert_eq!(out.shape(), vec![1, 2, 5, 18]);
    }

    #[test]
    fn shared_latents_tile_person_axis() {
        let gp = GpPrior::new(&GpConfig::new(5, 4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let shared = sample_latents(&gp, 2, 3, true, &mut rng);
        for b in 0..2 {
            for p in 1..3 {
                assert_eq!(
                    shared.index_axis(Axis(0), b).index_axis(Axis(0), 0),
                    shared.index_axis(Axis(0), b).index_axis(Axis(0), p)
                );
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let indep = sample_latents(&gp, 2, 3, false, &mut rng);
        assert_ne!(
            indep.index_axis(Axis(0), 0).index_axis(Axis(0), 0),
            indep.index_axis(Axis(0), 0).index_axis(Axis(0), 1)
        );
    }

    #[test]
    fn generator_input_projection_grads_match_finite_differences() {
        let cfg = GeneratorConfig {
            latent_channels: 3,
            persons: 2,
            frames: 3,
            joints: 2,
            dims: 3,
            representation: Representation::JointPositions,
            class_count: 2,
            dim: 4,
            heads: 2,
            layers: 1,
            mlp_ratio: 2,
            positional: PositionalEncoding::Learned,
            shared_latent: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let state = GeneratorState::init(&cfg, &mut rng).unwrap();
        let latents = random_latents(&cfg, 1, 20);
        let weight = ArrayD::from_shape_fn(IxDyn(&[1, 2, 3, 9]), |_| {
            rng.sample::<f64, _>(rand_distr::StandardNormal)
        });

        let forward = |st: &GeneratorState| -> (f64, std::collections::HashMap<String, ArrayD<f64>>) {
            let g = Graph::new();
            let mut bag = ParamBag::new(&g);
            let gv = st.inject(&mut bag);
            let out = gv.forward(g.constant(latents.clone().into_dyn()), &[1]);
            let loss = out.mul(g.constant(weight.clone())).sum_all();
            let grads = bag.grads(loss);
            (loss.scalar_value(), grads)
        };
        let (_, analytic) = forward(&state);
        for target in ["input_projection.w", "class_embedding", "tpe"] {
            let base = state
                .named_params()
                .into_iter()
                .find(|(n, _)| n == target)
                .unwrap()
                .1
                .clone();
            let mut f = |x: &ArrayD<f64>| {
                let mut st = state.clone();
                match target {
                    "input_projection.w" => st.input_projection.w = x.clone(),
                    "class_embedding" => st.class_embedding = x.clone(),
                    _ => st.tpe = x.clone(),
                }
                forward(&st).0
            };
            let num = central_diff(&mut f, &base, 1e-5);
            let err = max_rel_err(&analytic[target], &num, 1e-6);
            assert!(err < 1e-5, "{target} rel err {err}");
        }
    }
}
