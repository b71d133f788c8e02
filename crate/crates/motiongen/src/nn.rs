//! Neural network building blocks over the autodiff tape: parameter
//! bookkeeping, initializers, affine/normalization/attention/MLP layers, and
//! the two optimizers used by the pipeline.
//!
//! Layer structs own their parameters as plain arrays. For a training step,
//! `inject` copies them onto a fresh [`Graph`] as leaf nodes, registering each
//! under a stable dotted name in a [`ParamBag`]; the returned `*V` handle
//! wires the forward pass. Gradients come back keyed by the same names, which
//! is also the checkpoint naming scheme.

use crate::tensor::{grad, Graph, Var};
use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use std::collections::HashMap;

/// `sqrt(2 / pi)`, the scale inside the tanh approximation of GELU.
const GELU_SCALE: f64 = 0.797_884_560_802_865_4;

/// Ordered name-to-node registry for one graph's parameters. Names are
/// dotted paths (`blocks.0.attn.wq.w`); order of registration is the
/// canonical parameter order everywhere else.
pub struct ParamBag<'g> {
    graph: &'g Graph,
    names: Vec<String>,
    vars: Vec<Var<'g>>,
}

impl<'g> ParamBag<'g> {
    pub fn new(graph: &'g Graph) -> Self {
        ParamBag {
            graph,
            names: Vec::new(),
            vars: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: &ArrayD<f64>) -> Var<'g> {
        let name = name.into();
        debug_assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        let v = self.graph.param(value.clone());
        self.names.push(name);
        self.vars.push(v);
        v
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn vars(&self) -> &[Var<'g>] {
        &self.vars
    }

    /// Gradients of `loss` for every registered parameter, keyed by name.
    pub fn grads(&self, loss: Var<'g>) -> HashMap<String, ArrayD<f64>> {
        let gs = grad(loss, &self.vars);
        self.names
            .iter()
            .cloned()
            .zip(gs.into_iter().map(|g| g.value()))
            .collect()
    }
}

/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` matrix of shape `[fan_in, fan_out]`.
pub fn uniform_fan_in<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> ArrayD<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    ArrayD::from_shape_fn(IxDyn(&[fan_in, fan_out]), |_| {
        rng.random_range(-bound..bound)
    })
}

/// Bias matching [`uniform_fan_in`]'s convention.
pub fn uniform_bias<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> ArrayD<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    ArrayD::from_shape_fn(IxDyn(&[fan_out]), |_| rng.random_range(-bound..bound))
}

/// `N(0, std^2)` tensor, the embedding/positional-table initializer.
pub fn normal_init<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> ArrayD<f64> {
    ArrayD::from_shape_fn(IxDyn(shape), |_| {
        std * rng.sample::<f64, _>(rand_distr::StandardNormal)
    })
}

/// Tanh-approximated GELU, differentiable as a primitive composition.
pub fn gelu(x: Var<'_>) -> Var<'_> {
    let inner = x.add(x.powf(3.0).scale(0.044715)).scale(GELU_SCALE);
    x.scale(0.5).mul(inner.tanh().add_scalar(1.0))
}

/// Fully connected layer `y = x W + b`, `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Affine {
    pub w: ArrayD<f64>,
    pub b: ArrayD<f64>,
}

pub struct AffineV<'g> {
    pub w: Var<'g>,
    pub b: Var<'g>,
}

impl Affine {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, in_dim: usize, out_dim: usize) -> Self {
        Affine {
            w: uniform_fan_in(rng, in_dim, out_dim),
            b: uniform_bias(rng, in_dim, out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn inject<'g>(&self, bag: &mut ParamBag<'g>, prefix: &str) -> AffineV<'g> {
        AffineV {
            w: bag.add(format!("{prefix}.w"), &self.w),
            b: bag.add(format!("{prefix}.b"), &self.b),
        }
    }
}

impl<'g> AffineV<'g> {
    pub fn forward(&self, x: Var<'g>) -> Var<'g> {
        x.matmul(self.w).add(self.b)
    }
}

/// Layer normalization over the last axis with learned scale and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ArrayD<f64>,
    pub beta: ArrayD<f64>,
    pub eps: f64,
}

pub struct LayerNormV<'g> {
    pub gamma: Var<'g>,
    pub beta: Var<'g>,
    eps: f64,
}

impl LayerNorm {
    pub fn init(dim: usize) -> Self {
        LayerNorm {
            gamma: ArrayD::from_elem(IxDyn(&[dim]), 1.0),
            beta: ArrayD::zeros(IxDyn(&[dim])),
            eps: 1e-5,
        }
    }

    pub fn inject<'g>(&self, bag: &mut ParamBag<'g>, prefix: &str) -> LayerNormV<'g> {
        LayerNormV {
            gamma: bag.add(format!("{prefix}.gamma"), &self.gamma),
            beta: bag.add(format!("{prefix}.beta"), &self.beta),
            eps: self.eps,
        }
    }
}

impl<'g> LayerNormV<'g> {
    pub fn forward(&self, x: Var<'g>) -> Var<'g> {
        let shape = x.shape();
        let last = shape.len() - 1;
        let mut red = shape.clone();
        red[last] = 1;
        let n = shape[last] as f64;
        let mu = x.sum_to(&red).scale(1.0 / n);
        let centered = x.sub(mu.broadcast_to(&shape));
        let var = centered.square().sum_to(&red).scale(1.0 / n);
        let denom = var.add_scalar(self.eps).sqrt().broadcast_to(&shape);
        centered
            .div(denom)
            .mul(self.gamma)
            .add(self.beta)
    }
}

/// Multi-head self-attention over the second-to-last axis of a
/// `[b1, b2, s, d]` input: scores within each `(b1, b2)` slice.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: Affine,
    pub wk: Affine,
    pub wv: Affine,
    pub wo: Affine,
    pub heads: usize,
}

pub struct MultiHeadAttentionV<'g> {
    wq: AffineV<'g>,
    wk: AffineV<'g>,
    wv: AffineV<'g>,
    wo: AffineV<'g>,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, dim: usize, heads: usize) -> Self {
        assert!(heads > 0 && dim.is_multiple_of(heads), "dim must divide into heads");
        MultiHeadAttention {
            wq: Affine::init(rng, dim, dim),
            wk: Affine::init(rng, dim, dim),
            wv: Affine::init(rng, dim, dim),
            wo: Affine::init(rng, dim, dim),
            heads,
        }
    }

    pub fn inject<'g>(&self, bag: &mut ParamBag<'g>, prefix: &str) -> MultiHeadAttentionV<'g> {
        MultiHeadAttentionV {
            wq: self.wq.inject(bag, &format!("{prefix}.wq")),
            wk: self.wk.inject(bag, &format!("{prefix}.wk")),
            wv: self.wv.inject(bag, &format!("{prefix}.wv")),
            wo: self.wo.inject(bag, &format!("{prefix}.wo")),
            heads: self.heads,
        }
    }
}

impl<'g> MultiHeadAttentionV<'g> {
    pub fn forward(&self, x: Var<'g>) -> Var<'g> {
        let shape = x.shape();
        assert_eq!(shape.len(), 4, "attention expects [b1, b2, s, d]");
        let (b1, b2, s, d) = (shape[0], shape[1], shape[2], shape[3]);
        let h = self.heads;
        let dh = d / h;
        let split = |v: Var<'g>| {
            // [b1, b2, s, d] -> [b1, b2, h, s, dh]
            v.reshape(&[b1, b2, s, h, dh]).permute(&[0, 1, 3, 2, 4])
        };
        let q = split(self.wq.forward(x));
        let k = split(self.wk.forward(x));
        let v = split(self.wv.forward(x));
        let scores = q.matmul(k.t2()).scale(1.0 / (dh as f64).sqrt());
        let attn = scores.softmax_last();
        let ctx = attn.matmul(v);
        let merged = ctx.permute(&[0, 1, 3, 2, 4]).reshape(&[b1, b2, s, d]);
        self.wo.forward(merged)
    }
}

/// Two-layer feed-forward block with GELU.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Affine,
    pub fc2: Affine,
}

pub struct MlpV<'g> {
    fc1: AffineV<'g>,
    fc2: AffineV<'g>,
}

impl Mlp {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, dim: usize, hidden: usize) -> Self {
        Mlp {
            fc1: Affine::init(rng, dim, hidden),
            fc2: Affine::init(rng, hidden, dim),
        }
    }

    pub fn inject<'g>(&self, bag: &mut ParamBag<'g>, prefix: &str) -> MlpV<'g> {
        MlpV {
            fc1: self.fc1.inject(bag, &format!("{prefix}.fc1")),
            fc2: self.fc2.inject(bag, &format!("{prefix}.fc2")),
        }
    }
}

impl<'g> MlpV<'g> {
    pub fn forward(&self, x: Var<'g>) -> Var<'g> {
        self.fc2.forward(gelu(self.fc1.forward(x)))
    }
}

/// Pre-norm transformer block: `x + attn(norm(x))`, then `x + mlp(norm(x))`.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
}

pub struct TransformerBlockV<'g> {
    norm1: LayerNormV<'g>,
    attn: MultiHeadAttentionV<'g>,
    norm2: LayerNormV<'g>,
    mlp: MlpV<'g>,
}

impl TransformerBlock {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, dim: usize, heads: usize, mlp_ratio: usize) -> Self {
        TransformerBlock {
            norm1: LayerNorm::init(dim),
            attn: MultiHeadAttention::init(rng, dim, heads),
            norm2: LayerNorm::init(dim),
            mlp: Mlp::init(rng, dim, dim * mlp_ratio),
        }
    }

    pub fn inject<'g>(&self, bag: &mut ParamBag<'g>, prefix: &str) -> TransformerBlockV<'g> {
        TransformerBlockV {
            norm1: self.norm1.inject(bag, &format!("{prefix}.norm1")),
            attn: self.attn.inject(bag, &format!("{prefix}.attn")),
            norm2: self.norm2.inject(bag, &format!("{prefix}.norm2")),
            mlp: self.mlp.inject(bag, &format!("{prefix}.mlp")),
        }
    }
}

impl<'g> TransformerBlockV<'g> {
    pub fn forward(&self, x: Var<'g>) -> Var<'g> {
        let x = x.add(self.attn.forward(self.norm1.forward(x)));
        x.add(self.mlp.forward(self.norm2.forward(x)))
    }
}

/// Adam with the usual bias correction. Moment tables are keyed by parameter
/// name; the update order follows the caller's list, so updates are
/// deterministic.
/// Named gradient moment tables, keyed like the parameters they track.
pub type MomentTables = HashMap<String, ArrayD<f64>>;

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: HashMap<String, ArrayD<f64>>,
    v: HashMap<String, ArrayD<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// First and second moment tables, for checkpointing.
    pub fn moments(&self) -> (&MomentTables, &MomentTables) {
        (&self.m, &self.v)
    }

    /// Restores optimizer state captured by [`Adam::moments`] and
    /// [`Adam::step_count`].
    pub fn restore(&mut self, t: u64, m: MomentTables, v: MomentTables) {
        self.t = t;
        self.m = m;
        self.v = v;
    }

    /// Applies one update to every `(name, param)` pair with a gradient
    /// present in `grads`. Missing gradients are an error upstream, so they
    /// panic here.
    pub fn step(
        &mut self,
        params: Vec<(String, &mut ArrayD<f64>)>,
        grads: &HashMap<String, ArrayD<f64>>,
    ) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, p) in params {
            let g = grads
                .get(&name)
                .unwrap_or_else(|| panic!("missing gradient for {name}"));
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            let v = self
                .v
                .entry(name)
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            ndarray::Zip::from(&mut *m).and(g).for_each(|m, &g| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            });
            ndarray::Zip::from(&mut *v).and(g).for_each(|v, &g| {
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            });
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                let mhat = m / bc1;
                let vhat = v / bc2;
                *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
            });
        }
    }
}

/// SGD with classical momentum. The learning rate is public so schedules can
/// rescale it between epochs.
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: HashMap<String, ArrayD<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: HashMap::new(),
        }
    }

    pub fn step(
        &mut self,
        params: Vec<(String, &mut ArrayD<f64>)>,
        grads: &HashMap<String, ArrayD<f64>>,
    ) {
        for (name, p) in params {
            let g = grads
                .get(&name)
                .unwrap_or_else(|| panic!("missing gradient for {name}"));
            let vel = self
                .velocity
                .entry(name)
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            ndarray::Zip::from(&mut *vel).and(g).for_each(|v, &g| {
                *v = self.momentum * *v + g;
            });
            ndarray::Zip::from(p).and(&*vel).for_each(|p, &v| {
                *p -= self.lr * v;
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::fdcheck::{central_diff, max_rel_err};
    use ndarray::IxDyn;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> ArrayD<f64> {
        normal_init(rng, shape, 1.0)
    }

    #[test]
    fn affine_matches_manual_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = Affine::init(&mut rng, 3, 2);
        let x = randn(&mut rng, &[4, 3]);
        let g = Graph::new();
        let mut bag = ParamBag::new(&g);
        let lv = layer.inject(&mut bag, "aff");
        let y = lv.forward(g.constant(x.clone())).value();
        for i in 0..4 {
            for o in 0..2 {
                let mut acc = layer.b[[o]];
                for k in 0..3 {
                    acc += x[[i, k]] * layer.w[[k, o]];
                }
                assert!((y[[i, o]] - acc).abs() < 1e-12);
            }
        }
        assert_eq!(bag.names(), &["aff.w".to_string(), "aff.b".to_string()]);
    }

    #[test]
    fn layer_norm_centers_and_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ln = LayerNorm::init(6);
        let x = randn(&mut rng, &[3, 6]);
        let g = Graph::new();
        let mut bag = ParamBag::new(&g);
        let lv = ln.inject(&mut bag, "ln");
        let y = lv.forward(g.constant(x.clone())).value();
        for r in 0..3 {
            let row: Vec<f64> = (0..6).map(|c| y[[r, c]]).collect();
            let mean: f64 = row.iter().sum::<f64>() / 6.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-12, "row mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "row var {var}");
        }
    }

    #[test]
    fn gelu_reference_points() {
        let g = Graph::new();
        let x = g.constant(ArrayD::from_shape_vec(IxDyn(&[3]), vec![0.0, 5.0, -5.0]).unwrap());
        let y = gelu(x).value();
        assert_eq!(y[[0]], 0.0);
        assert!((y[[1]] - 5.0).abs() < 1e-6, "gelu(5) ~ 5");
        assert!(y[[2]].abs() < 1e-6, "gelu(-5) ~ 0");
        // midpoint value against the tanh formula evaluated independently
        let g2 = Graph::new();
        let x2 = g2.constant(ArrayD::from_elem(IxDyn(&[1]), 1.0));
        let y2 = gelu(x2).value()[[0]];
        let expect = 0.5 * (1.0 + (0.7978845608028654f64 * 1.044715).tanh());
        assert!((y2 - expect).abs() < 1e-12);
    }

    #[test]
    fn attention_grads_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dim = 6;
        let attn = MultiHeadAttention::init(&mut rng, dim, 2);
        let x0 = randn(&mut rng, &[1, 2, 3, dim]);
        let weight = randn(&mut rng, &[1, 2, 3, dim]);

        let forward = |attn: &MultiHeadAttention| -> (f64, HashMap<String, ArrayD<f64>>) {
            let g = Graph::new();
            let mut bag = ParamBag::new(&g);
            let av = attn.inject(&mut bag, "attn");
            let x = g.constant(x0.clone());
            let w = g.constant(weight.clone());
            let loss = av.forward(x).mul(w).sum_all();
            let grads = bag.grads(loss);
            (loss.scalar_value(), grads)
        };
        let (_, analytic) = forward(&attn);

        // numeric gradient for each parameter tensor
        let names = ["wq", "wk", "wv", "wo"];
        for name in names {
            let base = match name {
                "wq" => attn.wq.w.clone(),
                "wk" => attn.wk.w.clone(),
                "wv" => attn.wv.w.clone(),
                _ => attn.wo.w.clone(),
            };
            let mut f = |x: &ArrayD<f64>| {
                let mut a2 = attn.clone();
                match name {
                    "wq" => a2.wq.w = x.clone(),
                    "wk" => a2.wk.w = x.clone(),
                    "wv" => a2.wv.w = x.clone(),
                    _ => a2.wo.w = x.clone(),
                }
                forward(&a2).0
            };
            let num = central_diff(&mut f, &base, 1e-5);
            let got = &analytic[&format!("attn.{name}.w")];
            let err = max_rel_err(got, &num, 1e-6);
            assert!(err < 1e-5, "{name} rel err {err}");
        }
    }

    #[test]
    fn transformer_block_grads_match_finite_differences_via_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dim = 4;
        let block = TransformerBlock::init(&mut rng, dim, 2, 2);
        let x0 = randn(&mut rng, &[1, 1, 3, dim]);
        let weight = randn(&mut rng, &[1, 1, 3, dim]);
        let g = Graph::new();
        let mut bag = ParamBag::new(&g);
        let bv = block.inject(&mut bag, "blk");
        let x = g.param(x0.clone());
        let w = g.constant(weight.clone());
        let loss = bv.forward(x).mul(w).sum_all();
        let gx = grad(loss, &[x])[0].value();
        let mut f = |xv: &ArrayD<f64>| {
            let g2 = Graph::new();
            let mut bag2 = ParamBag::new(&g2);
            let bv2 = block.inject(&mut bag2, "blk");
            let x2 = g2.constant(xv.clone());
            let w2 = g2.constant(weight.clone());
            bv2.forward(x2).mul(w2).sum_all().scalar_value()
        };
        let num = central_diff(&mut f, &x0, 1e-5);
        assert!(max_rel_err(&gx, &num, 1e-6) < 1e-5);
    }

    #[test]
    fn adam_with_zero_beta1_matches_hand_computation() {
        let mut opt = Adam::new(0.1, 0.0, 0.999);
        let mut p = ArrayD::from_elem(IxDyn(&[1]), 1.0);
        let mut grads = HashMap::new();
        grads.insert("p".to_string(), ArrayD::from_elem(IxDyn(&[1]), 0.5));
        opt.step(vec![("p".to_string(), &mut p)], &grads);
        // t=1: m = g = 0.5 (beta1 = 0, bias correction 1)
        // v = 0.001 * 0.25, vhat = v / (1 - 0.999) = 0.25
        // p = 1 - 0.1 * 0.5 / (0.5 + 1e-8)
        let expect = 1.0 - 0.1 * 0.5 / (0.25f64.sqrt() + 1e-8);
        assert!((p[[0]] - expect).abs() < 1e-12, "{} vs {expect}", p[[0]]);
    }

    #[test]
    fn sgd_momentum_matches_hand_computation() {
        let mut opt = Sgd::new(0.5, 0.9);
        let mut p = ArrayD::from_elem(IxDyn(&[1]), 2.0);
        let mut grads = HashMap::new();
        grads.insert("p".to_string(), ArrayD::from_elem(IxDyn(&[1]), 1.0));
        opt.step(vec![("p".to_string(), &mut p)], &grads);
        // v = 1, p = 2 - 0.5
        assert!((p[[0]] - 1.5).abs() < 1e-15);
        opt.step(vec![("p".to_string(), &mut p)], &grads);
        // v = 1.9, p = 1.5 - 0.95
        assert!((p[[0]] - 0.55).abs() < 1e-15);
    }

    #[test]
    fn initializer_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = uniform_fan_in(&mut rng, 16, 8);
        let bound = 0.25;
        assert!(w.iter().all(|v| v.abs() <= bound));
        let e = normal_init(&mut rng, &[100], 0.02);
        let std = (e.iter().map(|v| v * v).sum::<f64>() / 100.0).sqrt();
        assert!(std < 0.05, "embedding std {std}");
    }
}
