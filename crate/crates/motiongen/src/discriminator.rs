//! Graph-convolutional critic with class-projection scoring.
//!
//! Motion is rearranged onto a skeleton graph whose node 0 carries the root
//! trajectory (linked to the root joint) and whose node `j + 1` carries joint
//! `j`; person channels are folded into node features. Each stage then runs
//! spatial aggregation (a plain sum over adjacency subsets, each subset with
//! its own weight bank), a strided temporal convolution with TF-style SAME
//! padding, optional mean-pool node coarsening, and a LeakyReLU. The final
//! feature vector is the global mean over time and nodes; the score is an
//! affine head on that vector plus an inner product with a class embedding.

use crate::data::SkeletonTopology;
use crate::error::{Error, Result};
use crate::nn::{uniform_bias, uniform_fan_in, Affine, AffineV, ParamBag};
use crate::tensor::{concat, same_padding, Graph, Var};
use ndarray::{Array2, ArrayD};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DiscriminatorConfig {
    pub persons: usize,
    pub frames: usize,
    pub joints: usize,
    /// Coordinate dims per joint; must be 3 so the root trajectory node has
    /// the same width as joint nodes.
    pub dims: usize,
    pub class_count: usize,
    /// Output feature width per stage.
    pub stage_channels: Vec<usize>,
    /// Whether each stage consumes the next node-coarsening map.
    pub stage_coarsen: Vec<bool>,
    /// Temporal window K_t.
    pub temporal_kernel: usize,
    /// Temporal stride (frame halving at 2).
    pub temporal_stride: usize,
    /// Adjacency subset count K_s. Subset 0 is always the node itself;
    /// neighbor source node `j` lands in subset `1 + (j mod (K_s - 1))`.
    pub spatial_subsets: usize,
    pub leaky_slope: f64,
}

impl DiscriminatorConfig {
    pub fn validate(&self, topology: &SkeletonTopology) -> Result<()> {
        if self.persons == 0 || self.frames == 0 || self.class_count == 0 {
            return Err(Error::config("discriminator: zero-sized dimension"));
        }
        if self.dims != 3 {
            return Err(Error::config(
                "discriminator: joint dims must be 3 to match the root trajectory node",
            ));
        }
        if self.joints != topology.joint_count {
            return Err(Error::config(format!(
                "discriminator: {} joints but topology has {}",
                self.joints, topology.joint_count
            )));
        }
        if self.stage_channels.is_empty() || self.stage_channels.len() != self.stage_coarsen.len()
        {
            return Err(Error::config(
                "discriminator: stage_channels and stage_coarsen must match and be non-empty",
            ));
        }
        let wanted = self.stage_coarsen.iter().filter(|&&c| c).count();
        if wanted > topology.coarsen_maps.len() {
            return Err(Error::config(format!(
                "discriminator: {} coarsening stages but topology provides {} maps",
                wanted,
                topology.coarsen_maps.len()
            )));
        }
        if self.temporal_kernel == 0 || self.temporal_stride == 0 || self.spatial_subsets == 0 {
            return Err(Error::config(
                "discriminator: kernel, stride, and subset count must be positive",
            ));
        }
        Ok(())
    }

    /// Final feature width (input to the scoring head).
    pub fn feature_dim(&self) -> usize {
        *self.stage_channels.last().expect("validated non-empty")
    }
}

/// Constant structure of one stage: adjacency subset matrices over the
/// current node set and the optional mean-pool coarsening matrix.
#[derive(Debug, Clone)]
pub struct StagePlan {
    pub in_nodes: usize,
    pub out_nodes: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// `spatial_subsets` matrices `[in_nodes, in_nodes]`.
    pub adjacency: Vec<Array2<f64>>,
    /// `[out_nodes, in_nodes]` row-stochastic mean-pool, when coarsening.
    pub coarsen: Option<Array2<f64>>,
}

/// Builds adjacency subset matrices for an edge set. Subset 0 is the
/// identity; an edge contribution from source node `j` into any target goes
/// to subset `1 + (j mod (subsets - 1))`.
fn adjacency_subsets(nodes: usize, edges: &[(usize, usize)], subsets: usize) -> Vec<Array2<f64>> {
    let mut mats = vec![Array2::<f64>::zeros((nodes, nodes)); subsets];
    for k in 0..nodes {
        mats[0][(k, k)] = 1.0;
    }
    if subsets > 1 {
        for &(a, b) in edges {
            let sb = 1 + (b % (subsets - 1));
            let sa = 1 + (a % (subsets - 1));
            mats[sb][(a, b)] = 1.0;
            mats[sa][(b, a)] = 1.0;
        }
    }
    mats
}

/// Edges of the coarsened graph: two groups are adjacent when any member
/// edge crosses between them.
fn coarsened_edges(edges: &[(usize, usize)], map: &[usize]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for &(a, b) in edges {
        let (ga, gb) = (map[a], map[b]);
        if ga == gb {
            continue;
        }
        let e = (ga.min(gb), ga.max(gb));
        if !out.contains(&e) {
            out.push(e);
        }
    }
    out.sort_unstable();
    out
}

fn mean_pool_matrix(map: &[usize], out_nodes: usize) -> Array2<f64> {
    let mut counts = vec![0usize; out_nodes];
    for &g in map {
        counts[g] += 1;
    }
    let mut m = Array2::<f64>::zeros((out_nodes, map.len()));
    for (node, &g) in map.iter().enumerate() {
        m[(g, node)] = 1.0 / counts[g] as f64;
    }
    m
}

/// Plans all stages, threading node counts and edge sets through the
/// coarsening maps.
pub fn plan_stages(cfg: &DiscriminatorConfig, topology: &SkeletonTopology) -> Result<Vec<StagePlan>> {
    cfg.validate(topology)?;
    let mut nodes = topology.graph_node_count();
    let mut edges = topology.graph_edges();
    let mut in_channels = cfg.persons * cfg.dims;
    let mut next_map = 0usize;
    let mut plans = Vec::with_capacity(cfg.stage_channels.len());
    for (i, &out_channels) in cfg.stage_channels.iter().enumerate() {
        let adjacency = adjacency_subsets(nodes, &edges, cfg.spatial_subsets);
        let (coarsen, out_nodes) = if cfg.stage_coarsen[i] {
            let map = &topology.coarsen_maps[next_map];
            next_map += 1;
            if map.len() != nodes {
                return Err(Error::config(format!(
                    "discriminator: coarsen map {} covers {} nodes, stage has {}",
                    next_map - 1,
                    map.len(),
                    nodes
                )));
            }
            let out_nodes = map.iter().max().map_or(0, |m| m + 1);
            let pool = mean_pool_matrix(map, out_nodes);
            edges = coarsened_edges(&edges, map);
            (Some(pool), out_nodes)
        } else {
            (None, nodes)
        };
        plans.push(StagePlan {
            in_nodes: nodes,
            out_nodes,
            in_channels,
            out_channels,
            adjacency,
            coarsen,
        });
        nodes = out_nodes;
        in_channels = out_channels;
    }
    Ok(plans)
}

/// Trainable weights of one stage.
#[derive(Debug, Clone)]
pub struct StageParams {
    /// One `[in_channels, out_channels]` bank per adjacency subset.
    pub spatial: Vec<ArrayD<f64>>,
    pub spatial_bias: ArrayD<f64>,
    /// `[kernel * out_channels, out_channels]` temporal mixing weights.
    pub temporal: ArrayD<f64>,
    pub temporal_bias: ArrayD<f64>,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorState {
    pub cfg: DiscriminatorConfig,
    pub plans: Vec<StagePlan>,
    pub stages: Vec<StageParams>,
    /// `[class_count, feature_dim]` projection table.
    pub class_embedding: ArrayD<f64>,
    pub out_projection: Affine,
}

impl DiscriminatorState {
    pub fn init<R: Rng + ?Sized>(
        cfg: &DiscriminatorConfig,
        topology: &SkeletonTopology,
        rng: &mut R,
    ) -> Result<Self> {
        let plans = plan_stages(cfg, topology)?;
        let stages = plans
            .iter()
            .map(|p| StageParams {
                spatial: (0..cfg.spatial_subsets)
                    .map(|_| uniform_fan_in(rng, p.in_channels, p.out_channels))
                    .collect(),
                spatial_bias: uniform_bias(rng, p.in_channels, p.out_channels),
                temporal: uniform_fan_in(
                    rng,
                    cfg.temporal_kernel * p.out_channels,
                    p.out_channels,
                ),
                temporal_bias: uniform_bias(
                    rng,
                    cfg.temporal_kernel * p.out_channels,
                    p.out_channels,
                ),
            })
            .collect();
        let f = cfg.feature_dim();
        Ok(DiscriminatorState {
            cfg: cfg.clone(),
            plans,
            stages,
            class_embedding: crate::nn::normal_init(rng, &[cfg.class_count, f], 0.02),
            out_projection: Affine::init(rng, f, 1),
        })
    }

    pub fn named_params(&self) -> Vec<(String, &ArrayD<f64>)> {
        let mut out: Vec<(String, &ArrayD<f64>)> = Vec::new();
        push_stage_param_refs(&mut out, &self.stages);
        out.push(("class_embedding".into(), &self.class_embedding));
        out.push(("out_projection.w".into(), &self.out_projection.w));
        out.push(("out_projection.b".into(), &self.out_projection.b));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut ArrayD<f64>)> {
        let mut out: Vec<(String, &mut ArrayD<f64>)> = Vec::new();
        push_stage_param_muts(&mut out, &mut self.stages);
        out.push(("class_embedding".into(), &mut self.class_embedding));
        out.push(("out_projection.w".into(), &mut self.out_projection.w));
        out.push(("out_projection.b".into(), &mut self.out_projection.b));
        out
    }

    pub fn inject<'g>(&self, bag: &mut ParamBag<'g>) -> DiscriminatorV<'g> {
        DiscriminatorV {
            cfg: self.cfg.clone(),
            stages: inject_stage_views(bag, &self.plans, &self.stages),
            class_embedding: bag.add("class_embedding", &self.class_embedding),
            out_projection: self.out_projection.inject(bag, "out_projection"),
        }
    }

    /// Scores one labeled sequence (no gradient use).
    pub fn score_sequence(
        &self,
        seq: &crate::data::MotionSequence,
        label: usize,
    ) -> Result<f64> {
        if seq.persons() != self.cfg.persons
            || seq.frames() != self.cfg.frames
            || seq.channels() != 3 + self.cfg.joints * self.cfg.dims
        {
            return Err(Error::config(format!(
                "score_sequence: sequence ({}, {}, {}) does not match critic ({}, {}, {})",
                seq.persons(),
                seq.frames(),
                seq.channels(),
                self.cfg.persons,
                self.cfg.frames,
                3 + self.cfg.joints * self.cfg.dims
            )));
        }
        if label >= self.cfg.class_count {
            return Err(Error::config(format!(
                "score_sequence: label {label} out of {} classes",
                self.cfg.class_count
            )));
        }
        let flat = seq.flatten();
        let (p, t, c) = flat.dim();
        let batch = flat.into_shape_with_order((1, p, t, c)).expect("reshape");
        let g = Graph::new();
        let mut bag = ParamBag::new(&g);
        let dv = self.inject(&mut bag);
        let score = dv.score(g.constant(batch.into_dyn()), &[label]);
        Ok(score.value()[[0]])
    }
}

pub struct StageV<'g> {
    pub(crate) adjacency: Vec<Var<'g>>,
    pub(crate) coarsen: Option<Var<'g>>,
    pub(crate) spatial: Vec<Var<'g>>,
    pub(crate) spatial_bias: Var<'g>,
    pub(crate) temporal: Var<'g>,
    pub(crate) temporal_bias: Var<'g>,
}

/// Registers every stage's weights on the graph (names under
/// `stages.{i}.`) and pairs them with their constant structure matrices.
pub(crate) fn inject_stage_views<'g>(
    bag: &mut ParamBag<'g>,
    plans: &[StagePlan],
    stages: &[StageParams],
) -> Vec<StageV<'g>> {
    let g = bag.graph();
    stages
        .iter()
        .zip(plans)
        .enumerate()
        .map(|(i, (st, plan))| StageV {
            adjacency: plan
                .adjacency
                .iter()
                .map(|a| g.constant(a.clone().into_dyn()))
                .collect(),
            coarsen: plan
                .coarsen
                .as_ref()
                .map(|c| g.constant(c.clone().into_dyn())),
            spatial: st
                .spatial
                .iter()
                .enumerate()
                .map(|(s, w)| bag.add(format!("stages.{i}.spatial.{s}.w"), w))
                .collect(),
            spatial_bias: bag.add(format!("stages.{i}.spatial.b"), &st.spatial_bias),
            temporal: bag.add(format!("stages.{i}.temporal.w"), &st.temporal),
            temporal_bias: bag.add(format!("stages.{i}.temporal.b"), &st.temporal_bias),
        })
        .collect()
}

/// Rearranges flat motion `[b, persons, frames, 3 + joints * dims]` onto the
/// skeleton graph `[b, frames, joints + 1, persons * dims]` (node 0 = root
/// trajectory, node `j + 1` = joint `j`, person-major node features).
pub(crate) fn graph_layout<'g>(joints: usize, dims: usize, motion: Var<'g>) -> Var<'g> {
    let shape = motion.shape();
    assert_eq!(shape.len(), 4, "motion must be [b, p, t, c]");
    let (b, p, t, c) = (shape[0], shape[1], shape[2], shape[3]);
    assert_eq!(c, 3 + joints * dims, "flat channel mismatch");
    let roots = motion.slice_axis(3, 0, 3).reshape(&[b, p, t, 1, dims]);
    let joint_part = motion
        .slice_axis(3, 3, joints * dims)
        .reshape(&[b, p, t, joints, dims]);
    let nodes = concat(&[roots, joint_part], 3);
    nodes
        .permute(&[0, 2, 3, 1, 4])
        .reshape(&[b, t, joints + 1, p * dims])
}

/// One stage: spatial subset aggregation, strided temporal convolution with
/// SAME padding, optional mean-pool coarsening, LeakyReLU.
pub(crate) fn stage_forward<'g>(
    kernel: usize,
    stride: usize,
    slope: f64,
    st: &StageV<'g>,
    x: Var<'g>,
) -> Var<'g> {
    let mut spatial: Option<Var<'g>> = None;
    for (a, w) in st.adjacency.iter().zip(&st.spatial) {
        let term = apply_node_matrix(*a, x).matmul(*w);
        spatial = Some(match spatial {
            Some(acc) => acc.add(term),
            None => term,
        });
    }
    let y = spatial.expect("at least one subset").add(st.spatial_bias);

    let t = y.shape()[1];
    let (_, pad_l, pad_r) = same_padding(t, kernel, stride);
    let u = y
        .unfold_time(kernel, stride, pad_l, pad_r)
        .matmul(st.temporal)
        .add(st.temporal_bias);

    let v = match st.coarsen {
        Some(pool) => apply_node_matrix(pool, u),
        None => u,
    };
    v.leaky_relu(slope)
}

/// Global feature vector: mean over time and nodes of `[b, t, k, f]`.
pub(crate) fn global_feature(x: Var<'_>) -> Var<'_> {
    x.mean_axis(1).mean_axis(1)
}

pub(crate) fn push_stage_param_refs<'a>(
    out: &mut Vec<(String, &'a ArrayD<f64>)>,
    stages: &'a [StageParams],
) {
    for (i, st) in stages.iter().enumerate() {
        for (s, w) in st.spatial.iter().enumerate() {
            out.push((format!("stages.{i}.spatial.{s}.w"), w));
        }
        out.push((format!("stages.{i}.spatial.b"), &st.spatial_bias));
        out.push((format!("stages.{i}.temporal.w"), &st.temporal));
        out.push((format!("stages.{i}.temporal.b"), &st.temporal_bias));
    }
}

pub(crate) fn push_stage_param_muts<'a>(
    out: &mut Vec<(String, &'a mut ArrayD<f64>)>,
    stages: &'a mut [StageParams],
) {
    for (i, st) in stages.iter_mut().enumerate() {
        for (s, w) in st.spatial.iter_mut().enumerate() {
            out.push((format!("stages.{i}.spatial.{s}.w"), w));
        }
        out.push((format!("stages.{i}.spatial.b"), &mut st.spatial_bias));
        out.push((format!("stages.{i}.temporal.w"), &mut st.temporal));
        out.push((format!("stages.{i}.temporal.b"), &mut st.temporal_bias));
    }
}

pub struct DiscriminatorV<'g> {
    cfg: DiscriminatorConfig,
    stages: Vec<StageV<'g>>,
    class_embedding: Var<'g>,
    out_projection: AffineV<'g>,
}

/// Applies a constant node matrix `[k_out, k_in]` along the node axis of
/// `[b, t, k_in, f]`.
fn apply_node_matrix<'g>(m: Var<'g>, x: Var<'g>) -> Var<'g> {
    x.permute(&[0, 1, 3, 2]).matmul(m.t2()).permute(&[0, 1, 3, 2])
}

impl<'g> DiscriminatorV<'g> {
    /// Rearranges flat motion `[b, persons, frames, channels]` onto the
    /// skeleton graph `[b, frames, nodes, persons * dims]`: node 0 is the
    /// root trajectory, node `j + 1` is joint `j`, and person channels are
    /// folded person-major into node features.
    pub fn build_st_graph(&self, motion: Var<'g>) -> Var<'g> {
        graph_layout(self.cfg.joints, self.cfg.dims, motion)
    }

    /// One graph stage: spatial subset aggregation, strided temporal
    /// convolution (SAME padding), optional mean-pool coarsening, LeakyReLU.
    pub fn stage(&self, i: usize, x: Var<'g>) -> Var<'g> {
        stage_forward(
            self.cfg.temporal_kernel,
            self.cfg.temporal_stride,
            self.cfg.leaky_slope,
            &self.stages[i],
            x,
        )
    }

    /// Global feature: mean over time and nodes of the final stage output.
    pub fn features(&self, motion: Var<'g>) -> Var<'g> {
        let mut x = self.build_st_graph(motion);
        for i in 0..self.stages.len() {
            x = self.stage(i, x);
        }
        global_feature(x)
    }

    /// Projection score per batch row: affine head on the global feature
    /// plus the inner product with the row's class embedding.
    pub fn score(&self, motion: Var<'g>, labels: &[usize]) -> Var<'g> {
        let b = motion.shape()[0];
        assert_eq!(labels.len(), b, "one label per batch row");
        let phi = self.features(motion);
        let base = self.out_projection.forward(phi).reshape(&[b]);
        let emb = self.class_embedding.gather_rows(labels);
        let proj = emb.mul(phi).sum_axis(1);
        base.add(proj)
    }
}
