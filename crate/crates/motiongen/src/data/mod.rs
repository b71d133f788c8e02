//! Skeleton and motion data model.
//!
//! A [`SkeletonTopology`] is a joint tree plus the graph-pooling maps used by
//! the graph-convolutional networks. A [`MotionSequence`] holds one sample:
//! per-person root trajectories and per-joint pose arrays, in either absolute
//! joint positions or parent-relative limb vectors. [`LabeledDataset`] is a
//! homogeneous collection with action labels.
//!
//! Submodules: [`synth`] generates the procedural labeled datasets used by the
//! tests, [`format`] is the binary/JSON serialization.

pub mod format;
pub mod synth;

use crate::error::{Error, Result};
use ndarray::{Array3, Array4, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Pose array content.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// Absolute joint positions; the root joint row duplicates the root
    /// trajectory.
    JointPositions,
    /// Parent-relative bone offsets; the root joint row is zero and absolute
    /// placement lives in the root trajectory.
    LimbVectors,
}

impl Representation {
    pub fn code(self) -> u32 {
        match self {
            Representation::JointPositions => 0,
            Representation::LimbVectors => 1,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Representation::JointPositions),
            1 => Ok(Representation::LimbVectors),
            other => Err(Error::data(format!("unknown representation code {other}"))),
        }
    }
}

/// Joint tree with pooling structure for graph networks.
///
/// Graph-network node indexing: node `0` is the root-translation node
/// (attached to the root joint), node `j + 1` is joint `j`, so the graph has
/// `joint_count + 1` nodes. `coarsen_maps` successively merge graph nodes
/// down to a single node; each map is a total surjection onto a contiguous
/// range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonTopology {
    pub joint_count: usize,
    /// Undirected tree edges between joints, `(parent, child)` with the
    /// parent closer to the root joint.
    pub edges: Vec<(usize, usize)>,
    pub root_joint: usize,
    /// Graph pooling maps over graph nodes (`joint_count + 1` wide at level
    /// zero), each mapping a node to its group in the next level.
    pub coarsen_maps: Vec<Vec<usize>>,
    pub joint_names: Vec<String>,
}

impl SkeletonTopology {
    pub fn validate(&self) -> Result<()> {
        let j = self.joint_count;
        if j == 0 {
            return Err(Error::config("topology: no joints"));
        }
        if self.root_joint >= j {
            return Err(Error::config("topology: root joint out of range"));
        }
        if self.edges.len() != j - 1 {
            return Err(Error::config(format!(
                "topology: {} edges for {} joints, expected {}",
                self.edges.len(),
                j,
                j - 1
            )));
        }
        // connectivity over the joint tree
        let mut adj = vec![Vec::new(); j];
        for &(a, b) in &self.edges {
            if a >= j || b >= j || a == b {
                return Err(Error::config(format!("topology: bad edge ({a}, {b})")));
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; j];
        let mut stack = vec![self.root_joint];
        seen[self.root_joint] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        if seen.iter().any(|&s| !s) {
            return Err(Error::config("topology: joint tree is not connected"));
        }
        if self.joint_names.len() != j {
            return Err(Error::config("topology: joint_names length mismatch"));
        }
        // pooling maps: chained surjections ending anywhere >= 1 node
        let mut width = self.graph_node_count();
        for (level, map) in self.coarsen_maps.iter().enumerate() {
            if map.len() != width {
                return Err(Error::config(format!(
                    "topology: coarsen map {level} has {} entries, expected {width}",
                    map.len()
                )));
            }
            let out = match map.iter().max() {
                Some(&m) => m + 1,
                None => 0,
            };
            if out >= width {
                return Err(Error::config(format!(
                    "topology: coarsen map {level} does not shrink the graph"
                )));
            }
            let mut hit = vec![false; out];
            for &g in map {
                hit[g] = true;
            }
            if hit.iter().any(|&h| !h) {
                return Err(Error::config(format!(
                    "topology: coarsen map {level} is not surjective"
                )));
            }
            width = out;
        }
        Ok(())
    }

    /// Graph node count at pooling level zero: one node per joint plus the
    /// root-translation node.
    pub fn graph_node_count(&self) -> usize {
        self.joint_count + 1
    }

    /// Undirected adjacency over graph nodes at level zero. Node 0 is the
    /// root-translation node, linked to the root joint's node.
    pub fn graph_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edges.len() + 1);
        out.push((0, self.root_joint + 1));
        for &(a, b) in &self.edges {
            out.push((a + 1, b + 1));
        }
        out
    }

    /// Parent of each joint in the tree rooted at `root_joint`; the root maps
    /// to itself.
    pub fn joint_parents(&self) -> Vec<usize> {
        let j = self.joint_count;
        let mut adj = vec![Vec::new(); j];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut parent = vec![usize::MAX; j];
        parent[self.root_joint] = self.root_joint;
        let mut stack = vec![self.root_joint];
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if parent[w] == usize::MAX {
                    parent[w] = v;
                    stack.push(w);
                }
            }
        }
        parent
    }

    /// Joints ordered so every joint appears after its parent.
    pub fn topological_joints(&self) -> Vec<usize> {
        let parents = self.joint_parents();
        let j = self.joint_count;
        let mut children = vec![Vec::new(); j];
        for (c, &p) in parents.iter().enumerate() {
            if c != self.root_joint {
                children[p].push(c);
            }
        }
        let mut order = Vec::with_capacity(j);
        let mut stack = vec![self.root_joint];
        while let Some(v) = stack.pop() {
            order.push(v);
            for &c in children[v].iter().rev() {
                stack.push(c);
            }
        }
        order
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    /// Five-joint star fixture: a torso center with head, two hands, and a
    /// merged lower body, all attached directly to the center.
    pub fn toy5() -> Self {
        let topo = SkeletonTopology {
            joint_count: 5,
            edges: vec![(0, 1), (0, 2), (0, 3), (0, 4)],
            root_joint: 0,
            // graph nodes: 0 root-translation, 1 center, 2 head, 3 l_hand,
            // 4 r_hand, 5 foot; groups pair the symmetric limbs
            coarsen_maps: vec![vec![0, 0, 1, 2, 2, 1], vec![0, 0, 0]],
            joint_names: ["center", "head", "l_hand", "r_hand", "foot"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        };
        topo.validate().expect("toy5 fixture");
        topo
    }

    /// 24-joint full-body tree with graph pooling 25 -> 11 -> 5 -> 1.
    pub fn ntu_like() -> Self {
        let names = [
            "pelvis",
            "spine_mid",
            "spine_up",
            "neck",
            "head",
            "head_top",
            "l_shoulder",
            "l_elbow",
            "l_wrist",
            "l_hand",
            "r_shoulder",
            "r_elbow",
            "r_wrist",
            "r_hand",
            "l_hip",
            "l_knee",
            "l_ankle",
            "l_foot",
            "r_hip",
            "r_knee",
            "r_ankle",
            "r_foot",
            "l_hand_tip",
            "r_hand_tip",
        ];
        let edges = vec![
            (0, 1),
            (1, 2),
            (2, 3),
            (3, 4),
            (4, 5),
            (2, 6),
            (6, 7),
            (7, 8),
            (8, 9),
            (9, 22),
            (2, 10),
            (10, 11),
            (11, 12),
            (12, 13),
            (13, 23),
            (0, 14),
            (14, 15),
            (15, 16),
            (16, 17),
            (0, 18),
            (18, 19),
            (19, 20),
            (20, 21),
        ];
        // 25 graph nodes (rt + joints 0..23, offset by one) into 11 limb
        // groups, then 5 body parts, then 1.
        let mut map25 = vec![0usize; 25];
        let groups11: [&[usize]; 11] = [
            &[0, 1],          // root translation + pelvis
            &[2, 3],          // spine
            &[4, 5, 6],       // neck + head
            &[7, 8],          // l upper arm
            &[9, 10, 23],     // l forearm + hand
            &[11, 12],        // r upper arm
            &[13, 14, 24],    // r forearm + hand
            &[15, 16],        // l thigh
            &[17, 18],        // l shin + foot
            &[19, 20],        // r thigh
            &[21, 22],        // r shin + foot
        ];
        for (gi, members) in groups11.iter().enumerate() {
            for &m in *members {
                map25[m] = gi;
            }
        }
        // 11 -> 5: head+torso, pelvis, l arm, r arm, legs
        let map11 = vec![1, 0, 0, 2, 2, 3, 3, 4, 4, 4, 4];
        let map5 = vec![0, 0, 0, 0, 0];
        let topo = SkeletonTopology {
            joint_count: 24,
            edges,
            root_joint: 0,
            coarsen_maps: vec![map25, map11, map5],
            joint_names: names.iter().map(|s| s.to_string()).collect(),
        };
        topo.validate().expect("ntu_like fixture");
        topo
    }
}

/// One motion sample: `persons x frames` root positions and pose arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    /// `[persons, frames, 3]` absolute root joint trajectory.
    pub roots: Array3<f64>,
    /// `[persons, frames, joints, dims]` per-joint data, meaning set by `repr`.
    pub poses: Array4<f64>,
    pub repr: Representation,
}

impl MotionSequence {
    pub fn persons(&self) -> usize {
        self.poses.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.poses.shape()[1]
    }

    pub fn joints(&self) -> usize {
        self.poses.shape()[2]
    }

    pub fn dims(&self) -> usize {
        self.poses.shape()[3]
    }

    /// Flattened channel count per person-frame: root (3) plus joints.
    pub fn channels(&self) -> usize {
        3 + self.joints() * self.dims()
    }

    pub fn validate(&self) -> Result<()> {
        let (p, t) = (self.persons(), self.frames());
        if self.roots.shape() != [p, t, 3] {
            return Err(Error::data(format!(
                "roots shape {:?} does not match poses {:?}",
                self.roots.shape(),
                self.poses.shape()
            )));
        }
        if p == 0 || t == 0 || self.joints() == 0 || self.dims() == 0 {
            return Err(Error::data("empty motion sequence"));
        }
        Ok(())
    }

    /// Converts absolute joint positions to parent-relative limb vectors.
    /// The root joint's row becomes zero; absolute placement stays in
    /// `roots`.
    pub fn to_limb_vectors(&self, topo: &SkeletonTopology) -> MotionSequence {
        assert_eq!(self.repr, Representation::JointPositions);
        assert_eq!(self.joints(), topo.joint_count);
        assert_eq!(self.dims(), 3);
        let parents = topo.joint_parents();
        let mut poses = self.poses.clone();
        // children first so parents keep their absolute values while read
        for &j in topo.topological_joints().iter().rev() {
            if j == topo.root_joint {
                for p in 0..self.persons() {
                    for t in 0..self.frames() {
                        for d in 0..3 {
                            poses[(p, t, j, d)] = 0.0;
                        }
                    }
                }
                continue;
            }
            let parent = parents[j];
            for p in 0..self.persons() {
                for t in 0..self.frames() {
                    for d in 0..3 {
                        poses[(p, t, j, d)] -= self.poses[(p, t, parent, d)];
                    }
                }
            }
        }
        MotionSequence {
            roots: self.roots.clone(),
            poses,
            repr: Representation::LimbVectors,
        }
    }

    /// Inverse of [`MotionSequence::to_limb_vectors`]: accumulates limb
    /// vectors from the root joint outwards.
    pub fn from_limb_vectors(&self, topo: &SkeletonTopology) -> MotionSequence {
        assert_eq!(self.repr, Representation::LimbVectors);
        assert_eq!(self.joints(), topo.joint_count);
        assert_eq!(self.dims(), 3);
        let parents = topo.joint_parents();
        let mut poses = self.poses.clone();
        for &j in &topo.topological_joints() {
            if j == topo.root_joint {
                for p in 0..self.persons() {
                    for t in 0..self.frames() {
                        for d in 0..3 {
                            poses[(p, t, j, d)] = self.roots[(p, t, d)];
                        }
                    }
                }
                continue;
            }
            let parent = parents[j];
            for p in 0..self.persons() {
                for t in 0..self.frames() {
                    for d in 0..3 {
                        poses[(p, t, j, d)] += poses[(p, t, parent, d)];
                    }
                }
            }
        }
        MotionSequence {
            roots: self.roots.clone(),
            poses,
            repr: Representation::JointPositions,
        }
    }

    /// Flattens to `[persons, frames, channels]` with the root trajectory in
    /// the first three channels followed by joint data in joint-major order.
    pub fn flatten(&self) -> Array3<f64> {
        let (p, t) = (self.persons(), self.frames());
        let c = self.channels();
        let mut out = Array3::<f64>::zeros((p, t, c));
        for pi in 0..p {
            for ti in 0..t {
                for d in 0..3 {
                    out[(pi, ti, d)] = self.roots[(pi, ti, d)];
                }
                for j in 0..self.joints() {
                    for d in 0..self.dims() {
                        out[(pi, ti, 3 + j * self.dims() + d)] = self.poses[(pi, ti, j, d)];
                    }
                }
            }
        }
        out
    }

    /// Inverse of [`MotionSequence::flatten`].
    pub fn unflatten(
        flat: &Array3<f64>,
        joints: usize,
        dims: usize,
        repr: Representation,
    ) -> Result<MotionSequence> {
        let (p, t, c) = flat.dim();
        if c != 3 + joints * dims {
            return Err(Error::data(format!(
                "flat channel count {c} does not match 3 + {joints} x {dims}"
            )));
        }
        let mut roots = Array3::<f64>::zeros((p, t, 3));
        let mut poses = Array4::<f64>::zeros((p, t, joints, dims));
        for pi in 0..p {
            for ti in 0..t {
                for d in 0..3 {
                    roots[(pi, ti, d)] = flat[(pi, ti, d)];
                }
                for j in 0..joints {
                    for d in 0..dims {
                        poses[(pi, ti, j, d)] = flat[(pi, ti, 3 + j * dims + d)];
                    }
                }
            }
        }
        Ok(MotionSequence {
            roots,
            poses,
            repr,
        })
    }

    /// Reorders the person axis by `perm` (output person `i` is input person
    /// `perm[i]`).
    pub fn permute_persons(&self, perm: &[usize]) -> MotionSequence {
        assert_eq!(perm.len(), self.persons());
        let roots = self.roots.select(Axis(0), perm);
        let poses = self.poses.select(Axis(0), perm);
        MotionSequence {
            roots,
            poses,
            repr: self.repr,
        }
    }

    /// Normalizes length to `frames`: truncates from the front if longer,
    /// repeats the final frame if shorter.
    pub fn crop_or_pad(&self, frames: usize) -> MotionSequence {
        let t = self.frames();
        if frames == t {
            return self.clone();
        }
        let p = self.persons();
        let (j, d) = (self.joints(), self.dims());
        let mut roots = Array3::<f64>::zeros((p, frames, 3));
        let mut poses = Array4::<f64>::zeros((p, frames, j, d));
        for pi in 0..p {
            for ti in 0..frames {
                let src = ti.min(t - 1);
                for dd in 0..3 {
                    roots[(pi, ti, dd)] = self.roots[(pi, src, dd)];
                }
                for jj in 0..j {
                    for dd in 0..d {
                        poses[(pi, ti, jj, dd)] = self.poses[(pi, src, jj, dd)];
                    }
                }
            }
        }
        MotionSequence {
            roots,
            poses,
            repr: self.repr,
        }
    }
}

/// Homogeneous labeled motion collection.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub sequences: Vec<MotionSequence>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub class_names: Vec<String>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sequences.len() != self.labels.len() {
            return Err(Error::data("dataset: labels do not match sequences"));
        }
        if self.sequences.is_empty() {
            return Err(Error::data("dataset: empty"));
        }
        if self.class_names.len() != self.class_count {
            return Err(Error::data("dataset: class_names length mismatch"));
        }
        let first = &self.sequences[0];
        let dims = (
            first.persons(),
            first.frames(),
            first.joints(),
            first.dims(),
            first.repr,
        );
        for (i, s) in self.sequences.iter().enumerate() {
            s.validate()?;
            let d = (s.persons(), s.frames(), s.joints(), s.dims(), s.repr);
            if d != dims {
                return Err(Error::data(format!(
                    "dataset: sequence {i} has shape {d:?}, expected {dims:?}"
                )));
            }
        }
        for (i, &l) in self.labels.iter().enumerate() {
            if l >= self.class_count {
                return Err(Error::data(format!(
                    "dataset: label {l} at index {i} exceeds class count {}",
                    self.class_count
                )));
            }
        }
        Ok(())
    }

    /// Per-class sample index pools.
    pub fn class_pools(&self) -> Vec<Vec<usize>> {
        let mut pools = vec![Vec::new(); self.class_count];
        for (i, &l) in self.labels.iter().enumerate() {
            pools[l].push(i);
        }
        pools
    }

    /// Splits deterministically into train/validation by taking every
    /// `holdout`-th sample of each class for validation.
    pub fn split_holdout(&self, holdout: usize) -> (LabeledDataset, LabeledDataset) {
        assert!(holdout >= 2);
        let pools = self.class_pools();
        let mut train_idx = Vec::new();
        let mut val_idx = Vec::new();
        for pool in &pools {
            for (k, &i) in pool.iter().enumerate() {
                if k % holdout == holdout - 1 {
                    val_idx.push(i);
                } else {
                    train_idx.push(i);
                }
            }
        }
        (self.subset(&train_idx), self.subset(&val_idx))
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            sequences: indices.iter().map(|&i| self.sequences[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            class_names: self.class_names.clone(),
        }
    }
}

/// Draws classes with probability proportional to the square root of the
/// class frequency, flattening imbalance without discarding it.
pub struct ClassSampler {
    cumulative: Vec<f64>,
    pools: Vec<Vec<usize>>,
}

impl ClassSampler {
    pub fn new(dataset: &LabeledDataset) -> Result<Self> {
        let pools = dataset.class_pools();
        if pools.iter().all(|p| p.is_empty()) {
            return Err(Error::data("sampler: no samples"));
        }
        let weights: Vec<f64> = pools.iter().map(|p| (p.len() as f64).sqrt()).collect();
        let total: f64 = weights.iter().sum();
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for w in &weights {
            acc += w / total;
            cumulative.push(acc);
        }
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        Ok(ClassSampler { cumulative, pools })
    }

    /// Class selection probabilities implied by the square-root weighting.
    pub fn class_probabilities(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.cumulative
            .iter()
            .map(|&c| {
                let p = c - prev;
                prev = c;
                p
            })
            .collect()
    }

    pub fn sample_class<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random::<f64>();
        match self
            .cumulative
            .iter()
            .position(|&c| u < c)
        {
            Some(c) => c,
            None => self.cumulative.len() - 1,
        }
    }

    /// Draws a dataset index: square-root class choice, then uniform within
    /// the class pool. Empty classes are skipped by resampling.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        loop {
            let c = self.sample_class(rng);
            if self.pools[c].is_empty() {
                continue;
            }
            let k = rng.random_range(0..self.pools[c].len());
            return self.pools[c][k];
        }
    }
}
