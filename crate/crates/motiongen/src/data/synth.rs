//! Procedurally generated labeled motion data on the five-joint star
//! skeleton.
//!
//! Classes are simple parametric motions with per-sample jitter: random
//! phase, amplitude scale, root placement, and white pose noise. They are
//! built so class means differ strongly (arm configuration, root trajectory),
//! which keeps the corpus easy for recognizers while still exercising
//! temporal structure and, for the two-person classes, person interaction.

use super::{LabeledDataset, MotionSequence, Representation, SkeletonTopology};
use crate::error::{Error, Result};
use ndarray::{Array3, Array4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

/// Motion class catalog. Single-person classes place one actor, interaction
/// classes place two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionClass {
    /// One raised arm oscillating; root fixed.
    Wave,
    /// Root drifts forward while the lower body swings; arms hang.
    Walk,
    /// Root bobs vertically; both arms held horizontal.
    Squat,
    /// Both arms rise monotonically; root fixed.
    Stretch,
    /// Two persons converge until close, reaching toward each other.
    Approach,
    /// Two persons wave in phase with fixed, facing placements.
    MirrorWave,
}

impl MotionClass {
    pub fn persons(self) -> usize {
        match self {
            MotionClass::Wave | MotionClass::Walk | MotionClass::Squat | MotionClass::Stretch => 1,
            MotionClass::Approach | MotionClass::MirrorWave => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MotionClass::Wave => "wave",
            MotionClass::Walk => "walk",
            MotionClass::Squat => "squat",
            MotionClass::Stretch => "stretch",
            MotionClass::Approach => "approach",
            MotionClass::MirrorWave => "mirror_wave",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SynthSpec {
    pub classes: Vec<MotionClass>,
    pub samples_per_class: usize,
    pub frames: usize,
    pub seed: u64,
    /// Standard deviation of white noise added to joint positions (meters).
    pub noise_std: f64,
}

impl SynthSpec {
    /// Four single-person classes.
    pub fn single_person_toy(samples_per_class: usize, frames: usize, seed: u64) -> Self {
        SynthSpec {
            classes: vec![
                MotionClass::Wave,
                MotionClass::Walk,
                MotionClass::Squat,
                MotionClass::Stretch,
            ],
            samples_per_class,
            frames,
            seed,
            noise_std: 0.01,
        }
    }

    /// Two two-person interaction classes.
    pub fn multi_person_toy(samples_per_class: usize, frames: usize, seed: u64) -> Self {
        SynthSpec {
            classes: vec![MotionClass::Approach, MotionClass::MirrorWave],
            samples_per_class,
            frames,
            seed,
            noise_std: 0.01,
        }
    }

    pub fn persons(&self) -> usize {
        self.classes.first().map(|c| c.persons()).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::config("synth: no classes"));
        }
        if self.samples_per_class == 0 {
            return Err(Error::config("synth: samples_per_class must be positive"));
        }
        if self.frames < 2 {
            return Err(Error::config("synth: need at least two frames"));
        }
        let noise_ok = self.noise_std >= 0.0;
        if !noise_ok {
            return Err(Error::config("synth: negative noise"));
        }
        let p = self.persons();
        if self.classes.iter().any(|c| c.persons() != p) {
            return Err(Error::config(
                "synth: classes mix single-person and interaction motions",
            ));
        }
        Ok(())
    }
}

/// Per-sample jitter drawn once per sequence.
struct Jitter {
    phase: f64,
    amp: f64,
    dx: f64,
    dz: f64,
}

impl Jitter {
    fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Jitter {
            phase: rng.random_range(0.0..std::f64::consts::TAU),
            amp: rng.random_range(0.8..1.2),
            dx: rng.random_range(-0.3..0.3),
            dz: rng.random_range(-0.3..0.3),
        }
    }
}

const ROOT_HEIGHT: f64 = 0.95;
const HEAD_OFFSET: [f64; 3] = [0.0, 0.35, 0.0];
const ARM_LEN: f64 = 0.45;
const FOOT_LEN: f64 = 0.78;
/// Arm angle from the downward vertical for a hanging arm.
const ARM_HANG: f64 = 0.25;

/// Arm endpoint offset: angle 0 hangs straight down, pi/2 is horizontal,
/// larger raises above the shoulder line. `side` is -1 for left, +1 for
/// right; `facing` mirrors the whole actor about the y axis.
fn arm_offset(theta: f64, side: f64, facing: f64) -> [f64; 3] {
    [facing * side * ARM_LEN * theta.sin(), -ARM_LEN * theta.cos() + 0.1, 0.0]
}

fn foot_offset(beta: f64, facing: f64) -> [f64; 3] {
    [facing * FOOT_LEN * beta.sin(), -FOOT_LEN * beta.cos(), 0.0]
}

/// Per-frame actor state fed into the pose assembler.
struct ActorFrame {
    root: [f64; 3],
    theta_l: f64,
    theta_r: f64,
    beta: f64,
    facing: f64,
}

fn single_person_frames(
    class: MotionClass,
    frames: usize,
    jit: &Jitter,
) -> Vec<ActorFrame> {
    let t_span = frames as f64;
    (0..frames)
        .map(|ti| {
            let t = ti as f64;
            let cyc = |cycles: f64| (std::f64::consts::TAU * cycles * t / t_span + jit.phase).sin();
            match class {
                MotionClass::Wave => ActorFrame {
                    root: [jit.dx, ROOT_HEIGHT, jit.dz],
                    theta_l: ARM_HANG,
                    theta_r: 2.2 + 0.45 * jit.amp * cyc(2.0),
                    beta: 0.0,
                    facing: 1.0,
                },
                MotionClass::Walk => ActorFrame {
                    root: [jit.dx + 0.05 * jit.amp * t, ROOT_HEIGHT, jit.dz],
                    theta_l: ARM_HANG,
                    theta_r: ARM_HANG,
                    beta: 0.5 * cyc(2.0),
                    facing: 1.0,
                },
                MotionClass::Squat => ActorFrame {
                    root: [
                        jit.dx,
                        ROOT_HEIGHT - 0.10 * jit.amp * (1.0 + cyc(1.5)),
                        jit.dz,
                    ],
                    theta_l: std::f64::consts::FRAC_PI_2,
                    theta_r: std::f64::consts::FRAC_PI_2,
                    beta: 0.0,
                    facing: 1.0,
                },
                MotionClass::Stretch => {
                    let theta = 0.3 + 2.2 * jit.amp.min(1.15) * t / (t_span - 1.0);
                    ActorFrame {
                        root: [jit.dx, ROOT_HEIGHT, jit.dz],
                        theta_l: theta,
                        theta_r: theta,
                        beta: 0.0,
                        facing: 1.0,
                    }
                }
                _ => unreachable!("interaction class in single-person path"),
            }
        })
        .collect()
}

fn interaction_frames(
    class: MotionClass,
    frames: usize,
    jit: &Jitter,
) -> [Vec<ActorFrame>; 2] {
    let t_span = frames as f64;
    let mut out = [Vec::with_capacity(frames), Vec::with_capacity(frames)];
    match class {
        MotionClass::Approach => {
            // persons start symmetric around the origin and converge until
            // the gap reaches the stop distance
            let start_half_gap = 0.9 + 0.2 * jit.amp + jit.dx.abs();
            let speed = 0.06 * jit.amp;
            let stop_half_gap = 0.225;
            for ti in 0..frames {
                let t = ti as f64;
                let half_gap = (start_half_gap - speed * t).max(stop_half_gap);
                // reach rises as the actors close in
                let progress = ((start_half_gap - half_gap)
                    / (start_half_gap - stop_half_gap))
                    .clamp(0.0, 1.0);
                let reach = ARM_HANG + (1.45 - ARM_HANG) * progress;
                for (p, facing) in [(0usize, 1.0f64), (1, -1.0)] {
                    out[p].push(ActorFrame {
                        root: [facing * -half_gap, ROOT_HEIGHT, jit.dz],
                        theta_l: ARM_HANG,
                        theta_r: reach,
                        beta: 0.0,
                        facing,
                    });
                }
            }
        }
        MotionClass::MirrorWave => {
            let half_gap = 0.8 + 0.2 * jit.amp;
            for ti in 0..frames {
                let t = ti as f64;
                let osc = (std::f64::consts::TAU * 2.0 * t / t_span + jit.phase).sin();
                let theta_r = 2.2 + 0.45 * jit.amp * osc;
                for (p, facing) in [(0usize, 1.0f64), (1, -1.0)] {
                    out[p].push(ActorFrame {
                        root: [facing * -half_gap, ROOT_HEIGHT, jit.dz],
                        theta_l: ARM_HANG,
                        theta_r,
                        beta: 0.0,
                        facing,
                    });
                }
            }
        }
        _ => unreachable!("single-person class in interaction path"),
    }
    out
}

fn assemble_sequence<R: Rng + ?Sized>(
    actors: &[Vec<ActorFrame>],
    noise_std: f64,
    rng: &mut R,
) -> MotionSequence {
    let p = actors.len();
    let t = actors[0].len();
    let mut roots = Array3::<f64>::zeros((p, t, 3));
    let mut poses = Array4::<f64>::zeros((p, t, 5, 3));
    for (pi, frames) in actors.iter().enumerate() {
        for (ti, f) in frames.iter().enumerate() {
            let offsets: [[f64; 3]; 5] = [
                [0.0, 0.0, 0.0],
                HEAD_OFFSET,
                arm_offset(f.theta_l, -1.0, f.facing),
                arm_offset(f.theta_r, 1.0, f.facing),
                foot_offset(f.beta, f.facing),
            ];
            for d in 0..3 {
                roots[(pi, ti, d)] = f.root[d];
            }
            for (j, off) in offsets.iter().enumerate() {
                for d in 0..3 {
                    let noise = if noise_std > 0.0 {
                        noise_std * rng.sample::<f64, _>(rand_distr::StandardNormal)
                    } else {
                        0.0
                    };
                    poses[(pi, ti, j, d)] = f.root[d] + off[d] + noise;
                }
            }
        }
    }
    MotionSequence {
        roots,
        poses,
        repr: Representation::JointPositions,
    }
}

/// Generates the dataset described by `spec` on the [`SkeletonTopology::toy5`]
/// skeleton. Deterministic in `spec.seed`.
pub fn synthesize(spec: &SynthSpec) -> Result<(LabeledDataset, SkeletonTopology)> {
    spec.validate()?;
    let topo = SkeletonTopology::toy5();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut sequences = Vec::with_capacity(spec.classes.len() * spec.samples_per_class);
    let mut labels = Vec::with_capacity(sequences.capacity());
    for (label, &class) in spec.classes.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            let jit = Jitter::draw(&mut rng);
            let actors: Vec<Vec<ActorFrame>> = if class.persons() == 1 {
                vec![single_person_frames(class, spec.frames, &jit)]
            } else {
                interaction_frames(class, spec.frames, &jit).into()
            };
            sequences.push(assemble_sequence(&actors, spec.noise_std, &mut rng));
            labels.push(label);
        }
    }
    let dataset = LabeledDataset {
        sequences,
        labels,
        class_count: spec.classes.len(),
        class_names: spec.classes.iter().map(|c| c.name().to_string()).collect(),
    };
    dataset.validate()?;
    Ok((dataset, topo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Axis;

    fn root_displacement(seq: &MotionSequence, person: usize) -> f64 {
        let t = seq.frames();
        let a = seq.roots.index_axis(Axis(0), person);
        let first = a.index_axis(Axis(0), 0);
        let last = a.index_axis(Axis(0), t - 1);
        first
            .iter()
            .zip(last.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    fn inter_root_distance(seq: &MotionSequence, frame: usize) -> f64 {
        let a = seq.roots.index_axis(Axis(0), 0);
        let b = seq.roots.index_axis(Axis(0), 1);
        let pa = a.index_axis(Axis(0), frame);
        let pb = b.index_axis(Axis(0), frame);
        pa.iter()
            .zip(pb.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn synthesis_is_deterministic() {
        let spec = SynthSpec::single_person_toy(3, 16, 99);
        let (a, _) = synthesize(&spec).unwrap();
        let (b, _) = synthesize(&spec).unwrap();
        for (x, y) in a.sequences.iter().zip(b.sequences.iter()) {
            assert_eq!(x.poses, y.poses);
            assert_eq!(x.roots, y.roots);
        }
        let other = SynthSpec::single_person_toy(3, 16, 100);
        let (c, _) = synthesize(&other).unwrap();
        assert_ne!(a.sequences[0].poses, c.sequences[0].poses);
    }

    #[test]
    fn wave_keeps_root_still_and_walk_travels() {
        let spec = SynthSpec::single_person_toy(12, 16, 7);
        let (ds, _) = synthesize(&spec).unwrap();
        for (seq, &label) in ds.sequences.iter().zip(ds.labels.iter()) {
            let disp = root_displacement(seq, 0);
            match ds.class_names[label].as_str() {
                "wave" | "stretch" => {
                    assert!(disp < 0.05, "{} moved {disp}", ds.class_names[label])
                }
                "walk" => assert!(
                    (0.5..1.0).contains(&disp),
                    "walk displacement {disp} outside expected band"
                ),
                _ => {}
            }
        }
    }

    #[test]
    fn squat_oscillates_vertically() {
        let spec = SynthSpec::single_person_toy(8, 16, 21);
        let (ds, _) = synthesize(&spec).unwrap();
        for (seq, &label) in ds.sequences.iter().zip(ds.labels.iter()) {
            if ds.class_names[label] != "squat" {
                continue;
            }
            let ys: Vec<f64> = (0..seq.frames()).map(|t| seq.roots[(0, t, 1)]).collect();
            let min = ys.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(max - min > 0.08, "squat vertical range {}", max - min);
            assert!(max <= ROOT_HEIGHT + 1e-9);
        }
    }

    #[test]
    fn approach_reduces_inter_person_distance() {
        let spec = SynthSpec::multi_person_toy(10, 16, 13);
        let (ds, _) = synthesize(&spec).unwrap();
        for (seq, &label) in ds.sequences.iter().zip(ds.labels.iter()) {
            let first = inter_root_distance(seq, 0);
            let last = inter_root_distance(seq, seq.frames() - 1);
            match ds.class_names[label].as_str() {
                "approach" => {
                    assert!(last < first, "approach did not converge: {first} -> {last}");
                    // never below the stop distance
                    for t in 0..seq.frames() {
                        assert!(inter_root_distance(seq, t) >= 0.45 - 1e-9);
                    }
                }
                "mirror_wave" => {
                    assert!((first - last).abs() < 1e-9, "mirror_wave roots moved");
                }
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn mirror_wave_is_phase_locked() {
        let spec = SynthSpec {
            classes: vec![MotionClass::MirrorWave],
            samples_per_class: 4,
            frames: 16,
            seed: 3,
            noise_std: 0.0,
        };
        let (ds, _) = synthesize(&spec).unwrap();
        for seq in &ds.sequences {
            // right-hand height relative to root should match across persons
            for t in 0..seq.frames() {
                let h0 = seq.poses[(0, t, 3, 1)] - seq.roots[(0, t, 1)];
                let h1 = seq.poses[(1, t, 3, 1)] - seq.roots[(1, t, 1)];
                assert!((h0 - h1).abs() < 1e-9, "persons out of phase at frame {t}");
            }
        }
    }

    #[test]
    fn classes_are_nearest_centroid_separable() {
        let spec = SynthSpec::single_person_toy(30, 16, 5);
        let (ds, _) = synthesize(&spec).unwrap();
        let (train, val) = ds.split_holdout(5);
        let dim = {
            let f = train.sequences[0].flatten();
            f.len()
        };
        let mut centroids = vec![vec![0.0f64; dim]; train.class_count];
        let mut counts = vec![0usize; train.class_count];
        for (seq, &label) in train.sequences.iter().zip(train.labels.iter()) {
            let flat = seq.flatten();
            for (acc, v) in centroids[label].iter_mut().zip(flat.iter()) {
                *acc += v;
            }
            counts[label] += 1;
        }
        for (c, n) in centroids.iter_mut().zip(counts.iter()) {
            for v in c.iter_mut() {
                *v /= *n as f64;
            }
        }
        let mut correct = 0usize;
        for (seq, &label) in val.sequences.iter().zip(val.labels.iter()) {
            let flat = seq.flatten();
            let mut best = (f64::INFINITY, 0usize);
            for (ci, c) in centroids.iter().enumerate() {
                let d: f64 = c
                    .iter()
                    .zip(flat.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best.0 {
                    best = (d, ci);
                }
            }
            if best.1 == label {
                correct += 1;
            }
        }
        let acc = correct as f64 / val.len() as f64;
        assert!(acc >= 0.8, "nearest-centroid accuracy {acc}");
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = SynthSpec::single_person_toy(2, 16, 1);
        spec.classes.push(MotionClass::Approach);
        assert!(synthesize(&spec).is_err());
        let spec = SynthSpec::single_person_toy(0, 16, 1);
        assert!(synthesize(&spec).is_err());
        let spec = SynthSpec::single_person_toy(2, 1, 1);
        assert!(synthesize(&spec).is_err());
    }
}
