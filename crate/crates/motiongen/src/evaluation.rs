//! Evaluation: an action recognizer of the critic's graph-convolutional
//! family, Frechet feature distances, and label accuracy of generated
//! motion.
//!
//! The recognizer reuses the critic's backbone (spatial subset aggregation,
//! strided temporal convolution, node coarsening) and replaces the
//! projection score with a linear classification head on the global
//! feature. Distances are computed on that penultimate global feature:
//! `fid_whole` over the full generated respectively real sets, `fid_mean`
//! as the unweighted mean of per-class distances, and a person-aggregated
//! variant where each person is featurized alone by a single-person
//! recognizer and the per-person vectors are combined by channel-wise max
//! before measuring the distance.

use crate::data::{LabeledDataset, MotionSequence};
use crate::discriminator::{
    global_feature, graph_layout, inject_stage_views, plan_stages, push_stage_param_muts,
    push_stage_param_refs, stage_forward, DiscriminatorConfig, StageParams, StagePlan, StageV,
};
use crate::error::{Error, Result};
use crate::generator::{sample_latents, GeneratorState};
use crate::gp::GpPrior;
use crate::nn::{uniform_bias, uniform_fan_in, Affine, AffineV, ParamBag, Sgd};
use crate::tensor::{Graph, Var};
use crate::data::SkeletonTopology;
use ndarray::{Array1, Array2, Array3, Array4, ArrayD, Axis, IxDyn};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Action recognizer: critic backbone plus a linear head over the global
/// feature. `cfg.class_count` is the number of output classes.
#[derive(Debug, Clone)]
pub struct RecognizerState {
    pub cfg: DiscriminatorConfig,
    pub plans: Vec<StagePlan>,
    pub stages: Vec<StageParams>,
    pub head: Affine,
}

impl RecognizerState {
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
        Ok(RecognizerState {
            cfg: cfg.clone(),
            plans,
            stages,
            head: Affine::init(rng, f, cfg.class_count),
        })
    }

    pub fn named_params(&self) -> Vec<(String, &ArrayD<f64>)> {
        let mut out: Vec<(String, &ArrayD<f64>)> = Vec::new();
        push_stage_param_refs(&mut out, &self.stages);
        out.push(("head.w".into(), &self.head.w));
        out.push(("head.b".into(), &self.head.b));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut ArrayD<f64>)> {
        let mut out: Vec<(String, &mut ArrayD<f64>)> = Vec::new();
        push_stage_param_muts(&mut out, &mut self.stages);
        out.push(("head.w".into(), &mut self.head.w));
        out.push(("head.b".into(), &mut self.head.b));
        out
    }

    pub fn inject<'g>(&self, bag: &mut ParamBag<'g>) -> RecognizerV<'g> {
        RecognizerV {
            cfg: self.cfg.clone(),
            stages: inject_stage_views(bag, &self.plans, &self.stages),
            head: self.head.inject(bag, "head"),
        }
    }
}

pub struct RecognizerV<'g> {
    cfg: DiscriminatorConfig,
    stages: Vec<StageV<'g>>,
    head: AffineV<'g>,
}

impl<'g> RecognizerV<'g> {
    /// Penultimate global feature `[b, feature_dim]`.
    pub fn features(&self, motion: Var<'g>) -> Var<'g> {
        let mut x = graph_layout(self.cfg.joints, self.cfg.dims, motion);
        for st in &self.stages {
            x = stage_forward(
                self.cfg.temporal_kernel,
                self.cfg.temporal_stride,
                self.cfg.leaky_slope,
                st,
                x,
            );
        }
        global_feature(x)
    }

    /// Class logits `[b, class_count]`.
    pub fn logits(&self, motion: Var<'g>) -> Var<'g> {
        self.head.forward(self.features(motion))
    }
}

/// Mean cross entropy of `logits` `[b, classes]` against integer labels.
pub fn cross_entropy<'g>(g: &'g Graph, logits: Var<'g>, labels: &[usize]) -> Var<'g> {
    let shape = logits.shape();
    let (b, a) = (shape[0], shape[1]);
    assert_eq!(labels.len(), b, "one label per row");
    let mut one_hot = ArrayD::<f64>::zeros(IxDyn(&[b, a]));
    for (i, &l) in labels.iter().enumerate() {
        assert!(l < a, "label {l} out of {a} classes");
        one_hot[[i, l]] = 1.0;
    }
    let log_probs = logits.softmax_last().ln();
    log_probs
        .mul(g.constant(one_hot))
        .sum_axis(1)
        .mean_axis(0)
        .neg()
}

/// Step-decayed learning rate: the base rate is multiplied by 0.1 at
/// one-eighth and at five-eighths of the epoch budget.
pub fn scheduled_lr(base: f64, epochs: usize, epoch: usize) -> f64 {
    let mut lr = base;
    if epoch >= epochs / 8 {
        lr *= 0.1;
    }
    if epoch >= 5 * epochs / 8 {
        lr *= 0.1;
    }
    lr
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RecognizerTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for RecognizerTrainConfig {
    fn default() -> Self {
        RecognizerTrainConfig {
            epochs: 80,
            batch_size: 64,
            learning_rate: 0.1,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl RecognizerTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config(
                "recognizer: epochs and batch size must be positive",
            ));
        }
        let lr_ok = self.learning_rate > 0.0;
        if !lr_ok || self.momentum < 0.0 || self.momentum >= 1.0 {
            return Err(Error::config(
                "recognizer: need learning rate > 0 and momentum in [0, 1)",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RecognizerEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecognizerReport {
    pub epochs: Vec<RecognizerEpoch>,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

fn flatten_batch(
    seqs: &[&MotionSequence],
    frames: usize,
    rng_perm: Option<&mut ChaCha8Rng>,
) -> Array4<f64> {
    let first = seqs[0];
    let (p, c) = (first.persons(), first.channels());
    let mut out = Array4::<f64>::zeros((seqs.len(), p, frames, c));
    let mut rng_perm = rng_perm;
    for (i, seq) in seqs.iter().enumerate() {
        let seq = match rng_perm.as_deref_mut() {
            Some(rng) if p > 1 => {
                let mut perm: Vec<usize> = (0..p).collect();
                perm.shuffle(rng);
                seq.permute_persons(&perm).crop_or_pad(frames)
            }
            _ => seq.crop_or_pad(frames),
        };
        out.index_axis_mut(Axis(0), i).assign(&seq.flatten());
    }
    out
}

/// Trains the recognizer with momentum SGD under the step-decay schedule,
/// shuffling each epoch and augmenting multi-person samples with random
/// person permutations. Returns per-epoch losses plus final train/val
/// accuracy.
pub fn train_recognizer(
    rec: &mut RecognizerState,
    train: &LabeledDataset,
    val: Option<&LabeledDataset>,
    cfg: &RecognizerTrainConfig,
) -> Result<RecognizerReport> {
    cfg.validate()?;
    train.validate()?;
    let first = &train.sequences[0];
    if rec.cfg.persons != first.persons()
        || 3 + rec.cfg.joints * rec.cfg.dims != first.channels()
        || rec.cfg.class_count != train.class_count
    {
        return Err(Error::config(
            "recognizer: model shape does not match dataset",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sgd = Sgd::new(cfg.learning_rate, cfg.momentum);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let n = train.sequences.len();

    for epoch in 0..cfg.epochs {
        sgd.lr = scheduled_lr(cfg.learning_rate, cfg.epochs, epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let seqs: Vec<&MotionSequence> =
                chunk.iter().map(|&i| &train.sequences[i]).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let batch = flatten_batch(&seqs, rec.cfg.frames, Some(&mut rng));
            let g = Graph::new();
            let mut bag = ParamBag::new(&g);
            let rv = rec.inject(&mut bag);
            let loss = cross_entropy(&g, rv.logits(g.constant(batch.into_dyn())), &labels);
            let loss_value = loss.scalar_value();
            if !loss_value.is_finite() {
                return Err(Error::numerical(format!(
                    "recognizer training diverged at epoch {epoch}"
                )));
            }
            let grads = bag.grads(loss);
            sgd.step(rec.named_params_mut(), &grads);
            epoch_loss += loss_value;
            batches += 1;
        }
        epochs.push(RecognizerEpoch {
            epoch,
            loss: epoch_loss / batches.max(1) as f64,
            learning_rate: sgd.lr,
        });
    }

    let train_accuracy = accuracy(rec, train)?;
    let val_accuracy = match val {
        Some(v) => Some(accuracy(rec, v)?),
        None => None,
    };
    Ok(RecognizerReport {
        epochs,
        train_accuracy,
        val_accuracy,
    })
}

const FEATURE_BATCH: usize = 64;

/// Penultimate features of a sequence set, row per sequence.
pub fn extract_features(
    rec: &RecognizerState,
    seqs: &[MotionSequence],
) -> Result<Array2<f64>> {
    if seqs.is_empty() {
        return Err(Error::data("extract_features: empty sequence set"));
    }
    let f = rec.cfg.feature_dim();
    let mut out = Array2::<f64>::zeros((seqs.len(), f));
    for (start, chunk) in seqs.chunks(FEATURE_BATCH).enumerate() {
        let refs: Vec<&MotionSequence> = chunk.iter().collect();
        if refs[0].persons() != rec.cfg.persons
            || refs[0].channels() != 3 + rec.cfg.joints * rec.cfg.dims
        {
            return Err(Error::config(
                "extract_features: sequence shape does not match recognizer",
            ));
        }
        let batch = flatten_batch(&refs, rec.cfg.frames, None);
        let g = Graph::new();
        let mut bag = ParamBag::new(&g);
        let rv = rec.inject(&mut bag);
        let feats = rv.features(g.constant(batch.into_dyn())).value();
        for (i, row) in feats
            .into_dimensionality::<ndarray::Ix2>()
            .expect("feature rank")
            .rows()
            .into_iter()
            .enumerate()
        {
            out.row_mut(start * FEATURE_BATCH + i).assign(&row);
        }
    }
    Ok(out)
}

/// Head logits computed directly from extracted features.
pub fn logits_from_features(rec: &RecognizerState, features: &Array2<f64>) -> Array2<f64> {
    let w = rec
        .head
        .w
        .view()
        .into_dimensionality::<ndarray::Ix2>()
        .expect("head.w rank");
    let b = rec
        .head
        .b
        .view()
        .into_dimensionality::<ndarray::Ix1>()
        .expect("head.b rank");
    features.dot(&w) + b
}

pub fn classify(rec: &RecognizerState, seqs: &[MotionSequence]) -> Result<Vec<usize>> {
    let feats = extract_features(rec, seqs)?;
    let logits = logits_from_features(rec, &feats);
    Ok(logits
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                .map(|(i, _)| i)
                .expect("non-empty row")
        })
        .collect())
}

/// Fraction of dataset samples the recognizer labels correctly.
pub fn accuracy(rec: &RecognizerState, data: &LabeledDataset) -> Result<f64> {
    let predicted = classify(rec, &data.sequences)?;
    let hits = predicted
        .iter()
        .zip(&data.labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / data.labels.len() as f64)
}

/// Explodes a multi-person dataset into single-person samples: every person
/// of every sequence becomes its own sample carrying the parent label. This
/// is the training set for the person-level recognizer behind
/// [`person_aggregated_features`].
pub fn person_sliced_dataset(data: &LabeledDataset) -> LabeledDataset {
    let mut sequences = Vec::new();
    let mut labels = Vec::new();
    for (seq, &label) in data.sequences.iter().zip(&data.labels) {
        for p in 0..seq.persons() {
            sequences.push(person_slice(seq, p));
            labels.push(label);
        }
    }
    LabeledDataset {
        sequences,
        labels,
        class_count: data.class_count,
        class_names: data.class_names.clone(),
    }
}

/// Splits one person out of a multi-person sequence.
fn person_slice(seq: &MotionSequence, p: usize) -> MotionSequence {
    MotionSequence {
        roots: seq
            .roots
            .slice(ndarray::s![p..p + 1, .., ..])
            .to_owned(),
        poses: seq
            .poses
            .slice(ndarray::s![p..p + 1, .., .., ..])
            .to_owned(),
        repr: seq.repr,
    }
}

/// Person-aggregated features: every person is featurized alone by a
/// single-person recognizer and the vectors are combined channel-wise by
/// max, making the result invariant to person order.
pub fn person_aggregated_features(
    rec: &RecognizerState,
    seqs: &[MotionSequence],
) -> Result<Array2<f64>> {
    if rec.cfg.persons != 1 {
        return Err(Error::config(
            "person_aggregated_features: needs a single-person recognizer",
        ));
    }
    if seqs.is_empty() {
        return Err(Error::data("person_aggregated_features: empty set"));
    }
    let f = rec.cfg.feature_dim();
    let mut out = Array2::<f64>::zeros((seqs.len(), f));
    // featurize all persons of all sequences in one flat pass
    let mut singles = Vec::new();
    for seq in seqs {
        for p in 0..seq.persons() {
            singles.push(person_slice(seq, p));
        }
    }
    let feats = extract_features(rec, &singles)?;
    let mut row = 0usize;
    for (i, seq) in seqs.iter().enumerate() {
        for p in 0..seq.persons() {
            for (j, v) in feats.row(row).iter().enumerate() {
                if p == 0 || *v > out[[i, j]] {
                    out[[i, j]] = *v;
                }
            }
            row += 1;
        }
    }
    Ok(out)
}

/// Sample mean and unbiased covariance of feature rows.
pub fn feature_stats(features: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let (n, f) = features.dim();
    let mu = features.mean_axis(Axis(0)).expect("non-empty features");
    if n < 2 {
        return (mu, Array2::zeros((f, f)));
    }
    let centered = features - &mu.view().insert_axis(Axis(0));
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    (mu, cov)
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let n = m.nrows();
    let mut d = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        d[(i, i)] = eig.eigenvalues[i].max(0.0).sqrt();
    }
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Frechet distance between Gaussians:
/// `||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^{1/2})`. The matrix square
/// root is evaluated through the symmetric form `(S1^{1/2} S2 S1^{1/2})^{1/2}`
/// with eigenvalues clamped at zero; the result is clamped at zero.
pub fn frechet_distance(
    mu1: &Array1<f64>,
    sigma1: &Array2<f64>,
    mu2: &Array1<f64>,
    sigma2: &Array2<f64>,
) -> f64 {
    let f = mu1.len();
    assert_eq!(mu2.len(), f);
    assert_eq!(sigma1.dim(), (f, f));
    assert_eq!(sigma2.dim(), (f, f));
    let s1 = DMatrix::from_fn(f, f, |i, j| sigma1[[i, j]]);
    let s2 = DMatrix::from_fn(f, f, |i, j| sigma2[[i, j]]);
    let s1h = sym_sqrt(&s1);
    let inner = &s1h * &s2 * &s1h;
    let eig = SymmetricEigen::new((&inner + inner.transpose()) * 0.5);
    let tr_sqrt: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let dmu: f64 = mu1
        .iter()
        .zip(mu2.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    (dmu + s1.trace() + s2.trace() - 2.0 * tr_sqrt).max(0.0)
}

/// Frechet distance between two feature sets.
pub fn fid_between(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let (mu_a, sig_a) = feature_stats(a);
    let (mu_b, sig_b) = feature_stats(b);
    frechet_distance(&mu_a, &sig_a, &mu_b, &sig_b)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalConfig {
    /// Generated samples per class.
    pub samples_per_class: usize,
    /// Generation/feature batch size.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            samples_per_class: 100,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassFid {
    pub class: usize,
    pub name: String,
    pub fid: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    /// Distance between the full real and generated feature sets.
    pub fid_whole: f64,
    /// Unweighted mean of the per-class distances.
    pub fid_mean: f64,
    pub per_class: Vec<ClassFid>,
    /// Fraction of generated samples the recognizer assigns to their
    /// conditioning label.
    pub label_accuracy: f64,
    /// Distance over person-aggregated features, when a single-person
    /// recognizer is supplied and sequences are multi-person.
    pub fid_person_whole: Option<f64>,
    pub samples_per_class: usize,
}

/// Generates `samples_per_class` sequences per class from the generator.
pub fn generate_per_class(
    gen: &GeneratorState,
    prior: &GpPrior,
    cfg: &EvalConfig,
) -> Result<(Vec<MotionSequence>, Vec<usize>)> {
    if cfg.samples_per_class == 0 || cfg.batch_size == 0 {
        return Err(Error::config(
            "evaluation: samples per class and batch size must be positive",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut seqs = Vec::with_capacity(gen.cfg.class_count * cfg.samples_per_class);
    let mut labels = Vec::with_capacity(seqs.capacity());
    for class in 0..gen.cfg.class_count {
        let mut left = cfg.samples_per_class;
        while left > 0 {
            let b = left.min(cfg.batch_size);
            let z = sample_latents(prior, b, gen.cfg.persons, gen.cfg.shared_latent, &mut rng);
            let class_labels = vec![class; b];
            let g = Graph::new();
            let mut bag = ParamBag::new(&g);
            let gv = gen.inject(&mut bag);
            let out = gv.forward(g.constant(z.into_dyn()), &class_labels).value();
            let out4 = out
                .into_dimensionality::<ndarray::Ix4>()
                .expect("generator output rank");
            for i in 0..b {
                let flat: Array3<f64> = out4.index_axis(Axis(0), i).to_owned();
                seqs.push(MotionSequence::unflatten(
                    &flat,
                    gen.cfg.joints,
                    gen.cfg.dims,
                    gen.cfg.representation,
                )?);
                labels.push(class);
            }
            left -= b;
        }
    }
    Ok((seqs, labels))
}

fn rows_for(features: &Array2<f64>, labels: &[usize], class: usize) -> Array2<f64> {
    let idx: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == class)
        .map(|(i, _)| i)
        .collect();
    features.select(Axis(0), &idx)
}

/// Full evaluation: generate per class, featurize both sides with the
/// recognizer, and report distances plus label accuracy.
pub fn evaluate(
    gen: &GeneratorState,
    prior: &GpPrior,
    rec: &RecognizerState,
    person_rec: Option<&RecognizerState>,
    real: &LabeledDataset,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    real.validate()?;
    if rec.cfg.class_count != real.class_count || gen.cfg.class_count != real.class_count {
        return Err(Error::config(
            "evaluation: class counts of generator, recognizer, and data differ",
        ));
    }
    let (fake_seqs, fake_labels) = generate_per_class(gen, prior, cfg)?;
    let real_feats = extract_features(rec, &real.sequences)?;
    let fake_feats = extract_features(rec, &fake_seqs)?;

    let fid_whole = fid_between(&real_feats, &fake_feats);
    let mut per_class = Vec::with_capacity(real.class_count);
    for class in 0..real.class_count {
        let r = rows_for(&real_feats, &real.labels, class);
        let f = rows_for(&fake_feats, &fake_labels, class);
        if r.nrows() == 0 || f.nrows() == 0 {
            return Err(Error::data(format!(
                "evaluation: class {class} has no samples on one side"
            )));
        }
        per_class.push(ClassFid {
            class,
            name: real
                .class_names
                .get(class)
                .cloned()
                .unwrap_or_else(|| format!("class_{class}")),
            fid: fid_between(&r, &f),
        });
    }
    let fid_mean = per_class.iter().map(|c| c.fid).sum::<f64>() / per_class.len() as f64;

    let predicted = {
        let logits = logits_from_features(rec, &fake_feats);
        logits
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                    .map(|(i, _)| i)
                    .expect("non-empty row")
            })
            .collect::<Vec<usize>>()
    };
    let label_accuracy = predicted
        .iter()
        .zip(&fake_labels)
        .filter(|(p, l)| p == l)
        .count() as f64
        / fake_labels.len() as f64;

    let fid_person_whole = match person_rec {
        Some(pr) => {
            let real_pf = person_aggregated_features(pr, &real.sequences)?;
            let fake_pf = person_aggregated_features(pr, &fake_seqs)?;
            Some(fid_between(&real_pf, &fake_pf))
        }
        None => None,
    };

    Ok(EvalReport {
        fid_whole,
        fid_mean,
        per_class,
        label_accuracy,
        fid_person_whole,
        samples_per_class: cfg.samples_per_class,
    })
}
