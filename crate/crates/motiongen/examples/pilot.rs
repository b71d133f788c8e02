// TEMPORARY measurement harness: times recognizer training, GAN training,
// and evaluation milestones at acceptance scale. Not part of the artifact.
use motiongen::data::synth::{synthesize, SynthSpec};
use motiongen::data::Representation;
use motiongen::discriminator::{DiscriminatorConfig, DiscriminatorState};
use motiongen::evaluation::{
    evaluate, person_sliced_dataset, train_recognizer, EvalConfig, RecognizerState,
    RecognizerTrainConfig,
};
use motiongen::generator::{GeneratorConfig, GeneratorState, PositionalEncoding};
use motiongen::gp::{GpConfig, GpPrior};
use motiongen::training::{train_gan, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn disc_cfg(persons: usize, class_count: usize) -> DiscriminatorConfig {
    DiscriminatorConfig {
        persons,
        frames: 16,
        joints: 5,
        dims: 3,
        class_count,
        stage_channels: vec![16, 24],
        stage_coarsen: vec![true, true],
        temporal_kernel: 5,
        temporal_stride: 2,
        spatial_subsets: 2,
        leaky_slope: 0.2,
    }
}

fn gen_cfg(persons: usize, class_count: usize, shared: bool) -> GeneratorConfig {
    GeneratorConfig {
        latent_channels: 16,
        persons,
        frames: 16,
        joints: 5,
        dims: 3,
        representation: Representation::JointPositions,
        class_count,
        dim: 32,
        heads: 4,
        layers: 2,
        mlp_ratio: 2,
        positional: PositionalEncoding::Learned,
        shared_latent: shared,
    }
}

fn train_cfg(steps: usize, batch: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        iterations: steps,
        batch_size: batch,
        critic_steps: 4,
        learning_rate: 2e-4,
        beta1: 0.0,
        beta2: 0.999,
        penalty_weight: 10.0,
        divergence_limit: 1e6,
        seed,
    }
}

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "single".into());
    let steps: usize = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(5000);
    let batch: usize = std::env::args()
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(16);
    match mode.as_str() {
        "single" => single(steps, batch),
        "multi" => multi(steps, batch),
        "ablate" => ablate(steps),
        other => panic!("unknown mode {other}"),
    }
}

fn ablate(steps: usize) {
    let rec_lr = 0.02;
    let spec = SynthSpec::multi_person_toy(60, 16, 11);
    let (data, topo) = synthesize(&spec).unwrap();
    let t0 = Instant::now();
    let rc = disc_cfg(2, 2);
    let mut rec = RecognizerState::init(&rc, &topo, &mut ChaCha8Rng::seed_from_u64(100)).unwrap();
    let (tr, va) = data.split_holdout(4);
    let rep = train_recognizer(
        &mut rec,
        &tr,
        Some(&va),
        &RecognizerTrainConfig {
            epochs: 400,
            batch_size: 32,
            learning_rate: rec_lr,
            momentum: 0.9,
            seed: 0,
        },
    )
    .unwrap();
    let pc = disc_cfg(1, 2);
    let sliced = person_sliced_dataset(&data);
    let mut person_rec =
        RecognizerState::init(&pc, &topo, &mut ChaCha8Rng::seed_from_u64(101)).unwrap();
    let (ptr, pva) = sliced.split_holdout(4);
    let prep = train_recognizer(
        &mut person_rec,
        &ptr,
        Some(&pva),
        &RecognizerTrainConfig {
            epochs: 400,
            batch_size: 32,
            learning_rate: rec_lr,
            momentum: 0.9,
            seed: 0,
        },
    )
    .unwrap();
    eprintln!(
        "recognizers: whole val {:?}, person val {:?}, in {:.1?}",
        rep.val_accuracy,
        prep.val_accuracy,
        t0.elapsed()
    );
    let ecfg = EvalConfig {
        samples_per_class: 60,
        batch_size: 32,
        seed: 0,
    };
    for seed in 0u64..3 {
        for arm in ["ref", "iid", "indep"] {
            let t1 = Instant::now();
            let prior_cfg = if arm == "iid" {
                GpConfig {
                    length_scale_min: 1e-3,
                    length_scale_max: 1e-3,
                    ..GpConfig::new(16, 16)
                }
            } else {
                GpConfig::new(16, 16)
            };
            let shared = arm != "indep";
            let prior = GpPrior::new(&prior_cfg).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let mut gen = GeneratorState::init(&gen_cfg(2, 2, shared), &mut rng).unwrap();
            let mut disc = DiscriminatorState::init(&disc_cfg(2, 2), &topo, &mut rng).unwrap();
            train_gan(
                &mut gen,
                &mut disc,
                &data,
                &prior,
                &train_cfg(steps, 16, 10 + seed),
                None,
            )
            .unwrap();
            let r = evaluate(&gen, &prior, &rec, Some(&person_rec), &data, &ecfg).unwrap();
            eprintln!(
                "ARM {arm} seed {seed}: fid_m {:.2} fid_w {:.2} fid_pw {:.3} acc {:.3} [{:.0?}]",
                r.fid_mean,
                r.fid_whole,
                r.fid_person_whole.unwrap(),
                r.label_accuracy,
                t1.elapsed()
            );
        }
    }
    eprintln!("ablate total {:.0?}", t0.elapsed());
}

fn single(steps: usize, batch: usize) {
    let spec = SynthSpec::single_person_toy(50, 16, 7);
    let (data, topo) = synthesize(&spec).unwrap();
    eprintln!("dataset: {} sequences", data.len());

    let t0 = Instant::now();
    let rc = disc_cfg(1, 4);
    let mut rec = RecognizerState::init(&rc, &topo, &mut ChaCha8Rng::seed_from_u64(100)).unwrap();
    let (tr, va) = data.split_holdout(4);
    let rep = train_recognizer(
        &mut rec,
        &tr,
        Some(&va),
        &RecognizerTrainConfig {
            epochs: 400,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
        },
    )
    .unwrap();
    eprintln!(
        "recognizer: train {:.3} val {:?} in {:.1?}",
        rep.train_accuracy,
        rep.val_accuracy,
        t0.elapsed()
    );

    let gc = gen_cfg(1, 4, true);
    let gp = GpConfig::new(16, 16);
    let prior = GpPrior::new(&gp).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut gen = GeneratorState::init(&gc, &mut rng).unwrap();
    let mut disc = DiscriminatorState::init(&disc_cfg(1, 4), &topo, &mut rng).unwrap();
    let ecfg = EvalConfig {
        samples_per_class: 50,
        batch_size: 32,
        seed: 0,
    };
    let base = evaluate(&gen, &prior, &rec, None, &data, &ecfg).unwrap();
    eprintln!(
        "untrained: fid_m {:.3} fid_w {:.3} acc {:.3}",
        base.fid_mean, base.fid_whole, base.label_accuracy
    );

    let t1 = Instant::now();
    let evals = [100usize, 250, 500, 1000, 1500, 2000, 3000, 4000, 5000];
    let mut observer = |row: &motiongen::training::TrainLogRow,
                        g: &GeneratorState,
                        _d: &DiscriminatorState|
     -> motiongen::Result<()> {
        if row.iter % 50 == 0 {
            eprintln!(
                "iter {:>5} d {:+.4} g {:+.4} gap {:+.4} pen {:.4} [{:.1?}]",
                row.iter, row.d_loss, row.g_loss, row.gap, row.penalty,
                t1.elapsed()
            );
        }
        if evals.contains(&row.iter) {
            let r = evaluate(g, &prior, &rec, None, &data, &ecfg).unwrap();
            eprintln!(
                "EVAL@{:>5}: fid_m {:.3} fid_w {:.3} acc {:.3} [{:.1?}]",
                row.iter, r.fid_mean, r.fid_whole, r.label_accuracy,
                t1.elapsed()
            );
        }
        Ok(())
    };
    train_gan(
        &mut gen,
        &mut disc,
        &data,
        &prior,
        &train_cfg(steps, batch, 0),
        Some(&mut observer),
    )
    .unwrap();
    eprintln!("total train {:.1?}", t1.elapsed());
}

fn multi(steps: usize, batch: usize) {
    let rec_lr = 0.02;
    let spec = SynthSpec::multi_person_toy(60, 16, 11);
    let (data, topo) = synthesize(&spec).unwrap();
    eprintln!("dataset: {} sequences", data.len());

    let t0 = Instant::now();
    let rc = disc_cfg(2, 2);
    let mut rec = RecognizerState::init(&rc, &topo, &mut ChaCha8Rng::seed_from_u64(100)).unwrap();
    let (tr, va) = data.split_holdout(4);
    let rep = train_recognizer(
        &mut rec,
        &tr,
        Some(&va),
        &RecognizerTrainConfig {
            epochs: 400,
            batch_size: 32,
            learning_rate: rec_lr,
            momentum: 0.9,
            seed: 0,
        },
    )
    .unwrap();
    eprintln!(
        "whole recognizer: train {:.3} val {:?} in {:.1?}",
        rep.train_accuracy,
        rep.val_accuracy,
        t0.elapsed()
    );

    let t0 = Instant::now();
    let pc = disc_cfg(1, 2);
    let sliced = person_sliced_dataset(&data);
    let mut person_rec =
        RecognizerState::init(&pc, &topo, &mut ChaCha8Rng::seed_from_u64(101)).unwrap();
    let (ptr, pva) = sliced.split_holdout(4);
    let prep = train_recognizer(
        &mut person_rec,
        &ptr,
        Some(&pva),
        &RecognizerTrainConfig {
            epochs: 400,
            batch_size: 32,
            learning_rate: rec_lr,
            momentum: 0.9,
            seed: 0,
        },
    )
    .unwrap();
    eprintln!(
        "person recognizer: train {:.3} val {:?} in {:.1?}",
        prep.train_accuracy,
        prep.val_accuracy,
        t0.elapsed()
    );

    let gc = gen_cfg(2, 2, true);
    let gp = GpConfig::new(16, 16);
    let prior = GpPrior::new(&gp).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut gen = GeneratorState::init(&gc, &mut rng).unwrap();
    let mut disc = DiscriminatorState::init(&disc_cfg(2, 2), &topo, &mut rng).unwrap();
    let ecfg = EvalConfig {
        samples_per_class: 60,
        batch_size: 32,
        seed: 0,
    };
    let base = evaluate(&gen, &prior, &rec, Some(&person_rec), &data, &ecfg).unwrap();
    eprintln!(
        "untrained: fid_m {:.3} fid_w {:.3} fid_pw {:?} acc {:.3}",
        base.fid_mean, base.fid_whole, base.fid_person_whole, base.label_accuracy
    );

    let t1 = Instant::now();
    let evals = [100usize, 250, 500, 1000, 1500, 2000, 3000, 4000, 5000];
    let mut observer = |row: &motiongen::training::TrainLogRow,
                        g: &GeneratorState,
                        _d: &DiscriminatorState|
     -> motiongen::Result<()> {
        if row.iter % 50 == 0 {
            eprintln!(
                "iter {:>5} d {:+.4} g {:+.4} gap {:+.4} pen {:.4} [{:.1?}]",
                row.iter, row.d_loss, row.g_loss, row.gap, row.penalty,
                t1.elapsed()
            );
        }
        if evals.contains(&row.iter) {
            let r = evaluate(g, &prior, &rec, Some(&person_rec), &data, &ecfg).unwrap();
            eprintln!(
                "EVAL@{:>5}: fid_m {:.3} fid_w {:.3} fid_pw {:?} acc {:.3} [{:.1?}]",
                row.iter, r.fid_mean, r.fid_whole, r.fid_person_whole, r.label_accuracy,
                t1.elapsed()
            );
        }
        Ok(())
    };
    train_gan(
        &mut gen,
        &mut disc,
        &data,
        &prior,
        &train_cfg(steps, batch, 0),
        Some(&mut observer),
    )
    .unwrap();
    eprintln!("total train {:.1?}", t1.elapsed());
}
