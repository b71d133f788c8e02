use motiongen::data::synth::{synthesize, SynthSpec};
use motiongen::discriminator::DiscriminatorConfig;
use motiongen::evaluation::{train_recognizer, RecognizerState, RecognizerTrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(80);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.1);
    let spec = SynthSpec::single_person_toy(12, 12, 31);
    let (data, topo) = synthesize(&spec).unwrap();
    let (train, val) = data.split_holdout(4);
    let cfg = DiscriminatorConfig {
        persons: 1,
        frames: 12,
        joints: 5,
        dims: 3,
        class_count: data.class_count,
        stage_channels: vec![8, 12],
        stage_coarsen: vec![true, true],
        temporal_kernel: 4,
        temporal_stride: 2,
        spatial_subsets: 2,
        leaky_slope: 0.2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut rec = RecognizerState::init(&cfg, &topo, &mut rng).unwrap();
    let tcfg = RecognizerTrainConfig {
        epochs,
        batch_size: 12,
        learning_rate: lr,
        momentum: 0.9,
        seed: 7,
    };
    let t0 = std::time::Instant::now();
    let report = train_recognizer(&mut rec, &train, Some(&val), &tcfg).unwrap();
    for e in report.epochs.iter().step_by(10) {
        println!("epoch {:3} lr {:.4} loss {:.4}", e.epoch, e.learning_rate, e.loss);
    }
    println!(
        "train acc {:.3} val acc {:.3} elapsed {:?}",
        report.train_accuracy,
        report.val_accuracy.unwrap(),
        t0.elapsed()
    );
}
