//! Subcommand implementations. Each command resolves its output directory
//! (flag > environment > config), does its work through the library, and
//! writes a manifest recording the configuration hash, effective seeds,
//! inputs, and outputs, so every artifact traces back to its run.

use crate::{svg, ConfigArgs, OUT_DIR_ENV};
use motiongen::checkpoint::{
    checkpoint_critic, checkpoint_generator, checkpoint_recognizer, load_critic,
    load_generator, load_recognizer, Checkpoint,
};
use motiongen::config::RunConfig;
use motiongen::data::format::{export_json as export_dataset_json, load_dataset, save_dataset};
use motiongen::data::synth::synthesize;
use motiongen::data::LabeledDataset;
use motiongen::discriminator::DiscriminatorState;
use motiongen::error::{Error, Result};
use motiongen::evaluation::{
    evaluate as run_evaluation, person_sliced_dataset, train_recognizer as run_recognizer,
    RecognizerState,
};
use motiongen::generator::{sample_latents, GeneratorState};
use motiongen::gp::GpPrior;
use motiongen::nn::Adam;
use motiongen::training::{train_gan_resumed, TrainLog, TrainLogRow, TRAIN_LOG_HEADER};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

/// Output directory precedence: `--out` flag, then the environment
/// variable, then the config. The directory is created.
fn resolve_out(flag: Option<&Path>, configured: &str) -> Result<PathBuf> {
    let dir = match flag {
        Some(p) => p.to_path_buf(),
        None => match std::env::var_os(OUT_DIR_ENV) {
            Some(v) => PathBuf::from(v),
            None => PathBuf::from(configured),
        },
    };
    std::fs::create_dir_all(&dir)
        .map_err(|e| Error::io(e, format!("creating output dir {}", dir.display())))?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)
        .map_err(|e| Error::io(e, format!("writing {}", path.display())))
}

fn write_manifest(dir: &Path, command: &str, body: serde_json::Value) -> Result<()> {
    let path = dir.join(format!("{command}.manifest.json"));
    let mut root = serde_json::json!({ "command": command });
    root.as_object_mut()
        .unwrap()
        .extend(body.as_object().cloned().unwrap_or_default());
    let text = serde_json::to_string_pretty(&root)
        .map_err(|e| Error::data(e.to_string()))?;
    write_text(&path, &(text + "\n"))
}

pub fn synth_data(
    common: &ConfigArgs,
    seed: Option<u64>,
    samples_per_class: Option<usize>,
) -> Result<()> {
    let (mut cfg, hash) = RunConfig::load(&common.config)?;
    if let Some(s) = seed {
        cfg.synth.seed = s;
    }
    if let Some(n) = samples_per_class {
        cfg.synth.samples_per_class = n;
    }
    cfg.validate()?;
    let out = resolve_out(common.out.as_deref(), &cfg.output_dir)?;
    let (data, _topo) = synthesize(&cfg.synth)?;
    let path = out.join("dataset.mseq");
    save_dataset(&path, &data)?;
    println!("wrote {} ({} sequences)", path.display(), data.len());
    let pools = data.class_pools();
    for (c, pool) in pools.iter().enumerate() {
        println!("  {}: {}", data.class_names[c], pool.len());
    }
    write_manifest(
        &out,
        "synth-data",
        serde_json::json!({
            "config_hash": hash,
            "seed": cfg.synth.seed,
            "samples_per_class": cfg.synth.samples_per_class,
            "outputs": [path.display().to_string()],
        }),
    )
}

/// Derives the critic checkpoint path from a generator checkpoint path by
/// swapping the `gen` file-stem prefix for `critic`.
fn critic_path_for(gen_path: &Path) -> Result<PathBuf> {
    let name = gen_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::config("resume: checkpoint path has no file name"))?;
    if !name.starts_with("gen") {
        return Err(Error::config(format!(
            "resume: expected a generator checkpoint named gen*.ckpt, got {name}"
        )));
    }
    Ok(gen_path.with_file_name(name.replacen("gen", "critic", 1)))
}

pub fn train_gan(
    common: &ConfigArgs,
    dataset: &Path,
    iterations: Option<usize>,
    seed: Option<u64>,
    resume: Option<&Path>,
    checkpoint_every: usize,
) -> Result<()> {
    let (mut cfg, hash) = RunConfig::load(&common.config)?;
    if let Some(n) = iterations {
        cfg.training.iterations = n;
    }
    if let Some(s) = seed {
        cfg.training.seed = s;
    }
    let out = resolve_out(common.out.as_deref(), &cfg.output_dir)?;
    let data = load_dataset(dataset)?;
    let prior = GpPrior::new(&cfg.gp)?;

    // fresh start or resume from checkpoints
    let mut adam_g = Adam::new(cfg.training.learning_rate, cfg.training.beta1, cfg.training.beta2);
    let mut adam_d = Adam::new(cfg.training.learning_rate, cfg.training.beta1, cfg.training.beta2);
    let mut start_iteration = 0usize;
    let mut rows: Vec<TrainLogRow> = Vec::new();
    let (mut gen, mut disc) = match resume {
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.training.seed);
            let gen = GeneratorState::init(&cfg.generator, &mut rng)?;
            let disc =
                DiscriminatorState::init(&cfg.discriminator, &cfg.topology(), &mut rng)?;
            (gen, disc)
        }
        Some(gen_path) => {
            let gen_ckpt = Checkpoint::load(gen_path)?;
            let critic_ckpt = Checkpoint::load(critic_path_for(gen_path)?)?;
            let (gen, prior_cfg) = load_generator(&gen_ckpt)?;
            let disc = load_critic(&critic_ckpt)?;
            if gen.cfg != cfg.generator || disc.cfg != cfg.discriminator {
                return Err(Error::config(
                    "resume: checkpoint model configuration differs from the run config",
                ));
            }
            if prior_cfg != cfg.gp {
                return Err(Error::config(
                    "resume: checkpoint latent prior differs from the run config",
                ));
            }
            if let Some((t, m, v)) = gen_ckpt.optimizer_state() {
                adam_g.restore(t, m, v);
            }
            if let Some((t, m, v)) = critic_ckpt.optimizer_state() {
                adam_d.restore(t, m, v);
            }
            start_iteration = gen_ckpt.header.iteration as usize;
            if start_iteration >= cfg.training.iterations {
                return Err(Error::config(format!(
                    "resume: checkpoint is already at iteration {start_iteration} of {}",
                    cfg.training.iterations
                )));
            }
            // continue the existing log when present, numbering intact
            let log_path = out.join("train_log.csv");
            if let Ok(text) = std::fs::read_to_string(&log_path) {
                rows = TrainLog::parse_csv(&text)?.rows;
                rows.retain(|r| r.iter <= start_iteration);
            }
            // a resumed leg must not replay the original sample stream
            cfg.training.seed = cfg.training.seed.wrapping_add(start_iteration as u64);
            (gen, disc)
        }
    };

    let log_path = out.join("train_log.csv");
    let gen_path = out.join("gen.ckpt");
    let critic_path = out.join("critic.ckpt");
    let effective_seed = cfg.training.seed;
    let topo = cfg.topology();

    {
        let out = out.clone();
        let hash = hash.clone();
        let topo = topo.clone();
        let prior_cfg = cfg.gp.clone();
        let mut observer = |row: &TrainLogRow,
                            g: &GeneratorState,
                            d: &DiscriminatorState|
         -> Result<()> {
            println!(
                "iter {:>6}  d_loss {:>12.4e}  g_loss {:>12.4e}  gap {:>12.4e}  epoch {:.2}",
                row.iter, row.d_loss, row.g_loss, row.gap, row.epoch
            );
            if checkpoint_every > 0 && row.iter.is_multiple_of(checkpoint_every) {
                checkpoint_generator(g, &prior_cfg, row.iter as u64, &hash, None)?
                    .save(out.join(format!("gen-{}.ckpt", row.iter)))?;
                checkpoint_critic(d, &topo, row.iter as u64, &hash, None)?
                    .save(out.join(format!("critic-{}.ckpt", row.iter)))?;
            }
            Ok(())
        };
        let log = train_gan_resumed(
            &mut gen,
            &mut disc,
            &data,
            &prior,
            &cfg.training,
            &mut adam_g,
            &mut adam_d,
            start_iteration,
            Some(&mut observer),
        )?;
        rows.extend(log.rows);
    }

    let full_log = TrainLog { rows };
    write_text(&log_path, &full_log.to_csv())?;
    let final_iter = full_log.rows.last().map(|r| r.iter).unwrap_or(0) as u64;
    checkpoint_generator(&gen, &cfg.gp, final_iter, &hash, Some(&adam_g))?
        .save(&gen_path)?;
    checkpoint_critic(&disc, &topo, final_iter, &hash, Some(&adam_d))?
        .save(&critic_path)?;
    println!(
        "trained to iteration {final_iter}; wrote {}, {}, {}",
        gen_path.display(),
        critic_path.display(),
        log_path.display()
    );
    write_manifest(
        &out,
        "train-gan",
        serde_json::json!({
            "config_hash": hash,
            "seed": effective_seed,
            "start_iteration": start_iteration,
            "final_iteration": final_iter,
            "inputs": [dataset.display().to_string()],
            "outputs": [
                gen_path.display().to_string(),
                critic_path.display().to_string(),
                log_path.display().to_string(),
            ],
        }),
    )
}

pub fn train_recognizer(
    common: &ConfigArgs,
    dataset: &Path,
    holdout: usize,
    single_person: bool,
    seed: Option<u64>,
) -> Result<()> {
    if holdout < 2 {
        return Err(Error::config(
            "holdout must be at least 2 (every Nth sample goes to validation)",
        ));
    }
    let (mut cfg, hash) = RunConfig::load(&common.config)?;
    if let Some(s) = seed {
        cfg.recognizer.seed = s;
    }
    let out = resolve_out(common.out.as_deref(), &cfg.output_dir)?;
    let mut data = load_dataset(dataset)?;
    let mut model_cfg = cfg.discriminator.clone();
    if single_person {
        data = person_sliced_dataset(&data);
        model_cfg.persons = 1;
    }
    let topo = cfg.topology();
    let mut rec = RecognizerState::init(
        &model_cfg,
        &topo,
        &mut ChaCha8Rng::seed_from_u64(cfg.recognizer.seed),
    )?;
    let (train, val) = data.split_holdout(holdout);
    let report = run_recognizer(&mut rec, &train, Some(&val).filter(|v| !v.sequences.is_empty()), &cfg.recognizer)?;

    let stem = if single_person {
        "recognizer_person"
    } else {
        "recognizer"
    };
    let ckpt_path = out.join(format!("{stem}.ckpt"));
    checkpoint_recognizer(&rec, &topo, cfg.recognizer.epochs as u64, &hash)?
        .save(&ckpt_path)?;
    let report_path = out.join(format!("{stem}_report.json"));
    let report_json = serde_json::json!({
        "config_hash": hash,
        "single_person": single_person,
        "train_accuracy": report.train_accuracy,
        "val_accuracy": report.val_accuracy,
        "final_loss": report.epochs.last().map(|e| e.loss),
        "epochs": report.epochs.len(),
    });
    write_text(
        &report_path,
        &(serde_json::to_string_pretty(&report_json)
            .map_err(|e| Error::data(e.to_string()))?
            + "\n"),
    )?;
    println!(
        "recognizer trained: train accuracy {:.3}, val accuracy {}; wrote {}",
        report.train_accuracy,
        report
            .val_accuracy
            .map(|a| format!("{a:.3}"))
            .unwrap_or_else(|| "n/a".into()),
        ckpt_path.display()
    );
    write_manifest(
        &out,
        if single_person {
            "train-recognizer-person"
        } else {
            "train-recognizer"
        },
        serde_json::json!({
            "config_hash": hash,
            "seed": cfg.recognizer.seed,
            "holdout": holdout,
            "single_person": single_person,
            "inputs": [dataset.display().to_string()],
            "outputs": [
                ckpt_path.display().to_string(),
                report_path.display().to_string(),
            ],
        }),
    )
}

pub fn generate(
    checkpoint: &Path,
    label: usize,
    count: usize,
    seed: u64,
    out: Option<&Path>,
    json: bool,
) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let (gen, prior_cfg) = load_generator(&ckpt)?;
    if label >= gen.cfg.class_count {
        return Err(Error::config(format!(
            "label {label} out of range: the checkpoint knows {} classes",
            gen.cfg.class_count
        )));
    }
    if count == 0 {
        return Err(Error::config("count must be positive"));
    }
    let out_dir = match out {
        Some(p) => {
            std::fs::create_dir_all(p)
                .map_err(|e| Error::io(e, format!("creating output dir {}", p.display())))?;
            p.to_path_buf()
        }
        None => checkpoint
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    let prior = GpPrior::new(&prior_cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sequences = Vec::with_capacity(count);
    for _ in 0..count {
        let z = sample_latents(
            &prior,
            1,
            gen.cfg.persons,
            gen.cfg.shared_latent,
            &mut rng,
        );
        let z0 = z.index_axis(ndarray::Axis(0), 0).to_owned();
        sequences.push(gen.generate(&z0, label)?);
    }
    let data = LabeledDataset {
        sequences,
        labels: vec![label; count],
        class_count: gen.cfg.class_count,
        class_names: (0..gen.cfg.class_count)
            .map(|c| format!("class_{c}"))
            .collect(),
    };
    let mseq_path = out_dir.join("motions.mseq");
    save_dataset(&mseq_path, &data)?;
    println!("wrote {} ({count} sequences, label {label})", mseq_path.display());
    let mut outputs = vec![mseq_path.display().to_string()];
    if json {
        let json_path = out_dir.join("motions.json");
        export_dataset_json(&json_path, &data)?;
        println!("wrote {}", json_path.display());
        outputs.push(json_path.display().to_string());
    }
    write_manifest(
        &out_dir,
        "generate",
        serde_json::json!({
            "config_hash": ckpt.header.config_hash,
            "checkpoint_iteration": ckpt.header.iteration,
            "label": label,
            "count": count,
            "seed": seed,
            "inputs": [checkpoint.display().to_string()],
            "outputs": outputs,
        }),
    )
}

pub fn evaluate(
    common: &ConfigArgs,
    generator: &Path,
    recognizer: &Path,
    person_recognizer: Option<&Path>,
    dataset: &Path,
) -> Result<()> {
    let (cfg, hash) = RunConfig::load(&common.config)?;
    let out = resolve_out(common.out.as_deref(), &cfg.output_dir)?;
    let data = load_dataset(dataset)?;
    let gen_ckpt = Checkpoint::load(generator)?;
    let (gen, prior_cfg) = load_generator(&gen_ckpt)?;
    let rec = load_recognizer(&Checkpoint::load(recognizer)?)?;
    let person_rec = match person_recognizer {
        Some(p) => Some(load_recognizer(&Checkpoint::load(p)?)?),
        None => None,
    };
    let persons = data.sequences.first().map(|s| s.persons()).unwrap_or(0);
    if persons > 1 && person_rec.is_none() {
        return Err(Error::config(
            "multi-person dataset: the person-aggregated distance needs a \
             single-person recognizer; pass --person-recognizer",
        ));
    }
    let prior = GpPrior::new(&prior_cfg)?;
    let report = run_evaluation(
        &gen,
        &prior,
        &rec,
        person_rec.as_ref(),
        &data,
        &cfg.evaluation,
    )?;

    let mut body = serde_json::to_value(&report).map_err(|e| Error::data(e.to_string()))?;
    let obj = body.as_object_mut().unwrap();
    obj.insert("config_hash".into(), serde_json::json!(hash));
    obj.insert(
        "generator_iteration".into(),
        serde_json::json!(gen_ckpt.header.iteration),
    );
    let metrics_path = out.join("metrics.json");
    write_text(
        &metrics_path,
        &(serde_json::to_string_pretty(&body).map_err(|e| Error::data(e.to_string()))? + "\n"),
    )?;
    println!(
        "distance (whole) {:.4}  distance (class mean) {:.4}  label accuracy {:.3}",
        report.fid_whole, report.fid_mean, report.label_accuracy
    );
    if let Some(fp) = report.fid_person_whole {
        println!("distance (person-aggregated) {fp:.4}");
    }
    println!("wrote {}", metrics_path.display());
    write_manifest(
        &out,
        "evaluate",
        serde_json::json!({
            "config_hash": hash,
            "inputs": [
                generator.display().to_string(),
                recognizer.display().to_string(),
                dataset.display().to_string(),
            ],
            "outputs": [metrics_path.display().to_string()],
        }),
    )
}

pub fn plot(input: &Path, out: &Path) -> Result<()> {
    let ext = input
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    let text = std::fs::read_to_string(input)
        .map_err(|e| Error::io(e, format!("reading {}", input.display())))?;
    let svg = match ext.as_str() {
        "csv" => {
            if !text.starts_with(TRAIN_LOG_HEADER) {
                return Err(Error::data(format!(
                    "{} is not a training log", input.display()
                )));
            }
            let log = TrainLog::parse_csv(&text)?;
            if log.rows.is_empty() {
                return Err(Error::data("training log has no rows to plot"));
            }
            svg::loss_curves(&log)
        }
        "json" => {
            let v: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| Error::data(format!("{}: {e}", input.display())))?;
            svg::metric_bars(&v)?
        }
        other => {
            return Err(Error::config(format!(
                "plot: unsupported input extension {other:?}; expected .csv or .json"
            )))
        }
    };
    write_text(out, &svg)?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn export_json(input: &Path, out: &Path) -> Result<()> {
    let data = load_dataset(input)?;
    export_dataset_json(out, &data)?;
    println!(
        "wrote {} ({} sequences)",
        out.display(),
        data.len()
    );
    Ok(())
}
