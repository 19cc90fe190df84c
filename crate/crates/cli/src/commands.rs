use std::fs;
use std::path::{Path, PathBuf};

use dkdfmh::data::{featurize, ingest_iemocap, split, split_hash, synth_corpus, SplitSpec};
use dkdfmh::distill::Variant;
use dkdfmh::dsp::{read_cache, write_cache_to, FeatureSegment, Split};
use dkdfmh::metrics::{run_ablation, run_beta_sweep, ConfusionMatrix, ExperimentConfig};
use dkdfmh::model::{load_checkpoint, write_checkpoint, CLASS_NAMES};
use dkdfmh::train::{evaluate, train_student, train_teacher, FeatureData, RunOptions};
use serde_json::json;

use crate::config::Config;
use crate::manifest::ManifestWriter;
use crate::{AblationArgs, Common, EvalArgs, FeaturesArgs, Role, SplitArg, TrainArgs, TrainOverrides};

pub const TRAIN_CACHE: &str = "train.dkdf";
pub const TEST_CACHE: &str = "test.dkdf";

fn run_err(context: &str) -> impl Fn(std::io::Error) -> crate::Failure + '_ {
    move |e| crate::Failure::Run(format!("{context}: {e}"))
}

fn prepare_out(out: &Path) -> Result<(), crate::Failure> {
    fs::create_dir_all(out).map_err(run_err(&format!("cannot create {}", out.display())))
}

fn require(path: &Path, what: &str) -> Result<(), crate::Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(crate::Failure::Usage(format!("{what} {} does not exist", path.display())))
    }
}

fn load_config(path: Option<&PathBuf>) -> Result<Config, crate::Failure> {
    Config::load(path.map(PathBuf::as_path))
}

fn apply(cfg: &mut Config, o: &TrainOverrides) {
    if let Some(v) = o.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = o.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = o.lr {
        cfg.train.lr0 = v;
    }
}

fn class_counts(segments: &[FeatureSegment]) -> Vec<usize> {
    let mut counts = vec![0; CLASS_NAMES.len()];
    for s in segments {
        counts[s.label] += 1;
    }
    counts
}

fn describe(name: &str, segments: &[FeatureSegment]) -> String {
    let counts = class_counts(segments);
    let per_class: Vec<String> = CLASS_NAMES.iter().zip(&counts).map(|(n, c)| format!("{n} {c}")).collect();
    format!("{name}: {} segments ({})", segments.len(), per_class.join(", "))
}

pub fn features(args: FeaturesArgs) -> Result<(), crate::Failure> {
    let mut cfg = load_config(args.common.config.as_ref())?;
    if let Some(v) = args.n_per_class {
        cfg.data.n_per_class = v;
    }
    if let Some(v) = args.seed {
        cfg.data.seed = v;
    }
    if let Some(v) = args.train_fraction {
        cfg.data.train_fraction = v;
    }
    cfg.validate()?;
    let corpus = match &args.in_dir {
        Some(dir) => {
            require(dir, "input directory")?;
            let corpus = ingest_iemocap(dir, &cfg.data.iemocap)?;
            if corpus.warnings > 0 {
                log::warn!("{} labels with unrecognised emotion tokens were skipped", corpus.warnings);
            }
            corpus
        }
        None => synth_corpus(cfg.data.n_per_class, cfg.data.seed)?,
    };
    let (train_set, test_set) =
        split(&corpus, &SplitSpec { train_fraction: cfg.data.train_fraction, seed: cfg.data.seed })?;
    let train = featurize(&train_set, Split::Train, &cfg.fbank)?;
    let test = featurize(&test_set, Split::Test, &cfg.fbank)?;

    prepare_out(&args.common.out)?;
    let mut manifest = ManifestWriter::new("features", &cfg, &args.common.out);
    if let Some(dir) = &args.in_dir {
        log::info!("ingested {} utterances from {}", corpus.len(), dir.display());
    }
    for (name, segments) in [(TRAIN_CACHE, &train), (TEST_CACHE, &test)] {
        let mut bytes = Vec::new();
        write_cache_to(&mut bytes, segments)?;
        manifest.artifact(name, &bytes)?;
    }
    println!("{}", describe("train", &train));
    println!("{}", describe("test", &test));
    let hash = split_hash(train_set.ids(), test_set.ids());
    println!("split {hash}");
    manifest.finish(json!({
        "source": format!("{:?}", corpus.source).to_lowercase(),
        "split_hash": hash,
        "utterances": { "train": train_set.len(), "test": test_set.len() },
        "segments": { "train": class_counts(&train), "test": class_counts(&test) },
    }))?;
    Ok(())
}

fn load_features(cache: &Path, cfg: &Config, manifest: Option<&mut ManifestWriter>) -> Result<FeatureData, crate::Failure> {
    require(cache, "feature directory")?;
    let (train_path, test_path) = (cache.join(TRAIN_CACHE), cache.join(TEST_CACHE));
    require(&train_path, "feature cache")?;
    require(&test_path, "feature cache")?;
    if let Some(m) = manifest {
        m.input(&train_path)?;
        m.input(&test_path)?;
    }
    Ok(FeatureData::new(read_cache(&train_path)?, read_cache(&test_path)?, cfg.data.normalize)?)
}

fn metrics_json(split: &str, cm: &ConfusionMatrix) -> Result<serde_json::Value, crate::Failure> {
    Ok(json!({
        "split": split,
        "wa": cm.wa()?,
        "ua": cm.ua()?,
        "recalls": cm.recalls()?,
        "confusion": cm,
    }))
}

fn pretty(value: &serde_json::Value) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(value).expect("json serializes");
    text.push('\n');
    text.into_bytes()
}

pub fn train(args: TrainArgs) -> Result<(), crate::Failure> {
    let mut cfg = load_config(args.common.config.as_ref())?;
    apply(&mut cfg, &args.overrides);
    let d = &mut cfg.train.distill;
    if let Some(v) = args.variant {
        d.variant = v;
    }
    if let Some(v) = args.temperature {
        d.temperature = v;
    }
    if let Some(v) = args.alpha {
        d.alpha = v;
    }
    if let Some(v) = args.beta {
        d.beta = v;
    }
    if let Some(v) = args.init_seed {
        cfg.train.seed = v;
    }
    if let Some(v) = args.shuffle_seed {
        cfg.train.shuffle_seed = v;
    }
    let variant = cfg.train.distill.variant;
    match args.role {
        Role::Teacher if args.variant.is_some_and(|v| v != Variant::CeOnly) => {
            return Err(crate::Failure::Usage("a teacher is trained with cross-entropy only".into()));
        }
        Role::Teacher => cfg.train.distill.variant = Variant::CeOnly,
        Role::Student if variant.needs_teacher() && args.teacher_ckpt.is_none() => {
            return Err(crate::Failure::Usage(format!("variant {} needs --teacher-ckpt", variant.name())));
        }
        Role::Student => {}
    }
    cfg.validate()?;

    prepare_out(&args.common.out)?;
    let mut manifest = ManifestWriter::new(
        match args.role {
            Role::Teacher => "train teacher",
            Role::Student => "train student",
        },
        &cfg,
        &args.common.out,
    );
    let data = load_features(&args.cache, &cfg, Some(&mut manifest))?;
    let opts = RunOptions { checkpoint: None, evaluate_train: true };
    let run = match &args.teacher_ckpt {
        Some(path) if args.role == Role::Student => {
            require(path, "teacher checkpoint")?;
            manifest.input(path)?;
            let teacher = load_checkpoint(path)?;
            train_student(&data, &teacher, &cfg.model, &cfg.train, &opts)?
        }
        _ => train_teacher(&data, &cfg.model, &cfg.train, &opts)?,
    };

    let mut ckpt = Vec::new();
    write_checkpoint(&mut ckpt, &run.params)?;
    manifest.artifact("model.dkdm", &ckpt)?;
    manifest.artifact("runlog.csv", run.log.to_csv().as_bytes())?;
    let metrics = metrics_json("test", &run.test)?;
    manifest.artifact("metrics.json", &pretty(&metrics))?;

    let last = run.log.last().expect("at least one epoch");
    let train_wa = run.train.as_ref().map(|cm| cm.wa()).transpose()?;
    println!(
        "{} epochs, {} steps: loss {:.4} (ce {:.4}, tckd {:.4}, nckd {:.4})",
        run.log.records.len(),
        run.steps,
        last.total,
        last.ce,
        last.tckd,
        last.nckd
    );
    if let Some(wa) = train_wa {
        println!("train WA {wa:.4}");
    }
    println!("test WA {:.4} UA {:.4}", run.test.wa()?, run.test.ua()?);
    manifest.finish(json!({
        "split_hash": data.split_hash,
        "steps": run.steps,
        "train_wa": train_wa,
        "test": metrics,
    }))?;
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<(), crate::Failure> {
    let cfg = load_config(args.config.as_ref())?;
    require(&args.ckpt, "checkpoint")?;
    let net = load_checkpoint(&args.ckpt)?;
    let data = load_features(&args.cache, &cfg, None)?;
    let (name, segments) = match args.split {
        SplitArg::Train => ("train", &data.train),
        SplitArg::Test => ("test", &data.test),
    };
    let cm = evaluate(&net, segments, cfg.train.eval_batch)?;
    let metrics = metrics_json(name, &cm)?;
    println!("{name} WA {:.4} UA {:.4}", cm.wa()?, cm.ua()?);
    print!("{}", cm.to_table());
    if let Some(out) = &args.out {
        prepare_out(out)?;
        let mut manifest = ManifestWriter::new("eval", &cfg, out);
        manifest.input(&args.ckpt)?;
        manifest.input(&args.cache.join(TRAIN_CACHE))?;
        manifest.input(&args.cache.join(TEST_CACHE))?;
        manifest.artifact("metrics.json", &pretty(&metrics))?;
        manifest.artifact("confusion.txt", cm.to_table().as_bytes())?;
        manifest.finish(json!({ "split": name, "split_hash": data.split_hash }))?;
    }
    Ok(())
}

pub enum Experiment {
    Ablation,
    BetaSweep(Option<Vec<f64>>),
}

pub fn experiment(args: AblationArgs, kind: Experiment) -> Result<(), crate::Failure> {
    let AblationArgs { common: Common { config, out }, cache, seeds, overrides } = args;
    let mut cfg = load_config(config.as_ref())?;
    apply(&mut cfg, &overrides);
    if let Some(s) = seeds {
        cfg.experiment.seeds = s;
    }
    if let Experiment::BetaSweep(Some(b)) = &kind {
        cfg.experiment.betas = b.clone();
    }
    cfg.validate()?;
    prepare_out(&out)?;
    let stem = match kind {
        Experiment::Ablation => "ablation",
        Experiment::BetaSweep(_) => "beta_sweep",
    };
    let mut manifest = ManifestWriter::new(stem, &cfg, &out);
    let data = load_features(&cache, &cfg, Some(&mut manifest))?;
    let exp = ExperimentConfig { seeds: cfg.experiment.seeds.clone(), train: cfg.train, model: cfg.model.clone() };
    let (csv, json_text) = match kind {
        Experiment::Ablation => {
            let report = run_ablation(&data, &exp)?;
            (report.to_csv(), report.to_json())
        }
        Experiment::BetaSweep(_) => {
            let report = run_beta_sweep(&data, &cfg.experiment.betas, &exp)?;
            (report.to_csv(), report.to_json())
        }
    };
    manifest.artifact(&format!("{stem}.csv"), csv.as_bytes())?;
    manifest.artifact(&format!("{stem}.json"), (json_text + "\n").as_bytes())?;
    print!("{csv}");
    manifest.finish(json!({ "split_hash": data.split_hash }))?;
    Ok(())
}
