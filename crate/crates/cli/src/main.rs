//! `cemkit`: generate synthetic data, label, train, evaluate and rescore.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numerical
//! failure, 1 anything else (for example an unwritable output directory).

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use cemkit::cem::{
    build_examples, evaluate, rescore_corpus, train, CemConfig, CemModel, EvalError, RescoreScore,
    Scorer, Variant,
};
use cemkit::corpus::{load_dataset, save_dataset};
use cemkit::datagen::{gen_corpus, Split};
use cemkit::error::{CemError, DataError, TensorError};
use cemkit::AlignmentLabels;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use manifest::{input, write_atomic, write_json, RunManifest};

#[derive(Parser)]
#[command(
    name = "cemkit",
    version,
    about = "Confidence estimation for recognition hypotheses"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic train/test corpus.
    GenData(GenDataArgs),
    /// Align every hypothesis against its reference and write the labels.
    Label(LabelArgs),
    /// Train a confidence model.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or injected oracle confidences) on the top hypotheses.
    Eval(EvalArgs),
    /// Rescore n-best lists by confidence and report corpus WERs.
    Rescore(RescoreArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the data seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct LabelArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    variant: Option<Variant>,
    /// Overrides the training seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Required unless --oracle is given.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Must match the checkpoint's variant; selects the heads in oracle mode.
    #[arg(long)]
    variant: Option<Variant>,
    /// Use the true labels as confidences.
    #[arg(long)]
    oracle: bool,
}

#[derive(Args)]
struct RescoreArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    score: RescoreScore,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    oracle: bool,
}

/// An error with its exit code.
struct Fail {
    code: u8,
    err: anyhow::Error,
}

impl Fail {
    fn usage(err: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 2,
            err: err.into(),
        }
    }

    fn io(err: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 1,
            err: err.into(),
        }
    }
}

fn is_numeric(e: &CemError) -> bool {
    matches!(
        e,
        CemError::NonFiniteLoss { .. }
            | CemError::NonFiniteScore(_)
            | CemError::Tensor(TensorError::NonFinite { .. })
    )
}

impl From<CemError> for Fail {
    fn from(e: CemError) -> Self {
        let code = if is_numeric(&e) { 3 } else { 2 };
        Self {
            code,
            err: e.into(),
        }
    }
}

impl From<DataError> for Fail {
    fn from(e: DataError) -> Self {
        Fail::usage(e)
    }
}

impl From<EvalError> for Fail {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Cem(c) => c.into(),
            EvalError::Metrics(m) => Fail::usage(m),
        }
    }
}

type Outcome = Result<(), Fail>;

fn load_config(path: Option<&Path>) -> Result<CemConfig, Fail> {
    match path {
        Some(p) => CemConfig::load(p).map_err(Fail::from),
        None => Ok(CemConfig::default()),
    }
}

fn prepare_out(dir: &Path) -> Outcome {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(Fail::io)
}

fn load(path: &Path) -> Result<Vec<cemkit::Utterance>, Fail> {
    let utts = load_dataset(path)
        .with_context(|| format!("loading {}", path.display()))
        .map_err(Fail::usage)?;
    if utts.is_empty() {
        return Err(Fail::usage(anyhow!(
            "{} holds no utterances",
            path.display()
        )));
    }
    Ok(utts)
}

fn config_json<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("config serializes")
}

fn manifest(
    command: &str,
    config: serde_json::Value,
    seeds: serde_json::Value,
    inputs: &[&Path],
    outputs: Vec<PathBuf>,
) -> Result<RunManifest, Fail> {
    Ok(RunManifest {
        command: command.into(),
        toolkit_version: env!("CARGO_PKG_VERSION").into(),
        config,
        seeds,
        inputs: inputs
            .iter()
            .map(|p| input(p))
            .collect::<anyhow::Result<_>>()
            .map_err(Fail::usage)?,
        outputs,
    })
}

fn gen_data(args: GenDataArgs) -> Outcome {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.data.channel.seed = seed;
    }
    let inputs: Vec<&Path> = args.config.as_deref().into_iter().collect();
    prepare_out(&args.out)?;
    let train_path = args.out.join("train.jsonl");
    let test_path = args.out.join("test.jsonl");
    manifest(
        "gen-data",
        config_json(&cfg.data),
        json!({ "data": cfg.data.channel.seed }),
        &inputs,
        vec![train_path.clone(), test_path.clone()],
    )?
    .write(&args.out)
    .map_err(Fail::io)?;

    let d = &cfg.data;
    for (path, split, n) in [
        (&train_path, Split::Train, d.n_train),
        (&test_path, Split::Test, d.n_test),
    ] {
        let utts = gen_corpus(&d.channel, split, n)?;
        save_dataset(path, &utts, d.inline_acoustic).map_err(Fail::io)?;
    }
    println!(
        "{}",
        json!({ "train": train_path, "test": test_path, "n_train": d.n_train, "n_test": d.n_test })
    );
    Ok(())
}

#[derive(Serialize)]
struct LabelRecord<'a> {
    utterance_id: &'a str,
    beam_rank: usize,
    #[serde(flatten)]
    labels: &'a AlignmentLabels,
}

fn label(args: LabelArgs) -> Outcome {
    let utts = load(&args.dataset)?;
    prepare_out(&args.out)?;
    let path = args.out.join("labels.jsonl");
    manifest(
        "label",
        json!({}),
        json!({}),
        &[&args.dataset],
        vec![path.clone()],
    )?
    .write(&args.out)
    .map_err(Fail::io)?;
    let mut text = String::new();
    let mut records = 0;
    for u in &utts {
        for h in &u.hypotheses {
            let labels = u.labels(h);
            let rec = LabelRecord {
                utterance_id: &u.utterance_id,
                beam_rank: h.beam_rank,
                labels: &labels,
            };
            text.push_str(&serde_json::to_string(&rec).expect("labels serialize"));
            text.push('\n');
            records += 1;
        }
    }
    write_atomic(&path, text.as_bytes()).map_err(Fail::io)?;
    println!("{}", json!({ "labels": path, "records": records }));
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Outcome {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(v) = args.variant {
        cfg.model.variant = v;
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    let utts = load(&args.dataset)?;
    let width = utts[0].acoustic.cols();
    if width != cfg.model.d_acoustic {
        return Err(Fail::usage(anyhow!(
            "dataset frames have width {width}, model.d_acoustic is {}",
            cfg.model.d_acoustic
        )));
    }

    prepare_out(&args.out)?;
    let ckpt = args.out.join("model.ckpt");
    let log_path = args.out.join("train_log.jsonl");
    let mut inputs = vec![args.dataset.as_path()];
    inputs.extend(args.config.as_deref());
    manifest(
        "train",
        json!({ "model": cfg.model, "train": cfg.train }),
        json!({ "train": cfg.train.seed }),
        &inputs,
        vec![ckpt.clone(), log_path.clone()],
    )?
    .write(&args.out)
    .map_err(Fail::io)?;

    // The last `val_fraction` of the utterances is held out for early stopping.
    let n_val = (utts.len() as f64 * cfg.train.val_fraction).round() as usize;
    let n_val = n_val.min(utts.len() - 1);
    let (train_utts, val_utts) = utts.split_at(utts.len() - n_val);
    let train_set = build_examples(train_utts, cfg.train.all_hypotheses)?;
    let val_set = build_examples(val_utts, cfg.train.all_hypotheses)?;
    let outcome = train(&cfg.model, &cfg.train, &train_set, &val_set)?;

    let mut log = String::new();
    for line in &outcome.log {
        log.push_str(&serde_json::to_string(line).expect("log serializes"));
        log.push('\n');
    }
    write_atomic(&log_path, log.as_bytes()).map_err(Fail::io)?;
    outcome.model.save(&ckpt).map_err(Fail::io)?;
    println!(
        "{}",
        json!({
            "checkpoint": ckpt,
            "log": log_path,
            "variant": cfg.model.variant,
            "epochs_run": outcome.log.len(),
            "best_epoch": outcome.best_epoch,
            "stopped_early": outcome.stopped_early,
        })
    );
    Ok(())
}

/// The model (if any) and the variant a scoring command works with.
fn resolve_scorer(
    checkpoint: Option<&Path>,
    variant: Option<Variant>,
    oracle: bool,
) -> Result<(Option<CemModel>, Variant), Fail> {
    let model = match checkpoint {
        Some(p) => {
            Some(CemModel::load(p).map_err(|e| Fail::usage(anyhow!("{}: {e}", p.display())))?)
        }
        None if oracle => None,
        None => {
            return Err(Fail::usage(anyhow!(
                "--checkpoint is required without --oracle"
            )))
        }
    };
    let variant = match (&model, variant) {
        (Some(m), Some(v)) if m.variant() != v => {
            return Err(Fail::usage(anyhow!(
                "checkpoint holds a {} model but --variant {v} was requested",
                m.variant()
            )))
        }
        (Some(m), _) => m.variant(),
        (None, v) => v.unwrap_or(Variant::WUD),
    };
    Ok((model, variant))
}

fn scoring_inputs<'a>(dataset: &'a Path, checkpoint: Option<&'a Path>) -> Vec<&'a Path> {
    let mut v = vec![dataset];
    v.extend(checkpoint);
    v
}

fn eval_cmd(args: EvalArgs) -> Outcome {
    let (model, variant) = resolve_scorer(args.checkpoint.as_deref(), args.variant, args.oracle)?;
    let utts = load(&args.dataset)?;
    prepare_out(&args.out)?;
    let path = args.out.join("report.json");
    manifest(
        "eval",
        json!({ "variant": variant, "oracle": args.oracle }),
        json!({}),
        &scoring_inputs(&args.dataset, args.checkpoint.as_deref()),
        vec![path.clone()],
    )?
    .write(&args.out)
    .map_err(Fail::io)?;
    let scorer = match (&model, args.oracle) {
        (Some(m), false) => Scorer::Model(m),
        _ => Scorer::Oracle(variant),
    };
    let report = evaluate(scorer, &utts)?;
    write_json(&path, &report).map_err(Fail::io)?;
    let mut summary = json!({
        "report": path,
        "variant": variant,
        "utterance_auc_roc": report.utterance.auc_roc,
        "utterance_auc_pr": report.utterance.auc_pr,
        "rmse": report.utterance.rmse_vs_one_minus_wer,
    });
    if let Some(w) = &report.word {
        summary["word_nce"] = json!(w.nce);
        summary["word_auc_roc"] = json!(w.auc_roc);
        summary["word_auc_pr_negative"] = json!(w.auc_pr_negative);
    }
    println!("{summary}");
    Ok(())
}

fn rescore_cmd(args: RescoreArgs) -> Outcome {
    let (model, variant) = resolve_scorer(args.checkpoint.as_deref(), args.variant, args.oracle)?;
    if !args.score.available(variant) {
        return Err(Fail::usage(anyhow!(
            "score `{}` is not available for variant {variant}",
            args.score
        )));
    }
    let utts = load(&args.dataset)?;
    prepare_out(&args.out)?;
    let path = args.out.join("rescore.json");
    manifest(
        "rescore",
        json!({ "variant": variant, "score": args.score, "oracle": args.oracle }),
        json!({}),
        &scoring_inputs(&args.dataset, args.checkpoint.as_deref()),
        vec![path.clone()],
    )?
    .write(&args.out)
    .map_err(Fail::io)?;
    let scorer = match (&model, args.oracle) {
        (Some(m), false) => Scorer::Model(m),
        _ => Scorer::Oracle(variant),
    };
    let report = rescore_corpus(scorer, &utts, args.score)?;
    write_json(&path, &report).map_err(Fail::io)?;
    println!(
        "{}",
        json!({
            "rescore": path,
            "score": args.score,
            "baseline_wer": report.baseline_wer,
            "rescored_wer": report.rescored_wer,
            "oracle_wer": report.oracle_wer,
            "changed": report.changed,
        })
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Label(a) => label(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Rescore(a) => rescore_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
