//! `invknit`: dataset building, training, prediction and evaluation.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors. Every
//! successful command prints one JSON summary line on standard output.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use invknit::eval::{self, ScenarioCheckpoints, ScenarioOptions};
use invknit::labels::{load_label_map, YarnKind};
use invknit::models::{load_checkpoint, read_container, GenerationBundle};
use invknit::synthgen::{build_dataset, DatasetConfig};
use invknit::train::{self, Phase, TrainConfig};

const SEED_ENV: &str = "INVKNIT_SEED";

#[derive(Parser)]
#[command(name = "invknit", version, about = "Fabric images to machine-knittable stitch label grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic dataset operations.
    Dataset {
        #[command(subcommand)]
        action: DatasetAction,
    },
    /// Train the generation or inference phase.
    Train {
        #[arg(long, value_enum)]
        phase: PhaseArg,
        /// JSON training config.
        #[arg(long)]
        config: PathBuf,
        /// Run directory for config, metrics and checkpoints.
        #[arg(long)]
        checkpoint_dir: PathBuf,
    },
    /// Run one of the four usage scenarios.
    Predict {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        scenario: u8,
        /// Dataset directory, or a directory of <id>.png images / <id>.csv front grids.
        #[arg(long)]
        input: PathBuf,
        /// Generation checkpoint (scenarios 1–3).
        #[arg(long)]
        gen_ckpt: Option<PathBuf>,
        /// Inference checkpoint (scenarios 2–4).
        #[arg(long)]
        infer_ckpt: Option<PathBuf>,
        #[arg(long, value_enum)]
        yarn: Option<YarnArg>,
        #[arg(long, value_enum)]
        input_source: Option<SourceArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted grids against ground truth.
    Eval {
        /// Directory of <id>_<space>_pred.csv files.
        #[arg(long)]
        pred: PathBuf,
        /// Dataset directory or directory of truth grids.
        #[arg(long)]
        truth: PathBuf,
        /// Label map CSV selecting the label space.
        #[arg(long)]
        map: PathBuf,
        /// Report JSON path; the confusion CSV is written beside it.
        #[arg(long)]
        report: PathBuf,
    },
    /// Print a checkpoint's configuration and parameter count.
    Inspect {
        #[arg(long)]
        ckpt: PathBuf,
    },
}

#[derive(Subcommand)]
enum DatasetAction {
    Build {
        /// JSON dataset config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PhaseArg {
    Generation,
    Inference,
}

#[derive(Clone, Copy, ValueEnum)]
enum YarnArg {
    Sj,
    Mj,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SourceArg {
    Frompred,
    Fromtrue,
}

/// A flag combination clap cannot express.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => Ok(Some(s.trim().parse().with_context(|| format!("{SEED_ENV}={s:?} is not an integer"))?)),
        Err(_) => Ok(None),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| invknit::Error::Config(format!("{}: {e}", path.display())).into())
}

fn dataset_build(config: Option<&Path>, out: &Path) -> Result<Value> {
    let mut cfg: DatasetConfig = match config {
        Some(p) => read_json(p)?,
        None => DatasetConfig::default(),
    };
    if let Some(s) = env_seed()? {
        cfg.seed = s;
    }
    let m = build_dataset(&cfg, out)?;
    Ok(json!({
        "command": "dataset build",
        "out": out,
        "seed": cfg.seed,
        "samples": m.samples.len(),
        "counts": m.counts,
        "split_sizes": m.split_sizes,
        "front_fk_fraction": m.front_fk_fraction,
    }))
}

fn run_train(phase: PhaseArg, config: &Path, dir: &Path) -> Result<Value> {
    let mut cfg: TrainConfig = read_json(config)?;
    cfg.phase = match phase {
        PhaseArg::Generation => Phase::Generation,
        PhaseArg::Inference => Phase::Inference,
    };
    if let Some(s) = env_seed()? {
        cfg.seed = s;
    }
    let s = train::train(&cfg, dir)?;
    Ok(json!({
        "command": "train",
        "phase": s.phase,
        "run_dir": s.run_dir,
        "steps": s.steps,
        "start_step": s.start_step,
        "checkpoint": s.checkpoint,
        "best": s.best,
        "best_val_macro_f1": s.best_val_macro_f1,
        "last": s.last,
    }))
}

#[allow(clippy::too_many_arguments)]
fn predict(
    scenario: u8,
    input: &Path,
    gen_ckpt: Option<&Path>,
    infer_ckpt: Option<&Path>,
    yarn: Option<YarnArg>,
    source: Option<SourceArg>,
    out: &Path,
) -> Result<Value> {
    if scenario <= 3 && gen_ckpt.is_none() {
        return Err(usage(format!("scenario {scenario} requires --gen-ckpt")));
    }
    if scenario >= 2 && infer_ckpt.is_none() {
        return Err(usage(format!("scenario {scenario} requires --infer-ckpt")));
    }
    if scenario >= 3 && yarn.is_none() {
        return Err(usage(format!("scenario {scenario} requires --yarn")));
    }
    let expected = if scenario == 4 { SourceArg::Fromtrue } else { SourceArg::Frompred };
    if source.is_some_and(|s| s != expected) {
        return Err(usage(format!(
            "--input-source must be {} for scenario {scenario}",
            if scenario == 4 { "fromtrue" } else { "frompred" }
        )));
    }
    let yarn = yarn.map(|y| match y {
        YarnArg::Sj => YarnKind::Sj,
        YarnArg::Mj => YarnKind::Mj,
    });
    let gen = gen_ckpt.filter(|_| scenario <= 3).map(GenerationBundle::load).transpose()?;
    let inf = infer_ckpt.filter(|_| scenario >= 2).map(load_checkpoint).transpose()?;
    let inputs = eval::inputs_from_path(input, yarn)?;
    let options = ScenarioOptions {
        yarn,
        out_dir: Some(out.to_path_buf()),
        ..ScenarioOptions::default()
    };
    let checkpoints = ScenarioCheckpoints {
        generation: gen.as_ref(),
        inference: inf.as_ref(),
    };
    let result = eval::run_scenario(scenario, &inputs, checkpoints, &options)?;
    Ok(json!({
        "command": "predict",
        "scenario": scenario,
        "out": out,
        "predictions": result.predictions.len(),
        "macro_f1": result.report.as_ref().map(|r| r.macro_f1),
        "weighted_f1": result.report.as_ref().map(|r| r.weighted_f1),
    }))
}

fn run_eval(pred: &Path, truth: &Path, map: &Path, report: &Path) -> Result<Value> {
    let map = load_label_map(map)?;
    let r = eval::evaluate_dirs(pred, truth, &map)?;
    if let Some(dir) = report.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    r.write_json(report)?;
    let confusion = report.with_extension("confusion.csv");
    r.write_confusion_csv(&confusion)?;
    Ok(json!({
        "command": "eval",
        "space": r.space,
        "samples": r.samples,
        "macro_f1": r.macro_f1,
        "weighted_f1": r.weighted_f1,
        "report": report,
        "confusion": confusion,
    }))
}

fn inspect(path: &Path) -> Result<Value> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let (header, _) = read_container(&bytes)?;
    let header: Value = serde_json::from_str(&header)?;
    if header.get("bundle").is_some() {
        let b = GenerationBundle::load(path)?;
        let models: Vec<Value> = [Some(&b.refiner), Some(&b.img2prog), b.discriminator.as_ref()]
            .into_iter()
            .flatten()
            .map(|s| json!({"kind": s.kind(), "parameters": s.count_parameters(), "config": s.config()}))
            .collect();
        let total: usize = models.iter().filter_map(|m| m["parameters"].as_u64()).sum::<u64>() as usize;
        return Ok(json!({"command": "inspect", "kind": "generation", "parameters": total, "models": models}));
    }
    let s = load_checkpoint(path)?;
    Ok(json!({
        "command": "inspect",
        "kind": s.kind(),
        "parameters": s.count_parameters(),
        "config": s.config(),
    }))
}

fn run(cli: Cli) -> Result<Value> {
    match cli.command {
        Command::Dataset {
            action: DatasetAction::Build { config, out },
        } => dataset_build(config.as_deref(), &out),
        Command::Train {
            phase,
            config,
            checkpoint_dir,
        } => run_train(phase, &config, &checkpoint_dir),
        Command::Predict {
            scenario,
            input,
            gen_ckpt,
            infer_ckpt,
            yarn,
            input_source,
            out,
        } => predict(
            scenario,
            &input,
            gen_ckpt.as_deref(),
            infer_ckpt.as_deref(),
            yarn,
            input_source,
            &out,
        ),
        Command::Eval {
            pred,
            truth,
            map,
            report,
        } => run_eval(&pred, &truth, &map, &report),
        Command::Inspect { ckpt } => inspect(&ckpt),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            let module = e
                .chain()
                .find_map(|c| c.downcast_ref::<invknit::Error>().map(invknit::Error::module))
                .or_else(|| e.chain().any(|c| c.is::<std::io::Error>()).then_some("io"))
                .unwrap_or("cli");
            eprintln!("error [{module}]: {e:#}");
            ExitCode::from(2)
        }
    }
}
