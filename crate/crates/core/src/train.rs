//! Optimization loops for both phases.
//!
//! Every step draws its batch from a generator seeded by `(seed, step)`, so a
//! run resumed from a checkpoint replays exactly the batches an uninterrupted
//! run would have seen. A run directory holds `config.json`, `metrics.jsonl`,
//! `ckpt-<step>.iknt` (with the optimizer state beside it in
//! `ckpt-<step>.opt.iknt`) and `best.iknt`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::per_class_f1;
use crate::labels::{load_grid, save_grid, StitchGrid, YarnKind, FRONT_K};
use crate::losses::{
    cross_entropy_node, grid_targets, least_squares_node, style_node, LossWeights, RandomConvExtractor,
};
use crate::models::{
    build_forward, grids_one_hot, images_to_tensor, is_trainable, load_checkpoint, read_container,
    save_checkpoint, write_container, GenerationBundle, ModelConfig, ModelKind, ParamSet, ParameterStore,
};
use crate::nn::{Grads, Graph, Tensor, Var};
use crate::syntax::{adjacent_pairs, syntax_penalty_node};
use crate::synthgen::{derive_seed, Dataset, SampleMeta, SampleRecord, Split};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Generation,
    Inference,
}

/// Which yarn kinds a run trains on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSelector {
    /// Both yarn kinds.
    #[default]
    Default,
    Sj,
    Mj,
}

impl DatasetSelector {
    pub fn yarn(self) -> Option<YarnKind> {
        match self {
            DatasetSelector::Default => None,
            DatasetSelector::Sj => Some(YarnKind::Sj),
            DatasetSelector::Mj => Some(YarnKind::Mj),
        }
    }
}

/// Front grids fed to an inference model: ground truth, or the generation
/// phase's predictions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputSource {
    Frompred,
    #[default]
    Fromtrue,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Architecture overrides; unset entries use the kind's defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverrides {
    pub refiner: Option<ModelConfig>,
    pub img2prog: Option<ModelConfig>,
    pub discriminator: Option<ModelConfig>,
    pub inference: Option<ModelConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub phase: Phase,
    /// Inference architecture; ignored by the generation phase.
    pub model: ModelKind,
    /// Dataset directory.
    pub data: PathBuf,
    pub dataset: DatasetSelector,
    pub input_source: InputSource,
    /// Generation checkpoint whose predictions feed a frompred run.
    pub gen_checkpoint: Option<PathBuf>,
    /// Already materialized frompred predictions (`<id>_front_pred.csv`).
    pub predictions: Option<PathBuf>,
    pub learning_rate: f64,
    pub decay_steps: u64,
    pub decay_rate: f64,
    pub max_iter: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub use_style: bool,
    pub use_image_discriminator: bool,
    pub use_syntax: bool,
    pub use_mil: bool,
    pub mil_radius: usize,
    /// Checkpoint whose parameters initialize the model (transfer).
    pub init_from: Option<PathBuf>,
    /// Steps between checkpoints; 0 keeps only the final one.
    pub checkpoint_every: u64,
    /// Steps between metric records.
    pub log_every: u64,
    /// Steps between validation passes; 0 validates only at the end.
    pub eval_every: u64,
    /// Caps the validation set size; 0 uses the whole split.
    pub eval_limit: usize,
    pub bn_momentum: f32,
    pub adam: AdamConfig,
    /// Adds elapsed seconds to each metric record. Off by default so that
    /// seeded runs produce identical metric files.
    pub record_wall_clock: bool,
    /// Continue from the newest checkpoint in the run directory, if any.
    pub resume: bool,
    pub models: ModelOverrides,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            phase: Phase::Inference,
            model: ModelKind::InferResidual,
            data: PathBuf::from("dataset"),
            dataset: DatasetSelector::Default,
            input_source: InputSource::Fromtrue,
            gen_checkpoint: None,
            predictions: None,
            learning_rate: 5e-4,
            decay_steps: 50_000,
            decay_rate: 0.3,
            max_iter: 2_000,
            batch_size: 8,
            seed: 0,
            weights: LossWeights::default(),
            use_style: true,
            use_image_discriminator: true,
            use_syntax: true,
            use_mil: false,
            mil_radius: 1,
            init_from: None,
            checkpoint_every: 1_000,
            log_every: 1,
            eval_every: 0,
            eval_limit: 0,
            bn_momentum: 0.9,
            adam: AdamConfig::default(),
            record_wall_clock: false,
            resume: true,
            models: ModelOverrides::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.max_iter < 1 {
            return bad("max_iter must be at least 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.decay_steps < 1 || !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return bad("decay_steps must be ≥ 1 and decay_rate in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return bad("bn_momentum must be in [0, 1)");
        }
        if self.log_every < 1 {
            return bad("log_every must be at least 1");
        }
        self.weights.validate()?;
        if self.phase == Phase::Inference {
            if !self.model.is_inference() {
                return Err(Error::Config(format!("{} is not an inference model", self.model)));
            }
            if self.input_source == InputSource::Frompred
                && self.gen_checkpoint.is_none()
                && self.predictions.is_none()
            {
                return bad("frompred requires gen_checkpoint or predictions");
            }
        }
        Ok(())
    }

    fn model_config(&self, kind: ModelKind) -> ModelConfig {
        let o = &self.models;
        let chosen = match kind {
            ModelKind::Refiner => o.refiner.clone(),
            ModelKind::Img2prog => o.img2prog.clone(),
            ModelKind::Discriminator => o.discriminator.clone(),
            _ => o.inference.clone().filter(|c| c.kind == kind),
        };
        chosen.unwrap_or_else(|| ModelConfig {
            seed: derive_seed(self.seed, &[kind as u64]),
            ..ModelConfig::default_for(kind)
        })
    }
}

impl TrainConfig {
    /// Refiner, img2prog and (when enabled) discriminator configurations. The
    /// default refiner centers its input on the dataset's channel mean.
    pub fn generation_models(&self, ds: &Dataset) -> (ModelConfig, ModelConfig, Option<ModelConfig>) {
        let mut refiner = self.model_config(ModelKind::Refiner);
        if self.models.refiner.is_none() {
            refiner.input_shift = ds.manifest().channel_mean.to_vec();
        }
        let disc = self
            .use_image_discriminator
            .then(|| self.model_config(ModelKind::Discriminator));
        (refiner, self.model_config(ModelKind::Img2prog), disc)
    }

    /// Configuration of the inference model this run trains.
    pub fn inference_model(&self) -> ModelConfig {
        self.model_config(self.model)
    }
}

/// Staircase decay: `learning_rate · decay_rate^⌊step / decay_steps⌋`.
pub fn lr_schedule(step: u64, config: &TrainConfig) -> f64 {
    config.learning_rate * config.decay_rate.powi((step / config.decay_steps) as i32)
}

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// Parameter updates completed.
    pub step: u64,
    pub lr: f64,
    pub losses: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_macro_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock: Option<f64>,
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Per-parameter adaptive moment estimation.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub t: u64,
    pub m: ParamSet<f32>,
    pub v: ParamSet<f32>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            t: 0,
            m: ParamSet::new(),
            v: ParamSet::new(),
        }
    }

    /// Applies one update to every parameter that has a gradient.
    pub fn step(&mut self, params: &mut ParamSet<f32>, grads: &ParamSet<f32>, lr: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (name, grad) in grads {
            let Some(p) = params.get_mut(name) else { continue };
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(grad.shape()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(grad.shape()));
            for (((w, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let g = g as f64;
                let mi = beta1 * *m as f64 + (1.0 - beta1) * g;
                let vi = beta2 * *v as f64 + (1.0 - beta2) * g * g;
                *m = mi as f32;
                *v = vi as f32;
                let update = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
                *w = (*w as f64 - update) as f32;
            }
        }
    }

    fn export(&self, prefix: &str, out: &mut ParamSet<f32>) {
        for (name, t) in &self.m {
            out.insert(format!("{prefix}m/{name}"), t.clone());
        }
        for (name, t) in &self.v {
            out.insert(format!("{prefix}v/{name}"), t.clone());
        }
    }

    fn import(config: AdamConfig, t: u64, prefix: &str, tensors: &ParamSet<f32>) -> Self {
        let mut a = Adam::new(config);
        a.t = t;
        for (key, tensor) in tensors {
            let Some(rest) = key.strip_prefix(prefix) else { continue };
            if let Some(name) = rest.strip_prefix("m/") {
                a.m.insert(name.to_string(), tensor.clone());
            } else if let Some(name) = rest.strip_prefix("v/") {
                a.v.insert(name.to_string(), tensor.clone());
            }
        }
        a
    }
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    step: u64,
    optimizers: BTreeMap<String, u64>,
}

fn save_optimizers(path: &Path, step: u64, opts: &[(&str, &Adam)]) -> Result<()> {
    let mut tensors = ParamSet::new();
    let mut optimizers = BTreeMap::new();
    for (name, a) in opts {
        a.export(&format!("{name}/"), &mut tensors);
        optimizers.insert(name.to_string(), a.t);
    }
    let header = serde_json::to_string(&OptimizerHeader { step, optimizers })?;
    let mut buf = Vec::new();
    write_container(&mut buf, &header, &tensors)?;
    fs::write(path, buf)?;
    Ok(())
}

fn load_optimizers(path: &Path, config: AdamConfig, names: &[&str]) -> Result<Vec<Adam>> {
    let (header, tensors) = read_container(&fs::read(path)?)?;
    let header: OptimizerHeader = serde_json::from_str(&header)
        .map_err(|e| Error::CheckpointFormat(format!("optimizer state header: {e}")))?;
    names
        .iter()
        .map(|n| {
            let t = *header
                .optimizers
                .get(*n)
                .ok_or_else(|| Error::CheckpointFormat(format!("optimizer state lacks {n}")))?;
            Ok(Adam::import(config, t, &format!("{n}/"), &tensors))
        })
        .collect()
}

/// Outcome of a training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSummary {
    pub phase: Phase,
    pub run_dir: PathBuf,
    /// Step the run started from (non-zero when resumed).
    pub start_step: u64,
    pub steps: u64,
    pub checkpoint: PathBuf,
    pub best: PathBuf,
    pub best_val_macro_f1: Option<f64>,
    pub last: Option<MetricsRecord>,
}

pub fn checkpoint_path(run_dir: &Path, step: u64) -> PathBuf {
    run_dir.join(format!("ckpt-{step}.iknt"))
}

fn optimizer_path(run_dir: &Path, step: u64) -> PathBuf {
    run_dir.join(format!("ckpt-{step}.opt.iknt"))
}

/// Newest step with both a checkpoint and its optimizer state.
pub fn latest_checkpoint(run_dir: &Path) -> Option<u64> {
    fs::read_dir(run_dir)
        .ok()?
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter_map(|n| n.strip_prefix("ckpt-")?.strip_suffix(".iknt")?.parse::<u64>().ok())
        .filter(|&s| optimizer_path(run_dir, s).is_file())
        .max()
}

/// Sample selection for one step.
fn batch_indices(seed: u64, step: u64, n: usize, batch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[step]));
    (0..batch).map(|_| rng.gen_range(0..n)).collect()
}

/// Trainable gradients of one forward, by parameter name.
fn collect_grads(grads: &Grads<f32>, vars: &BTreeMap<String, Var>) -> ParamSet<f32> {
    vars.iter()
        .filter(|(name, _)| is_trainable(name))
        .filter_map(|(name, &v)| Some((name.clone(), grads.get(v)?.clone())))
        .collect()
}

fn add_grads(into: &mut ParamSet<f32>, other: ParamSet<f32>) {
    for (name, g) in other {
        match into.get_mut(&name) {
            Some(t) => t.add_assign(&g),
            None => {
                into.insert(name, g);
            }
        }
    }
}

/// Book-keeping shared by both loops: metrics file, timing, best score.
struct RunLog {
    dir: PathBuf,
    file: fs::File,
    started: Instant,
    wall_clock: bool,
    best: Option<f64>,
    last: Option<MetricsRecord>,
}

impl RunLog {
    /// Opens the run directory. With `resume_from = Some(s)`, keeps the
    /// records up to step `s` and drops anything logged after it.
    fn open(dir: &Path, config: &TrainConfig, resume_from: Option<u64>) -> Result<RunLog> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.json"), serde_json::to_string_pretty(config)? + "\n")?;
        let path = dir.join("metrics.jsonl");
        // Surviving lines are copied verbatim so a resumed file matches an
        // uninterrupted one byte for byte.
        let mut kept: Vec<MetricsRecord> = Vec::new();
        let mut lines: Vec<String> = Vec::new();
        if let Some(s) = resume_from.filter(|_| path.is_file()) {
            for line in fs::read_to_string(&path)?.lines().filter(|l| !l.trim().is_empty()) {
                let r: MetricsRecord = serde_json::from_str(line)?;
                if r.step <= s {
                    kept.push(r);
                    lines.push(line.to_string());
                }
            }
        }
        let mut file = fs::File::create(&path)?;
        for line in &lines {
            writeln!(file, "{line}")?;
        }
        let best = kept.iter().filter_map(|r| r.val_macro_f1).reduce(f64::max);
        Ok(RunLog {
            dir: dir.to_path_buf(),
            file,
            started: Instant::now(),
            wall_clock: config.record_wall_clock,
            best,
            last: kept.last().cloned(),
        })
    }

    /// Appends a record; returns whether its validation score is a new best.
    fn record(&mut self, step: u64, lr: f64, losses: BTreeMap<String, f64>, val: Option<f64>) -> Result<bool> {
        if let Some((name, v)) = losses.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Config(format!("{name} loss became {v} at step {step}")));
        }
        let rec = MetricsRecord {
            step,
            lr,
            losses,
            val_macro_f1: val,
            wall_clock: self.wall_clock.then(|| self.started.elapsed().as_secs_f64()),
        };
        writeln!(self.file, "{}", serde_json::to_string(&rec)?)?;
        self.file.flush()?;
        self.last = Some(rec);
        let improved = match (val, self.best) {
            (Some(v), Some(b)) => v > b,
            (Some(_), None) => true,
            _ => false,
        };
        if improved {
            self.best = val;
        }
        Ok(improved)
    }

    fn summary(self, phase: Phase, start_step: u64, steps: u64) -> TrainSummary {
        TrainSummary {
            phase,
            checkpoint: checkpoint_path(&self.dir, steps),
            best: self.dir.join("best.iknt"),
            run_dir: self.dir,
            start_step,
            steps,
            best_val_macro_f1: self.best,
            last: self.last,
        }
    }
}

fn is_due(step: u64, every: u64, last: u64) -> bool {
    step == last || (every > 0 && step % every == 0)
}

fn open_dataset(config: &TrainConfig) -> Result<Dataset> {
    Dataset::open(&config.data)
        .map_err(|e| Error::Config(format!("cannot open dataset {}: {e}", config.data.display())))
}

/// Runs the configured phase on `config.data`.
pub fn train(config: &TrainConfig, run_dir: impl AsRef<Path>) -> Result<TrainSummary> {
    config.validate()?;
    let ds = open_dataset(config)?;
    match config.phase {
        Phase::Generation => train_generation(&ds, config, run_dir),
        Phase::Inference => train_inference(&ds, config, run_dir),
    }
}

fn split_samples<'a>(ds: &'a Dataset, config: &TrainConfig, split: Split) -> Vec<&'a SampleMeta> {
    let mut v = ds.samples(split, config.dataset.yarn());
    if split != Split::Train && config.eval_limit > 0 {
        v.truncate(config.eval_limit);
    }
    v
}

/// Writes the generation bundle's front prediction for every sample as
/// `<id>_front_pred.csv` under `out`. Returns the number written.
pub fn materialize_predictions(ds: &Dataset, bundle: &GenerationBundle, out: impl AsRef<Path>) -> Result<usize> {
    let out = out.as_ref();
    fs::create_dir_all(out)?;
    let metas = &ds.manifest().samples;
    for chunk in metas.chunks(16) {
        let records = chunk.iter().map(|m| ds.load(m)).collect::<Result<Vec<_>>>()?;
        let reals: Vec<_> = records.iter().map(|r| &r.real).collect();
        for (r, (_, front)) in records.iter().zip(bundle.predict(&reals)?) {
            save_grid(&front, out.join(format!("{}_front_pred.csv", r.meta.id)))?;
        }
    }
    Ok(metas.len())
}

/// Loads the input front grid of each record for the configured source.
fn input_fronts(records: &[SampleRecord], source: Option<&Path>, ds: &Dataset) -> Result<Vec<StitchGrid>> {
    match source {
        None => Ok(records.iter().map(|r| r.front.clone()).collect()),
        Some(dir) => records
            .iter()
            .map(|r| {
                let p = dir.join(format!("{}_front_pred.csv", r.meta.id));
                if !p.is_file() {
                    return Err(Error::Config(format!(
                        "missing frompred prediction for {} in {}",
                        r.meta.id,
                        dir.display()
                    )));
                }
                load_grid(p, ds.front_map())
            })
            .collect(),
    }
}

/// Supervised training of an inference model on (front, complete) pairs.
pub fn train_inference(ds: &Dataset, config: &TrainConfig, run_dir: impl AsRef<Path>) -> Result<TrainSummary> {
    config.validate()?;
    if config.phase != Phase::Inference {
        return Err(Error::Config("train_inference needs phase = inference".into()));
    }
    let run_dir = run_dir.as_ref();
    let train_meta = split_samples(ds, config, Split::Train);
    if train_meta.is_empty() {
        return Err(Error::Config("no training samples for the selected dataset".into()));
    }
    let load = |metas: &[&SampleMeta]| metas.iter().map(|m| ds.load(m)).collect::<Result<Vec<_>>>();
    let train_rec = load(&train_meta)?;
    let val_rec = load(&split_samples(ds, config, Split::Val))?;

    fs::create_dir_all(run_dir)?;
    let pred_dir = match config.input_source {
        InputSource::Fromtrue => None,
        InputSource::Frompred => Some(match (&config.predictions, &config.gen_checkpoint) {
            (Some(dir), _) => dir.clone(),
            (None, Some(ck)) => {
                let dir = run_dir.join("frompred");
                materialize_predictions(ds, &GenerationBundle::load(ck)?, &dir)?;
                dir
            }
            (None, None) => return Err(Error::Config("frompred requires a generation checkpoint".into())),
        }),
    };
    let train_in = input_fronts(&train_rec, pred_dir.as_deref(), ds)?;
    let val_in = input_fronts(&val_rec, pred_dir.as_deref(), ds)?;
    let val_truth: Vec<StitchGrid> = val_rec.iter().map(|r| r.complete.clone()).collect();

    let model_config = config.inference_model();
    let resume = if config.resume { latest_checkpoint(run_dir) } else { None };
    let (mut store, mut adam, start) = match resume {
        Some(s) => {
            let store = load_checkpoint(checkpoint_path(run_dir, s))?.expect_config(&model_config)?;
            let adam = load_optimizers(&optimizer_path(run_dir, s), config.adam, &["model"])?.remove(0);
            (store, adam, s)
        }
        None => {
            let store = match &config.init_from {
                Some(p) => {
                    let src = load_checkpoint(p)?.expect_kind(model_config.kind)?;
                    ParameterStore::from_parts(model_config.clone(), src.params().clone())?
                }
                None => ParameterStore::new(model_config.clone())?,
            };
            (store, Adam::new(config.adam), 0)
        }
    };
    let mut log = RunLog::open(run_dir, config, resume)?;
    let validate = |store: &ParameterStore| -> Result<Option<f64>> {
        if val_in.is_empty() {
            return Ok(None);
        }
        let preds = store.predict_complete(&val_in.iter().collect::<Vec<_>>())?;
        Ok(Some(per_class_f1(&preds, &val_truth)?.macro_f1))
    };
    if start == 0 && !run_dir.join("best.iknt").is_file() {
        save_checkpoint(&store, run_dir.join("best.iknt"))?;
    }
    let mil = config.use_mil.then_some(config.mil_radius);
    let k_in = model_config.in_channels;
    for step in start..config.max_iter {
        let idx = batch_indices(config.seed, step, train_rec.len(), config.batch_size);
        let inputs: Vec<&StitchGrid> = idx.iter().map(|&i| &train_in[i]).collect();
        let truths: Vec<&StitchGrid> = idx.iter().map(|&i| &train_rec[i].complete).collect();
        let x = grids_one_hot(&inputs, k_in)?;
        let targets = grid_targets(&truths);

        let mut g = Graph::<f32>::new();
        let xv = g.constant(x);
        let fwd = build_forward(&mut g, store.config(), store.params(), &[xv], true, true)?;
        let probs = g.softmax(fwd.output);
        let ce = cross_entropy_node(&mut g, probs, &targets, mil)?;
        let loss = g.value(ce).item() as f64;
        let grads = collect_grads(&g.backward(ce), &fwd.params);
        let lr = lr_schedule(step, config);
        adam.step(store.params_mut(), &grads, lr);
        store.update_running_stats(&fwd.stats, config.bn_momentum);

        let done = step + 1;
        let eval_now = is_due(done, config.eval_every, config.max_iter);
        if is_due(done, config.log_every, config.max_iter) || eval_now {
            let val = if eval_now { validate(&store)? } else { None };
            let name = if mil.is_some() { "mil_ce" } else { "ce" };
            if log.record(done, lr, BTreeMap::from([(name.to_string(), loss)]), val)? {
                save_checkpoint(&store, run_dir.join("best.iknt"))?;
            }
        }
        if is_due(done, config.checkpoint_every, config.max_iter) {
            save_checkpoint(&store, checkpoint_path(run_dir, done))?;
            save_optimizers(&optimizer_path(run_dir, done), done, &[("model", &adam)])?;
        }
    }
    if log.best.is_none() {
        save_checkpoint(&store, run_dir.join("best.iknt"))?;
    }
    Ok(log.summary(Phase::Inference, start, config.max_iter))
}

/// Alternating discriminator / generator training of refiner + img2prog.
pub fn train_generation(ds: &Dataset, config: &TrainConfig, run_dir: impl AsRef<Path>) -> Result<TrainSummary> {
    config.validate()?;
    if config.phase != Phase::Generation {
        return Err(Error::Config("train_generation needs phase = generation".into()));
    }
    let run_dir = run_dir.as_ref();
    let train_meta = split_samples(ds, config, Split::Train);
    if train_meta.is_empty() {
        return Err(Error::Config("no training samples for the selected dataset".into()));
    }
    let load = |metas: &[&SampleMeta]| metas.iter().map(|m| ds.load(m)).collect::<Result<Vec<_>>>();
    let train_rec = load(&train_meta)?;
    let val_rec = load(&split_samples(ds, config, Split::Val))?;

    let (refiner_cfg, img2prog_cfg, disc_cfg) = config.generation_models(ds);

    let names: Vec<&str> = if disc_cfg.is_some() {
        vec!["refiner", "img2prog", "discriminator"]
    } else {
        vec!["refiner", "img2prog"]
    };
    let resume = if config.resume { latest_checkpoint(run_dir) } else { None };
    let (mut bundle, mut opts, start) = match resume {
        Some(s) => {
            let b = GenerationBundle::load(checkpoint_path(run_dir, s))?;
            b.refiner.clone().expect_config(&refiner_cfg)?;
            b.img2prog.clone().expect_config(&img2prog_cfg)?;
            let opts = load_optimizers(&optimizer_path(run_dir, s), config.adam, &names)?;
            (b, opts, s)
        }
        None => {
            let b = match &config.init_from {
                Some(p) => {
                    let src = GenerationBundle::load(p)?;
                    GenerationBundle {
                        refiner: ParameterStore::from_parts(refiner_cfg.clone(), src.refiner.params().clone())?,
                        img2prog: ParameterStore::from_parts(img2prog_cfg.clone(), src.img2prog.params().clone())?,
                        discriminator: match (&disc_cfg, src.discriminator) {
                            (Some(c), Some(d)) => Some(ParameterStore::from_parts(c.clone(), d.params().clone())?),
                            (Some(c), None) => Some(ParameterStore::new(c.clone())?),
                            (None, _) => None,
                        },
                    }
                }
                None => GenerationBundle::new(refiner_cfg.clone(), img2prog_cfg.clone(), disc_cfg.clone())?,
            };
            (b, names.iter().map(|_| Adam::new(config.adam)).collect(), 0)
        }
    };
    let mut log = RunLog::open(run_dir, config, resume)?;
    let extractor = RandomConvExtractor::default();
    let transitions = ds.front_transitions();
    let w = &config.weights;
    let mil = config.use_mil.then_some(config.mil_radius);
    let val_truth: Vec<StitchGrid> = val_rec.iter().map(|r| r.front.clone()).collect();
    let validate = |b: &GenerationBundle| -> Result<Option<f64>> {
        if val_rec.is_empty() {
            return Ok(None);
        }
        let mut preds = Vec::with_capacity(val_rec.len());
        for chunk in val_rec.chunks(16) {
            let reals: Vec<_> = chunk.iter().map(|r| &r.real).collect();
            preds.extend(b.predict(&reals)?.into_iter().map(|(_, f)| f));
        }
        Ok(Some(per_class_f1(&preds, &val_truth)?.macro_f1))
    };
    if start == 0 && !run_dir.join("best.iknt").is_file() {
        bundle.save(run_dir.join("best.iknt"))?;
    }

    for step in start..config.max_iter {
        let idx = batch_indices(config.seed, step, train_rec.len(), config.batch_size);
        let batch: Vec<&SampleRecord> = idx.iter().map(|&i| &train_rec[i]).collect();
        let reals: Vec<_> = batch.iter().map(|r| &r.real).collect();
        let renders: Vec<_> = batch.iter().map(|r| &r.rendering).collect();
        let fronts: Vec<_> = batch.iter().map(|r| &r.front).collect();
        let cond = grids_one_hot(&fronts, FRONT_K)?;
        let rendered = images_to_tensor(&renders)?;
        let targets = grid_targets(&fronts);
        let lr = lr_schedule(step, config);
        let mut losses = BTreeMap::new();

        let mut g = Graph::<f32>::new();
        let x = g.constant(images_to_tensor(&reals)?);
        let rf = build_forward(&mut g, bundle.refiner.config(), bundle.refiner.params(), &[x], true, true)?;
        let ip = build_forward(&mut g, bundle.img2prog.config(), bundle.img2prog.params(), &[rf.output], true, true)?;
        let probs = g.softmax(ip.output);
        let ce = cross_entropy_node(&mut g, probs, &targets, mil)?;
        losses.insert("ce".to_string(), g.value(ce).item() as f64);
        let mut terms = vec![(ce, w.w_ce)];

        if let Some(disc) = bundle.discriminator.as_mut() {
            // Discriminator first, on the generator's current output held fixed.
            let fake = g.value(rf.output).clone();
            let mut gd = Graph::<f32>::new();
            let cond_v = gd.constant(cond.clone());
            let real_v = gd.constant(rendered.clone());
            let fake_v = gd.constant(fake);
            let dr = build_forward(&mut gd, disc.config(), disc.params(), &[real_v, cond_v], true, true)?;
            let df = build_forward(&mut gd, disc.config(), disc.params(), &[fake_v, cond_v], true, true)?;
            let lr_real = least_squares_node(&mut gd, dr.output, 1.0);
            let lr_fake = least_squares_node(&mut gd, df.output, 0.0);
            let d_loss = gd.weighted_sum(&[(lr_real, w.w_d), (lr_fake, w.w_d)])?;
            losses.insert("disc".to_string(), gd.value(d_loss).item() as f64);
            let dg = gd.backward(d_loss);
            let mut grads = collect_grads(&dg, &dr.params);
            add_grads(&mut grads, collect_grads(&dg, &df.params));
            opts[2].step(disc.params_mut(), &grads, lr);

            // Generator's adversarial term against the updated discriminator.
            let cond_g = g.constant(cond);
            let dg_out = build_forward(&mut g, disc.config(), disc.params(), &[rf.output, cond_g], false, false)?;
            let adv = least_squares_node(&mut g, dg_out.output, 1.0);
            losses.insert("adv".to_string(), g.value(adv).item() as f64);
            terms.push((adv, w.w_adv));
        }
        if config.use_style {
            let target = g.constant(rendered);
            let style = style_node(&mut g, rf.output, target, &extractor, &w.style_layers)?;
            losses.insert("style".to_string(), g.value(style).item() as f64);
            terms.push((style, w.w_style));
        }
        if config.use_syntax {
            // Normalized to the mean disallowed mass per adjacent pair.
            let scale = 1.0 / (adjacent_pairs(20, 20) * batch.len()) as f64;
            let syn = syntax_penalty_node(&mut g, probs, transitions, scale)?;
            losses.insert("syntax".to_string(), g.value(syn).item() as f64);
            terms.push((syn, w.w_syntax));
        }
        let total = g.weighted_sum(&terms)?;
        losses.insert("total".to_string(), g.value(total).item() as f64);
        let grads = g.backward(total);
        let (rg, ig) = (collect_grads(&grads, &rf.params), collect_grads(&grads, &ip.params));
        opts[0].step(bundle.refiner.params_mut(), &rg, lr);
        opts[1].step(bundle.img2prog.params_mut(), &ig, lr);
        bundle.refiner.update_running_stats(&rf.stats, config.bn_momentum);
        bundle.img2prog.update_running_stats(&ip.stats, config.bn_momentum);

        let done = step + 1;
        let eval_now = is_due(done, config.eval_every, config.max_iter);
        if is_due(done, config.log_every, config.max_iter) || eval_now {
            let val = if eval_now { validate(&bundle)? } else { None };
            if log.record(done, lr, losses, val)? {
                bundle.save(run_dir.join("best.iknt"))?;
            }
        }
        if is_due(done, config.checkpoint_every, config.max_iter) {
            bundle.save(checkpoint_path(run_dir, done))?;
            let pairs: Vec<(&str, &Adam)> = names.iter().copied().zip(opts.iter()).collect();
            save_optimizers(&optimizer_path(run_dir, done), done, &pairs)?;
        }
    }
    if log.best.is_none() {
        bundle.save(run_dir.join("best.iknt"))?;
    }
    Ok(log.summary(Phase::Generation, start, config.max_iter))
}
