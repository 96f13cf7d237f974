//! Per-class metrics, confusion matrices, and the four usage scenarios.
//!
//! Scenarios differ in what the caller knows about an input:
//! 1. a fabric image only; the output is a front label grid;
//! 2. a fabric image, complete labels from a model trained on all yarns;
//! 3. a fabric image of known yarn, complete labels from that yarn's model;
//! 4. the true front labels of known yarn.

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{
    default_complete_map, default_front_map, default_front_mj_map, grid_to_color_image, load_grid, save_grid,
    LabelMap, LabelSpace, StitchGrid, YarnKind, YarnType,
};
use crate::models::{GenerationBundle, ParameterStore};
use crate::synthgen::{Dataset, Split};

/// Metrics of one label class. Counts are grid cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Cells whose true label is this class.
    pub count: u64,
    /// Cells predicted as this class.
    pub predicted: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<u8>,
    pub space: LabelSpace,
    pub samples: usize,
    pub classes: Vec<ClassMetrics>,
    /// Mean F1 over classes present in the truth.
    pub macro_f1: f64,
    /// F1 weighted by true cell counts.
    pub weighted_f1: f64,
    /// `confusion[t][p]` counts cells of truth `t` predicted as `p`.
    pub confusion: Vec<Vec<u64>>,
}

fn check_pairs(preds: &[StitchGrid], truths: &[StitchGrid]) -> Result<LabelSpace> {
    if preds.len() != truths.len() {
        return Err(Error::Eval(format!("{} predictions for {} truths", preds.len(), truths.len())));
    }
    let first = truths.first().ok_or_else(|| Error::Eval("no grids to evaluate".into()))?;
    let space = first.space();
    if let Some(g) = preds.iter().chain(truths).find(|g| g.space() != space) {
        return Err(Error::Eval(format!("mixed label spaces: {} and {}", space, g.space())));
    }
    Ok(space)
}

/// K×K count matrix, `[truth][prediction]`.
pub fn confusion(preds: &[StitchGrid], truths: &[StitchGrid]) -> Result<Vec<Vec<u64>>> {
    let k = check_pairs(preds, truths)?.k();
    let mut m = vec![vec![0u64; k]; k];
    for (p, t) in preds.iter().zip(truths) {
        for (&a, &b) in p.cells().iter().zip(t.cells()) {
            m[b as usize][a as usize] += 1;
        }
    }
    Ok(m)
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Builds the full report from a confusion matrix.
pub fn report_from_confusion(space: LabelSpace, matrix: Vec<Vec<u64>>, samples: usize) -> EvalReport {
    let k = matrix.len();
    let classes: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = matrix[c][c];
            let count: u64 = matrix[c].iter().sum();
            let predicted: u64 = matrix.iter().map(|row| row[c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, count);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                index: c,
                name: None,
                count,
                predicted,
                precision,
                recall,
                f1,
            }
        })
        .collect();
    let present: Vec<&ClassMetrics> = classes.iter().filter(|c| c.count > 0).collect();
    let total: u64 = present.iter().map(|c| c.count).sum();
    let macro_f1 = if present.is_empty() {
        0.0
    } else {
        present.iter().map(|c| c.f1).sum::<f64>() / present.len() as f64
    };
    let weighted_f1 = if total == 0 {
        0.0
    } else {
        present.iter().map(|c| c.f1 * c.count as f64).sum::<f64>() / total as f64
    };
    EvalReport {
        scenario: None,
        space,
        samples,
        classes,
        macro_f1,
        weighted_f1,
        confusion: matrix,
    }
}

/// Per-class precision, recall and F1 with macro and weighted summaries.
pub fn per_class_f1(preds: &[StitchGrid], truths: &[StitchGrid]) -> Result<EvalReport> {
    let space = check_pairs(preds, truths)?;
    Ok(report_from_confusion(space, confusion(preds, truths)?, truths.len()))
}

impl EvalReport {
    /// Attaches label names from `map`.
    pub fn with_names(mut self, map: &LabelMap) -> Self {
        for c in &mut self.classes {
            c.name = map.name(c.index).map(str::to_string);
        }
        self
    }

    /// Total number of evaluated cells.
    pub fn cells(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Confusion matrix as CSV with a `truth\pred` corner cell.
    pub fn write_confusion_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let label = |i: usize| self.classes.get(i).and_then(|c| c.name.clone()).unwrap_or_else(|| i.to_string());
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["truth\\pred".to_string()];
        header.extend((0..self.confusion.len()).map(label));
        w.write_record(&header)?;
        for (t, row) in self.confusion.iter().enumerate() {
            let mut rec = vec![label(t)];
            rec.extend(row.iter().map(u64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One item to run through a scenario. Truth fields are optional.
#[derive(Clone, Debug)]
pub struct ScenarioInput {
    pub id: String,
    pub yarn: Option<YarnType>,
    pub real: Option<RgbImage>,
    pub rendering: Option<RgbImage>,
    pub front: Option<StitchGrid>,
    pub complete: Option<StitchGrid>,
}

impl ScenarioInput {
    pub fn from_record(r: crate::synthgen::SampleRecord) -> Self {
        ScenarioInput {
            id: r.meta.id,
            yarn: Some(r.meta.yarn),
            real: Some(r.real),
            rendering: Some(r.rendering),
            front: Some(r.front),
            complete: Some(r.complete),
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ScenarioCheckpoints<'a> {
    pub generation: Option<&'a GenerationBundle>,
    pub inference: Option<&'a ParameterStore>,
}

#[derive(Clone, Debug)]
pub struct ScenarioOptions {
    /// Yarn kind of every input; required by scenarios 3 and 4.
    pub yarn: Option<YarnKind>,
    /// Where visualizations, predicted grids and the report go.
    pub out_dir: Option<PathBuf>,
    pub cell_px: u32,
    pub batch: usize,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        ScenarioOptions {
            yarn: None,
            out_dir: None,
            cell_px: 8,
            batch: 16,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScenarioPrediction {
    pub id: String,
    /// Refiner output (scenarios 1–3).
    pub refined: Option<RgbImage>,
    /// Predicted front grid, or the given one in scenario 4.
    pub front: StitchGrid,
    pub complete: Option<StitchGrid>,
}

#[derive(Clone, Debug)]
pub struct ScenarioOutput {
    pub scenario: u8,
    pub predictions: Vec<ScenarioPrediction>,
    /// Present when every input carries the relevant truth.
    pub report: Option<EvalReport>,
}

fn require<T>(v: Option<T>, what: &str, scenario: u8) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("scenario {scenario} requires {what}")))
}

/// Runs scenario `n` on `inputs`.
pub fn run_scenario(
    n: u8,
    inputs: &[ScenarioInput],
    checkpoints: ScenarioCheckpoints<'_>,
    options: &ScenarioOptions,
) -> Result<ScenarioOutput> {
    if !(1..=4).contains(&n) {
        return Err(Error::Config(format!("scenario must be 1–4, got {n}")));
    }
    let generation = if n <= 3 {
        Some(require(checkpoints.generation, "a generation checkpoint", n)?)
    } else {
        None
    };
    let inference = if n >= 2 {
        Some(require(checkpoints.inference, "an inference checkpoint", n)?)
    } else {
        None
    };
    if n >= 3 {
        let yarn = require(options.yarn, "a yarn type", n)?;
        if let Some(bad) = inputs.iter().find(|i| i.yarn.is_some_and(|y| y.kind() != yarn)) {
            return Err(Error::Eval(format!("input {} is not {yarn} fabric", bad.id)));
        }
    }
    let batch = options.batch.max(1);
    let mut predictions = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(batch) {
        let (refined, fronts): (Vec<Option<RgbImage>>, Vec<StitchGrid>) = match generation {
            Some(gen) => {
                let reals = chunk
                    .iter()
                    .map(|i| i.real.as_ref().ok_or_else(|| Error::Config(format!("input {} has no image", i.id))))
                    .collect::<Result<Vec<_>>>()?;
                gen.predict(&reals)?.into_iter().map(|(r, f)| (Some(r), f)).unzip()
            }
            None => chunk
                .iter()
                .map(|i| {
                    let f = i.front.clone().ok_or_else(|| {
                        Error::Config(format!("scenario 4 input {} has no front grid", i.id))
                    })?;
                    Ok((None, f))
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .unzip(),
        };
        let completes: Vec<Option<StitchGrid>> = match inference {
            Some(store) => store
                .predict_complete(&fronts.iter().collect::<Vec<_>>())?
                .into_iter()
                .map(Some)
                .collect(),
            None => vec![None; fronts.len()],
        };
        for (((input, refined), front), complete) in chunk.iter().zip(refined).zip(fronts).zip(completes) {
            predictions.push(ScenarioPrediction {
                id: input.id.clone(),
                refined,
                front,
                complete,
            });
        }
    }
    let report = scenario_report(n, inputs, &predictions)?;
    let out = ScenarioOutput {
        scenario: n,
        predictions,
        report,
    };
    if let Some(dir) = &options.out_dir {
        write_scenario(&out, inputs, dir, options)?;
    }
    Ok(out)
}

fn scenario_report(n: u8, inputs: &[ScenarioInput], preds: &[ScenarioPrediction]) -> Result<Option<EvalReport>> {
    if inputs.is_empty() {
        return Ok(None);
    }
    let (p, t): (Vec<StitchGrid>, Option<Vec<StitchGrid>>) = if n == 1 {
        (
            preds.iter().map(|p| p.front.clone()).collect(),
            inputs.iter().map(|i| i.front.clone()).collect(),
        )
    } else {
        (
            preds.iter().filter_map(|p| p.complete.clone()).collect(),
            inputs.iter().map(|i| i.complete.clone()).collect(),
        )
    };
    let Some(t) = t else { return Ok(None) };
    let mut report = per_class_f1(&p, &t)?;
    report.scenario = Some(n);
    let map = if n == 1 { default_front_map() } else { default_complete_map() };
    Ok(Some(report.with_names(&map)))
}

fn write_scenario(out: &ScenarioOutput, inputs: &[ScenarioInput], dir: &Path, options: &ScenarioOptions) -> Result<()> {
    fs::create_dir_all(dir)?;
    let complete_map = default_complete_map();
    let px = options.cell_px;
    for (p, input) in out.predictions.iter().zip(inputs) {
        let mj = input.yarn.map(|y| y.kind()).or(options.yarn) == Some(YarnKind::Mj);
        let front_map = if mj { default_front_mj_map() } else { default_front_map() };
        let id = &p.id;
        let file = |stem: &str, ext: &str| dir.join(format!("{id}_{stem}.{ext}"));
        if let Some(r) = &p.refined {
            r.save(file("rendering_pred", "png"))?;
        }
        if let Some(r) = &input.rendering {
            r.save(file("rendering_true", "png"))?;
        }
        if out.scenario != 4 {
            save_grid(&p.front, file("front_pred", "csv"))?;
            grid_to_color_image(&p.front, &front_map, px)?.save(file("front_pred", "png"))?;
        }
        if let Some(f) = &input.front {
            grid_to_color_image(f, &front_map, px)?.save(file("front_true", "png"))?;
        }
        if let Some(c) = &p.complete {
            save_grid(c, file("complete_pred", "csv"))?;
            grid_to_color_image(c, &complete_map, px)?.save(file("complete_pred", "png"))?;
        }
        if out.scenario >= 2 {
            if let Some(c) = &input.complete {
                grid_to_color_image(c, &complete_map, px)?.save(file("complete_true", "png"))?;
            }
        }
    }
    if let Some(report) = &out.report {
        report.write_json(dir.join("report.json"))?;
        report.write_confusion_csv(dir.join("confusion.csv"))?;
    }
    Ok(())
}

/// Scenario inputs from a dataset split, optionally limited to one yarn kind.
pub fn inputs_from_dataset(ds: &Dataset, split: Split, yarn: Option<YarnKind>) -> Result<Vec<ScenarioInput>> {
    Ok(ds.load_split(split, yarn)?.into_iter().map(ScenarioInput::from_record).collect())
}

/// Scenario inputs from a path: a dataset directory (its test split), or a
/// directory of `<id>.png` images and/or `<id>.csv` front grids.
pub fn inputs_from_path(path: &Path, yarn: Option<YarnKind>) -> Result<Vec<ScenarioInput>> {
    if path.join("manifest.json").is_file() {
        return inputs_from_dataset(&Dataset::open(path)?, Split::Test, yarn);
    }
    let front_map = default_front_map();
    let mut items: std::collections::BTreeMap<String, ScenarioInput> = Default::default();
    let entries = fs::read_dir(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    for entry in entries {
        let p = entry?.path();
        let (Some(stem), Some(ext)) = (p.file_stem().and_then(|s| s.to_str()), p.extension().and_then(|s| s.to_str()))
        else {
            continue;
        };
        let item = || ScenarioInput {
            id: stem.to_string(),
            yarn: None,
            real: None,
            rendering: None,
            front: None,
            complete: None,
        };
        match ext {
            "png" => items.entry(stem.to_string()).or_insert_with(item).real = Some(image::open(&p)?.to_rgb8()),
            "csv" => {
                items.entry(stem.to_string()).or_insert_with(item).front = Some(load_grid(&p, &front_map)?)
            }
            _ => {}
        }
    }
    if items.is_empty() {
        return Err(Error::Config(format!("no .png or .csv inputs in {}", path.display())));
    }
    Ok(items.into_values().collect())
}

/// Loads the prediction grids of `map`'s space from `pred_dir` and scores
/// them against `truth_dir`.
///
/// Predictions are `<id>_front_pred.csv` or `<id>_complete_pred.csv` files.
/// Truths are looked up as `samples/<id>/<space>.csv` (a dataset directory),
/// then `<id>_<space>_true.csv`, then `<id>.csv`.
pub fn evaluate_dirs(pred_dir: &Path, truth_dir: &Path, map: &LabelMap) -> Result<EvalReport> {
    let space = map.space().to_string();
    let suffix = format!("_{space}_pred.csv");
    let mut ids: Vec<String> = fs::read_dir(pred_dir)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", pred_dir.display())))?
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter_map(|n| n.strip_suffix(&suffix).map(str::to_string))
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(Error::Eval(format!("no *{suffix} files in {}", pred_dir.display())));
    }
    let mut preds = Vec::with_capacity(ids.len());
    let mut truths = Vec::with_capacity(ids.len());
    for id in &ids {
        preds.push(load_grid(pred_dir.join(format!("{id}{suffix}")), map)?);
        let candidates = [
            truth_dir.join("samples").join(id).join(format!("{space}.csv")),
            truth_dir.join(format!("{id}_{space}_true.csv")),
            truth_dir.join(format!("{id}.csv")),
        ];
        let path = candidates
            .iter()
            .find(|p| p.is_file())
            .ok_or_else(|| Error::Eval(format!("no truth grid for {id} under {}", truth_dir.display())))?;
        truths.push(load_grid(path, map)?);
    }
    Ok(per_class_f1(&preds, &truths)?.with_names(map))
}
