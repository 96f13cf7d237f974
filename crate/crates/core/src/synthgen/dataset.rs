//! Dataset assembly on disk and loading it back.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, generate_with_map, render, simulate_real, DegradeParams, PatternFamily, RenderTileAtlas};
use crate::error::{Error, Result};
use crate::labels::{
    complete_to_front, default_complete_map, default_front_map, default_front_mj_map, load_grid, load_label_map,
    save_grid, LabelMap, LabelSpace, StitchGrid, YarnType, COMPLETE_K, FRONT_K,
};
use crate::syntax::{build_transitions, validate, TransitionMatrix};

pub const MANIFEST_FORMAT: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub seed: u64,
    /// Single-yarn sample count, spread round-robin over all ten families.
    pub sj: usize,
    /// Multi-yarn sample count, spread over the families that support it.
    pub mj: usize,
    /// Train/val/test fractions; must sum to 1.
    pub splits: [f64; 3],
    /// Seed of the tile atlas. Kept separate from `seed` so that datasets
    /// built with different seeds share one visual vocabulary.
    pub atlas_seed: u64,
    pub degrade: DegradeParams,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: 0,
            sj: 300,
            mj: 195,
            splits: [0.8, 0.1, 0.1],
            atlas_seed: 0,
            degrade: DegradeParams::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sj + self.mj == 0 {
            return Err(Error::Config("dataset needs at least one sample".into()));
        }
        if self.splits.iter().any(|&s| !(0.0..=1.0).contains(&s) || !s.is_finite()) {
            return Err(Error::Config(format!("split fractions out of range: {:?}", self.splits)));
        }
        let total: f64 = self.splits.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions sum to {total}, not 1")));
        }
        self.degrade.validate()
    }
}

/// Largest-remainder apportionment of `n` items; equal remainders favor the
/// later split.
pub fn split_counts(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: [usize; 3] = std::array::from_fn(|i| (exact[i] + 1e-9).floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - counts[a] as f64, exact[b] - counts[b] as f64);
        if (ra - rb).abs() < 1e-9 {
            b.cmp(&a)
        } else {
            rb.total_cmp(&ra)
        }
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub id: String,
    pub yarn: YarnType,
    pub family: PatternFamily,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelCount {
    pub index: usize,
    pub name: String,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub config: DatasetConfig,
    pub counts: BTreeMap<String, usize>,
    pub split_sizes: BTreeMap<String, usize>,
    pub families: BTreeMap<String, BTreeMap<String, usize>>,
    pub front_census: Vec<LabelCount>,
    pub complete_census: Vec<LabelCount>,
    pub front_fk_fraction: f64,
    /// Per-channel mean of the training split's pseudo-real images on [0, 1].
    pub channel_mean: [f32; 3],
    pub samples: Vec<SampleMeta>,
}

/// One dataset item.
#[derive(Clone, Debug)]
pub struct SampleRecord {
    pub meta: SampleMeta,
    pub split: Split,
    pub complete: StitchGrid,
    pub front: StitchGrid,
    pub rendering: RgbImage,
    pub real: RgbImage,
}

struct Generated {
    meta: SampleMeta,
    complete: StitchGrid,
    front: StitchGrid,
    rendering: RgbImage,
    real: RgbImage,
}

fn generate_samples(config: &DatasetConfig, complete_map: &LabelMap) -> Result<Vec<Generated>> {
    let atlas = RenderTileAtlas::new(LabelSpace::Front, config.atlas_seed);
    let mut out = Vec::with_capacity(config.sj + config.mj);
    for (tag, count) in [("sj", config.sj), ("mj", config.mj)] {
        let families = PatternFamily::for_yarn(if tag == "sj" { YarnType::SJ } else { YarnType::mj(2)? });
        for i in 0..count {
            let seed = derive_seed(config.seed, &[u64::from(tag == "mj"), i as u64]);
            let yarn = if tag == "sj" { YarnType::SJ } else { YarnType::mj(2 + (seed % 3) as u8)? };
            let family = families[i % families.len()];
            let complete = generate_with_map(family, yarn, seed, complete_map)?;
            let front = complete_to_front(&complete, complete_map)?;
            let rendering = render(&front, &atlas)?;
            let real = simulate_real(&rendering, derive_seed(seed, &[0xdead]), &config.degrade)?;
            out.push(Generated {
                meta: SampleMeta {
                    id: format!("{tag}-{i:05}"),
                    yarn,
                    family,
                    seed,
                },
                complete,
                front,
                rendering,
                real,
            });
        }
    }
    out.sort_by(|a, b| a.meta.id.cmp(&b.meta.id));
    Ok(out)
}

fn census(grids: impl Iterator<Item = StitchGrid>, map: &LabelMap) -> Vec<LabelCount> {
    let mut counts = vec![0; map.len()];
    for g in grids {
        for (c, n) in counts.iter_mut().zip(g.census(map.len())) {
            *c += n;
        }
    }
    map.entries()
        .iter()
        .zip(counts)
        .map(|(e, count)| LabelCount {
            index: e.index,
            name: e.name.clone(),
            count,
        })
        .collect()
}

fn channel_mean<'a>(images: impl Iterator<Item = &'a RgbImage>) -> [f32; 3] {
    let mut sum = [0u64; 3];
    let mut n = 0u64;
    for img in images {
        for p in img.pixels() {
            for ch in 0..3 {
                sum[ch] += p[ch] as u64;
            }
            n += 1;
        }
    }
    if n == 0 {
        return [0.5; 3];
    }
    std::array::from_fn(|ch| (sum[ch] as f64 / n as f64 / 255.0) as f32)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Generates, renders and degrades every sample and writes the dataset
/// layout under `out`. The output is a pure function of `config`.
pub fn build_dataset(config: &DatasetConfig, out: impl AsRef<Path>) -> Result<Manifest> {
    config.validate()?;
    let out = out.as_ref();
    let front_map = default_front_map();
    let complete_map = default_complete_map();
    let samples = generate_samples(config, &complete_map)?;

    let fronts: Vec<StitchGrid> = samples.iter().map(|s| s.front.clone()).collect();
    let completes: Vec<StitchGrid> = samples.iter().map(|s| s.complete.clone()).collect();
    let front_t = build_transitions(&fronts)?;
    let complete_t = build_transitions(&completes)?;
    for s in &samples {
        if !validate(&s.complete, &complete_t)?.is_empty() || !validate(&s.front, &front_t)?.is_empty() {
            return Err(Error::Generation(format!("sample {} violates the corpus syntax", s.meta.id)));
        }
    }

    let counts = split_counts(samples.len(), config.splits);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[0x5e11])));
    let mut split_of = vec![Split::Train; samples.len()];
    let mut split_ids: [Vec<String>; 3] = Default::default();
    let mut cursor = 0;
    for (si, split) in Split::ALL.into_iter().enumerate() {
        for &i in &order[cursor..cursor + counts[si]] {
            split_of[i] = split;
            split_ids[si].push(samples[i].meta.id.clone());
        }
        split_ids[si].sort();
        cursor += counts[si];
    }

    let front_census = census(fronts.iter().cloned(), &front_map);
    let total_cells: usize = front_census.iter().map(|c| c.count).sum();
    let mut families: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for s in &samples {
        let kind = if s.meta.yarn.is_sj() { "sj" } else { "mj" };
        *families.entry(kind.into()).or_default().entry(s.meta.family.to_string()).or_default() += 1;
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT,
        config: config.clone(),
        counts: BTreeMap::from([
            ("sj".to_string(), config.sj),
            ("mj".to_string(), config.mj),
            ("total".to_string(), samples.len()),
        ]),
        split_sizes: Split::ALL.iter().zip(counts).map(|(s, n)| (s.as_str().to_string(), n)).collect(),
        families,
        front_fk_fraction: front_census[0].count as f64 / total_cells as f64,
        front_census,
        complete_census: census(completes.into_iter(), &complete_map),
        channel_mean: channel_mean(
            samples
                .iter()
                .zip(&split_of)
                .filter(|(_, &sp)| sp == Split::Train || counts[0] == 0)
                .map(|(s, _)| &s.real),
        ),
        samples: samples.iter().map(|s| s.meta.clone()).collect(),
    };

    fs::create_dir_all(out.join("maps"))?;
    fs::create_dir_all(out.join("splits"))?;
    fs::create_dir_all(out.join("samples"))?;
    fs::write(out.join("maps/front_sj.csv"), front_map.to_csv_string())?;
    fs::write(out.join("maps/front_mj.csv"), default_front_mj_map().to_csv_string())?;
    fs::write(out.join("maps/complete.csv"), complete_map.to_csv_string())?;
    fs::write(out.join("transitions.csv"), front_t.to_csv_string(&front_map)?)?;
    fs::write(out.join("transitions_complete.csv"), complete_t.to_csv_string(&complete_map)?)?;
    for (si, split) in Split::ALL.into_iter().enumerate() {
        let mut text = split_ids[si].join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        fs::write(out.join(format!("splits/{}.txt", split.as_str())), text)?;
    }
    for s in &samples {
        let dir = out.join("samples").join(&s.meta.id);
        fs::create_dir_all(&dir)?;
        s.real.save(dir.join("real.png"))?;
        s.rendering.save(dir.join("rendering.png"))?;
        save_grid(&s.front, dir.join("front.csv"))?;
        save_grid(&s.complete, dir.join("complete.csv"))?;
        write_json(&dir.join("meta.json"), &s.meta)?;
    }
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// A dataset directory opened for reading.
#[derive(Clone, Debug)]
pub struct Dataset {
    root: PathBuf,
    manifest: Manifest,
    front_map: LabelMap,
    complete_map: LabelMap,
    front_transitions: TransitionMatrix,
    splits: BTreeMap<String, Split>,
}

impl Dataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Dataset> {
        let root = root.as_ref().to_path_buf();
        let manifest_path = root.join("manifest.json");
        let text = fs::read_to_string(&manifest_path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", manifest_path.display())))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let front_map = load_label_map(root.join("maps/front_sj.csv"))?;
        let complete_map = load_label_map(root.join("maps/complete.csv"))?;
        if front_map.len() != FRONT_K || complete_map.len() > COMPLETE_K {
            return Err(Error::Config("dataset label maps have unexpected sizes".into()));
        }
        let front_transitions =
            TransitionMatrix::from_csv_str(&fs::read_to_string(root.join("transitions.csv"))?, &front_map)?;
        let mut splits = BTreeMap::new();
        for split in Split::ALL {
            let text = fs::read_to_string(root.join(format!("splits/{}.txt", split.as_str())))?;
            for id in text.lines().filter(|l| !l.trim().is_empty()) {
                splits.insert(id.trim().to_string(), split);
            }
        }
        Ok(Dataset {
            root,
            manifest,
            front_map,
            complete_map,
            front_transitions,
            splits,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn front_map(&self) -> &LabelMap {
        &self.front_map
    }

    pub fn complete_map(&self) -> &LabelMap {
        &self.complete_map
    }

    pub fn front_transitions(&self) -> &TransitionMatrix {
        &self.front_transitions
    }

    /// Sample metadata of a split, sorted by id, optionally limited to one yarn kind.
    pub fn samples(&self, split: Split, yarn: Option<crate::labels::YarnKind>) -> Vec<&SampleMeta> {
        self.manifest
            .samples
            .iter()
            .filter(|m| self.splits.get(&m.id) == Some(&split))
            .filter(|m| yarn.map_or(true, |k| m.yarn.kind() == k))
            .collect()
    }

    pub fn split_of(&self, id: &str) -> Option<Split> {
        self.splits.get(id).copied()
    }

    pub fn sample_dir(&self, id: &str) -> PathBuf {
        self.root.join("samples").join(id)
    }

    pub fn load(&self, meta: &SampleMeta) -> Result<SampleRecord> {
        let dir = self.sample_dir(&meta.id);
        let complete = load_grid(dir.join("complete.csv"), &self.complete_map)?;
        let front = load_grid(dir.join("front.csv"), &self.front_map)?;
        let rendering = image::open(dir.join("rendering.png"))?.to_rgb8();
        let real = image::open(dir.join("real.png"))?.to_rgb8();
        Ok(SampleRecord {
            meta: meta.clone(),
            split: self.split_of(&meta.id).unwrap_or(Split::Train),
            complete,
            front,
            rendering,
            real,
        })
    }

    pub fn load_split(&self, split: Split, yarn: Option<crate::labels::YarnKind>) -> Result<Vec<SampleRecord>> {
        self.samples(split, yarn).into_iter().map(|m| self.load(m)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn largest_remainder_splits() {
        assert_eq!(split_counts(165, [0.8, 0.1, 0.1]), [132, 16, 17]);
        assert_eq!(split_counts(10, [0.8, 0.1, 0.1]), [8, 1, 1]);
        assert_eq!(split_counts(3, [1.0, 0.0, 0.0]), [3, 0, 0]);
        assert_eq!(split_counts(7, [0.5, 0.25, 0.25]), [3, 2, 2]);
        for n in 0..200 {
            assert_eq!(split_counts(n, [0.7, 0.2, 0.1]).iter().sum::<usize>(), n);
        }
    }

    #[test]
    fn config_validation() {
        let mut c = DatasetConfig {
            sj: 0,
            mj: 0,
            ..DatasetConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.sj = 5;
        c.splits = [0.5, 0.1, 0.1];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.splits = [0.5, 0.3, 0.2];
        assert!(c.validate().is_ok());
    }
}
