//! The generation-phase models stored together in one container.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::convert::{images_to_tensor, tensor_to_image};
use super::net::ParamSet;
use super::store::{read_container, write_container};
use super::{argmax_grid, ModelConfig, ModelKind, ParameterStore};
use crate::error::{Error, Result};
use crate::labels::{LabelSpace, StitchGrid};
use crate::nn::Graph;

const BUNDLE_TAG: &str = "generation";

#[derive(Serialize, Deserialize)]
struct BundleHeader {
    bundle: String,
    models: BTreeMap<String, ModelConfig>,
}

/// Refiner and img2prog, plus the discriminator when it was trained.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationBundle {
    pub refiner: ParameterStore,
    pub img2prog: ParameterStore,
    pub discriminator: Option<ParameterStore>,
}

impl GenerationBundle {
    pub fn new(refiner: ModelConfig, img2prog: ModelConfig, discriminator: Option<ModelConfig>) -> Result<Self> {
        Ok(GenerationBundle {
            refiner: ParameterStore::new(refiner)?.expect_kind(ModelKind::Refiner)?,
            img2prog: ParameterStore::new(img2prog)?.expect_kind(ModelKind::Img2prog)?,
            discriminator: discriminator
                .map(|c| ParameterStore::new(c)?.expect_kind(ModelKind::Discriminator))
                .transpose()?,
        })
    }

    fn members(&self) -> Vec<&ParameterStore> {
        let mut v = vec![&self.refiner, &self.img2prog];
        v.extend(self.discriminator.as_ref());
        v
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut models = BTreeMap::new();
        let mut tensors = ParamSet::new();
        for m in self.members() {
            models.insert(m.kind().to_string(), m.config().clone());
            for (name, t) in m.params() {
                tensors.insert(format!("{}/{name}", m.kind()), t.clone());
            }
        }
        let header = serde_json::to_string(&BundleHeader {
            bundle: BUNDLE_TAG.into(),
            models,
        })?;
        let mut buf = Vec::new();
        write_container(&mut buf, &header, &tensors)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path)
            .map_err(|e| Error::Config(format!("cannot open generation checkpoint {}: {e}", path.display())))?;
        let (header, mut tensors) = read_container(&bytes)?;
        let header: BundleHeader = serde_json::from_str(&header).map_err(|_| Error::ConfigMismatch {
            expected: "generation bundle".into(),
            found: "single-model checkpoint".into(),
        })?;
        if header.bundle != BUNDLE_TAG {
            return Err(Error::CheckpointFormat(format!("unknown bundle {:?}", header.bundle)));
        }
        let mut take = |kind: ModelKind| -> Result<Option<ParameterStore>> {
            let Some(config) = header.models.get(kind.as_str()) else {
                return Ok(None);
            };
            let prefix = format!("{kind}/");
            let names: Vec<String> = tensors.keys().filter(|k| k.starts_with(&prefix)).cloned().collect();
            let params = names
                .into_iter()
                .map(|n| {
                    let t = tensors.remove(&n).expect("listed key");
                    (n[prefix.len()..].to_string(), t)
                })
                .collect();
            Ok(Some(ParameterStore::from_parts(config.clone(), params)?.expect_kind(kind)?))
        };
        let missing = |kind: ModelKind| Error::CheckpointFormat(format!("bundle lacks the {kind} model"));
        let refiner = take(ModelKind::Refiner)?.ok_or_else(|| missing(ModelKind::Refiner))?;
        let img2prog = take(ModelKind::Img2prog)?.ok_or_else(|| missing(ModelKind::Img2prog))?;
        let discriminator = take(ModelKind::Discriminator)?;
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::CheckpointFormat(format!("unexpected tensor {extra}")));
        }
        Ok(GenerationBundle {
            refiner,
            img2prog,
            discriminator,
        })
    }

    /// Refines each image and reads its front label grid.
    pub fn predict(&self, images: &[&RgbImage]) -> Result<Vec<(RgbImage, StitchGrid)>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let x = images_to_tensor(images)?;
        let mut g = Graph::new();
        let xv = g.constant(x);
        let r = super::build_forward(&mut g, self.refiner.config(), self.refiner.params(), &[xv], false, false)?;
        let logits =
            super::build_forward(&mut g, self.img2prog.config(), self.img2prog.params(), &[r.output], false, false)?;
        let refined = g.value(r.output);
        let scores = g.value(logits.output);
        (0..images.len())
            .map(|n| Ok((tensor_to_image(refined, n), argmax_grid(scores, n, LabelSpace::Front)?)))
            .collect()
    }
}
