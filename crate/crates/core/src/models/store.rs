//! Parameter store and the binary checkpoint container.
//!
//! Layout: magic `IKNT`, u32 version, u64 header length, JSON header, then
//! records of (u32 name length, name, u32 rank, u64 dims, f32 data), all
//! little-endian, until end of file.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use super::arch::{argmax_grid, build_forward, initialize};
use super::convert::grids_one_hot;
use super::net::{is_trainable, ParamSet};
use super::{ModelConfig, ModelKind};
use crate::error::{Error, Result};
use crate::labels::{LabelSpace, StitchGrid};
use crate::nn::{BatchStats, Graph, Scalar, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"IKNT";

/// A model's configuration together with its named float32 tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore {
    config: ModelConfig,
    params: ParamSet<f32>,
}

impl ParameterStore {
    /// Freshly initialized parameters for `config`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let params = initialize(&config)?;
        Ok(ParameterStore { config, params })
    }

    /// Wraps existing tensors after checking them against the architecture.
    pub fn from_parts(config: ModelConfig, params: ParamSet<f32>) -> Result<Self> {
        let expected = initialize(&config)?;
        let same = expected.len() == params.len()
            && expected
                .iter()
                .zip(&params)
                .all(|((en, et), (n, t))| en == n && et.shape() == t.shape());
        if !same {
            let want: Vec<_> = expected.keys().filter(|k| !params.contains_key(*k)).collect();
            let extra: Vec<_> = params.keys().filter(|k| !expected.contains_key(*k)).collect();
            return Err(Error::CheckpointFormat(format!(
                "tensors do not match the {} architecture (missing {want:?}, unexpected {extra:?}, or shape differences)",
                config.kind
            )));
        }
        Ok(ParameterStore { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<f32> {
        &mut self.params
    }

    /// Parameters converted to another precision.
    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect()
    }

    /// Number of trainable scalars.
    pub fn count_parameters(&self) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| is_trainable(k))
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Evaluation-mode forward without gradient tracking.
    pub fn forward(&self, inputs: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let vars: Vec<_> = inputs.iter().map(|t| g.constant((*t).clone())).collect();
        let out = build_forward(&mut g, &self.config, &self.params, &vars, false, false)?;
        Ok(g.value(out.output).clone())
    }

    /// Complete label grids predicted from front grids (inference kinds).
    pub fn predict_complete(&self, fronts: &[&StitchGrid]) -> Result<Vec<StitchGrid>> {
        if !self.kind().is_inference() {
            return Err(Error::ConfigMismatch {
                expected: "an inference model".into(),
                found: self.kind().to_string(),
            });
        }
        if fronts.is_empty() {
            return Ok(Vec::new());
        }
        let x = grids_one_hot(fronts, self.config.in_channels)?;
        let scores = self.forward(&[&x])?;
        (0..fronts.len())
            .map(|n| argmax_grid(&scores, n, LabelSpace::Complete))
            .collect()
    }

    /// Blends observed batch statistics into the running estimates:
    /// `running ← momentum·running + (1 − momentum)·batch`.
    pub fn update_running_stats(&mut self, stats: &[(String, BatchStats<f32>)], momentum: f32) {
        for (name, s) in stats {
            for (suffix, values) in [("running_mean", &s.mean), ("running_var", &s.var)] {
                if let Some(t) = self.params.get_mut(&format!("{name}.{suffix}")) {
                    for (r, &b) in t.data_mut().iter_mut().zip(values) {
                        *r = momentum * *r + (1.0 - momentum) * b;
                    }
                }
            }
        }
    }

    /// Fails with `ConfigMismatch` unless the store holds a `kind` model.
    pub fn expect_kind(self, kind: ModelKind) -> Result<Self> {
        if self.config.kind != kind {
            return Err(Error::ConfigMismatch {
                expected: kind.to_string(),
                found: self.config.kind.to_string(),
            });
        }
        Ok(self)
    }

    /// Fails with `ConfigMismatch` unless the store's config equals `config`.
    pub fn expect_config(self, config: &ModelConfig) -> Result<Self> {
        if &self.config != config {
            return Err(Error::ConfigMismatch {
                expected: serde_json::to_string(config)?,
                found: serde_json::to_string(&self.config)?,
            });
        }
        Ok(self)
    }
}

/// Exact trainable parameter count of the instantiated graph.
pub fn count_parameters(config: &ModelConfig) -> Result<usize> {
    Ok(ParameterStore::new(config.clone())?.count_parameters())
}

/// Serializes a header and tensors into the container format.
pub fn write_container(mut w: impl Write, header: &str, tensors: &ParamSet<f32>) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(header.as_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::CheckpointFormat(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Parses the container format into its header and tensors.
pub fn read_container(bytes: &[u8]) -> Result<(String, ParamSet<f32>)> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::CheckpointFormat("bad magic".into()));
    }
    let version = c.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointFormat(format!("unsupported version {version}")));
    }
    let len = c.u64("header length")?;
    let len = usize::try_from(len).map_err(|_| Error::CheckpointFormat("header length overflow".into()))?;
    let header = std::str::from_utf8(c.take(len, "header")?)
        .map_err(|_| Error::CheckpointFormat("header is not UTF-8".into()))?
        .to_string();
    let mut tensors = ParamSet::new();
    while c.pos < bytes.len() {
        let n = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(n, "name")?)
            .map_err(|_| Error::CheckpointFormat("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = c.u32("rank")? as usize;
        if rank > 8 {
            return Err(Error::CheckpointFormat(format!("implausible rank {rank} for {name}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u64("dims")? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::CheckpointFormat(format!("tensor {name} too large")))?;
        let raw = c.take(count, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        if tensors.insert(name.clone(), Tensor::from_vec(&shape, data)?).is_some() {
            return Err(Error::CheckpointFormat(format!("duplicate tensor {name}")));
        }
    }
    Ok((header, tensors))
}

pub fn save_checkpoint(store: &ParameterStore, path: impl AsRef<Path>) -> Result<()> {
    let header = serde_json::to_string(&store.config)?;
    let mut buf = Vec::new();
    write_container(&mut buf, &header, &store.params)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParameterStore> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::Config(format!("cannot open checkpoint {}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    let (header, params) = read_container(&bytes)?;
    let config: ModelConfig = serde_json::from_str(&header)
        .map_err(|e| Error::CheckpointFormat(format!("header is not a model config: {e}")))?;
    ParameterStore::from_parts(config, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_conv_count() {
        let mut c = ModelConfig::toy(ModelKind::Infer2lyr);
        c.in_channels = 1;
        c.widths = vec![1];
        c.out_channels = 1;
        // Two 3×3 convolutions with bias, 1→1→1.
        assert_eq!(count_parameters(&c).unwrap(), 20);
    }

    #[test]
    fn init_is_seeded() {
        let c = ModelConfig::toy(ModelKind::InferResidual);
        assert_eq!(ParameterStore::new(c.clone()).unwrap(), ParameterStore::new(c.clone()).unwrap());
        let mut d = c.clone();
        d.seed = 9;
        assert_ne!(ParameterStore::new(c).unwrap(), ParameterStore::new(d).unwrap());
    }

    #[test]
    fn container_round_trip_and_truncation() {
        let store = ParameterStore::new(ModelConfig::toy(ModelKind::Refiner)).unwrap();
        let mut buf = Vec::new();
        write_container(&mut buf, "{}", store.params()).unwrap();
        let (h, p) = read_container(&buf).unwrap();
        assert_eq!(h, "{}");
        assert_eq!(&p, store.params());
        for cut in [3, 10, buf.len() - 1] {
            assert!(matches!(read_container(&buf[..cut]), Err(Error::CheckpointFormat(_))));
        }
    }

    #[test]
    fn kind_mismatch() {
        let store = ParameterStore::new(ModelConfig::toy(ModelKind::Refiner)).unwrap();
        assert!(matches!(
            store.expect_kind(ModelKind::Img2prog),
            Err(Error::ConfigMismatch { .. })
        ));
    }
}
