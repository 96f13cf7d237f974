//! Layer helpers shared by all architectures.

use std::collections::BTreeMap;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::{BatchStats, ConvGeom, Graph, Scalar, Tensor, Var};

/// Named parameter tensors, sorted by name.
pub type ParamSet<T> = BTreeMap<String, Tensor<T>>;

const RUNNING_MEAN: &str = ".running_mean";
const RUNNING_VAR: &str = ".running_var";
const BN_EPS: f64 = 1e-5;

/// Normalization running statistics are stored alongside the weights but
/// are not optimized.
pub fn is_trainable(name: &str) -> bool {
    !(name.ends_with(RUNNING_MEAN) || name.ends_with(RUNNING_VAR))
}

#[derive(Clone, Copy)]
enum Init {
    /// Variance-scaled normal with the given fan-in.
    He(usize),
    Zeros,
    Ones,
}

/// Builds a forward pass on a graph, resolving parameters by name.
///
/// In initialization mode, missing parameters are created on first use from
/// a seeded generator, so running a forward once instantiates the model.
pub(crate) struct Net<'a, T: Scalar> {
    pub g: &'a mut Graph<T>,
    vars: BTreeMap<String, Var>,
    init: Option<(ChaCha8Rng, ParamSet<f32>)>,
    train: bool,
    pub stats: Vec<(String, BatchStats<T>)>,
}

impl<'a, T: Scalar> Net<'a, T> {
    pub fn bound(g: &'a mut Graph<T>, vars: BTreeMap<String, Var>, train: bool) -> Self {
        Net {
            g,
            vars,
            init: None,
            train,
            stats: Vec::new(),
        }
    }

    pub fn initializing(g: &'a mut Graph<T>, seed: u64) -> Self {
        Net {
            g,
            vars: BTreeMap::new(),
            init: Some((ChaCha8Rng::seed_from_u64(seed), ParamSet::new())),
            train: false,
            stats: Vec::new(),
        }
    }

    pub fn into_created(self) -> ParamSet<f32> {
        self.init.map(|(_, p)| p).unwrap_or_default()
    }

    fn param(&mut self, name: String, shape: &[usize], init: Init) -> Result<Var> {
        if let Some(&v) = self.vars.get(&name) {
            if self.g.value(v).shape() != shape {
                return Err(Error::Shape(format!(
                    "parameter {name} has shape {:?}, architecture needs {shape:?}",
                    self.g.value(v).shape()
                )));
            }
            return Ok(v);
        }
        let Some((rng, created)) = self.init.as_mut() else {
            return Err(Error::Shape(format!("missing parameter {name}")));
        };
        let n: usize = shape.iter().product();
        let data: Vec<f32> = match init {
            Init::He(fan_in) => {
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                (0..n).map(|_| normal.sample(rng) as f32).collect()
            }
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
        };
        let t = Tensor::from_vec(shape, data)?;
        let v = self.g.constant(t.cast());
        created.insert(name.clone(), t);
        self.vars.insert(name, v);
        Ok(v)
    }

    fn channels(&self, x: Var) -> usize {
        self.g.value(x).shape()[1]
    }

    pub fn conv(&mut self, x: Var, name: &str, out: usize, geom: ConvGeom, bias: bool) -> Result<Var> {
        let cin = self.channels(x);
        let k = geom.kernel;
        let w = self.param(format!("{name}.weight"), &[out, cin, k, k], Init::He(cin * k * k))?;
        let b = if bias {
            Some(self.param(format!("{name}.bias"), &[out], Init::Zeros)?)
        } else {
            None
        };
        self.g.conv2d(x, w, b, geom)
    }

    pub fn conv3(&mut self, x: Var, name: &str, out: usize) -> Result<Var> {
        self.conv(x, name, out, ConvGeom::same(3, 1), true)
    }

    pub fn batch_norm(&mut self, x: Var, name: &str) -> Result<Var> {
        let c = self.channels(x);
        let gamma = self.param(format!("{name}.gamma"), &[c], Init::Ones)?;
        let beta = self.param(format!("{name}.beta"), &[c], Init::Zeros)?;
        let rm = self.param(format!("{name}{RUNNING_MEAN}"), &[c], Init::Zeros)?;
        let rv = self.param(format!("{name}{RUNNING_VAR}"), &[c], Init::Ones)?;
        if self.train {
            let (y, stats) = self.g.batch_norm(x, gamma, beta, None, BN_EPS)?;
            if let Some(s) = stats {
                self.stats.push((name.to_string(), s));
            }
            Ok(y)
        } else {
            let mean = self.g.value(rm).data().to_vec();
            let var = self.g.value(rv).data().to_vec();
            Ok(self.g.batch_norm(x, gamma, beta, Some((&mean, &var)), BN_EPS)?.0)
        }
    }

    /// conv (no bias) → normalization → ReLU.
    pub fn conv_bn_relu(&mut self, x: Var, name: &str, out: usize, dilation: usize) -> Result<Var> {
        let y = self.conv(x, name, out, ConvGeom::same(3, dilation), false)?;
        let y = self.batch_norm(y, &format!("{name}.bn"))?;
        Ok(self.g.relu(y))
    }

    /// Two 3×3 convolutions with an identity shortcut, then ReLU.
    pub fn res_block(&mut self, x: Var, name: &str, dilation: usize, norm: bool) -> Result<Var> {
        let c = self.channels(x);
        let geom = ConvGeom::same(3, dilation);
        let y = if norm {
            let y = self.conv_bn_relu(x, &format!("{name}.conv1"), c, dilation)?;
            let y = self.conv(y, &format!("{name}.conv2"), c, geom, false)?;
            self.batch_norm(y, &format!("{name}.conv2.bn"))?
        } else {
            let y = self.conv(x, &format!("{name}.conv1"), c, geom, true)?;
            let y = self.g.relu(y);
            self.conv(y, &format!("{name}.conv2"), c, geom, true)?
        };
        let sum = self.g.add(x, y)?;
        Ok(self.g.relu(sum))
    }
}

/// Puts every tensor of `params` on the graph. Trainable tensors become
/// differentiable leaves when `track` is set; everything else is constant.
pub(crate) fn bind<T: Scalar>(g: &mut Graph<T>, params: &ParamSet<T>, track: bool) -> BTreeMap<String, Var> {
    params
        .iter()
        .map(|(name, t)| {
            let v = if track && is_trainable(name) {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            };
            (name.clone(), v)
        })
        .collect()
}
