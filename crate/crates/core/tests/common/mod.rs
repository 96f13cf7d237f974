#![allow(dead_code)]

use std::path::Path;

use invknit::labels::LabelSpace;
use invknit::losses::{
    cross_entropy_node, least_squares_node, style_node, FeatureExtractor, IdentityExtractor, RandomConvExtractor,
};
use invknit::models::{build_forward, is_trainable, ModelConfig, ModelKind, ParameterStore};
use invknit::nn::gradcheck::{check_coordinates, spread_indices, GradCheck};
use invknit::nn::{Graph, Tensor, Var};
use invknit::syntax::{syntax_penalty_node, Direction, TransitionMatrix};
use invknit::synthgen::{build_dataset, Dataset, DatasetConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_TOL: f64 = 1e-4;
const EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    Mil,
    AdversarialGenerator,
    AdversarialDiscriminator,
    Style,
    Syntax,
    Total,
}

impl LossKind {
    pub const ALL: [LossKind; 7] = [
        LossKind::CrossEntropy,
        LossKind::Mil,
        LossKind::AdversarialGenerator,
        LossKind::AdversarialDiscriminator,
        LossKind::Style,
        LossKind::Syntax,
        LossKind::Total,
    ];
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Fixed random data a loss needs besides the model output.
struct LossData {
    targets: Vec<u8>,
    style_target: Tensor<f64>,
    transitions: TransitionMatrix,
}

fn loss_data(out_shape: &[usize], rng: &mut ChaCha8Rng) -> LossData {
    let (n, c, h, w) = (out_shape[0], out_shape[1], out_shape[2], out_shape[3]);
    let targets = (0..n * h * w).map(|_| rng.gen_range(0..c) as u8).collect();
    let mut t = TransitionMatrix::empty(LabelSpace::Front, c);
    for dir in [Direction::Horizontal, Direction::Vertical] {
        for a in 0..c {
            for b in 0..c {
                t.set(dir, a, b, rng.gen_bool(0.5));
            }
        }
    }
    LossData {
        targets,
        style_target: random_tensor(out_shape, rng, 0.0, 1.0),
        transitions: t,
    }
}

fn style_term(g: &mut Graph<f64>, y: Var, target: Var) -> Var {
    let shape = g.value(y).shape().to_vec();
    if shape[2] >= 4 {
        let e = RandomConvExtractor::new(3, shape[1], &[3, 4]);
        style_node(g, y, target, &e, &[1.0, 0.5]).unwrap()
    } else {
        style_with(g, y, target, &IdentityExtractor)
    }
}

fn style_with<E: FeatureExtractor>(g: &mut Graph<f64>, y: Var, target: Var, e: &E) -> Var {
    style_node(g, y, target, e, &[1.0]).unwrap()
}

fn apply_loss(g: &mut Graph<f64>, y: Var, loss: LossKind, d: &LossData) -> Var {
    let one = |g: &mut Graph<f64>, kind: LossKind| -> Var {
        match kind {
            LossKind::CrossEntropy | LossKind::Mil => {
                let p = g.softmax(y);
                let r = (kind == LossKind::Mil).then_some(1);
                cross_entropy_node(g, p, &d.targets, r).unwrap()
            }
            LossKind::AdversarialGenerator => least_squares_node(g, y, 1.0),
            LossKind::AdversarialDiscriminator => least_squares_node(g, y, 0.0),
            LossKind::Style => {
                let t = g.constant(d.style_target.clone());
                style_term(g, y, t)
            }
            LossKind::Syntax => {
                let p = g.softmax(y);
                syntax_penalty_node(g, p, &d.transitions, 0.1).unwrap()
            }
            LossKind::Total => unreachable!(),
        }
    };
    if loss == LossKind::Total {
        let terms: Vec<(Var, f64)> = [
            (LossKind::CrossEntropy, 1.0),
            (LossKind::AdversarialGenerator, 0.2),
            (LossKind::Style, 0.2),
            (LossKind::Syntax, 0.2),
        ]
        .into_iter()
        .map(|(k, w)| (one(g, k), w))
        .collect();
        g.weighted_sum(&terms).unwrap()
    } else {
        one(g, loss)
    }
}

fn model_inputs(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    let s = config.input_size;
    let mut v = vec![random_tensor(&[2, config.in_channels, s, s], rng, 0.0, 1.0)];
    if config.kind == ModelKind::Discriminator {
        v.push(random_tensor(&[2, config.cond_channels, s / 8, s / 8], rng, 0.0, 1.0));
    }
    v
}

/// Loss of `config`'s training-mode forward composed with `loss`, checked
/// against central differences on a spread of parameter and input coordinates.
pub fn check_model_loss(kind: ModelKind, loss: LossKind, per_tensor: usize) -> GradCheck {
    let config = ModelConfig::toy(kind);
    let store = ParameterStore::new(config.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    // Zero biases put ReLU inputs exactly on the kink wherever the padding
    // leaves a window empty; check at a point where the loss is smooth.
    let mut params = store.cast::<f64>();
    for (name, t) in params.iter_mut().filter(|(n, _)| n.ends_with(".bias")) {
        let sign = if name.len() % 2 == 0 { 1.0 } else { -1.0 };
        let values = (0..t.len()).map(|_| sign * rng.gen_range(0.05..0.2)).collect();
        *t = Tensor::from_vec(t.shape(), values).unwrap();
    }
    let inputs = model_inputs(&config, &mut rng);
    let out_shape = {
        let mut g = Graph::new();
        let xs: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let f = build_forward(&mut g, &config, &params, &xs, true, false).unwrap();
        g.value(f.output).shape().to_vec()
    };
    let data = loss_data(&out_shape, &mut rng);

    let evaluate = |params: &invknit::models::ParamSet<f64>, inputs: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let xs: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let f = build_forward(&mut g, &config, params, &xs, true, false).unwrap();
        let l = apply_loss(&mut g, f.output, loss, &data);
        g.value(l).item()
    };

    let mut g = Graph::new();
    let xs: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let f = build_forward(&mut g, &config, &params, &xs, true, true).unwrap();
    let l = apply_loss(&mut g, f.output, loss, &data);
    let grads = g.backward(l);

    let mut report = GradCheck::default();
    for (name, &var) in f.params.iter().filter(|(n, _)| is_trainable(n)) {
        let point = &params[name];
        let zero = Tensor::zeros(point.shape());
        let analytic = grads.get(var).unwrap_or(&zero);
        let label = format!("{kind}/{loss:?}/{name}");
        report.merge(check_coordinates(
            &label,
            point,
            analytic,
            spread_indices(point.len(), per_tensor),
            EPS,
            |t| {
                let mut p = params.clone();
                p.insert(name.clone(), t.clone());
                evaluate(&p, &inputs)
            },
        ));
    }
    for (i, &xv) in xs.iter().enumerate() {
        let zero = Tensor::zeros(inputs[i].shape());
        let analytic = grads.get(xv).unwrap_or(&zero);
        report.merge(check_coordinates(
            &format!("{kind}/{loss:?}/input{i}"),
            &inputs[i],
            analytic,
            spread_indices(inputs[i].len(), per_tensor * 2),
            EPS,
            |t| {
                let mut x = inputs.clone();
                x[i] = t.clone();
                evaluate(&params, &x)
            },
        ));
    }
    report
}

/// Builds a small dataset under `dir` (reusing it if already present).
pub fn small_dataset(dir: &Path, sj: usize, mj: usize, seed: u64) -> Dataset {
    if !dir.join("manifest.json").is_file() {
        let config = DatasetConfig {
            seed,
            sj,
            mj,
            ..DatasetConfig::default()
        };
        build_dataset(&config, dir).unwrap();
    }
    Dataset::open(dir).unwrap()
}
