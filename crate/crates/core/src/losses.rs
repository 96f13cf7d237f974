//! Training objectives: cross-entropy (strict and neighborhood-tolerant),
//! least-squares adversarial terms, Gram-matrix style loss, and their
//! weighted combination for the generation phase.
//!
//! Each loss has a plain evaluation function and a graph node whose
//! backward pass is the analytic gradient. Probability fields are
//! `[N, K, H, W]`; targets are flattened `N·H·W` label indices.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::StitchGrid;
use crate::nn::{ConvGeom, CustomOp, Graph, Scalar, Tensor, Var};
use crate::syntax::check_normalized;

/// Probabilities below this are clamped before taking the log.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub w_ce: f64,
    pub w_adv: f64,
    pub w_style: f64,
    pub w_syntax: f64,
    /// Scale of the discriminator's own objective.
    pub w_d: f64,
    /// Per-layer style weights of the feature extractor.
    pub style_layers: Vec<f64>,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_ce: 1.0,
            w_adv: 0.2,
            w_style: 0.2,
            w_syntax: 0.2,
            w_d: 1.0,
            style_layers: vec![1.0, 1.0, 1.0],
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_ce, self.w_adv, self.w_style, self.w_syntax, self.w_d];
        if all.iter().chain(&self.style_layers).any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// Flattened cell labels of a batch of grids.
pub fn grid_targets(grids: &[&StitchGrid]) -> Vec<u8> {
    grids.iter().flat_map(|g| g.cells().iter().copied()).collect()
}

fn check_targets<T: Scalar>(probs: &Tensor<T>, targets: &[u8]) -> Result<(usize, usize, usize, usize)> {
    if probs.shape().len() != 4 {
        return Err(Error::Shape(format!("expected [N, K, H, W] probabilities, got {:?}", probs.shape())));
    }
    let (n, k, h, w) = probs.dims4();
    if targets.len() != n * h * w {
        return Err(Error::Shape(format!("{} targets for {n}×{h}×{w} cells", targets.len())));
    }
    if let Some(&t) = targets.iter().find(|&&t| t as usize >= k) {
        return Err(Error::Shape(format!("target label {t} outside {k} classes")));
    }
    check_normalized(probs)?;
    Ok((n, k, h, w))
}

fn clamped_log<T: Scalar>(p: T) -> T {
    p.max(T::of(LOG_FLOOR)).ln()
}

/// Mean over cells of `−log p(true class)`.
pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, targets: &[u8]) -> Result<T> {
    let (n, k, h, w) = check_targets(probs, targets)?;
    let hw = h * w;
    let mut total = T::zero();
    for b in 0..n {
        for p in 0..hw {
            let t = targets[b * hw + p] as usize;
            total -= clamped_log(probs.data()[(b * k + t) * hw + p]);
        }
    }
    Ok(total / T::of((n * hw) as f64))
}

fn cross_entropy_grad<T: Scalar>(probs: &Tensor<T>, targets: &[u8]) -> Tensor<T> {
    let (n, k, h, w) = probs.dims4();
    let hw = h * w;
    let m = T::of((n * hw) as f64);
    let mut g = Tensor::zeros(probs.shape());
    for b in 0..n {
        for p in 0..hw {
            let i = (b * k + targets[b * hw + p] as usize) * hw + p;
            let v = probs.data()[i];
            if v >= T::of(LOG_FLOOR) {
                g.data_mut()[i] = -T::one() / (v * m);
            }
        }
    }
    g
}

/// For each cell, the flat index of the highest true-class probability in
/// its clipped `(2r+1)²` neighborhood (first maximum in scan order).
fn mil_argmax<T: Scalar>(probs: &Tensor<T>, targets: &[u8], radius: usize) -> Vec<usize> {
    let (n, k, h, w) = probs.dims4();
    let hw = h * w;
    let d = probs.data();
    let mut out = Vec::with_capacity(n * hw);
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let t = targets[b * hw + y * w + x] as usize;
                let plane = (b * k + t) * hw;
                let mut best = plane + y * w + x;
                for yy in y.saturating_sub(radius)..(y + radius + 1).min(h) {
                    for xx in x.saturating_sub(radius)..(x + radius + 1).min(w) {
                        let i = plane + yy * w + xx;
                        if d[i] > d[best] {
                            best = i;
                        }
                    }
                }
                out.push(best);
            }
        }
    }
    out
}

/// Multiple-instance variant: a cell counts as correct to the extent that
/// its true class is predicted anywhere within `radius` cells.
pub fn mil_cross_entropy<T: Scalar>(probs: &Tensor<T>, targets: &[u8], radius: usize) -> Result<T> {
    check_targets(probs, targets)?;
    let idx = mil_argmax(probs, targets, radius);
    let total: T = idx.iter().map(|&i| -clamped_log(probs.data()[i])).sum();
    Ok(total / T::of(idx.len() as f64))
}

fn mil_grad<T: Scalar>(probs: &Tensor<T>, targets: &[u8], radius: usize) -> Tensor<T> {
    let idx = mil_argmax(probs, targets, radius);
    let m = T::of(idx.len() as f64);
    let mut g = Tensor::zeros(probs.shape());
    for &i in &idx {
        let v = probs.data()[i];
        if v >= T::of(LOG_FLOOR) {
            g.data_mut()[i] -= T::one() / (v * m);
        }
    }
    g
}

/// `mean((D − target)²)`.
pub fn least_squares<T: Scalar>(d: &Tensor<T>, target: f64) -> T {
    let t = T::of(target);
    let s: T = d.data().iter().map(|&v| (v - t) * (v - t)).sum();
    s / T::of(d.len() as f64)
}

/// `(generator, discriminator)` least-squares GAN losses: fake is labelled
/// 0 and real 1 for the discriminator; the generator wants fake scored 1.
pub fn adversarial_losses<T: Scalar>(d_fake: &Tensor<T>, d_real: &Tensor<T>) -> (T, T) {
    (
        least_squares(d_fake, 1.0),
        least_squares(d_real, 1.0) + least_squares(d_fake, 0.0),
    )
}

/// Per-sample Gram matrices `[N, C, C]` of `[N, C, H, W]` features,
/// normalized by `H·W·C`.
pub fn gram_matrix<T: Scalar>(features: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = features.dims4();
    let hw = h * w;
    let norm = T::one() / T::of((hw * c) as f64);
    let mut out = Tensor::zeros(&[n, c, c]);
    for b in 0..n {
        let f = &features.data()[b * c * hw..(b + 1) * c * hw];
        let g = &mut out.data_mut()[b * c * c..(b + 1) * c * c];
        unsafe {
            T::gemm(
                c,
                hw,
                c,
                norm,
                f.as_ptr(),
                hw as isize,
                1,
                f.as_ptr(),
                1,
                hw as isize,
                T::zero(),
                g.as_mut_ptr(),
                c as isize,
                1,
            );
        }
    }
    out
}

/// Frozen multi-layer feature map for the style loss.
pub trait FeatureExtractor {
    /// Features of `[N, 3, H, W]` images, one tensor per layer.
    fn features<T: Scalar>(&self, g: &mut Graph<T>, image: Var) -> Result<Vec<Var>>;
}

/// The image itself as a single feature layer.
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn features<T: Scalar>(&self, _g: &mut Graph<T>, image: Var) -> Result<Vec<Var>> {
        Ok(vec![image])
    }
}

/// Seeded random stride-2 convolution stack with ReLUs; its weights never train.
#[derive(Clone, Debug)]
pub struct RandomConvExtractor {
    weights: Vec<Tensor<f32>>,
}

impl RandomConvExtractor {
    pub const DEFAULT_WIDTHS: [usize; 3] = [8, 16, 32];

    pub fn new(seed: u64, in_channels: usize, widths: &[usize]) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = in_channels;
        let weights = widths
            .iter()
            .map(|&cout| {
                let fan_in = cin * 9;
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                let data = (0..cout * fan_in).map(|_| normal.sample(&mut rng) as f32).collect();
                let t = Tensor::from_vec(&[cout, cin, 3, 3], data).expect("consistent shape");
                cin = cout;
                t
            })
            .collect();
        RandomConvExtractor { weights }
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }
}

impl Default for RandomConvExtractor {
    fn default() -> Self {
        RandomConvExtractor::new(0x5717e, 3, &Self::DEFAULT_WIDTHS)
    }
}

impl FeatureExtractor for RandomConvExtractor {
    fn features<T: Scalar>(&self, g: &mut Graph<T>, image: Var) -> Result<Vec<Var>> {
        let c = g.value(image).shape()[1];
        let mut h = g.shift_channels(image, &vec![T::of(-0.5); c])?;
        let mut out = Vec::with_capacity(self.weights.len());
        for w in &self.weights {
            let wv = g.constant(w.cast());
            h = g.conv2d(h, wv, None, ConvGeom::strided(3, 2))?;
            h = g.relu(h);
            out.push(h);
        }
        Ok(out)
    }
}

/// `Σ_l w_l ‖G_l(generated) − G_l(target)‖²_F`, averaged over the batch.
pub fn style_loss<T: Scalar, E: FeatureExtractor>(
    generated: &Tensor<T>,
    target: &Tensor<T>,
    extractor: &E,
    layer_weights: &[f64],
) -> Result<T> {
    let mut g = Graph::new();
    let a = g.constant(generated.clone());
    let b = g.constant(target.clone());
    let v = style_node(&mut g, a, b, extractor, layer_weights)?;
    Ok(g.value(v).item())
}

struct CrossEntropyOp {
    targets: Vec<u8>,
    mil_radius: Option<usize>,
    scale: f64,
}

impl<T: Scalar> CustomOp<T> for CrossEntropyOp {
    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let s = grad.item() * T::of(self.scale);
        let g = match self.mil_radius {
            Some(r) => mil_grad(inputs[0], &self.targets, r),
            None => cross_entropy_grad(inputs[0], &self.targets),
        };
        vec![Some(g.map(|v| v * s))]
    }
}

/// Cross-entropy of a probability node; `mil_radius` selects the tolerant variant.
pub fn cross_entropy_node<T: Scalar>(
    g: &mut Graph<T>,
    probs: Var,
    targets: &[u8],
    mil_radius: Option<usize>,
) -> Result<Var> {
    let p = g.value(probs);
    let value = match mil_radius {
        Some(r) => mil_cross_entropy(p, targets, r)?,
        None => cross_entropy(p, targets)?,
    };
    Ok(g.custom(
        &[probs],
        Tensor::scalar(value),
        Box::new(CrossEntropyOp {
            targets: targets.to_vec(),
            mil_radius,
            scale: 1.0,
        }),
    ))
}

struct LeastSquaresOp {
    target: f64,
}

impl<T: Scalar> CustomOp<T> for LeastSquaresOp {
    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let d = inputs[0];
        let k = grad.item() * T::of(2.0 / d.len() as f64);
        let t = T::of(self.target);
        vec![Some(d.map(|v| (v - t) * k))]
    }
}

/// `mean((D − target)²)` as a graph node.
pub fn least_squares_node<T: Scalar>(g: &mut Graph<T>, d: Var, target: f64) -> Var {
    let value = least_squares(g.value(d), target);
    g.custom(&[d], Tensor::scalar(value), Box::new(LeastSquaresOp { target }))
}

struct GramOp;

impl<T: Scalar> CustomOp<T> for GramOp {
    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let f = inputs[0];
        let (n, c, h, w) = f.dims4();
        let hw = h * w;
        let norm = T::one() / T::of((hw * c) as f64);
        let mut df = Tensor::zeros(f.shape());
        for b in 0..n {
            let gg = &grad.data()[b * c * c..(b + 1) * c * c];
            let sym: Vec<T> = (0..c * c).map(|i| gg[i] + gg[(i % c) * c + i / c]).collect();
            let fb = &f.data()[b * c * hw..(b + 1) * c * hw];
            let out = &mut df.data_mut()[b * c * hw..(b + 1) * c * hw];
            unsafe {
                T::gemm(
                    c,
                    c,
                    hw,
                    norm,
                    sym.as_ptr(),
                    c as isize,
                    1,
                    fb.as_ptr(),
                    hw as isize,
                    1,
                    T::zero(),
                    out.as_mut_ptr(),
                    hw as isize,
                    1,
                );
            }
        }
        vec![Some(df)]
    }
}

pub fn gram_node<T: Scalar>(g: &mut Graph<T>, features: Var) -> Var {
    let value = gram_matrix(g.value(features));
    g.custom(&[features], value, Box::new(GramOp))
}

struct SquaredDistanceOp {
    scale: f64,
}

impl<T: Scalar> CustomOp<T> for SquaredDistanceOp {
    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let k = grad.item() * T::of(2.0 * self.scale);
        let diff: Vec<T> = inputs[0].data().iter().zip(inputs[1].data()).map(|(&a, &b)| (a - b) * k).collect();
        let da = Tensor::from_vec(inputs[0].shape(), diff).expect("same shape");
        let db = da.map(|v| -v);
        vec![Some(da), Some(db)]
    }
}

/// `scale · Σ (a − b)²`.
pub fn squared_distance_node<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var, scale: f64) -> Result<Var> {
    let (av, bv) = (g.value(a), g.value(b));
    if av.shape() != bv.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", av.shape(), bv.shape())));
    }
    let s: T = av.data().iter().zip(bv.data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
    let value = s * T::of(scale);
    Ok(g.custom(&[a, b], Tensor::scalar(value), Box::new(SquaredDistanceOp { scale })))
}

/// Style loss between two image nodes, averaged over the batch.
pub fn style_node<T: Scalar, E: FeatureExtractor>(
    g: &mut Graph<T>,
    generated: Var,
    target: Var,
    extractor: &E,
    layer_weights: &[f64],
) -> Result<Var> {
    if g.value(generated).shape() != g.value(target).shape() {
        return Err(Error::Shape(format!(
            "style loss between {:?} and {:?}",
            g.value(generated).shape(),
            g.value(target).shape()
        )));
    }
    let n = g.value(generated).shape()[0] as f64;
    let fa = extractor.features(g, generated)?;
    let fb = extractor.features(g, target)?;
    if layer_weights.len() != fa.len() {
        return Err(Error::Config(format!(
            "{} style weights for {} extractor layers",
            layer_weights.len(),
            fa.len()
        )));
    }
    let mut terms = Vec::with_capacity(fa.len());
    for ((&a, &b), &wl) in fa.iter().zip(&fb).zip(layer_weights) {
        let ga = gram_node(g, a);
        let gb = gram_node(g, b);
        terms.push((squared_distance_node(g, ga, gb, wl / n)?, 1.0));
    }
    g.weighted_sum(&terms)
}

/// Per-term values of the generation objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub adv: f64,
    pub style: f64,
    pub syntax: f64,
    pub total: f64,
}

/// `w_ce·ce + w_adv·adv + w_style·style + w_syntax·syntax`.
pub fn total_generation_loss(ce: f64, adv: f64, style: f64, syntax: f64, w: &LossWeights) -> LossBreakdown {
    LossBreakdown {
        ce,
        adv,
        style,
        syntax,
        total: w.w_ce * ce + w.w_adv * adv + w.w_style * style + w.w_syntax * syntax,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(n: usize, k: usize, h: usize, w: usize) -> Tensor<f64> {
        Tensor::full(&[n, k, h, w], 1.0 / k as f64)
    }

    #[test]
    fn uniform_cross_entropy() {
        let p = uniform(2, 14, 3, 3);
        let ce = cross_entropy(&p, &[5; 18]).unwrap();
        assert!((ce - 14f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mil_credits_neighbor() {
        // 3×3 field, two classes; only the corner carries class 1.
        let mut p = Tensor::zeros(&[1, 2, 3, 3]);
        for i in 0..9 {
            p.data_mut()[i] = 1.0;
        }
        p.data_mut()[0] = 0.0;
        p.data_mut()[9] = 1.0;
        let mut t = [0u8; 9];
        t[4] = 1;
        // Cells 0 and 4 are each wrong at their own position but right one
        // cell away, so only the strict loss charges them.
        let strict = cross_entropy(&p, &t).unwrap();
        let mil = mil_cross_entropy(&p, &t, 1).unwrap();
        assert!((strict - 2.0 * -(LOG_FLOOR.ln()) / 9.0).abs() < 1e-9);
        assert_eq!(mil, 0.0);
    }

    #[test]
    fn lsgan_values() {
        for (d, want) in [(0.0f64, 1.0f64), (0.5, 0.25), (1.0, 0.0)] {
            let t = Tensor::full(&[2, 1, 3, 3], d);
            assert!((adversarial_losses(&t, &t).0 - want).abs() < 1e-12);
        }
    }

    #[test]
    fn gram_of_two_channels() {
        let f = Tensor::from_vec(&[1, 2, 1, 1], vec![3.0, -2.0]).unwrap();
        let g = gram_matrix(&f);
        assert_eq!(g.data(), &[4.5, -3.0, -3.0, 2.0]);
    }

    #[test]
    fn style_analytic_case() {
        let a = Tensor::<f64>::from_vec(&[1, 2, 1, 1], vec![1.0, 0.0]).unwrap();
        let b = Tensor::from_vec(&[1, 2, 1, 1], vec![0.0, 1.0]).unwrap();
        let l = style_loss(&a, &b, &IdentityExtractor, &[0.7]).unwrap();
        assert!((l - 0.35).abs() < 1e-12);
        assert_eq!(style_loss(&a, &a, &IdentityExtractor, &[0.7]).unwrap(), 0.0);
    }

    #[test]
    fn normalization_is_enforced() {
        let p = Tensor::full(&[1, 2, 2, 2], 0.4);
        assert!(matches!(cross_entropy(&p, &[0; 4]), Err(Error::Normalization(_))));
    }

    #[test]
    fn total_is_weighted_sum() {
        let w = LossWeights {
            w_ce: 1.0,
            w_adv: 0.0,
            w_style: 0.0,
            w_syntax: 0.0,
            ..LossWeights::default()
        };
        assert_eq!(total_generation_loss(0.3, 5.0, 6.0, 7.0, &w).total, 0.3);
        let zero = LossWeights {
            w_ce: 0.0,
            ..w
        };
        assert_eq!(total_generation_loss(0.3, 5.0, 6.0, 7.0, &zero).total, 0.0);
    }
}
