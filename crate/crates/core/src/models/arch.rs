//! The seven architectures.

use super::net::{bind, Net, ParamSet};
use super::{ModelConfig, ModelKind};
use crate::error::{Error, Result};
use crate::labels::{LabelSpace, StitchGrid, GRID};
use crate::nn::{BatchStats, ConvGeom, Graph, Scalar, Tensor, Var};

const LEAKY_SLOPE: f64 = 0.2;

/// Result of recording a forward pass.
pub struct ForwardOutput<T: Scalar> {
    pub output: Var,
    /// Parameter leaves by name (differentiable when tracked).
    pub params: std::collections::BTreeMap<String, Var>,
    /// Batch statistics of each normalization layer (training mode only).
    pub stats: Vec<(String, BatchStats<T>)>,
}

/// Records `config`'s forward on `g`.
///
/// `train` selects batch statistics in normalization layers; `track` makes
/// the trainable parameters differentiable leaves. Inputs are NCHW; the
/// discriminator takes `[image, condition]`.
pub fn build_forward<T: Scalar>(
    g: &mut Graph<T>,
    config: &ModelConfig,
    params: &ParamSet<T>,
    inputs: &[Var],
    train: bool,
    track: bool,
) -> Result<ForwardOutput<T>> {
    let vars = bind(g, params, track);
    let mut net = Net::bound(g, vars.clone(), train);
    let output = architecture(&mut net, config, inputs)?;
    let stats = std::mem::take(&mut net.stats);
    Ok(ForwardOutput {
        output,
        params: vars,
        stats,
    })
}

/// Instantiates fresh parameters by running the forward once on zeros.
pub(crate) fn initialize(config: &ModelConfig) -> Result<ParamSet<f32>> {
    config.validate()?;
    let mut g = Graph::<f32>::new();
    let s = config.input_size;
    let mut inputs = vec![g.constant(Tensor::zeros(&[1, config.in_channels, s, s]))];
    if config.kind == ModelKind::Discriminator {
        inputs.push(g.constant(Tensor::zeros(&[1, config.cond_channels, s / 8, s / 8])));
    }
    let mut net = Net::initializing(&mut g, config.seed);
    architecture(&mut net, config, &inputs)?;
    Ok(net.into_created())
}

fn check_input<T: Scalar>(g: &Graph<T>, x: Var, c: usize, s: usize, what: &str) -> Result<()> {
    let shape = g.value(x).shape();
    if shape.len() != 4 || shape[1] != c || shape[2] != s || shape[3] != s {
        return Err(Error::Shape(format!("{what} must be [N, {c}, {s}, {s}], got {shape:?}")));
    }
    Ok(())
}

fn architecture<T: Scalar>(net: &mut Net<T>, c: &ModelConfig, inputs: &[Var]) -> Result<Var> {
    let want = if c.kind == ModelKind::Discriminator { 2 } else { 1 };
    if inputs.len() != want {
        return Err(Error::Shape(format!("{} takes {want} inputs, got {}", c.kind, inputs.len())));
    }
    check_input(net.g, inputs[0], c.in_channels, c.input_size, "input")?;
    match c.kind {
        ModelKind::Refiner => refiner(net, c, inputs[0]),
        ModelKind::Img2prog => img2prog(net, c, inputs[0]),
        ModelKind::Discriminator => {
            check_input(net.g, inputs[1], c.cond_channels, c.input_size / 8, "condition")?;
            discriminator(net, c, inputs[0], inputs[1])
        }
        ModelKind::Infer2lyr | ModelKind::Infer5lyr => plain_stack(net, c, inputs[0]),
        ModelKind::InferResidual => residual(net, c, inputs[0]),
        ModelKind::InferUnet => unet(net, c, inputs[0]),
    }
}

fn negated<T: Scalar>(shift: &[f32]) -> Vec<T> {
    shift.iter().map(|&v| T::of(-(v as f64))).collect()
}

fn positive<T: Scalar>(shift: &[f32]) -> Vec<T> {
    shift.iter().map(|&v| T::of(v as f64)).collect()
}

/// Mean-centered encoder → residual bottleneck → bilinear decoder. The
/// decoder predicts a correction added to the input, so an untrained refiner
/// starts near the identity.
fn refiner<T: Scalar>(net: &mut Net<T>, c: &ModelConfig, x: Var) -> Result<Var> {
    let centered = net.g.shift_channels(x, &negated::<T>(&c.input_shift))?;
    let (w0, w1) = (c.widths[0], c.widths[1]);
    let e1 = net.conv(centered, "enc1", w0, ConvGeom::strided(3, 2), true)?;
    let e1 = net.g.relu(e1);
    let e2 = net.conv(e1, "enc2", w1, ConvGeom::strided(3, 2), true)?;
    let mut h = net.g.relu(e2);
    for i in 0..c.blocks {
        h = net.res_block(h, &format!("res{i}"), 1, false)?;
    }
    let u = net.g.upsample_bilinear(h, 2);
    let d1 = net.conv3(u, "dec1", w0)?;
    let d1 = net.g.relu(d1);
    let u = net.g.upsample_bilinear(d1, 2);
    let delta = net.conv3(u, "dec2", c.out_channels)?;
    let y = net.g.add(centered, delta)?;
    let y = net.g.shift_channels(y, &positive::<T>(&c.input_shift))?;
    Ok(net.g.clamp01(y))
}

/// Stride-8 trunk with space-to-depth skips from the two intermediate
/// resolutions, residual blocks and a 3×3 logit head.
fn img2prog<T: Scalar>(net: &mut Net<T>, c: &ModelConfig, x: Var) -> Result<Var> {
    let mut x = x;
    if !c.input_shift.is_empty() {
        x = net.g.shift_channels(x, &negated::<T>(&c.input_shift))?;
    }
    let s2 = ConvGeom::strided(3, 2);
    let c1 = net.conv(x, "trunk1", c.widths[0], s2, true)?;
    let c1 = net.g.relu(c1);
    let c2 = net.conv(c1, "trunk2", c.widths[1], s2, true)?;
    let c2 = net.g.relu(c2);
    let c3 = net.conv(c2, "trunk3", c.widths[2], s2, true)?;
    let c3 = net.g.relu(c3);
    let one = ConvGeom::same(1, 1);
    let f1 = net.g.space_to_depth(c1, 4)?;
    let f1 = net.conv(f1, "skip1", c.skip_width, one, true)?;
    let f1 = net.g.relu(f1);
    let f2 = net.g.space_to_depth(c2, 2)?;
    let f2 = net.conv(f2, "skip2", c.skip_width, one, true)?;
    let f2 = net.g.relu(f2);
    let cat = net.g.concat(&[c3, f1, f2])?;
    let fused = net.conv(cat, "fuse", c.widths[2], one, true)?;
    let mut h = net.g.relu(fused);
    for i in 0..c.blocks {
        h = net.res_block(h, &format!("res{i}"), 1, false)?;
    }
    net.conv3(h, "head", c.out_channels)
}

/// Conditional patch discriminator; the condition is upsampled to image
/// resolution by nearest neighbor and concatenated.
fn discriminator<T: Scalar>(net: &mut Net<T>, c: &ModelConfig, image: Var, cond: Var) -> Result<Var> {
    let mut x = image;
    if !c.input_shift.is_empty() {
        x = net.g.shift_channels(x, &negated::<T>(&c.input_shift))?;
    }
    let up = net.g.upsample_nearest(cond, 8);
    let mut h = net.g.concat(&[x, up])?;
    for (i, &w) in c.widths.iter().enumerate() {
        h = net.conv(h, &format!("conv{}", i + 1), w, ConvGeom::strided(3, 2), true)?;
        h = net.g.leaky_relu(h, LEAKY_SLOPE);
    }
    net.conv3(h, "head", 1)
}

/// Plain stack of 3×3 convolutions: one per width, then the head.
fn plain_stack<T: Scalar>(net: &mut Net<T>, c: &ModelConfig, x: Var) -> Result<Var> {
    let mut h = x;
    for (i, &w) in c.widths.iter().enumerate() {
        h = net.conv3(h, &format!("conv{}", i + 1), w)?;
        h = net.g.relu(h);
    }
    net.conv3(h, "head", c.out_channels)
}

/// Residual encoder with pooled skips, dilated bottleneck, and a decoder
/// that concatenates the skips back in.
fn residual<T: Scalar>(net: &mut Net<T>, c: &ModelConfig, x: Var) -> Result<Var> {
    let (w1, w2, wd) = (c.widths[0], c.widths[1], c.widths[2]);
    let mut h = net.conv_bn_relu(x, "stem", w1, 1)?;
    for i in 0..c.blocks {
        h = net.res_block(h, &format!("enc1.res{i}"), 1, true)?;
    }
    let skip1 = h;
    let h = net.g.max_pool2(h);
    let mut h = net.conv_bn_relu(h, "enc2.transition", w2, 1)?;
    for i in 0..c.blocks {
        h = net.res_block(h, &format!("enc2.res{i}"), 1, true)?;
    }
    let skip2 = h;
    let mut h = net.g.max_pool2(h);
    for i in 0..c.blocks {
        h = net.res_block(h, &format!("bottleneck.res{i}"), c.dilation, true)?;
    }
    let h = net.g.upsample_nearest(h, 2);
    let h = net.g.concat(&[h, skip2])?;
    let h = net.conv_bn_relu(h, "dec2", wd, 1)?;
    let h = net.g.upsample_nearest(h, 2);
    let h = net.g.concat(&[h, skip1])?;
    let h = net.conv_bn_relu(h, "dec1", wd, 1)?;
    net.conv3(h, "head", c.out_channels)
}

fn double_conv<T: Scalar>(net: &mut Net<T>, x: Var, name: &str, w: usize) -> Result<Var> {
    let h = net.conv3(x, &format!("{name}.conv1"), w)?;
    let h = net.g.relu(h);
    let h = net.conv3(h, &format!("{name}.conv2"), w)?;
    Ok(net.g.relu(h))
}

/// Symmetric three-level encoder–decoder with concatenated skips.
fn unet<T: Scalar>(net: &mut Net<T>, c: &ModelConfig, x: Var) -> Result<Var> {
    let (w1, w2, w3) = (c.widths[0], c.widths[1], c.widths[2]);
    let e1 = double_conv(net, x, "enc1", w1)?;
    let p1 = net.g.max_pool2(e1);
    let e2 = double_conv(net, p1, "enc2", w2)?;
    let p2 = net.g.max_pool2(e2);
    let b = double_conv(net, p2, "bottleneck", w3)?;
    let u2 = net.g.upsample_nearest(b, 2);
    let u2 = net.g.concat(&[u2, e2])?;
    let d2 = double_conv(net, u2, "dec2", w2)?;
    let u1 = net.g.upsample_nearest(d2, 2);
    let u1 = net.g.concat(&[u1, e1])?;
    let d1 = double_conv(net, u1, "dec1", w1)?;
    net.conv3(d1, "head", c.out_channels)
}

/// Per-cell argmax of sample `n` of a `[N, K, 20, 20]` logit or probability
/// tensor; ties go to the lowest index.
pub fn argmax_grid<T: Scalar>(scores: &Tensor<T>, n: usize, space: LabelSpace) -> Result<StitchGrid> {
    let (_, k, h, w) = scores.dims4();
    if (h, w) != (GRID, GRID) {
        return Err(Error::Shape(format!("argmax needs 20×20 maps, got {h}×{w}")));
    }
    let hw = h * w;
    let base = n * k * hw;
    let d = scores.data();
    let cells = (0..hw)
        .map(|p| {
            let mut best = 0;
            for c in 1..k {
                if d[base + c * hw + p] > d[base + best * hw + p] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    StitchGrid::from_cells(space, cells)
}
