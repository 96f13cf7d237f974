//! Forward and backward kernels on NCHW buffers.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl ConvGeom {
    /// Stride-1 "same" convolution of odd kernel size.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        ConvGeom {
            kernel,
            stride: 1,
            pad: dilation * (kernel - 1) / 2,
            dilation,
        }
    }

    pub fn strided(kernel: usize, stride: usize) -> Self {
        ConvGeom {
            kernel,
            stride,
            pad: (kernel - 1) / 2,
            dilation: 1,
        }
    }

    pub fn out_size(&self, input: usize) -> Result<usize> {
        let span = self.dilation * (self.kernel - 1) + 1;
        if input + 2 * self.pad < span {
            return Err(Error::Shape(format!(
                "input extent {input} too small for kernel span {span}"
            )));
        }
        Ok((input + 2 * self.pad - span) / self.stride + 1)
    }
}

fn im2col<T: Scalar>(x: &Tensor<T>, g: ConvGeom, oh: usize, ow: usize) -> Vec<T> {
    let (n, c, h, w) = x.dims4();
    let k = g.kernel;
    let np = n * oh * ow;
    let mut cols = vec![T::zero(); c * k * k * np];
    let xd = x.data();
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst = &mut cols[row * np..(row + 1) * np];
                for b in 0..n {
                    let plane = &xd[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                    for oy in 0..oh {
                        let iy = (oy * g.stride + ki * g.dilation) as isize - g.pad as isize;
                        let base = (b * oh + oy) * ow;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..ow {
                            let ix = (ox * g.stride + kj * g.dilation) as isize - g.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[base + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(
    cols: &[T],
    shape: (usize, usize, usize, usize),
    g: ConvGeom,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let (n, c, h, w) = shape;
    let k = g.kernel;
    let np = n * oh * ow;
    let mut dx = vec![T::zero(); n * c * h * w];
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &cols[row * np..(row + 1) * np];
                for b in 0..n {
                    let plane = &mut dx[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                    for oy in 0..oh {
                        let iy = (oy * g.stride + ki * g.dilation) as isize - g.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = (b * oh + oy) * ow;
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..ow {
                            let ix = (ox * g.stride + kj * g.dilation) as isize - g.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += src[base + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: ConvGeom,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4();
    let (co, wc, kh, kw) = weight.dims4();
    if wc != c || kh != g.kernel || kw != g.kernel {
        return Err(Error::Shape(format!(
            "conv weight {:?} does not fit input {:?}",
            weight.shape(),
            x.shape()
        )));
    }
    let oh = g.out_size(h)?;
    let ow = g.out_size(w)?;
    let p = oh * ow;
    let ckk = c * g.kernel * g.kernel;
    let cols = im2col(x, g, oh, ow);
    let mut out = Tensor::zeros(&[n, co, oh, ow]);
    let od = out.data_mut();
    if let Some(bias) = bias {
        for b in 0..n {
            for o in 0..co {
                let v = bias.data()[o];
                od[(b * co + o) * p..(b * co + o + 1) * p].fill(v);
            }
        }
    }
    for b in 0..n {
        // SAFETY: cols is [ckk, n·p]; output block b is [co, p] contiguous.
        unsafe {
            T::gemm(
                co,
                ckk,
                p,
                T::one(),
                weight.data().as_ptr(),
                ckk as isize,
                1,
                cols.as_ptr().add(b * p),
                (n * p) as isize,
                1,
                T::one(),
                od.as_mut_ptr().add(b * co * p),
                p as isize,
                1,
            );
        }
    }
    Ok(out)
}

pub struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dweight: Tensor<T>,
    pub dbias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dout: &Tensor<T>,
    g: ConvGeom,
    need_dx: bool,
) -> ConvGrads<T> {
    let (n, c, h, w) = x.dims4();
    let (co, _, _, _) = weight.dims4();
    let (_, _, oh, ow) = dout.dims4();
    let p = oh * ow;
    let ckk = c * g.kernel * g.kernel;
    let cols = im2col(x, g, oh, ow);
    let dy = dout.data();

    let mut dweight = Tensor::zeros(weight.shape());
    let mut dbias = Tensor::zeros(&[co]);
    for b in 0..n {
        for o in 0..co {
            let s: T = dy[(b * co + o) * p..(b * co + o + 1) * p].iter().copied().sum();
            dbias.data_mut()[o] += s;
        }
        // SAFETY: dY_b is [co, p]; colsᵀ block is [p, ckk] with strides (1, n·p).
        unsafe {
            T::gemm(
                co,
                p,
                ckk,
                T::one(),
                dy.as_ptr().add(b * co * p),
                p as isize,
                1,
                cols.as_ptr().add(b * p),
                1,
                (n * p) as isize,
                T::one(),
                dweight.data_mut().as_mut_ptr(),
                ckk as isize,
                1,
            );
        }
    }

    let dx = need_dx.then(|| {
        let mut dcols = vec![T::zero(); ckk * n * p];
        for b in 0..n {
            // SAFETY: Wᵀ is [ckk, co] with strides (1, ckk); dcols block b is [ckk, p].
            unsafe {
                T::gemm(
                    ckk,
                    co,
                    p,
                    T::one(),
                    weight.data().as_ptr(),
                    1,
                    ckk as isize,
                    dy.as_ptr().add(b * co * p),
                    p as isize,
                    1,
                    T::zero(),
                    dcols.as_mut_ptr().add(b * p),
                    (n * p) as isize,
                    1,
                );
            }
        }
        let data = col2im(&dcols, (n, c, h, w), g, oh, ow);
        Tensor::from_vec(x.shape(), data).expect("shape preserved")
    });
    ConvGrads {
        dx,
        dweight,
        dbias,
    }
}

/// 2×2 max pooling with stride 2 (floor). Returns the output and the flat
/// input index chosen for every output element; ties pick the first maximum.
pub fn max_pool2<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let (n, c, h, w) = x.dims4();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut arg = vec![0u32; n * c * oh * ow];
    let xd = x.data();
    let od = out.data_mut();
    for nc in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = usize::MAX;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let idx = nc * h * w + (2 * oy + dy) * w + 2 * ox + dx;
                        if best == usize::MAX || xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                }
                let o = (nc * oh + oy) * ow + ox;
                od[o] = xd[best];
                arg[o] = best as u32;
            }
        }
    }
    (out, arg)
}

pub fn upsample_nearest<T: Scalar>(x: &Tensor<T>, f: usize) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let (oh, ow) = (h * f, w * f);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let xd = x.data();
    let od = out.data_mut();
    for nc in 0..n * c {
        for y in 0..oh {
            for xx in 0..ow {
                od[(nc * oh + y) * ow + xx] = xd[(nc * h + y / f) * w + xx / f];
            }
        }
    }
    out
}

pub fn upsample_nearest_backward<T: Scalar>(dout: &Tensor<T>, f: usize) -> Tensor<T> {
    let (n, c, oh, ow) = dout.dims4();
    let (h, w) = (oh / f, ow / f);
    let mut dx = Tensor::zeros(&[n, c, h, w]);
    let dd = dout.data();
    let xd = dx.data_mut();
    for nc in 0..n * c {
        for y in 0..oh {
            for xx in 0..ow {
                xd[(nc * h + y / f) * w + xx / f] += dd[(nc * oh + y) * ow + xx];
            }
        }
    }
    dx
}

/// Source taps `(i0, i1, frac)` for half-pixel-centred linear resampling.
fn linear_taps(input: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..input * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn upsample_bilinear<T: Scalar>(x: &Tensor<T>, f: usize) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let (oh, ow) = (h * f, w * f);
    let ty = linear_taps(h, f);
    let tx = linear_taps(w, f);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let xd = x.data();
    let od = out.data_mut();
    for nc in 0..n * c {
        let plane = &xd[nc * h * w..(nc + 1) * h * w];
        for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::of(fy);
            for (xx, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::of(fx);
                let top = plane[y0 * w + x0] * (T::one() - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (T::one() - fx) + plane[y1 * w + x1] * fx;
                od[(nc * oh + y) * ow + xx] = top * (T::one() - fy) + bot * fy;
            }
        }
    }
    out
}

pub fn upsample_bilinear_backward<T: Scalar>(dout: &Tensor<T>, f: usize) -> Tensor<T> {
    let (n, c, oh, ow) = dout.dims4();
    let (h, w) = (oh / f, ow / f);
    let ty = linear_taps(h, f);
    let tx = linear_taps(w, f);
    let mut dx = Tensor::zeros(&[n, c, h, w]);
    let dd = dout.data();
    let xd = dx.data_mut();
    for nc in 0..n * c {
        let plane = &mut xd[nc * h * w..(nc + 1) * h * w];
        for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::of(fy);
            for (xx, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::of(fx);
                let g = dd[(nc * oh + y) * ow + xx];
                let gt = g * (T::one() - fy);
                let gb = g * fy;
                plane[y0 * w + x0] += gt * (T::one() - fx);
                plane[y0 * w + x1] += gt * fx;
                plane[y1 * w + x0] += gb * (T::one() - fx);
                plane[y1 * w + x1] += gb * fx;
            }
        }
    }
    dx
}

/// Folds `b×b` spatial blocks into channels: output channel `(dy·b + dx)·C + c`.
pub fn space_to_depth<T: Scalar>(x: &Tensor<T>, b: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4();
    if h % b != 0 || w % b != 0 {
        return Err(Error::Shape(format!("space_to_depth({b}) on {h}×{w}")));
    }
    let (oh, ow) = (h / b, w / b);
    let oc = c * b * b;
    let mut out = Tensor::zeros(&[n, oc, oh, ow]);
    let xd = x.data();
    let od = out.data_mut();
    for bn in 0..n {
        for ci in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let ch = ((y % b) * b + xx % b) * c + ci;
                    od[((bn * oc + ch) * oh + y / b) * ow + xx / b] = xd[((bn * c + ci) * h + y) * w + xx];
                }
            }
        }
    }
    Ok(out)
}

pub fn space_to_depth_backward<T: Scalar>(dout: &Tensor<T>, b: usize, in_c: usize) -> Tensor<T> {
    let (n, oc, oh, ow) = dout.dims4();
    let (h, w) = (oh * b, ow * b);
    let mut dx = Tensor::zeros(&[n, in_c, h, w]);
    let dd = dout.data();
    let xd = dx.data_mut();
    for bn in 0..n {
        for ci in 0..in_c {
            for y in 0..h {
                for xx in 0..w {
                    let ch = ((y % b) * b + xx % b) * in_c + ci;
                    xd[((bn * in_c + ci) * h + y) * w + xx] = dd[((bn * oc + ch) * oh + y / b) * ow + xx / b];
                }
            }
        }
    }
    dx
}

/// Softmax over the channel axis of an NCHW tensor.
pub fn softmax_channels<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let hw = h * w;
    let mut out = Tensor::zeros(x.shape());
    let xd = x.data();
    let od = out.data_mut();
    for b in 0..n {
        for p in 0..hw {
            let idx = |k: usize| (b * c + k) * hw + p;
            let mut m = xd[idx(0)];
            for k in 1..c {
                m = m.max(xd[idx(k)]);
            }
            let mut s = T::zero();
            for k in 0..c {
                let e = (xd[idx(k)] - m).exp();
                od[idx(k)] = e;
                s += e;
            }
            for k in 0..c {
                od[idx(k)] /= s;
            }
        }
    }
    out
}

pub fn softmax_channels_backward<T: Scalar>(probs: &Tensor<T>, dout: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = probs.dims4();
    let hw = h * w;
    let mut dx = Tensor::zeros(probs.shape());
    let pd = probs.data();
    let dd = dout.data();
    let xd = dx.data_mut();
    for b in 0..n {
        for p in 0..hw {
            let idx = |k: usize| (b * c + k) * hw + p;
            let dot: T = (0..c).map(|k| pd[idx(k)] * dd[idx(k)]).sum();
            for k in 0..c {
                xd[idx(k)] = pd[idx(k)] * (dd[idx(k)] - dot);
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_matches_direct_sum() {
        let x = Tensor::from_vec(&[1, 2, 4, 5], (0..40).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let w = Tensor::from_vec(&[3, 2, 3, 3], (0..54).map(|i| (i as f64 * 0.11).cos()).collect()).unwrap();
        let b = Tensor::from_vec(&[3], vec![0.1, -0.2, 0.3]).unwrap();
        for g in [ConvGeom::same(3, 1), ConvGeom::same(3, 2), ConvGeom::strided(3, 2)] {
            let out = conv2d_forward(&x, &w, Some(&b), g).unwrap();
            let (_, co, oh, ow) = out.dims4();
            for o in 0..co {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = b.data()[o];
                        for ci in 0..2 {
                            for ki in 0..3 {
                                for kj in 0..3 {
                                    let iy = (oy * g.stride + ki * g.dilation) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kj * g.dilation) as isize - g.pad as isize;
                                    if iy >= 0 && iy < 4 && ix >= 0 && ix < 5 {
                                        s += x.data()[(ci * 4 + iy as usize) * 5 + ix as usize]
                                            * w.data()[((o * 2 + ci) * 3 + ki) * 3 + kj];
                                    }
                                }
                            }
                        }
                        let got = out.data()[(o * oh + oy) * ow + ox];
                        assert!((got - s).abs() < 1e-12, "{got} vs {s}");
                    }
                }
            }
        }
    }

    #[test]
    fn space_to_depth_round_trip() {
        let x = Tensor::from_vec(&[2, 3, 4, 4], (0..96).map(|i| i as f64).collect()).unwrap();
        let y = space_to_depth(&x, 2).unwrap();
        assert_eq!(y.shape(), &[2, 12, 2, 2]);
        assert_eq!(space_to_depth_backward(&y, 2, 3), x);
    }

    #[test]
    fn bilinear_preserves_constants() {
        let x = Tensor::full(&[1, 1, 3, 3], 0.25f64);
        let y = upsample_bilinear(&x, 2);
        assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::from_vec(&[1, 4, 2, 2], (0..16).map(|i| i as f64 * 0.3 - 2.0).collect()).unwrap();
        let p = softmax_channels(&x);
        for px in 0..4 {
            let s: f64 = (0..4).map(|k| p.data()[k * 4 + px]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
