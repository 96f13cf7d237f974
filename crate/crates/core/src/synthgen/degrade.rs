//! Photo-degradation that turns clean renderings into pseudo-real images.

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strengths of each degradation stage. All zero gives the identity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradeParams {
    /// Peak relative brightness change of the linear illumination gradient.
    pub illumination: f32,
    /// Peak relative per-channel gain change.
    pub color_jitter: f32,
    /// Gaussian blur sigma in pixels.
    pub blur_sigma: f32,
    /// Standard deviation of additive noise on the [0, 1] scale.
    pub noise_std: f32,
    /// Maximum displacement of the smooth warp in pixels.
    pub warp_px: f32,
}

impl Default for DegradeParams {
    fn default() -> Self {
        DegradeParams {
            illumination: 0.25,
            color_jitter: 0.12,
            blur_sigma: 1.0,
            noise_std: 0.06,
            warp_px: 2.0,
        }
    }
}

impl DegradeParams {
    pub const ZERO: DegradeParams = DegradeParams {
        illumination: 0.0,
        color_jitter: 0.0,
        blur_sigma: 0.0,
        noise_std: 0.0,
        warp_px: 0.0,
    };

    /// Documented ranges: illumination, jitter in [0, 0.5]; blur in [0, 3];
    /// noise in [0, 0.5]; warp in [0, 2].
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("illumination", self.illumination, 0.5),
            ("color_jitter", self.color_jitter, 0.5),
            ("blur_sigma", self.blur_sigma, 3.0),
            ("noise_std", self.noise_std, 0.5),
            ("warp_px", self.warp_px, 2.0),
        ];
        for (name, v, max) in checks {
            if !(0.0..=max).contains(&v) {
                return Err(Error::Param(format!("{name} = {v} outside [0, {max}]")));
            }
        }
        Ok(())
    }
}

/// Planar f32 image, channel-major, values on the [0, 1] scale.
struct Planes {
    w: usize,
    h: usize,
    data: Vec<f32>,
}

impl Planes {
    fn from_image(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = vec![0.0; 3 * w * h];
        for (x, y, p) in img.enumerate_pixels() {
            for ch in 0..3 {
                data[ch * w * h + y as usize * w + x as usize] = p[ch] as f32 / 255.0;
            }
        }
        Planes { w, h, data }
    }

    fn to_image(&self) -> RgbImage {
        let mut img = RgbImage::new(self.w as u32, self.h as u32);
        let n = self.w * self.h;
        for (x, y, p) in img.enumerate_pixels_mut() {
            let i = y as usize * self.w + x as usize;
            *p = Rgb(std::array::from_fn(|ch| {
                (self.data[ch * n + i] * 255.0).round().clamp(0.0, 255.0) as u8
            }));
        }
        img
    }

    fn at(&self, ch: usize, y: isize, x: isize) -> f32 {
        let y = y.clamp(0, self.h as isize - 1) as usize;
        let x = x.clamp(0, self.w as isize - 1) as usize;
        self.data[ch * self.w * self.h + y * self.w + x]
    }
}

/// Applies illumination, color jitter, blur, noise and warp in that order.
pub fn simulate_real(rendering: &RgbImage, seed: u64, params: &DegradeParams) -> Result<RgbImage> {
    params.validate()?;
    if rendering.width() == 0 || rendering.height() == 0 {
        return Err(Error::Param("empty image".into()));
    }
    if *params == DegradeParams::ZERO {
        return Ok(rendering.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Planes::from_image(rendering);
    let (w, h) = (p.w, p.h);
    let n = w * h;

    if params.illumination > 0.0 {
        let angle = rng.gen_range(0.0..std::f32::consts::TAU);
        let amp = rng.gen_range(-params.illumination..=params.illumination);
        let (dx, dy) = (angle.cos(), angle.sin());
        for y in 0..h {
            for x in 0..w {
                let u = (x as f32 / (w - 1).max(1) as f32 - 0.5) * dx + (y as f32 / (h - 1).max(1) as f32 - 0.5) * dy;
                let gain = 1.0 + amp * u * 2.0_f32.sqrt();
                for ch in 0..3 {
                    p.data[ch * n + y * w + x] *= gain;
                }
            }
        }
    }

    if params.color_jitter > 0.0 {
        for ch in 0..3 {
            let gain = 1.0 + rng.gen_range(-params.color_jitter..=params.color_jitter);
            for v in &mut p.data[ch * n..(ch + 1) * n] {
                *v *= gain;
            }
        }
    }

    if params.blur_sigma > 0.0 {
        gaussian_blur(&mut p, params.blur_sigma);
    }

    if params.noise_std > 0.0 {
        let normal = Normal::new(0.0f32, params.noise_std).expect("validated std");
        for v in &mut p.data {
            *v += normal.sample(&mut rng);
        }
    }

    if params.warp_px > 0.0 {
        p = warp(&p, params.warp_px, &mut rng);
    }

    Ok(p.to_image())
}

fn gaussian_blur(p: &mut Planes, sigma: f32) {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f32> = (-radius..=radius).map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f32 = kernel.iter().sum();
    let kernel: Vec<f32> = kernel.iter().map(|k| k / norm).collect();
    let (w, h) = (p.w, p.h);
    let n = w * h;
    let mut tmp = vec![0.0; p.data.len()];
    for ch in 0..3 {
        for y in 0..h {
            for x in 0..w {
                tmp[ch * n + y * w + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(i, k)| k * p.at(ch, y as isize, x as isize + i as isize - radius))
                    .sum();
            }
        }
    }
    std::mem::swap(&mut p.data, &mut tmp);
    for ch in 0..3 {
        for y in 0..h {
            for x in 0..w {
                tmp[ch * n + y * w + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(i, k)| k * p.at(ch, y as isize + i as isize - radius, x as isize))
                    .sum();
            }
        }
    }
    p.data = tmp;
}

/// Smooth sinusoidal displacement field, bounded by `max_px` per axis,
/// resampled bilinearly.
fn warp(p: &Planes, max_px: f32, rng: &mut ChaCha8Rng) -> Planes {
    use std::f32::consts::TAU;
    let mut wave = || {
        let fx = rng.gen_range(0.5..2.0f32);
        let fy = rng.gen_range(0.5..2.0f32);
        let phase = rng.gen_range(0.0..TAU);
        (fx, fy, phase)
    };
    let waves_x = [wave(), wave()];
    let waves_y = [wave(), wave()];
    let (w, h) = (p.w, p.h);
    let field = |waves: &[(f32, f32, f32); 2], x: f32, y: f32| {
        waves
            .iter()
            .map(|&(fx, fy, ph)| 0.5 * (TAU * (fx * x / w as f32 + fy * y / h as f32) + ph).sin())
            .sum::<f32>()
            * max_px
    };
    let mut out = Planes {
        w,
        h,
        data: vec![0.0; p.data.len()],
    };
    let n = w * h;
    for y in 0..h {
        for x in 0..w {
            let sx = x as f32 + field(&waves_x, x as f32, y as f32);
            let sy = y as f32 + field(&waves_y, x as f32, y as f32);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (tx, ty) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for ch in 0..3 {
                let v = (1.0 - ty) * ((1.0 - tx) * p.at(ch, y0, x0) + tx * p.at(ch, y0, x0 + 1))
                    + ty * ((1.0 - tx) * p.at(ch, y0 + 1, x0) + tx * p.at(ch, y0 + 1, x0 + 1));
                out.data[ch * n + y * w + x] = v;
            }
        }
    }
    out
}
