//! Conversions between images, grids and network tensors.

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::labels::StitchGrid;
use crate::nn::Tensor;

/// Stacks RGB images into `[N, 3, H, W]` on the [0, 1] scale.
pub fn images_to_tensor(images: &[&RgbImage]) -> Result<Tensor<f32>> {
    let first = images.first().ok_or_else(|| Error::Shape("no images".into()))?;
    let (w, h) = (first.width() as usize, first.height() as usize);
    let mut data = vec![0.0f32; images.len() * 3 * h * w];
    for (n, img) in images.iter().enumerate() {
        if (img.width() as usize, img.height() as usize) != (w, h) {
            return Err(Error::Shape(format!(
                "image {n} is {}×{}, expected {w}×{h}",
                img.width(),
                img.height()
            )));
        }
        for (x, y, p) in img.enumerate_pixels() {
            for ch in 0..3 {
                data[((n * 3 + ch) * h + y as usize) * w + x as usize] = p[ch] as f32 / 255.0;
            }
        }
    }
    Tensor::from_vec(&[images.len(), 3, h, w], data)
}

/// Sample `n` of a `[N, 3, H, W]` tensor as an 8-bit image (clamped, rounded).
pub fn tensor_to_image(t: &Tensor<f32>, n: usize) -> RgbImage {
    let (_, _, h, w) = t.dims4();
    let d = t.data();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        Rgb(std::array::from_fn(|ch| {
            let v = d[((n * 3 + ch) * h + y as usize) * w + x as usize];
            (v * 255.0).round().clamp(0.0, 255.0) as u8
        }))
    })
}

/// One-hot `[N, K, 20, 20]` encoding of grids.
pub fn grids_one_hot(grids: &[&StitchGrid], k: usize) -> Result<Tensor<f32>> {
    let cells = crate::labels::CELLS;
    let mut data = vec![0.0f32; grids.len() * k * cells];
    for (n, g) in grids.iter().enumerate() {
        for (p, label) in g.labels().enumerate() {
            if label >= k {
                return Err(Error::Shape(format!("label {label} outside {k} classes")));
            }
            data[(n * k + label) * cells + p] = 1.0;
        }
    }
    Tensor::from_vec(&[grids.len(), k, crate::labels::GRID, crate::labels::GRID], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_round_trip() {
        let img = RgbImage::from_fn(5, 4, |x, y| Rgb([x as u8 * 40, y as u8 * 60, 7]));
        let t = images_to_tensor(&[&img, &img]).unwrap();
        assert_eq!(t.shape(), &[2, 3, 4, 5]);
        assert_eq!(tensor_to_image(&t, 1), img);
    }
}
