//! Image decoding to single-channel `[0,1]` tensors.

use std::path::Path;

use image::DynamicImage;

use super::{DataError, Result};
use crate::Tensor;

/// Decodes a PNG or JPEG, converts it to luminance, and resizes it to `side×side`.
///
/// The result has shape `[1, side, side]` with values in `[0,1]`.
pub fn load_image(path: impl AsRef<Path>, side: usize) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let err = |detail: String| DataError::Image { path: path.display().to_string(), detail };
    let img = image::ImageReader::open(path)
        .map_err(super::io_err(path))?
        .with_guessed_format()
        .map_err(super::io_err(path))?
        .decode()
        .map_err(|e| err(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(err("zero-sized image".into()));
    }
    if side == 0 {
        return Err(err("target side must be positive".into()));
    }
    let lum = luminance(&img);
    let out = resize_bilinear(&lum, h, w, side, side);
    Ok(Tensor::from_parts(vec![1, side, side], out))
}

/// Grayscale sources pass through; colour uses `0.299R + 0.587G + 0.114B`.
fn luminance(img: &DynamicImage) -> Vec<f32> {
    match img {
        DynamicImage::ImageLuma8(g) => g.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        DynamicImage::ImageLumaA8(g) => g.pixels().map(|p| p.0[0] as f32 / 255.0).collect(),
        DynamicImage::ImageLuma16(g) => g.as_raw().iter().map(|&v| v as f32 / 65535.0).collect(),
        DynamicImage::ImageLumaA16(g) => g.pixels().map(|p| p.0[0] as f32 / 65535.0).collect(),
        other => other
            .to_rgb32f()
            .pixels()
            .map(|p| (0.299 * p.0[0] + 0.587 * p.0[1] + 0.114 * p.0[2]).clamp(0.0, 1.0))
            .collect(),
    }
}

/// Bilinear resampling, align-corners-false: destination pixel `d` samples
/// source coordinate `(d + 0.5)·in/out − 0.5`, clamped to the image.
pub fn resize_bilinear(src: &[f32], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    assert_eq!(src.len(), h * w, "resize: source length");
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f32)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|d| {
                let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = taps(h, out_h);
    let xs = taps(w, out_w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &ys {
        let (r0, r1) = (&src[y0 * w..(y0 + 1) * w], &src[y1 * w..(y1 + 1) * w]);
        for &(x0, x1, fx) in &xs {
            let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
            let bottom = r1[x0] + (r1[x1] - r1[x0]) * fx;
            out.push(top + (bottom - top) * fy);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, RgbImage};
    use proptest::prelude::*;

    #[test]
    fn two_by_two_averages_to_half() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        GrayImage::from_raw(2, 2, vec![0, 0, 255, 255]).unwrap().save(&p).unwrap();
        let t = load_image(&p, 1).unwrap();
        assert_eq!(t.shape(), [1, 1, 1]);
        assert!((t.data()[0] - 0.5).abs() <= 1.0 / 255.0);
    }

    #[test]
    fn same_size_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let raw: Vec<u8> = (0..64u32).map(|i| (i * 37 % 256) as u8).collect();
        GrayImage::from_raw(8, 8, raw.clone()).unwrap().save(&p).unwrap();
        let t = load_image(&p, 8).unwrap();
        for (v, r) in t.data().iter().zip(&raw) {
            assert!((v - *r as f32 / 255.0).abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn colour_uses_luma_weights() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        RgbImage::from_raw(1, 1, vec![255, 0, 0]).unwrap().save(&p).unwrap();
        let t = load_image(&p, 1).unwrap();
        assert!((t.data()[0] - 0.299).abs() < 1e-6);
    }

    #[test]
    fn large_source_downsamples() {
        let src = vec![0.25f32; 2828 * 2320];
        let out = resize_bilinear(&src, 2828, 2320, 320, 320);
        assert_eq!(out.len(), 320 * 320);
        assert!(out.iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn unreadable_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_image(dir.path().join("missing.png"), 4), Err(DataError::Io { .. })));
        let p = dir.path().join("junk.png");
        std::fs::write(&p, b"not an image").unwrap();
        assert!(matches!(load_image(&p, 4), Err(DataError::Image { .. })));
    }

    proptest! {
        #[test]
        fn resized_values_stay_in_unit_interval(
            (h, w, src) in (1usize..12, 1usize..12).prop_flat_map(|(h, w)| {
                (Just(h), Just(w), proptest::collection::vec(0u8..=255, h * w))
            }),
            oh in 1usize..12,
            ow in 1usize..12,
        ) {
            let src: Vec<f32> = src.iter().map(|&v| v as f32 / 255.0).collect();
            let out = resize_bilinear(&src, h, w, oh, ow);
            prop_assert_eq!(out.len(), oh * ow);
            prop_assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
