//! 8-bit RGB image files to and from `[0, 1]` float tensors.

use std::path::{Path, PathBuf};

use image::{ImageFormat, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// `round_half_even(clamp(v, 0, 1) * 255)`.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round_ties_even() as u8
}

/// Decodes a PNG or JPEG into an `H x W x 3` tensor with values `q / 255`.
pub fn load_image(path: &Path) -> Result<Tensor3> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })?
        .to_rgb8();
    Ok(from_rgb8(&img))
}

pub fn from_rgb8(img: &RgbImage) -> Tensor3 {
    let (w, h) = img.dimensions();
    let data = img.as_raw().iter().map(|&q| q as f64 / 255.0).collect();
    Tensor3::from_vec(h as usize, w as usize, 3, data).expect("rgb buffer length")
}

/// Quantizes a 3-channel tensor. A single-channel tensor is replicated to
/// grey; any other channel count is rejected.
pub fn to_rgb8(t: &Tensor3) -> Result<RgbImage> {
    let (h, w, c) = t.shape();
    if c != 3 && c != 1 {
        return Err(Error::shape(format!("cannot write a {c}-channel image")));
    }
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |ch: usize| quantize(t.get(y as usize, x as usize, if c == 1 { 0 } else { ch }));
        Rgb([px(0), px(1), px(2)])
    }))
}

pub fn save_png(path: &Path, t: &Tensor3) -> Result<()> {
    to_rgb8(t)?
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })
}

/// Scales a nonnegative multi-channel field to `[0, 1]` grey by its channel
/// sum over the global maximum, for visualization.
pub fn visualize_field(t: &Tensor3) -> Tensor3 {
    let (h, w, c) = t.shape();
    let sums: Vec<f64> = t.data().chunks_exact(c.max(1)).map(|p| p.iter().sum()).collect();
    let peak = sums.iter().copied().fold(0.0, f64::max);
    let scale = if peak > 0.0 { 1.0 / peak } else { 0.0 };
    Tensor3::from_vec(h, w, 1, sums.into_iter().map(|s| s * scale).collect()).expect("len")
}

/// PNG and JPEG files in `dir`, sorted by name.
pub fn list_backgrounds(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for e in entries {
        let path = e.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|s| s.to_str())
            .map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Tiles equally sized images left to right, `cols` per row, separated by
/// `gap` pixels of `fill`.
pub fn montage(images: &[Tensor3], cols: usize, gap: usize, fill: f64) -> Result<Tensor3> {
    let Some(first) = images.first() else {
        return Err(Error::invalid("montage needs at least one image"));
    };
    let (h, w, c) = first.shape();
    if images.iter().any(|i| i.shape() != (h, w, c)) {
        return Err(Error::shape("montage tiles must share one shape"));
    }
    let cols = cols.clamp(1, images.len());
    let rows = images.len().div_ceil(cols);
    let (th, tw) = (rows * h + (rows - 1) * gap, cols * w + (cols - 1) * gap);
    let mut out = Tensor3::filled(th, tw, c, fill);
    for (n, img) in images.iter().enumerate() {
        let (oy, ox) = ((n / cols) * (h + gap), (n % cols) * (w + gap));
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out.set(oy + y, ox + x, ch, img.get(y, x, ch));
                }
            }
        }
    }
    Ok(out)
}
