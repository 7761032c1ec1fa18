//! Image/mask preprocessing, dataset manifests and support selection.

mod manifest;
mod synth;

use std::path::Path;

use image::{imageops, DynamicImage, GrayImage, ImageBuffer, Luma, Rgb32FImage, RgbImage};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use manifest::{
    load_support, select_support, select_support_ids, DatasetManifest, ManifestEntry, SeedEntry,
    SeedTable, Split,
};
pub use synth::{synth_generate, Background, GlyphBox, SynthConfig, SynthDataset, SynthItem};

/// Standardized `H x W x 3` image.
pub type Image = Array3<f64>;
/// Binary `H x W` map with values in {0, 1}.
pub type Mask = Array2<u8>;

pub const CHANNEL_MEAN: [f64; 3] = [0.48145466, 0.4578275, 0.40821073];
pub const CHANNEL_STD: [f64; 3] = [0.26862954, 0.26130258, 0.27577711];
pub const DEFAULT_INPUT_SIZE: usize = 640;
pub const MASK_THRESHOLD: u8 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Side of the square network input.
    pub size: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            size: DEFAULT_INPUT_SIZE,
        }
    }
}

pub fn standardize_rgb(rgb: [u8; 3]) -> [f64; 3] {
    std::array::from_fn(|c| (rgb[c] as f64 / 255.0 - CHANNEL_MEAN[c]) / CHANNEL_STD[c])
}

/// Inverse of the channel standardization, clamped to [0, 1].
pub fn unstandardize(image: &Image) -> Array3<f64> {
    Array3::from_shape_fn(image.dim(), |(y, x, c)| {
        (image[[y, x, c]] * CHANNEL_STD[c] + CHANNEL_MEAN[c]).clamp(0.0, 1.0)
    })
}

/// Placement of a `w x h` image inside the square canvas: scaled size and
/// top-left offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Letterbox {
    pub width: usize,
    pub height: usize,
    pub left: usize,
    pub top: usize,
}

pub fn letterbox(width: usize, height: usize, size: usize) -> Letterbox {
    let long = width.max(height).max(1) as f64;
    let scale = size as f64 / long;
    let w = ((width as f64 * scale).round() as usize).clamp(1, size);
    let h = ((height as f64 * scale).round() as usize).clamp(1, size);
    Letterbox {
        width: w,
        height: h,
        left: (size - w) / 2,
        top: (size - h) / 2,
    }
}

/// Resizes so the long side equals `cfg.size`, scales to [0, 1],
/// standardizes per channel and zero-pads symmetrically to a square.
pub fn preprocess(raw: &DynamicImage, cfg: &PreprocessConfig) -> Result<Image> {
    match raw {
        DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_)
        | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_)
        | DynamicImage::ImageRgb32F(_)
        | DynamicImage::ImageRgba32F(_) => Ok(preprocess_rgb32f(&raw.to_rgb32f(), cfg)),
        other => Err(Error::Format(format!(
            "expected an RGB image, got {:?}",
            other.color()
        ))),
    }
}

pub fn preprocess_rgb(rgb: &RgbImage, cfg: &PreprocessConfig) -> Image {
    preprocess_rgb32f(&DynamicImage::ImageRgb8(rgb.clone()).to_rgb32f(), cfg)
}

/// Same as [`preprocess`] for an image already scaled to [0, 1].
pub fn preprocess_rgb32f(rgb: &Rgb32FImage, cfg: &PreprocessConfig) -> Image {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let lb = letterbox(w, h, cfg.size);
    let resized;
    let src = if (lb.width, lb.height) == (w, h) {
        rgb
    } else {
        resized = imageops::resize(
            rgb,
            lb.width as u32,
            lb.height as u32,
            imageops::FilterType::Triangle,
        );
        &resized
    };
    let mut out = Image::zeros((cfg.size, cfg.size, 3));
    for (x, y, px) in src.enumerate_pixels() {
        for c in 0..3 {
            out[[y as usize + lb.top, x as usize + lb.left, c]] =
                (px[c].clamp(0.0, 1.0) as f64 - CHANNEL_MEAN[c]) / CHANNEL_STD[c];
        }
    }
    out
}

/// Applies the same letterbox geometry as [`preprocess_rgb`] to a mask.
pub fn preprocess_mask(mask: &Mask, cfg: &PreprocessConfig) -> Mask {
    let (h, w) = mask.dim();
    let lb = letterbox(w, h, cfg.size);
    let gray = mask_to_gray(mask);
    let resized = if (lb.width, lb.height) == (w, h) {
        gray
    } else {
        imageops::resize(
            &gray,
            lb.width as u32,
            lb.height as u32,
            imageops::FilterType::Nearest,
        )
    };
    let mut out = Mask::zeros((cfg.size, cfg.size));
    for (x, y, px) in resized.enumerate_pixels() {
        out[[y as usize + lb.top, x as usize + lb.left]] = u8::from(px[0] >= MASK_THRESHOLD);
    }
    out
}

/// Single-channel mask to {0, 1}: values >= 128 are foreground.
pub fn binarize_mask(raw: &DynamicImage) -> Result<Mask> {
    match raw {
        DynamicImage::ImageLuma8(g) => Ok(binarize_gray(g)),
        DynamicImage::ImageLuma16(g) => Ok(Mask::from_shape_fn(
            (g.height() as usize, g.width() as usize),
            |(y, x)| u8::from(g.get_pixel(x as u32, y as u32)[0] >= MASK_THRESHOLD as u16 * 257),
        )),
        other => Err(Error::Format(format!(
            "mask must be single-channel, got {:?}",
            other.color()
        ))),
    }
}

pub fn binarize_gray(g: &GrayImage) -> Mask {
    Mask::from_shape_fn((g.height() as usize, g.width() as usize), |(y, x)| {
        u8::from(g.get_pixel(x as u32, y as u32)[0] >= MASK_THRESHOLD)
    })
}

/// {0, 1} mask to an 8-bit image with values {0, 255}.
pub fn mask_to_gray(mask: &Mask) -> GrayImage {
    let (h, w) = mask.dim();
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        Luma([if mask[[y as usize, x as usize]] != 0 { 255 } else { 0 }])
    })
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?;
    binarize_mask(&img)
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    mask_to_gray(mask)
        .save(path)
        .map_err(|e| Error::image(path, e))
}

pub fn read_image(path: &Path, cfg: &PreprocessConfig) -> Result<Image> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?;
    preprocess(&img, cfg)
}

/// A labelled support image.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSample {
    pub id: String,
    pub image: Image,
    pub mask: Mask,
}

impl SupportSample {
    pub fn new(id: impl Into<String>, image: Image, mask: Mask) -> Result<Self> {
        let (h, w, c) = image.dim();
        if c != 3 || mask.dim() != (h, w) {
            return Err(Error::Shape(format!(
                "image {h}x{w}x{c} and mask {:?} disagree",
                mask.dim()
            )));
        }
        if mask.iter().any(|&v| v > 1) {
            return Err(Error::Argument("mask values must be 0 or 1".into()));
        }
        Ok(Self {
            id: id.into(),
            image,
            mask,
        })
    }
}
