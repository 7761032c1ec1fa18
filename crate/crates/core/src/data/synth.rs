//! Synthetic glyph scenes with pixel-exact masks.
//!
//! Glyphs are unions of thick rectangular strokes filled with palette
//! colors. Background pixels are guaranteed never to carry a palette color,
//! so foreground and background are separable by color alone.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    preprocess_rgb, write_mask, DatasetManifest, ManifestEntry, Mask, PreprocessConfig, Split,
    SupportSample,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    Flat,
    Gradient,
    Noise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub name: String,
    pub count: usize,
    pub canvas: usize,
    /// Inclusive range of glyphs per image.
    pub glyphs: (usize, usize),
    /// Inclusive range of glyph box sides, in pixels.
    pub glyph_size: (usize, usize),
    pub palette: Vec<[u8; 3]>,
    pub background: Background,
    pub background_colors: Vec<[u8; 3]>,
    /// Per-channel uniform noise amplitude for [`Background::Noise`].
    pub noise_amplitude: u8,
    /// Non-palette clutter rectangles drawn onto the background.
    pub distractors: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            count: 20,
            canvas: 64,
            glyphs: (1, 3),
            glyph_size: (20, 32),
            palette: vec![[230, 40, 40], [240, 200, 40], [240, 140, 30]],
            background: Background::Noise,
            background_colors: vec![[30, 60, 150], [40, 110, 60], [60, 60, 75]],
            noise_amplitude: 12,
            distractors: 0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Warm bright glyphs over cool dark textured backgrounds.
    pub fn separable(seed: u64, count: usize) -> Self {
        Self {
            name: "separable".into(),
            count,
            seed,
            ..Self::default()
        }
    }

    /// Separable palette with heavier noise and background clutter.
    pub fn noisy(seed: u64, count: usize) -> Self {
        Self {
            name: "noisy".into(),
            count,
            seed,
            noise_amplitude: 28,
            distractors: 3,
            ..Self::default()
        }
    }

    /// Text-free scenes.
    pub fn negative(seed: u64, count: usize) -> Self {
        Self {
            name: "negative".into(),
            count,
            seed,
            glyphs: (0, 0),
            distractors: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.glyph_size.0 < 4 || self.glyph_size.0 > self.glyph_size.1 {
            return Err(Error::Argument(format!(
                "bad glyph size range {:?}",
                self.glyph_size
            )));
        }
        if self.canvas < self.glyph_size.1 {
            return Err(Error::Argument(format!(
                "canvas {} is smaller than one glyph ({})",
                self.canvas, self.glyph_size.1
            )));
        }
        if self.glyphs.0 > self.glyphs.1 {
            return Err(Error::Argument(format!("bad glyph count range {:?}", self.glyphs)));
        }
        if self.glyphs.1 > 0 && self.palette.is_empty() {
            return Err(Error::Argument("empty glyph palette".into()));
        }
        if self.background_colors.is_empty() {
            return Err(Error::Argument("no background colors".into()));
        }
        if let Some(c) = self
            .background_colors
            .iter()
            .find(|c| self.palette.contains(c))
        {
            return Err(Error::Argument(format!("background color {c:?} is in the palette")));
        }
        Ok(())
    }
}

/// Glyph bounding box, half-open: `x0 <= x < x1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlyphBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthItem {
    pub id: String,
    pub image: RgbImage,
    pub mask: Mask,
    pub boxes: Vec<GlyphBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub name: String,
    pub items: Vec<SynthItem>,
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let items = (0..cfg.count)
        .map(|i| render(cfg, &mut rng, format!("{}-{:04}", cfg.name, i)))
        .collect();
    Ok(SynthDataset {
        name: cfg.name.clone(),
        items,
    })
}

fn render(cfg: &SynthConfig, rng: &mut ChaCha8Rng, id: String) -> SynthItem {
    let n = cfg.canvas;
    let mut image = RgbImage::new(n as u32, n as u32);
    paint_background(cfg, rng, &mut image);
    for _ in 0..cfg.distractors {
        let color = cfg.background_colors[rng.random_range(0..cfg.background_colors.len())];
        let shade: i16 = rng.random_range(-25..=25);
        let color = color.map(|v| (v as i16 + shade).clamp(0, 255) as u8);
        let w = rng.random_range(n / 8..=n / 3);
        let h = rng.random_range(n / 8..=n / 3);
        let x0 = rng.random_range(0..=n - w);
        let y0 = rng.random_range(0..=n - h);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                image.put_pixel(x as u32, y as u32, Rgb(color));
            }
        }
    }

    let mut mask = Mask::zeros((n, n));
    let mut boxes = Vec::new();
    let count = rng.random_range(cfg.glyphs.0..=cfg.glyphs.1);
    for _ in 0..count {
        let side = rng.random_range(cfg.glyph_size.0..=cfg.glyph_size.1);
        let x0 = rng.random_range(0..=n - side);
        let y0 = rng.random_range(0..=n - side);
        let b = GlyphBox {
            x0,
            y0,
            x1: x0 + side,
            y1: y0 + side,
        };
        let color = cfg.palette[rng.random_range(0..cfg.palette.len())];
        let strokes: Vec<Stroke> = (0..rng.random_range(2..=3))
            .map(|_| Stroke::random(rng, side as f64))
            .collect();
        for y in b.y0 + 1..b.y1 - 1 {
            for x in b.x0 + 1..b.x1 - 1 {
                let px = (x - b.x0) as f64 + 0.5;
                let py = (y - b.y0) as f64 + 0.5;
                if strokes.iter().any(|s| s.contains(px, py)) {
                    mask[[y, x]] = 1;
                    image.put_pixel(x as u32, y as u32, Rgb(color));
                }
            }
        }
        boxes.push(b);
    }

    // keep background pixels off the palette
    for (x, y, px) in image.enumerate_pixels_mut() {
        if mask[[y as usize, x as usize]] == 0 {
            while cfg.palette.contains(&px.0) {
                px.0[2] = px.0[2].wrapping_add(1);
            }
        }
    }
    SynthItem {
        id,
        image,
        mask,
        boxes,
    }
}

fn paint_background(cfg: &SynthConfig, rng: &mut ChaCha8Rng, image: &mut RgbImage) {
    let colors = &cfg.background_colors;
    let base = colors[rng.random_range(0..colors.len())];
    let n = cfg.canvas as f64;
    match cfg.background {
        Background::Flat => {
            for px in image.pixels_mut() {
                *px = Rgb(base);
            }
        }
        Background::Gradient => {
            let other = colors[rng.random_range(0..colors.len())];
            let angle = rng.random::<f64>() * std::f64::consts::TAU;
            let (dx, dy) = (angle.cos(), angle.sin());
            for (x, y, px) in image.enumerate_pixels_mut() {
                let t = (((x as f64 / n - 0.5) * dx + (y as f64 / n - 0.5) * dy) + 0.75) / 1.5;
                let t = t.clamp(0.0, 1.0);
                *px = Rgb(std::array::from_fn(|c| {
                    (base[c] as f64 * (1.0 - t) + other[c] as f64 * t).round() as u8
                }));
            }
        }
        Background::Noise => {
            let amp = cfg.noise_amplitude as i16;
            for px in image.pixels_mut() {
                *px = Rgb(std::array::from_fn(|c| {
                    let d: i16 = if amp > 0 { rng.random_range(-amp..=amp) } else { 0 };
                    (base[c] as i16 + d).clamp(0, 255) as u8
                }));
            }
        }
    }
}

/// Thick straight stroke: a rectangle around a segment, in box coordinates.
struct Stroke {
    a: (f64, f64),
    dir: (f64, f64),
    len: f64,
    half_width: f64,
}

impl Stroke {
    fn random(rng: &mut ChaCha8Rng, side: f64) -> Self {
        let lo = 0.25 * side;
        let hi = 0.75 * side;
        let mut pick = || (rng.random_range(lo..hi), rng.random_range(lo..hi));
        let a = pick();
        let mut b = pick();
        if (b.0 - a.0).hypot(b.1 - a.1) < 0.2 * side {
            b = (side - a.0, side - a.1);
        }
        let len = (b.0 - a.0).hypot(b.1 - a.1).max(1e-6);
        Stroke {
            a,
            dir: ((b.0 - a.0) / len, (b.1 - a.1) / len),
            len,
            half_width: side * rng.random_range(0.09..0.15),
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (rx, ry) = (x - self.a.0, y - self.a.1);
        let along = rx * self.dir.0 + ry * self.dir.1;
        let across = -rx * self.dir.1 + ry * self.dir.0;
        (-self.half_width..=self.len + self.half_width).contains(&along)
            && across.abs() <= self.half_width
    }
}

impl SynthDataset {
    pub fn manifest(&self, split: Split) -> DatasetManifest {
        DatasetManifest {
            name: self.name.clone(),
            split,
            entries: self
                .items
                .iter()
                .map(|it| ManifestEntry {
                    id: it.id.clone(),
                    image: format!("images/{}.png", it.id).into(),
                    mask: format!("masks/{}.png", it.id).into(),
                })
                .collect(),
            seed_table: None,
            root: Default::default(),
        }
    }

    /// Writes image/mask PNG pairs plus `manifest.json` under `dir`.
    pub fn write(&self, dir: &Path, split: Split) -> Result<DatasetManifest> {
        let mut manifest = self.manifest(split);
        manifest.root = dir.to_path_buf();
        for (item, entry) in self.items.iter().zip(&manifest.entries) {
            let img_path = dir.join(&entry.image);
            if let Some(parent) = img_path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            item.image
                .save(&img_path)
                .map_err(|e| Error::image(&img_path, e))?;
            write_mask(&dir.join(&entry.mask), &item.mask)?;
        }
        manifest.save(&dir.join("manifest.json"))?;
        Ok(manifest)
    }

    /// Standardized samples at the native canvas size.
    pub fn samples(&self) -> Vec<SupportSample> {
        self.items
            .iter()
            .map(|it| {
                let cfg = PreprocessConfig {
                    size: it.image.width().max(it.image.height()) as usize,
                };
                SupportSample::new(it.id.clone(), preprocess_rgb(&it.image, &cfg), it.mask.clone())
                    .expect("synthetic sample is consistent")
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_glyphs_empty_mask() {
        let d = synth_generate(&SynthConfig::negative(3, 4)).unwrap();
        assert!(d.items.iter().all(|it| it.mask.iter().all(|&v| v == 0)));
    }

    #[test]
    fn glyph_inside_its_box() {
        let cfg = SynthConfig {
            glyphs: (1, 1),
            ..SynthConfig::separable(5, 10)
        };
        for it in synth_generate(&cfg).unwrap().items {
            let b = it.boxes[0];
            let mut any = false;
            for ((y, x), &v) in it.mask.indexed_iter() {
                if v == 1 {
                    any = true;
                    assert!(x > b.x0 && x + 1 < b.x1 && y > b.y0 && y + 1 < b.y1);
                }
            }
            assert!(any);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = synth_generate(&SynthConfig::separable(9, 3)).unwrap();
        let b = synth_generate(&SynthConfig::separable(9, 3)).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(&SynthConfig::separable(10, 3)).unwrap();
        assert_ne!(a.items[0].image, c.items[0].image);
    }

    #[test]
    fn degenerate_canvas_rejected() {
        let cfg = SynthConfig {
            canvas: 16,
            ..SynthConfig::default()
        };
        assert!(matches!(synth_generate(&cfg), Err(Error::Argument(_))));
    }

    #[test]
    fn palette_separability() {
        for bg in [Background::Flat, Background::Gradient, Background::Noise] {
            let cfg = SynthConfig {
                background: bg,
                distractors: 2,
                ..SynthConfig::separable(2, 6)
            };
            for it in synth_generate(&cfg).unwrap().items {
                for (x, y, px) in it.image.enumerate_pixels() {
                    let fg = it.mask[[y as usize, x as usize]] == 1;
                    assert_eq!(cfg.palette.contains(&px.0), fg);
                }
            }
        }
    }

    #[test]
    fn write_produces_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let d = synth_generate(&SynthConfig::separable(1, 2)).unwrap();
        d.write(dir.path(), Split::Query).unwrap();
        let m = DatasetManifest::load(&dir.path().join("manifest.json")).unwrap();
        m.check_paths().unwrap();
        assert_eq!(m.len(), 2);
        let back = super::super::read_mask(&m.resolve(&m.entries[0].mask)).unwrap();
        assert_eq!(back, d.items[0].mask);
    }
}
