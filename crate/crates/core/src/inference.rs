//! Query-time scoring: prompt score maps, background suppression, fusion,
//! Canny edges and mask generation.

use std::collections::VecDeque;
use std::path::Path;

use image::RgbImage;
use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::afa::{sigmoid, PromptFeatureBank};
use crate::artifact;
use crate::backend::{Backend, ImageEncoding};
use crate::data::{unstandardize, Image, Mask};
use crate::error::{Error, Result};
use crate::score::{upsample_bilinear, Polarity, ScoreMap, Source};
use crate::visual_bank::{max_cosine, VisualFeatureBank};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CannyConfig {
    pub sigma: f64,
    /// Hysteresis thresholds as fractions of the largest gradient magnitude.
    pub low: f64,
    pub high: f64,
}

impl Default for CannyConfig {
    fn default() -> Self {
        Self {
            sigma: 1.4,
            low: 0.1,
            high: 0.3,
        }
    }
}

impl CannyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && 0.0 < self.low && self.low < self.high) {
            return Err(Error::Config(format!(
                "canny needs sigma > 0 and 0 < low < high, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskGenConfig {
    pub threshold: f64,
    pub edge_filter: bool,
    pub min_component_area: usize,
    /// Chebyshev radius by which a component is grown before looking for edges.
    pub edge_dilation: usize,
    pub canny: CannyConfig,
}

/// Default mask threshold. The literal fusion peaks at 0.5, so the cut sits
/// well below that.
pub const DEFAULT_THRESHOLD: f64 = 0.05;

impl Default for MaskGenConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            edge_filter: true,
            min_component_area: 16,
            edge_dilation: 2,
            canny: CannyConfig::default(),
        }
    }
}

impl MaskGenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "mask threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        self.canny.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    /// `V P / (V + P)`.
    Literal,
    /// `2 V P / (V + P)`, the conventional harmonic mean.
    Doubled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branches {
    Both,
    /// Visual branch fused with itself.
    Visual,
    /// Prompt branch fused with itself.
    Prompt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub mask: MaskGenConfig,
    pub fusion: Fusion,
    pub branches: Branches,
    /// Multiply each foreground map by the complement of its background map.
    pub suppress: bool,
    /// Prompt softmax temperature; `None` uses the prompt bank's.
    pub tau: Option<f64>,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            mask: MaskGenConfig::default(),
            fusion: Fusion::Literal,
            branches: Branches::Both,
            suppress: true,
            tau: None,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.tau {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("tau must be positive, got {t}")));
            }
        }
        self.mask.validate()
    }
}

/// Patch-resolution prompt maps: two-class softmax of the best foreground
/// and background cosines at temperature `tau`.
pub fn prompt_patch_scores(
    query: &ImageEncoding,
    bank: &PromptFeatureBank,
    tau: f64,
) -> Result<(ScoreMap, ScoreMap)> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::Argument(format!("temperature must be positive, got {tau}")));
    }
    let fg = bank.fg_features();
    let bg = bank.bg_features();
    if fg.nrows() == 0 || bg.nrows() == 0 {
        return Err(Error::Argument("prompt bank is empty".into()));
    }
    let map = query.last_layer();
    let sf = max_cosine(map, &fg)?;
    let sb = max_cosine(map, &bg)?;
    let pf = ndarray::Zip::from(&sf)
        .and(&sb)
        .map_collect(|&a, &b| sigmoid((a - b) / tau));
    let pb = ndarray::Zip::from(&sf)
        .and(&sb)
        .map_collect(|&a, &b| sigmoid((b - a) / tau));
    Ok((
        ScoreMap::new(pf, Source::Prompt, Polarity::Fg),
        ScoreMap::new(pb, Source::Prompt, Polarity::Bg),
    ))
}

/// Prompt maps upsampled to pixel resolution.
pub fn prompt_score_maps(
    query: &ImageEncoding,
    bank: &PromptFeatureBank,
    tau: f64,
    patch: usize,
) -> Result<(ScoreMap, ScoreMap)> {
    let (pf, pb) = prompt_patch_scores(query, bank, tau)?;
    Ok((pf.upsampled(patch), pb.upsampled(patch)))
}

/// Cellwise `fg * (1 - bg)`.
pub fn suppress(fg: &ScoreMap, bg: &ScoreMap) -> Result<ScoreMap> {
    fg.same_shape(bg)?;
    let grid = ndarray::Zip::from(&fg.grid)
        .and(&bg.grid)
        .map_collect(|&f, &b| f * (1.0 - b));
    Ok(ScoreMap::new(grid, fg.source, Polarity::Fg))
}

pub fn fuse_value(v: f64, p: f64, fusion: Fusion) -> f64 {
    let s = v + p;
    if s <= 0.0 {
        return 0.0;
    }
    let h = v * p / s;
    match fusion {
        Fusion::Literal => h,
        Fusion::Doubled => 2.0 * h,
    }
}

/// Cellwise `V P / (V + P)`, zero where both inputs are zero.
pub fn fuse(v: &ScoreMap, p: &ScoreMap) -> Result<ScoreMap> {
    fuse_with(v, p, Fusion::Literal)
}

pub fn fuse_with(v: &ScoreMap, p: &ScoreMap, fusion: Fusion) -> Result<ScoreMap> {
    v.same_shape(p)?;
    let grid = ndarray::Zip::from(&v.grid)
        .and(&p.grid)
        .map_collect(|&a, &b| fuse_value(a, b, fusion));
    Ok(ScoreMap::new(grid, Source::Fused, Polarity::Fg))
}

/// Rec. 601 luma of a standardized image, in [0, 1].
pub fn to_gray(image: &Image) -> Array2<f64> {
    let rgb = unstandardize(image);
    rgb.map_axis(Axis(2), |p| {
        (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).clamp(0.0, 1.0)
    })
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

fn convolve_separable(img: ArrayView2<f64>, kx: &[f64], ky: &[f64]) -> Array2<f64> {
    let (h, w) = img.dim();
    let rx = (kx.len() / 2) as isize;
    let ry = (ky.len() / 2) as isize;
    let tmp = Array2::from_shape_fn((h, w), |(y, x)| -> f64 {
        kx.iter()
            .enumerate()
            .map(|(i, k)| k * img[[y, clamp_idx(x as isize + i as isize - rx, w)]])
            .sum()
    });
    Array2::from_shape_fn((h, w), |(y, x)| -> f64 {
        ky.iter()
            .enumerate()
            .map(|(i, k)| k * tmp[[clamp_idx(y as isize + i as isize - ry, h), x]])
            .sum()
    })
}

/// Canny edge detector on a gray image: Gaussian smoothing, Sobel
/// gradients, non-maximum suppression and 8-connected hysteresis.
pub fn canny(gray: ArrayView2<f64>, cfg: &CannyConfig) -> Mask {
    let (h, w) = gray.dim();
    let mut out = Mask::zeros((h, w));
    if h < 3 || w < 3 {
        return out;
    }
    let k = gaussian_kernel(cfg.sigma);
    let smooth = convolve_separable(gray, &k, &k);
    let gx = convolve_separable(smooth.view(), &[-1.0, 0.0, 1.0], &[1.0, 2.0, 1.0]);
    let gy = convolve_separable(smooth.view(), &[1.0, 2.0, 1.0], &[-1.0, 0.0, 1.0]);
    let mag = ndarray::Zip::from(&gx).and(&gy).map_collect(|a, b| a.hypot(*b));
    let max = mag.iter().cloned().fold(0.0, f64::max);
    if max <= 1e-12 {
        return out;
    }
    // near-ties go to the pixel on the forward side, so a symmetric step
    // keeps exactly one of its two equal maxima
    let tol = 1e-9 * max;
    let mut thin = Array2::<f64>::zeros((h, w));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let m = mag[[y, x]];
            if m == 0.0 {
                continue;
            }
            let mut angle = gy[[y, x]].atan2(gx[[y, x]]).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            let (a, b) = if !(22.5..157.5).contains(&angle) {
                (mag[[y, x - 1]], mag[[y, x + 1]])
            } else if angle < 67.5 {
                (mag[[y + 1, x + 1]], mag[[y - 1, x - 1]])
            } else if angle < 112.5 {
                (mag[[y - 1, x]], mag[[y + 1, x]])
            } else {
                (mag[[y + 1, x - 1]], mag[[y - 1, x + 1]])
            };
            if m + tol >= a && m > b + tol {
                thin[[y, x]] = m;
            }
        }
    }
    let (low, high) = (cfg.low * max, cfg.high * max);
    let mut queue = VecDeque::new();
    for ((y, x), &v) in thin.indexed_iter() {
        if v >= high && out[[y, x]] == 0 {
            out[[y, x]] = 1;
            queue.push_back((y, x));
            while let Some((cy, cx)) = queue.pop_front() {
                for (ny, nx) in neighbors8(cy, cx, h, w) {
                    if out[[ny, nx]] == 0 && thin[[ny, nx]] >= low {
                        out[[ny, nx]] = 1;
                        queue.push_back((ny, nx));
                    }
                }
            }
        }
    }
    out
}

pub fn canny_edges(image: &Image, cfg: &CannyConfig) -> Mask {
    canny(to_gray(image).view(), cfg)
}

fn neighbors8(y: usize, x: usize, h: usize, w: usize) -> impl Iterator<Item = (usize, usize)> {
    (-1isize..=1)
        .flat_map(move |dy| (-1isize..=1).map(move |dx| (dy, dx)))
        .filter(|&(dy, dx)| dy != 0 || dx != 0)
        .filter_map(move |(dy, dx)| {
            let ny = y as isize + dy;
            let nx = x as isize + dx;
            (ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w)
                .then_some((ny as usize, nx as usize))
        })
}

/// 8-connected components of the nonzero cells, in raster order of their
/// first pixel.
pub fn connected_components(mask: &Mask) -> Vec<Vec<(usize, usize)>> {
    let (h, w) = mask.dim();
    let mut seen = Array2::<bool>::from_elem((h, w), false);
    let mut comps = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if mask[[y, x]] == 0 || seen[[y, x]] {
                continue;
            }
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([(y, x)]);
            seen[[y, x]] = true;
            while let Some((cy, cx)) = queue.pop_front() {
                comp.push((cy, cx));
                for (ny, nx) in neighbors8(cy, cx, h, w) {
                    if mask[[ny, nx]] != 0 && !seen[[ny, nx]] {
                        seen[[ny, nx]] = true;
                        queue.push_back((ny, nx));
                    }
                }
            }
            comps.push(comp);
        }
    }
    comps
}

fn touches_edges(comp: &[(usize, usize)], edges: &Mask, r: usize) -> bool {
    let (h, w) = edges.dim();
    let r = r as isize;
    comp.iter().any(|&(y, x)| {
        (-r..=r).any(|dy| {
            (-r..=r).any(|dx| {
                let ny = y as isize + dy;
                let nx = x as isize + dx;
                ny >= 0
                    && nx >= 0
                    && (ny as usize) < h
                    && (nx as usize) < w
                    && edges[[ny as usize, nx as usize]] != 0
            })
        })
    })
}

/// Thresholds `s`, then keeps the 8-connected components that are large
/// enough and, with the edge filter on, lie within `edge_dilation` pixels
/// of an edge.
pub fn generate_mask(s: &ScoreMap, edges: &Mask, cfg: &MaskGenConfig) -> Result<Mask> {
    if cfg.edge_filter && edges.dim() != s.dim() {
        return Err(Error::Shape(format!(
            "edge map {:?} vs score map {:?}",
            edges.dim(),
            s.dim()
        )));
    }
    let above = s.grid.mapv(|v| u8::from(v >= cfg.threshold));
    let mut out = Mask::zeros(s.dim());
    for comp in connected_components(&above) {
        if comp.len() < cfg.min_component_area {
            continue;
        }
        if cfg.edge_filter && !touches_edges(&comp, edges, cfg.edge_dilation) {
            continue;
        }
        for (y, x) in comp {
            out[[y, x]] = 1;
        }
    }
    Ok(out)
}

/// Every intermediate of one query, at pixel resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedResult {
    pub s: ScoreMap,
    pub v_f: ScoreMap,
    pub v_b: ScoreMap,
    pub p_f: ScoreMap,
    pub p_b: ScoreMap,
    pub v_f_suppressed: ScoreMap,
    pub p_f_suppressed: ScoreMap,
    pub mask: Mask,
    pub edges: Mask,
}

/// Extends or crops `map` to `(h, w)`, repeating border values.
fn fit_to(map: ScoreMap, h: usize, w: usize) -> ScoreMap {
    if map.dim() == (h, w) {
        return map;
    }
    let (mh, mw) = map.dim();
    let grid = Array2::from_shape_fn((h, w), |(y, x)| map.grid[[y.min(mh - 1), x.min(mw - 1)]]);
    ScoreMap { grid, ..map }
}

/// Runs the full query pipeline against both banks.
pub fn segment(
    image: &Image,
    visual: &VisualFeatureBank,
    prompts: &PromptFeatureBank,
    backend: &dyn Backend,
    cfg: &InferenceConfig,
) -> Result<FusedResult> {
    cfg.validate()?;
    visual.check_backend(backend)?;
    prompts.check_backend(backend)?;
    let (h, w, _) = image.dim();
    let enc = backend.encode_image(image.view())?;
    let patch = backend.descriptor().patch_size;
    let (vf, vb) = visual.patch_scores(&enc)?;
    let tau = cfg.tau.unwrap_or(prompts.tau());
    let (pf, pb) = prompt_patch_scores(&enc, prompts, tau)?;
    let up = |m: ScoreMap| fit_to(ScoreMap::new(upsample_bilinear(&m.grid, patch), m.source, m.polarity), h, w);
    let (v_f, v_b, p_f, p_b) = (up(vf), up(vb), up(pf), up(pb));
    let (v_f_suppressed, p_f_suppressed) = if cfg.suppress {
        (suppress(&v_f, &v_b)?, suppress(&p_f, &p_b)?)
    } else {
        (v_f.clone(), p_f.clone())
    };
    let s = match cfg.branches {
        Branches::Both => fuse_with(&v_f_suppressed, &p_f_suppressed, cfg.fusion)?,
        Branches::Visual => fuse_with(&v_f_suppressed, &v_f_suppressed, cfg.fusion)?,
        Branches::Prompt => fuse_with(&p_f_suppressed, &p_f_suppressed, cfg.fusion)?,
    };
    let edges = if cfg.mask.edge_filter {
        canny_edges(image, &cfg.mask.canny)
    } else {
        Mask::zeros((h, w))
    };
    let mask = generate_mask(&s, &edges, &cfg.mask)?;
    Ok(FusedResult {
        s,
        v_f,
        v_b,
        p_f,
        p_b,
        v_f_suppressed,
        p_f_suppressed,
        mask,
        edges,
    })
}

impl FusedResult {
    fn maps(&self) -> [(&'static str, &ScoreMap); 7] {
        [
            ("s", &self.s),
            ("v_f", &self.v_f),
            ("v_b", &self.v_b),
            ("p_f", &self.p_f),
            ("p_b", &self.p_b),
            ("v_f_suppressed", &self.v_f_suppressed),
            ("p_f_suppressed", &self.p_f_suppressed),
        ]
    }

    /// Canonical float32 serialization of every map plus the masks.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut bytes = artifact::f32_bytes(self.maps().iter().map(|(_, m)| m.grid.view()));
        bytes.extend(self.mask.iter());
        bytes.extend(self.edges.iter());
        bytes
    }

    /// Writes each map as a viridis heatmap PNG.
    pub fn write_heatmaps(&self, dir: &Path) -> Result<()> {
        for (name, map) in self.maps() {
            write_heatmap(&dir.join(format!("{name}.png")), &map.grid)?;
        }
        crate::data::write_mask(&dir.join("edges.png"), &self.edges)
    }
}

/// Maps [0, 1] values through viridis.
pub fn heatmap(grid: &Array2<f64>) -> RgbImage {
    let (h, w) = grid.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let v = grid[[y as usize, x as usize]];
        let c = colorous::VIRIDIS.eval_continuous(if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 });
        image::Rgb([c.r, c.g, c.b])
    })
}

pub fn write_heatmap(path: &Path, grid: &Array2<f64>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    heatmap(grid).save(path).map_err(|e| Error::image(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn map(grid: Array2<f64>) -> ScoreMap {
        ScoreMap::new(grid, Source::Visual, Polarity::Fg)
    }

    #[test]
    fn suppress_examples() {
        let out = suppress(&map(array![[0.8]]), &map(array![[0.25]])).unwrap();
        assert!((out.grid[[0, 0]] - 0.6).abs() < 1e-12);
        let out = suppress(&map(array![[0.8, 0.3]]), &map(array![[1.0, 0.0]])).unwrap();
        assert_eq!(out.grid, array![[0.0, 0.3]]);
        assert!(suppress(&map(array![[0.8]]), &map(array![[0.1, 0.2]])).is_err());
    }

    #[test]
    fn fuse_examples() {
        let f = |v, p| fuse(&map(array![[v]]), &map(array![[p]])).unwrap().grid[[0, 0]];
        assert_eq!(f(0.5, 0.5), 0.25);
        assert_eq!(f(0.0, 0.7), 0.0);
        assert_eq!(f(0.0, 0.0), 0.0);
        assert_eq!(f(1.0, 1.0), 0.5);
        assert_eq!(fuse_value(1.0, 1.0, Fusion::Doubled), 1.0);
    }

    #[test]
    fn canny_constant_image_is_empty() {
        let g = Array2::from_elem((20, 20), 0.4);
        assert!(canny(g.view(), &CannyConfig::default()).iter().all(|&v| v == 0));
    }

    #[test]
    fn canny_vertical_step_is_one_pixel_wide() {
        let g = Array2::from_shape_fn((24, 24), |(_, x)| if x < 12 { 0.1 } else { 0.9 });
        let e = canny(g.view(), &CannyConfig::default());
        for y in 1..23 {
            let cols: Vec<usize> = (0..24).filter(|&x| e[[y, x]] == 1).collect();
            assert_eq!(cols.len(), 1, "row {y}: {cols:?}");
            assert!(cols[0] == 11 || cols[0] == 12);
        }
    }

    fn score(grid: Array2<f64>) -> ScoreMap {
        ScoreMap::new(grid, Source::Fused, Polarity::Fg)
    }

    #[test]
    fn mask_extremes() {
        let cfg = MaskGenConfig {
            edge_filter: false,
            min_component_area: 0,
            ..MaskGenConfig::default()
        };
        let none = Mask::zeros((8, 8));
        let m = generate_mask(&score(Array2::zeros((8, 8))), &none, &cfg).unwrap();
        assert!(m.iter().all(|&v| v == 0));
        let m = generate_mask(&score(Array2::ones((8, 8))), &none, &cfg).unwrap();
        assert!(m.iter().all(|&v| v == 1));
    }

    #[test]
    fn edge_filter_keeps_edged_blob_only() {
        let mut s = Array2::zeros((20, 30));
        s.slice_mut(ndarray::s![2..8, 2..8]).fill(0.9);
        s.slice_mut(ndarray::s![12..18, 20..26]).fill(0.9);
        let mut edges = Mask::zeros((20, 30));
        edges[[5, 9]] = 1;
        let cfg = MaskGenConfig::default();
        let m = generate_mask(&score(s), &edges, &cfg).unwrap();
        assert_eq!(m.slice(ndarray::s![2..8, 2..8]).sum(), 36);
        assert_eq!(m.slice(ndarray::s![12..18, 20..26]).sum(), 0);
    }

    #[test]
    fn small_components_dropped() {
        let mut s = Array2::zeros((10, 10));
        s[[1, 1]] = 1.0;
        s.slice_mut(ndarray::s![4..9, 4..9]).fill(1.0);
        let cfg = MaskGenConfig {
            edge_filter: false,
            ..MaskGenConfig::default()
        };
        let m = generate_mask(&score(s), &Mask::zeros((10, 10)), &cfg).unwrap();
        assert_eq!(m[[1, 1]], 0);
        assert_eq!(m.sum(), 25);
    }

    #[test]
    fn diagonal_pixels_are_connected() {
        let m = array![[1u8, 0, 0], [0, 1, 0], [0, 0, 1]];
        assert_eq!(connected_components(&m).len(), 1);
    }

    #[test]
    fn heatmap_endpoints_are_viridis() {
        let img = heatmap(&array![[0.0, 1.0]]);
        assert_eq!(img.get_pixel(0, 0).0, [68, 1, 84]);
        assert_eq!(img.get_pixel(1, 0).0, [253, 231, 37]);
    }
}
