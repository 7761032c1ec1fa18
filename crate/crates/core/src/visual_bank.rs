//! Visual memory of masked support features and query scoring against it.

use std::path::Path;

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::backend::{Backend, ImageEncoding};
use crate::data::{Mask, SupportSample};
use crate::error::{Error, Result};
use crate::linalg;
use crate::score::{Polarity, ScoreMap, Source};

pub const BANK_FORMAT_VERSION: u32 = 1;

/// Which patches count as foreground (or background) for a binary mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchRule {
    /// Minimum fraction of a patch's pixels that must carry the label; any
    /// value at or below `1 / patch_area` means "at least one pixel".
    pub min_fraction: f64,
}

impl Default for PatchRule {
    fn default() -> Self {
        Self { min_fraction: 0.0 }
    }
}

impl PatchRule {
    /// Per-patch membership of pixels equal to `label`.
    pub fn membership(&self, mask: &Mask, patch: usize, label: u8) -> Array2<bool> {
        let (h, w) = mask.dim();
        let (gh, gw) = (h / patch, w / patch);
        let need = ((self.min_fraction * (patch * patch) as f64).ceil() as usize).max(1);
        let mut counts = Array2::<usize>::zeros((gh, gw));
        for ((y, x), &v) in mask.indexed_iter() {
            if v == label && y / patch < gh && x / patch < gw {
                counts[[y / patch, x / patch]] += 1;
            }
        }
        counts.mapv(|c| c >= need)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureState {
    Complete,
    EmptyForeground,
    EmptyBackground,
}

/// Unit-norm patch vectors of one support, per tapped layer.
#[derive(Debug, Clone)]
pub struct MaskedFeatures {
    pub fg: Vec<Array2<f64>>,
    pub bg: Vec<Array2<f64>>,
    /// Renormalized mean of the kept foreground vectors per layer.
    pub pooled_fg: Option<Vec<Array1<f64>>>,
    pub pooled_bg: Option<Vec<Array1<f64>>>,
    pub state: FeatureState,
    pub fg_encoding: ImageEncoding,
    pub bg_encoding: ImageEncoding,
}

fn keep_rows(map: &ndarray::Array3<f64>, keep: &Array2<bool>) -> Array2<f64> {
    let dim = map.shape()[2];
    let rows: Vec<Array1<f64>> = keep
        .indexed_iter()
        .filter(|(_, &k)| k)
        .map(|((y, x), _)| {
            let v = map.slice(ndarray::s![y, x, ..]);
            linalg::normalized(v).unwrap_or_else(|| Array1::zeros(dim))
        })
        .collect();
    stack_rows(&rows, dim)
}

fn stack_rows(rows: &[Array1<f64>], dim: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), dim));
    for (i, r) in rows.iter().enumerate() {
        out.row_mut(i).assign(r);
    }
    out
}

fn pooled(vectors: &Array2<f64>) -> Option<Array1<f64>> {
    if vectors.nrows() == 0 {
        return None;
    }
    linalg::normalized(vectors.mean_axis(Axis(0))?.view())
}

/// Encodes `I * m` and `I * (1 - m)` and keeps the patch vectors that
/// overlap each label.
pub fn extract_masked_features(
    sample: &SupportSample,
    backend: &dyn Backend,
    rule: &PatchRule,
) -> Result<MaskedFeatures> {
    let patch = backend.descriptor().patch_size;
    let mut fg_img = sample.image.clone();
    let mut bg_img = sample.image.clone();
    for ((y, x, _), v) in fg_img.indexed_iter_mut() {
        if sample.mask[[y, x]] == 0 {
            *v = 0.0;
        }
    }
    for ((y, x, _), v) in bg_img.indexed_iter_mut() {
        if sample.mask[[y, x]] != 0 {
            *v = 0.0;
        }
    }
    let fg_encoding = backend.encode_image(fg_img.view())?;
    let bg_encoding = backend.encode_image(bg_img.view())?;
    let fg_keep = rule.membership(&sample.mask, patch, 1);
    let bg_keep = rule.membership(&sample.mask, patch, 0);

    let fg: Vec<Array2<f64>> = fg_encoding
        .layer_maps
        .iter()
        .map(|m| keep_rows(m, &fg_keep))
        .collect();
    let bg: Vec<Array2<f64>> = bg_encoding
        .layer_maps
        .iter()
        .map(|m| keep_rows(m, &bg_keep))
        .collect();
    let pooled_fg: Option<Vec<_>> = fg.iter().map(pooled).collect();
    let pooled_bg: Option<Vec<_>> = bg.iter().map(pooled).collect();
    let state = if pooled_fg.is_none() {
        log::warn!("support {} has an empty foreground", sample.id);
        FeatureState::EmptyForeground
    } else if pooled_bg.is_none() {
        log::warn!("support {} has an empty background", sample.id);
        FeatureState::EmptyBackground
    } else {
        FeatureState::Complete
    };
    Ok(MaskedFeatures {
        fg,
        bg,
        pooled_fg,
        pooled_bg,
        state,
        fg_encoding,
        bg_encoding,
    })
}

/// Foreground and background memories of one tapped layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMemory {
    pub fg: Array2<f64>,
    pub bg: Array2<f64>,
    /// One pooled foreground vector per support with a foreground.
    pub pooled_fg: Array2<f64>,
    pub pooled_bg: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisualFeatureBank {
    pub layers: Vec<LayerMemory>,
    pub support_ids: Vec<String>,
    /// Support owning each pooled foreground row, shared by all layers.
    pub pooled_fg_ids: Vec<String>,
    pub pooled_bg_ids: Vec<String>,
    pub patch_size: usize,
    pub backend_fingerprint: String,
}

pub fn build_bank(
    supports: &[SupportSample],
    backend: &dyn Backend,
    rule: &PatchRule,
) -> Result<VisualFeatureBank> {
    if supports.is_empty() {
        return Err(Error::Build("no support samples".into()));
    }
    let extracted = supports
        .iter()
        .map(|s| extract_masked_features(s, backend, rule))
        .collect::<Result<Vec<_>>>()?;
    if extracted
        .iter()
        .all(|f| f.state == FeatureState::EmptyForeground)
    {
        return Err(Error::Build("every support has an empty foreground mask".into()));
    }
    let dim = backend.descriptor().feature_dim;
    let n_layers = backend.descriptor().tapped_layer_indices.len();
    let layers = (0..n_layers)
        .map(|l| {
            let cat = |pick: &dyn Fn(&MaskedFeatures) -> ArrayView2<f64>| -> Array2<f64> {
                let views: Vec<_> = extracted.iter().map(pick).collect();
                concatenate(Axis(0), &views).unwrap_or_else(|_| Array2::zeros((0, dim)))
            };
            let pooled_fg: Vec<Array1<f64>> = extracted
                .iter()
                .filter_map(|f| f.pooled_fg.as_ref().map(|p| p[l].clone()))
                .collect();
            let pooled_bg: Vec<Array1<f64>> = extracted
                .iter()
                .filter_map(|f| f.pooled_bg.as_ref().map(|p| p[l].clone()))
                .collect();
            LayerMemory {
                fg: cat(&|f| f.fg[l].view()),
                bg: cat(&|f| f.bg[l].view()),
                pooled_fg: stack_rows(&pooled_fg, dim),
                pooled_bg: stack_rows(&pooled_bg, dim),
            }
        })
        .collect();
    let owners = |has: &dyn Fn(&MaskedFeatures) -> bool| -> Vec<String> {
        supports
            .iter()
            .zip(&extracted)
            .filter(|(_, f)| has(f))
            .map(|(s, _)| s.id.clone())
            .collect()
    };
    Ok(VisualFeatureBank {
        layers,
        support_ids: supports.iter().map(|s| s.id.clone()).collect(),
        pooled_fg_ids: owners(&|f| f.pooled_fg.is_some()),
        pooled_bg_ids: owners(&|f| f.pooled_bg.is_some()),
        patch_size: backend.descriptor().patch_size,
        backend_fingerprint: backend.fingerprint().to_string(),
    })
}

/// Per-patch maximum cosine against `memory` rows, mapped to `(1 + cos) / 2`.
/// An empty memory scores 0 everywhere.
pub fn max_cosine_scores(map: &ndarray::Array3<f64>, memory: &Array2<f64>) -> Result<Array2<f64>> {
    if memory.nrows() == 0 {
        let (gh, gw, _) = map.dim();
        return Ok(Array2::zeros((gh, gw)));
    }
    Ok(max_cosine(map, memory)?.mapv(|c| (1.0 + c) / 2.0))
}

/// Per-patch maximum cosine similarity against non-empty `memory`.
pub fn max_cosine(map: &ndarray::Array3<f64>, memory: &Array2<f64>) -> Result<Array2<f64>> {
    let (gh, gw, dim) = map.dim();
    if memory.nrows() == 0 {
        return Err(Error::Argument("empty feature memory".into()));
    }
    if memory.ncols() != dim {
        return Err(Error::Shape(format!(
            "query dim {dim} vs memory dim {}",
            memory.ncols()
        )));
    }
    let mut queries = map
        .to_shape((gh * gw, dim))
        .expect("grid reshape")
        .to_owned();
    for mut row in queries.rows_mut() {
        let n = linalg::norm(row.view());
        if n > 0.0 {
            row /= n;
        }
    }
    let mem_norms: Array1<f64> = memory.rows().into_iter().map(|r| linalg::norm(r)).collect();
    let sims = queries.dot(&memory.t());
    let best = sims.rows().into_iter().map(|r| {
        r.iter()
            .zip(mem_norms.iter())
            .map(|(s, n)| if *n > 0.0 { (s / n).clamp(-1.0, 1.0) } else { 0.0 })
            .fold(f64::NEG_INFINITY, f64::max)
    });
    Ok(Array2::from_shape_vec((gh, gw), best.collect()).unwrap())
}

impl VisualFeatureBank {
    pub fn dim(&self) -> usize {
        self.layers[0].fg.ncols()
    }

    pub fn counts(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.fg.nrows(), l.bg.nrows())).collect()
    }

    /// Patch-resolution foreground and background maps, averaged over layers.
    pub fn patch_scores(&self, query: &ImageEncoding) -> Result<(ScoreMap, ScoreMap)> {
        if query.layer_maps.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "query has {} layers, bank has {}",
                query.layer_maps.len(),
                self.layers.len()
            )));
        }
        let (gh, gw) = query.grid_shape();
        let mut vf = Array2::zeros((gh, gw));
        let mut vb = Array2::zeros((gh, gw));
        for (map, mem) in query.layer_maps.iter().zip(&self.layers) {
            vf += &max_cosine_scores(map, &mem.fg)?;
            vb += &max_cosine_scores(map, &mem.bg)?;
        }
        let n = self.layers.len() as f64;
        Ok((
            ScoreMap::new(vf / n, Source::Visual, Polarity::Fg),
            ScoreMap::new(vb / n, Source::Visual, Polarity::Bg),
        ))
    }

    /// Foreground and background maps upsampled to pixel resolution.
    pub fn score_maps(&self, query: &ImageEncoding) -> Result<(ScoreMap, ScoreMap)> {
        let (vf, vb) = self.patch_scores(query)?;
        Ok((vf.upsampled(self.patch_size), vb.upsampled(self.patch_size)))
    }

    pub fn check_backend(&self, backend: &dyn Backend) -> Result<()> {
        if self.backend_fingerprint != backend.fingerprint() {
            return Err(Error::BackendMismatch {
                expected: self.backend_fingerprint.clone(),
                found: backend.fingerprint().to_string(),
            });
        }
        Ok(())
    }

    fn blocks(&self) -> Vec<ArrayView2<'_, f64>> {
        self.layers
            .iter()
            .flat_map(|l| [l.fg.view(), l.bg.view(), l.pooled_fg.view(), l.pooled_bg.view()])
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let bytes = artifact::f32_bytes(self.blocks());
        let meta = VisualBankMeta {
            format_version: BANK_FORMAT_VERSION,
            kind: "visual".into(),
            backend_fingerprint: self.backend_fingerprint.clone(),
            dim: self.dim(),
            patch_size: self.patch_size,
            layers: self
                .layers
                .iter()
                .map(|l| LayerCounts {
                    fg: l.fg.nrows(),
                    bg: l.bg.nrows(),
                    pooled_fg: l.pooled_fg.nrows(),
                    pooled_bg: l.pooled_bg.nrows(),
                })
                .collect(),
            support_ids: self.support_ids.clone(),
            pooled_fg_ids: self.pooled_fg_ids.clone(),
            pooled_bg_ids: self.pooled_bg_ids.clone(),
            vectors_sha256: artifact::sha256_hex(&bytes),
        };
        artifact::write_bytes(&dir.join("vectors.f32"), &bytes)?;
        artifact::write_json(&dir.join("bank.json"), &meta)
    }

    /// Loads a bank and refuses it if it was built with another backend.
    pub fn load(dir: &Path, backend: &dyn Backend) -> Result<Self> {
        let bank = Self::load_unchecked(dir)?;
        bank.check_backend(backend)?;
        Ok(bank)
    }

    pub fn load_unchecked(dir: &Path) -> Result<Self> {
        let meta = read_visual_meta(dir)?;
        let shapes: Vec<(usize, usize)> = meta
            .layers
            .iter()
            .flat_map(|c| [c.fg, c.bg, c.pooled_fg, c.pooled_bg].map(|n| (n, meta.dim)))
            .collect();
        let path = dir.join("vectors.f32");
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if artifact::sha256_hex(&bytes) != meta.vectors_sha256 {
            return Err(Error::Format(format!("{}: checksum mismatch", path.display())));
        }
        let mut blocks = artifact::read_f32_blocks(&path, &shapes)?.into_iter();
        let layers = meta
            .layers
            .iter()
            .map(|_| LayerMemory {
                fg: blocks.next().unwrap(),
                bg: blocks.next().unwrap(),
                pooled_fg: blocks.next().unwrap(),
                pooled_bg: blocks.next().unwrap(),
            })
            .collect();
        Ok(Self {
            layers,
            support_ids: meta.support_ids,
            pooled_fg_ids: meta.pooled_fg_ids,
            pooled_bg_ids: meta.pooled_bg_ids,
            patch_size: meta.patch_size,
            backend_fingerprint: meta.backend_fingerprint,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerCounts {
    pub fg: usize,
    pub bg: usize,
    pub pooled_fg: usize,
    pub pooled_bg: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VisualBankMeta {
    pub format_version: u32,
    pub kind: String,
    pub backend_fingerprint: String,
    pub dim: usize,
    pub patch_size: usize,
    pub layers: Vec<LayerCounts>,
    pub support_ids: Vec<String>,
    pub pooled_fg_ids: Vec<String>,
    pub pooled_bg_ids: Vec<String>,
    pub vectors_sha256: String,
}

pub fn read_visual_meta(dir: &Path) -> Result<VisualBankMeta> {
    let meta: VisualBankMeta = artifact::read_json(&dir.join("bank.json"))?;
    if meta.format_version != BANK_FORMAT_VERSION || meta.kind != "visual" {
        return Err(Error::Format(format!(
            "{}: not a version-{BANK_FORMAT_VERSION} visual bank",
            dir.display()
        )));
    }
    Ok(meta)
}
