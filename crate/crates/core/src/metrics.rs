//! Foreground IoU, AUROC and evaluation reports.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::error::{Error, Result};

/// `|pred & gt| / |pred | gt|`, and 1 when both masks are empty.
pub fn fg_iou(pred: ArrayView2<u8>, gt: ArrayView2<u8>) -> Result<f64> {
    if pred.dim() != gt.dim() {
        return Err(Error::Shape(format!("mask {:?} vs {:?}", pred.dim(), gt.dim())));
    }
    let (inter, union) = counts(pred, gt);
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

fn counts(pred: ArrayView2<u8>, gt: ArrayView2<u8>) -> (u64, u64) {
    let mut inter = 0u64;
    let mut union = 0u64;
    Zip::from(&pred).and(&gt).for_each(|&p, &g| {
        let (p, g) = (p != 0, g != 0);
        inter += u64::from(p && g);
        union += u64::from(p || g);
    });
    (inter, union)
}

/// Twice the Mann-Whitney statistic (ties count one) and the pair count.
/// `None` when either class is empty.
pub fn auroc_counts(scores: &[f64], labels: &[bool]) -> Result<Option<(u128, u128)>> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("auroc scores".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count() as u128;
    let neg = labels.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut twice = 0u128;
    let mut neg_below = 0u128;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut n) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        twice += p * (2 * neg_below + n);
        neg_below += n;
        i = j;
    }
    Ok(Some((twice, 2 * pos * neg)))
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Returns `None` with a warning for single-class labels.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<Option<f64>> {
    match auroc_counts(scores, labels)? {
        Some((num, den)) => Ok(Some(num as f64 / den as f64)),
        None => {
            log::warn!("AUROC undefined: ground truth has a single class");
            Ok(None)
        }
    }
}

/// AUROC of a score map against a binary mask.
pub fn auroc_map(scores: ArrayView2<f64>, gt: ArrayView2<u8>) -> Result<Option<f64>> {
    if scores.dim() != gt.dim() {
        return Err(Error::Shape(format!("scores {:?} vs mask {:?}", scores.dim(), gt.dim())));
    }
    let s: Vec<f64> = scores.iter().copied().collect();
    let l: Vec<bool> = gt.iter().map(|&v| v != 0).collect();
    auroc(&s, &l)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub fgiou: f64,
    pub auroc: Option<f64>,
    pub pred_pixels: u64,
    pub gt_pixels: u64,
    pub total_pixels: u64,
}

impl ImageMetrics {
    pub fn compute(
        id: impl Into<String>,
        pred: ArrayView2<u8>,
        scores: ArrayView2<f64>,
        gt: ArrayView2<u8>,
    ) -> Result<Self> {
        Ok(Self {
            id: id.into(),
            fgiou: fg_iou(pred, gt)?,
            auroc: auroc_map(scores, gt)?,
            pred_pixels: pred.iter().filter(|&&v| v != 0).count() as u64,
            gt_pixels: gt.iter().filter(|&&v| v != 0).count() as u64,
            total_pixels: gt.len() as u64,
        })
    }

    pub fn density(&self) -> f64 {
        self.pred_pixels as f64 / self.total_pixels.max(1) as f64
    }
}

/// Pixel counts accumulated over a dataset for pooled aggregation.
#[derive(Debug, Clone, Default)]
pub struct PooledAccumulator {
    inter: u64,
    union: u64,
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl PooledAccumulator {
    pub fn add(&mut self, pred: ArrayView2<u8>, scores: ArrayView2<f64>, gt: ArrayView2<u8>) -> Result<()> {
        if pred.dim() != gt.dim() || scores.dim() != gt.dim() {
            return Err(Error::Shape("pooled metrics need equal shapes".into()));
        }
        let (i, u) = counts(pred, gt);
        self.inter += i;
        self.union += u;
        self.scores.extend(scores.iter());
        self.labels.extend(gt.iter().map(|&v| v != 0));
        Ok(())
    }

    pub fn fgiou(&self) -> f64 {
        if self.union == 0 {
            1.0
        } else {
            self.inter as f64 / self.union as f64
        }
    }

    pub fn auroc(&self) -> Result<Option<f64>> {
        auroc(&self.scores, &self.labels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Mean of per-image values.
    PerImage,
    /// One value over all pixels of the dataset.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub aggregation: Aggregation,
    pub images: Vec<ImageMetrics>,
    pub mean_fgiou: f64,
    /// Over images where AUROC is defined.
    pub mean_auroc: Option<f64>,
    pub count: usize,
    pub auroc_count: usize,
    pub fingerprint: serde_json::Value,
}

impl EvalReport {
    /// Per-image aggregation; images are ordered by id before summing.
    pub fn from_images(mut images: Vec<ImageMetrics>, fingerprint: serde_json::Value) -> Self {
        images.sort_by(|a, b| a.id.cmp(&b.id));
        let count = images.len();
        let mean_fgiou = if count == 0 {
            0.0
        } else {
            images.iter().map(|m| m.fgiou).sum::<f64>() / count as f64
        };
        let aurocs: Vec<f64> = images.iter().filter_map(|m| m.auroc).collect();
        let mean_auroc = (!aurocs.is_empty()).then(|| aurocs.iter().sum::<f64>() / aurocs.len() as f64);
        Self {
            aggregation: Aggregation::PerImage,
            auroc_count: aurocs.len(),
            images,
            mean_fgiou,
            mean_auroc,
            count,
            fingerprint,
        }
    }

    /// Replaces the aggregates with pooled-pixel values.
    pub fn pooled(mut self, acc: &PooledAccumulator) -> Result<Self> {
        self.aggregation = Aggregation::Pooled;
        self.mean_fgiou = acc.fgiou();
        self.mean_auroc = acc.auroc()?;
        Ok(self)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        artifact::write_json(path, self)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Format(format!("per-image csv: {e}"));
        w.write_record(["id", "fgiou", "auroc", "pred_pixels", "gt_pixels", "total_pixels"])
            .map_err(err)?;
        for m in &self.images {
            w.write_record([
                m.id.clone(),
                format!("{:.6}", m.fgiou),
                m.auroc.map(|a| format!("{a:.6}")).unwrap_or_default(),
                m.pred_pixels.to_string(),
                m.gt_pixels.to_string(),
                m.total_pixels.to_string(),
            ])
            .map_err(err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Format(format!("per-image csv: {e}")))?;
        artifact::write_bytes(path, &bytes)
    }

    /// Plain-text table with one row per image and a summary line.
    pub fn table(&self) -> String {
        let width = self.images.iter().map(|m| m.id.len()).max().unwrap_or(2).max(5);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  {:>7}  {:>7}", "image", "FgIoU", "AUROC");
        for m in &self.images {
            let a = m.auroc.map_or_else(|| "-".to_string(), |a| format!("{:.4}", a));
            let _ = writeln!(s, "{:<width$}  {:>7.4}  {:>7}", m.id, m.fgiou, a);
        }
        let a = self
            .mean_auroc
            .map_or_else(|| "-".to_string(), |a| format!("{:.4}", a));
        let label = match self.aggregation {
            Aggregation::PerImage => "mean",
            Aggregation::Pooled => "pooled",
        };
        let _ = writeln!(s, "{:<width$}  {:>7.4}  {:>7}", label, self.mean_fgiou, a);
        s
    }
}
