//! Score maps shared by the visual and prompt branches.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Visual,
    Prompt,
    Fused,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Fg,
    Bg,
}

/// Grid of scores in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    pub grid: Array2<f64>,
    pub source: Source,
    pub polarity: Polarity,
}

impl ScoreMap {
    pub fn new(grid: Array2<f64>, source: Source, polarity: Polarity) -> Self {
        debug_assert!(
            grid.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)),
            "score outside [0, 1]"
        );
        Self {
            grid,
            source,
            polarity,
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.grid.dim()
    }

    pub fn same_shape(&self, other: &ScoreMap) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::Shape(format!(
                "score maps {:?} and {:?} differ",
                self.dim(),
                other.dim()
            )));
        }
        Ok(())
    }

    pub fn upsampled(&self, factor: usize) -> Self {
        Self {
            grid: upsample_bilinear(&self.grid, factor),
            ..*self
        }
    }
}

/// Bilinear upsampling by an integer factor with half-pixel centers
/// (`align_corners = false`), clamping at the borders.
pub fn upsample_bilinear(grid: &Array2<f64>, factor: usize) -> Array2<f64> {
    let (h, w) = grid.dim();
    if factor == 1 || h == 0 || w == 0 {
        return grid.clone();
    }
    let axis = |n: usize, out: usize| -> Vec<(usize, usize, f64)> {
        (0..out)
            .map(|i| {
                let src = ((i as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (n - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(n - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let ys = axis(h, h * factor);
    let xs = axis(w, w * factor);
    Array2::from_shape_fn((h * factor, w * factor), |(y, x)| {
        let (y0, y1, ty) = ys[y];
        let (x0, x1, tx) = xs[x];
        let top = grid[[y0, x0]] * (1.0 - tx) + grid[[y0, x1]] * tx;
        let bottom = grid[[y1, x0]] * (1.0 - tx) + grid[[y1, x1]] * tx;
        top * (1.0 - ty) + bottom * ty
    })
}
