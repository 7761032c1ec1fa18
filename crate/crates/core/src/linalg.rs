//! Small vector helpers over ndarray views.

use ndarray::{Array1, ArrayView1};

pub fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// `v / |v|`, or `None` for a zero or non-finite vector.
pub fn normalized(v: ArrayView1<f64>) -> Option<Array1<f64>> {
    let n = norm(v);
    (n > 0.0 && n.is_finite()).then(|| &v / n)
}

/// Cosine similarity clamped to [-1, 1]; zero vectors score 0.
pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let d = norm(a) * norm(b);
    if d == 0.0 {
        return 0.0;
    }
    (a.dot(&b) / d).clamp(-1.0, 1.0)
}

pub fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn is_unit(v: ArrayView1<f64>, tol: f64) -> bool {
    (norm(v) - 1.0).abs() <= tol
}
