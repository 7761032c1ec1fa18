//! Seeded linear encoder pair with closed-form gradients.
//!
//! Image path: every pixel is lifted by a fixed bank of random Fourier
//! features `sqrt(2/S) * cos(w_k . x + b_k)`, averaged over each patch, then
//! projected by one fixed matrix per tapped layer. Text path: mean of the
//! token embeddings, an orthogonal projection, then L2 normalization.
//!
//! An all-zero image therefore encodes every patch of layer `l` as the bias
//! feature `W_l * sqrt(2/S) * cos(b)`.
//!
//! Selected color words can be grounded: their token embedding is chosen so
//! that the projected text direction equals the last-layer feature of a flat
//! patch of that color, which gives prototype prompts a zero-shot meaning.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendDescriptor, ImageEncoding, TextEmbedding, Vocabulary};
use crate::error::{Error, Result};
use crate::linalg;

/// Color words grounded by the default toy backend, as sRGB triplets.
pub const DEFAULT_GROUNDING: &[(&str, [u8; 3])] = &[
    ("black", [20, 20, 20]),
    ("white", [240, 240, 240]),
    ("red", [220, 40, 40]),
    ("orange", [240, 140, 30]),
    ("yellow", [240, 220, 40]),
    ("gold", [212, 175, 55]),
    ("green", [40, 170, 60]),
    ("blue", [40, 80, 200]),
    ("purple", [130, 50, 170]),
    ("pink", [240, 130, 180]),
    ("brown", [120, 80, 40]),
    ("gray", [128, 128, 128]),
    ("grey", [128, 128, 128]),
    ("silver", [192, 192, 192]),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub seed: u64,
    pub dim: usize,
    pub patch: usize,
    /// Number of random Fourier features per pixel.
    pub stats_dim: usize,
    /// Standard deviation of the Fourier frequencies, in standardized units.
    pub bandwidth: f64,
    pub temperature: f64,
    pub context_length: usize,
    pub grounding: Vec<(String, [u8; 3])>,
    pub grounding_scale: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dim: 64,
            patch: 4,
            stats_dim: 128,
            bandwidth: 0.6,
            temperature: 0.01,
            context_length: 77,
            grounding: DEFAULT_GROUNDING
                .iter()
                .map(|(w, c)| (w.to_string(), *c))
                .collect(),
            grounding_scale: 3.0,
        }
    }
}

/// Toy backend with default settings for the given seed, width and patch.
pub fn make_toy_backend(seed: u64, dim: usize, patch: usize) -> Result<LinearBackend> {
    LinearBackend::toy(&ToyConfig {
        seed,
        dim,
        patch,
        ..ToyConfig::default()
    })
}

#[derive(Debug, Clone)]
pub struct LinearBackend {
    pub(super) descriptor: BackendDescriptor,
    pub(super) vocab: Vocabulary,
    /// `vocab.size() x dim`
    pub(super) token_table: Array2<f64>,
    /// `dim x dim`
    pub(super) text_proj: Array2<f64>,
    /// `stats_dim x 3`
    pub(super) rff_freq: Array2<f64>,
    pub(super) rff_phase: Array1<f64>,
    /// One `dim x stats_dim` matrix per tapped layer.
    pub(super) layer_proj: Vec<Array2<f64>>,
    fingerprint: String,
}

fn to_f32_grid(a: Array2<f64>) -> Array2<f64> {
    a.mapv(|v| v as f32 as f64)
}

fn gaussian(rng: &mut ChaCha8Rng, shape: (usize, usize), scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.sample::<f64, _>(StandardNormal) * scale)
}

impl LinearBackend {
    pub fn toy(cfg: &ToyConfig) -> Result<Self> {
        if cfg.dim < 8 {
            return Err(Error::Argument(format!("toy dim must be >= 8, got {}", cfg.dim)));
        }
        if cfg.patch == 0 || cfg.stats_dim == 0 {
            return Err(Error::Argument("patch and stats_dim must be positive".into()));
        }
        let dim = cfg.dim;
        let s = cfg.stats_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let vocab = Vocabulary::toy();

        let mut token_table = gaussian(&mut rng, (vocab.size(), dim), 1.0 / (dim as f64).sqrt());
        let raw = gaussian(&mut rng, (dim, dim), 1.0);
        let q = DMatrix::from_fn(dim, dim, |i, j| raw[[i, j]]).qr().q();
        let text_proj = Array2::from_shape_fn((dim, dim), |(i, j)| q[(i, j)]);
        let rff_freq = gaussian(&mut rng, (s, 3), cfg.bandwidth);
        let rff_phase =
            Array1::from_shape_simple_fn(s, || rng.random::<f64>() * std::f64::consts::TAU);
        let layer_proj: Vec<Array2<f64>> = (0..2)
            .map(|_| to_f32_grid(gaussian(&mut rng, (dim, s), 1.0 / (dim as f64).sqrt())))
            .collect();
        let rff_freq = to_f32_grid(rff_freq);
        let rff_phase = rff_phase.mapv(|v| v as f32 as f64);
        let text_proj = to_f32_grid(text_proj);

        let last = layer_proj.last().unwrap();
        for (word, rgb) in &cfg.grounding {
            if !vocab.contains(word) {
                return Err(Error::Config(format!("grounded word {word:?} not in vocabulary")));
            }
            let x = crate::data::standardize_rgb(*rgb);
            let feat = last.dot(&pixel_features(&rff_freq, &rff_phase, &x));
            let dir = linalg::normalized(feat.view())
                .ok_or_else(|| Error::Numeric(format!("grounding feature for {word}")))?;
            let emb = text_proj.t().dot(&dir) * cfg.grounding_scale;
            let id = vocab.word_id(word) as usize;
            token_table.row_mut(id).assign(&emb);
        }
        let token_table = to_f32_grid(token_table);

        let descriptor = BackendDescriptor {
            name: format!("toy-linear-s{}", cfg.seed),
            feature_dim: dim,
            context_length: cfg.context_length,
            patch_size: cfg.patch,
            tapped_layer_indices: vec![0, 1],
            temperature: cfg.temperature,
            supports_text_gradients: true,
        };
        Self::from_parts(
            descriptor,
            vocab,
            token_table,
            text_proj,
            rff_freq,
            rff_phase,
            layer_proj,
        )
    }

    pub(super) fn from_parts(
        descriptor: BackendDescriptor,
        vocab: Vocabulary,
        token_table: Array2<f64>,
        text_proj: Array2<f64>,
        rff_freq: Array2<f64>,
        rff_phase: Array1<f64>,
        layer_proj: Vec<Array2<f64>>,
    ) -> Result<Self> {
        descriptor.validate()?;
        let dim = descriptor.feature_dim;
        let s = rff_phase.len();
        let shape_err = |what: &str| Err(Error::Shape(format!("linear backend tensor {what}")));
        if token_table.dim() != (vocab.size(), dim) {
            return shape_err("token_table");
        }
        if text_proj.dim() != (dim, dim) {
            return shape_err("text_proj");
        }
        if rff_freq.dim() != (s, 3) {
            return shape_err("rff_freq");
        }
        if layer_proj.len() != descriptor.tapped_layer_indices.len()
            || layer_proj.iter().any(|w| w.dim() != (dim, s))
        {
            return shape_err("layer_proj");
        }
        let mut backend = Self {
            descriptor,
            vocab,
            token_table,
            text_proj,
            rff_freq,
            rff_phase,
            layer_proj,
            fingerprint: String::new(),
        };
        backend.fingerprint = backend.compute_fingerprint();
        Ok(backend)
    }

    pub(super) fn tensors(&self) -> Vec<(String, ArrayView2<'_, f64>)> {
        let mut out = vec![
            ("token_table".to_string(), self.token_table.view()),
            ("text_proj".to_string(), self.text_proj.view()),
            ("rff_freq".to_string(), self.rff_freq.view()),
            (
                "rff_phase".to_string(),
                self.rff_phase.view().insert_axis(Axis(0)),
            ),
        ];
        for (i, w) in self.layer_proj.iter().enumerate() {
            out.push((format!("layer_{i}"), w.view()));
        }
        out
    }

    fn compute_fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.descriptor).expect("descriptor serializes"));
        for w in self.vocab.words() {
            h.update(w.as_bytes());
            h.update([0u8]);
        }
        h.update(self.vocab.oov_buckets().to_le_bytes());
        for (name, t) in self.tensors() {
            h.update(name.as_bytes());
            for v in t.iter() {
                h.update((*v as f32).to_le_bytes());
            }
        }
        hex::encode(&h.finalize()[..12])
    }

    /// Layer-`layer` feature of a flat patch with the given standardized color.
    pub fn flat_patch_feature(&self, layer: usize, rgb: &[f64; 3]) -> Array1<f64> {
        self.layer_proj[layer].dot(&pixel_features(&self.rff_freq, &self.rff_phase, rgb))
    }

    /// Features every patch of an all-zero image maps to, per layer.
    pub fn bias_features(&self) -> Vec<Array1<f64>> {
        (0..self.layer_proj.len())
            .map(|l| self.flat_patch_feature(l, &[0.0; 3]))
            .collect()
    }

    pub fn text_projection(&self) -> ArrayView2<'_, f64> {
        self.text_proj.view()
    }
}

fn pixel_features(freq: &Array2<f64>, phase: &Array1<f64>, x: &[f64; 3]) -> Array1<f64> {
    let scale = (2.0 / phase.len() as f64).sqrt();
    Array1::from_shape_fn(phase.len(), |k| {
        let arg = freq[[k, 0]] * x[0] + freq[[k, 1]] * x[1] + freq[[k, 2]] * x[2] + phase[k];
        scale * arg.cos()
    })
}

impl Backend for LinearBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn token_embedding(&self, id: u32) -> ArrayView1<'_, f64> {
        self.token_table.row(id as usize)
    }

    fn encode_text(&self, embeds: ArrayView2<f64>) -> Result<TextEmbedding> {
        let (u, norm) = self.text_forward(embeds)?;
        Ok(TextEmbedding {
            vec: u / norm,
            grad_available: true,
        })
    }

    fn encode_text_vjp(&self, embeds: ArrayView2<f64>, grad: ArrayView1<f64>) -> Result<Array2<f64>> {
        let (u, norm) = self.text_forward(embeds)?;
        if grad.len() != self.descriptor.feature_dim {
            return Err(Error::Shape(format!(
                "gradient width {} != feature dim {}",
                grad.len(),
                self.descriptor.feature_dim
            )));
        }
        let g = u / norm;
        // d normalize(u) / du = (I - g g^T) / |u|
        let radial = g.dot(&grad);
        let du = (&grad - &(&g * radial)) / norm;
        let dm = self.text_proj.t().dot(&du);
        let rows = embeds.nrows();
        let per_row = dm / rows as f64;
        Ok(per_row
            .broadcast((rows, self.descriptor.feature_dim))
            .expect("row broadcast")
            .to_owned())
    }

    fn encode_image(&self, image: ArrayView3<f64>) -> Result<ImageEncoding> {
        let (h, w, c) = image.dim();
        let p = self.descriptor.patch_size;
        if c != 3 || h == 0 || w == 0 || h % p != 0 || w % p != 0 {
            return Err(Error::Shape(format!(
                "image {h}x{w}x{c} is not a 3-channel grid of {p}-pixel patches"
            )));
        }
        if image.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("image pixels".into()));
        }
        let (gh, gw) = (h / p, w / p);
        let s = self.rff_phase.len();
        let mut stats = Array3::<f64>::zeros((gh, gw, s));
        let inv = 1.0 / (p * p) as f64;
        for y in 0..h {
            for x in 0..w {
                let px = [image[[y, x, 0]], image[[y, x, 1]], image[[y, x, 2]]];
                let f = pixel_features(&self.rff_freq, &self.rff_phase, &px);
                let mut cell = stats.slice_mut(ndarray::s![y / p, x / p, ..]);
                cell.scaled_add(inv, &f);
            }
        }
        let flat = stats
            .into_shape_with_order((gh * gw, s))
            .expect("contiguous stats");
        let layer_maps: Vec<Array3<f64>> = self
            .layer_proj
            .iter()
            .map(|wl| {
                flat.dot(&wl.t())
                    .into_shape_with_order((gh, gw, self.descriptor.feature_dim))
                    .expect("grid reshape")
            })
            .collect();
        let last = layer_maps.last().unwrap();
        let mean = last
            .view()
            .into_shape_with_order((gh * gw, self.descriptor.feature_dim))
            .expect("contiguous")
            .mean_axis(Axis(0))
            .expect("non-empty grid");
        let pooled = linalg::normalized(mean.view())
            .ok_or_else(|| Error::Numeric("pooled image feature".into()))?;
        Ok(ImageEncoding { layer_maps, pooled })
    }
}

impl LinearBackend {
    fn text_forward(&self, embeds: ArrayView2<f64>) -> Result<(Array1<f64>, f64)> {
        let (rows, cols) = embeds.dim();
        if rows == 0 || cols != self.descriptor.feature_dim {
            return Err(Error::Shape(format!(
                "text input {rows}x{cols}, expected nx{}",
                self.descriptor.feature_dim
            )));
        }
        if rows > self.descriptor.context_length {
            return Err(Error::Overflow {
                len: rows,
                max: self.descriptor.context_length,
            });
        }
        if embeds.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("text embeddings".into()));
        }
        let mean = embeds.mean_axis(Axis(0)).expect("non-empty");
        let u = self.text_proj.dot(&mean);
        let norm = linalg::norm(u.view());
        if !norm.is_finite() || norm <= 0.0 {
            return Err(Error::Numeric("projected text embedding".into()));
        }
        Ok((u, norm))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn backend(seed: u64) -> LinearBackend {
        make_toy_backend(seed, 16, 4).unwrap()
    }

    #[test]
    fn same_seed_same_weights() {
        let a = backend(3);
        let b = backend(3);
        assert_eq!(a.token_table, b.token_table);
        assert_eq!(a.layer_proj, b.layer_proj);
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn different_seed_differs_on_probe() {
        let a = backend(1).encode_prompt("a photo of text").unwrap();
        let b = backend(2).encode_prompt("a photo of text").unwrap();
        assert_ne!(a.vec, b.vec);
        assert_ne!(backend(1).fingerprint(), backend(2).fingerprint());
    }

    #[test]
    fn temperature_default_in_descriptor() {
        let b = backend(0);
        assert_eq!(b.descriptor().temperature, 0.01);
        assert!(b.descriptor().supports_text_gradients);
        assert_eq!(b.descriptor().tapped_layer_indices.len(), 2);
    }

    #[test]
    fn single_embedding_text_is_normalized_projection() {
        let b = backend(5);
        let e = b.token_embedding(b.vocabulary().word_id("text")).to_owned();
        let out = b.encode_text(e.view().insert_axis(Axis(0))).unwrap();
        let u = b.text_proj.dot(&e);
        let expected = &u / linalg::norm(u.view());
        for (x, y) in out.vec.iter().zip(expected.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((linalg::norm(out.vec.view()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_image_gives_bias_features() {
        let b = backend(7);
        let enc = b.encode_image(Array3::zeros((8, 12, 3)).view()).unwrap();
        assert_eq!(enc.grid_shape(), (2, 3));
        let bias = b.bias_features();
        for (layer, map) in enc.layer_maps.iter().enumerate() {
            for y in 0..2 {
                for x in 0..3 {
                    for d in 0..16 {
                        assert!((map[[y, x, d]] - bias[layer][d]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn wrong_image_shape_is_rejected() {
        let b = backend(0);
        assert!(matches!(
            b.encode_image(Array3::zeros((6, 8, 3)).view()),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            b.encode_image(Array3::zeros((8, 8, 1)).view()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn non_finite_text_input_is_numeric_error() {
        let b = backend(0);
        let mut e = Array2::zeros((2, 16));
        e[[0, 0]] = f64::NAN;
        assert!(matches!(b.encode_text(e.view()), Err(Error::Numeric(_))));
    }

    #[test]
    fn grounded_color_aligns_with_flat_patch() {
        let b = backend(11);
        let id = b.vocabulary().word_id("red") as usize;
        let e = b.token_table.row(id).to_owned();
        let t = b.encode_text(e.view().insert_axis(Axis(0))).unwrap();
        let f = b.flat_patch_feature(1, &crate::data::standardize_rgb([220, 40, 40]));
        let cos = linalg::cosine(t.vec.view(), f.view());
        assert!(cos > 0.999, "cos = {cos}");
    }

    #[test]
    fn rejects_tiny_dim() {
        assert!(make_toy_backend(0, 4, 4).is_err());
    }
}
