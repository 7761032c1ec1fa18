//! Encoder abstraction shared by every downstream module.
//!
//! A [`Backend`] turns normalized images into per-patch feature grids and
//! token sequences into unit-norm text embeddings living in the same space.
//! The crate ships [`LinearBackend`], a small seeded encoder with analytic
//! gradients used for all desk-scale work. A pretrained vision-language model
//! plugs in by implementing the same trait.

mod linear;
pub mod tokenizer;
mod weights;

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use linear::{make_toy_backend, LinearBackend, ToyConfig, DEFAULT_GROUNDING};
pub use tokenizer::{Vocabulary, END_ID, LEARNABLE_ID, START_ID};

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    /// `true` where the embedding is a trainable parameter rather than a
    /// vocabulary row.
    pub learnable_mask: Vec<bool>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn push_fixed(&mut self, id: u32) {
        self.ids.push(id);
        self.learnable_mask.push(false);
    }

    pub fn push_learnable(&mut self) {
        self.ids.push(LEARNABLE_ID);
        self.learnable_mask.push(true);
    }

    pub fn learnable_count(&self) -> usize {
        self.learnable_mask.iter().filter(|&&m| m).count()
    }

    pub fn validate(&self, context_length: usize) -> Result<()> {
        if self.ids.len() != self.learnable_mask.len() {
            return Err(Error::Shape(format!(
                "token ids ({}) and learnable mask ({}) differ in length",
                self.ids.len(),
                self.learnable_mask.len()
            )));
        }
        if self.len() > context_length {
            return Err(Error::Overflow {
                len: self.len(),
                max: context_length,
            });
        }
        if let Some(i) = self
            .ids
            .iter()
            .zip(&self.learnable_mask)
            .position(|(&id, &m)| m && id != LEARNABLE_ID)
        {
            return Err(Error::Config(format!(
                "learnable position {i} does not carry the sentinel id"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub feature_dim: usize,
    pub context_length: usize,
    pub patch_size: usize,
    /// Encoder layers whose patch features are exposed, strictly increasing.
    pub tapped_layer_indices: Vec<usize>,
    /// Softmax temperature shared by prompt scoring and the contrastive loss.
    pub temperature: f64,
    pub supports_text_gradients: bool,
}

impl BackendDescriptor {
    pub fn validate(&self) -> Result<()> {
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.tapped_layer_indices.is_empty()
            || self.tapped_layer_indices.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::Config(format!(
                "tapped layers must be non-empty and strictly increasing: {:?}",
                self.tapped_layer_indices
            )));
        }
        if self.feature_dim == 0 || self.patch_size == 0 || self.context_length < 2 {
            return Err(Error::Config("degenerate backend dimensions".into()));
        }
        Ok(())
    }
}

/// Patch features of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEncoding {
    /// One `grid_h x grid_w x dim` grid per tapped layer.
    pub layer_maps: Vec<Array3<f64>>,
    /// Unit-norm global embedding (mean over the last layer's patches).
    pub pooled: Array1<f64>,
}

impl ImageEncoding {
    pub fn grid_shape(&self) -> (usize, usize) {
        let s = self.layer_maps[0].shape();
        (s[0], s[1])
    }

    pub fn dim(&self) -> usize {
        self.layer_maps[0].shape()[2]
    }

    /// The layer used for text-image comparisons.
    pub fn last_layer(&self) -> &Array3<f64> {
        self.layer_maps.last().expect("at least one tapped layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub vec: Array1<f64>,
    pub grad_available: bool,
}

pub trait Backend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Stable content hash over the descriptor and all weights. Artifacts
    /// built against one backend refuse to load against another.
    fn fingerprint(&self) -> &str;

    fn vocabulary(&self) -> &Vocabulary;

    /// Frozen embedding row for a vocabulary id.
    fn token_embedding(&self, id: u32) -> ArrayView1<'_, f64>;

    fn encode_text(&self, embeds: ArrayView2<f64>) -> Result<TextEmbedding>;

    /// Pulls a gradient on the text embedding back to the input embeddings.
    fn encode_text_vjp(&self, embeds: ArrayView2<f64>, grad: ArrayView1<f64>) -> Result<Array2<f64>> {
        let _ = (embeds, grad);
        Err(Error::Capability(format!(
            "backend {} does not expose text gradients",
            self.descriptor().name
        )))
    }

    fn encode_image(&self, image: ArrayView3<f64>) -> Result<ImageEncoding>;

    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        self.vocabulary()
            .tokenize(text, self.descriptor().context_length)
    }

    fn detokenize(&self, seq: &TokenSequence) -> String {
        self.vocabulary().detokenize(seq)
    }

    /// Looks up fixed positions in the vocabulary table and splices the rows
    /// of `params` into learnable positions, in order.
    fn embed_tokens(&self, seq: &TokenSequence, params: ArrayView2<f64>) -> Result<Array2<f64>> {
        seq.validate(self.descriptor().context_length)?;
        let dim = self.descriptor().feature_dim;
        let needed = seq.learnable_count();
        if params.nrows() < needed {
            return Err(Error::Config(format!(
                "sequence has {needed} learnable slots but only {} parameter vectors were given",
                params.nrows()
            )));
        }
        if needed > 0 && params.ncols() != dim {
            return Err(Error::Shape(format!(
                "parameter width {} != feature dim {dim}",
                params.ncols()
            )));
        }
        let mut out = Array2::zeros((seq.len(), dim));
        let mut next = 0;
        for (i, (&id, &learnable)) in seq.ids.iter().zip(&seq.learnable_mask).enumerate() {
            if learnable {
                out.row_mut(i).assign(&params.row(next));
                next += 1;
            } else {
                out.row_mut(i).assign(&self.token_embedding(id));
            }
        }
        Ok(out)
    }

    /// Convenience: tokenize, embed and encode a frozen prompt.
    fn encode_prompt(&self, text: &str) -> Result<TextEmbedding> {
        let seq = self.tokenize(text)?;
        let embeds = self.embed_tokens(&seq, Array2::zeros((0, 0)).view())?;
        self.encode_text(embeds.view())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desc() -> BackendDescriptor {
        BackendDescriptor {
            name: "t".into(),
            feature_dim: 8,
            context_length: 77,
            patch_size: 4,
            tapped_layer_indices: vec![0, 1],
            temperature: 0.01,
            supports_text_gradients: true,
        }
    }

    #[test]
    fn descriptor_validation() {
        assert!(desc().validate().is_ok());
        let mut d = desc();
        d.temperature = 0.0;
        assert!(d.validate().is_err());
        let mut d = desc();
        d.tapped_layer_indices = vec![1, 1];
        assert!(d.validate().is_err());
    }

    #[test]
    fn sequence_validation() {
        let mut s = TokenSequence::default();
        s.push_fixed(START_ID);
        s.push_learnable();
        s.push_fixed(END_ID);
        assert!(s.validate(77).is_ok());
        assert!(s.validate(2).is_err());
        s.ids[1] = 5;
        assert!(s.validate(77).is_err());
    }
}
