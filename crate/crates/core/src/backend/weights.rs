//! Weight directory format: `backend.json` plus one `<tensor>.f32` file of
//! raw little-endian float32 values per parameter tensor.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BackendDescriptor, LinearBackend, Vocabulary};
use crate::artifact;
use crate::error::{Error, Result};

pub const WEIGHTS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct WeightsMeta {
    format_version: u32,
    architecture: String,
    descriptor: BackendDescriptor,
    vocabulary: Vocabulary,
    tensors: Vec<TensorMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: [usize; 2],
}

impl LinearBackend {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let tensors = self.tensors();
        for (name, t) in &tensors {
            artifact::write_bytes(&dir.join(format!("{name}.f32")), &artifact::f32_bytes([*t]))?;
        }
        let meta = WeightsMeta {
            format_version: WEIGHTS_FORMAT_VERSION,
            architecture: "linear".into(),
            descriptor: self.descriptor.clone(),
            vocabulary: self.vocab.clone(),
            tensors: tensors
                .iter()
                .map(|(name, t)| TensorMeta {
                    name: name.clone(),
                    shape: [t.nrows(), t.ncols()],
                })
                .collect(),
        };
        artifact::write_json(&dir.join("backend.json"), &meta)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: WeightsMeta = artifact::read_json(&dir.join("backend.json"))?;
        if meta.format_version != WEIGHTS_FORMAT_VERSION || meta.architecture != "linear" {
            return Err(Error::Format(format!(
                "unsupported weights: architecture {:?}, version {}",
                meta.architecture, meta.format_version
            )));
        }
        let get = |name: &str| -> Result<ndarray::Array2<f64>> {
            let t = meta
                .tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::Format(format!("missing tensor {name}")))?;
            let path = dir.join(format!("{name}.f32"));
            Ok(artifact::read_f32_blocks(&path, &[(t.shape[0], t.shape[1])])?.remove(0))
        };
        let token_table = get("token_table")?;
        let text_proj = get("text_proj")?;
        let rff_freq = get("rff_freq")?;
        let rff_phase = get("rff_phase")?.row(0).to_owned();
        let layers = (0..meta.descriptor.tapped_layer_indices.len())
            .map(|i| get(&format!("layer_{i}")))
            .collect::<Result<Vec<_>>>()?;
        LinearBackend::from_parts(
            meta.descriptor,
            meta.vocabulary.reindexed()?,
            token_table,
            text_proj,
            rff_freq,
            rff_phase,
            layers,
        )
    }
}
