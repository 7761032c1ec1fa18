use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{preprocess_mask, read_image, read_mask, PreprocessConfig, SupportSample};
use crate::artifact;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Support,
    Query,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub split: Split,
    pub entries: Vec<ManifestEntry>,
    /// Optional seed table, relative to the manifest file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_table: Option<PathBuf>,
    /// Directory relative paths resolve against; set by [`DatasetManifest::load`].
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, split: Split, entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = Self {
            name: name.into(),
            split,
            entries,
            seed_table: None,
            root: PathBuf::new(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut m: Self = artifact::read_json(path)?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        artifact::write_json(path, self)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Argument(format!("duplicate manifest id {:?}", e.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Checks that every image and mask path exists.
    pub fn check_paths(&self) -> Result<()> {
        for e in &self.entries {
            for p in [&e.image, &e.mask] {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(Error::io(
                        full,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "manifest path missing"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn load_seed_table(&self) -> Result<Option<SeedTable>> {
        self.seed_table
            .as_ref()
            .map(|p| artifact::read_json(&self.resolve(p)))
            .transpose()
    }
}

/// Published support ids per (seed, shot count).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedTable {
    pub dataset: String,
    pub entries: Vec<SeedEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub seed: u64,
    pub k: usize,
    pub ids: Vec<String>,
}

impl SeedTable {
    pub fn lookup(&self, seed: u64, k: usize) -> Option<&[String]> {
        self.entries
            .iter()
            .find(|e| e.seed == seed && e.k == k)
            .map(|e| e.ids.as_slice())
    }

    /// The seed table shipped for TextSeg.
    pub fn textseg() -> Self {
        serde_json::from_str(include_str!("../../data/textseg_seed_table.json"))
            .expect("bundled seed table parses")
    }
}

/// Picks `k` support ids. A matching seed-table row wins; otherwise a seeded
/// sample without replacement, returned in manifest order.
pub fn select_support_ids(
    manifest: &DatasetManifest,
    k: usize,
    seed: u64,
    table: Option<&SeedTable>,
) -> Result<Vec<String>> {
    if k == 0 || k > manifest.len() {
        return Err(Error::Argument(format!(
            "cannot select {k} supports from a manifest of {}",
            manifest.len()
        )));
    }
    if let Some(ids) = table.and_then(|t| t.lookup(seed, k)) {
        if let Some(missing) = ids.iter().find(|id| manifest.entry(id).is_none()) {
            return Err(Error::Argument(format!(
                "seed table id {missing:?} not in manifest {}",
                manifest.name
            )));
        }
        return Ok(ids.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, manifest.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked
        .into_iter()
        .map(|i| manifest.entries[i].id.clone())
        .collect())
}

pub fn load_support(
    manifest: &DatasetManifest,
    id: &str,
    cfg: &PreprocessConfig,
) -> Result<SupportSample> {
    let entry = manifest
        .entry(id)
        .ok_or_else(|| Error::Argument(format!("unknown id {id:?}")))?;
    let image = read_image(&manifest.resolve(&entry.image), cfg)?;
    let mask = preprocess_mask(&read_mask(&manifest.resolve(&entry.mask))?, cfg);
    SupportSample::new(id, image, mask)
}

pub fn select_support(
    manifest: &DatasetManifest,
    k: usize,
    seed: u64,
    table: Option<&SeedTable>,
    cfg: &PreprocessConfig,
) -> Result<Vec<SupportSample>> {
    select_support_ids(manifest, k, seed, table)?
        .iter()
        .map(|id| load_support(manifest, id, cfg))
        .collect()
}
