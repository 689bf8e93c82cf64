//! On-disk template repository with top-k identification.
//!
//! Layout: `index.json` plus `templates/<sample_id>.pmit`. The index is
//! rewritten through a temporary file and a rename, so a crash leaves either
//! the old or the new index.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::EncoderId;
use crate::matching::{fractional_hamming_with, MatchParams};
use crate::metadata::SampleMetadata;
use crate::template::{IrisTemplate, TemplateError};

const INDEX_FILE: &str = "index.json";
const TEMPLATE_DIR: &str = "templates";

#[derive(Debug, Error)]
pub enum GalleryError {
    #[error("sample `{0}` is already enrolled")]
    DuplicateSampleId(String),
    #[error("sample id `{0}` cannot be used as a file name")]
    InvalidSampleId(String),
    #[error("gallery storage failure: {0}")]
    StorageFailure(String),
    #[error("template `{id}` is unreadable: {source}")]
    Template { id: String, source: TemplateError },
}

impl From<std::io::Error> for GalleryError {
    fn from(e: std::io::Error) -> Self {
        GalleryError::StorageFailure(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryEntry {
    pub sample_id: String,
    pub encoder: EncoderId,
    pub params_digest: String,
    pub metadata: SampleMetadata,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Index {
    entries: Vec<GalleryEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub rank: usize,
    pub sample_id: String,
    pub subject_id: String,
    pub score: f64,
    pub best_shift: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Identification {
    pub candidates: Vec<Candidate>,
    /// Entries with another encoder or parameter set.
    pub skipped_incompatible: usize,
    /// Compatible entries that could not be matched (insufficient overlap).
    pub skipped_ftm: usize,
}

/// A gallery directory. Reads run concurrently; writes are serialized.
#[derive(Debug)]
pub struct Gallery {
    root: PathBuf,
    index: RwLock<Index>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id != "." && id != ".." && !id.contains(['/', '\\', '\0']) && !id.starts_with('.')
}

impl Gallery {
    /// Opens `root`, creating an empty gallery when it does not exist.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, GalleryError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join(TEMPLATE_DIR))?;
        let index_path = root.join(INDEX_FILE);
        let index = if index_path.exists() {
            serde_json::from_slice(&fs::read(&index_path)?)
                .map_err(|e| GalleryError::StorageFailure(format!("corrupt index: {e}")))?
        } else {
            Index::default()
        };
        Ok(Self {
            root,
            index: RwLock::new(index),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn template_path(&self, id: &str) -> PathBuf {
        self.root.join(TEMPLATE_DIR).join(format!("{id}.pmit"))
    }

    fn persist(&self, index: &Index) -> Result<(), GalleryError> {
        let tmp = self.root.join(format!("{INDEX_FILE}.tmp"));
        let bytes = serde_json::to_vec_pretty(index).map_err(|e| GalleryError::StorageFailure(e.to_string()))?;
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, self.root.join(INDEX_FILE))?;
        Ok(())
    }

    pub fn enroll(&self, template: &IrisTemplate, metadata: SampleMetadata) -> Result<String, GalleryError> {
        let id = metadata.sample_id.clone();
        if !valid_id(&id) {
            return Err(GalleryError::InvalidSampleId(id));
        }
        let mut index = self.index.write().expect("gallery lock poisoned");
        if index.entries.iter().any(|e| e.sample_id == id) {
            return Err(GalleryError::DuplicateSampleId(id));
        }
        let path = self.template_path(&id);
        let tmp = path.with_extension("pmit.tmp");
        fs::write(&tmp, template.to_bytes())?;
        fs::rename(&tmp, &path)?;
        index.entries.push(GalleryEntry {
            sample_id: id.clone(),
            encoder: template.encoder_id,
            params_digest: hex::encode(template.params_digest),
            metadata,
        });
        if let Err(e) = self.persist(&index) {
            index.entries.pop();
            let _ = fs::remove_file(&path);
            return Err(e);
        }
        Ok(id)
    }

    /// `false` when the id is not enrolled.
    pub fn remove(&self, sample_id: &str) -> Result<bool, GalleryError> {
        let mut index = self.index.write().expect("gallery lock poisoned");
        let Some(pos) = index.entries.iter().position(|e| e.sample_id == sample_id) else {
            return Ok(false);
        };
        let entry = index.entries.remove(pos);
        if let Err(e) = self.persist(&index) {
            index.entries.insert(pos, entry);
            return Err(e);
        }
        let path = self.template_path(sample_id);
        if path.exists() {
            fs::remove_file(path)?;
        }
        Ok(true)
    }

    pub fn list(&self) -> Vec<GalleryEntry> {
        self.index.read().expect("gallery lock poisoned").entries.clone()
    }

    pub fn len(&self) -> usize {
        self.index.read().expect("gallery lock poisoned").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn load_template(&self, sample_id: &str) -> Result<IrisTemplate, GalleryError> {
        let bytes = fs::read(self.template_path(sample_id))?;
        IrisTemplate::from_bytes(&bytes).map_err(|source| GalleryError::Template {
            id: sample_id.to_string(),
            source,
        })
    }

    /// Top-`k` entries by ascending score, ties broken by sample id.
    pub fn identify(
        &self,
        probe: &IrisTemplate,
        k: usize,
        params: &MatchParams,
    ) -> Result<Identification, GalleryError> {
        let entries = self.list();
        let digest = hex::encode(probe.params_digest);
        let (compatible, incompatible): (Vec<_>, Vec<_>) = entries
            .into_iter()
            .partition(|e| e.encoder == probe.encoder_id && e.params_digest == digest);
        let results: Vec<Result<Option<Candidate>, GalleryError>> = compatible
            .par_iter()
            .map(|e| {
                let t = self.load_template(&e.sample_id)?;
                Ok(fractional_hamming_with(probe, &t, params).ok().map(|m| Candidate {
                    rank: 0,
                    sample_id: e.sample_id.clone(),
                    subject_id: e.metadata.subject_id.clone(),
                    score: m.score,
                    best_shift: m.best_shift,
                }))
            })
            .collect();
        let mut out = Identification {
            skipped_incompatible: incompatible.len(),
            ..Default::default()
        };
        for r in results {
            match r? {
                Some(c) => out.candidates.push(c),
                None => out.skipped_ftm += 1,
            }
        }
        out.candidates
            .sort_by(|a, b| a.score.total_cmp(&b.score).then_with(|| a.sample_id.cmp(&b.sample_id)));
        out.candidates.truncate(k);
        for (i, c) in out.candidates.iter_mut().enumerate() {
            c.rank = i + 1;
        }
        Ok(out)
    }
}
