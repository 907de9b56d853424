//! On-disk model store.
//!
//! ```text
//! <dir>/manifest.json        version, tool, config hash, model ids
//! <dir>/wordbook.book        word book (JSON)
//! <dir>/models/<id>.model    one vocabulary per file (JSON)
//! ```
//!
//! Nothing time-dependent is written, so equal inputs give equal bytes.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_text, write};
use crate::coupling::WordBook;
use crate::vocabulary::GdbnVocabulary;
use crate::{Error, Result, DUMMY_ID_BASE};

pub const STORE_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const WORDBOOK: &str = "wordbook.book";
const MODELS: &str = "models";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub created_by: String,
    pub config_hash: String,
    /// Ascending.
    pub model_ids: Vec<u32>,
    pub word_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelStore {
    pub manifest: Manifest,
    /// Ascending by id, so normal models come before dummy ones.
    pub models: Vec<GdbnVocabulary>,
    pub book: WordBook,
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("store types serialize");
    s.push('\n');
    s
}

fn check(models: &[GdbnVocabulary], book: &WordBook) -> std::result::Result<(), String> {
    let ids: BTreeSet<u32> = models.iter().map(|m| m.model_id).collect();
    if ids.len() != models.len() {
        return Err("duplicate model id".into());
    }
    for m in models {
        let has_dummy = m.dummy_clusters().next().is_some();
        if m.is_dummy() != has_dummy {
            return Err(format!("model {}: id range and dummy clusters disagree", m.model_id));
        }
        if m.is_dummy() && !ids.contains(&m.track_id) {
            return Err(format!("dummy model {} has no base model {}", m.model_id, m.track_id));
        }
    }
    for (word, key) in book.entries() {
        for &(model_id, cluster) in key {
            let m = models
                .iter()
                .find(|m| m.model_id == model_id)
                .ok_or_else(|| format!("word {word} uses unknown model {model_id}"))?;
            if cluster >= m.clusters.len() {
                return Err(format!("word {word} uses cluster {cluster} of model {model_id}, which has {}", m.clusters.len()));
            }
        }
    }
    Ok(())
}

impl ModelStore {
    pub fn new(mut models: Vec<GdbnVocabulary>, book: WordBook, config_hash: &str) -> Result<Self> {
        models.sort_by_key(|m| m.model_id);
        check(&models, &book).map_err(|msg| Error::Store(PathBuf::new(), msg))?;
        let manifest = Manifest {
            version: STORE_VERSION,
            created_by: format!("igdbn {}", env!("CARGO_PKG_VERSION")),
            config_hash: config_hash.to_owned(),
            model_ids: models.iter().map(|m| m.model_id).collect(),
            word_count: book.len(),
        };
        Ok(Self { manifest, models, book })
    }

    pub fn normal_models(&self) -> impl Iterator<Item = &GdbnVocabulary> {
        self.models.iter().filter(|m| m.model_id < DUMMY_ID_BASE)
    }

    pub fn model_path(dir: &Path, id: u32) -> PathBuf {
        dir.join(MODELS).join(format!("{id}.model"))
    }

    /// Writes the store, removing model files left over from an earlier save.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let models_dir = dir.join(MODELS);
        std::fs::create_dir_all(&models_dir).map_err(|e| Error::Io(models_dir.clone(), e))?;
        for (id, path) in list_models(&models_dir)? {
            if !self.manifest.model_ids.contains(&id) {
                std::fs::remove_file(&path).map_err(|e| Error::Io(path, e))?;
            }
        }
        for m in &self.models {
            write(&Self::model_path(dir, m.model_id), &to_json(m))?;
        }
        write(&dir.join(WORDBOOK), &to_json(&self.book))?;
        write(&dir.join(MANIFEST), &to_json(&self.manifest))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let fail = |path: &Path, msg: String| Error::Store(path.to_path_buf(), msg);
        if !dir.is_dir() {
            return Err(fail(dir, "not a directory".into()));
        }
        let read_json = |name: &Path| -> Result<String> { read_text(name).map_err(|e| fail(name, e.to_string())) };
        let manifest_path = dir.join(MANIFEST);
        let manifest: Manifest =
            serde_json::from_str(&read_json(&manifest_path)?).map_err(|e| fail(&manifest_path, e.to_string()))?;
        if manifest.version != STORE_VERSION {
            return Err(fail(&manifest_path, format!("unsupported version {}", manifest.version)));
        }
        let models_dir = dir.join(MODELS);
        let present: Vec<u32> = list_models(&models_dir)
            .map_err(|e| fail(&models_dir, e.to_string()))?
            .into_iter()
            .map(|(id, _)| id)
            .collect();
        if present != manifest.model_ids {
            return Err(fail(
                &models_dir,
                format!("manifest lists {:?} but the files are {present:?}", manifest.model_ids),
            ));
        }
        let mut models = Vec::with_capacity(present.len());
        for id in present {
            let path = Self::model_path(dir, id);
            let m: GdbnVocabulary = serde_json::from_str(&read_json(&path)?).map_err(|e| fail(&path, e.to_string()))?;
            if m.model_id != id {
                return Err(fail(&path, format!("file holds model {}", m.model_id)));
            }
            models.push(m);
        }
        let book_path = dir.join(WORDBOOK);
        let book: WordBook = serde_json::from_str(&read_json(&book_path)?).map_err(|e| fail(&book_path, e.to_string()))?;
        if book.len() != manifest.word_count {
            return Err(fail(&book_path, format!("{} words, manifest says {}", book.len(), manifest.word_count)));
        }
        check(&models, &book).map_err(|msg| fail(dir, msg))?;
        Ok(Self { manifest, models, book })
    }
}

/// `(id, path)` of every `<id>.model` file, ascending by id. Any other entry
/// in the directory is an error.
fn list_models(models_dir: &Path) -> Result<Vec<(u32, PathBuf)>> {
    let entries = std::fs::read_dir(models_dir).map_err(|e| Error::Io(models_dir.to_path_buf(), e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::Io(models_dir.to_path_buf(), e))?.path();
        let id = (path.extension().is_some_and(|e| e == "model"))
            .then(|| path.file_stem()?.to_str()?.parse::<u32>().ok())
            .flatten()
            .ok_or_else(|| Error::Store(path.clone(), "unexpected file in the models directory".into()))?;
        out.push((id, path));
    }
    out.sort_by_key(|(id, _)| *id);
    Ok(out)
}
