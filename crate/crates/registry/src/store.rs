//! On-disk layout under the registry root:
//!
//! ```text
//! manifest.json           schema and the ordered model list
//! specs/<hash>-r<rev>.json one specification document per model revision
//! audit.log               JSON lines, one per mutation
//! ```
//!
//! Every file is replaced atomically. Readers see an immutable snapshot that
//! is swapped whole after the manifest has been persisted.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use gmi_core::{
    deserialize_spec, serialize_spec, Identifier, IndexedSpec, ModelSpec, Requirement, Schema, ScoredRanking,
    ScoringStrategy, StrategyKind,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use crate::error::{RegistryError, Result};

const MANIFEST: &str = "manifest.json";
const SPECS_DIR: &str = "specs";
const AUDIT_LOG: &str = "audit.log";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    schema: Option<Schema>,
    models: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    model_id: String,
    revision: u64,
    file: String,
    fingerprint: String,
}

/// One row of `list`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model_id: String,
    pub n_samples: usize,
    pub download_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SubmitMode {
    /// Reject ids that are already registered.
    #[default]
    New,
    /// Store the spec as a new revision of an existing id, or as a new model.
    Replace,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submitted {
    pub model_id: String,
    pub revision: u64,
}

#[derive(Clone)]
struct Entry {
    meta: ManifestEntry,
    indexed: Arc<IndexedSpec>,
}

#[derive(Clone, Default)]
struct Snapshot {
    schema: Option<Schema>,
    entries: Vec<Entry>,
}

impl Snapshot {
    fn position(&self, model_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.meta.model_id == model_id)
    }

    fn manifest(&self) -> Manifest {
        Manifest {
            version: MANIFEST_VERSION,
            schema: self.schema,
            models: self.entries.iter().map(|e| e.meta.clone()).collect(),
        }
    }
}

#[derive(Debug, Serialize)]
struct AuditEvent<'a> {
    at: u64,
    event: &'a str,
    model_id: &'a str,
    revision: u64,
}

/// Strategies whose caches are built when a model is submitted.
pub fn default_warm_strategies() -> Vec<ScoringStrategy> {
    StrategyKind::ALL
        .iter()
        .filter(|k| **k != StrategyKind::Download)
        .map(|k| ScoringStrategy::new(*k))
        .collect()
}

pub struct Registry {
    root: PathBuf,
    snapshot: RwLock<Arc<Snapshot>>,
    writer: Mutex<()>,
    warm: Vec<ScoringStrategy>,
}

impl std::fmt::Debug for Registry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Registry").field("root", &self.root).finish()
    }
}

impl Registry {
    /// Opens (creating if needed) the registry rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        Self::open_with(root, default_warm_strategies())
    }

    pub fn open_with(root: impl Into<PathBuf>, warm: Vec<ScoringStrategy>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join(SPECS_DIR))?;
        let manifest = match fs::read(root.join(MANIFEST)) {
            Ok(bytes) => serde_json::from_slice::<Manifest>(&bytes)
                .map_err(|e| RegistryError::Corrupt(format!("{MANIFEST}: {e}")))?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                Manifest { version: MANIFEST_VERSION, schema: None, models: Vec::new() }
            }
            Err(e) => return Err(e.into()),
        };
        if manifest.version != MANIFEST_VERSION {
            return Err(RegistryError::Corrupt(format!(
                "manifest version {} is not supported",
                manifest.version
            )));
        }
        let mut entries = Vec::with_capacity(manifest.models.len());
        for meta in manifest.models {
            let bytes = fs::read(root.join(SPECS_DIR).join(&meta.file))?;
            let spec = deserialize_spec(&bytes)
                .map_err(|e| RegistryError::Corrupt(format!("{}: {e}", meta.file)))?;
            if spec.model_id() != meta.model_id {
                return Err(RegistryError::Corrupt(format!("{} holds `{}`", meta.file, spec.model_id())));
            }
            let indexed = Arc::new(IndexedSpec::new(spec));
            for s in &warm {
                indexed.warm(s)?;
            }
            entries.push(Entry { meta, indexed });
        }
        let snapshot = Snapshot { schema: manifest.schema, entries };
        Ok(Registry { root, snapshot: RwLock::new(Arc::new(snapshot)), writer: Mutex::new(()), warm })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn current(&self) -> Arc<Snapshot> {
        self.snapshot.read().unwrap().clone()
    }

    pub fn schema(&self) -> Option<Schema> {
        self.current().schema
    }

    pub fn len(&self) -> usize {
        self.current().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn submit(&self, spec: ModelSpec, mode: SubmitMode) -> Result<Submitted> {
        let _guard = self.writer.lock().unwrap();
        let current = self.current();
        let schema = spec.schema();
        if let Some(expected) = current.schema {
            if expected != schema {
                return Err(RegistryError::SchemaMismatch { expected, found: schema });
            }
        }
        let model_id = spec.model_id().to_string();
        let existing = current.position(&model_id);
        if existing.is_some() && mode == SubmitMode::New {
            return Err(RegistryError::Duplicate(model_id));
        }
        let revision = existing.map_or(1, |i| current.entries[i].meta.revision + 1);

        let indexed = Arc::new(IndexedSpec::new(spec));
        for s in &self.warm {
            indexed.warm(s)?;
        }

        let bytes = serialize_spec(indexed.spec());
        let file = format!("{}-r{revision}.json", file_stem(&model_id));
        write_atomic(&self.root.join(SPECS_DIR), &file, &bytes)?;

        let mut next = (*current).clone();
        next.schema = Some(schema);
        let entry = Entry {
            meta: ManifestEntry {
                model_id: model_id.clone(),
                revision,
                file,
                fingerprint: indexed.spec().fingerprint(),
            },
            indexed,
        };
        let replaced = match existing {
            Some(i) => Some(std::mem::replace(&mut next.entries[i], entry)),
            None => {
                next.entries.push(entry);
                None
            }
        };
        self.commit(next)?;
        if let Some(old) = replaced {
            remove_quietly(&self.root.join(SPECS_DIR).join(&old.meta.file));
        }
        let event = if existing.is_some() { "replace" } else { "submit" };
        self.audit(event, &model_id, revision)?;
        Ok(Submitted { model_id, revision })
    }

    pub fn remove(&self, model_id: &str) -> Result<()> {
        let _guard = self.writer.lock().unwrap();
        let current = self.current();
        let i = current.position(model_id).ok_or_else(|| RegistryError::NotFound(model_id.to_string()))?;
        let mut next = (*current).clone();
        let old = next.entries.remove(i);
        self.commit(next)?;
        remove_quietly(&self.root.join(SPECS_DIR).join(&old.meta.file));
        self.audit("remove", model_id, old.meta.revision)
    }

    pub fn get(&self, model_id: &str) -> Result<Arc<ModelSpec>> {
        let current = self.current();
        current
            .position(model_id)
            .map(|i| current.entries[i].indexed.spec().clone())
            .ok_or_else(|| RegistryError::NotFound(model_id.to_string()))
    }

    pub fn revision(&self, model_id: &str) -> Result<u64> {
        let current = self.current();
        current
            .position(model_id)
            .map(|i| current.entries[i].meta.revision)
            .ok_or_else(|| RegistryError::NotFound(model_id.to_string()))
    }

    /// Models in insertion order.
    pub fn list(&self) -> Vec<ModelSummary> {
        self.current()
            .entries
            .iter()
            .map(|e| {
                let spec = e.indexed.spec();
                ModelSummary {
                    model_id: spec.model_id().to_string(),
                    n_samples: spec.len(),
                    download_count: spec.download_count(),
                }
            })
            .collect()
    }

    /// Ranks every registered model; `k` truncates the result.
    pub fn identify(
        &self,
        req: &Requirement,
        strategy: &ScoringStrategy,
        k: Option<usize>,
    ) -> Result<ScoredRanking> {
        let current = self.current();
        let schema = current.schema.ok_or(RegistryError::Empty)?;
        if current.entries.is_empty() {
            return Err(RegistryError::Empty);
        }
        req.validate_against(schema)?;
        let identifier = Identifier::new(current.entries.iter().map(|e| e.indexed.clone()).collect());
        let ranking = identifier.identify(req, strategy)?;
        match k {
            Some(k) => Ok(ranking.truncated(k)?),
            None => Ok(ranking),
        }
    }

    fn commit(&self, next: Snapshot) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(&next.manifest()).expect("manifest serializes");
        write_atomic(&self.root, MANIFEST, &bytes)?;
        *self.snapshot.write().unwrap() = Arc::new(next);
        Ok(())
    }

    fn audit(&self, event: &str, model_id: &str, revision: u64) -> Result<()> {
        let at = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let mut line = serde_json::to_vec(&AuditEvent { at, event, model_id, revision })
            .expect("audit events serialize");
        line.push(b'\n');
        let mut f = OpenOptions::new().create(true).append(true).open(self.root.join(AUDIT_LOG))?;
        f.write_all(&line)?;
        f.sync_data()?;
        Ok(())
    }
}

fn file_stem(model_id: &str) -> String {
    let digest = Sha256::digest(model_id.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(dir.join(name)).map_err(|e| e.error)?;
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}

fn remove_quietly(path: &Path) {
    if let Err(e) = fs::remove_file(path) {
        if e.kind() != io::ErrorKind::NotFound {
            eprintln!("warning: could not remove {}: {e}", path.display());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gmi_core::{build_requirement, build_spec, Embedding, Metadata, PromptProvenance, PromptRecord};

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn spec(id: &str, x: f64) -> ModelSpec {
        build_spec(
            id,
            vec![e(&[x, 0.0]), e(&[x, 1.0])],
            vec![PromptRecord::from(e(&[1.0])), PromptRecord::from(e(&[0.5]))],
            Metadata::new(),
            3,
        )
        .unwrap()
    }

    fn open(dir: &Path) -> Registry {
        Registry::open(dir).unwrap()
    }

    #[test]
    fn submit_get_list_remove() {
        let dir = tempfile::tempdir().unwrap();
        let reg = open(dir.path());
        assert!(reg.is_empty());
        for (i, id) in ["b", "a", "c"].iter().enumerate() {
            reg.submit(spec(id, i as f64), SubmitMode::New).unwrap();
        }
        let ids: Vec<_> = reg.list().into_iter().map(|m| m.model_id).collect();
        assert_eq!(ids, ["b", "a", "c"]);
        assert_eq!(*reg.get("a").unwrap(), spec("a", 1.0));
        reg.remove("a").unwrap();
        assert!(matches!(reg.get("a"), Err(RegistryError::NotFound(_))));
        assert!(matches!(reg.remove("a"), Err(RegistryError::NotFound(_))));
        assert_eq!(reg.len(), 2);
    }

    #[test]
    fn duplicates_need_replace() {
        let dir = tempfile::tempdir().unwrap();
        let reg = open(dir.path());
        reg.submit(spec("a", 0.0), SubmitMode::New).unwrap();
        assert!(matches!(reg.submit(spec("a", 1.0), SubmitMode::New), Err(RegistryError::Duplicate(_))));
        let s = reg.submit(spec("a", 2.0), SubmitMode::Replace).unwrap();
        assert_eq!(s.revision, 2);
        assert_eq!(*reg.get("a").unwrap(), spec("a", 2.0));
        let files = fs::read_dir(dir.path().join(SPECS_DIR)).unwrap().count();
        assert_eq!(files, 1);
    }

    #[test]
    fn schema_fixed_by_first_submit() {
        let dir = tempfile::tempdir().unwrap();
        let reg = open(dir.path());
        reg.submit(spec("a", 0.0), SubmitMode::New).unwrap();
        let other = build_spec("b", vec![e(&[1.0])], vec![PromptRecord::from(e(&[1.0]))], Metadata::new(), 0)
            .unwrap();
        assert!(matches!(reg.submit(other, SubmitMode::New), Err(RegistryError::SchemaMismatch { .. })));
    }

    #[test]
    fn state_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let req = build_requirement(e(&[0.5, 0.5]), e(&[1.0]), PromptProvenance::User, None).unwrap();
        let strategy = ScoringStrategy::new(StrategyKind::WeightedProposal);
        let before = {
            let reg = open(dir.path());
            for i in 0..4 {
                reg.submit(spec(&format!("m{i}"), i as f64), SubmitMode::New).unwrap();
            }
            reg.submit(spec("m1", 7.0), SubmitMode::Replace).unwrap();
            reg.identify(&req, &strategy, None).unwrap()
        };
        let reg = open(dir.path());
        assert_eq!(reg.identify(&req, &strategy, None).unwrap(), before);
        assert_eq!(reg.revision("m1").unwrap(), 2);
        let log = fs::read_to_string(dir.path().join(AUDIT_LOG)).unwrap();
        assert_eq!(log.lines().count(), 5);
    }

    #[test]
    fn identify_errors() {
        let dir = tempfile::tempdir().unwrap();
        let reg = open(dir.path());
        let strategy = ScoringStrategy::new(StrategyKind::WeightedProposal);
        let req = build_requirement(e(&[0.5, 0.5]), e(&[1.0]), PromptProvenance::User, None).unwrap();
        assert!(matches!(reg.identify(&req, &strategy, None), Err(RegistryError::Empty)));
        reg.submit(spec("a", 0.0), SubmitMode::New).unwrap();
        let bad = build_requirement(e(&[0.5]), e(&[1.0]), PromptProvenance::User, None).unwrap();
        assert!(matches!(reg.identify(&bad, &strategy, None), Err(RegistryError::Invalid(_))));
        assert_eq!(reg.identify(&req, &strategy, Some(1)).unwrap().entries.len(), 1);
        assert!(reg.identify(&req, &strategy, Some(2)).is_err());
    }

    #[test]
    fn corrupt_manifest_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST), b"{not json").unwrap();
        assert!(matches!(Registry::open(dir.path()), Err(RegistryError::Corrupt(_))));
    }
}
