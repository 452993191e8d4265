//! Content-addressed artifact store.
//!
//! Blobs live under `blobs/<sha256>` and are never rewritten. The metadata
//! index is an append-only JSON-lines file reloaded at start-up.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

const INDEX_FILE: &str = "index.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("artifact store io: {0}")]
    Io(#[from] std::io::Error),
    #[error("artifact index: {0}")]
    Index(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Image,
    ReferenceSet,
    StyleToken,
    Diagnostics,
    Checkpoint,
}

impl ArtifactKind {
    pub fn content_type(self) -> &'static str {
        match self {
            Self::Image => "image/png",
            Self::ReferenceSet | Self::Diagnostics => "application/json",
            Self::StyleToken | Self::Checkpoint => "application/octet-stream",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub id: String,
    pub kind: ArtifactKind,
    pub content_type: String,
    pub size: usize,
    #[serde(default)]
    pub meta: Value,
}

pub struct ArtifactStore {
    root: PathBuf,
    index: Mutex<HashMap<String, ArtifactMeta>>,
    order: Mutex<Vec<String>>,
}

impl ArtifactStore {
    pub fn open(root: &Path) -> Result<Self, StoreError> {
        std::fs::create_dir_all(root.join("blobs"))?;
        let mut index = HashMap::new();
        let mut order = Vec::new();
        let path = root.join(INDEX_FILE);
        if path.exists() {
            for line in std::fs::read_to_string(&path)?.lines().filter(|l| !l.trim().is_empty()) {
                let m: ArtifactMeta = serde_json::from_str(line)?;
                if root.join("blobs").join(&m.id).exists() && !index.contains_key(&m.id) {
                    order.push(m.id.clone());
                    index.insert(m.id.clone(), m);
                }
            }
        }
        Ok(Self {
            root: root.to_path_buf(),
            index: Mutex::new(index),
            order: Mutex::new(order),
        })
    }

    pub fn id_of(bytes: &[u8]) -> String {
        hex::encode(Sha256::digest(bytes))
    }

    /// Stores `bytes` and returns the metadata. Storing identical content
    /// again returns the existing entry unchanged.
    pub fn put(&self, kind: ArtifactKind, bytes: &[u8], meta: Value) -> Result<ArtifactMeta, StoreError> {
        let id = Self::id_of(bytes);
        let mut index = self.index.lock().expect("store lock");
        if let Some(existing) = index.get(&id) {
            return Ok(existing.clone());
        }
        let blob = self.root.join("blobs").join(&id);
        let tmp = self.root.join("blobs").join(format!("{id}.tmp"));
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, &blob)?;
        let entry = ArtifactMeta {
            id: id.clone(),
            kind,
            content_type: kind.content_type().to_string(),
            size: bytes.len(),
            meta,
        };
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.root.join(INDEX_FILE))?;
        writeln!(f, "{}", serde_json::to_string(&entry)?)?;
        index.insert(id.clone(), entry.clone());
        self.order.lock().expect("store lock").push(id);
        Ok(entry)
    }

    pub fn meta(&self, id: &str) -> Option<ArtifactMeta> {
        self.index.lock().expect("store lock").get(id).cloned()
    }

    pub fn get(&self, id: &str) -> Result<Option<(ArtifactMeta, Vec<u8>)>, StoreError> {
        let Some(meta) = self.meta(id) else {
            return Ok(None);
        };
        let bytes = std::fs::read(self.root.join("blobs").join(id))?;
        Ok(Some((meta, bytes)))
    }

    /// Entries of one kind in insertion order.
    pub fn list(&self, kind: ArtifactKind) -> Vec<ArtifactMeta> {
        let index = self.index.lock().expect("store lock");
        self.order
            .lock()
            .expect("store lock")
            .iter()
            .filter_map(|id| index.get(id))
            .filter(|m| m.kind == kind)
            .cloned()
            .collect()
    }
}
