//! Append-only JSONL log of LLM requests and responses.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{request_digest, GenerationRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub digest: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub prompt: String,
    pub response: String,
    pub recorded_at: String,
}

impl CassetteEntry {
    pub fn new(req: &GenerationRequest, response: String) -> Self {
        Self {
            digest: request_digest(req),
            model: req.model_name.clone(),
            temperature: req.temperature,
            max_tokens: req.max_tokens,
            prompt: req.prompt.clone(),
            response,
            recorded_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }

    fn request(&self) -> GenerationRequest {
        GenerationRequest {
            prompt: self.prompt.clone(),
            model_name: self.model.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        }
    }
}

#[derive(Debug, Error)]
pub enum CassetteError {
    #[error("cassette {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cassette {path}:{line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("cassette {path}:{line}: digest does not match the recorded request")]
    DigestMismatch { path: PathBuf, line: usize },
    #[error("cassette {path}:{line}: digest {digest} already recorded with a different response")]
    Conflict { path: PathBuf, line: usize, digest: String },
}

/// Responses keyed by request digest.
///
/// Entries present at load time are read without locking. Entries recorded
/// during this process go through a single writer that persists each line
/// before the response is handed back.
#[derive(Debug)]
pub struct Cassette {
    path: Option<PathBuf>,
    loaded: HashMap<String, CassetteEntry>,
    appended: Mutex<Appended>,
}

#[derive(Debug, Default)]
struct Appended {
    entries: HashMap<String, CassetteEntry>,
    file: Option<File>,
}

impl Cassette {
    /// An unbacked cassette; appends are kept in memory only.
    pub fn in_memory() -> Self {
        Self { path: None, loaded: HashMap::new(), appended: Mutex::new(Appended::default()) }
    }

    /// Loads `path` if it exists. Later appends go to the same file.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, CassetteError> {
        let path = path.into();
        let loaded = if path.exists() { load(&path)? } else { HashMap::new() };
        Ok(Self { path: Some(path), loaded, appended: Mutex::new(Appended::default()) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, digest: &str) -> Option<String> {
        if let Some(e) = self.loaded.get(digest) {
            return Some(e.response.clone());
        }
        let appended = self.appended.lock().expect("cassette lock poisoned");
        appended.entries.get(digest).map(|e| e.response.clone())
    }

    pub fn len(&self) -> usize {
        self.loaded.len() + self.appended.lock().expect("cassette lock poisoned").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Persists `entry` unless its digest is already recorded, in which case
    /// the stored response wins and is returned.
    pub fn append(&self, entry: CassetteEntry) -> Result<String, CassetteError> {
        if let Some(e) = self.loaded.get(&entry.digest) {
            return Ok(e.response.clone());
        }
        let mut appended = self.appended.lock().expect("cassette lock poisoned");
        if let Some(e) = appended.entries.get(&entry.digest) {
            return Ok(e.response.clone());
        }
        if let Some(path) = &self.path {
            if appended.file.is_none() {
                let file = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|source| CassetteError::Io { path: path.clone(), source })?;
                appended.file = Some(file);
            }
            let mut line = serde_json::to_string(&entry).expect("serializable entry");
            line.push('\n');
            let file = appended.file.as_mut().expect("opened above");
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|source| CassetteError::Io { path: path.clone(), source })?;
        }
        let response = entry.response.clone();
        appended.entries.insert(entry.digest.clone(), entry);
        Ok(response)
    }

    /// All entries, ordered by digest.
    pub fn entries(&self) -> Vec<CassetteEntry> {
        let appended = self.appended.lock().expect("cassette lock poisoned");
        let mut all: Vec<CassetteEntry> = self
            .loaded
            .values()
            .chain(appended.entries.values())
            .cloned()
            .collect();
        all.sort_by(|a, b| a.digest.cmp(&b.digest));
        all
    }
}

fn load(path: &Path) -> Result<HashMap<String, CassetteEntry>, CassetteError> {
    let file = File::open(path).map_err(|source| CassetteError::Io { path: path.to_path_buf(), source })?;
    let mut map: HashMap<String, CassetteEntry> = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CassetteError::Io { path: path.to_path_buf(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: CassetteEntry = serde_json::from_str(&line).map_err(|source| CassetteError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        if request_digest(&entry.request()) != entry.digest {
            return Err(CassetteError::DigestMismatch { path: path.to_path_buf(), line: i + 1 });
        }
        if let Some(prev) = map.get(&entry.digest) {
            if prev.response != entry.response {
                return Err(CassetteError::Conflict {
                    path: path.to_path_buf(),
                    line: i + 1,
                    digest: entry.digest,
                });
            }
            continue;
        }
        map.insert(entry.digest.clone(), entry);
    }
    Ok(map)
}
