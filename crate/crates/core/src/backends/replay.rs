//! Fixture store, replay backend and recording wrapper.
//!
//! Fixtures are JSON Lines, one [`FixtureRecord`] per line, keyed by
//! `(model_id, prompt_hash, sample)`. The file is rewritten in key order
//! whenever a record is added so diffs stay stable.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use super::{prompt_hash, Backend, BackendError, GenerationRequest, ModelOutput, ModelSpec, TokenCounts};

type Key = (String, String, u32);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureMeta {
    #[serde(default)]
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_counts: Option<TokenCounts>,
    #[serde(default = "first_attempt")]
    pub attempt: u32,
}

fn first_attempt() -> u32 {
    1
}

impl Default for FixtureMeta {
    fn default() -> Self {
        FixtureMeta { latency_ms: 0, token_counts: None, attempt: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub model_id: String,
    pub prompt_hash: String,
    #[serde(default)]
    pub sample: u32,
    pub prompt: String,
    pub text: String,
    #[serde(default)]
    pub meta: FixtureMeta,
}

impl FixtureRecord {
    fn key(&self) -> Key {
        (self.model_id.clone(), self.prompt_hash.clone(), self.sample)
    }

    fn to_output(&self) -> ModelOutput {
        ModelOutput {
            model_id: self.model_id.clone(),
            text: self.text.clone(),
            latency_ms: self.meta.latency_ms,
            token_counts: self.meta.token_counts,
            attempt: self.meta.attempt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordOutcome {
    Inserted,
    /// An identical record was already present.
    Unchanged,
}

/// Recorded completions, optionally backed by a file.
#[derive(Debug, Default)]
pub struct FixtureStore {
    path: Option<PathBuf>,
    records: RwLock<BTreeMap<Key, FixtureRecord>>,
}

impl FixtureStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads an existing fixture file.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref().to_path_buf();
        let file = fs::File::open(&path).map_err(|source| BackendError::Storage { path: path.clone(), source })?;
        let records = parse_records(&path, BufReader::new(file))?;
        Ok(FixtureStore { path: Some(path), records: RwLock::new(records) })
    }

    /// Loads the file if it exists, otherwise starts empty and creates it on
    /// the first write.
    pub fn open_or_create(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        if path.exists() {
            Self::open(path)
        } else {
            Ok(FixtureStore { path: Some(path.to_path_buf()), records: RwLock::default() })
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.records.read().expect("fixture lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> Vec<FixtureRecord> {
        self.records.read().expect("fixture lock").values().cloned().collect()
    }

    pub fn get(&self, model_id: &str, prompt_hash: &str, sample: u32) -> Option<FixtureRecord> {
        let key = (model_id.to_string(), prompt_hash.to_string(), sample);
        self.records.read().expect("fixture lock").get(&key).cloned()
    }

    /// Lowest-sample record for a prompt, used by lenient replay.
    fn first_sample(&self, model_id: &str, prompt_hash: &str) -> Option<FixtureRecord> {
        let lo = (model_id.to_string(), prompt_hash.to_string(), 0);
        let hi = (model_id.to_string(), prompt_hash.to_string(), u32::MAX);
        self.records.read().expect("fixture lock").range(lo..=hi).next().map(|(_, r)| r.clone())
    }

    /// Adds a completion. Re-recording identical text is a no-op; different
    /// text under an existing key is a conflict.
    pub fn record(
        &self,
        model_id: &str,
        request: &GenerationRequest,
        output: &ModelOutput,
    ) -> Result<RecordOutcome, BackendError> {
        let record = FixtureRecord {
            model_id: model_id.to_string(),
            prompt_hash: prompt_hash(&request.prompt),
            sample: request.sample_index,
            prompt: request.prompt.clone(),
            text: output.text.clone(),
            meta: FixtureMeta {
                latency_ms: output.latency_ms,
                token_counts: output.token_counts,
                attempt: output.attempt,
            },
        };
        self.insert(record)
    }

    pub fn insert(&self, record: FixtureRecord) -> Result<RecordOutcome, BackendError> {
        let mut records = self.records.write().expect("fixture lock");
        let key = record.key();
        if let Some(existing) = records.get(&key) {
            if existing.text == record.text {
                return Ok(RecordOutcome::Unchanged);
            }
            return Err(BackendError::FixtureConflict { model_id: key.0, prompt_hash: key.1, sample: key.2 });
        }
        records.insert(key, record);
        if let Some(path) = &self.path {
            write_records(path, &records)?;
        }
        Ok(RecordOutcome::Inserted)
    }

    /// Writes every record, sorted by key, to `path`.
    pub fn save_to(&self, path: impl AsRef<Path>) -> Result<(), BackendError> {
        write_records(path.as_ref(), &self.records.read().expect("fixture lock"))
    }
}

fn parse_records(path: &Path, reader: impl BufRead) -> Result<BTreeMap<Key, FixtureRecord>, BackendError> {
    let mut records = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| BackendError::Storage { path: path.to_path_buf(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err =
            |message: String| BackendError::FixtureParse { path: path.to_path_buf(), line: line_no, message };
        let record: FixtureRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if prompt_hash(&record.prompt) != record.prompt_hash {
            return Err(parse_err(format!("prompt_hash {} does not match prompt", record.prompt_hash)));
        }
        let key = record.key();
        if let Some(existing) = records.get(&key) {
            let existing: &FixtureRecord = existing;
            if existing.text != record.text {
                return Err(parse_err("conflicting duplicate record".into()));
            }
            continue;
        }
        records.insert(key, record);
    }
    Ok(records)
}

fn write_records(path: &Path, records: &BTreeMap<Key, FixtureRecord>) -> Result<(), BackendError> {
    let storage = |source: io::Error| BackendError::Storage { path: path.to_path_buf(), source };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(storage)?;
    }
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut out = io::BufWriter::new(fs::File::create(&tmp).map_err(storage)?);
        for record in records.values() {
            let line = serde_json::to_string(record).expect("fixture records serialize");
            writeln!(out, "{line}").map_err(storage)?;
        }
        out.flush().map_err(storage)?;
    }
    fs::rename(&tmp, path).map_err(storage)
}

/// Serves completions from a frozen [`FixtureStore`].
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    store: Arc<FixtureStore>,
    strict: bool,
}

impl ReplayBackend {
    /// A miss is an error.
    pub fn strict(store: Arc<FixtureStore>) -> Self {
        ReplayBackend { store, strict: true }
    }

    /// A miss on the sample index falls back to the lowest recorded sample of
    /// the same prompt.
    pub fn lenient(store: Arc<FixtureStore>) -> Self {
        ReplayBackend { store, strict: false }
    }
}

impl Backend for ReplayBackend {
    fn generate(&self, spec: &ModelSpec, request: &GenerationRequest) -> Result<ModelOutput, BackendError> {
        let hash = prompt_hash(&request.prompt);
        let hit = self.store.get(&spec.model_id, &hash, request.sample_index).or_else(|| {
            if self.strict {
                None
            } else {
                self.store.first_sample(&spec.model_id, &hash)
            }
        });
        match hit {
            Some(record) => Ok(record.to_output()),
            None => Err(BackendError::FixtureMissing {
                model_id: spec.model_id.clone(),
                prompt_hash: hash,
                sample: request.sample_index,
            }),
        }
    }
}

/// Forwards to a live backend and records every completion. Keys already in
/// the store are served from it, so an interrupted recording can resume.
pub struct RecordingBackend {
    inner: Arc<dyn Backend>,
    store: Arc<FixtureStore>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn Backend>, store: Arc<FixtureStore>) -> Self {
        RecordingBackend { inner, store }
    }
}

impl Backend for RecordingBackend {
    fn generate(&self, spec: &ModelSpec, request: &GenerationRequest) -> Result<ModelOutput, BackendError> {
        let hash = prompt_hash(&request.prompt);
        if let Some(record) = self.store.get(&spec.model_id, &hash, request.sample_index) {
            return Ok(record.to_output());
        }
        let output = self.inner.generate(spec, request)?;
        self.store.record(&spec.model_id, request, &output)?;
        Ok(output)
    }
}
