//! Run files, manifests and the dashboard bundle.

mod bundle;

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use bundle::{export_dashboard_bundle, render_bundle, DashboardBundle, BUNDLE_SCHEMA, BUNDLE_VERSION};

use crate::analytics::{AnalyticsReport, BurstParams, ClusterParams};
use crate::extract::{ChunkReport, ExtractedEntity, ExtractionResult, Provenance, RejectedCandidate};
use crate::ingest::{ChunkParams, SourceDocument};
use crate::llm::{BackendSpec, ReflectionScores, TokenUsage};
use crate::schema::SchemaSet;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}

impl StoreError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        StoreError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// One run.jsonl line. A `document` line opens each result; its chunk,
/// entity and rejected lines follow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum RunLine {
    Document {
        doc_id: String,
        usage: TokenUsage,
        latency_ms: u64,
    },
    Chunk {
        doc_id: String,
        #[serde(flatten)]
        report: ChunkReport,
    },
    Entity(ExtractedEntity),
    Rejected(RejectedCandidate),
}

pub fn run_lines(results: &[ExtractionResult]) -> Vec<RunLine> {
    let mut out = Vec::new();
    for r in results {
        out.push(RunLine::Document {
            doc_id: r.doc_id.clone(),
            usage: r.usage,
            latency_ms: r.latency_ms,
        });
        out.extend(r.chunks.iter().map(|c| RunLine::Chunk {
            doc_id: r.doc_id.clone(),
            report: c.clone(),
        }));
        out.extend(r.entities.iter().chain(&r.filtered).cloned().map(RunLine::Entity));
        out.extend(r.rejected.iter().cloned().map(RunLine::Rejected));
    }
    out
}

pub fn render_run(results: &[ExtractionResult]) -> String {
    let mut out = String::new();
    for line in run_lines(results) {
        out.push_str(&serde_json::to_string(&line).expect("run lines serialize"));
        out.push('\n');
    }
    out
}

pub fn parse_run(text: &str) -> Result<Vec<ExtractionResult>, StoreError> {
    parse_lines(
        text.lines().map(|l| Ok::<_, std::io::Error>(l.to_string())),
        Path::new("-"),
    )
}

fn parse_lines<I>(lines: I, path: &Path) -> Result<Vec<ExtractionResult>, StoreError>
where
    I: Iterator<Item = Result<String, std::io::Error>>,
{
    let mut out: Vec<ExtractionResult> = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| StoreError::io(path, e))?;
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let format = |message: String| StoreError::Format { line: n, message };
        let record: RunLine = serde_json::from_str(&line).map_err(|e| format(e.to_string()))?;
        if let RunLine::Document {
            doc_id,
            usage,
            latency_ms,
        } = record
        {
            out.push(ExtractionResult {
                doc_id,
                entities: Vec::new(),
                filtered: Vec::new(),
                rejected: Vec::new(),
                chunks: Vec::new(),
                usage,
                latency_ms,
            });
            continue;
        }
        let Some(current) = out.last_mut() else {
            return Err(format("record before any document line".into()));
        };
        let owner = match &record {
            RunLine::Chunk { doc_id, .. } => doc_id,
            RunLine::Entity(e) => &e.doc_id,
            RunLine::Rejected(r) => &r.doc_id,
            RunLine::Document { .. } => unreachable!(),
        };
        if *owner != current.doc_id {
            return Err(format(format!("record for {owner} inside document {}", current.doc_id)));
        }
        match record {
            RunLine::Chunk { report, .. } => current.chunks.push(report),
            RunLine::Entity(e) if e.provenance == Provenance::Kept => current.entities.push(e),
            RunLine::Entity(e) => current.filtered.push(e),
            RunLine::Rejected(r) => current.rejected.push(r),
            RunLine::Document { .. } => unreachable!(),
        }
    }
    Ok(out)
}

pub fn write_run(results: &[ExtractionResult], path: &Path) -> Result<(), StoreError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| StoreError::io(dir, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| StoreError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for line in run_lines(results) {
        serde_json::to_writer(&mut w, &line).map_err(|e| StoreError::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| StoreError::io(path, e))?;
    }
    w.flush().map_err(|e| StoreError::io(path, e))
}

pub fn read_run(path: &Path) -> Result<Vec<ExtractionResult>, StoreError> {
    let file = std::fs::File::open(path).map_err(|e| StoreError::io(path, e))?;
    parse_lines(BufReader::new(file).lines(), path)
}

/// Serializes with keys sorted at every level and floats rounded to six
/// decimals, pretty-printed with a trailing newline.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("value serializes");
    let mut text = serde_json::to_string_pretty(&canonicalize(v)).expect("json serializes");
    text.push('\n');
    text
}

fn canonicalize(v: serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match v {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(entries.into_iter().map(|(k, v)| (k, canonicalize(v))).collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonicalize).collect()),
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            let r = (x * 1e6).round() / 1e6;
            serde_json::Number::from_f64(if r == 0.0 { 0.0 } else { r }).map_or(Value::Null, Value::Number)
        }
        other => other,
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), StoreError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| StoreError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| StoreError::io(path, e))
}

pub fn write_analytics(report: &AnalyticsReport, path: &Path) -> Result<(), StoreError> {
    write_text(path, &canonical_json(report))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let text = std::fs::read_to_string(path).map_err(|e| StoreError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| StoreError::Format {
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn read_analytics(path: &Path) -> Result<AnalyticsReport, StoreError> {
    read_json(path)
}

pub fn write_manifest(manifest: &RunManifest, path: &Path) -> Result<(), StoreError> {
    write_text(path, &canonical_json(manifest))
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, StoreError> {
    read_json(path)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub doc_id: String,
    pub locator: String,
    pub sha256: String,
}

impl CorpusEntry {
    pub fn of(doc: &SourceDocument) -> Self {
        Self {
            doc_id: doc.doc_id.clone(),
            locator: doc.locator.clone(),
            sha256: sha256_hex(doc.body.as_bytes()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionSettings {
    pub enabled: bool,
    pub thresholds: ReflectionScores,
}

/// Everything needed to reproduce a run. The backend carries only the name
/// of the key variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub schema_version: String,
    pub schema_sha256: String,
    /// Full schema, so a run file can be scored and exported on its own.
    pub schema: SchemaSet,
    pub backend: BackendSpec,
    pub corpus: Vec<CorpusEntry>,
    pub chunking: ChunkParams,
    pub reflection: ReflectionSettings,
    pub context_correction: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<ClusterParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burst: Option<BurstParams>,
    /// RFC 3339; excluded from the digest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
    pub tool_version: String,
}

impl RunManifest {
    pub fn new(
        schema: &SchemaSet,
        backend: BackendSpec,
        docs: &[SourceDocument],
        chunking: ChunkParams,
        reflection: ReflectionSettings,
        context_correction: bool,
    ) -> Self {
        let mut m = Self {
            run_id: String::new(),
            schema_version: schema.version.clone(),
            schema_sha256: schema.digest(),
            schema: schema.clone(),
            backend,
            corpus: docs.iter().map(CorpusEntry::of).collect(),
            chunking,
            reflection,
            context_correction,
            cluster: None,
            burst: None,
            created_at: None,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        };
        m.run_id = m.digest()[..16].to_string();
        m
    }

    pub fn stamp_now(&mut self) {
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs() as i64);
        self.created_at = chrono::DateTime::from_timestamp(secs, 0).map(|t| t.to_rfc3339());
    }

    /// Content hash over every field except `run_id` and `created_at`.
    pub fn digest(&self) -> String {
        let mut copy = self.clone();
        copy.run_id.clear();
        copy.created_at = None;
        sha256_hex(canonical_json(&copy).as_bytes())
    }
}
