//! Per-document extraction: prompt, complete, parse, validate, reflect,
//! post-process and remember, chunk by chunk.

mod memory;
mod validate;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tracing::{debug, info, warn};

pub use memory::{ExtractionMemory, DEFAULT_MEMORY_K};
pub use validate::{locate_surface, validate_candidates, RejectReason, Rejection, ValidCandidate};

use crate::geo::{GeoQuery, GeoValue, Geocoder};
use crate::ingest::{chunk_document, Chunk, ChunkError, ChunkParams, SourceDocument};
use crate::llm::{
    complete, parse_entity_payload, parse_reflection_payload, render_extraction_prompt, render_reflection_prompt,
    CandidateEntity, ChatBackend, ModelConfig, PromptContext, ReflectionScores, RetryPolicy, StateContext, TokenUsage,
};
use crate::schema::SchemaSet;
use crate::temporal::{relative_role, resolve_relative, TemporalValue};

pub const DEFAULT_REFLECTION_THRESHOLD: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryValue {
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredValue {
    pub attributes: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EntityValue {
    Temporal(TemporalValue),
    Geo(GeoValue),
    Category(CategoryValue),
    Structured(StructuredValue),
}

impl EntityValue {
    /// Canonical form used to detect duplicate mentions.
    pub fn normalized_key(&self) -> String {
        match self {
            EntityValue::Temporal(t) => t.to_iso(),
            EntityValue::Geo(g) if g.is_resolved() => format!(
                "{}|{}|{}",
                g.resolved_name.as_deref().unwrap_or_default(),
                g.admin_name.as_deref().unwrap_or_default(),
                g.country_code.as_deref().unwrap_or_default()
            ),
            EntityValue::Geo(g) => format!("?{}", g.name.to_lowercase()),
            EntityValue::Category(c) => c.label.clone(),
            EntityValue::Structured(s) => serde_json::to_string(&s.attributes).unwrap_or_default(),
        }
    }

    pub fn as_temporal(&self) -> Option<&TemporalValue> {
        match self {
            EntityValue::Temporal(t) => Some(t),
            _ => None,
        }
    }

    pub fn as_geo(&self) -> Option<&GeoValue> {
        match self {
            EntityValue::Geo(g) => Some(g),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Kept,
    FilteredReflection,
    FilteredValidation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedEntity {
    pub entity_id: String,
    pub dimension: String,
    pub surface: String,
    pub doc_id: String,
    pub chunk_index: usize,
    /// Char offsets in the document body, end exclusive.
    pub doc_span: (usize, usize),
    pub value: EntityValue,
    pub confidence: f64,
    pub reflection: Option<ReflectionScores>,
    pub provenance: Provenance,
}

/// Payload item that failed validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedCandidate {
    pub entity_id: String,
    pub doc_id: String,
    pub chunk_index: usize,
    pub candidate: CandidateEntity,
    pub reason: RejectReason,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkStatus {
    Ok,
    PayloadFailed,
    BackendFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkReport {
    pub chunk_index: usize,
    pub char_start: usize,
    pub char_end: usize,
    pub status: ChunkStatus,
    pub candidates: usize,
    /// Payload items dropped for malformed shape.
    pub malformed: usize,
    pub kept: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub reflection_applied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub doc_id: String,
    pub entities: Vec<ExtractedEntity>,
    /// Reflection-filtered entities.
    pub filtered: Vec<ExtractedEntity>,
    pub rejected: Vec<RejectedCandidate>,
    pub chunks: Vec<ChunkReport>,
    pub usage: TokenUsage,
    /// Sum of backend-reported latencies.
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractOptions {
    pub reflection: bool,
    pub thresholds: ReflectionScores,
    /// Memory-driven geocoding help: anchor-admin step and tally correction.
    pub context_correction: bool,
    /// Country code preferred for every toponym.
    pub bias: Option<String>,
    pub memory_k: usize,
    pub mem_budget: usize,
    pub model: ModelConfig,
    pub retry: RetryPolicy,
    pub chunking: ChunkParams,
    /// Worker threads for corpus extraction; 0 means available parallelism.
    pub workers: usize,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            reflection: true,
            thresholds: ReflectionScores::uniform(DEFAULT_REFLECTION_THRESHOLD),
            context_correction: true,
            bias: None,
            memory_k: DEFAULT_MEMORY_K,
            mem_budget: 4000,
            model: ModelConfig::default(),
            retry: RetryPolicy::default(),
            chunking: ChunkParams::default(),
            workers: 0,
        }
    }
}

/// Outcome of the reflection pass over one chunk's valid candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionOutcome {
    /// Per candidate, in input order; `None` when not scored.
    pub scores: Vec<Option<ReflectionScores>>,
    pub kept: Vec<bool>,
    /// False when the call failed and every candidate was kept.
    pub applied: bool,
    pub usage: TokenUsage,
    pub latency_ms: u64,
}

fn display_candidate(v: &ValidCandidate) -> String {
    match &v.value {
        EntityValue::Temporal(t) => t.to_iso(),
        EntityValue::Geo(g) => match &g.qualifier {
            Some(q) => format!("{}, {q}", g.name),
            None => g.name.clone(),
        },
        EntityValue::Category(c) => c.label.clone(),
        EntityValue::Structured(s) => serde_json::to_string(&s.attributes).unwrap_or_default(),
    }
}

/// Scores all candidates of a chunk in one call and applies the
/// all-criteria threshold rule. Fails open.
pub fn reflect(
    candidates: &[ValidCandidate],
    chunk: &Chunk,
    state: &StateContext,
    backend: &dyn ChatBackend,
    opts: &ExtractOptions,
) -> ReflectionOutcome {
    let keep_all = |usage, latency_ms| ReflectionOutcome {
        scores: vec![None; candidates.len()],
        kept: vec![true; candidates.len()],
        applied: false,
        usage,
        latency_ms,
    };
    if candidates.is_empty() {
        return keep_all(TokenUsage::default(), 0);
    }
    let rows: Vec<(usize, String, String, String)> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            (
                i,
                c.candidate.dimension.clone(),
                c.candidate.surface.clone(),
                display_candidate(c),
            )
        })
        .collect();
    let req = render_reflection_prompt(chunk, state, &rows, &opts.model);
    let response = match complete(backend, &req, &opts.retry) {
        Ok(r) => r,
        Err(err) => {
            warn!(doc_id = %chunk.doc_id, chunk = chunk.chunk_index, %err, "reflection call failed; keeping all candidates");
            return keep_all(TokenUsage::default(), 0);
        }
    };
    let scores = match parse_reflection_payload(&response.text) {
        Ok(s) => s,
        Err(err) => {
            warn!(doc_id = %chunk.doc_id, chunk = chunk.chunk_index, %err, "reflection unparseable; keeping all candidates");
            return keep_all(response.usage, response.latency_ms);
        }
    };
    let scores: Vec<Option<ReflectionScores>> = (0..candidates.len()).map(|i| scores.get(&i).copied()).collect();
    let kept = scores
        .iter()
        .map(|s| s.is_none_or(|s| s.meets(&opts.thresholds)))
        .collect();
    ReflectionOutcome {
        scores,
        kept,
        applied: true,
        usage: response.usage,
        latency_ms: response.latency_ms,
    }
}

fn spans_overlap(a: (usize, usize), b: (usize, usize)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

/// Merges duplicate mentions from overlapping chunks: same dimension, same
/// normalized value and overlapping doc spans. The earlier chunk's entity
/// survives with the larger confidence.
pub fn dedupe_overlap(mut entities: Vec<ExtractedEntity>) -> Vec<ExtractedEntity> {
    entities.sort_by_key(|e| (e.chunk_index, e.doc_span.0, e.doc_span.1));
    let mut out: Vec<ExtractedEntity> = Vec::with_capacity(entities.len());
    let mut keys: Vec<String> = Vec::with_capacity(entities.len());
    for entity in entities {
        let key = entity.value.normalized_key();
        let dup = out.iter().zip(&keys).position(|(kept, k)| {
            kept.dimension == entity.dimension && *k == key && spans_overlap(kept.doc_span, entity.doc_span)
        });
        match dup {
            Some(i) => {
                debug!(kept = %out[i].entity_id, dropped = %entity.entity_id, "merging overlap duplicate");
                out[i].confidence = out[i].confidence.max(entity.confidence);
            }
            None => {
                keys.push(key);
                out.push(entity);
            }
        }
    }
    out
}

/// Extraction pipeline bound to a schema, backend and geocoder.
pub struct Extractor {
    schema: SchemaSet,
    backend: Arc<dyn ChatBackend>,
    geocoder: Arc<Geocoder>,
    opts: ExtractOptions,
}

impl Extractor {
    pub fn new(
        schema: SchemaSet,
        backend: Arc<dyn ChatBackend>,
        geocoder: Arc<Geocoder>,
        opts: ExtractOptions,
    ) -> Self {
        Self {
            schema,
            backend,
            geocoder,
            opts,
        }
    }

    pub fn schema(&self) -> &SchemaSet {
        &self.schema
    }

    pub fn options(&self) -> &ExtractOptions {
        &self.opts
    }

    pub fn geocoder(&self) -> &Geocoder {
        &self.geocoder
    }

    /// Chunks `doc` with the configured parameters and extracts it.
    pub fn extract_document(&self, doc: &SourceDocument) -> Result<ExtractionResult, ChunkError> {
        let chunks = chunk_document(doc, self.opts.chunking)?;
        Ok(self.extract_chunks(doc, &chunks))
    }

    /// Extracts pre-computed chunks sequentially, carrying memory forward.
    pub fn extract_chunks(&self, doc: &SourceDocument, chunks: &[Chunk]) -> ExtractionResult {
        let doc_ref = Arc::new(doc.clone());
        let mut memory = ExtractionMemory::new(self.opts.memory_k);
        let mut result = ExtractionResult {
            doc_id: doc.doc_id.clone(),
            entities: Vec::new(),
            filtered: Vec::new(),
            rejected: Vec::new(),
            chunks: Vec::with_capacity(chunks.len()),
            usage: TokenUsage::default(),
            latency_ms: 0,
        };
        for chunk in chunks {
            let report = self.extract_chunk(doc, &doc_ref, chunk, chunks.len(), &mut memory, &mut result);
            result.chunks.push(report);
        }
        result.entities = dedupe_overlap(std::mem::take(&mut result.entities));
        info!(
            doc_id = %doc.doc_id,
            chunks = chunks.len(),
            kept = result.entities.len(),
            filtered = result.filtered.len(),
            rejected = result.rejected.len(),
            "document extracted"
        );
        result
    }

    fn extract_chunk(
        &self,
        doc: &SourceDocument,
        doc_ref: &Arc<SourceDocument>,
        chunk: &Chunk,
        chunk_count: usize,
        memory: &mut ExtractionMemory,
        result: &mut ExtractionResult,
    ) -> ChunkReport {
        let mut report = ChunkReport {
            chunk_index: chunk.chunk_index,
            char_start: chunk.char_start,
            char_end: chunk.char_end,
            status: ChunkStatus::Ok,
            candidates: 0,
            malformed: 0,
            kept: 0,
            error: None,
            reflection_applied: false,
        };
        let state = StateContext::for_chunk(doc, chunk.chunk_index, chunk_count);
        let ctx = PromptContext {
            c_mem: memory.digest(),
            anchors: memory.anchor_lines(),
            mem_budget: self.opts.mem_budget,
            c_state: state.clone(),
            c_instr: memory.instructions(),
            c_tools: Some(doc_ref.clone()),
        };

        let response = render_extraction_prompt(chunk, &self.schema, &ctx, &self.opts.model)
            .and_then(|req| complete(self.backend.as_ref(), &req, &self.opts.retry));
        let response = match response {
            Ok(r) => r,
            Err(err) => {
                warn!(doc_id = %doc.doc_id, chunk = chunk.chunk_index, %err, "extraction call failed");
                report.status = ChunkStatus::BackendFailed;
                report.error = Some(err.to_string());
                return report;
            }
        };
        result.usage += response.usage;
        result.latency_ms += response.latency_ms;

        let parsed = match parse_entity_payload(&response.text, &self.schema) {
            Ok(p) => p,
            Err(err) => {
                warn!(doc_id = %doc.doc_id, chunk = chunk.chunk_index, "payload unparseable");
                report.status = ChunkStatus::PayloadFailed;
                report.error = Some(err.to_string());
                return report;
            }
        };
        report.candidates = parsed.candidates.len();
        report.malformed = parsed.dropped;

        let entity_id = |index: usize| format!("{}:{}:{}", doc.doc_id, chunk.chunk_index, index);
        let (valid, rejections) = validate_candidates(&parsed.candidates, &chunk.text, &self.schema);
        for r in rejections {
            debug!(doc_id = %doc.doc_id, chunk = chunk.chunk_index, reason = r.reason.as_str(), detail = %r.detail, "candidate rejected");
            result.rejected.push(RejectedCandidate {
                entity_id: entity_id(r.index),
                doc_id: doc.doc_id.clone(),
                chunk_index: chunk.chunk_index,
                candidate: r.candidate,
                reason: r.reason,
                detail: r.detail,
            });
        }

        let outcome = if self.opts.reflection {
            reflect(&valid, chunk, &state, self.backend.as_ref(), &self.opts)
        } else {
            ReflectionOutcome {
                scores: vec![None; valid.len()],
                kept: vec![true; valid.len()],
                applied: false,
                usage: TokenUsage::default(),
                latency_ms: 0,
            }
        };
        report.reflection_applied = outcome.applied;
        result.usage += outcome.usage;
        result.latency_ms += outcome.latency_ms;

        let mut kept_here = Vec::new();
        for ((candidate, scores), keep) in valid.into_iter().zip(outcome.scores).zip(outcome.kept) {
            let mut entity = ExtractedEntity {
                entity_id: entity_id(candidate.index),
                dimension: candidate.candidate.dimension.clone(),
                surface: candidate.candidate.surface.clone(),
                doc_id: doc.doc_id.clone(),
                chunk_index: chunk.chunk_index,
                doc_span: (chunk.char_start + candidate.span.0, chunk.char_start + candidate.span.1),
                value: candidate.value,
                confidence: candidate.candidate.confidence,
                reflection: scores,
                provenance: if keep {
                    Provenance::Kept
                } else {
                    Provenance::FilteredReflection
                },
            };
            if !keep {
                result.filtered.push(entity);
                continue;
            }
            self.post_process(&mut entity, doc, memory);
            kept_here.push(entity);
        }
        report.kept = kept_here.len();
        for entity in &kept_here {
            memory.remember(entity);
        }
        result.entities.extend(kept_here);
        report
    }

    /// Temporal resolution and geocoding for a kept entity. Anchors and the
    /// country tally advance immediately so later mentions in the same chunk
    /// see them.
    fn post_process(&self, entity: &mut ExtractedEntity, doc: &SourceDocument, memory: &mut ExtractionMemory) {
        match &mut entity.value {
            EntityValue::Temporal(value) => {
                if let Some(role) = relative_role(&entity.surface) {
                    value.relative = true;
                    if let Some(anchor) = memory.anchor_for(role, doc.pub_date) {
                        match resolve_relative(&entity.surface, &anchor) {
                            Ok(resolved) => {
                                if resolved.to_iso() != value.to_iso() {
                                    debug!(
                                        surface = %entity.surface,
                                        model = %value.to_iso(),
                                        rule = %resolved.to_iso(),
                                        "relative date disagreement; rule result kept"
                                    );
                                }
                                *value = resolved;
                            }
                            Err(err) => debug!(%err, "relative expression left as extracted"),
                        }
                    }
                }
                memory.observe_temporal(value);
            }
            EntityValue::Geo(value) => {
                let mut query = GeoQuery::new(&value.name);
                if let Some(q) = &value.qualifier {
                    query = query.with_qualifier(q);
                }
                if let Some(bias) = &self.opts.bias {
                    query = query.with_bias(bias);
                }
                if self.opts.context_correction {
                    query = query.with_anchor(memory.spatial_anchor().and_then(GeoValue::region));
                }
                let mut resolved = self.geocoder.geocode(&query);
                if self.opts.context_correction {
                    resolved = self.geocoder.apply_context_correction(&resolved, memory.tally());
                }
                *value = resolved;
                memory.observe_place(value);
            }
            EntityValue::Category(_) | EntityValue::Structured(_) => {}
        }
    }

    /// Extracts documents in parallel; output order follows input order.
    pub fn extract_corpus(&self, docs: &[SourceDocument]) -> Vec<Result<ExtractionResult, ChunkError>> {
        let workers = if self.opts.workers == 0 {
            std::thread::available_parallelism().map_or(1, usize::from)
        } else {
            self.opts.workers
        };
        match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            Ok(pool) => pool.install(|| {
                use rayon::prelude::*;
                docs.par_iter().map(|d| self.extract_document(d)).collect()
            }),
            Err(err) => {
                warn!(%err, "thread pool unavailable; extracting sequentially");
                docs.iter().map(|d| self.extract_document(d)).collect()
            }
        }
    }
}
