use std::fmt::Write as _;
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{CompletionRequest, LlmError};
use crate::ingest::{Chunk, SourceDocument};
use crate::schema::{render_schema_instructions, DimensionKind, SchemaSet};

pub const NO_PRIOR_ENTITIES: &str = "(no prior entities)";

const EXTRACTION_PREAMBLE: &str = "You extract structured spatiotemporal information from documents. \
Read the text passage and return every mention that belongs to one of the listed dimensions, \
all dimensions at once, in a single JSON object. Copy surface text verbatim from the passage. \
Use the document state and memory to resolve relative dates and ambiguous place names. \
Never invent mentions that are not in the passage.";

const REFLECTION_PREAMBLE: &str = "You review candidate entities extracted from a text passage. \
Score each candidate from 0 to 1 on three criteria: relevance (the mention belongs to its dimension), \
accuracy (the value correctly normalizes the surface text), and consistency (the value agrees with the \
rest of the passage and the document context). Return only JSON.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Upper bound on system + user text, in chars.
    pub max_prompt_chars: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            model: "replay".to_string(),
            temperature: 0.0,
            max_tokens: 2048,
            max_prompt_chars: 32_000,
        }
    }
}

impl ModelConfig {
    pub fn named(model: &str) -> Self {
        Self {
            model: model.to_string(),
            ..Self::default()
        }
    }
}

/// Document metadata block; present for every chunk.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StateContext {
    pub doc_id: String,
    pub title: Option<String>,
    pub pub_date: Option<NaiveDate>,
    pub source_location: Option<String>,
    /// Zero-based; rendered one-based.
    pub chunk_index: usize,
    pub chunk_count: usize,
}

impl StateContext {
    pub fn for_chunk(doc: &SourceDocument, chunk_index: usize, chunk_count: usize) -> Self {
        Self {
            doc_id: doc.doc_id.clone(),
            title: doc.title.clone(),
            pub_date: doc.pub_date,
            source_location: doc.source_location.clone(),
            chunk_index,
            chunk_count,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PromptContext {
    /// Memory digest lines, oldest first. Anchor lines are kept longest.
    pub c_mem: Vec<String>,
    pub anchors: Vec<String>,
    /// Character budget for the rendered memory block.
    pub mem_budget: usize,
    pub c_state: StateContext,
    pub c_instr: Vec<String>,
    /// Full document for post-processing tools; never rendered.
    pub c_tools: Option<Arc<SourceDocument>>,
}

impl PromptContext {
    pub fn new(c_state: StateContext, mem_budget: usize) -> Self {
        Self {
            mem_budget,
            c_state,
            ..Self::default()
        }
    }
}

/// Memory lines that fit `budget` chars (newline-joined), dropping the oldest
/// entries first and anchors last.
fn fit_memory(anchors: &[String], entries: &[String], budget: usize) -> (Vec<String>, usize) {
    let cost = |line: &String, used: usize| line.chars().count() + usize::from(used > 0);
    let mut used = 0usize;
    let mut kept_anchors = Vec::new();
    for line in anchors {
        let c = cost(line, used);
        if used + c > budget {
            break;
        }
        used += c;
        kept_anchors.push(line.clone());
    }
    let mut kept_entries = Vec::new();
    for line in entries.iter().rev() {
        let c = cost(line, used);
        if used + c > budget {
            break;
        }
        used += c;
        kept_entries.push(line.clone());
    }
    kept_entries.reverse();
    let n = kept_anchors.len();
    kept_anchors.extend(kept_entries);
    (kept_anchors, n)
}

fn opt_or_none<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "(none)".to_string())
}

fn render_user(chunk: &Chunk, schema: &SchemaSet, ctx: &PromptContext, memory: &[String]) -> String {
    let st = &ctx.c_state;
    let mut out = render_schema_instructions(schema);

    out.push_str("\n## Document state\n");
    let _ = writeln!(out, "Document: {}", st.doc_id);
    let _ = writeln!(out, "Title: {}", opt_or_none(st.title.as_deref()));
    let _ = writeln!(out, "Publication date: {}", opt_or_none(st.pub_date));
    let _ = writeln!(out, "Source location: {}", opt_or_none(st.source_location.as_deref()));
    let _ = writeln!(out, "Chunk: {} of {}", st.chunk_index + 1, st.chunk_count);

    out.push_str("\n## Memory (earlier in this document, oldest first)\n");
    if memory.is_empty() {
        out.push_str(NO_PRIOR_ENTITIES);
        out.push('\n');
    } else {
        for line in memory {
            out.push_str(line);
            out.push('\n');
        }
    }

    out.push_str("\n## Consistency instructions\n");
    if ctx.c_instr.is_empty() {
        out.push_str("(none)\n");
    } else {
        for line in &ctx.c_instr {
            let _ = writeln!(out, "- {line}");
        }
    }

    out.push_str("\n## Passage\n<<<\n");
    out.push_str(&chunk.text);
    out.push_str("\n>>>\n");

    out.push_str("\n## Output format\n");
    out.push_str("Return one JSON object and nothing else. It has exactly one key per dimension: ");
    let keys: Vec<String> = schema.dimensions.iter().map(|d| format!("\"{}\"", d.name)).collect();
    out.push_str(&keys.join(", "));
    out.push_str(". Each key maps to an array (empty if nothing was found) of items:\n");
    out.push_str("  \"text\": surface text copied verbatim from the passage\n");
    out.push_str("  \"span\": [start, end] character offsets of the text within the passage, end exclusive\n");
    out.push_str("  \"confidence\": number between 0 and 1\n");
    let mut seen = Vec::new();
    for dim in &schema.dimensions {
        if seen.contains(&dim.kind) {
            continue;
        }
        seen.push(dim.kind);
        let line = match dim.kind {
            DimensionKind::NormalizedTemporal => {
                "  temporal items: \"value\": ISO 8601 string resolved against the document state and memory"
            }
            DimensionKind::GeocodedSpatial => {
                "  spatial items: \"value\": place name; optional \"qualifier\": enclosing region or country if stated or implied"
            }
            DimensionKind::Categorical => "  categorical items: \"value\": one vocabulary label",
            DimensionKind::Structured => "  structured items: \"value\": object with the listed attributes",
        };
        out.push_str(line);
        out.push('\n');
    }
    out
}

/// Assembles the single-call extraction prompt. Order: preamble (system),
/// then schema instructions, state, memory, instructions, passage and
/// output contract (user).
pub fn render_extraction_prompt(
    chunk: &Chunk,
    schema: &SchemaSet,
    ctx: &PromptContext,
    model: &ModelConfig,
) -> Result<CompletionRequest, LlmError> {
    let (mut memory, mut anchors_kept) = fit_memory(&ctx.anchors, &ctx.c_mem, ctx.mem_budget);
    loop {
        let user = render_user(chunk, schema, ctx, &memory);
        let chars = EXTRACTION_PREAMBLE.chars().count() + user.chars().count();
        if chars <= model.max_prompt_chars {
            return Ok(CompletionRequest {
                model: model.model.clone(),
                system: EXTRACTION_PREAMBLE.to_string(),
                user,
                temperature: model.temperature,
                max_tokens: model.max_tokens,
            });
        }
        if memory.is_empty() {
            return Err(LlmError::ContextOverflow {
                chars,
                budget: model.max_prompt_chars,
            });
        }
        // Entries follow anchors; drop the oldest entry, then the last anchor.
        if memory.len() > anchors_kept {
            memory.remove(anchors_kept);
        } else {
            memory.pop();
            anchors_kept -= 1;
        }
    }
}

/// Reflection prompt over the candidates of one chunk. `candidates` is a
/// list of (id, dimension, surface, value) rows.
pub fn render_reflection_prompt(
    chunk: &Chunk,
    state: &StateContext,
    candidates: &[(usize, String, String, String)],
    model: &ModelConfig,
) -> CompletionRequest {
    let mut user = String::new();
    let _ = writeln!(user, "Document: {}", state.doc_id);
    let _ = writeln!(user, "Publication date: {}", opt_or_none(state.pub_date));
    let _ = writeln!(user, "Chunk: {} of {}", state.chunk_index + 1, state.chunk_count);
    user.push_str("\n## Passage\n<<<\n");
    user.push_str(&chunk.text);
    user.push_str("\n>>>\n\n## Candidates\n");
    for (id, dim, surface, value) in candidates {
        let _ = writeln!(user, "{id}. [{dim}] \"{surface}\" -> {value}");
    }
    user.push_str(
        "\n## Output format\nReturn {\"scores\": [{\"id\": <candidate id>, \"relevance\": <0-1>, \
\"accuracy\": <0-1>, \"consistency\": <0-1>}, ...]} with one entry per candidate.\n",
    );
    CompletionRequest {
        model: model.model.clone(),
        system: REFLECTION_PREAMBLE.to_string(),
        user,
        temperature: model.temperature,
        max_tokens: model.max_tokens,
    }
}
