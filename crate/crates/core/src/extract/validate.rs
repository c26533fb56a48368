use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{CategoryValue, EntityValue, StructuredValue};
use crate::geo::GeoValue;
use crate::llm::{CandidateEntity, CandidateValue};
use crate::schema::{AttributeKind, SchemaSet};
use crate::temporal::parse_iso;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    BadIso,
    BadLabel,
    BadSpan,
    MissingAttr,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::BadIso => "bad_iso",
            RejectReason::BadLabel => "bad_label",
            RejectReason::BadSpan => "bad_span",
            RejectReason::MissingAttr => "missing_attr",
        }
    }
}

/// A candidate that passed validation, with a typed value and a span
/// (chars, relative to the chunk) known to lie inside the chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidCandidate {
    /// Position in the parsed payload.
    pub index: usize,
    pub candidate: CandidateEntity,
    pub span: (usize, usize),
    pub value: EntityValue,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub index: usize,
    pub candidate: CandidateEntity,
    pub reason: RejectReason,
    pub detail: String,
}

fn matches_at(hay: &[char], pos: usize, needle: &[char], fold: bool) -> bool {
    hay.len() >= pos + needle.len()
        && hay[pos..pos + needle.len()].iter().zip(needle).all(|(a, b)| {
            if fold {
                a.to_lowercase().eq(b.to_lowercase())
            } else {
                a == b
            }
        })
}

/// Occurrence of `surface` in `text` nearest to `near` (chars), preferring
/// exact case over case-folded matches.
pub fn locate_surface(text: &str, surface: &str, near: usize) -> Option<(usize, usize)> {
    let hay: Vec<char> = text.chars().collect();
    let needle: Vec<char> = surface.chars().collect();
    if needle.is_empty() || needle.len() > hay.len() {
        return None;
    }
    for fold in [false, true] {
        let best = (0..=hay.len() - needle.len())
            .filter(|&p| matches_at(&hay, p, &needle, fold))
            .min_by_key(|&p| (p.abs_diff(near), p));
        if let Some(p) = best {
            return Some((p, p + needle.len()));
        }
    }
    None
}

fn resolve_span(candidate: &CandidateEntity, text: &str, len: usize) -> Result<(usize, usize), String> {
    match candidate.span {
        Some((s, e)) if s >= e || e > len => Err(format!("span [{s}, {e}] outside chunk of {len} chars")),
        Some((s, e)) => {
            let slice: String = text.chars().skip(s).take(e - s).collect();
            if slice == candidate.surface {
                Ok((s, e))
            } else {
                Ok(locate_surface(text, &candidate.surface, s).unwrap_or((s, e)))
            }
        }
        None => locate_surface(text, &candidate.surface, 0)
            .ok_or_else(|| format!("surface {:?} not found in chunk", candidate.surface)),
    }
}

fn coerce_attribute(kind: AttributeKind, value: &Value) -> Option<Value> {
    match (kind, value) {
        (_, Value::Null) => None,
        (AttributeKind::Number, Value::Number(_)) => Some(value.clone()),
        (AttributeKind::Number, Value::String(s)) => {
            let n: f64 = s.trim().replace(',', "").parse().ok()?;
            serde_json::Number::from_f64(n).map(Value::Number)
        }
        (AttributeKind::Number, _) => None,
        (_, Value::String(s)) if s.trim().is_empty() => None,
        (_, Value::String(_)) => Some(value.clone()),
        (_, Value::Number(n)) => Some(Value::String(n.to_string())),
        (_, Value::Bool(b)) => Some(Value::String(b.to_string())),
        _ => None,
    }
}

fn typed_value(candidate: &CandidateEntity, schema: &SchemaSet) -> Result<EntityValue, (RejectReason, String)> {
    let dim = schema.dimension(&candidate.dimension).ok_or_else(|| {
        (
            RejectReason::BadLabel,
            format!("unknown dimension {}", candidate.dimension),
        )
    })?;
    match &candidate.value {
        CandidateValue::Temporal { iso } => parse_iso(iso)
            .map(|v| EntityValue::Temporal(v.with_expression(candidate.surface.clone())))
            .map_err(|e| (RejectReason::BadIso, e.to_string())),
        CandidateValue::Place { name, qualifier } => {
            Ok(EntityValue::Geo(GeoValue::unresolved(name, qualifier.as_deref())))
        }
        CandidateValue::Category { label } => dim
            .canonical_label(label)
            .map(|l| EntityValue::Category(CategoryValue { label: l.to_string() }))
            .ok_or_else(|| (RejectReason::BadLabel, format!("label {label:?} not in vocabulary"))),
        CandidateValue::Structured { attributes } => {
            let mut out = BTreeMap::new();
            for spec in dim.attributes.as_deref().unwrap_or_default() {
                let value = attributes
                    .get(&spec.name)
                    .and_then(|v| coerce_attribute(spec.kind, v))
                    .ok_or_else(|| {
                        (
                            RejectReason::MissingAttr,
                            format!("attribute {:?} missing or mistyped", spec.name),
                        )
                    })?;
                out.insert(spec.name.clone(), value);
            }
            Ok(EntityValue::Structured(StructuredValue { attributes: out }))
        }
    }
}

/// Splits candidates into valid and rejected. Valid candidates are returned
/// in (span start, span end, schema order, payload order) order.
pub fn validate_candidates(
    candidates: &[CandidateEntity],
    chunk_text: &str,
    schema: &SchemaSet,
) -> (Vec<ValidCandidate>, Vec<Rejection>) {
    let len = chunk_text.chars().count();
    let mut valid = Vec::new();
    let mut rejected = Vec::new();
    for (index, candidate) in candidates.iter().enumerate() {
        let outcome = typed_value(candidate, schema).and_then(|value| {
            resolve_span(candidate, chunk_text, len)
                .map(|span| (span, value))
                .map_err(|detail| (RejectReason::BadSpan, detail))
        });
        match outcome {
            Ok((span, value)) => valid.push(ValidCandidate {
                index,
                candidate: candidate.clone(),
                span,
                value,
            }),
            Err((reason, detail)) => rejected.push(Rejection {
                index,
                candidate: candidate.clone(),
                reason,
                detail,
            }),
        }
    }
    let dim_pos = |name: &str| schema.dimensions.iter().position(|d| d.name == name);
    valid.sort_by_key(|v| (v.span.0, v.span.1, dim_pos(&v.candidate.dimension), v.index));
    (valid, rejected)
}
