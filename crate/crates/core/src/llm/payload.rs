use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use tracing::debug;

use super::LlmError;
use crate::schema::{normalize_name, DimensionKind, SchemaSet};

/// Object starts tried before giving up; bounds work on adversarial input.
const MAX_OBJECT_STARTS: usize = 64;
const DEFAULT_CONFIDENCE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CandidateValue {
    Temporal { iso: String },
    Place { name: String, qualifier: Option<String> },
    Category { label: String },
    Structured { attributes: BTreeMap<String, Value> },
}

/// One item of the model's payload after shape validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntity {
    pub dimension: String,
    pub surface: String,
    /// Char offsets relative to the chunk, as reported by the model.
    pub span: Option<(usize, usize)>,
    pub value: CandidateValue,
    pub confidence: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedPayload {
    pub candidates: Vec<CandidateEntity>,
    /// Items that failed shape validation.
    pub dropped: usize,
    /// Whether repair was needed to parse the object.
    pub repaired: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReflectionScores {
    pub relevance: f64,
    pub accuracy: f64,
    pub consistency: f64,
}

impl ReflectionScores {
    pub fn uniform(t: f64) -> Self {
        Self {
            relevance: t,
            accuracy: t,
            consistency: t,
        }
    }

    /// Every score at or above its threshold.
    pub fn meets(&self, thresholds: &ReflectionScores) -> bool {
        self.relevance >= thresholds.relevance
            && self.accuracy >= thresholds.accuracy
            && self.consistency >= thresholds.consistency
    }
}

enum Scan {
    /// Byte index one past the matching close.
    Closed(usize),
    /// Input ended with these brackets still open.
    Open(Vec<u8>),
    Mismatch,
}

fn scan_object(s: &str, start: usize) -> Scan {
    let bytes = s.as_bytes();
    let mut stack: Vec<u8> = Vec::new();
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => stack.push(b'}'),
            b'[' => stack.push(b']'),
            b'}' | b']' => {
                if stack.pop() != Some(b) {
                    return Scan::Mismatch;
                }
                if stack.is_empty() {
                    return Scan::Closed(i + 1);
                }
            }
            _ => {}
        }
    }
    if in_string {
        Scan::Mismatch
    } else {
        Scan::Open(stack)
    }
}

/// Removes commas that directly precede a closing bracket (outside strings).
fn strip_trailing_commas(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len());
    let mut in_string = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            out.push(c);
            continue;
        }
        if c == '"' {
            in_string = true;
        } else if c == ',' {
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
            if matches!(next, None | Some('}') | Some(']')) {
                continue;
            }
        }
        out.push(c);
    }
    out
}

fn parse_object(text: &str) -> Option<Map<String, Value>> {
    match serde_json::from_str::<Value>(text) {
        Ok(Value::Object(map)) => Some(map),
        _ => None,
    }
}

/// First JSON object recoverable from `raw`, tolerating prose, code fences,
/// trailing commas and one unterminated bracket. The flag reports repair.
pub fn extract_json_object(raw: &str) -> Option<(Map<String, Value>, bool)> {
    let starts = raw.match_indices('{').map(|(i, _)| i).take(MAX_OBJECT_STARTS);
    for start in starts {
        match scan_object(raw, start) {
            Scan::Closed(end) => {
                let candidate = &raw[start..end];
                if let Some(map) = parse_object(candidate) {
                    return Some((map, false));
                }
                if let Some(map) = parse_object(&strip_trailing_commas(candidate)) {
                    return Some((map, true));
                }
            }
            Scan::Open(stack) if stack.len() == 1 => {
                let tail = raw[start..].trim_end().trim_end_matches('`').trim_end();
                let mut repaired = strip_trailing_commas(tail);
                repaired.push(stack[0] as char);
                if let Some(map) = parse_object(&repaired) {
                    return Some((map, true));
                }
            }
            Scan::Open(_) | Scan::Mismatch => {}
        }
    }
    None
}

fn as_text(v: Option<&Value>) -> Option<String> {
    match v? {
        Value::String(s) if !s.trim().is_empty() => Some(s.trim().to_string()),
        _ => None,
    }
}

fn as_unit_interval(v: &Value) -> Option<f64> {
    let x = match v {
        Value::Number(n) => n.as_f64()?,
        Value::String(s) => s.trim().parse().ok()?,
        _ => return None,
    };
    (0.0..=1.0).contains(&x).then_some(x)
}

fn parse_span(v: Option<&Value>) -> Result<Option<(usize, usize)>, ()> {
    match v {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Array(items)) if items.len() == 2 => {
            let a = items[0].as_u64().ok_or(())?;
            let b = items[1].as_u64().ok_or(())?;
            Ok(Some((a as usize, b as usize)))
        }
        Some(_) => Err(()),
    }
}

fn parse_item(dimension: &str, kind: DimensionKind, item: &Value) -> Option<CandidateEntity> {
    let obj = item.as_object()?;
    let raw_value = obj.get("value");
    let surface = as_text(obj.get("text")).or_else(|| as_text(obj.get("surface")));
    let (surface, value) = match kind {
        DimensionKind::NormalizedTemporal => (
            surface?,
            CandidateValue::Temporal {
                iso: as_text(raw_value)?,
            },
        ),
        DimensionKind::GeocodedSpatial => {
            let name = as_text(raw_value).or_else(|| surface.clone())?;
            let qualifier = match obj.get("qualifier") {
                None | Some(Value::Null) => None,
                Some(Value::String(s)) if s.trim().is_empty() => None,
                Some(Value::String(s)) => Some(s.trim().to_string()),
                Some(_) => return None,
            };
            (
                surface.unwrap_or_else(|| name.clone()),
                CandidateValue::Place { name, qualifier },
            )
        }
        DimensionKind::Categorical => {
            let label = as_text(raw_value).or_else(|| as_text(obj.get("label")))?;
            (surface?, CandidateValue::Category { label })
        }
        DimensionKind::Structured => {
            let attrs = raw_value.or_else(|| obj.get("attributes"))?.as_object()?;
            let attributes = attrs.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
            (surface?, CandidateValue::Structured { attributes })
        }
    };
    let span = parse_span(obj.get("span")).ok()?;
    let confidence = match obj.get("confidence") {
        None | Some(Value::Null) => DEFAULT_CONFIDENCE,
        Some(v) => as_unit_interval(v)?,
    };
    Some(CandidateEntity {
        dimension: dimension.to_string(),
        surface,
        span,
        value,
        confidence,
    })
}

/// Parses a single-call extraction payload keyed by dimension name. Keys
/// that are not schema dimensions are ignored; malformed items are dropped
/// and counted.
pub fn parse_entity_payload(raw: &str, schema: &SchemaSet) -> Result<ParsedPayload, LlmError> {
    let (object, repaired) = extract_json_object(raw).ok_or(LlmError::PayloadUnparseable)?;
    let mut out = ParsedPayload {
        repaired,
        ..ParsedPayload::default()
    };
    let mut keyed: Vec<(&str, &Value)> = object
        .iter()
        .filter_map(|(k, v)| {
            let name = normalize_name(k);
            schema.dimension(&name).map(|d| (d.name.as_str(), v))
        })
        .collect();
    // Payload key order is model-controlled; schema order is stable.
    keyed.sort_by_key(|(name, _)| schema.dimensions.iter().position(|d| d.name == *name));
    for (name, value) in keyed {
        let kind = schema.dimension(name).expect("filtered above").kind;
        let items = match value {
            Value::Array(items) => items,
            Value::Null => continue,
            _ => {
                out.dropped += 1;
                continue;
            }
        };
        for item in items {
            match parse_item(name, kind, item) {
                Some(c) => out.candidates.push(c),
                None => {
                    debug!(dimension = name, "dropping malformed payload item");
                    out.dropped += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Parses `{"scores": [{"id", "relevance", "accuracy", "consistency"}]}`.
/// Entries with missing or out-of-range scores are skipped.
pub fn parse_reflection_payload(raw: &str) -> Result<BTreeMap<usize, ReflectionScores>, LlmError> {
    let (object, _) = extract_json_object(raw).ok_or(LlmError::PayloadUnparseable)?;
    let entries = object
        .get("scores")
        .and_then(Value::as_array)
        .ok_or(LlmError::PayloadUnparseable)?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let Some(obj) = entry.as_object() else { continue };
        let Some(id) = obj.get("id").and_then(Value::as_u64) else {
            continue;
        };
        let score = |k: &str| obj.get(k).and_then(as_unit_interval);
        if let (Some(relevance), Some(accuracy), Some(consistency)) =
            (score("relevance"), score("accuracy"), score("consistency"))
        {
            out.insert(
                id as usize,
                ReflectionScores {
                    relevance,
                    accuracy,
                    consistency,
                },
            );
        }
    }
    Ok(out)
}
