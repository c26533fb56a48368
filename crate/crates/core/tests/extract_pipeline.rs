use std::sync::{Arc, Mutex};

use chrono::NaiveDate;
use stindex_core::extract::{ChunkStatus, EntityValue, ExtractOptions, Extractor, Provenance};
use stindex_core::geo::{Gazetteer, Geocoder};
use stindex_core::ingest::{Chunk, ChunkStrategy, Origin, SourceDocument};
use stindex_core::llm::{ChatBackend, CompletionRequest, CompletionResponse, LlmError, TokenUsage};
use stindex_core::schema::default_schema;

type Script = dyn Fn(&str, bool) -> Result<String, LlmError> + Send + Sync;

/// Answers by passage text; `true` flags a reflection request.
struct Scripted {
    script: Box<Script>,
    calls: Mutex<Vec<String>>,
}

impl Scripted {
    fn new(f: impl Fn(&str, bool) -> Result<String, LlmError> + Send + Sync + 'static) -> Arc<Self> {
        Arc::new(Self {
            script: Box::new(f),
            calls: Mutex::new(Vec::new()),
        })
    }
}

fn passage(user: &str) -> &str {
    let start = user.find("<<<\n").map(|i| i + 4).unwrap_or(0);
    let end = user[start..].find("\n>>>").map(|i| start + i).unwrap_or(user.len());
    &user[start..end]
}

impl ChatBackend for Scripted {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let reflection = req.system.starts_with("You review");
        self.calls.lock().unwrap().push(req.user.clone());
        let text = (self.script)(passage(&req.user), reflection)?;
        Ok(CompletionResponse {
            text,
            finish_reason: "stop".into(),
            usage: TokenUsage {
                prompt_tokens: 1,
                completion_tokens: 1,
            },
            latency_ms: 0,
        })
    }
}

fn geocoder() -> Arc<Geocoder> {
    let g = Gazetteer::from_tsv(include_str!("../fixtures/gazetteer.tsv")).unwrap();
    Arc::new(Geocoder::offline(Arc::new(g)))
}

fn doc(body: &str, pub_date: Option<NaiveDate>) -> SourceDocument {
    let mut d = SourceDocument::from_parts(Origin::RawText, "test", body.to_string());
    d.pub_date = pub_date;
    d
}

/// Splits `parts` into consecutive non-overlapping chunks.
fn chunks_of(doc: &SourceDocument, parts: &[&str]) -> Vec<Chunk> {
    let mut start = 0;
    parts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let len = p.chars().count();
            let c = Chunk {
                doc_id: doc.doc_id.clone(),
                chunk_index: i,
                char_start: start,
                char_end: start + len,
                text: p.to_string(),
                strategy: ChunkStrategy::Paragraph,
            };
            start += len;
            c
        })
        .collect()
}

fn no_reflection() -> ExtractOptions {
    ExtractOptions {
        reflection: false,
        ..ExtractOptions::default()
    }
}

#[test]
fn next_day_resolves_against_previous_chunk() {
    let parts = [
        "Symptoms began on March 15, 2024. ",
        "The patient was admitted the next day.",
    ];
    let body = parts.concat();
    let d = doc(&body, NaiveDate::from_ymd_opt(2024, 4, 1));
    let backend = Scripted::new(|text, _| {
        Ok(if text.contains("March 15") {
            r#"{"temporal": [{"text": "March 15, 2024", "value": "2024-03-15", "confidence": 0.9}], "spatial": []}"#
        } else {
            // The model guesses wrong; the rule-based resolver corrects it.
            r#"{"temporal": [{"text": "the next day", "value": "2024-04-02", "confidence": 0.8}], "spatial": []}"#
        }
        .to_string())
    });
    let ex = Extractor::new(default_schema(), backend.clone(), geocoder(), no_reflection());
    let result = ex.extract_chunks(&d, &chunks_of(&d, &parts));
    let isos: Vec<String> = result
        .entities
        .iter()
        .map(|e| e.value.as_temporal().unwrap().to_iso())
        .collect();
    assert_eq!(isos, ["2024-03-15", "2024-03-16"]);
    let rel = result.entities[1].value.as_temporal().unwrap();
    assert!(rel.relative);
    assert_eq!(rel.original_expression, "the next day");
    assert_eq!(result.entities[1].doc_span.0, parts[0].chars().count() + 25);
    // Chunk 2's prompt carries chunk 1's entity and anchor.
    let calls = backend.calls.lock().unwrap();
    assert!(calls[0].contains("(no prior entities)"));
    assert!(calls[1].contains("temporal anchor: 2024-03-15"));
    assert!(calls[1].contains("\"March 15, 2024\" -> 2024-03-15"));
}

#[test]
fn empty_payload_gives_ok_status() {
    let d = doc("Nothing to see here.", None);
    let backend = Scripted::new(|_, _| Ok(r#"{"temporal": [], "spatial": []}"#.into()));
    let ex = Extractor::new(default_schema(), backend, geocoder(), ExtractOptions::default());
    let result = ex.extract_document(&d).unwrap();
    assert!(result.entities.is_empty());
    assert_eq!(result.chunks.len(), 1);
    assert_eq!(result.chunks[0].status, ChunkStatus::Ok);
}

#[test]
fn failing_chunk_is_isolated() {
    let parts = ["one 2024. ", "two 2024. ", "three 2024. ", "four 2024. ", "five 2024."];
    let d = doc(&parts.concat(), None);
    let backend = Scripted::new(|text, _| {
        if text.starts_with("three") {
            Ok("Sorry, I cannot help with that.".into())
        } else if text.starts_with("four") {
            Err(LlmError::Auth(401))
        } else {
            Ok(r#"{"temporal": [{"text": "2024", "value": "2024"}]}"#.into())
        }
    });
    let ex = Extractor::new(default_schema(), backend, geocoder(), no_reflection());
    let result = ex.extract_chunks(&d, &chunks_of(&d, &parts));
    let statuses: Vec<ChunkStatus> = result.chunks.iter().map(|c| c.status).collect();
    assert_eq!(
        statuses,
        [
            ChunkStatus::Ok,
            ChunkStatus::Ok,
            ChunkStatus::PayloadFailed,
            ChunkStatus::BackendFailed,
            ChunkStatus::Ok
        ]
    );
    let chunks: Vec<usize> = result.entities.iter().map(|e| e.chunk_index).collect();
    assert_eq!(chunks, [0, 1, 4]);
}

const REFLECTION_CHUNK: &str = "Measles was reported in Perth on 2025-01-09 and in Broome on 2025-01-10.";

fn reflection_backend(reflection_text: &'static str) -> Arc<Scripted> {
    Scripted::new(move |_, reflection| {
        Ok(if reflection {
            reflection_text.to_string()
        } else {
            r#"{"temporal": [{"text": "2025-01-09", "value": "2025-01-09", "confidence": 0.9},
                             {"text": "2025-01-10", "value": "2025-01-10", "confidence": 0.9}],
                "spatial": [{"text": "Perth", "value": "Perth", "confidence": 0.9},
                            {"text": "Broome", "value": "Broome", "confidence": 0.9}]}"#
                .to_string()
        })
    })
}

#[test]
fn reflection_applies_conjunction_rule() {
    // Candidates are scored in span order: Perth, 2025-01-09, Broome, 2025-01-10.
    let backend = reflection_backend(
        r#"{"scores": [
            {"id": 0, "relevance": 0.7, "accuracy": 0.7, "consistency": 0.7},
            {"id": 1, "relevance": 0.9, "accuracy": 0.8, "consistency": 0.6},
            {"id": 2, "relevance": 0.69, "accuracy": 0.99, "consistency": 0.99},
            {"id": 3, "relevance": 1.0, "accuracy": 1.0, "consistency": 1.0}]}"#,
    );
    let d = doc(REFLECTION_CHUNK, None);
    let ex = Extractor::new(default_schema(), backend, geocoder(), ExtractOptions::default());
    let result = ex.extract_document(&d).unwrap();
    let kept: Vec<&str> = result.entities.iter().map(|e| e.surface.as_str()).collect();
    let filtered: Vec<&str> = result.filtered.iter().map(|e| e.surface.as_str()).collect();
    assert_eq!(kept, ["Perth", "2025-01-10"]);
    assert_eq!(filtered, ["2025-01-09", "Broome"]);
    assert!(result
        .filtered
        .iter()
        .all(|e| e.provenance == Provenance::FilteredReflection));
    assert!(result.entities.iter().all(|e| e.reflection.is_some()));
    assert!(result.chunks[0].reflection_applied);

    let without = Extractor::new(
        default_schema(),
        reflection_backend("unused"),
        geocoder(),
        no_reflection(),
    )
    .extract_document(&d)
    .unwrap();
    for e in &result.entities {
        assert!(without.entities.iter().any(|w| w.entity_id == e.entity_id));
    }
    assert_eq!(without.entities.len(), 4);
}

#[test]
fn reflection_fails_open() {
    let d = doc(REFLECTION_CHUNK, None);
    let ex = Extractor::new(
        default_schema(),
        reflection_backend("no scores here"),
        geocoder(),
        ExtractOptions::default(),
    );
    let result = ex.extract_document(&d).unwrap();
    assert_eq!(result.entities.len(), 4);
    assert!(result.entities.iter().all(|e| e.reflection.is_none()));
    assert!(!result.chunks[0].reflection_applied);
}

fn fig1_parts() -> [&'static str; 2] {
    [
        "Cases were confirmed in Perth, Bunbury and Broome. ",
        "Health officials in WA urged vaccination.",
    ]
}

fn fig1_backend() -> Arc<Scripted> {
    Scripted::new(|text, _| {
        Ok(if text.contains("Bunbury") {
            r#"{"spatial": [{"text": "Perth"}, {"text": "Bunbury"}, {"text": "Broome"}]}"#
        } else {
            r#"{"spatial": [{"text": "WA", "value": "WA", "confidence": 0.9}]}"#
        }
        .to_string())
    })
}

#[test]
fn ambiguous_abbreviation_follows_document_context() {
    let parts = fig1_parts();
    let d = doc(&parts.concat(), None);
    let chunks = chunks_of(&d, &parts);

    let ex = Extractor::new(default_schema(), fig1_backend(), geocoder(), no_reflection());
    let result = ex.extract_chunks(&d, &chunks);
    let wa = result.entities.iter().find(|e| e.surface == "WA").unwrap();
    let EntityValue::Geo(g) = &wa.value else { panic!() };
    assert_eq!(g.resolved_name.as_deref(), Some("Western Australia"));
    assert_eq!(g.country_code.as_deref(), Some("AU"));

    let off = ExtractOptions {
        context_correction: false,
        ..no_reflection()
    };
    let result = Extractor::new(default_schema(), fig1_backend(), geocoder(), off).extract_chunks(&d, &chunks);
    let wa = result.entities.iter().find(|e| e.surface == "WA").unwrap();
    let EntityValue::Geo(g) = &wa.value else { panic!() };
    assert_eq!(g.resolved_name.as_deref(), Some("Washington"));
    assert_eq!(g.country_code.as_deref(), Some("US"));
}

#[test]
fn corpus_order_and_determinism() {
    let docs: Vec<SourceDocument> = (0..6)
        .map(|i| doc(&format!("Report {i}: cases in Perth on 2025-01-0{}.", i + 1), None))
        .collect();
    let backend = Scripted::new(|text, _| {
        let day = text.chars().nth(7).unwrap().to_digit(10).unwrap() + 1;
        Ok(format!(
            r#"{{"temporal": [{{"text": "2025-01-0{day}", "value": "2025-01-0{day}"}}], "spatial": [{{"text": "Perth"}}]}}"#
        ))
    });
    let opts = ExtractOptions {
        workers: 3,
        ..no_reflection()
    };
    let ex = Extractor::new(default_schema(), backend, geocoder(), opts);
    let a: Vec<_> = ex.extract_corpus(&docs).into_iter().map(Result::unwrap).collect();
    let b: Vec<_> = ex.extract_corpus(&docs).into_iter().map(Result::unwrap).collect();
    assert_eq!(a, b);
    for (d, r) in docs.iter().zip(&a) {
        assert_eq!(d.doc_id, r.doc_id);
        assert_eq!(r.entities.len(), 2);
    }
}
