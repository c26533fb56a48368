use std::sync::Arc;

use serde_json::Value;
use stindex_core::demo::{demo_options, expected_report, run_demo, run_demo_with, DEMO_REPLAY};
use stindex_core::extract::EntityValue;
use stindex_core::llm::ReplayBackend;
use stindex_core::store::{BUNDLE_SCHEMA, BUNDLE_VERSION};

fn replay() -> Arc<ReplayBackend> {
    Arc::new(ReplayBackend::from_json(DEMO_REPLAY).unwrap())
}

fn bundle_validator() -> jsonschema::Validator {
    let schema: Value = serde_json::from_str(BUNDLE_SCHEMA).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

fn assert_valid(bundle: &Value) {
    let validator = bundle_validator();
    let errors: Vec<String> = validator
        .iter_errors(bundle)
        .map(|e| format!("{} at {}", e, e.instance_path))
        .collect();
    assert!(errors.is_empty(), "{errors:#?}");
}

#[test]
fn report_matches_hand_scored_expectation() {
    let run = run_demo().unwrap();
    let expected = expected_report().unwrap();
    assert_eq!(run.report.dimensions.len(), expected.dimensions.len());
    for (got, want) in run.report.dimensions.iter().zip(&expected.dimensions) {
        assert_eq!(got.dimension, want.dimension);
        assert_eq!(got.counts, want.counts, "{}", got.dimension);
        for (a, b) in [
            (got.precision, want.precision),
            (got.recall, want.recall),
            (got.f1, want.f1),
        ] {
            assert!((a - b).abs() <= 0.01, "{}: {a} vs {b}", got.dimension);
        }
    }
    assert_eq!(run.report, expected);
}

#[test]
fn every_chunk_is_accounted_for() {
    let run = run_demo().unwrap();
    assert_eq!(run.results.len(), 10);
    assert_eq!(run.results.iter().map(|r| r.chunks.len()).sum::<usize>(), 22);
    let failed: Vec<_> = run
        .results
        .iter()
        .flat_map(|r| r.chunks.iter().map(move |c| (r.doc_id.as_str(), c)))
        .filter(|(_, c)| c.error.is_some())
        .map(|(d, c)| (d, c.chunk_index))
        .collect();
    assert_eq!(failed, [("wa-health-009", 0)]);
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_demo().unwrap().write(a.path()).unwrap();
    run_demo().unwrap().write(b.path()).unwrap();
    for name in [
        "manifest.json",
        "run.jsonl",
        "analytics.json",
        "bundle.json",
        "report.json",
        "report.txt",
    ] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(!x.is_empty(), "{name} empty");
        assert!(x == y, "{name} differs between runs");
    }
}

#[test]
fn bundle_validates_against_committed_schema() {
    let dir = tempfile::tempdir().unwrap();
    let (outputs, bundle) = run_demo().unwrap().write(dir.path()).unwrap();
    let value: Value = serde_json::from_str(&std::fs::read_to_string(outputs.bundle).unwrap()).unwrap();
    assert_valid(&value);
    assert_eq!(bundle.bundle_version, BUNDLE_VERSION);
    assert_eq!(bundle.summary.chunks, 22);
    assert_eq!(bundle.summary.events, bundle.events.len());
}

#[test]
fn bundle_without_spatial_entities_validates() {
    let mut run = run_demo().unwrap();
    for r in &mut run.results {
        r.entities.retain(|e| !matches!(e.value, EntityValue::Geo(_)));
    }
    run.analytics = stindex_core::analytics::analyze(&run.results, &Default::default(), &Default::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (outputs, bundle) = run.write(dir.path()).unwrap();
    assert!(bundle.events.is_empty() && bundle.clusters.is_empty() && bundle.bursts.is_empty());
    let value: Value = serde_json::from_str(&std::fs::read_to_string(outputs.bundle).unwrap()).unwrap();
    assert_valid(&value);
}

#[test]
fn schema_rejects_malformed_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let (outputs, _) = run_demo().unwrap().write(dir.path()).unwrap();
    let mut value: Value = serde_json::from_str(&std::fs::read_to_string(outputs.bundle).unwrap()).unwrap();
    value["unexpected"] = Value::Bool(true);
    assert!(!bundle_validator().is_valid(&value));
    value.as_object_mut().unwrap().remove("unexpected");
    value.as_object_mut().unwrap().remove("events");
    assert!(!bundle_validator().is_valid(&value));
}

#[test]
fn reflection_off_keeps_low_scored_candidates() {
    let opts = stindex_core::extract::ExtractOptions {
        reflection: false,
        ..demo_options()
    };
    let run = run_demo_with(replay(), &opts).unwrap();
    let filtered: usize = run.results.iter().map(|r| r.filtered.len()).sum();
    assert_eq!(filtered, 0);
    let events = run.report.dimension("event_type").unwrap();
    let disease = run.report.dimension("disease").unwrap();
    assert_eq!((events.counts.tp, events.counts.fp), (20, 0));
    assert_eq!((disease.counts.tp, disease.counts.fp), (11, 1));
}

#[test]
fn context_correction_resolves_ambiguous_abbreviation() {
    let resolved = |correction: bool| {
        let opts = stindex_core::extract::ExtractOptions {
            context_correction: correction,
            ..demo_options()
        };
        let run = run_demo_with(replay(), &opts).unwrap();
        run.results
            .iter()
            .flat_map(|r| &r.entities)
            .find(|e| e.entity_id == "wa-health-004:1:1")
            .and_then(|e| e.value.as_geo().cloned())
            .unwrap()
    };
    let on = resolved(true);
    assert_eq!(
        (on.resolved_name.as_deref(), on.country_code.as_deref()),
        (Some("Western Australia"), Some("AU"))
    );
    let off = resolved(false);
    assert_eq!(
        (off.resolved_name.as_deref(), off.country_code.as_deref()),
        (Some("Washington"), Some("US"))
    );
}
