//! Bundled ten-document demo: corpus, schema, recorded model responses,
//! gold annotations and the expected evaluation report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use crate::analytics::{analyze, AnalyticsError, AnalyticsReport, BurstParams, ClusterParams};
use crate::eval::{evaluate_run, parse_gold, render_table, EvalError, EvalReport, GoldRecord, TableRow, DEFAULT_TAU};
use crate::extract::{ExtractOptions, ExtractionResult, Extractor};
use crate::geo::{Gazetteer, Geocoder};
use crate::ingest::{load_named_text, ChunkError, ChunkParams, ChunkStrategy, IngestError, SourceDocument};
use crate::llm::{
    BackendSpec, ChatBackend, CompletionRequest, CompletionResponse, LlmError, ModelConfig, RecordingBackend,
    ReplayBackend, TokenUsage,
};
use crate::schema::{parse_schema, ConfigFormat, SchemaError, SchemaSet};
use crate::store::{
    canonical_json, export_dashboard_bundle, write_analytics, write_manifest, write_run, write_text, DashboardBundle,
    ReflectionSettings, RunManifest, StoreError,
};

pub const DEMO_MODEL: &str = "demo-scripted";
pub const DEMO_REPLAY_LOCATOR: &str = "fixtures/demo/replay.json";

pub const DEMO_DOCS: [(&str, &str); 10] = [
    (
        "01-perth-traveller.md",
        include_str!("../../fixtures/demo/docs/01-perth-traveller.md"),
    ),
    (
        "02-fremantle-exposure.md",
        include_str!("../../fixtures/demo/docs/02-fremantle-exposure.md"),
    ),
    (
        "03-joondalup-school.md",
        include_str!("../../fixtures/demo/docs/03-joondalup-school.md"),
    ),
    (
        "04-bunbury-broome.md",
        include_str!("../../fixtures/demo/docs/04-bunbury-broome.md"),
    ),
    ("05-stadium.md", include_str!("../../fixtures/demo/docs/05-stadium.md")),
    (
        "06-flight-sydney.md",
        include_str!("../../fixtures/demo/docs/06-flight-sydney.md"),
    ),
    (
        "07-mandurah.md",
        include_str!("../../fixtures/demo/docs/07-mandurah.md"),
    ),
    (
        "08-kalgoorlie-influenza.md",
        include_str!("../../fixtures/demo/docs/08-kalgoorlie-influenza.md"),
    ),
    (
        "09-pertussis-albany.md",
        include_str!("../../fixtures/demo/docs/09-pertussis-albany.md"),
    ),
    (
        "10-outbreak-summary.md",
        include_str!("../../fixtures/demo/docs/10-outbreak-summary.md"),
    ),
];
pub const DEMO_SCHEMA: &str = include_str!("../../fixtures/demo/schema.yaml");
pub const DEMO_SCRIPT: &str = include_str!("../../fixtures/demo/responses.json");
pub const DEMO_REPLAY: &str = include_str!("../../fixtures/demo/replay.json");
pub const DEMO_GOLD: &str = include_str!("../../fixtures/demo/gold.jsonl");
pub const DEMO_EXPECTED_REPORT: &str = include_str!("../../fixtures/demo/expected-report.json");

#[derive(Debug, Error)]
pub enum DemoError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Chunk(#[from] ChunkError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("demo script: {0}")]
    Script(String),
}

pub fn demo_documents() -> Result<Vec<SourceDocument>, DemoError> {
    DEMO_DOCS
        .iter()
        .map(|(name, text)| load_named_text(name, text).map_err(DemoError::from))
        .collect()
}

pub fn demo_schema() -> Result<SchemaSet, DemoError> {
    Ok(parse_schema(DEMO_SCHEMA, ConfigFormat::Yaml)?)
}

pub fn demo_chunking() -> ChunkParams {
    ChunkParams {
        strategy: ChunkStrategy::Paragraph,
        size: 240,
        overlap: 0,
    }
}

pub fn demo_options() -> ExtractOptions {
    ExtractOptions {
        model: ModelConfig::named(DEMO_MODEL),
        chunking: demo_chunking(),
        ..ExtractOptions::default()
    }
}

pub fn demo_geocoder(schema: &SchemaSet) -> Geocoder {
    let geocoder = Geocoder::offline(Arc::new(Gazetteer::builtin()));
    match &schema.spatial().hierarchy {
        Some(levels) => geocoder.with_hierarchy(levels),
        None => geocoder,
    }
}

pub fn demo_gold() -> Result<Vec<GoldRecord>, DemoError> {
    Ok(parse_gold(DEMO_GOLD)?)
}

pub fn expected_report() -> Result<EvalReport, DemoError> {
    serde_json::from_str(DEMO_EXPECTED_REPORT).map_err(|e| DemoError::Script(format!("expected report: {e}")))
}

#[derive(Debug, Clone, Default, Deserialize)]
struct ScriptedChunk {
    extract: Value,
    /// "dimension:surface" -> [relevance, accuracy, consistency].
    #[serde(default)]
    reflect: BTreeMap<String, [f64; 3]>,
}

/// Answers extraction and reflection prompts from a per-chunk script keyed
/// by document id. Reflection scores default to a uniform 0.9.
pub struct ScriptedBackend {
    script: BTreeMap<String, Vec<ScriptedChunk>>,
}

const DEFAULT_SCRIPTED_SCORE: f64 = 0.9;

fn header<'a>(user: &'a str, key: &str) -> Option<&'a str> {
    user.lines().find_map(|l| l.strip_prefix(key)).map(str::trim)
}

fn chunk_position(user: &str) -> Option<(String, usize)> {
    let doc = header(user, "Document:")?;
    let (index, _) = header(user, "Chunk:")?.split_once(" of ")?;
    let index: usize = index.trim().parse().ok()?;
    Some((doc.to_string(), index.checked_sub(1)?))
}

/// Parses `{id}. [{dimension}] "{surface}" -> {value}` candidate rows.
fn candidate_rows(user: &str) -> Vec<(usize, String)> {
    let Some((_, tail)) = user.split_once("## Candidates\n") else {
        return Vec::new();
    };
    tail.lines()
        .map_while(|line| {
            let (id, rest) = line.split_once(". [")?;
            let (dim, rest) = rest.split_once("] \"")?;
            let (surface, _) = rest.rsplit_once("\" -> ")?;
            Some((id.parse().ok()?, format!("{dim}:{surface}")))
        })
        .collect()
}

impl ScriptedBackend {
    pub fn from_json(text: &str) -> Result<Self, DemoError> {
        let script = serde_json::from_str(text).map_err(|e| DemoError::Script(e.to_string()))?;
        Ok(Self { script })
    }

    fn entry(&self, user: &str) -> Result<&ScriptedChunk, LlmError> {
        let (doc, index) = chunk_position(user).ok_or_else(|| LlmError::InvalidRequest {
            status: 400,
            message: "no chunk header".into(),
        })?;
        self.script
            .get(&doc)
            .and_then(|chunks| chunks.get(index))
            .ok_or_else(|| LlmError::ReplayMiss(format!("{doc}#{index}")))
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let entry = self.entry(&req.user)?;
        let text = if req.user.contains("## Candidates\n") {
            let scores: Vec<Value> = candidate_rows(&req.user)
                .into_iter()
                .map(|(id, key)| {
                    let [r, a, c] = entry.reflect.get(&key).copied().unwrap_or([DEFAULT_SCRIPTED_SCORE; 3]);
                    serde_json::json!({"id": id, "relevance": r, "accuracy": a, "consistency": c})
                })
                .collect();
            serde_json::json!({ "scores": scores }).to_string()
        } else {
            match &entry.extract {
                Value::String(raw) => raw.clone(),
                other => other.to_string(),
            }
        };
        Ok(CompletionResponse {
            text,
            finish_reason: "stop".into(),
            usage: TokenUsage::default(),
            latency_ms: 0,
        })
    }
}

/// Runs the scripted backend over the demo corpus and returns the replay
/// fixture it produces.
pub fn record_demo_replay() -> Result<String, DemoError> {
    let recorder = Arc::new(RecordingBackend::new(ScriptedBackend::from_json(DEMO_SCRIPT)?));
    extract_demo(recorder.clone(), &demo_options())?;
    Ok(recorder.to_fixture_json())
}

fn extract_demo(backend: Arc<dyn ChatBackend>, opts: &ExtractOptions) -> Result<Vec<ExtractionResult>, DemoError> {
    let schema = demo_schema()?;
    let docs = demo_documents()?;
    let extractor = Extractor::new(schema.clone(), backend, Arc::new(demo_geocoder(&schema)), opts.clone());
    Ok(extractor.extract_corpus(&docs).into_iter().collect::<Result<_, _>>()?)
}

#[derive(Debug, Clone)]
pub struct DemoRun {
    pub schema: SchemaSet,
    pub manifest: RunManifest,
    pub results: Vec<ExtractionResult>,
    pub analytics: AnalyticsReport,
    pub report: EvalReport,
}

/// Runs the demo against the committed replay fixture.
pub fn run_demo() -> Result<DemoRun, DemoError> {
    run_demo_with(Arc::new(ReplayBackend::from_json(DEMO_REPLAY)?), &demo_options())
}

pub fn run_demo_with(backend: Arc<dyn ChatBackend>, opts: &ExtractOptions) -> Result<DemoRun, DemoError> {
    let schema = demo_schema()?;
    let docs = demo_documents()?;
    let results = extract_demo(backend, opts)?;
    let cluster = ClusterParams::default();
    let burst = BurstParams::default();
    let analytics = analyze(&results, &cluster, &burst)?;
    let report = evaluate_run(&results, &demo_gold()?, &schema, DEFAULT_TAU)?;
    let mut manifest = RunManifest::new(
        &schema,
        BackendSpec::replay(DEMO_REPLAY_LOCATOR, DEMO_MODEL),
        &docs,
        opts.chunking,
        ReflectionSettings {
            enabled: opts.reflection,
            thresholds: opts.thresholds,
        },
        opts.context_correction,
    );
    manifest.cluster = Some(cluster);
    manifest.burst = Some(burst);
    manifest.run_id = manifest.digest()[..16].to_string();
    Ok(DemoRun {
        schema,
        manifest,
        results,
        analytics,
        report,
    })
}

#[derive(Debug, Clone)]
pub struct DemoOutputs {
    pub manifest: PathBuf,
    pub run: PathBuf,
    pub analytics: PathBuf,
    pub bundle: PathBuf,
    pub report: PathBuf,
    pub table: PathBuf,
}

impl DemoRun {
    pub fn table(&self) -> String {
        render_table(&[TableRow {
            model: DEMO_MODEL.to_string(),
            mode: if self.manifest.reflection.enabled {
                "reflection"
            } else {
                "base"
            }
            .to_string(),
            report: self.report.clone(),
        }])
    }

    pub fn write(&self, out_dir: &Path) -> Result<(DemoOutputs, DashboardBundle), DemoError> {
        let outputs = DemoOutputs {
            manifest: out_dir.join("manifest.json"),
            run: out_dir.join("run.jsonl"),
            analytics: out_dir.join("analytics.json"),
            bundle: out_dir.join("bundle.json"),
            report: out_dir.join("report.json"),
            table: out_dir.join("report.txt"),
        };
        write_manifest(&self.manifest, &outputs.manifest)?;
        write_run(&self.results, &outputs.run)?;
        write_analytics(&self.analytics, &outputs.analytics)?;
        let bundle = export_dashboard_bundle(
            &self.results,
            &self.analytics,
            &self.manifest,
            &self.schema,
            &outputs.bundle,
        )?;
        write_text(&outputs.report, &canonical_json(&self.report))?;
        write_text(&outputs.table, &self.table())?;
        Ok((outputs, bundle))
    }
}
