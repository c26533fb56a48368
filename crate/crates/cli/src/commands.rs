use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use stindex_core::analytics::{analyze as run_analytics, AnalyticsReport, BurstParams, ClusterParams};
use stindex_core::demo::run_demo;
use stindex_core::eval::{evaluate_run, load_gold, render_table, TableRow};
use stindex_core::extract::{ExtractOptions, Extractor};
use stindex_core::geo::{Gazetteer, Geocoder, NominatimClient, GEOCODER_URL_ENV};
use stindex_core::ingest::{ChunkParams, ChunkStrategy, DocumentSpec, Loader, SourceDocument};
use stindex_core::llm::{BackendSpec, ModelConfig, ReflectionScores};
use stindex_core::schema::{default_schema, load_schema, SchemaSet};
use stindex_core::store::{
    canonical_json, export_dashboard_bundle, read_analytics, read_manifest, read_run, write_analytics, write_manifest,
    write_run, write_text, ReflectionSettings, RunManifest,
};

use crate::{
    AnalyzeArgs, BackendArg, CliError, ClusterArgs, DemoArgs, EvalArgs, ExportArgs, ExtractArgs, GeocoderArg,
    SchemaArgs, StrategyArg,
};

type Result<T> = std::result::Result<T, CliError>;

fn manifest_path_for(run: &Path) -> PathBuf {
    run.with_extension("manifest.json")
}

fn schema_from(config: Option<&Path>, manifest: Option<&RunManifest>) -> Result<SchemaSet> {
    match (config, manifest) {
        (Some(path), _) => load_schema(path).map_err(CliError::user),
        (None, Some(m)) => Ok(m.schema.clone()),
        (None, None) => Err(CliError::User(
            "no schema: pass --config or keep the run manifest".into(),
        )),
    }
}

/// Manifest at `explicit`, else next to the run file if one exists there.
fn find_manifest(explicit: Option<&Path>, run: &Path) -> Result<Option<RunManifest>> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let p = manifest_path_for(run);
            if !p.is_file() {
                return Ok(None);
            }
            p
        }
    };
    read_manifest(&path).map(Some).map_err(CliError::user)
}

fn load_inputs(inputs: &[String]) -> Result<Vec<SourceDocument>> {
    let loader = Loader::default();
    let mut docs = Vec::with_capacity(inputs.len());
    for input in inputs {
        let spec = if input == "-" {
            let mut text = String::new();
            std::io::stdin().read_to_string(&mut text).map_err(CliError::user)?;
            DocumentSpec::RawText(text)
        } else {
            DocumentSpec::from_input(input)
        };
        docs.push(loader.load(&spec).map_err(CliError::user)?);
    }
    Ok(docs)
}

fn backend_spec(args: &ExtractArgs) -> Result<BackendSpec> {
    match args.backend {
        BackendArg::Replay => {
            let path = args
                .fixtures
                .clone()
                .ok_or_else(|| CliError::User("--backend replay requires --fixtures <path>".into()))?;
            let model = args.model.clone().unwrap_or_else(|| ModelConfig::default().model);
            Ok(BackendSpec::replay(path, &model))
        }
        BackendArg::Http => {
            let mut spec = BackendSpec::http_from_env().map_err(CliError::user)?;
            if let Some(model) = &args.model {
                spec.model = model.clone();
            }
            Ok(spec)
        }
    }
}

fn geocoder(args: &ExtractArgs, schema: &SchemaSet) -> Result<Geocoder> {
    let gazetteer = match &args.gazetteer {
        Some(path) => Gazetteer::load(path).map_err(CliError::user)?,
        None => Gazetteer::builtin(),
    };
    let mut geocoder = Geocoder::offline(Arc::new(gazetteer));
    if let GeocoderArg::Http = args.geocoder {
        let url = std::env::var(GEOCODER_URL_ENV)
            .map_err(|_| CliError::User(format!("--geocoder http requires {GEOCODER_URL_ENV}")))?;
        geocoder = geocoder.with_http(NominatimClient::new(&url));
    }
    if let Some(levels) = &schema.spatial().hierarchy {
        geocoder = geocoder.with_hierarchy(levels);
    }
    Ok(geocoder)
}

fn chunk_strategy(s: StrategyArg) -> ChunkStrategy {
    match s {
        StrategyArg::SlidingWindow => ChunkStrategy::SlidingWindow,
        StrategyArg::Paragraph => ChunkStrategy::Paragraph,
        StrategyArg::Element => ChunkStrategy::Element,
        StrategyArg::Semantic => ChunkStrategy::Semantic,
    }
}

pub fn extract(args: ExtractArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&args.reflection_threshold) {
        return Err(CliError::User(format!(
            "--reflection-threshold must be within [0, 1], got {}",
            args.reflection_threshold
        )));
    }
    let schema = match &args.config {
        Some(path) => load_schema(path).map_err(CliError::user)?,
        None => default_schema(),
    };
    let spec = backend_spec(&args)?;
    let backend = spec.build().map_err(CliError::user)?;
    let docs = load_inputs(&args.input)?;
    let opts = ExtractOptions {
        reflection: !args.no_reflection,
        thresholds: ReflectionScores::uniform(args.reflection_threshold),
        context_correction: !args.no_context_correction,
        bias: args.bias.clone(),
        model: ModelConfig::named(&spec.model),
        chunking: ChunkParams {
            strategy: chunk_strategy(args.chunk_strategy),
            size: args.chunk_size,
            overlap: args.chunk_overlap,
        },
        workers: args.workers,
        ..ExtractOptions::default()
    };
    let extractor = Extractor::new(
        schema.clone(),
        backend,
        Arc::new(geocoder(&args, &schema)?),
        opts.clone(),
    );
    let results = extractor
        .extract_corpus(&docs)
        .into_iter()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(CliError::user)?;
    write_run(&results, &args.out).map_err(CliError::internal)?;

    let mut manifest = RunManifest::new(
        &schema,
        spec,
        &docs,
        opts.chunking,
        ReflectionSettings {
            enabled: opts.reflection,
            thresholds: opts.thresholds,
        },
        opts.context_correction,
    );
    manifest.stamp_now();
    let manifest_path = args.manifest.clone().unwrap_or_else(|| manifest_path_for(&args.out));
    write_manifest(&manifest, &manifest_path).map_err(CliError::internal)?;

    let entities: usize = results.iter().map(|r| r.entities.len()).sum();
    let chunks: usize = results.iter().map(|r| r.chunks.len()).sum();
    let failed: usize = results
        .iter()
        .flat_map(|r| &r.chunks)
        .filter(|c| c.error.is_some())
        .count();
    println!(
        "{} documents, {chunks} chunks ({failed} failed), {entities} entities -> {}",
        results.len(),
        args.out.display()
    );
    println!("manifest -> {}", manifest_path.display());
    Ok(())
}

fn params(a: &ClusterArgs) -> (ClusterParams, BurstParams) {
    (
        ClusterParams {
            eps_km: a.eps_km,
            eps_days: a.eps_days,
            min_pts: a.min_pts,
        },
        BurstParams {
            window_days: a.window_days,
            step_days: a.step_days,
            z: a.z,
            min_count: a.min_count,
        },
    )
}

pub fn analyze(args: AnalyzeArgs) -> Result<()> {
    let results = read_run(&args.run).map_err(CliError::user)?;
    let (cluster, burst) = params(&args.params);
    let report = run_analytics(&results, &cluster, &burst).map_err(CliError::user)?;
    write_analytics(&report, &args.out).map_err(CliError::internal)?;
    println!(
        "{} events ({} excluded), {} clusters, {} noise, {} bursts -> {}",
        report.events.len(),
        report.excluded.len(),
        report.clusters.len(),
        report.noise.len(),
        report.bursts.len(),
        args.out.display()
    );
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    if !(args.tau > 0.0 && args.tau <= 1.0) {
        return Err(CliError::User(format!("--tau must be within (0, 1], got {}", args.tau)));
    }
    let gold = load_gold(&args.gold).map_err(CliError::user)?;
    let results = read_run(&args.pred).map_err(CliError::user)?;
    let manifest = find_manifest(args.manifest.as_deref(), &args.pred)?;
    let schema = schema_from(args.config.as_deref(), manifest.as_ref())?;
    let report = evaluate_run(&results, &gold, &schema, args.tau).map_err(CliError::user)?;
    if let Some(out) = &args.out {
        write_text(out, &canonical_json(&report)).map_err(CliError::internal)?;
    }
    let (model, mode) = match &manifest {
        Some(m) => (
            m.backend.model.clone(),
            if m.reflection.enabled { "reflection" } else { "base" }.to_string(),
        ),
        None => ("run".to_string(), "-".to_string()),
    };
    print!("{}", render_table(&[TableRow { model, mode, report }]));
    Ok(())
}

pub fn export_dashboard(args: ExportArgs) -> Result<()> {
    let results = read_run(&args.run).map_err(CliError::user)?;
    let manifest = find_manifest(args.manifest.as_deref(), &args.run)?.ok_or_else(|| {
        CliError::User(format!(
            "no manifest found at {}",
            manifest_path_for(&args.run).display()
        ))
    })?;
    let schema = schema_from(args.config.as_deref(), Some(&manifest))?;
    let analytics: AnalyticsReport = match &args.analytics {
        Some(path) => read_analytics(path).map_err(CliError::user)?,
        None => run_analytics(&results, &ClusterParams::default(), &BurstParams::default()).map_err(CliError::user)?,
    };
    let bundle =
        export_dashboard_bundle(&results, &analytics, &manifest, &schema, &args.out).map_err(CliError::internal)?;
    println!(
        "bundle {} ({} entities, {} events, {} clusters) -> {}",
        bundle.run_id,
        bundle.summary.entities,
        bundle.summary.events,
        bundle.summary.clusters,
        args.out.display()
    );
    Ok(())
}

pub fn schema_validate(args: SchemaArgs) -> Result<()> {
    let schema = load_schema(&args.config).map_err(CliError::user)?;
    println!(
        "schema {} is valid ({} dimensions)",
        schema.version,
        schema.dimensions.len()
    );
    for d in &schema.dimensions {
        println!("  {:<16} {}", d.name, d.kind.as_str());
    }
    Ok(())
}

pub fn demo(args: DemoArgs) -> Result<()> {
    let run = run_demo().map_err(CliError::internal)?;
    let (outputs, bundle) = run.write(&args.out).map_err(CliError::internal)?;
    print!("{}", run.table());
    println!();
    for path in [
        &outputs.manifest,
        &outputs.run,
        &outputs.analytics,
        &outputs.bundle,
        &outputs.report,
        &outputs.table,
    ] {
        println!("wrote {}", path.display());
    }
    println!(
        "{} events, {} clusters, {} bursts",
        bundle.summary.events, bundle.summary.clusters, bundle.summary.bursts
    );
    Ok(())
}
