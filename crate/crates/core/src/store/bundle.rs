use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{canonical_json, write_text, RunManifest, StoreError};
use crate::analytics::{
    AnalyticsReport, BurstParams, BurstWindow, ClusterParams, CoocGraph, DimensionBreakdown, StCluster, StEvent,
};
use crate::extract::{ExtractedEntity, ExtractionResult};
use crate::schema::{DimensionKind, SchemaSet};

pub const BUNDLE_VERSION: &str = "1.0";

/// JSON Schema for `bundle.json`.
pub const BUNDLE_SCHEMA: &str = include_str!("../../schemas/bundle.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleDimension {
    pub name: String,
    pub kind: DimensionKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleDocument {
    pub doc_id: String,
    pub locator: String,
    pub chunks: usize,
    pub entities: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleSummary {
    pub documents: usize,
    pub chunks: usize,
    pub entities: usize,
    pub filtered: usize,
    pub rejected: usize,
    pub events: usize,
    pub excluded: usize,
    pub clusters: usize,
    pub noise: usize,
    pub bursts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleParams {
    pub cluster: ClusterParams,
    pub burst: BurstParams,
}

/// Self-contained input for the dashboard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DashboardBundle {
    pub bundle_version: String,
    pub run_id: String,
    pub manifest_digest: String,
    pub temporal_dimension: String,
    pub spatial_dimension: String,
    pub dimensions: Vec<BundleDimension>,
    pub documents: Vec<BundleDocument>,
    /// Kept entities only.
    pub entities: Vec<ExtractedEntity>,
    pub events: Vec<StEvent>,
    pub excluded: Vec<String>,
    pub clusters: Vec<StCluster>,
    pub noise: Vec<usize>,
    pub bursts: Vec<BurstWindow>,
    pub graph: CoocGraph,
    pub breakdown: Vec<DimensionBreakdown>,
    pub params: BundleParams,
    pub summary: BundleSummary,
}

impl DashboardBundle {
    pub fn build(
        results: &[ExtractionResult],
        analytics: &AnalyticsReport,
        manifest: &RunManifest,
        schema: &SchemaSet,
    ) -> Self {
        let locators: BTreeMap<&str, &str> = manifest
            .corpus
            .iter()
            .map(|c| (c.doc_id.as_str(), c.locator.as_str()))
            .collect();
        let documents = results
            .iter()
            .map(|r| BundleDocument {
                doc_id: r.doc_id.clone(),
                locator: locators.get(r.doc_id.as_str()).unwrap_or(&"").to_string(),
                chunks: r.chunks.len(),
                entities: r.entities.len(),
            })
            .collect();
        let entities: Vec<ExtractedEntity> = results.iter().flat_map(|r| r.entities.iter().cloned()).collect();
        let summary = BundleSummary {
            documents: results.len(),
            chunks: results.iter().map(|r| r.chunks.len()).sum(),
            entities: entities.len(),
            filtered: results.iter().map(|r| r.filtered.len()).sum(),
            rejected: results.iter().map(|r| r.rejected.len()).sum(),
            events: analytics.events.len(),
            excluded: analytics.excluded.len(),
            clusters: analytics.clusters.len(),
            noise: analytics.noise.len(),
            bursts: analytics.bursts.len(),
        };
        Self {
            bundle_version: BUNDLE_VERSION.to_string(),
            run_id: manifest.run_id.clone(),
            manifest_digest: manifest.digest(),
            temporal_dimension: schema.temporal().name.clone(),
            spatial_dimension: schema.spatial().name.clone(),
            dimensions: schema
                .dimensions
                .iter()
                .map(|d| BundleDimension {
                    name: d.name.clone(),
                    kind: d.kind,
                })
                .collect(),
            documents,
            entities,
            events: analytics.events.clone(),
            excluded: analytics.excluded.clone(),
            clusters: analytics.clusters.clone(),
            noise: analytics.noise.clone(),
            bursts: analytics.bursts.clone(),
            graph: analytics.graph.clone(),
            breakdown: analytics.breakdown.clone(),
            params: BundleParams {
                cluster: analytics.cluster_params,
                burst: analytics.burst_params,
            },
            summary,
        }
    }
}

pub fn render_bundle(bundle: &DashboardBundle) -> String {
    canonical_json(bundle)
}

pub fn export_dashboard_bundle(
    results: &[ExtractionResult],
    analytics: &AnalyticsReport,
    manifest: &RunManifest,
    schema: &SchemaSet,
    path: &Path,
) -> Result<DashboardBundle, StoreError> {
    let bundle = DashboardBundle::build(results, analytics, manifest, schema);
    write_text(path, &render_bundle(&bundle))?;
    Ok(bundle)
}
