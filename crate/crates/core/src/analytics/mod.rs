//! Spatiotemporal clustering, burst detection, co-occurrence networks and
//! frequency breakdowns over kept entities.

mod burst;
mod cluster;

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use burst::{detect_bursts, BurstError, BurstParams, BurstWindow};
pub use cluster::{cluster_st, within, ClusterError, ClusterParams, Clustering, StCluster};

use crate::extract::{EntityValue, ExtractedEntity, ExtractionResult, Provenance};
use crate::temporal::Granularity;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Burst(#[from] BurstError),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LinkedValue {
    pub dimension: String,
    pub value: String,
}

/// A resolved place paired with an absolute date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StEvent {
    pub event_id: usize,
    pub entity_id: String,
    pub temporal_entity_id: String,
    pub doc_id: String,
    pub chunk_index: usize,
    pub place: String,
    pub country_code: Option<String>,
    pub lat: f64,
    pub lon: f64,
    pub date: NaiveDate,
    pub linked: Vec<LinkedValue>,
}

impl StEvent {
    /// Event with only the fields clustering reads.
    pub fn bare(event_id: usize, lat: f64, lon: f64, date: NaiveDate) -> Self {
        Self {
            event_id,
            entity_id: String::new(),
            temporal_entity_id: String::new(),
            doc_id: String::new(),
            chunk_index: 0,
            place: String::new(),
            country_code: None,
            lat,
            lon,
            date,
            linked: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventSet {
    pub events: Vec<StEvent>,
    /// Spatial entity ids lacking a resolved location or a paired date.
    pub excluded: Vec<String>,
}

/// Display form of an entity's value, shared by graph and breakdown.
pub fn canonical_value(entity: &ExtractedEntity) -> String {
    match &entity.value {
        EntityValue::Temporal(t) => t.to_iso(),
        EntityValue::Geo(g) => g.resolved_name.clone().unwrap_or_else(|| g.name.clone()),
        EntityValue::Category(c) => c.label.clone(),
        EntityValue::Structured(s) => serde_json::to_string(&s.attributes).unwrap_or_default(),
    }
}

/// Day-granular start date; coarser values are not absolute enough.
fn event_date(entity: &ExtractedEntity) -> Option<NaiveDate> {
    let t = entity.value.as_temporal()?;
    (t.granularity >= Granularity::Day).then(|| t.start_date())
}

fn span_gap(a: (usize, usize), b: (usize, usize)) -> usize {
    b.0.saturating_sub(a.1).max(a.0.saturating_sub(b.1))
}

fn kept(result: &ExtractionResult) -> impl Iterator<Item = &ExtractedEntity> {
    result.entities.iter().filter(|e| e.provenance == Provenance::Kept)
}

/// One event per kept spatial entity, dated by the nearest dated temporal
/// entity of the same chunk (ties to the earlier mention). Event ids follow
/// input order.
pub fn build_events(results: &[ExtractionResult]) -> EventSet {
    let mut set = EventSet::default();
    for result in results {
        let mut by_chunk: BTreeMap<usize, Vec<&ExtractedEntity>> = BTreeMap::new();
        for e in kept(result) {
            by_chunk.entry(e.chunk_index).or_default().push(e);
        }
        for entities in by_chunk.values_mut() {
            entities.sort_by_key(|e| (e.doc_span, e.entity_id.clone()));
            let dated: Vec<(&ExtractedEntity, NaiveDate)> =
                entities.iter().filter_map(|e| event_date(e).map(|d| (*e, d))).collect();
            let linked: Vec<LinkedValue> = entities
                .iter()
                .filter(|e| matches!(e.value, EntityValue::Category(_) | EntityValue::Structured(_)))
                .map(|e| LinkedValue {
                    dimension: e.dimension.clone(),
                    value: canonical_value(e),
                })
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            for e in entities.iter() {
                let Some(geo) = e.value.as_geo() else { continue };
                let nearest = dated
                    .iter()
                    .min_by_key(|(t, _)| (span_gap(t.doc_span, e.doc_span), t.doc_span.0));
                match (geo.coords(), nearest) {
                    (Some(point), Some((t, date))) if geo.is_resolved() => set.events.push(StEvent {
                        event_id: set.events.len(),
                        entity_id: e.entity_id.clone(),
                        temporal_entity_id: t.entity_id.clone(),
                        doc_id: e.doc_id.clone(),
                        chunk_index: e.chunk_index,
                        place: canonical_value(e),
                        country_code: geo.country_code.clone(),
                        lat: point.lat,
                        lon: point.lon,
                        date: *date,
                        linked: linked.clone(),
                    }),
                    _ => set.excluded.push(e.entity_id.clone()),
                }
            }
        }
    }
    set
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: String,
    pub dimension: String,
    pub value: String,
    pub frequency: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphEdge {
    /// `source < target`.
    pub source: String,
    pub target: String,
    pub weight: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoocGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

fn node_id(dimension: &str, value: &str) -> String {
    format!("{dimension}:{value}")
}

/// Chunk-scoped co-occurrence network over kept entities.
pub fn cooccurrence_graph(results: &[ExtractionResult]) -> CoocGraph {
    let mut nodes: BTreeMap<String, GraphNode> = BTreeMap::new();
    let mut edges: BTreeMap<(String, String), usize> = BTreeMap::new();
    for result in results {
        let mut chunks: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
        for e in kept(result) {
            let value = canonical_value(e);
            let id = node_id(&e.dimension, &value);
            nodes
                .entry(id.clone())
                .or_insert_with(|| GraphNode {
                    id: id.clone(),
                    dimension: e.dimension.clone(),
                    value,
                    frequency: 0,
                })
                .frequency += 1;
            chunks.entry(e.chunk_index).or_default().insert(id);
        }
        for ids in chunks.values() {
            let ids: Vec<&String> = ids.iter().collect();
            for (i, a) in ids.iter().enumerate() {
                for b in &ids[i + 1..] {
                    *edges.entry(((*a).clone(), (*b).clone())).or_default() += 1;
                }
            }
        }
    }
    CoocGraph {
        nodes: nodes.into_values().collect(),
        edges: edges
            .into_iter()
            .map(|((source, target), weight)| GraphEdge { source, target, weight })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueCount {
    pub value: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionBreakdown {
    pub dimension: String,
    pub total: usize,
    /// Descending count, ties by value.
    pub values: Vec<ValueCount>,
}

pub fn dimension_breakdown<'a>(entities: impl IntoIterator<Item = &'a ExtractedEntity>) -> Vec<DimensionBreakdown> {
    let mut table: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for e in entities {
        if e.provenance != Provenance::Kept {
            continue;
        }
        *table
            .entry(e.dimension.clone())
            .or_default()
            .entry(canonical_value(e))
            .or_default() += 1;
    }
    table
        .into_iter()
        .map(|(dimension, counts)| {
            let total = counts.values().sum();
            let mut values: Vec<ValueCount> = counts
                .into_iter()
                .map(|(value, count)| ValueCount { value, count })
                .collect();
            values.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.value.cmp(&b.value)));
            DimensionBreakdown {
                dimension,
                total,
                values,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticsReport {
    pub cluster_params: ClusterParams,
    pub burst_params: BurstParams,
    pub events: Vec<StEvent>,
    pub excluded: Vec<String>,
    pub clusters: Vec<StCluster>,
    pub noise: Vec<usize>,
    pub bursts: Vec<BurstWindow>,
    pub graph: CoocGraph,
    pub breakdown: Vec<DimensionBreakdown>,
}

pub fn analyze(
    results: &[ExtractionResult],
    cluster_params: &ClusterParams,
    burst_params: &BurstParams,
) -> Result<AnalyticsReport, AnalyticsError> {
    let EventSet { events, excluded } = build_events(results);
    let Clustering { clusters, noise } = cluster_st(&events, cluster_params)?;
    let dates: Vec<NaiveDate> = events.iter().map(|e| e.date).collect();
    let bursts = match detect_bursts(&dates, burst_params) {
        Ok(b) => b,
        Err(BurstError::EmptyInput) => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    Ok(AnalyticsReport {
        cluster_params: *cluster_params,
        burst_params: *burst_params,
        events,
        excluded,
        clusters,
        noise,
        bursts,
        graph: cooccurrence_graph(results),
        breakdown: dimension_breakdown(results.iter().flat_map(|r| &r.entities)),
    })
}
