//! Scoring extraction runs against gold annotations.

mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use report::{render_table, TableRow};

use crate::analytics::canonical_value;
use crate::extract::{EntityValue, ExtractedEntity, ExtractionResult, Provenance};
use crate::geo::{haversine_km, LatLon};
use crate::schema::{DimensionKind, SchemaSet};
use crate::temporal::{parse_iso, temporal_exact_match, TemporalValue};

pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold file not found: {0}")]
    GoldNotFound(String),
    #[error("cannot read gold file: {0}")]
    Io(#[from] std::io::Error),
    #[error("gold line {line}: {message}")]
    GoldFormat { line: usize, message: String },
    #[error("prediction for {doc_id} chunk {chunk_index} has no gold record")]
    KeyMismatch { doc_id: String, chunk_index: usize },
    #[error("gold dimension {0:?} is not in the schema")]
    UnknownDimension(String),
    #[error("no matched spatial pair carries coordinates on both sides")]
    NoMeasurablePairs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "TemporalRepr", into = "TemporalRepr")]
pub struct GoldTemporal {
    pub value: String,
    /// Surface text, when annotated.
    pub text: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TemporalRepr {
    Bare(String),
    Full { value: String, text: Option<String> },
}

impl From<TemporalRepr> for GoldTemporal {
    fn from(r: TemporalRepr) -> Self {
        match r {
            TemporalRepr::Bare(value) => Self { value, text: None },
            TemporalRepr::Full { value, text } => Self { value, text },
        }
    }
}

impl From<GoldTemporal> for TemporalRepr {
    fn from(g: GoldTemporal) -> Self {
        match g.text {
            None => TemporalRepr::Bare(g.value),
            text => TemporalRepr::Full { value: g.value, text },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "PlaceRepr", into = "PlaceRepr")]
pub struct GoldPlace {
    pub name: String,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PlaceRepr {
    Bare(String),
    Full {
        name: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lat: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lon: Option<f64>,
    },
}

impl From<PlaceRepr> for GoldPlace {
    fn from(r: PlaceRepr) -> Self {
        match r {
            PlaceRepr::Bare(name) => Self {
                name,
                lat: None,
                lon: None,
            },
            PlaceRepr::Full { name, lat, lon } => Self { name, lat, lon },
        }
    }
}

impl From<GoldPlace> for PlaceRepr {
    fn from(g: GoldPlace) -> Self {
        if g.lat.is_none() && g.lon.is_none() {
            PlaceRepr::Bare(g.name)
        } else {
            PlaceRepr::Full {
                name: g.name,
                lat: g.lat,
                lon: g.lon,
            }
        }
    }
}

/// Gold annotations for one chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub doc_id: String,
    pub chunk_index: usize,
    #[serde(default)]
    pub temporal: Vec<GoldTemporal>,
    #[serde(default)]
    pub spatial: Vec<GoldPlace>,
    /// Canonical values for the remaining dimensions: labels, or attribute objects.
    #[serde(default)]
    pub dimensions: BTreeMap<String, Vec<serde_json::Value>>,
}

impl GoldRecord {
    pub fn validate(&self) -> Result<(), String> {
        for t in &self.temporal {
            parse_iso(&t.value).map_err(|e| format!("temporal {:?}: {e}", t.value))?;
        }
        for p in &self.spatial {
            if p.name.trim().is_empty() {
                return Err("spatial name is empty".into());
            }
            match (p.lat, p.lon) {
                (Some(lat), Some(lon)) if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) => {
                    return Err(format!("{}: coordinates out of range", p.name));
                }
                (Some(_), None) | (None, Some(_)) => return Err(format!("{}: lat and lon must come together", p.name)),
                _ => {}
            }
        }
        Ok(())
    }
}

pub fn parse_gold(text: &str) -> Result<Vec<GoldRecord>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let format = |message: String| EvalError::GoldFormat { line: i + 1, message };
        let record: GoldRecord = serde_json::from_str(line).map_err(|e| format(e.to_string()))?;
        record.validate().map_err(format)?;
        out.push(record);
    }
    Ok(out)
}

pub fn load_gold(path: &Path) -> Result<Vec<GoldRecord>, EvalError> {
    if !path.exists() {
        return Err(EvalError::GoldNotFound(path.display().to_string()));
    }
    parse_gold(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

/// Greedy one-to-one matching: each pred, in order, takes the first
/// unconsumed gold it matches. Returns matched (pred, gold) index pairs.
pub fn greedy_match<P, G>(preds: &[P], golds: &[G], matches: impl Fn(&P, &G) -> bool) -> Vec<(usize, usize)> {
    let mut used = vec![false; golds.len()];
    let mut pairs = Vec::new();
    for (pi, p) in preds.iter().enumerate() {
        if let Some(gi) = (0..golds.len()).find(|&gi| !used[gi] && matches(p, &golds[gi])) {
            used[gi] = true;
            pairs.push((pi, gi));
        }
    }
    pairs
}

fn counts_of(pairs: usize, preds: usize, golds: usize) -> Counts {
    Counts {
        tp: pairs,
        fp: preds - pairs,
        fn_: golds - pairs,
    }
}

/// Temporal matching within one chunk; `preds` in document order.
pub fn match_temporal(preds: &[TemporalValue], golds: &[TemporalValue]) -> Counts {
    let pairs = greedy_match(preds, golds, temporal_exact_match);
    counts_of(pairs.len(), preds.len(), golds.len())
}

fn normalize_name(s: &str) -> String {
    let cleaned: String = s
        .chars()
        .map(|c| {
            if c.is_alphanumeric() {
                c.to_lowercase().next().unwrap_or(c)
            } else {
                ' '
            }
        })
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Substring containment either way, or token overlap over the smaller
/// token set reaching `tau`.
pub fn spatial_fuzzy_match(pred: &str, gold: &str, tau: f64) -> bool {
    let (p, g) = (normalize_name(pred), normalize_name(gold));
    if p.is_empty() || g.is_empty() {
        return false;
    }
    if p.contains(&g) || g.contains(&p) {
        return true;
    }
    let pt: BTreeSet<&str> = p.split(' ').collect();
    let gt: BTreeSet<&str> = g.split(' ').collect();
    let shared = pt.intersection(&gt).count();
    shared as f64 / pt.len().min(gt.len()) as f64 >= tau
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Percentages, unrounded.
pub fn prf(c: Counts) -> Prf {
    let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { 100.0 * n as f64 / d as f64 };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf { precision, recall, f1 }
}

/// Mean of temporal and spatial F1, unrounded; see [`round2`] for display.
pub fn combined_f1(t_f1: f64, s_f1: f64) -> f64 {
    (t_f1 + s_f1) / 2.0
}

/// Half-up to two decimals.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mde {
    pub mean_km: f64,
    pub pairs: usize,
    /// Matched pairs lacking coordinates on either side.
    pub unmeasured: usize,
}

pub fn mde(pairs: &[(Option<LatLon>, Option<LatLon>)]) -> Result<Mde, EvalError> {
    let distances: Vec<f64> = pairs
        .iter()
        .filter_map(|(p, g)| Some(haversine_km((*p)?, (*g)?)))
        .collect();
    if distances.is_empty() {
        return Err(EvalError::NoMeasurablePairs);
    }
    Ok(Mde {
        mean_km: distances.iter().sum::<f64>() / distances.len() as f64,
        pairs: distances.len(),
        unmeasured: pairs.len() - distances.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionScore {
    pub dimension: String,
    #[serde(flatten)]
    pub counts: Counts,
    /// Percent, two decimals.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub chunks: usize,
    pub temporal_dimension: String,
    pub spatial_dimension: String,
    /// Schema order.
    pub dimensions: Vec<DimensionScore>,
    pub combined_f1: f64,
    pub normalization_accuracy: Option<f64>,
    pub geocoding_success_rate: Option<f64>,
    pub mde_km: Option<f64>,
    pub mde_pairs: usize,
    pub mde_unmeasured: usize,
}

impl EvalReport {
    pub fn dimension(&self, name: &str) -> Option<&DimensionScore> {
        self.dimensions.iter().find(|d| d.dimension == name)
    }

    pub fn temporal(&self) -> Option<&DimensionScore> {
        self.dimension(&self.temporal_dimension)
    }

    pub fn spatial(&self) -> Option<&DimensionScore> {
        self.dimension(&self.spatial_dimension)
    }
}

fn gold_canonical(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

type ChunkKey = (String, usize);

#[derive(Default)]
struct Tally {
    counts: BTreeMap<String, Counts>,
    norm_matched: usize,
    norm_equal: usize,
    norm_annotated: bool,
    temporal_tp: usize,
    temporal_gold: usize,
    spatial_kept: usize,
    spatial_resolved: usize,
    coord_pairs: Vec<(Option<LatLon>, Option<LatLon>)>,
}

/// Scores kept entities against gold, chunk by chunk.
pub fn evaluate_run(
    preds: &[ExtractionResult],
    gold: &[GoldRecord],
    schema: &SchemaSet,
    tau: f64,
) -> Result<EvalReport, EvalError> {
    let temporal_dim = schema.temporal().name.clone();
    let spatial_dim = schema.spatial().name.clone();
    let others: Vec<String> = schema
        .dimensions
        .iter()
        .filter(|d| {
            !matches!(
                d.kind,
                DimensionKind::NormalizedTemporal | DimensionKind::GeocodedSpatial
            )
        })
        .map(|d| d.name.clone())
        .collect();

    let mut gold_by_key: BTreeMap<ChunkKey, &GoldRecord> = BTreeMap::new();
    for g in gold {
        if let Some(unknown) = g.dimensions.keys().find(|k| !others.contains(k)) {
            return Err(EvalError::UnknownDimension(unknown.clone()));
        }
        gold_by_key.insert((g.doc_id.clone(), g.chunk_index), g);
    }
    let mut pred_by_key: BTreeMap<ChunkKey, Vec<&ExtractedEntity>> = BTreeMap::new();
    for e in preds.iter().flat_map(|r| &r.entities) {
        if e.provenance != Provenance::Kept {
            continue;
        }
        let key = (e.doc_id.clone(), e.chunk_index);
        if !gold_by_key.contains_key(&key) {
            return Err(EvalError::KeyMismatch {
                doc_id: key.0,
                chunk_index: key.1,
            });
        }
        pred_by_key.entry(key).or_default().push(e);
    }
    for es in pred_by_key.values_mut() {
        es.sort_by(|a, b| a.doc_span.cmp(&b.doc_span).then_with(|| a.entity_id.cmp(&b.entity_id)));
    }

    let mut t = Tally::default();
    for (key, g) in &gold_by_key {
        let es = pred_by_key.get(key).map(Vec::as_slice).unwrap_or_default();
        score_chunk(es, g, &temporal_dim, &spatial_dim, &others, tau, &mut t);
    }

    let row = |name: &str| {
        let c = t.counts.get(name).copied().unwrap_or_default();
        let s = prf(c);
        DimensionScore {
            dimension: name.to_string(),
            counts: c,
            precision: round2(s.precision),
            recall: round2(s.recall),
            f1: round2(s.f1),
        }
    };
    let mut dimensions = Vec::new();
    for d in &schema.dimensions {
        dimensions.push(row(&d.name));
    }
    let t_f1 = prf(t.counts.get(&temporal_dim).copied().unwrap_or_default()).f1;
    let s_f1 = prf(t.counts.get(&spatial_dim).copied().unwrap_or_default()).f1;
    let normalization_accuracy = if t.norm_annotated {
        (t.norm_matched > 0).then(|| 100.0 * t.norm_equal as f64 / t.norm_matched as f64)
    } else {
        (t.temporal_gold > 0).then(|| 100.0 * t.temporal_tp as f64 / t.temporal_gold as f64)
    };
    let geocoding_success_rate =
        (t.spatial_kept > 0).then(|| 100.0 * t.spatial_resolved as f64 / t.spatial_kept as f64);
    let measured = mde(&t.coord_pairs).ok();
    Ok(EvalReport {
        chunks: gold_by_key.len(),
        temporal_dimension: temporal_dim,
        spatial_dimension: spatial_dim,
        dimensions,
        combined_f1: round2(combined_f1(t_f1, s_f1)),
        normalization_accuracy: normalization_accuracy.map(round2),
        geocoding_success_rate: geocoding_success_rate.map(round2),
        mde_km: measured.map(|m| round2(m.mean_km)),
        mde_pairs: measured.map_or(0, |m| m.pairs),
        mde_unmeasured: measured.map_or(t.coord_pairs.len(), |m| m.unmeasured),
    })
}

fn score_chunk(
    es: &[&ExtractedEntity],
    g: &GoldRecord,
    temporal_dim: &str,
    spatial_dim: &str,
    others: &[String],
    tau: f64,
    t: &mut Tally,
) {
    let temporal: Vec<(&ExtractedEntity, &TemporalValue)> = es
        .iter()
        .filter(|e| e.dimension == temporal_dim)
        .filter_map(|e| e.value.as_temporal().map(|v| (*e, v)))
        .collect();
    // Gold ISO values were validated on load.
    let gold_t: Vec<TemporalValue> = g.temporal.iter().filter_map(|x| parse_iso(&x.value).ok()).collect();
    let pred_t: Vec<TemporalValue> = temporal.iter().map(|(_, v)| (*v).clone()).collect();
    let c = match_temporal(&pred_t, &gold_t);
    t.temporal_tp += c.tp;
    t.temporal_gold += gold_t.len();
    *t.counts.entry(temporal_dim.to_string()).or_default() += c;

    let annotated: Vec<(&GoldTemporal, &TemporalValue)> = g
        .temporal
        .iter()
        .zip(&gold_t)
        .filter(|(x, _)| x.text.is_some())
        .collect();
    if !annotated.is_empty() {
        t.norm_annotated = true;
        let pairs = greedy_match(&annotated, &temporal, |(gt, _), (e, _)| {
            spatial_fuzzy_match(&e.surface, gt.text.as_deref().unwrap_or_default(), tau)
        });
        t.norm_matched += pairs.len();
        t.norm_equal += pairs
            .iter()
            .filter(|&&(gi, pi)| temporal_exact_match(temporal[pi].1, annotated[gi].1))
            .count();
    }

    let spatial: Vec<&ExtractedEntity> = es.iter().copied().filter(|e| e.dimension == spatial_dim).collect();
    for e in &spatial {
        t.spatial_kept += 1;
        if e.value.as_geo().is_some_and(|v| v.is_resolved()) {
            t.spatial_resolved += 1;
        }
    }
    let pairs = greedy_match(&spatial, &g.spatial, |e, gp| match &e.value {
        EntityValue::Geo(v) => {
            spatial_fuzzy_match(&v.name, &gp.name, tau)
                || v.resolved_name
                    .as_deref()
                    .is_some_and(|r| spatial_fuzzy_match(r, &gp.name, tau))
        }
        _ => false,
    });
    for &(pi, gi) in &pairs {
        let pred = spatial[pi].value.as_geo().and_then(|v| v.coords());
        let gp = &g.spatial[gi];
        let gold = gp.lat.zip(gp.lon).map(|(lat, lon)| LatLon::new(lat, lon));
        t.coord_pairs.push((pred, gold));
    }
    *t.counts.entry(spatial_dim.to_string()).or_default() += counts_of(pairs.len(), spatial.len(), g.spatial.len());

    for dim in others {
        let pred: Vec<String> = es
            .iter()
            .filter(|e| &e.dimension == dim)
            .map(|e| canonical_value(e))
            .collect();
        let gold: Vec<String> = g
            .dimensions
            .get(dim)
            .into_iter()
            .flatten()
            .map(gold_canonical)
            .collect();
        let pairs = greedy_match(&pred, &gold, |p, g| p == g);
        *t.counts.entry(dim.clone()).or_default() += counts_of(pairs.len(), pred.len(), gold.len());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn iso(s: &str) -> TemporalValue {
        parse_iso(s).unwrap()
    }

    #[test]
    fn temporal_one_to_one() {
        let c = match_temporal(&[iso("2024-03-15")], &[iso("2024-03-15")]);
        assert_eq!((c.tp, c.fp, c.fn_), (1, 0, 0));
        let c = match_temporal(&[iso("2024-03-15"), iso("2024-03-15")], &[iso("2024-03-15")]);
        assert_eq!((c.tp, c.fp, c.fn_), (1, 1, 0));
        let c = match_temporal(&[], &[iso("2024-03-15")]);
        assert_eq!((c.tp, c.fp, c.fn_), (0, 0, 1));
        // Granularity is part of the value.
        let c = match_temporal(&[iso("2024-03")], &[iso("2024-03-01")]);
        assert_eq!((c.tp, c.fp, c.fn_), (0, 1, 1));
    }

    #[test]
    fn fuzzy_examples() {
        assert!(spatial_fuzzy_match("Perth", "Perth, Western Australia", 0.5));
        assert!(spatial_fuzzy_match("WA, Australia", "Western Australia", 0.5));
        assert!(!spatial_fuzzy_match("Sydney", "Melbourne", 0.5));
        assert!(!spatial_fuzzy_match("North Perth Lodge", "South Bunbury", 0.5));
        assert!(!spatial_fuzzy_match("!!", "Perth", 0.5));
    }

    #[test]
    fn prf_examples() {
        let s = prf(Counts { tp: 2, fp: 1, fn_: 2 });
        assert_eq!(
            (round2(s.precision), round2(s.recall), round2(s.f1)),
            (66.67, 50.0, 57.14)
        );
        // Hand computation: P = 2/3, R = 1/2, F1 = 2PR/(P+R) = 4/7.
        assert!((s.f1 - 400.0 / 7.0).abs() < 1e-12);
        let z = prf(Counts::default());
        assert_eq!((z.precision, z.recall, z.f1), (0.0, 0.0, 0.0));
        let eq = prf(Counts { tp: 3, fp: 1, fn_: 1 });
        assert!((eq.f1 - eq.precision).abs() < 1e-12);
    }

    #[test]
    fn combined_reproduces_table_cells() {
        for (t, s, cell) in [
            (66.61, 74.83, 70.72),
            (69.66, 77.97, 73.81),
            (58.27, 81.35, 69.81),
            (66.50, 78.15, 72.32),
        ] {
            assert!((combined_f1(t, s) - cell).abs() <= 0.005 + 1e-9, "{t} {s}");
        }
        assert_eq!(round2(combined_f1(66.61, 74.83)), 70.72);
        assert_eq!(combined_f1(42.5, 42.5), 42.5);
    }

    #[test]
    fn mde_examples() {
        let p = Some(LatLon::new(-31.95, 115.86));
        assert_eq!(mde(&[(p, p)]).unwrap().mean_km, 0.0);
        let origin = Some(LatLon::new(0.0, 0.0));
        let at = |km: f64| Some(LatLon::new(0.0, km / (6371.0 * std::f64::consts::PI / 180.0)));
        let m = mde(&[(origin, at(100.0)), (origin, at(300.0)), (None, origin)]).unwrap();
        assert!((m.mean_km - 200.0).abs() < 1e-6);
        assert_eq!((m.pairs, m.unmeasured), (2, 1));
        assert!(matches!(mde(&[(None, origin)]), Err(EvalError::NoMeasurablePairs)));
    }

    #[test]
    fn gold_lines_parse_both_shapes() {
        let text = r#"{"doc_id":"a","chunk_index":0,"temporal":["2024-03-15",{"value":"2024-03-16","text":"the next day"}],"spatial":["Perth",{"name":"Broome","lat":-17.96,"lon":122.24}],"dimensions":{"disease":["measles"]}}

{"doc_id":"a","chunk_index":1}"#;
        let g = parse_gold(text).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].temporal[1].text.as_deref(), Some("the next day"));
        assert_eq!(g[0].spatial[1].lat, Some(-17.96));
        let back = serde_json::to_string(&g[0]).unwrap();
        assert_eq!(serde_json::from_str::<GoldRecord>(&back).unwrap(), g[0]);

        let bad =
            "{\"doc_id\":\"a\",\"chunk_index\":0}\n{\"doc_id\":\"a\",\"chunk_index\":1,\"temporal\":[\"2024-13-01\"]}";
        assert!(matches!(parse_gold(bad), Err(EvalError::GoldFormat { line: 2, .. })));
        let bad = r#"{"doc_id":"a","chunk_index":0,"spatial":[{"name":"X","lat":91.0,"lon":0.0}]}"#;
        assert!(matches!(parse_gold(bad), Err(EvalError::GoldFormat { line: 1, .. })));
    }

    proptest! {
        #[test]
        fn fuzzy_is_symmetric(a in "[A-Za-z ,.]{1,24}", b in "[A-Za-z ,.]{1,24}", tau in 0.1f64..1.0) {
            prop_assert_eq!(spatial_fuzzy_match(&a, &b, tau), spatial_fuzzy_match(&b, &a, tau));
        }

        #[test]
        fn prf_bounds(tp in 0usize..50, fp in 0usize..50, fn_ in 0usize..50) {
            let s = prf(Counts { tp, fp, fn_ });
            for v in [s.precision, s.recall, s.f1] {
                prop_assert!((0.0..=100.0).contains(&v));
            }
            prop_assert!(s.f1 <= s.precision.max(s.recall) + 1e-9);
        }
    }
}
