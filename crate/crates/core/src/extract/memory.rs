use std::collections::{BTreeMap, VecDeque};

use chrono::NaiveDate;

use super::{EntityValue, ExtractedEntity};
use crate::geo::{CountryTally, GeoValue, CORRECTION_MAJORITY, CORRECTION_MIN_EVIDENCE};
use crate::temporal::{AnchorRole, TemporalValue};

pub const DEFAULT_MEMORY_K: usize = 10;

#[derive(Debug, Clone, PartialEq)]
struct MemoryItem {
    seq: u64,
    line: String,
    chunk_index: usize,
}

/// Document-scoped context carried from chunk to chunk.
#[derive(Debug, Clone)]
pub struct ExtractionMemory {
    k: usize,
    buffers: BTreeMap<String, VecDeque<MemoryItem>>,
    next_seq: u64,
    temporal_anchor: Option<TemporalValue>,
    spatial_anchor: Option<GeoValue>,
    tally: CountryTally,
}

impl Default for ExtractionMemory {
    fn default() -> Self {
        Self::new(DEFAULT_MEMORY_K)
    }
}

fn display_value(value: &EntityValue) -> String {
    match value {
        EntityValue::Temporal(t) => t.to_iso(),
        EntityValue::Geo(g) => match (&g.resolved_name, &g.admin_name, &g.country_code) {
            (Some(name), Some(admin), Some(cc)) if admin != name => format!("{name}, {admin}, {cc}"),
            (Some(name), _, Some(cc)) => format!("{name}, {cc}"),
            _ => "unresolved".to_string(),
        },
        EntityValue::Category(c) => c.label.clone(),
        EntityValue::Structured(s) => serde_json::to_string(&s.attributes).unwrap_or_default(),
    }
}

impl ExtractionMemory {
    pub fn new(k: usize) -> Self {
        Self {
            k: k.max(1),
            buffers: BTreeMap::new(),
            next_seq: 0,
            temporal_anchor: None,
            spatial_anchor: None,
            tally: CountryTally::default(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.k
    }

    /// Records a kept entity: ring buffer, anchors and country tally.
    pub fn observe(&mut self, entity: &ExtractedEntity) {
        self.remember(entity);
        match &entity.value {
            EntityValue::Temporal(t) => self.observe_temporal(t),
            EntityValue::Geo(g) => self.observe_place(g),
            _ => {}
        }
    }

    /// Ring-buffer insert only; anchors and tally untouched.
    pub fn remember(&mut self, entity: &ExtractedEntity) {
        let buffer = self.buffers.entry(entity.dimension.clone()).or_default();
        if buffer.len() == self.k {
            buffer.pop_front();
        }
        buffer.push_back(MemoryItem {
            seq: self.next_seq,
            line: format!(
                "[chunk {}] {}: \"{}\" -> {}",
                entity.chunk_index + 1,
                entity.dimension,
                entity.surface,
                display_value(&entity.value)
            ),
            chunk_index: entity.chunk_index,
        });
        self.next_seq += 1;
    }

    pub(crate) fn observe_temporal(&mut self, value: &TemporalValue) {
        if !value.relative {
            self.temporal_anchor = Some(value.clone());
        }
    }

    pub(crate) fn observe_place(&mut self, value: &GeoValue) {
        if let Some(cc) = value.country_code.as_deref().filter(|_| value.is_resolved()) {
            self.tally.record(cc);
            if value.admin_name.is_some() {
                self.spatial_anchor = Some(value.clone());
            }
        }
    }

    pub fn temporal_anchor(&self) -> Option<&TemporalValue> {
        self.temporal_anchor.as_ref()
    }

    pub fn spatial_anchor(&self) -> Option<&GeoValue> {
        self.spatial_anchor.as_ref()
    }

    pub fn tally(&self) -> &CountryTally {
        &self.tally
    }

    pub fn len(&self, dimension: &str) -> usize {
        self.buffers.get(dimension).map_or(0, VecDeque::len)
    }

    /// Highest chunk index held in any buffer.
    pub fn latest_chunk(&self) -> Option<usize> {
        self.buffers.values().flatten().map(|i| i.chunk_index).max()
    }

    /// Anchor for a relative expression. Deictic expressions use the
    /// publication date first; anaphoric ones the most recent absolute value.
    pub fn anchor_for(&self, role: AnchorRole, pub_date: Option<NaiveDate>) -> Option<TemporalValue> {
        let published = pub_date.map(TemporalValue::day);
        match role {
            AnchorRole::Deictic => published.or_else(|| self.temporal_anchor.clone()),
            AnchorRole::Anaphoric => self.temporal_anchor.clone().or(published),
        }
    }

    /// Buffered entity lines across dimensions, oldest first.
    pub fn digest(&self) -> Vec<String> {
        let mut items: Vec<&MemoryItem> = self.buffers.values().flatten().collect();
        items.sort_by_key(|i| i.seq);
        items.into_iter().map(|i| i.line.clone()).collect()
    }

    pub fn anchor_lines(&self) -> Vec<String> {
        let mut lines = Vec::new();
        if let Some(t) = &self.temporal_anchor {
            lines.push(format!("temporal anchor: {}", t.to_iso()));
        }
        if let Some(g) = &self.spatial_anchor {
            lines.push(format!(
                "spatial anchor: {}",
                display_value(&EntityValue::Geo(g.clone()))
            ));
        }
        lines
    }

    /// Consistency directives derived from the anchors and tally.
    pub fn instructions(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(t) = &self.temporal_anchor {
            out.push(format!(
                "resolve relative dates such as \"the next day\" against {}",
                t.to_iso()
            ));
        }
        if let Some(g) = &self.spatial_anchor {
            if let (Some(admin), Some(cc)) = (&g.admin_name, &g.country_code) {
                out.push(format!("document region so far: {admin}, {cc}"));
            }
        }
        if let Some(cc) = self.tally.majority(CORRECTION_MAJORITY, CORRECTION_MIN_EVIDENCE) {
            out.push(format!(
                "most places so far are in {cc}; prefer {cc} readings of ambiguous place names"
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::{CategoryValue, Provenance};

    fn entity(i: usize, dim: &str) -> ExtractedEntity {
        ExtractedEntity {
            entity_id: format!("e{i}"),
            dimension: dim.into(),
            surface: format!("s{i}"),
            doc_id: "d".into(),
            chunk_index: i,
            doc_span: (i, i + 1),
            value: EntityValue::Category(CategoryValue { label: "x".into() }),
            confidence: 0.5,
            reflection: None,
            provenance: Provenance::Kept,
        }
    }

    #[test]
    fn ring_buffer_evicts_oldest() {
        let mut m = ExtractionMemory::new(3);
        for i in 0..5 {
            m.observe(&entity(i, "disease"));
        }
        m.observe(&entity(5, "venue"));
        assert_eq!(m.len("disease"), 3);
        let digest = m.digest();
        assert_eq!(digest.len(), 4);
        assert!(digest[0].contains("\"s2\""));
        assert!(digest[3].contains("\"s5\""));
    }

    #[test]
    fn anchors_prefer_by_role() {
        let mut m = ExtractionMemory::default();
        let pub_date = NaiveDate::from_ymd_opt(2025, 1, 9);
        assert_eq!(
            m.anchor_for(AnchorRole::Anaphoric, pub_date),
            pub_date.map(TemporalValue::day)
        );
        let march = TemporalValue::day(NaiveDate::from_ymd_opt(2024, 3, 15).unwrap());
        m.observe_temporal(&march);
        let mut rel = TemporalValue::day(NaiveDate::from_ymd_opt(2024, 3, 16).unwrap());
        rel.relative = true;
        m.observe_temporal(&rel);
        assert_eq!(m.anchor_for(AnchorRole::Anaphoric, pub_date), Some(march));
        assert_eq!(
            m.anchor_for(AnchorRole::Deictic, pub_date),
            pub_date.map(TemporalValue::day)
        );
    }
}
