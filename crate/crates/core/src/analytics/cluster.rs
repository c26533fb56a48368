use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::StEvent;
use crate::geo::{haversine_km, LatLon};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub eps_km: f64,
    pub eps_days: f64,
    pub min_pts: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            eps_km: 50.0,
            eps_days: 7.0,
            min_pts: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClusterError {
    #[error("invalid clustering parameters: {0}")]
    InvalidParams(String),
}

impl ClusterParams {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ClusterError> {
        if !(self.eps_km > 0.0) || !(self.eps_days > 0.0) {
            return Err(ClusterError::InvalidParams(
                "eps_km and eps_days must be positive".into(),
            ));
        }
        if self.min_pts < 2 {
            return Err(ClusterError::InvalidParams("min_pts must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StCluster {
    pub cluster_id: usize,
    /// Ascending.
    pub members: Vec<usize>,
    pub centroid_lat: f64,
    pub centroid_lon: f64,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub clusters: Vec<StCluster>,
    /// Ascending event ids.
    pub noise: Vec<usize>,
}

/// Neighbour test shared by the clusterer: both radii, inclusive.
pub fn within(a: &StEvent, b: &StEvent, params: &ClusterParams) -> bool {
    ((a.date - b.date).num_days().abs() as f64) <= params.eps_days
        && haversine_km(LatLon::new(a.lat, a.lon), LatLon::new(b.lat, b.lon)) <= params.eps_km
}

/// Neighbourhoods (including self) as indices into `events`, using a date
/// sort to bound the distance checks.
fn neighbourhoods(events: &[StEvent], params: &ClusterParams) -> Vec<Vec<usize>> {
    let mut by_date: Vec<usize> = (0..events.len()).collect();
    by_date.sort_by_key(|&i| (events[i].date, events[i].event_id));
    let mut out = vec![Vec::new(); events.len()];
    for (pos, &i) in by_date.iter().enumerate() {
        for &j in &by_date[pos..] {
            if (events[j].date - events[i].date).num_days() as f64 > params.eps_days {
                break;
            }
            if within(&events[i], &events[j], params) {
                out[i].push(j);
                if i != j {
                    out[j].push(i);
                }
            }
        }
    }
    for n in &mut out {
        n.sort_by_key(|&k| events[k].event_id);
    }
    out
}

/// DBSCAN over space and time. Seeds are visited in ascending event id, so
/// a border point joins the earliest-seeded cluster that reaches it.
/// Clusters are returned sorted by earliest member date, then lowest id.
pub fn cluster_st(events: &[StEvent], params: &ClusterParams) -> Result<Clustering, ClusterError> {
    params.validate()?;
    let neighbours = neighbourhoods(events, params);
    let is_core: Vec<bool> = neighbours.iter().map(|n| n.len() >= params.min_pts).collect();
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by_key(|&i| events[i].event_id);

    let mut label: Vec<Option<usize>> = vec![None; events.len()];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &seed in &order {
        if !is_core[seed] || label[seed].is_some() {
            continue;
        }
        let id = groups.len();
        let mut members = vec![seed];
        label[seed] = Some(id);
        let mut frontier = vec![seed];
        while let Some(p) = frontier.pop() {
            for &q in &neighbours[p] {
                if label[q].is_some() {
                    continue;
                }
                label[q] = Some(id);
                members.push(q);
                if is_core[q] {
                    frontier.push(q);
                }
            }
        }
        groups.push(members);
    }

    let mut clusters: Vec<StCluster> = groups
        .into_iter()
        .map(|idx| {
            let n = idx.len() as f64;
            let mut members: Vec<usize> = idx.iter().map(|&i| events[i].event_id).collect();
            members.sort_unstable();
            StCluster {
                cluster_id: 0,
                members,
                centroid_lat: idx.iter().map(|&i| events[i].lat).sum::<f64>() / n,
                centroid_lon: idx.iter().map(|&i| events[i].lon).sum::<f64>() / n,
                start: idx.iter().map(|&i| events[i].date).min().expect("non-empty"),
                end: idx.iter().map(|&i| events[i].date).max().expect("non-empty"),
            }
        })
        .collect();
    clusters.sort_by_key(|c| (c.start, c.members[0]));
    for (i, c) in clusters.iter_mut().enumerate() {
        c.cluster_id = i;
    }
    let mut noise: Vec<usize> = (0..events.len())
        .filter(|&i| label[i].is_none())
        .map(|i| events[i].event_id)
        .collect();
    noise.sort_unstable();
    Ok(Clustering { clusters, noise })
}
