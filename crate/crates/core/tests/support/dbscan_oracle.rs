//! Quadratic reference DBSCAN over (km, days), written without reference to
//! the library clusterer.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stindex_core::analytics::{ClusterParams, StEvent};

pub fn distance_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    // atan2 form, same 6371 km sphere.
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    6371.0 * 2.0 * a.sqrt().atan2((1.0 - a).sqrt())
}

pub struct Labels {
    /// event_id -> min core event_id of its cluster's core component.
    pub cluster_of: BTreeMap<usize, usize>,
    pub core: Vec<usize>,
    pub noise: Vec<usize>,
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    let mut c = x;
    while parent[c] != r {
        let n = parent[c];
        parent[c] = r;
        c = n;
    }
    r
}

pub fn reference(events: &[StEvent], p: &ClusterParams) -> Labels {
    let n = events.len();
    let near = |i: usize, j: usize| {
        let (a, b) = (&events[i], &events[j]);
        (a.date - b.date).num_days().unsigned_abs() as f64 <= p.eps_days
            && distance_km(a.lat, a.lon, b.lat, b.lon) <= p.eps_km
    };
    let nb: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).collect()).collect();
    let core: Vec<bool> = nb.iter().map(|v| v.len() >= p.min_pts).collect();

    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for &j in &nb[i] {
            if core[i] && core[j] {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let mut min_id: BTreeMap<usize, usize> = BTreeMap::new();
    for i in (0..n).filter(|&i| core[i]) {
        let r = find(&mut parent, i);
        let e = min_id.entry(r).or_insert(usize::MAX);
        *e = (*e).min(events[i].event_id);
    }
    let mut cluster_of = BTreeMap::new();
    let mut noise = Vec::new();
    for i in 0..n {
        let label = if core[i] {
            Some(min_id[&find(&mut parent, i)])
        } else {
            nb[i]
                .iter()
                .filter(|&&j| core[j])
                .map(|&j| min_id[&find(&mut parent, j)])
                .min()
        };
        match label {
            Some(l) => {
                cluster_of.insert(events[i].event_id, l);
            }
            None => noise.push(events[i].event_id),
        }
    }
    noise.sort_unstable();
    let mut core_ids: Vec<usize> = (0..n).filter(|&i| core[i]).map(|i| events[i].event_id).collect();
    core_ids.sort_unstable();
    Labels {
        cluster_of,
        core: core_ids,
        noise,
    }
}

pub fn random_instance(seed: u64) -> (Vec<StEvent>, ClusterParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=200);
    let mut ids: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        ids.swap(i, rng.gen_range(0..=i));
    }
    let base = NaiveDate::from_ymd_opt(2025, 1, 1).unwrap();
    let events = ids
        .into_iter()
        .map(|id| {
            let lat = rng.gen_range(-33.0..-31.0);
            let lon = rng.gen_range(115.0..117.0);
            StEvent::bare(id, lat, lon, base + chrono::Duration::days(rng.gen_range(0..60)))
        })
        .collect();
    let params = ClusterParams {
        eps_km: rng.gen_range(5.0..80.0),
        eps_days: f64::from(rng.gen_range(1..=10)),
        min_pts: rng.gen_range(2..=5),
    };
    (events, params)
}
