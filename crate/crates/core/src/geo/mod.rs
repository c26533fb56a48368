//! Toponym resolution and geodesic math.

mod gazetteer;
mod resolver;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use gazetteer::{Gazetteer, GazetteerError, GazetteerRow, PlaceKind, BUILTIN_GAZETTEER};
pub use resolver::{
    GeoCache, GeoQuery, Geocoder, NominatimClient, ProviderError, Region, CORRECTION_MAJORITY, CORRECTION_MIN_EVIDENCE,
};

pub const EARTH_RADIUS_KM: f64 = 6371.0;
pub const GEOCODER_URL_ENV: &str = "STINDEX_GEOCODER_URL";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }
}

/// Great-circle distance in kilometres on a sphere of radius 6371 km.
pub fn haversine_km(a: LatLon, b: LatLon) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.clamp(0.0, 1.0).sqrt().asin()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolutionLevel {
    Exact,
    AdminQualified,
    CountryQualified,
    CountryOnly,
    Unresolved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    Http,
    Gazetteer,
    /// Loaded from a persisted cache file.
    Cache,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoValue {
    /// Surface toponym as extracted.
    pub name: String,
    /// Enclosing region stated alongside the toponym, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qualifier: Option<String>,
    pub resolved_name: Option<String>,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
    pub country_code: Option<String>,
    pub admin_name: Option<String>,
    /// Level name (from the spatial dimension's hierarchy) to region name.
    pub hierarchy: BTreeMap<String, String>,
    pub resolution_level: ResolutionLevel,
    pub provider: Provider,
}

impl GeoValue {
    pub fn unresolved(name: &str, qualifier: Option<&str>) -> Self {
        Self {
            name: name.to_string(),
            qualifier: qualifier.map(String::from),
            resolved_name: None,
            lat: None,
            lon: None,
            country_code: None,
            admin_name: None,
            hierarchy: BTreeMap::new(),
            resolution_level: ResolutionLevel::Unresolved,
            provider: Provider::Gazetteer,
        }
    }

    pub fn is_resolved(&self) -> bool {
        self.resolution_level != ResolutionLevel::Unresolved
    }

    pub fn coords(&self) -> Option<LatLon> {
        Some(LatLon::new(self.lat?, self.lon?))
    }

    /// Region key used by the memory's spatial anchor.
    pub fn region(&self) -> Option<Region> {
        Some(Region {
            country_code: self.country_code.clone()?,
            admin: self.admin_name.clone(),
        })
    }
}

/// Running count of resolved countries within one document.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountryTally {
    counts: BTreeMap<String, u32>,
}

impl CountryTally {
    pub fn record(&mut self, country_code: &str) {
        *self.counts.entry(country_code.to_string()).or_default() += 1;
    }

    pub fn total(&self) -> u32 {
        self.counts.values().sum()
    }

    pub fn counts(&self) -> &BTreeMap<String, u32> {
        &self.counts
    }

    /// Country holding at least `share` of `>= min_total` observations.
    pub fn majority(&self, share: f64, min_total: u32) -> Option<&str> {
        let total = self.total();
        if total < min_total || total == 0 {
            return None;
        }
        let (country, count) = self
            .counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))?;
        (f64::from(*count) / f64::from(total) >= share).then_some(country.as_str())
    }
}

impl<const N: usize> From<[(&str, u32); N]> for CountryTally {
    fn from(entries: [(&str, u32); N]) -> Self {
        Self {
            counts: entries.iter().map(|(c, n)| (c.to_string(), *n)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn haversine_references() {
        let origin = LatLon::new(0.0, 0.0);
        assert_eq!(haversine_km(origin, origin), 0.0);
        assert!((haversine_km(origin, LatLon::new(0.0, 1.0)) - 111.19).abs() < 0.01);
        assert!((haversine_km(origin, LatLon::new(0.0, 180.0)) - 20015.1).abs() < 0.1);
    }

    #[test]
    fn majority_threshold() {
        assert_eq!(CountryTally::from([("AU", 5), ("US", 0)]).majority(0.6, 2), Some("AU"));
        assert_eq!(CountryTally::from([("AU", 3), ("US", 2)]).majority(0.6, 2), Some("AU"));
        assert_eq!(CountryTally::from([("AU", 1), ("US", 1)]).majority(0.6, 2), None);
        assert_eq!(CountryTally::from([("AU", 1)]).majority(0.6, 2), None);
        assert_eq!(CountryTally::default().majority(0.6, 2), None);
    }
}
