//! Multi-level geocoding ladder over an optional HTTP geocoder and the
//! offline gazetteer, plus document-context correction.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use super::gazetteer::{fold, Gazetteer, GazetteerRow, PlaceKind};
use super::{CountryTally, GeoValue, Provider, ResolutionLevel};
use crate::net::{self, RateLimiter};

/// Share of prior resolved entities that must agree on a country before an
/// ambiguous toponym is re-resolved toward it.
pub const CORRECTION_MAJORITY: f64 = 0.6;
/// Minimum number of prior resolved entities before correction applies.
pub const CORRECTION_MIN_EVIDENCE: u32 = 2;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("geocoder request failed: {0}")]
    Transport(String),
    #[error("geocoder returned HTTP {0}")]
    Status(u16),
    #[error("geocoder response unreadable: {0}")]
    Decode(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Region {
    pub country_code: String,
    pub admin: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeoQuery {
    pub name: String,
    pub qualifier: Option<String>,
    pub bias: Option<String>,
    /// Region of the document's most recent resolved place.
    pub anchor: Option<Region>,
}

impl GeoQuery {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.trim().to_string(),
            ..Self::default()
        }
    }

    pub fn with_bias(mut self, country_code: &str) -> Self {
        self.bias = Some(country_code.to_ascii_uppercase());
        self
    }

    pub fn with_qualifier(mut self, qualifier: &str) -> Self {
        self.qualifier = Some(qualifier.trim().to_string()).filter(|q| !q.is_empty());
        self
    }

    pub fn with_anchor(mut self, anchor: Option<Region>) -> Self {
        self.anchor = anchor;
        self
    }

    /// Base toponym and qualifier, splitting "Perth, Western Australia" when
    /// no explicit qualifier was given.
    fn parts(&self) -> (String, Option<String>) {
        match (&self.qualifier, self.name.split_once(',')) {
            (Some(q), _) => (self.name.clone(), Some(q.clone())),
            (None, Some((base, rest))) if !base.trim().is_empty() && !rest.trim().is_empty() => {
                (base.trim().to_string(), Some(rest.trim().to_string()))
            }
            _ => (self.name.clone(), None),
        }
    }

    fn cache_key(&self) -> String {
        format!(
            "{}|{}|{}|{}",
            fold(&self.name),
            self.qualifier.as_deref().map(fold).unwrap_or_default(),
            self.bias.as_deref().unwrap_or(""),
            self.anchor
                .as_ref()
                .map(|a| format!("{}/{}", a.country_code, a.admin.as_deref().unwrap_or("")))
                .unwrap_or_default()
        )
    }
}

/// Query-keyed result cache. Entries loaded from disk are tagged
/// [`Provider::Cache`]; entries written during this process are returned
/// unchanged.
#[derive(Debug, Default)]
pub struct GeoCache {
    entries: RwLock<HashMap<String, GeoValue>>,
}

impl GeoCache {
    pub fn get(&self, key: &str) -> Option<GeoValue> {
        self.entries.read().unwrap_or_else(|e| e.into_inner()).get(key).cloned()
    }

    pub fn insert(&self, key: String, value: GeoValue) {
        self.entries
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(key, value);
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let stored: BTreeMap<String, GeoValue> =
            serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        let entries = stored
            .into_iter()
            .map(|(k, mut v)| {
                if v.is_resolved() {
                    v.provider = Provider::Cache;
                }
                (k, v)
            })
            .collect();
        Ok(Self {
            entries: RwLock::new(entries),
        })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let entries = self.entries.read().unwrap_or_else(|e| e.into_inner());
        let sorted: BTreeMap<&String, &GeoValue> = entries.iter().collect();
        let text = serde_json::to_string_pretty(&sorted).map_err(std::io::Error::other)?;
        std::fs::write(path, text)
    }
}

#[derive(Debug, Clone, Deserialize)]
struct NominatimHit {
    lat: String,
    lon: String,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    display_name: Option<String>,
    #[serde(default)]
    address: BTreeMap<String, String>,
}

/// Client for a Nominatim-compatible `/search` endpoint.
#[derive(Debug, Clone)]
pub struct NominatimClient {
    base_url: String,
    timeout: Duration,
    limiter: Arc<RateLimiter>,
}

impl NominatimClient {
    pub fn new(base_url: &str) -> Self {
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            timeout: Duration::from_secs(30),
            limiter: Arc::new(RateLimiter::new(Duration::from_secs(1))),
        }
    }

    pub fn with_rate_limiter(mut self, limiter: Arc<RateLimiter>) -> Self {
        self.limiter = limiter;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn search(&self, query: &str, country: Option<&str>) -> Result<Vec<NominatimHit>, ProviderError> {
        let url = format!("{}/search", self.base_url);
        self.limiter.wait(&net::host_of(&url));
        let mut request = net::agent(self.timeout)
            .get(&url)
            .query("q", query)
            .query("format", "json")
            .query("addressdetails", "1")
            .query("limit", "5");
        if let Some(cc) = country {
            request = request.query("countrycodes", cc.to_ascii_lowercase());
        }
        let mut response = request.call().map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(ProviderError::Status(status));
        }
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        serde_json::from_str(&body).map_err(|e| ProviderError::Decode(e.to_string()))
    }
}

pub struct Geocoder {
    gazetteer: Arc<Gazetteer>,
    http: Option<NominatimClient>,
    cache: GeoCache,
    levels: Vec<String>,
}

impl Geocoder {
    /// Gazetteer-only geocoder: a pure function of (query, gazetteer).
    pub fn offline(gazetteer: Arc<Gazetteer>) -> Self {
        Self {
            gazetteer,
            http: None,
            cache: GeoCache::default(),
            levels: vec!["country".into(), "admin".into(), "locality".into()],
        }
    }

    pub fn with_http(mut self, client: NominatimClient) -> Self {
        self.http = Some(client);
        self
    }

    pub fn with_cache(mut self, cache: GeoCache) -> Self {
        self.cache = cache;
        self
    }

    /// Names for the (country, admin, locality) levels, coarse to fine.
    pub fn with_hierarchy(mut self, levels: &[String]) -> Self {
        if !levels.is_empty() {
            self.levels = levels.to_vec();
        }
        self
    }

    pub fn gazetteer(&self) -> &Gazetteer {
        &self.gazetteer
    }

    pub fn cache(&self) -> &GeoCache {
        &self.cache
    }

    pub fn geocode(&self, query: &GeoQuery) -> GeoValue {
        let key = query.cache_key();
        if let Some(hit) = self.cache.get(&key) {
            return hit;
        }
        let value = match &self.http {
            Some(client) => match self.http_ladder(client, query) {
                Ok(Some(value)) => value,
                Ok(None) => self.gazetteer_ladder(query),
                Err(err) => {
                    warn!(%err, name = %query.name, "HTTP geocoder failed, using gazetteer");
                    self.gazetteer_ladder(query)
                }
            },
            None => self.gazetteer_ladder(query),
        };
        self.cache.insert(key, value.clone());
        value
    }

    /// Re-resolves an ambiguous toponym toward the document's majority
    /// country when the evidence is strong enough.
    pub fn apply_context_correction(&self, value: &GeoValue, tally: &CountryTally) -> GeoValue {
        if value.qualifier.is_some() || !value.is_resolved() {
            return value.clone();
        }
        let (base, _) = GeoQuery::new(&value.name).parts();
        if !self.gazetteer.is_ambiguous(&base) {
            return value.clone();
        }
        let Some(majority) = tally.majority(CORRECTION_MAJORITY, CORRECTION_MIN_EVIDENCE) else {
            return value.clone();
        };
        if value.country_code.as_deref() == Some(majority) {
            return value.clone();
        }
        let biased = self.geocode(&GeoQuery::new(&value.name).with_bias(majority));
        if biased.country_code.as_deref() == Some(majority) {
            debug!(name = %value.name, from = ?value.country_code, to = majority, "context correction applied");
            biased
        } else {
            value.clone()
        }
    }

    fn regions_named(&self, name: &str) -> Vec<(&GazetteerRow, PlaceKind)> {
        self.gazetteer
            .candidates(name)
            .into_iter()
            .map(|row| (row, row.kind()))
            .filter(|(_, kind)| *kind != PlaceKind::Locality)
            .collect()
    }

    fn gazetteer_ladder(&self, query: &GeoQuery) -> GeoValue {
        let (base, qualifier) = query.parts();
        let candidates = self.gazetteer.candidates(&base);
        let build = |row: &GazetteerRow, level| self.value_from_row(&query.name, qualifier.as_deref(), row, level);

        let regions = qualifier.as_deref().map(|q| self.regions_named(q)).unwrap_or_default();
        if !regions.is_empty() {
            for row in &candidates {
                for (region, kind) in &regions {
                    if *kind == PlaceKind::Admin
                        && row.country_code == region.country_code
                        && row.admin_name == region.admin_name
                        && row.name != region.name
                    {
                        return build(row, ResolutionLevel::AdminQualified);
                    }
                    if *kind == PlaceKind::Country && row.country_code == region.country_code {
                        return build(row, ResolutionLevel::CountryQualified);
                    }
                }
            }
            // The text names a region but no place of that name lies in it.
            return build(regions[0].0, ResolutionLevel::CountryOnly);
        }

        if let Some(bias) = &query.bias {
            if let Some(row) = candidates.iter().find(|r| &r.country_code == bias) {
                return build(row, ResolutionLevel::Exact);
            }
        }
        if let Some(Region {
            country_code,
            admin: Some(admin),
        }) = &query.anchor
        {
            if let Some(row) = candidates
                .iter()
                .find(|r| &r.country_code == country_code && &r.admin_name == admin)
            {
                return build(row, ResolutionLevel::AdminQualified);
            }
        }
        if let Some(row) = candidates.first() {
            return build(row, ResolutionLevel::Exact);
        }
        GeoValue::unresolved(&query.name, qualifier.as_deref())
    }

    fn hierarchy(&self, country: &str, admin: Option<&str>, locality: Option<&str>) -> BTreeMap<String, String> {
        [Some(country), admin, locality]
            .into_iter()
            .zip(&self.levels)
            .filter_map(|(value, level)| Some((level.clone(), value?.to_string())))
            .filter(|(_, value)| !value.is_empty())
            .collect()
    }

    fn value_from_row(
        &self,
        name: &str,
        qualifier: Option<&str>,
        row: &GazetteerRow,
        level: ResolutionLevel,
    ) -> GeoValue {
        let kind = row.kind();
        let admin = (kind != PlaceKind::Country).then_some(row.admin_name.as_str());
        let locality = (kind == PlaceKind::Locality).then_some(row.name.as_str());
        GeoValue {
            name: name.to_string(),
            qualifier: qualifier.map(String::from),
            resolved_name: Some(row.name.clone()),
            lat: Some(row.lat),
            lon: Some(row.lon),
            country_code: Some(row.country_code.clone()),
            admin_name: admin.map(String::from),
            hierarchy: self.hierarchy(&row.country_code, admin, locality),
            resolution_level: level,
            provider: Provider::Gazetteer,
        }
    }

    fn http_ladder(&self, client: &NominatimClient, query: &GeoQuery) -> Result<Option<GeoValue>, ProviderError> {
        let (base, qualifier) = query.parts();
        let mut attempts: Vec<(String, Option<&str>, ResolutionLevel)> = Vec::new();
        if let Some(q) = &qualifier {
            attempts.push((format!("{base}, {q}"), None, ResolutionLevel::AdminQualified));
        }
        if let Some(bias) = &query.bias {
            attempts.push((base.clone(), Some(bias.as_str()), ResolutionLevel::Exact));
        }
        if let Some(Region { admin: Some(admin), .. }) = &query.anchor {
            attempts.push((format!("{base}, {admin}"), None, ResolutionLevel::AdminQualified));
        }
        attempts.push((base.clone(), None, ResolutionLevel::Exact));

        for (text, country, level) in attempts {
            let hits = client.search(&text, country)?;
            if let Some(hit) = hits.into_iter().next() {
                return Ok(self.value_from_hit(&query.name, qualifier.as_deref(), hit, level));
            }
        }
        Ok(None)
    }

    fn value_from_hit(
        &self,
        name: &str,
        qualifier: Option<&str>,
        hit: NominatimHit,
        level: ResolutionLevel,
    ) -> Option<GeoValue> {
        let lat: f64 = hit.lat.trim().parse().ok()?;
        let lon: f64 = hit.lon.trim().parse().ok()?;
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return None;
        }
        let country = hit.address.get("country_code")?.to_ascii_uppercase();
        let admin = hit.address.get("state").map(String::as_str);
        let locality = ["city", "town", "village", "suburb", "hamlet"]
            .iter()
            .find_map(|k| hit.address.get(*k))
            .map(String::as_str);
        let resolved = hit.name.clone().filter(|n| !n.is_empty()).or_else(|| {
            hit.display_name
                .as_deref()
                .and_then(|d| d.split(',').next())
                .map(|s| s.trim().to_string())
        });
        Some(GeoValue {
            name: name.to_string(),
            qualifier: qualifier.map(String::from),
            resolved_name: resolved,
            lat: Some(lat),
            lon: Some(lon),
            country_code: Some(country.clone()),
            admin_name: admin.map(String::from),
            hierarchy: self.hierarchy(&country, admin, locality),
            resolution_level: level,
            provider: Provider::Http,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geocoder() -> Geocoder {
        let g = Gazetteer::from_tsv(include_str!("../../fixtures/gazetteer.tsv")).unwrap();
        Geocoder::offline(Arc::new(g))
    }

    #[test]
    fn perth_with_au_bias() {
        let v = geocoder().geocode(&GeoQuery::new("Perth").with_bias("AU"));
        assert_eq!(v.resolution_level, ResolutionLevel::Exact);
        assert_eq!(v.country_code.as_deref(), Some("AU"));
        assert!((v.lat.unwrap() + 31.95).abs() < 0.01);
        assert!((v.lon.unwrap() - 115.86).abs() < 0.01);
        assert_eq!(v.hierarchy["country"], "AU");
        assert_eq!(v.hierarchy["admin"], "Western Australia");
        assert_eq!(v.hierarchy["locality"], "Perth");
    }

    #[test]
    fn atlantis_unresolved() {
        let v = geocoder().geocode(&GeoQuery::new("Atlantis"));
        assert_eq!(v.resolution_level, ResolutionLevel::Unresolved);
        assert!(v.lat.is_none() && v.lon.is_none());
    }

    #[test]
    fn wa_bias_au_is_western_australia() {
        let gc = geocoder();
        let v = gc.geocode(&GeoQuery::new("WA").with_bias("AU"));
        assert_eq!(v.resolved_name.as_deref(), Some("Western Australia"));
        let unbiased = gc.geocode(&GeoQuery::new("WA"));
        assert_eq!(unbiased.resolved_name.as_deref(), Some("Washington"));
        assert_eq!(unbiased.country_code.as_deref(), Some("US"));
    }

    #[test]
    fn qualifiers() {
        let gc = geocoder();
        let v = gc.geocode(&GeoQuery::new("Perth, Scotland"));
        assert_eq!(v.country_code.as_deref(), Some("GB"));
        assert_eq!(v.resolution_level, ResolutionLevel::AdminQualified);
        let v = gc.geocode(&GeoQuery::new("Paris, Texas"));
        assert_eq!(v.admin_name.as_deref(), Some("Texas"));
        let v = gc.geocode(&GeoQuery::new("Paris").with_qualifier("US"));
        assert_eq!(v.country_code.as_deref(), Some("US"));
        assert_eq!(v.resolution_level, ResolutionLevel::CountryQualified);
        // Unknown place inside a known region falls back to the region centroid.
        let v = gc.geocode(&GeoQuery::new("Smalltown, Western Australia"));
        assert_eq!(v.resolution_level, ResolutionLevel::CountryOnly);
        assert_eq!(v.resolved_name.as_deref(), Some("Western Australia"));
    }

    #[test]
    fn anchor_admin_disambiguates() {
        let gc = geocoder();
        let anchor = Some(Region {
            country_code: "AU".into(),
            admin: Some("Victoria".into()),
        });
        let v = gc.geocode(&GeoQuery::new("Richmond").with_anchor(anchor));
        assert_eq!(v.resolution_level, ResolutionLevel::AdminQualified);
        assert_eq!(v.admin_name.as_deref(), Some("Victoria"));
    }

    #[test]
    fn correction_rebiases_wa() {
        let gc = geocoder();
        let wrong = gc.geocode(&GeoQuery::new("WA"));
        let fixed = gc.apply_context_correction(&wrong, &CountryTally::from([("AU", 5), ("US", 0)]));
        assert_eq!(fixed.resolved_name.as_deref(), Some("Western Australia"));
        assert_eq!(fixed.country_code.as_deref(), Some("AU"));
        assert_eq!(
            gc.apply_context_correction(&fixed, &CountryTally::from([("AU", 5)])),
            fixed
        );
    }

    #[test]
    fn correction_needs_evidence() {
        let gc = geocoder();
        let wrong = gc.geocode(&GeoQuery::new("WA"));
        assert_eq!(gc.apply_context_correction(&wrong, &CountryTally::default()), wrong);
        assert_eq!(
            gc.apply_context_correction(&wrong, &CountryTally::from([("AU", 1)])),
            wrong
        );
    }

    #[test]
    fn correction_bias_miss_keeps_original() {
        let gc = geocoder();
        let paris = gc.geocode(&GeoQuery::new("Paris"));
        assert_eq!(paris.country_code.as_deref(), Some("FR"));
        assert_eq!(
            gc.apply_context_correction(&paris, &CountryTally::from([("AU", 5)])),
            paris
        );
    }

    #[test]
    fn unambiguous_names_pass_through() {
        let gc = geocoder();
        let v = gc.geocode(&GeoQuery::new("Seattle"));
        assert_eq!(gc.apply_context_correction(&v, &CountryTally::from([("AU", 5)])), v);
    }

    #[test]
    fn cache_hit_is_identical() {
        let gc = geocoder();
        let q = GeoQuery::new("Fremantle").with_bias("AU");
        let first = gc.geocode(&q);
        assert_eq!(gc.cache().len(), 1);
        assert_eq!(gc.geocode(&q), first);
    }

    #[test]
    fn custom_hierarchy_levels() {
        let levels = vec!["nation".to_string(), "state".to_string()];
        let gc = geocoder().with_hierarchy(&levels);
        let v = gc.geocode(&GeoQuery::new("Perth").with_bias("AU"));
        assert_eq!(v.hierarchy.len(), 2);
        assert_eq!(v.hierarchy["nation"], "AU");
        assert_eq!(v.hierarchy["state"], "Western Australia");
    }
}
