use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GazetteerError {
    #[error("cannot read gazetteer {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("gazetteer line {line}: {message}")]
    Format { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaceKind {
    Country,
    Admin,
    Locality,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GazetteerRow {
    pub name: String,
    pub alt_names: Vec<String>,
    pub country_code: String,
    pub admin_name: String,
    pub lat: f64,
    pub lon: f64,
    pub population: u64,
}

impl GazetteerRow {
    /// Country rows have no admin name; admin rows name their own region.
    pub fn kind(&self) -> PlaceKind {
        if self.admin_name.is_empty() {
            PlaceKind::Country
        } else if self.name == self.admin_name {
            PlaceKind::Admin
        } else {
            PlaceKind::Locality
        }
    }
}

/// Offline place table indexed case-insensitively by name and alternate names.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    rows: Vec<GazetteerRow>,
    index: HashMap<String, Vec<usize>>,
}

pub(crate) fn fold(name: &str) -> String {
    name.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Bundled gazetteer covering the demo corpus and common test names.
pub const BUILTIN_GAZETTEER: &str = include_str!("../../fixtures/gazetteer.tsv");

impl Gazetteer {
    pub fn builtin() -> Self {
        Self::from_tsv(BUILTIN_GAZETTEER).expect("bundled gazetteer parses")
    }

    /// Parses TSV with header
    /// `name, alt_names, country_code, admin_name, lat, lon, population`
    /// (alternate names `|`-separated).
    pub fn from_tsv(text: &str) -> Result<Self, GazetteerError> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() || (i == 0 && line.starts_with("name\t")) || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 7 {
                return Err(GazetteerError::Format {
                    line: line_no,
                    message: format!("expected 7 columns, found {}", cols.len()),
                });
            }
            let number = |idx: usize, what: &str| -> Result<f64, GazetteerError> {
                cols[idx].trim().parse::<f64>().map_err(|_| GazetteerError::Format {
                    line: line_no,
                    message: format!("bad {what} {:?}", cols[idx]),
                })
            };
            let lat = number(4, "latitude")?;
            let lon = number(5, "longitude")?;
            if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
                return Err(GazetteerError::Format {
                    line: line_no,
                    message: "coordinates out of range".into(),
                });
            }
            let population = cols[6].trim().parse::<u64>().map_err(|_| GazetteerError::Format {
                line: line_no,
                message: format!("bad population {:?}", cols[6]),
            })?;
            rows.push(GazetteerRow {
                name: cols[0].trim().to_string(),
                alt_names: cols[1]
                    .split('|')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect(),
                country_code: cols[2].trim().to_ascii_uppercase(),
                admin_name: cols[3].trim().to_string(),
                lat,
                lon,
                population,
            });
        }
        Ok(Self::from_rows(rows))
    }

    pub fn load(path: &Path) -> Result<Self, GazetteerError> {
        let text = std::fs::read_to_string(path).map_err(|source| GazetteerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_tsv(&text)
    }

    pub fn from_rows(rows: Vec<GazetteerRow>) -> Self {
        let mut index: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, row) in rows.iter().enumerate() {
            let mut keys: Vec<String> = std::iter::once(&row.name)
                .chain(&row.alt_names)
                .map(|n| fold(n))
                .collect();
            keys.sort();
            keys.dedup();
            for key in keys {
                index.entry(key).or_default().push(i);
            }
        }
        Self { rows, index }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[GazetteerRow] {
        &self.rows
    }

    /// All rows whose name or alternate name equals `name` (case-insensitive),
    /// best first: descending population, then country code, then file order.
    pub fn candidates(&self, name: &str) -> Vec<&GazetteerRow> {
        let mut found: Vec<(usize, &GazetteerRow)> = self
            .index
            .get(&fold(name))
            .map(|ids| ids.iter().map(|&i| (i, &self.rows[i])).collect())
            .unwrap_or_default();
        found.sort_by(|(ia, a), (ib, b)| {
            b.population
                .cmp(&a.population)
                .then_with(|| a.country_code.cmp(&b.country_code))
                .then_with(|| ia.cmp(ib))
        });
        found.into_iter().map(|(_, row)| row).collect()
    }

    /// Distinct countries among the candidates for `name`.
    pub fn candidate_countries(&self, name: &str) -> Vec<String> {
        let mut countries: Vec<String> = self
            .candidates(name)
            .into_iter()
            .map(|r| r.country_code.clone())
            .collect();
        countries.sort();
        countries.dedup();
        countries
    }

    /// A name is ambiguous when its candidates span at least two countries.
    pub fn is_ambiguous(&self, name: &str) -> bool {
        self.candidate_countries(name).len() >= 2
    }
}
