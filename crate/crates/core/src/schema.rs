//! User-defined extraction dimensions.
//!
//! A schema file is a JSON or YAML document with a top-level `dimensions`
//! list. Exactly one dimension must be `normalized_temporal` and exactly one
//! `geocoded_spatial`; any number of categorical and structured dimensions
//! may follow.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("schema syntax error: {0}")]
    Syntax(String),
    #[error("schema violation in dimension '{dimension}': {message}")]
    Violation { dimension: String, message: String },
    #[error("unsupported schema format: {0}")]
    UnsupportedFormat(String),
    #[error("cannot read schema file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl SchemaError {
    fn violation(dimension: &str, message: impl Into<String>) -> Self {
        SchemaError::Violation {
            dimension: dimension.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimensionKind {
    NormalizedTemporal,
    GeocodedSpatial,
    Categorical,
    Structured,
}

impl DimensionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DimensionKind::NormalizedTemporal => "normalized_temporal",
            DimensionKind::GeocodedSpatial => "geocoded_spatial",
            DimensionKind::Categorical => "categorical",
            DimensionKind::Structured => "structured",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    Text,
    Number,
    Category,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub kind: AttributeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionSchema {
    pub name: String,
    pub kind: DimensionKind,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hierarchy: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<Vec<AttributeSpec>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub required: bool,
}

impl DimensionSchema {
    pub fn new(name: &str, kind: DimensionKind) -> Self {
        Self {
            name: name.to_string(),
            kind,
            description: String::new(),
            vocabulary: None,
            hierarchy: None,
            attributes: None,
            required: false,
        }
    }

    /// Vocabulary label matching `raw` case-insensitively, in vocabulary case.
    pub fn canonical_label(&self, raw: &str) -> Option<&str> {
        let wanted = raw.trim().to_lowercase();
        self.vocabulary
            .as_deref()?
            .iter()
            .find(|label| label.to_lowercase() == wanted)
            .map(String::as_str)
    }

    fn validate(&self) -> Result<(), SchemaError> {
        let name = self.name.as_str();
        if !is_identifier(name) {
            return Err(SchemaError::violation(name, "name must match [a-z][a-z0-9_]*"));
        }
        let kind = self.kind.as_str();
        match (&self.vocabulary, self.kind) {
            (None, DimensionKind::Categorical) => {
                return Err(SchemaError::violation(
                    name,
                    format!("categorical dimension '{name}' missing vocabulary"),
                ))
            }
            (Some(_), k) if k != DimensionKind::Categorical => {
                return Err(SchemaError::violation(
                    name,
                    format!("vocabulary not allowed on {kind} dimension"),
                ))
            }
            (Some(vocab), _) => {
                if vocab.iter().all(|l| l.trim().is_empty()) {
                    return Err(SchemaError::violation(
                        name,
                        "vocabulary must contain at least one label",
                    ));
                }
                let mut seen = HashSet::new();
                for label in vocab {
                    if label.trim().is_empty() {
                        return Err(SchemaError::violation(name, "empty vocabulary label"));
                    }
                    if !seen.insert(label.to_lowercase()) {
                        return Err(SchemaError::violation(
                            name,
                            format!("duplicate vocabulary label '{label}'"),
                        ));
                    }
                }
            }
            (None, _) => {}
        }
        match (&self.attributes, self.kind) {
            (None, DimensionKind::Structured) => {
                return Err(SchemaError::violation(
                    name,
                    format!("structured dimension '{name}' missing attributes"),
                ))
            }
            (Some(_), k) if k != DimensionKind::Structured => {
                return Err(SchemaError::violation(
                    name,
                    format!("attributes not allowed on {kind} dimension"),
                ))
            }
            (Some(attrs), _) => {
                if attrs.is_empty() {
                    return Err(SchemaError::violation(
                        name,
                        "attributes must contain at least one entry",
                    ));
                }
                let mut seen = HashSet::new();
                for attr in attrs {
                    if attr.name.trim().is_empty() {
                        return Err(SchemaError::violation(name, "empty attribute name"));
                    }
                    if !seen.insert(attr.name.as_str()) {
                        return Err(SchemaError::violation(
                            name,
                            format!("duplicate attribute '{}'", attr.name),
                        ));
                    }
                }
            }
            (None, _) => {}
        }
        if let Some(levels) = &self.hierarchy {
            let distinct: HashSet<&str> = levels.iter().map(String::as_str).collect();
            if levels.len() < 2 || distinct.len() != levels.len() || levels.iter().any(|l| l.trim().is_empty()) {
                return Err(SchemaError::violation(
                    name,
                    "hierarchy needs at least 2 distinct level names",
                ));
            }
        }
        Ok(())
    }
}

fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some('a'..='z')) && chars.all(|c| matches!(c, 'a'..='z' | '0'..='9' | '_'))
}

/// Lower-cases and replaces spaces and hyphens with underscores.
pub fn normalize_name(raw: &str) -> String {
    raw.trim()
        .to_lowercase()
        .chars()
        .map(|c| if c == ' ' || c == '-' { '_' } else { c })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaSet {
    #[serde(default = "default_version")]
    pub version: String,
    pub dimensions: Vec<DimensionSchema>,
}

fn default_version() -> String {
    "1".to_string()
}

impl SchemaSet {
    /// Builds a set from dimensions, normalizing names and checking every
    /// invariant.
    pub fn new(version: impl Into<String>, dimensions: Vec<DimensionSchema>) -> Result<Self, SchemaError> {
        let mut set = SchemaSet {
            version: version.into(),
            dimensions,
        };
        for dim in &mut set.dimensions {
            dim.name = normalize_name(&dim.name);
        }
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        let mut names = HashSet::new();
        for dim in &self.dimensions {
            dim.validate()?;
            if !names.insert(dim.name.as_str()) {
                return Err(SchemaError::violation(&dim.name, "duplicate dimension name"));
            }
        }
        for kind in [DimensionKind::NormalizedTemporal, DimensionKind::GeocodedSpatial] {
            let mut matching = self.dimensions.iter().filter(|d| d.kind == kind);
            match (matching.next(), matching.next()) {
                (None, _) => {
                    return Err(SchemaError::violation(
                        "<schema>",
                        format!("missing {} anchor", kind.as_str()),
                    ))
                }
                (Some(_), Some(extra)) => {
                    return Err(SchemaError::violation(
                        &extra.name,
                        format!("more than one {} dimension", kind.as_str()),
                    ))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn dimension(&self, name: &str) -> Option<&DimensionSchema> {
        self.dimensions.iter().find(|d| d.name == name)
    }

    fn anchor(&self, kind: DimensionKind) -> &DimensionSchema {
        self.dimensions
            .iter()
            .find(|d| d.kind == kind)
            .expect("validated schema has both anchors")
    }

    pub fn temporal(&self) -> &DimensionSchema {
        self.anchor(DimensionKind::NormalizedTemporal)
    }

    pub fn spatial(&self) -> &DimensionSchema {
        self.anchor(DimensionKind::GeocodedSpatial)
    }

    /// Stable content hash (hex SHA-256 of the canonical JSON form).
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("schema serializes");
        hex::encode(Sha256::digest(canonical))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigFormat {
    Json,
    Yaml,
}

impl ConfigFormat {
    pub fn from_path(path: &Path) -> Result<Self, SchemaError> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_lowercase)
            .as_deref()
        {
            Some("json") => Ok(ConfigFormat::Json),
            Some("yaml" | "yml") => Ok(ConfigFormat::Yaml),
            other => Err(SchemaError::UnsupportedFormat(other.unwrap_or("<none>").to_string())),
        }
    }
}

pub fn parse_schema(config_text: &str, format: ConfigFormat) -> Result<SchemaSet, SchemaError> {
    let raw: SchemaSet = match format {
        ConfigFormat::Json => serde_json::from_str(config_text).map_err(|e| SchemaError::Syntax(e.to_string()))?,
        ConfigFormat::Yaml => serde_yaml::from_str(config_text).map_err(|e| SchemaError::Syntax(e.to_string()))?,
    };
    SchemaSet::new(raw.version, raw.dimensions)
}

pub fn load_schema(path: &Path) -> Result<SchemaSet, SchemaError> {
    let format = ConfigFormat::from_path(path)?;
    let text = std::fs::read_to_string(path).map_err(|source| SchemaError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_schema(&text, format)
}

pub fn serialize_schema(schema: &SchemaSet, format: ConfigFormat) -> String {
    match format {
        ConfigFormat::Json => serde_json::to_string_pretty(schema).expect("schema serializes"),
        ConfigFormat::Yaml => serde_yaml::to_string(schema).expect("schema serializes"),
    }
}

/// The two universal anchors, used when no schema file is supplied.
pub fn default_schema() -> SchemaSet {
    let mut temporal = DimensionSchema::new("temporal", DimensionKind::NormalizedTemporal);
    temporal.description = "Dates and times mentioned in the text".into();
    let mut spatial = DimensionSchema::new("spatial", DimensionKind::GeocodedSpatial);
    spatial.description = "Named places mentioned in the text".into();
    spatial.hierarchy = Some(vec!["country".into(), "admin".into(), "locality".into()]);
    SchemaSet::new("1", vec![temporal, spatial]).expect("default schema is valid")
}

/// Prompt fragment describing every dimension and its output contract.
pub fn render_schema_instructions(schema: &SchemaSet) -> String {
    let mut out = String::from("Extraction dimensions:\n");
    for (i, dim) in schema.dimensions.iter().enumerate() {
        let _ = write!(out, "{}. {} ({})", i + 1, dim.name, dim.kind.as_str());
        if !dim.description.is_empty() {
            let _ = write!(out, ": {}", dim.description);
        }
        out.push('\n');
        match dim.kind {
            DimensionKind::NormalizedTemporal => {
                out.push_str(
                    "   value: ISO 8601 string (YYYY, YYYY-MM, YYYY-MM-DD, YYYY-MM-DDTHH:MM, or start/end interval)\n",
                );
            }
            DimensionKind::GeocodedSpatial => {
                out.push_str("   value: place name as written; optional \"qualifier\": enclosing region or country\n");
                if let Some(levels) = &dim.hierarchy {
                    let _ = writeln!(out, "   hierarchy: {}", levels.join(" > "));
                }
            }
            DimensionKind::Categorical => {
                let labels = dim.vocabulary.as_deref().unwrap_or_default();
                let quoted: Vec<String> = labels.iter().map(|l| format!("\"{l}\"")).collect();
                let _ = writeln!(
                    out,
                    "   value: exactly one label, verbatim, from [{}]",
                    quoted.join(", ")
                );
            }
            DimensionKind::Structured => {
                let attrs = dim.attributes.as_deref().unwrap_or_default();
                let fields: Vec<String> = attrs
                    .iter()
                    .map(|a| {
                        let kind = match a.kind {
                            AttributeKind::Text => "text",
                            AttributeKind::Number => "number",
                            AttributeKind::Category => "category",
                        };
                        format!("\"{}\": {kind}", a.name)
                    })
                    .collect();
                let _ = writeln!(out, "   value: object {{{}}}", fields.join(", "));
            }
        }
    }
    out
}
