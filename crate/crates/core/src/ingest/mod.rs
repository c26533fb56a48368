//! Document ingestion: raw text, local files and URLs.

mod chunk;
pub mod markup;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::debug;

use crate::net::{self, RateLimiter};

pub use chunk::{
    chunk_document, chunk_document_with, sliding_window_count, BoundaryScorer, Chunk, ChunkError, ChunkParams,
    ChunkStrategy,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("fetch failed for {url}: {reason}")]
    Fetch { url: String, reason: String },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("document is empty: {0}")]
    EmptyDocument(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    RawText,
    File,
    Url,
}

impl Origin {
    fn as_str(self) -> &'static str {
        match self {
            Origin::RawText => "raw_text",
            Origin::File => "file",
            Origin::Url => "url",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDocument {
    pub doc_id: String,
    pub origin: Origin,
    pub locator: String,
    pub title: Option<String>,
    pub pub_date: Option<NaiveDate>,
    pub source_location: Option<String>,
    pub body: String,
}

impl SourceDocument {
    /// Builds a document with a content-derived id and no metadata.
    pub fn from_parts(origin: Origin, locator: &str, body: String) -> Self {
        let doc_id = content_id(origin, locator, &body);
        Self {
            doc_id,
            origin,
            locator: locator.to_string(),
            title: None,
            pub_date: None,
            source_location: None,
            body,
        }
    }

    fn apply_meta(&mut self, meta: &BTreeMap<String, String>) {
        let get = |keys: &[&str]| {
            keys.iter()
                .find_map(|k| meta.get(*k))
                .filter(|v| !v.trim().is_empty())
                .cloned()
        };
        if let Some(id) = get(&["id", "doc_id", "doc-id"]) {
            self.doc_id = id;
        }
        self.title = get(&["title", "og:title"]);
        self.pub_date = get(&["date", "pub_date", "published", "article:published_time", "dc.date"])
            .and_then(|d| NaiveDate::parse_from_str(d.get(..10).unwrap_or(&d), "%Y-%m-%d").ok());
        self.source_location = get(&["location", "source_location", "geo.placename"]);
    }
}

fn content_id(origin: Origin, locator: &str, body: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(origin.as_str());
    hasher.update([0]);
    hasher.update(locator);
    hasher.update([0]);
    hasher.update(body);
    format!("doc-{}", &hex::encode(hasher.finalize())[..12])
}

/// Converts raw bytes of a format without built-in support (PDF, DOCX, ...)
/// into plain text.
pub trait DocumentConverter: Send + Sync {
    fn convert(&self, bytes: &[u8]) -> Result<String, IngestError>;
}

#[derive(Debug, Clone, Copy)]
pub struct FetchPolicy {
    pub min_interval: Duration,
    pub timeout: Duration,
}

impl Default for FetchPolicy {
    fn default() -> Self {
        Self {
            min_interval: Duration::from_secs(1),
            timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DocumentSpec {
    RawText(String),
    File(std::path::PathBuf),
    Url(String),
}

impl DocumentSpec {
    /// Interprets a CLI `--input` value: `http(s)://` is a URL, anything else a path.
    pub fn from_input(input: &str) -> Self {
        if input.starts_with("http://") || input.starts_with("https://") {
            DocumentSpec::Url(input.to_string())
        } else {
            DocumentSpec::File(input.into())
        }
    }
}

#[derive(Clone)]
pub struct Loader {
    policy: FetchPolicy,
    limiter: Arc<RateLimiter>,
    converters: BTreeMap<String, Arc<dyn DocumentConverter>>,
}

impl Default for Loader {
    fn default() -> Self {
        Self::new(FetchPolicy::default())
    }
}

impl Loader {
    pub fn new(policy: FetchPolicy) -> Self {
        Self {
            policy,
            limiter: Arc::new(RateLimiter::new(policy.min_interval)),
            converters: BTreeMap::new(),
        }
    }

    /// Registers a converter for a file extension (lower-case, no dot).
    pub fn with_converter(mut self, extension: &str, converter: Arc<dyn DocumentConverter>) -> Self {
        self.converters.insert(extension.to_ascii_lowercase(), converter);
        self
    }

    pub fn load(&self, spec: &DocumentSpec) -> Result<SourceDocument, IngestError> {
        match spec {
            DocumentSpec::RawText(text) => load_text(Origin::RawText, "-", text.clone(), Format::Text),
            DocumentSpec::File(path) => self.load_file(path),
            DocumentSpec::Url(url) => self.load_url(url),
        }
    }

    fn load_file(&self, path: &Path) -> Result<SourceDocument, IngestError> {
        let locator = path.display().to_string();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("")
            .to_ascii_lowercase();
        let read = || {
            std::fs::read(path).map_err(|source| IngestError::Io {
                path: locator.clone(),
                source,
            })
        };
        if let Some(converter) = self.converters.get(&ext) {
            let text = converter.convert(&read()?)?;
            return load_text(Origin::File, &locator, text, Format::Text);
        }
        let format = Format::from_extension(&ext).ok_or_else(|| IngestError::UnsupportedFormat(ext.clone()))?;
        let text = String::from_utf8_lossy(&read()?).into_owned();
        load_text(Origin::File, &locator, text, format)
    }

    fn load_url(&self, url: &str) -> Result<SourceDocument, IngestError> {
        let fail = |reason: String| IngestError::Fetch {
            url: url.to_string(),
            reason,
        };
        self.limiter.wait(&net::host_of(url));
        debug!(url, "fetching document");
        let mut response = net::agent(self.policy.timeout)
            .get(url)
            .call()
            .map_err(|e| fail(e.to_string()))?;
        if !response.status().is_success() {
            return Err(fail(format!("HTTP {}", response.status())));
        }
        let content_type = response
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .unwrap_or("")
            .to_ascii_lowercase();
        let text = response.body_mut().read_to_string().map_err(|e| fail(e.to_string()))?;
        let format = if content_type.contains("html") {
            Format::Html
        } else if content_type.contains("markdown") {
            Format::Markdown
        } else {
            Format::Text
        };
        load_text(Origin::Url, url, text, format)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Text,
    Html,
    Markdown,
}

impl Format {
    fn from_extension(ext: &str) -> Option<Self> {
        match ext {
            "txt" => Some(Format::Text),
            "html" | "htm" => Some(Format::Html),
            "md" | "markdown" => Some(Format::Markdown),
            _ => None,
        }
    }
}

fn load_text(origin: Origin, locator: &str, text: String, format: Format) -> Result<SourceDocument, IngestError> {
    let (body, meta) = match format {
        Format::Text if origin == Origin::RawText => (text, BTreeMap::new()),
        Format::Text => (text.replace("\r\n", "\n"), BTreeMap::new()),
        Format::Html => {
            let s = markup::strip_html(&text);
            (s.body, s.meta)
        }
        Format::Markdown => {
            let s = markup::strip_markdown(&text.replace("\r\n", "\n"));
            (s.body, s.meta)
        }
    };
    if body.trim().is_empty() {
        return Err(IngestError::EmptyDocument(locator.to_string()));
    }
    let mut doc = SourceDocument::from_parts(origin, locator, body);
    doc.apply_meta(&meta);
    Ok(doc)
}

/// Loads a document from one of the three supported origins.
pub fn load_document(spec: &DocumentSpec, policy: FetchPolicy) -> Result<SourceDocument, IngestError> {
    Loader::new(policy).load(spec)
}

/// Parses in-memory content as if it were a file with the given name.
pub fn load_named_text(name: &str, text: &str) -> Result<SourceDocument, IngestError> {
    let ext = Path::new(name)
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    let format = Format::from_extension(&ext).ok_or_else(|| IngestError::UnsupportedFormat(ext.clone()))?;
    load_text(Origin::File, name, text.to_string(), format)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_text_is_identity() {
        let doc = load_document(
            &DocumentSpec::RawText("Outbreak in Perth on 5 May.".into()),
            FetchPolicy::default(),
        )
        .unwrap();
        assert_eq!(doc.body, "Outbreak in Perth on 5 May.");
        assert_eq!(doc.origin, Origin::RawText);
    }

    #[test]
    fn html_file_is_stripped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.html");
        std::fs::write(&path, "<p>A</p><script>x()</script><p>B</p>").unwrap();
        let doc = Loader::default().load(&DocumentSpec::File(path)).unwrap();
        assert_eq!(doc.body, "A\n\nB");
    }

    #[test]
    fn empty_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.txt");
        std::fs::write(&path, "  \n").unwrap();
        assert!(matches!(
            Loader::default().load(&DocumentSpec::File(path)),
            Err(IngestError::EmptyDocument(_))
        ));
    }

    #[test]
    fn unsupported_extension() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pdf");
        std::fs::write(&path, "%PDF").unwrap();
        assert!(matches!(
            Loader::default().load(&DocumentSpec::File(path.clone())),
            Err(IngestError::UnsupportedFormat(e)) if e == "pdf"
        ));

        struct Fake;
        impl DocumentConverter for Fake {
            fn convert(&self, _bytes: &[u8]) -> Result<String, IngestError> {
                Ok("converted".into())
            }
        }
        let doc = Loader::default()
            .with_converter("pdf", Arc::new(Fake))
            .load(&DocumentSpec::File(path))
            .unwrap();
        assert_eq!(doc.body, "converted");
    }

    #[test]
    fn doc_id_is_deterministic() {
        let a = SourceDocument::from_parts(Origin::File, "x.txt", "body".into());
        let b = SourceDocument::from_parts(Origin::File, "x.txt", "body".into());
        let c = SourceDocument::from_parts(Origin::File, "x.txt", "other".into());
        assert_eq!(a.doc_id, b.doc_id);
        assert_ne!(a.doc_id, c.doc_id);
    }

    #[test]
    fn markdown_metadata() {
        let doc = load_named_text(
            "alert.md",
            "---\nid: doc01\ntitle: Measles alert\ndate: 2025-05-03\nlocation: Perth\n---\nBody text.\n",
        )
        .unwrap();
        assert_eq!(doc.doc_id, "doc01");
        assert_eq!(doc.title.as_deref(), Some("Measles alert"));
        assert_eq!(doc.pub_date, NaiveDate::from_ymd_opt(2025, 5, 3));
        assert_eq!(doc.source_location.as_deref(), Some("Perth"));
        assert_eq!(doc.body, "Body text.");
    }

    #[test]
    fn url_input_detection() {
        assert_eq!(
            DocumentSpec::from_input("https://example.org/a"),
            DocumentSpec::Url("https://example.org/a".into())
        );
        assert_eq!(DocumentSpec::from_input("a.txt"), DocumentSpec::File("a.txt".into()));
    }
}
