pub mod analytics;
pub mod demo;
pub mod eval;
pub mod extract;
pub mod geo;
pub mod ingest;
pub mod llm;
pub mod net;
pub mod schema;
pub mod store;
pub mod temporal;
