pub mod fixtures;
pub mod fsutil;
pub mod ingest;
pub mod par;
pub mod modelio;
pub mod explorer;
pub mod synthesis;
pub mod harness;
pub mod orchestrator;
pub mod fleet;
pub mod curation;
