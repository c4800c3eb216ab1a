//! Bounded repository exploration that produces a setup/test report for
//! the Dockerfile and evaluation-script writers.

mod agent;
mod report;
mod sandbox;

pub use agent::{
    parse_tool_call, run_exploration, ExplorationOutcome, FocusScope, SkippedCall, ToolCall,
    SEED_HINTS,
};
pub use report::{report_from_evidence, RetrievalReport};
pub use sandbox::{DirEntryInfo, EntryKind, ExplorationState, ExploreError, TRUNCATION_SENTINEL};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplorationConfig {
    /// Model turns per exploration.
    pub max_rounds: usize,
    /// Bytes returned by one digest.
    pub digest_cap: usize,
    pub search_limit: usize,
    /// Upper bound on the rendered report.
    pub report_cap: usize,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        Self {
            max_rounds: 5,
            digest_cap: 64 * 1024,
            search_limit: 50,
            report_cap: 8 * 1024,
        }
    }
}
