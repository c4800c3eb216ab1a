//! Model access: prompt rendering, pluggable completion clients with an
//! audit trail, and extraction of structured agent output.

mod client;
mod extract;
mod prompts;

pub use client::{
    complete, complete_with_repair, AuditLog, Completion, HttpChatClient, Message, ModelClient,
    ModelConfig, ModelError, ModelExchange, Role, ScriptedClient, ScriptedReply, Transcript,
};
pub use extract::{extract_analysis_decision, extract_tagged_block, AnalysisDecision, ExtractError};
pub use prompts::{bindings, render_prompt, RenderError, TemplateId, PROMPT_VERSION};
