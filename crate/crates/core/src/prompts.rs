//! Versioned prompt templates. The files under `prompts/` are kept verbatim;
//! the text sent to a model omits the file's final line terminator.

const AGENT_SYSTEM_V1: &str = include_str!("../prompts/agent_system.v1.txt");
const GENERATOR_SYSTEM_V1: &str = include_str!("../prompts/generator_system.v1.txt");
const RERANKER_INSTRUCTION_V1: &str = include_str!("../prompts/reranker_instruction.v1.txt");

pub const TEMPLATE_VERSION: &str = "v1";

fn strip_terminator(s: &'static str) -> &'static str {
    s.strip_suffix('\n').unwrap_or(s)
}

/// System prompt for the evidence-extraction agent.
pub fn agent_system() -> &'static str {
    strip_terminator(AGENT_SYSTEM_V1)
}

/// System prompt for the answer generator.
pub fn generator_system() -> &'static str {
    strip_terminator(GENERATOR_SYSTEM_V1)
}

/// Task instruction handed to the page reranker.
pub fn reranker_instruction() -> &'static str {
    strip_terminator(RERANKER_INSTRUCTION_V1)
}
