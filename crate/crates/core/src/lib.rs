pub mod agent;
pub mod chat;
pub mod cli;
pub mod curation;
pub mod geometry;
pub mod imaging;
pub mod metrics;
pub mod pipeline;
pub mod prompts;
pub mod reward;
pub mod toolkit;
