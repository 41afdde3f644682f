//! Chat-model verifier for hard-negative candidates.

use std::sync::Arc;

use crate::agent::Query;
use crate::chat::{ChatError, ChatMessage, ContentPart, HttpChatClient, ModelEndpoint, Role};
use crate::curation::{CurationError, NegativeVerifier, PageRef};
use crate::imaging::fit_within;

use super::PageStore;

pub const JUDGE_INSTRUCTION: &str = "You are given a document page image and a question. Answer YES if the page contains information that helps answer the question, otherwise answer NO. Reply with a single word.";

/// Reads a YES/NO verdict. `Some(true)` means the page holds no evidence.
pub fn parse_verdict(text: &str) -> Option<bool> {
    let word: String = text
        .trim()
        .chars()
        .take_while(|c| c.is_ascii_alphabetic())
        .collect::<String>()
        .to_ascii_uppercase();
    match word.as_str() {
        "NO" => Some(true),
        "YES" => Some(false),
        _ => None,
    }
}

pub struct JudgeVerifier {
    client: HttpChatClient,
    store: Arc<dyn PageStore>,
    max_dim: u32,
}

impl JudgeVerifier {
    pub fn new(endpoint: ModelEndpoint, store: Arc<dyn PageStore>, max_dim: u32) -> Result<Self, CurationError> {
        let client = HttpChatClient::new(endpoint).map_err(|e| CurationError::VerifierUnavailable(e.to_string()))?;
        Ok(Self { client, store, max_dim })
    }
}

impl NegativeVerifier for JudgeVerifier {
    fn verify(&self, query: &Query, page: &PageRef) -> Result<bool, CurationError> {
        let image = self
            .store
            .load(page)
            .map_err(|e| CurationError::VerifierUnavailable(e.to_string()))?;
        let messages = vec![
            ChatMessage { role: Role::System, parts: vec![ContentPart::Text(JUDGE_INSTRUCTION.into())] },
            ChatMessage {
                role: Role::User,
                parts: vec![
                    ContentPart::Image(Arc::new(fit_within(&image, self.max_dim))),
                    ContentPart::Text(format!("Question: {}", query.text)),
                ],
            },
        ];
        let reply = self.client.complete(&messages, 0.0).map_err(|e| match e {
            ChatError::Unavailable(m) | ChatError::Protocol(m) => CurationError::VerifierUnavailable(m),
        })?;
        parse_verdict(&reply.text)
            .ok_or_else(|| CurationError::VerifierUnavailable(format!("unreadable verdict {:?}", reply.text)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdicts() {
        assert_eq!(parse_verdict("NO"), Some(true));
        assert_eq!(parse_verdict(" yes."), Some(false));
        assert_eq!(parse_verdict("No, the page is unrelated"), Some(true));
        assert_eq!(parse_verdict("maybe"), None);
    }
}
