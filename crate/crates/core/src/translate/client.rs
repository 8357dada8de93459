use std::time::Duration;

use serde::Deserialize;
use serde_json::json;
use thiserror::Error;

use super::response::{parse_translation_response, ParseError};
use super::{build_prompt, SentencePair, TargetLang, TranslateError};
use crate::corpus::Article;
use crate::retry::RetryPolicy;

#[derive(Debug, Clone, Error)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {0}")]
    Status(u16),
    #[error("malformed completion: {0}")]
    Malformed(String),
}

/// A chat-completion backend: system prompt plus one user message in,
/// assistant message content out.
pub trait ChatClient: Send + Sync {
    fn complete(&self, system: &str, user: &str) -> Result<String, ClientError>;
}

/// OpenAI-compatible `/chat/completions` client. Temperature 0, JSON
/// response format.
pub struct HttpChatClient {
    url: String,
    key: Option<String>,
    model: String,
    http: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

impl HttpChatClient {
    pub fn new(url: impl Into<String>, key: Option<String>, model: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            key,
            model: model.into(),
            http: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(300))
                .build()
                .expect("http client"),
        }
    }

    /// `HISTKIT_LLM_URL` (full endpoint), `HISTKIT_LLM_KEY`, and optionally
    /// `HISTKIT_LLM_MODEL` (default `gpt-4o`).
    pub fn from_env() -> Result<Self, TranslateError> {
        let url = std::env::var("HISTKIT_LLM_URL")
            .map_err(|_| TranslateError::Config("HISTKIT_LLM_URL is not set".into()))?;
        let model = std::env::var("HISTKIT_LLM_MODEL").unwrap_or_else(|_| "gpt-4o".into());
        Ok(Self::new(url, std::env::var("HISTKIT_LLM_KEY").ok(), model))
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, system: &str, user: &str) -> Result<String, ClientError> {
        let body = json!({
            "model": self.model,
            "temperature": 0,
            "response_format": {"type": "json_object"},
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        let mut req = self.http.post(&self.url).json(&body);
        if let Some(key) = &self.key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(ClientError::Status(resp.status().as_u16()));
        }
        let completion: Completion = resp
            .json()
            .map_err(|e| ClientError::Malformed(e.to_string()))?;
        completion
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ClientError::Malformed("no message content".into()))
    }
}

#[derive(Debug, Clone, Error)]
pub enum AttemptError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

#[derive(Debug, Clone)]
pub struct Translation {
    pub raw: String,
    pub pairs: Vec<SentencePair>,
    pub attempts: u32,
}

/// Sends the system prompt and the space-joined article text, retrying on
/// transport errors, non-2xx statuses and unparseable bodies.
pub fn request_translation(
    article: &Article,
    target_lang: TargetLang,
    client: &dyn ChatClient,
    retry: &RetryPolicy,
) -> Result<Translation, TranslateError> {
    let system = build_prompt(target_lang.code())?;
    let user = article.text();
    let mut attempts = 0;
    let outcome = retry.run(
        |attempt| {
            attempts = attempt + 1;
            let raw = client.complete(&system, &user)?;
            let pairs = parse_translation_response(&raw, target_lang, &article.id)?;
            Ok::<_, AttemptError>((raw, pairs))
        },
        |_| true,
    );
    match outcome {
        Ok((raw, pairs)) => Ok(Translation {
            raw,
            pairs,
            attempts,
        }),
        Err(last) => Err(TranslateError::Exhausted { attempts, last }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mockhttp::{MockResponse, MockServer};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn article() -> Article {
        Article {
            id: "lw-1890-01".into(),
            newspaper: "Luxemburger Wort".into(),
            year: 1890,
            language: "lb".into(),
            sentences: vec!["Moien alleguer.".into(), "Et reent.".into()],
            topic_vector: None,
        }
    }

    const VALID: &str = r#"{"translation":[{"lb":"Moien alleguer.","de":"Hallo zusammen."},{"lb":"Et reent.","de":"Es regnet."}]}"#;

    #[test]
    fn valid_response_parsed_first_try() {
        let server = MockServer::start(|_| MockResponse::chat(VALID));
        let client = HttpChatClient::new(server.url("/v1/chat/completions"), Some("sk".into()), "gpt-4o");
        let t = request_translation(&article(), TargetLang::De, &client, &RetryPolicy::immediate(3)).unwrap();
        assert_eq!((t.pairs.len(), t.attempts), (2, 1));
        assert_eq!(server.requests(), 1);

        let req = server.last_request().unwrap().json().unwrap();
        assert_eq!(req["temperature"], 0);
        assert_eq!(req["messages"][0]["role"], "system");
        assert_eq!(req["messages"][0]["content"], build_prompt("de").unwrap());
        assert_eq!(req["messages"][1]["content"], "Moien alleguer. Et reent.");
    }

    #[test]
    fn garbage_twice_then_valid() {
        let n = Arc::new(AtomicUsize::new(0));
        let server = {
            let n = n.clone();
            MockServer::start(move |_| {
                if n.fetch_add(1, Ordering::SeqCst) < 2 {
                    MockResponse::chat("Sorry, I cannot help with that.")
                } else {
                    MockResponse::chat(VALID)
                }
            })
        };
        let client = HttpChatClient::new(server.url("/c"), None, "m");
        let t = request_translation(&article(), TargetLang::De, &client, &RetryPolicy::immediate(3)).unwrap();
        assert_eq!(t.attempts, 3);
        assert_eq!(server.requests(), 3);
    }

    #[test]
    fn always_500_exhausts_retries() {
        let server = MockServer::start(|_| MockResponse::text(500, "down"));
        let client = HttpChatClient::new(server.url("/c"), None, "m");
        let err = request_translation(&article(), TargetLang::De, &client, &RetryPolicy::immediate(2)).unwrap_err();
        match err {
            TranslateError::Exhausted { attempts, last } => {
                assert_eq!(attempts, 3);
                assert!(matches!(last, AttemptError::Client(ClientError::Status(500))));
            }
            e => panic!("{e}"),
        }
        assert_eq!(server.requests(), 3);
    }

    #[test]
    fn connection_refused_is_a_transport_error() {
        let url = {
            let server = MockServer::start(|_| MockResponse::text(200, ""));
            server.url("/c")
        };
        let client = HttpChatClient::new(url, None, "m");
        let err = request_translation(&article(), TargetLang::Fr, &client, &RetryPolicy::immediate(0)).unwrap_err();
        assert!(matches!(
            err,
            TranslateError::Exhausted { attempts: 1, last: AttemptError::Client(ClientError::Transport(_)) }
        ));
    }
}
