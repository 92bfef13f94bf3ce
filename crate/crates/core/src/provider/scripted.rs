use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{CompletionRequest, CompletionResult, Provider, ProviderError, Usage};
use crate::observation::estimate_tokens;

/// Reply given whenever the prompt contains `contains` (and, if set, the
/// request targets `stream`). Rules are not consumed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternRule {
    pub contains: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream: Option<String>,
    pub reply: String,
}

/// Replies keyed by stream (policy name), consumed in call order. Requests
/// without a stream, or for a stream not in the script, draw from `default`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Script {
    #[serde(default)]
    pub streams: HashMap<String, Vec<String>>,
    #[serde(default)]
    pub default: Vec<String>,
    #[serde(default)]
    pub patterns: Vec<PatternRule>,
}

impl Script {
    pub fn push(&mut self, stream: &str, reply: impl Into<String>) {
        self.streams
            .entry(stream.to_string())
            .or_default()
            .push(reply.into());
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedCall {
    pub stream: Option<String>,
    pub prompt: String,
    pub reply: String,
}

#[derive(Debug)]
struct Cursor {
    streams: HashMap<String, VecDeque<String>>,
    default: VecDeque<String>,
    log: Vec<ScriptedCall>,
}

/// Deterministic provider replaying a [`Script`]. Access to the cursor is
/// serialized, so one instance can be shared between threads, though replies
/// are then handed out in arrival order.
#[derive(Debug)]
pub struct ScriptedProvider {
    patterns: Vec<PatternRule>,
    cursor: Mutex<Cursor>,
}

impl ScriptedProvider {
    pub fn new(script: Script) -> Self {
        ScriptedProvider {
            patterns: script.patterns,
            cursor: Mutex::new(Cursor {
                streams: script
                    .streams
                    .into_iter()
                    .map(|(k, v)| (k, v.into()))
                    .collect(),
                default: script.default.into(),
                log: Vec::new(),
            }),
        }
    }

    /// Replies handed out in order regardless of stream.
    pub fn sequence<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedProvider::new(Script {
            default: replies.into_iter().map(Into::into).collect(),
            ..Script::default()
        })
    }

    pub fn calls(&self) -> Vec<ScriptedCall> {
        self.cursor.lock().unwrap().log.clone()
    }

    pub fn call_count(&self) -> usize {
        self.cursor.lock().unwrap().log.len()
    }

    /// Replies not yet consumed, summed over all streams.
    pub fn remaining(&self) -> usize {
        let cursor = self.cursor.lock().unwrap();
        cursor.default.len() + cursor.streams.values().map(VecDeque::len).sum::<usize>()
    }
}

impl Provider for ScriptedProvider {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, ProviderError> {
        req.validate()?;
        let mut cursor = self.cursor.lock().unwrap();
        let matched = self.patterns.iter().find(|rule| {
            req.prompt.contains(&rule.contains)
                && rule
                    .stream
                    .as_ref()
                    .is_none_or(|s| req.stream.as_deref() == Some(s.as_str()))
        });
        let reply = match matched {
            Some(rule) => rule.reply.clone(),
            None => {
                let key = req.stream.clone().unwrap_or_default();
                let queue = match req.stream.as_ref() {
                    Some(s) if cursor.streams.contains_key(s) => cursor.streams.get_mut(s).unwrap(),
                    _ => &mut cursor.default,
                };
                queue
                    .pop_front()
                    .ok_or(ProviderError::ScriptExhausted(key))?
            }
        };
        cursor.log.push(ScriptedCall {
            stream: req.stream.clone(),
            prompt: req.prompt.clone(),
            reply: reply.clone(),
        });
        let usage = Usage {
            prompt_tokens: estimate_tokens(&req.prompt) as u64,
            completion_tokens: estimate_tokens(&reply) as u64,
        };
        Ok(CompletionResult {
            candidates: vec![reply],
            usage,
        })
    }
}
