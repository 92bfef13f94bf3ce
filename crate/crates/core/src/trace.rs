//! Step events emitted by the stack machine, and the clocks that timestamp them.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::provider::Usage;
use crate::stack::{FailureKind, StackState};

pub trait Clock: Send + Sync {
    fn now(&self) -> u64;
}

/// Milliseconds since the Unix epoch.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Counter starting at zero and advancing by one per reading. Makes traces
/// reproducible byte for byte.
#[derive(Debug, Default)]
pub struct LogicalClock {
    tick: AtomicU64,
}

impl LogicalClock {
    pub fn new() -> Self {
        LogicalClock::default()
    }
}

impl Clock for LogicalClock {
    fn now(&self) -> u64 {
        self.tick.fetch_add(1, Ordering::SeqCst)
    }
}

/// What a provider reply did to the stack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventOutcome {
    Push { name: String, query: String },
    Pop { name: String, value: String },
    EnvAction { action: Action, reason: String },
    Finished { answer: String },
    /// The reply could not be parsed and the same prompt is sent again.
    Retry { error: String },
    Failed { kind: FailureKind, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepEvent {
    pub ts: u64,
    /// Stack depth when the prompt was built.
    pub depth: usize,
    /// Policy that was prompted.
    pub policy: String,
    /// Estimated prompt size; 0 when no prompt could be built.
    pub prompt_tokens_estimate: usize,
    pub usage: Usage,
    /// Raw text of the selected candidate; empty when no call was made.
    pub response: String,
    pub outcome: EventOutcome,
}

/// Receives every event together with the state right after it was applied.
pub trait TraceSink {
    fn on_event(&mut self, event: &StepEvent, state: &StackState);
}

/// Discards events.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl TraceSink for NullSink {
    fn on_event(&mut self, _event: &StepEvent, _state: &StackState) {}
}

impl TraceSink for Vec<StepEvent> {
    fn on_event(&mut self, event: &StepEvent, _state: &StackState) {
        self.push(event.clone());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logical_clock_counts_up() {
        let c = LogicalClock::new();
        assert_eq!((c.now(), c.now(), c.now()), (0, 1, 2));
    }

    #[test]
    fn event_serializes_with_tagged_outcome() {
        let e = StepEvent {
            ts: 3,
            depth: 2,
            policy: "find_booking".into(),
            prompt_tokens_estimate: 120,
            usage: Usage {
                prompt_tokens: 120,
                completion_tokens: 5,
            },
            response: "ACTION: click [9]".into(),
            outcome: EventOutcome::EnvAction {
                action: Action::Click { id: 9 },
                reason: String::new(),
            },
        };
        let json = serde_json::to_value(&e).unwrap();
        assert_eq!(json["outcome"]["type"], "env_action");
        assert_eq!(json["outcome"]["action"], "click [9]");
        let back: StepEvent = serde_json::from_value(json).unwrap();
        assert_eq!(back, e);
    }
}
