//! Runtime check of the stack transition laws.
//!
//! [`LawAuditor`] is a [`TraceSink`] that compares the stack before and after
//! every event:
//! - a push adds exactly one frame, with the call's query as objective and an
//!   empty history, and leaves the frames below untouched;
//! - a pop removes exactly the top frame and appends one `ChildReturned`
//!   entry carrying the returned value verbatim to the new top;
//! - a page operation keeps the frames and appends one `Acted` entry to the
//!   top frame (after the `Observed` entry added when the step began);
//! - retries, failures and the final stop change nothing.
//!
//! Together these imply histories are append-only.

use crate::observation::Observation;
use crate::policy::HistoryEntry;
use crate::stack::{FrameSnapshot, StackState};
use crate::trace::{EventOutcome, StepEvent, TraceSink};

#[derive(Debug, Default)]
pub struct LawAuditor {
    expected_before: Option<Vec<FrameSnapshot>>,
    violations: Vec<String>,
    events: usize,
    pushes: usize,
    pops: usize,
    max_depth_seen: usize,
}

impl LawAuditor {
    pub fn new() -> Self {
        Self::default()
    }

    /// Call right before [`StackState::step`] with the same observation.
    pub fn begin_step(&mut self, state: &StackState, obs: &Observation) {
        let mut frames = state.snapshot();
        if !state.is_terminated() {
            if let Some(top) = frames.last_mut() {
                top.history.push(HistoryEntry::observed(obs));
            }
        }
        self.expected_before = Some(frames);
    }

    pub fn violations(&self) -> &[String] {
        &self.violations
    }

    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn events(&self) -> usize {
        self.events
    }

    pub fn pushes(&self) -> usize {
        self.pushes
    }

    pub fn pops(&self) -> usize {
        self.pops
    }

    pub fn max_depth_seen(&self) -> usize {
        self.max_depth_seen
    }

    fn check(&mut self, event: &StepEvent, before: &[FrameSnapshot], after: &[FrameSnapshot], max_depth: usize) {
        let n = before.len();
        let mut fail = |msg: String| self.violations.push(format!("event {}: {msg}", self.events));
        if after.is_empty() || after.len() > max_depth {
            fail(format!("depth {} outside 1..={max_depth}", after.len()));
            return;
        }
        if event.depth != n {
            fail(format!("event reports depth {} but stack had {n} frames", event.depth));
        }
        match &event.outcome {
            EventOutcome::Push { name, query } => {
                if after.len() != n + 1 {
                    fail(format!("push changed depth from {n} to {}", after.len()));
                    return;
                }
                if after[..n] != *before {
                    fail("push modified frames below the new one".into());
                }
                let top = &after[n];
                if top.policy != *name || top.objective != *query || !top.history.is_empty() {
                    fail(format!("pushed frame is not a fresh `{name}` frame"));
                }
            }
            EventOutcome::Pop { name, value } => {
                if n < 2 || after.len() != n - 1 {
                    fail(format!("pop changed depth from {n} to {}", after.len()));
                    return;
                }
                if after[..n - 2] != before[..n - 2] {
                    fail("pop modified frames below the parent".into());
                }
                let child = &before[n - 1];
                if child.policy != *name {
                    fail(format!("popped `{}` but event names `{name}`", child.policy));
                }
                let mut expected = before[n - 2].clone();
                expected.history.push(HistoryEntry::ChildReturned {
                    name: child.policy.clone(),
                    query: child.objective.clone(),
                    value: value.clone(),
                });
                if after[n - 2] != expected {
                    fail("parent did not gain exactly one matching ChildReturned entry".into());
                }
            }
            EventOutcome::EnvAction { action, reason } => {
                if after.len() != n {
                    fail(format!("page operation changed depth from {n} to {}", after.len()));
                    return;
                }
                if after[..n - 1] != before[..n - 1] {
                    fail("page operation modified frames below the top".into());
                }
                let mut expected = before[n - 1].clone();
                expected.history.push(HistoryEntry::Acted {
                    reason: reason.clone(),
                    action: action.clone(),
                });
                if after[n - 1] != expected {
                    fail("top frame did not gain exactly one matching Acted entry".into());
                }
                if !action.is_page_operation() {
                    fail(format!("`{action}` reached the environment"));
                }
            }
            EventOutcome::Finished { .. } | EventOutcome::Retry { .. } | EventOutcome::Failed { .. } => {
                if after != before {
                    fail("stack changed on an event that must leave it alone".into());
                }
            }
        }
    }
}

impl TraceSink for LawAuditor {
    fn on_event(&mut self, event: &StepEvent, state: &StackState) {
        let after = state.snapshot();
        match self.expected_before.replace(after.clone()) {
            Some(before) => self.check(event, &before, &after, state.limits().max_depth),
            None => self
                .violations
                .push(format!("event {} arrived before begin_step", self.events)),
        }
        match event.outcome {
            EventOutcome::Push { .. } => self.pushes += 1,
            EventOutcome::Pop { .. } => self.pops += 1,
            _ => {}
        }
        self.max_depth_seen = self.max_depth_seen.max(after.len());
        self.events += 1;
    }
}
