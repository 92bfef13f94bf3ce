//! The stack of active policies and the interpreter that drives it.
//!
//! Each call to [`StackState::step`] handles one observation: the top policy is
//! prompted repeatedly, pushing callees and popping finished ones, until some
//! policy issues a page operation or the root policy stops.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::action::{parse_model_response, Action};
use crate::observation::{estimate_tokens, Observation};
use crate::policy::{build_prompt, HistoryEntry, PolicyError, PolicyFrame, PolicyLibrary, PromptOptions};
use crate::provider::{
    select_candidate, CompletionRequest, Provider, ProviderError, Usage, DEFAULT_CANDIDATES,
    DEFAULT_MAX_TOKENS, DEFAULT_TEMPERATURE,
};
use crate::trace::{Clock, EventOutcome, StepEvent, SystemClock, TraceSink};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Limits {
    pub max_depth: usize,
    /// Pushes plus pops allowed while handling a single observation.
    pub max_internal_transitions: usize,
    /// Page operations allowed over the whole episode.
    pub max_env_actions: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_depth: 8,
            max_internal_transitions: 8,
            max_env_actions: 30,
        }
    }
}

/// Sampling parameters sent with every completion request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub n_candidates: usize,
    pub max_tokens: usize,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            temperature: DEFAULT_TEMPERATURE,
            n_candidates: DEFAULT_CANDIDATES,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FailureKind {
    DepthExceeded,
    InternalTransitionBudgetExceeded,
    EnvActionBudgetExceeded,
    ScriptExhausted,
    ModelError,
    UnparseableResponse,
    BudgetImpossible,
    EnvironmentError,
    AlreadyTerminated,
}

impl FailureKind {
    /// Failures caused by the surrounding infrastructure rather than by the
    /// agent's behaviour.
    pub fn is_infrastructure(self) -> bool {
        matches!(
            self,
            FailureKind::ScriptExhausted | FailureKind::ModelError | FailureKind::EnvironmentError
        )
    }
}

impl std::fmt::Display for FailureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StepOutcome {
    /// A page operation for the environment. Never a policy call or `stop`.
    EnvAction { action: Action, reason: String },
    Finished { answer: String },
    Failed { kind: FailureKind, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Running,
    Finished(String),
    Failed(FailureKind),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StackError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("limits must all be at least 1")]
    InvalidLimits,
}

/// Plain copy of one frame, for inspection and comparison.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FrameSnapshot {
    pub policy: String,
    pub objective: String,
    pub history: Vec<HistoryEntry>,
}

/// Control state of one episode: the stack of active policy frames, bottom
/// first.
pub struct StackState {
    library: Arc<PolicyLibrary>,
    frames: Vec<PolicyFrame>,
    limits: Limits,
    env_actions_taken: usize,
    status: Status,
    usage: Usage,
    options: PromptOptions,
    sampling: Sampling,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for StackState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StackState")
            .field("frames", &self.snapshot())
            .field("limits", &self.limits)
            .field("env_actions_taken", &self.env_actions_taken)
            .field("status", &self.status)
            .field("usage", &self.usage)
            .finish()
    }
}

impl StackState {
    /// Starts an episode with only the root policy on the stack.
    pub fn new(
        library: Arc<PolicyLibrary>,
        root: &str,
        objective: impl Into<String>,
        limits: Limits,
    ) -> Result<Self, StackError> {
        if limits.max_depth == 0 || limits.max_internal_transitions == 0 || limits.max_env_actions == 0
        {
            return Err(StackError::InvalidLimits);
        }
        let spec = library.lookup(root)?.clone();
        Ok(StackState {
            frames: vec![PolicyFrame::new(spec, objective)],
            library,
            limits,
            env_actions_taken: 0,
            status: Status::Running,
            usage: Usage::default(),
            options: PromptOptions::default(),
            sampling: Sampling::default(),
            clock: Arc::new(SystemClock),
        })
    }

    pub fn with_options(mut self, options: PromptOptions) -> Self {
        self.options = options;
        self
    }

    pub fn with_sampling(mut self, sampling: Sampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn depth(&self) -> usize {
        self.frames.len()
    }

    pub fn frames(&self) -> &[PolicyFrame] {
        &self.frames
    }

    pub fn top(&self) -> &PolicyFrame {
        self.frames.last().expect("stack is never empty")
    }

    pub fn limits(&self) -> Limits {
        self.limits
    }

    pub fn env_actions_taken(&self) -> usize {
        self.env_actions_taken
    }

    pub fn status(&self) -> &Status {
        &self.status
    }

    pub fn is_terminated(&self) -> bool {
        self.status != Status::Running
    }

    /// Provider usage summed over every call made so far.
    pub fn usage(&self) -> Usage {
        self.usage
    }

    pub fn library(&self) -> &Arc<PolicyLibrary> {
        &self.library
    }

    pub fn snapshot(&self) -> Vec<FrameSnapshot> {
        self.frames
            .iter()
            .map(|f| FrameSnapshot {
                policy: f.name().to_string(),
                objective: f.objective().to_string(),
                history: f.history().to_vec(),
            })
            .collect()
    }

    fn top_mut(&mut self) -> &mut PolicyFrame {
        self.frames.last_mut().expect("stack is never empty")
    }

    fn emit(
        &self,
        sink: &mut dyn TraceSink,
        call: &CallInfo,
        response: &str,
        usage: Usage,
        outcome: EventOutcome,
    ) {
        let event = StepEvent {
            ts: self.clock.now(),
            depth: call.depth,
            policy: call.policy.clone(),
            prompt_tokens_estimate: call.prompt_tokens,
            usage,
            response: response.to_string(),
            outcome,
        };
        sink.on_event(&event, self);
    }

    fn fail(
        &mut self,
        sink: &mut dyn TraceSink,
        call: &CallInfo,
        response: &str,
        usage: Usage,
        kind: FailureKind,
        message: String,
    ) -> StepOutcome {
        self.status = Status::Failed(kind);
        self.emit(
            sink,
            call,
            response,
            usage,
            EventOutcome::Failed {
                kind,
                message: message.clone(),
            },
        );
        StepOutcome::Failed { kind, message }
    }

    /// Handles one observation. Returns once a page operation is chosen, the
    /// root policy stops, or a limit or error ends the episode.
    pub fn step(
        &mut self,
        obs: &Observation,
        provider: &dyn Provider,
        sink: &mut dyn TraceSink,
    ) -> StepOutcome {
        if self.is_terminated() {
            return StepOutcome::Failed {
                kind: FailureKind::AlreadyTerminated,
                message: "step called after the episode ended".into(),
            };
        }
        self.top_mut().append(HistoryEntry::observed(obs));
        let mut transitions = 0usize;
        let mut retried = false;
        loop {
            let mut call = CallInfo {
                depth: self.depth(),
                policy: self.top().name().to_string(),
                prompt_tokens: 0,
            };
            let prompt = match build_prompt(&self.library, self.top(), obs, self.options) {
                Ok(p) => p,
                Err(e) => {
                    return self.fail(sink, &call, "", Usage::default(), FailureKind::BudgetImpossible, e.to_string())
                }
            };
            call.prompt_tokens = estimate_tokens(&prompt);
            let request = CompletionRequest {
                prompt,
                temperature: self.sampling.temperature,
                n_candidates: self.sampling.n_candidates,
                max_tokens: self.sampling.max_tokens,
                stream: Some(call.policy.clone()),
            };
            let result = match provider.complete(&request) {
                Ok(r) => r,
                Err(e) => {
                    let kind = match e {
                        ProviderError::ScriptExhausted(_) => FailureKind::ScriptExhausted,
                        _ => FailureKind::ModelError,
                    };
                    return self.fail(sink, &call, "", Usage::default(), kind, e.to_string());
                }
            };
            self.usage += result.usage;
            let response = match select_candidate(&result) {
                Ok(r) => r.to_string(),
                Err(e) => {
                    return self.fail(sink, &call, "", result.usage, FailureKind::ModelError, e.to_string())
                }
            };
            let names = self.library.callable_names(self.top().spec());
            let parsed = match parse_model_response(&response, &names) {
                Ok(p) => p,
                Err(e) if !retried => {
                    retried = true;
                    self.emit(sink, &call, &response, result.usage, EventOutcome::Retry { error: e.to_string() });
                    continue;
                }
                Err(e) => {
                    return self.fail(
                        sink,
                        &call,
                        &response,
                        result.usage,
                        FailureKind::UnparseableResponse,
                        e.to_string(),
                    )
                }
            };
            retried = false;
            match parsed.action {
                Action::PolicyCall { name, query } => {
                    transitions += 1;
                    if transitions > self.limits.max_internal_transitions {
                        let msg = format!(
                            "more than {} pushes and pops for one observation",
                            self.limits.max_internal_transitions
                        );
                        return self.fail(sink, &call, &response, result.usage, FailureKind::InternalTransitionBudgetExceeded, msg);
                    }
                    if self.depth() >= self.limits.max_depth {
                        let msg = format!("calling `{name}` would exceed depth {}", self.limits.max_depth);
                        return self.fail(sink, &call, &response, result.usage, FailureKind::DepthExceeded, msg);
                    }
                    let spec = match self.library.lookup(&name) {
                        Ok(s) => s.clone(),
                        Err(e) => {
                            return self.fail(sink, &call, &response, result.usage, FailureKind::UnparseableResponse, e.to_string())
                        }
                    };
                    self.frames.push(PolicyFrame::new(spec, query.clone()));
                    self.emit(sink, &call, &response, result.usage, EventOutcome::Push { name, query });
                }
                Action::Stop { answer } if self.depth() > 1 => {
                    transitions += 1;
                    if transitions > self.limits.max_internal_transitions {
                        let msg = format!(
                            "more than {} pushes and pops for one observation",
                            self.limits.max_internal_transitions
                        );
                        return self.fail(sink, &call, &response, result.usage, FailureKind::InternalTransitionBudgetExceeded, msg);
                    }
                    let child = self.frames.pop().expect("depth > 1");
                    self.top_mut().append(HistoryEntry::ChildReturned {
                        name: child.name().to_string(),
                        query: child.objective().to_string(),
                        value: answer.clone(),
                    });
                    self.emit(
                        sink,
                        &call,
                        &response,
                        result.usage,
                        EventOutcome::Pop {
                            name: child.name().to_string(),
                            value: answer,
                        },
                    );
                }
                Action::Stop { answer } => {
                    self.status = Status::Finished(answer.clone());
                    self.emit(sink, &call, &response, result.usage, EventOutcome::Finished { answer: answer.clone() });
                    return StepOutcome::Finished { answer };
                }
                action => {
                    if self.env_actions_taken >= self.limits.max_env_actions {
                        let msg = format!("episode already used {} page operations", self.env_actions_taken);
                        return self.fail(sink, &call, &response, result.usage, FailureKind::EnvActionBudgetExceeded, msg);
                    }
                    self.env_actions_taken += 1;
                    self.top_mut().append(HistoryEntry::Acted {
                        reason: parsed.reason.clone(),
                        action: action.clone(),
                    });
                    self.emit(
                        sink,
                        &call,
                        &response,
                        result.usage,
                        EventOutcome::EnvAction {
                            action: action.clone(),
                            reason: parsed.reason.clone(),
                        },
                    );
                    return StepOutcome::EnvAction {
                        action,
                        reason: parsed.reason,
                    };
                }
            }
        }
    }

    /// Ends the episode from outside, e.g. when the environment fails.
    pub fn abort(&mut self, kind: FailureKind) {
        if !self.is_terminated() {
            self.status = Status::Failed(kind);
        }
    }
}

struct CallInfo {
    depth: usize,
    policy: String,
    prompt_tokens: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::WebElement;
    use crate::policy::PolicySpec;
    use crate::provider::{Script, ScriptedProvider};
    use crate::trace::{LogicalClock, NullSink};

    fn spec(name: &str, callable: &[&str]) -> PolicySpec {
        PolicySpec {
            name: name.into(),
            description: format!("Use {name}"),
            instruction: "Act on the page.".into(),
            examples: vec![],
            callable: callable.iter().map(|s| s.to_string()).collect(),
            prompt_budget: 4000,
        }
    }

    fn library() -> Arc<PolicyLibrary> {
        Arc::new(
            PolicyLibrary::from_specs([
                spec("root", &["find_booking", "root"]),
                spec("find_booking", &[]),
            ])
            .unwrap(),
        )
    }

    fn obs() -> Observation {
        Observation::new(
            "http://crm/?scenario=x",
            vec![
                WebElement::new(4, "input_text").attr("val", "booking-reference"),
                WebElement::new(9, "button").text("Search"),
            ],
        )
    }

    fn state() -> StackState {
        StackState::new(library(), "root", "Find booking ABC123", Limits::default())
            .unwrap()
            .with_clock(Arc::new(LogicalClock::new()))
    }

    fn scripted(pairs: &[(&str, &str)]) -> ScriptedProvider {
        let mut script = Script::default();
        for (stream, reply) in pairs {
            script.push(stream, *reply);
        }
        ScriptedProvider::new(script)
    }

    #[test]
    fn init_episode() {
        let s = state();
        assert_eq!(s.depth(), 1);
        assert!(s.top().history().is_empty());
        assert_eq!(s.top().objective(), "Find booking ABC123");
        assert_eq!(s.limits(), Limits::default());
        let err = StackState::new(library(), "ghost", "x", Limits::default()).unwrap_err();
        assert_eq!(err, StackError::Policy(PolicyError::UnknownPolicy("ghost".into())));
    }

    #[test]
    fn push_then_act() {
        let mut s = state();
        let p = scripted(&[
            ("root", "find_booking [ref ABC123]"),
            ("find_booking", "type [4] [ABC123] [1]"),
        ]);
        let out = s.step(&obs(), &p, &mut NullSink);
        assert_eq!(
            out,
            StepOutcome::EnvAction {
                action: Action::Type {
                    id: 4,
                    text: "ABC123".into(),
                    press_enter: true
                },
                reason: String::new()
            }
        );
        assert_eq!(s.depth(), 2);
        assert_eq!(s.top().objective(), "ref ABC123");
    }

    #[test]
    fn pop_then_act() {
        let mut s = state();
        let p = scripted(&[
            ("root", "find_booking [ref ABC123]"),
            ("find_booking", "stop [N/A]"),
            ("root", "click [9]"),
        ]);
        let out = s.step(&obs(), &p, &mut NullSink);
        assert_eq!(
            out,
            StepOutcome::EnvAction {
                action: Action::Click { id: 9 },
                reason: String::new()
            }
        );
        assert_eq!(s.depth(), 1);
        assert!(s.top().history().contains(&HistoryEntry::ChildReturned {
            name: "find_booking".into(),
            query: "ref ABC123".into(),
            value: "N/A".into(),
        }));
    }

    #[test]
    fn root_stop_finishes() {
        let mut s = state();
        let p = scripted(&[("root", "REASON: done\nACTION: stop [Closed]")]);
        assert_eq!(
            s.step(&obs(), &p, &mut NullSink),
            StepOutcome::Finished {
                answer: "Closed".into()
            }
        );
        assert!(matches!(
            s.step(&obs(), &p, &mut NullSink),
            StepOutcome::Failed {
                kind: FailureKind::AlreadyTerminated,
                ..
            }
        ));
    }

    #[test]
    fn self_recursion_hits_depth_limit() {
        let limits = Limits {
            max_depth: 3,
            max_internal_transitions: 100,
            max_env_actions: 30,
        };
        let mut s = StackState::new(library(), "root", "loop", limits).unwrap();
        let p = ScriptedProvider::new(Script {
            patterns: vec![crate::provider::PatternRule {
                contains: "".into(),
                stream: None,
                reply: "root [again]".into(),
            }],
            ..Script::default()
        });
        let out = s.step(&obs(), &p, &mut NullSink);
        assert!(matches!(out, StepOutcome::Failed { kind: FailureKind::DepthExceeded, .. }));
        assert_eq!(s.depth(), 3);
    }

    #[test]
    fn internal_transition_budget() {
        let limits = Limits {
            max_depth: 100,
            max_internal_transitions: 2,
            max_env_actions: 30,
        };
        let mut s = StackState::new(library(), "root", "loop", limits).unwrap();
        let p = ScriptedProvider::sequence(["root [a]", "root [b]", "root [c]"]);
        let out = s.step(&obs(), &p, &mut NullSink);
        assert!(matches!(
            out,
            StepOutcome::Failed {
                kind: FailureKind::InternalTransitionBudgetExceeded,
                ..
            }
        ));
    }

    #[test]
    fn env_action_budget() {
        let limits = Limits {
            max_env_actions: 2,
            ..Limits::default()
        };
        let mut s = StackState::new(library(), "root", "x", limits).unwrap();
        let p = ScriptedProvider::sequence(["click [9]"; 3]);
        assert!(matches!(s.step(&obs(), &p, &mut NullSink), StepOutcome::EnvAction { .. }));
        assert!(matches!(s.step(&obs(), &p, &mut NullSink), StepOutcome::EnvAction { .. }));
        assert!(matches!(
            s.step(&obs(), &p, &mut NullSink),
            StepOutcome::Failed {
                kind: FailureKind::EnvActionBudgetExceeded,
                ..
            }
        ));
        assert_eq!(s.env_actions_taken(), 2);
    }

    #[test]
    fn unparseable_is_retried_once() {
        let mut s = state();
        let p = ScriptedProvider::sequence(["ACTION: fly [3]", "click [9]"]);
        let mut events: Vec<StepEvent> = Vec::new();
        let out = s.step(&obs(), &p, &mut events);
        assert!(matches!(out, StepOutcome::EnvAction { .. }));
        assert!(matches!(events[0].outcome, EventOutcome::Retry { .. }));

        let mut s = state();
        let p = ScriptedProvider::sequence(["fly [3]", "walk [2]"]);
        assert!(matches!(
            s.step(&obs(), &p, &mut NullSink),
            StepOutcome::Failed {
                kind: FailureKind::UnparseableResponse,
                ..
            }
        ));
    }

    #[test]
    fn callee_outside_callable_set_is_unparseable() {
        // find_booking may not call root
        let mut s = state();
        let p = scripted(&[
            ("root", "find_booking [x]"),
            ("find_booking", "root [y]"),
            ("find_booking", "root [y]"),
        ]);
        assert!(matches!(
            s.step(&obs(), &p, &mut NullSink),
            StepOutcome::Failed {
                kind: FailureKind::UnparseableResponse,
                ..
            }
        ));
    }

    #[test]
    fn provider_errors_map_to_failure_kinds() {
        let mut s = state();
        let p = ScriptedProvider::new(Script::default());
        assert!(matches!(
            s.step(&obs(), &p, &mut NullSink),
            StepOutcome::Failed {
                kind: FailureKind::ScriptExhausted,
                ..
            }
        ));
        assert_eq!(s.status(), &Status::Failed(FailureKind::ScriptExhausted));
    }

    #[test]
    fn usage_accumulates() {
        let mut s = state();
        let p = scripted(&[("root", "find_booking [x]"), ("find_booking", "click [9]")]);
        let mut events: Vec<StepEvent> = Vec::new();
        s.step(&obs(), &p, &mut events);
        let sum = events.iter().fold(Usage::default(), |mut acc, e| {
            acc += e.usage;
            acc
        });
        assert_eq!(s.usage(), sum);
        assert!(sum.prompt_tokens > 0);
        assert_eq!(events.iter().map(|e| e.ts).collect::<Vec<_>>(), vec![0, 1]);
    }
}
