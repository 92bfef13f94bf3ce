//! One agent episode: the stack machine alternating with the environment,
//! recorded as a line-delimited trace.
//!
//! Trace records, one JSON object per line, tagged by `record`:
//! - `episode_start`: task description, agent variant, root policy, objective, limits.
//! - `model_call`: one provider reply and what it did to the stack.
//! - `env_action`: one page operation sent to the environment.
//! - `episode_end`: the metrics of the episode.

use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use webstack_core::action::Action;
use webstack_core::env::Environment;
use webstack_core::policy::{PolicyLibrary, PromptOptions};
use webstack_core::provider::Provider;
use webstack_core::stack::{FailureKind, Limits, Sampling, StackError, StackState, StepOutcome};
use webstack_core::trace::{Clock, EventOutcome, LogicalClock, StepEvent, TraceSink};

/// What an episode is about. `scenario` holds the environment's own task
/// document when it has one, so the episode can be replayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInfo {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub agent: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum TraceRecord {
    EpisodeStart {
        task: TaskInfo,
        root: String,
        objective: String,
        limits: Limits,
    },
    ModelCall {
        ts: u64,
        depth: usize,
        policy: String,
        prompt_tokens_estimate: usize,
        prompt_tokens: u64,
        completion_tokens: u64,
        response: String,
        outcome: EventOutcome,
    },
    EnvAction {
        action: Action,
        url: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
        /// The environment itself failed and the episode stopped.
        #[serde(default)]
        fatal: bool,
    },
    EpisodeEnd {
        #[serde(flatten)]
        metrics: EpisodeMetrics,
        subgoals_hit: Vec<String>,
        max_depth: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        answer: Option<String>,
    },
}

/// The numbers an episode is judged by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub suc: u8,
    pub prog: f64,
    /// Page operations sent to the environment.
    pub num_actions: usize,
    pub prompt_tokens_total: u64,
    pub completion_tokens_total: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub task: TaskInfo,
    #[serde(flatten)]
    pub metrics: EpisodeMetrics,
    pub subgoals_hit: Vec<String>,
    pub max_depth: usize,
    /// Largest estimated prompt size of any call.
    pub max_prompt_tokens: usize,
    pub model_calls: usize,
    pub answer: Option<String>,
    pub failure_message: Option<String>,
    pub trace: Vec<TraceRecord>,
}

impl EpisodeRecord {
    pub fn is_infrastructure_failure(&self) -> bool {
        self.metrics.failure.is_some_and(FailureKind::is_infrastructure)
    }

    /// The trace as JSON lines, each terminated by a newline.
    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.trace {
            out.push_str(&serde_json::to_string(record).expect("trace records serialize"));
            out.push('\n');
        }
        out
    }
}

pub fn write_trace(records: &[TraceRecord], mut out: impl Write) -> std::io::Result<()> {
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum TraceReadError {
    #[error("trace line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn read_trace(input: impl BufRead) -> Result<Vec<TraceRecord>, TraceReadError> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|source| TraceReadError::Json { line: i + 1, source })?);
    }
    Ok(records)
}

/// Everything about the agent that stays fixed over an episode.
#[derive(Clone)]
pub struct AgentSetup {
    pub library: Arc<PolicyLibrary>,
    pub root: String,
    pub limits: Limits,
    pub options: PromptOptions,
    pub sampling: Sampling,
}

impl AgentSetup {
    pub fn new(library: Arc<PolicyLibrary>, root: impl Into<String>) -> Self {
        AgentSetup {
            library,
            root: root.into(),
            limits: Limits::default(),
            options: PromptOptions::default(),
            sampling: Sampling::default(),
        }
    }
}

/// Turns stack events into trace records and tracks the deepest stack.
struct Recorder {
    records: Vec<TraceRecord>,
    max_depth: usize,
    max_prompt_tokens: usize,
    calls: usize,
}

impl TraceSink for Recorder {
    fn on_event(&mut self, event: &StepEvent, state: &StackState) {
        self.max_depth = self.max_depth.max(state.depth()).max(event.depth);
        self.max_prompt_tokens = self.max_prompt_tokens.max(event.prompt_tokens_estimate);
        if !event.response.is_empty() || event.usage.prompt_tokens > 0 {
            self.calls += 1;
        }
        self.records.push(TraceRecord::ModelCall {
            ts: event.ts,
            depth: event.depth,
            policy: event.policy.clone(),
            prompt_tokens_estimate: event.prompt_tokens_estimate,
            prompt_tokens: event.usage.prompt_tokens,
            completion_tokens: event.usage.completion_tokens,
            response: event.response.clone(),
            outcome: event.outcome.clone(),
        });
    }
}

/// Runs the agent on `env` until the root policy stops or the episode fails,
/// then scores it. Failures during the episode are captured in the record
/// and force `suc = 0`; progress is whatever the environment reports. Only an
/// agent that cannot start (unknown root, zero limits) is an error.
pub fn run_episode(
    env: &mut dyn Environment,
    agent: &AgentSetup,
    objective: &str,
    provider: &dyn Provider,
    task: TaskInfo,
) -> Result<EpisodeRecord, StackError> {
    run_episode_with_clock(env, agent, objective, provider, task, Arc::new(LogicalClock::new()))
}

pub fn run_episode_with_clock(
    env: &mut dyn Environment,
    agent: &AgentSetup,
    objective: &str,
    provider: &dyn Provider,
    task: TaskInfo,
    clock: Arc<dyn Clock>,
) -> Result<EpisodeRecord, StackError> {
    let mut recorder = Recorder {
        records: vec![TraceRecord::EpisodeStart {
            task: task.clone(),
            root: agent.root.clone(),
            objective: objective.to_string(),
            limits: agent.limits,
        }],
        max_depth: 0,
        max_prompt_tokens: 0,
        calls: 0,
    };
    let mut failure: Option<(FailureKind, String)> = None;
    let mut answer = None;

    let mut state = StackState::new(agent.library.clone(), &agent.root, objective, agent.limits)?
        .with_options(agent.options)
        .with_sampling(agent.sampling)
        .with_clock(clock);
    recorder.max_depth = 1;

    match env.observe() {
        Err(e) => failure = Some((FailureKind::EnvironmentError, e.to_string())),
        Ok(mut obs) => loop {
            match state.step(&obs, provider, &mut recorder) {
                StepOutcome::EnvAction { action, .. } => match env.apply(&action) {
                    Ok(next) => {
                        recorder.records.push(TraceRecord::EnvAction {
                            action,
                            url: next.url.clone(),
                            error: None,
                            fatal: false,
                        });
                        obs = next;
                    }
                    Err(e) if e.is_action_error() => {
                        let current = env.observe();
                        recorder.records.push(TraceRecord::EnvAction {
                            action,
                            url: current.as_ref().map(|o| o.url.clone()).unwrap_or_default(),
                            error: Some(e.to_string()),
                            fatal: current.is_err(),
                        });
                        match current {
                            Ok(o) => obs = o,
                            Err(e) => {
                                state.abort(FailureKind::EnvironmentError);
                                failure = Some((FailureKind::EnvironmentError, e.to_string()));
                                break;
                            }
                        }
                    }
                    Err(e) => {
                        recorder.records.push(TraceRecord::EnvAction {
                            action,
                            url: obs.url.clone(),
                            error: Some(e.to_string()),
                            fatal: true,
                        });
                        state.abort(FailureKind::EnvironmentError);
                        failure = Some((FailureKind::EnvironmentError, e.to_string()));
                        break;
                    }
                },
                StepOutcome::Finished { answer: a } => {
                    answer = Some(a);
                    break;
                }
                StepOutcome::Failed { kind, message } => {
                    failure = Some((kind, message));
                    break;
                }
            }
        },
    }
    let usage = state.usage();
    let num_actions = state.env_actions_taken();
    Ok(finish(env, task, recorder, failure, answer, num_actions, usage))
}

fn finish(
    env: &mut dyn Environment,
    task: TaskInfo,
    mut recorder: Recorder,
    mut failure: Option<(FailureKind, String)>,
    answer: Option<String>,
    num_actions: usize,
    usage: webstack_core::provider::Usage,
) -> EpisodeRecord {
    let eval = match env.evaluate() {
        Ok(e) => e,
        Err(e) => {
            failure.get_or_insert((FailureKind::EnvironmentError, e.to_string()));
            webstack_core::env::EvalResult::zero()
        }
    };
    let metrics = EpisodeMetrics {
        suc: if failure.is_some() { 0 } else { eval.success },
        prog: eval.task_progress,
        num_actions,
        prompt_tokens_total: usage.prompt_tokens,
        completion_tokens_total: usage.completion_tokens,
        failure: failure.as_ref().map(|f| f.0),
    };
    recorder.records.push(TraceRecord::EpisodeEnd {
        metrics: metrics.clone(),
        subgoals_hit: eval.subgoals_hit.clone(),
        max_depth: recorder.max_depth,
        answer: answer.clone(),
    });
    EpisodeRecord {
        task,
        metrics,
        subgoals_hit: eval.subgoals_hit,
        max_depth: recorder.max_depth,
        max_prompt_tokens: recorder.max_prompt_tokens,
        model_calls: recorder.calls,
        answer,
        failure_message: failure.map(|f| f.1),
        trace: recorder.records,
    }
}

/// Metrics that follow from the trace alone: action count, token totals and
/// failure. Success and progress are taken from the environment by a replay
/// (see [`crate::crm::replay_crm`]) or, lacking one, from the end record.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSummary {
    pub task: Option<TaskInfo>,
    pub num_actions: usize,
    pub prompt_tokens_total: u64,
    pub completion_tokens_total: u64,
    pub failure: Option<FailureKind>,
    pub actions: Vec<Action>,
    pub recorded: Option<EpisodeMetrics>,
}

pub fn summarize_trace(records: &[TraceRecord]) -> TraceSummary {
    let mut summary = TraceSummary {
        task: None,
        num_actions: 0,
        prompt_tokens_total: 0,
        completion_tokens_total: 0,
        failure: None,
        actions: Vec::new(),
        recorded: None,
    };
    for record in records {
        match record {
            TraceRecord::EpisodeStart { task, .. } => summary.task = Some(task.clone()),
            TraceRecord::ModelCall {
                prompt_tokens,
                completion_tokens,
                outcome,
                ..
            } => {
                summary.prompt_tokens_total += prompt_tokens;
                summary.completion_tokens_total += completion_tokens;
                if let EventOutcome::Failed { kind, .. } = outcome {
                    summary.failure = Some(*kind);
                }
            }
            TraceRecord::EnvAction { action, fatal, .. } => {
                summary.num_actions += 1;
                summary.actions.push(action.clone());
                if *fatal {
                    summary.failure = Some(FailureKind::EnvironmentError);
                }
            }
            TraceRecord::EpisodeEnd { metrics, .. } => summary.recorded = Some(metrics.clone()),
        }
    }
    summary
}
