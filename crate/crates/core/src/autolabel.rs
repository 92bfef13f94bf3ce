//! Turning recorded demonstrations into policy prompts.
//!
//! Each step of a demonstration is labelled with the skill being executed,
//! predicted from the step and the previous label only. Labelled
//! demonstrations are then grouped into a planner prompt and one prompt per
//! skill, optionally with a generated reason for every step.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::action::{parse_action, render_action, Action, ActionParseError, RESERVED_VERBS};
use crate::observation::{parse_elements, serialize_elements, Observation};
use crate::policy::PolicySpec;
use crate::provider::{select_candidate, CompletionRequest, Provider, ProviderError};

pub const LABEL_STREAM: &str = "autolabel";
pub const REASONING_STREAM: &str = "reasoning";
pub const PLANNER_NAME: &str = "planner";
/// Previous actions shown in each generated skill example.
pub const PREVIOUS_ACTIONS_SHOWN: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemoStep {
    pub observation: Observation,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Demonstration {
    pub context: String,
    pub steps: Vec<DemoStep>,
}

/// On-disk form of a demonstration: observations as serialized element text,
/// actions as rendered lines, and optional hand labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoDocument {
    pub context: String,
    pub steps: Vec<DemoStepDocument>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoStepDocument {
    #[serde(default)]
    pub url: String,
    pub observation: String,
    pub action: String,
}

impl DemoDocument {
    pub fn from_json(text: &str) -> Result<Self, AutolabelError> {
        serde_json::from_str(text).map_err(|e| AutolabelError::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, AutolabelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AutolabelError::Format(format!("{}: {e}", path.display())))?;
        DemoDocument::from_json(&text)
            .map_err(|e| AutolabelError::Format(format!("{}: {e}", path.display())))
    }

    pub fn from_demonstration(demo: &Demonstration, labels: Option<&[LabeledStep]>) -> Self {
        DemoDocument {
            context: demo.context.clone(),
            steps: demo
                .steps
                .iter()
                .map(|s| DemoStepDocument {
                    url: s.observation.url.clone(),
                    observation: serialize_elements(&s.observation),
                    action: render_action(&s.action),
                })
                .collect(),
            labels: labels.map(|l| l.iter().map(|s| s.instruction.clone()).collect()),
        }
    }

    pub fn demonstration(&self) -> Result<Demonstration, AutolabelError> {
        if self.steps.is_empty() {
            return Err(AutolabelError::EmptyDemonstration);
        }
        let steps = self
            .steps
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let elements = parse_elements(&s.observation)
                    .map_err(|e| AutolabelError::Format(format!("step {i}: {e}")))?;
                let action = parse_action(&s.action, &HashSet::new())
                    .map_err(|e| AutolabelError::Format(format!("step {i}: {e}")))?;
                Ok(DemoStep {
                    observation: Observation::new(s.url.clone(), elements),
                    action,
                })
            })
            .collect::<Result<Vec<_>, AutolabelError>>()?;
        Ok(Demonstration {
            context: self.context.clone(),
            steps,
        })
    }

    /// Hand labels parsed against `vocab`.
    pub fn hand_labels(&self, vocab: &LabelVocab) -> Result<Option<Vec<LabeledStep>>, AutolabelError> {
        let Some(lines) = &self.labels else {
            return Ok(None);
        };
        if lines.len() != self.steps.len() {
            return Err(AutolabelError::Format(format!(
                "{} labels for {} steps",
                lines.len(),
                self.steps.len()
            )));
        }
        lines
            .iter()
            .map(|l| {
                vocab
                    .parse_label(l)
                    .ok_or_else(|| AutolabelError::Format(format!("label `{l}` is not in the vocabulary")))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }
}

/// The skill a step belongs to and the full label line it was given.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledStep {
    pub policy: String,
    pub instruction: String,
}

/// Label names the labeller may choose from, each with a short description.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelVocab {
    entries: Vec<(String, String)>,
}

impl LabelVocab {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        LabelVocab {
            entries: names.into_iter().map(|n| (n.into(), String::new())).collect(),
        }
    }

    /// One label per line as `NAME` or `NAME: description`. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self, AutolabelError> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, desc) = match line.split_once(':') {
                Some((n, d)) => (n.trim(), d.trim()),
                None => (line, ""),
            };
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(AutolabelError::Format(format!("bad vocabulary line `{line}`")));
            }
            if entries.iter().any(|(n, _)| n == name) {
                return Err(AutolabelError::Format(format!("label `{name}` listed twice")));
            }
            entries.push((name.to_string(), desc.to_string()));
        }
        Ok(LabelVocab { entries })
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| n == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    /// A label line is a vocabulary name optionally followed by arguments.
    pub fn parse_label(&self, line: &str) -> Option<LabeledStep> {
        let line = line.trim().trim_matches('`').trim();
        let head = line.split_whitespace().next()?;
        self.contains(head).then(|| LabeledStep {
            policy: head.to_string(),
            instruction: line.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AutolabelError {
    #[error("label vocabulary is empty")]
    EmptyVocabulary,
    #[error("demonstration has no steps")]
    EmptyDemonstration,
    #[error("no labelled demonstrations given")]
    EmptyInput,
    #[error("step {step}: reply does not contain a known label: {response:?}")]
    UnparseableLabel { step: usize, response: String },
    #[error("step index {index} out of range for {len} steps")]
    StepOutOfRange { index: usize, len: usize },
    #[error("demonstration has {steps} steps but {labels} labels")]
    LabelCountMismatch { steps: usize, labels: usize },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("invalid demonstration: {0}")]
    Format(String),
}

impl From<ActionParseError> for AutolabelError {
    fn from(e: ActionParseError) -> Self {
        AutolabelError::Format(e.to_string())
    }
}

fn label_prompt(vocab: &LabelVocab, context: &str, step: &DemoStep, previous: &str) -> String {
    let mut labels = String::new();
    for (name, desc) in &vocab.entries {
        if desc.is_empty() {
            labels.push_str(&format!("- {name}\n"));
        } else {
            labels.push_str(&format!("- {name}: {desc}\n"));
        }
    }
    format!(
        "Each step of a recorded browser session belongs to one skill. Decide which skill the \
current step belongs to.\n\
You get the CONTEXT of the session, the BROWSER CONTENT before the step, the CURRENT ACTION \
and the PREVIOUS LABEL (empty for the first step). A skill often spans several steps, so keep \
the previous label while the action still serves it.\n\
Write the label name followed by its arguments on one line after CURRENT LABEL:.\n\
Labels:\n{labels}\n\
CONTEXT:\n{context}\n\
BROWSER CONTENT:\n{content}\n\
URL:\n{url}\n\
CURRENT ACTION:\n{action}\n\
PREVIOUS LABEL:\n{previous}\n\
CURRENT LABEL:\n",
        content = serialize_elements(&step.observation),
        url = step.observation.url,
        action = render_action(&step.action),
    )
}

/// Text after the last `CURRENT LABEL:` header, or the whole reply.
fn label_line(vocab: &LabelVocab, reply: &str) -> Option<LabeledStep> {
    let upper = reply.to_ascii_uppercase();
    let body = match upper.rfind("CURRENT LABEL:") {
        Some(pos) => &reply[pos + "CURRENT LABEL:".len()..],
        None => reply,
    };
    body.lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .and_then(|l| vocab.parse_label(l))
}

/// Labels every step of `demo`, one provider call per step (plus one retry
/// for an unusable reply).
pub fn autolabel(
    demo: &Demonstration,
    vocab: &LabelVocab,
    provider: &dyn Provider,
) -> Result<Vec<LabeledStep>, AutolabelError> {
    if vocab.is_empty() {
        return Err(AutolabelError::EmptyVocabulary);
    }
    if demo.steps.is_empty() {
        return Err(AutolabelError::EmptyDemonstration);
    }
    let mut labels: Vec<LabeledStep> = Vec::with_capacity(demo.steps.len());
    for (i, step) in demo.steps.iter().enumerate() {
        let previous = labels.last().map(|l| l.instruction.as_str()).unwrap_or("");
        let request =
            CompletionRequest::new(label_prompt(vocab, &demo.context, step, previous)).with_stream(LABEL_STREAM);
        let mut label = None;
        let mut last_reply = String::new();
        for _ in 0..2 {
            let result = provider.complete(&request)?;
            last_reply = select_candidate(&result)?.to_string();
            label = label_line(vocab, &last_reply);
            if label.is_some() {
                break;
            }
        }
        match label {
            Some(l) => labels.push(l),
            None => {
                return Err(AutolabelError::UnparseableLabel {
                    step: i,
                    response: last_reply,
                })
            }
        }
    }
    Ok(labels)
}

fn previous_actions(actions: &[&Action]) -> String {
    if actions.is_empty() {
        return "none".into();
    }
    actions
        .iter()
        .map(|a| render_action(a))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Asks the provider why the step's action was taken and returns the reason.
pub fn augment_reasoning(
    demo: &Demonstration,
    step_index: usize,
    provider: &dyn Provider,
) -> Result<String, AutolabelError> {
    let step = demo.steps.get(step_index).ok_or(AutolabelError::StepOutOfRange {
        index: step_index,
        len: demo.steps.len(),
    })?;
    let start = step_index.saturating_sub(PREVIOUS_ACTIONS_SHOWN);
    let previous: Vec<&Action> = demo.steps[start..step_index].iter().map(|s| &s.action).collect();
    let prompt = format!(
        "Explain in a few short sentences why the action below was the right next step.\n\
Write the explanation after REASONING:.\n\
CONTEXT:\n{context}\n\
BROWSER CONTENT:\n{content}\n\
URL:\n{url}\n\
PREVIOUS ACTIONS:\n{previous}\n\
ACTION:\n{action}\n\
REASONING:\n",
        context = demo.context,
        content = serialize_elements(&step.observation),
        url = step.observation.url,
        previous = previous_actions(&previous),
        action = render_action(&step.action),
    );
    let result = provider.complete(&CompletionRequest::new(prompt).with_stream(REASONING_STREAM))?;
    let reply = select_candidate(&result)?;
    let upper = reply.to_ascii_uppercase();
    let reason = match upper.rfind("REASONING:") {
        Some(pos) => &reply[pos + "REASONING:".len()..],
        None => reply,
    };
    Ok(reason.trim().to_string())
}

/// A demonstration with one label per step and, optionally, one reason per
/// step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDemo {
    pub demo: Demonstration,
    pub labels: Vec<LabeledStep>,
    pub reasons: Option<Vec<String>>,
}

impl LabeledDemo {
    pub fn new(demo: Demonstration, labels: Vec<LabeledStep>) -> Self {
        LabeledDemo {
            demo,
            labels,
            reasons: None,
        }
    }
}

/// Name of the generated policy for a label. Labels that clash with built-in
/// verbs or the planner get a `skill_` prefix.
pub fn skill_name(label: &str) -> String {
    let name: String = label
        .to_ascii_lowercase()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect();
    if RESERVED_VERBS.contains(&name.as_str()) || name == PLANNER_NAME {
        format!("skill_{name}")
    } else {
        name
    }
}

/// One labelled step as it appears in a generated skill prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepExample {
    pub demo_index: usize,
    pub step_index: usize,
    pub policy: String,
    pub text: String,
}

/// Skill examples for every labelled step, in demonstration order. The
/// previous actions shown are those of the same label run, at most
/// [`PREVIOUS_ACTIONS_SHOWN`] of them.
pub fn collect_step_examples(labeled: &[LabeledDemo]) -> Result<Vec<StepExample>, AutolabelError> {
    let mut out = Vec::new();
    for (d, item) in labeled.iter().enumerate() {
        let steps = &item.demo.steps;
        if steps.len() != item.labels.len() {
            return Err(AutolabelError::LabelCountMismatch {
                steps: steps.len(),
                labels: item.labels.len(),
            });
        }
        let mut run_start = 0;
        for (t, (step, label)) in steps.iter().zip(&item.labels).enumerate() {
            if t > 0 && item.labels[t - 1] != *label {
                run_start = t;
            }
            let from = run_start.max(t.saturating_sub(PREVIOUS_ACTIONS_SHOWN));
            let previous: Vec<&Action> = steps[from..t].iter().map(|s| &s.action).collect();
            let mut text = format!(
                "instruction: {}\nobservation:\n{}\nurl: {}\nprevious actions:\n{}\n",
                label.instruction,
                serialize_elements(&step.observation),
                step.observation.url,
                previous_actions(&previous),
            );
            if let Some(reason) = item.reasons.as_ref().and_then(|r| r.get(t)) {
                text.push_str(&format!("reason: {reason}\n"));
            }
            text.push_str(&format!("next action: {}", render_action(&step.action)));
            out.push(StepExample {
                demo_index: d,
                step_index: t,
                policy: skill_name(&label.policy),
                text,
            });
        }
    }
    Ok(out)
}

/// The ordered skill calls of a demonstration, with runs of identical labels
/// collapsed into one call.
pub fn planner_calls(labels: &[LabeledStep]) -> Vec<Action> {
    let mut calls: Vec<Action> = Vec::new();
    let mut last: Option<&LabeledStep> = None;
    for label in labels {
        if last != Some(label) {
            calls.push(Action::PolicyCall {
                name: skill_name(&label.policy),
                query: label.instruction.clone(),
            });
        }
        last = Some(label);
    }
    calls
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthesizedPrompts {
    pub planner: PolicySpec,
    pub policies: Vec<PolicySpec>,
}

const PLANNER_INSTRUCTION: &str = "\
You are the planner of a web agent. Break the task down and hand each part to the skill that \
handles it, one call at a time, with the details the skill needs. When every part is done, \
stop with the answer, if any.

{base_actions}

{policies}

{examples}

{response_format}";

const SKILL_INSTRUCTION: &str = "\
You carry out one skill of a web agent: {skill}. Follow the instruction you are given using the \
page actions below, and stop when the instruction is fulfilled.

{base_actions}

{examples}

{response_format}";

/// Builds a planner prompt and one prompt per label from labelled
/// demonstrations.
pub fn synthesize_prompts(labeled: &[LabeledDemo]) -> Result<SynthesizedPrompts, AutolabelError> {
    if labeled.is_empty() {
        return Err(AutolabelError::EmptyInput);
    }
    let step_examples = collect_step_examples(labeled)?;
    let mut by_policy: BTreeMap<String, (String, Vec<String>)> = BTreeMap::new();
    for item in labeled {
        for label in &item.labels {
            by_policy
                .entry(skill_name(&label.policy))
                .or_insert_with(|| (label.policy.clone(), Vec::new()));
        }
    }
    for ex in step_examples {
        by_policy
            .get_mut(&ex.policy)
            .expect("every step example has a registered policy")
            .1
            .push(ex.text);
    }
    let planner_examples = labeled
        .iter()
        .map(|item| {
            let first = &item.demo.steps[0].observation;
            let calls = planner_calls(&item.labels)
                .iter()
                .map(render_action)
                .collect::<Vec<_>>()
                .join("\n");
            format!(
                "task: {}\ninitial observation:\n{}\nurl: {}\ncalls in order:\n{}",
                item.demo.context,
                serialize_elements(first),
                first.url,
                calls
            )
        })
        .collect();
    let policies: Vec<PolicySpec> = by_policy
        .into_iter()
        .map(|(name, (label, examples))| PolicySpec {
            description: format!("Carry out the {label} skill described by the query"),
            instruction: SKILL_INSTRUCTION.replace("{skill}", &label),
            name,
            examples,
            callable: Vec::new(),
            prompt_budget: crate::policy::DEFAULT_PROMPT_BUDGET,
        })
        .collect();
    let planner = PolicySpec {
        name: PLANNER_NAME.into(),
        description: "Plan the whole task and delegate each part to a skill".into(),
        instruction: PLANNER_INSTRUCTION.into(),
        examples: planner_examples,
        callable: policies.iter().map(|p| p.name.clone()).collect(),
        prompt_budget: crate::policy::DEFAULT_PROMPT_BUDGET,
    };
    Ok(SynthesizedPrompts { planner, policies })
}
