//! Prompted policies, their per-frame history and prompt construction.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::action::{render_action, Action, RESERVED_VERBS};
use crate::observation::{estimate_tokens, serialize_element, serialize_elements, truncate_to_budget, Observation};

pub const DEFAULT_PROMPT_BUDGET: usize = 4000;

/// Number of element lines kept in the digest of an observed page.
pub const OBSERVATION_DIGEST_LINES: usize = 40;

fn default_budget() -> usize {
    DEFAULT_PROMPT_BUDGET
}

/// A prompted policy. `instruction` may contain the placeholders
/// `{base_actions}`, `{policies}`, `{examples}` and `{response_format}`; any
/// block whose placeholder is missing is appended after the instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub name: String,
    pub description: String,
    pub instruction: String,
    #[serde(default)]
    pub examples: Vec<String>,
    #[serde(default)]
    pub callable: Vec<String>,
    #[serde(default = "default_budget")]
    pub prompt_budget: usize,
}

impl PolicySpec {
    pub fn from_toml(text: &str) -> Result<Self, PolicyError> {
        toml::from_str(text).map_err(|e| PolicyError::Format(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("policy spec serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("policy `{0}` is already registered")]
    DuplicateName(String),
    #[error("`{0}` is a reserved action verb")]
    ReservedName(String),
    #[error("invalid policy name `{0}`")]
    InvalidName(String),
    #[error("policy `{0}` is not registered")]
    UnknownPolicy(String),
    #[error("policy `{policy}` may call unknown policy `{callee}`")]
    UnknownCallee { policy: String, callee: String },
    #[error("bad policy file: {0}")]
    Format(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

/// Registry of policies. Immutable once built and shared between episodes.
#[derive(Debug, Clone, Default)]
pub struct PolicyLibrary {
    specs: IndexMap<String, Arc<PolicySpec>>,
}

impl PolicyLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, spec: PolicySpec) -> Result<(), PolicyError> {
        let name = spec.name.as_str();
        if name.is_empty()
            || !name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(PolicyError::InvalidName(spec.name));
        }
        if RESERVED_VERBS.contains(&name) {
            return Err(PolicyError::ReservedName(spec.name));
        }
        if self.specs.contains_key(name) {
            return Err(PolicyError::DuplicateName(spec.name));
        }
        self.specs.insert(spec.name.clone(), Arc::new(spec));
        Ok(())
    }

    /// Checks that every callable name resolves to a registered policy.
    pub fn validate(&self) -> Result<(), PolicyError> {
        for spec in self.specs.values() {
            for callee in &spec.callable {
                if !self.specs.contains_key(callee) {
                    return Err(PolicyError::UnknownCallee {
                        policy: spec.name.clone(),
                        callee: callee.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Arc<PolicySpec>> {
        self.specs.get(name)
    }

    pub fn lookup(&self, name: &str) -> Result<&Arc<PolicySpec>, PolicyError> {
        self.get(name)
            .ok_or_else(|| PolicyError::UnknownPolicy(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.specs.keys().map(String::as_str)
    }

    /// Every registered name, i.e. everything some policy could invoke.
    pub fn invokable_names(&self) -> HashSet<String> {
        self.specs.keys().cloned().collect()
    }

    pub fn specs(&self) -> impl Iterator<Item = &Arc<PolicySpec>> {
        self.specs.values()
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    /// Names the given policy may invoke.
    pub fn callable_names(&self, spec: &PolicySpec) -> HashSet<String> {
        spec.callable
            .iter()
            .filter(|c| self.specs.contains_key(*c))
            .cloned()
            .collect()
    }

    /// Loads every `*.toml` file of a directory, in file-name order.
    pub fn load_dir(dir: &Path) -> Result<Self, PolicyError> {
        let io_err = |e: std::io::Error| PolicyError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        };
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(io_err)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        paths.sort();
        let mut library = PolicyLibrary::new();
        for path in paths {
            let text = std::fs::read_to_string(&path).map_err(|e| PolicyError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            library.register(PolicySpec::from_toml(&text)?)?;
        }
        library.validate()?;
        Ok(library)
    }

    pub fn from_specs(specs: impl IntoIterator<Item = PolicySpec>) -> Result<Self, PolicyError> {
        let mut library = PolicyLibrary::new();
        for spec in specs {
            library.register(spec)?;
        }
        library.validate()?;
        Ok(library)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HistoryEntry {
    Acted { reason: String, action: Action },
    Observed { digest: String, url: String },
    ChildReturned { name: String, query: String, value: String },
}

impl HistoryEntry {
    pub fn observed(obs: &Observation) -> Self {
        let digest = obs
            .elements
            .iter()
            .take(OBSERVATION_DIGEST_LINES)
            .map(serialize_element)
            .collect::<Vec<_>>()
            .join("\n");
        HistoryEntry::Observed {
            digest,
            url: obs.url.clone(),
        }
    }
}

/// One active policy on the stack with its local history.
#[derive(Debug, Clone)]
pub struct PolicyFrame {
    spec: Arc<PolicySpec>,
    objective: String,
    history: Vec<HistoryEntry>,
}

impl PolicyFrame {
    /// A fresh frame always starts with an empty history.
    pub fn new(spec: Arc<PolicySpec>, objective: impl Into<String>) -> Self {
        PolicyFrame {
            spec,
            objective: objective.into(),
            history: Vec::new(),
        }
    }

    pub fn spec(&self) -> &Arc<PolicySpec> {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn objective(&self) -> &str {
        &self.objective
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    pub fn append(&mut self, entry: HistoryEntry) {
        self.history.push(entry);
    }
}

/// Numbered past actions of a frame, oldest first. Observations are left out.
pub fn format_history(frame: &PolicyFrame) -> String {
    let mut lines = Vec::new();
    for entry in frame.history() {
        let rendered = match entry {
            HistoryEntry::Acted { action, .. } => render_action(action),
            HistoryEntry::ChildReturned { name, query, value } => {
                let call = render_action(&Action::PolicyCall {
                    name: name.clone(),
                    query: query.clone(),
                });
                format!("{call} -> {value}").trim_end().to_string()
            }
            HistoryEntry::Observed { .. } => continue,
        };
        lines.push(format!("{} = {rendered}", lines.len() + 1));
    }
    lines.join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptOptions {
    /// Ask for a REASON section before the action.
    pub chain_of_thought: bool,
}

impl Default for PromptOptions {
    fn default() -> Self {
        PromptOptions {
            chain_of_thought: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("prompt for `{policy}` needs {required} tokens without any observation, budget is {budget}")]
    BudgetImpossible {
        policy: String,
        required: usize,
        budget: usize,
    },
}

pub const BASE_ACTIONS: &str = "\
Page Operation Actions:
`click [id]`: Click the element with the given id.
`type [id] [content] [press_enter_after=0|1]`: Type content into the field with the given id. Enter is pressed afterwards unless the last argument is 0.
`hover [id]`: Move the pointer over the element with the given id.
`press [key_comb]`: Press a key combination such as Ctrl+v.
`scroll [direction=down|up]`: Scroll the page.
`note [content]`: Keep a note for yourself. Notes show up in your previous actions.

Tab Management Actions:
`new_tab`: Open an empty tab.
`tab_focus [tab_index]`: Switch to the tab with the given index.
`close_tab`: Close the current tab.

URL Navigation Actions:
`goto [url]`: Open a URL.
`go_back`: Return to the previous page.
`go_forward`: Undo a go_back.

Completion Action:
`stop [answer]`: Finish once the objective is met. Put the answer in the brackets when the objective asks for one, otherwise leave them empty.";

const INPUTS_DESCRIPTION: &str = "\
Each turn you receive:
- OBJECTIVE: what you have to achieve.
- OBSERVATION: the salient elements of the current page, one per line.
- URL: the address of the current page.
- PREVIOUS ACTIONS: what you did so far, numbered, with the response of any subroutine you called.";

fn response_format(options: PromptOptions) -> String {
    if options.chain_of_thought {
        format!(
            "{INPUTS_DESCRIPTION}\n\nAnswer in this format and issue exactly one action per answer:\nREASON:\n<why the action below is the right next step>\nACTION:\n<the action>"
        )
    } else {
        format!("{INPUTS_DESCRIPTION}\n\nAnswer in this format and issue exactly one action per answer:\nACTION:\n<the action>")
    }
}

fn policies_block(library: &PolicyLibrary, spec: &PolicySpec) -> String {
    let mut callees = spec
        .callable
        .iter()
        .filter_map(|name| library.get(name))
        .peekable();
    if callees.peek().is_none() {
        return String::new();
    }
    let mut out = String::from("Subroutine Actions:");
    for callee in callees {
        let _ = write!(out, "\n`{} [query]`: {}", callee.name, callee.description);
    }
    out
}

fn examples_block(spec: &PolicySpec) -> String {
    if spec.examples.is_empty() {
        return String::new();
    }
    format!("Examples:\n\n{}", spec.examples.join("\n\n"))
}

/// Single-pass substitution of `{name}` placeholders.
fn fill_template(template: &str, values: &[(&str, &str)]) -> (String, Vec<bool>) {
    let mut used = vec![false; values.len()];
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'outer: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        for (i, (key, value)) in values.iter().enumerate() {
            let placeholder = format!("{{{key}}}");
            if tail.starts_with(&placeholder) {
                out.push_str(value);
                used[i] = true;
                rest = &tail[placeholder.len()..];
                continue 'outer;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    (out, used)
}

/// The instruction part of a policy prompt: template with every block filled in.
pub fn render_instruction(library: &PolicyLibrary, spec: &PolicySpec, options: PromptOptions) -> String {
    let policies = policies_block(library, spec);
    let examples = examples_block(spec);
    let format = response_format(options);
    let values = [
        ("base_actions", BASE_ACTIONS),
        ("policies", policies.as_str()),
        ("examples", examples.as_str()),
        ("response_format", format.as_str()),
    ];
    let (mut text, used) = fill_template(&spec.instruction, &values);
    for ((_, value), used) in values.iter().zip(used) {
        if !used && !value.is_empty() {
            text.push_str("\n\n");
            text.push_str(value);
        }
    }
    text.trim().to_string()
}

fn assemble(instruction: &str, objective: &str, observation: &str, url: &str, history: &str) -> String {
    format!(
        "{instruction}\n\nOBJECTIVE:\n{objective}\nOBSERVATION:\n{observation}\nURL:\n{url}\nPREVIOUS ACTIONS:\n{history}\n"
    )
}

/// Full prompt for the frame's policy on the given page. Only the observation
/// is shortened to respect the policy's token budget.
pub fn build_prompt(
    library: &PolicyLibrary,
    frame: &PolicyFrame,
    obs: &Observation,
    options: PromptOptions,
) -> Result<String, PromptError> {
    let spec = frame.spec();
    let instruction = render_instruction(library, spec, options);
    let history = format_history(frame);
    let fixed = assemble(&instruction, frame.objective(), "", &obs.url, &history);
    let fixed_chars = fixed.chars().count();
    let budget_chars = spec.prompt_budget * 4;
    if fixed_chars > budget_chars {
        return Err(PromptError::BudgetImpossible {
            policy: spec.name.clone(),
            required: estimate_tokens(&fixed),
            budget: spec.prompt_budget,
        });
    }
    let observation_budget = (budget_chars - fixed_chars) / 4;
    let observation = truncate_to_budget(&serialize_elements(obs), observation_budget);
    Ok(assemble(&instruction, frame.objective(), &observation, &obs.url, &history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::WebElement;

    fn spec(name: &str, callable: &[&str]) -> PolicySpec {
        PolicySpec {
            name: name.into(),
            description: format!("{name} does its job"),
            instruction: "You operate a web browser.\n{base_actions}\n{policies}\n{examples}\n{response_format}".into(),
            examples: vec!["objective: x\nACTION:\nclick [1]".into()],
            callable: callable.iter().map(|s| s.to_string()).collect(),
            prompt_budget: DEFAULT_PROMPT_BUDGET,
        }
    }

    #[test]
    fn register_and_lookup() {
        let mut lib = PolicyLibrary::new();
        let s = spec("find_order", &[]);
        lib.register(s.clone()).unwrap();
        assert_eq!(**lib.lookup("find_order").unwrap(), s);
        assert_eq!(
            lib.register(s),
            Err(PolicyError::DuplicateName("find_order".into()))
        );
    }

    #[test]
    fn reserved_and_invalid_names_rejected() {
        let mut lib = PolicyLibrary::new();
        assert!(matches!(lib.register(spec("click", &[])), Err(PolicyError::ReservedName(_))));
        assert!(matches!(lib.register(spec("two words", &[])), Err(PolicyError::InvalidName(_))));
    }

    #[test]
    fn fourteen_policies_are_invokable() {
        let names = [
            "find_commits", "search_issues", "create_project", "create_group", "find_subreddit",
            "find_user", "find_customer_review", "find_order", "search_customer", "search_order",
            "list_products", "search_reviews", "find_directions", "search_nearest_place",
        ];
        let lib = PolicyLibrary::from_specs(names.iter().map(|n| spec(n, &[]))).unwrap();
        assert_eq!(lib.invokable_names().len(), 14);
    }

    #[test]
    fn unknown_callee_fails_validation() {
        let err = PolicyLibrary::from_specs([spec("root", &["ghost"])]).unwrap_err();
        assert!(matches!(err, PolicyError::UnknownCallee { .. }));
        // self-calls are fine
        PolicyLibrary::from_specs([spec("search_list", &["search_list"])]).unwrap();
    }

    #[test]
    fn history_formatting() {
        let s = Arc::new(spec("root", &[]));
        let mut frame = PolicyFrame::new(s, "goal");
        assert_eq!(format_history(&frame), "");
        frame.append(HistoryEntry::observed(&Observation::default()));
        frame.append(HistoryEntry::Acted {
            reason: "r".into(),
            action: Action::Click { id: 7 },
        });
        assert_eq!(format_history(&frame), "1 = click [7]");
    }

    #[test]
    fn prompt_sections_and_subroutines() {
        let lib = PolicyLibrary::from_specs([spec("root", &["child"]), spec("child", &[])]).unwrap();
        let obs = Observation::new(
            "http://x/",
            vec![WebElement::new(1, "button").text("Go")],
        );
        let frame = PolicyFrame::new(lib.get("root").unwrap().clone(), "do it");
        let prompt = build_prompt(&lib, &frame, &obs, PromptOptions::default()).unwrap();
        for header in ["OBJECTIVE:", "OBSERVATION:", "URL:", "PREVIOUS ACTIONS:"] {
            assert_eq!(prompt.lines().filter(|l| *l == header).count(), 1, "{header}");
        }
        assert!(prompt.contains("Subroutine Actions:"));
        assert!(prompt.contains("`child [query]`: child does its job"));
        assert!(prompt.contains("REASON:"));

        let child = PolicyFrame::new(lib.get("child").unwrap().clone(), "sub");
        let prompt = build_prompt(&lib, &child, &obs, PromptOptions::default()).unwrap();
        assert!(!prompt.contains("Subroutine Actions"));

        let no_cot = build_prompt(
            &lib,
            &child,
            &obs,
            PromptOptions {
                chain_of_thought: false,
            },
        )
        .unwrap();
        assert!(!no_cot.contains("REASON:"));
    }

    #[test]
    fn missing_placeholders_are_appended() {
        let mut s = spec("solo", &[]);
        s.instruction = "Just do it.".into();
        let lib = PolicyLibrary::from_specs([s]).unwrap();
        let text = render_instruction(&lib, lib.get("solo").unwrap(), PromptOptions::default());
        assert!(text.starts_with("Just do it."));
        assert!(text.contains("Page Operation Actions:"));
        assert!(text.contains("Examples:"));
    }

    #[test]
    fn observation_is_truncated_to_fit_budget() {
        let mut s = spec("small", &[]);
        s.prompt_budget = 1200;
        let lib = PolicyLibrary::from_specs([s]).unwrap();
        let elements = (0..400)
            .map(|i| WebElement::new(i, "button").text(format!("Button number {i}")))
            .collect();
        let obs = Observation::new("http://x/", elements);
        let frame = PolicyFrame::new(lib.get("small").unwrap().clone(), "goal");
        let prompt = build_prompt(&lib, &frame, &obs, PromptOptions::default()).unwrap();
        assert!(estimate_tokens(&prompt) <= 1200);
        assert!(prompt.contains("[truncated]"));
        assert!(prompt.contains("Examples:"));
    }

    #[test]
    fn oversized_template_is_an_error() {
        let mut s = spec("huge", &[]);
        s.prompt_budget = 50;
        let lib = PolicyLibrary::from_specs([s]).unwrap();
        let frame = PolicyFrame::new(lib.get("huge").unwrap().clone(), "goal");
        let err = build_prompt(&lib, &frame, &Observation::default(), PromptOptions::default()).unwrap_err();
        assert!(matches!(err, PromptError::BudgetImpossible { budget: 50, .. }));
    }

    #[test]
    fn build_prompt_leaves_frame_untouched() {
        let lib = PolicyLibrary::from_specs([spec("root", &[])]).unwrap();
        let mut frame = PolicyFrame::new(lib.get("root").unwrap().clone(), "goal");
        frame.append(HistoryEntry::Acted {
            reason: String::new(),
            action: Action::Click { id: 2 },
        });
        let before = frame.history().to_vec();
        build_prompt(&lib, &frame, &Observation::default(), PromptOptions::default()).unwrap();
        assert_eq!(frame.history(), &before[..]);
    }

    #[test]
    fn toml_round_trip() {
        let s = spec("find_booking", &["fill_text"]);
        assert_eq!(PolicySpec::from_toml(&s.to_toml()).unwrap(), s);
    }
}
