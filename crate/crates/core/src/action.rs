//! The textual action language shared by every prompt.
//!
//! Actions are single lines made of a verb followed by bracketed arguments,
//! e.g. `click [7]`, `type [15] [Carnegie Mellon University] [1]` or a policy
//! invocation such as `find_order [Most recent pending order by Sarah Miller]`.
//! The older uppercase forms (`CLICK 7`, `TYPE 5 "text"`, `DONE`) are accepted
//! as aliases so recorded demonstrations can be reused as-is.

use std::collections::HashSet;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;

/// Identifier of an element inside an [`Observation`](crate::observation::Observation).
pub type ElementId = u64;

/// Verbs reserved by the grammar. Policies may not use these names.
pub const RESERVED_VERBS: &[&str] = &[
    "click",
    "type",
    "hover",
    "press",
    "scroll",
    "note",
    "go_back",
    "go_forward",
    "goto",
    "new_tab",
    "tab_focus",
    "close_tab",
    "stop",
    "CLICK",
    "TYPE",
    "DONE",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScrollDirection {
    Up,
    Down,
}

impl ScrollDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            ScrollDirection::Up => "up",
            ScrollDirection::Down => "down",
        }
    }
}

/// Every action a policy can emit: page operations, policy invocations and `stop`.
///
/// String arguments are single-line; a line break cannot be expressed in the
/// grammar.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Action {
    Click { id: ElementId },
    Type { id: ElementId, text: String, press_enter: bool },
    Hover { id: ElementId },
    Press { key_combo: String },
    Scroll { direction: ScrollDirection },
    Note { content: String },
    GoBack,
    GoForward,
    Goto { url: String },
    NewTab,
    TabFocus { index: u64 },
    CloseTab,
    PolicyCall { name: String, query: String },
    Stop { answer: String },
}

impl Action {
    /// True for actions that are sent to the web environment.
    pub fn is_page_operation(&self) -> bool {
        !matches!(self, Action::PolicyCall { .. } | Action::Stop { .. })
    }

    pub fn verb(&self) -> &str {
        match self {
            Action::Click { .. } => "click",
            Action::Type { .. } => "type",
            Action::Hover { .. } => "hover",
            Action::Press { .. } => "press",
            Action::Scroll { .. } => "scroll",
            Action::Note { .. } => "note",
            Action::GoBack => "go_back",
            Action::GoForward => "go_forward",
            Action::Goto { .. } => "goto",
            Action::NewTab => "new_tab",
            Action::TabFocus { .. } => "tab_focus",
            Action::CloseTab => "close_tab",
            Action::PolicyCall { name, .. } => name,
            Action::Stop { .. } => "stop",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_action(self))
    }
}

/// Parse a line where any unknown identifier followed by one bracketed
/// argument is read as a policy invocation. Used for stored traces, where the
/// set of policies in scope is not known.
pub fn parse_action_lenient(text: &str) -> Result<Action, ActionParseError> {
    match parse_action(text, &HashSet::new()) {
        Err(ActionParseError::UnknownVerb(verb))
            if !verb.is_empty()
                && verb
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') =>
        {
            let names = HashSet::from([verb]);
            parse_action(text, &names)
        }
        other => other,
    }
}

// Actions serialize as their rendered line.
impl serde::Serialize for Action {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&render_action(self))
    }
}

impl<'de> serde::Deserialize<'de> for Action {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let line = String::deserialize(d)?;
        parse_action_lenient(&line).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedResponse {
    pub reason: String,
    pub action: Action,
    /// Further parseable action lines that followed the chosen one. Only the
    /// first action of a response is executed.
    pub ignored: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ActionParseError {
    #[error("unknown verb `{0}`")]
    UnknownVerb(String),
    #[error("malformed arguments for `{verb}`: {reason}")]
    MalformedArguments { verb: String, reason: String },
    #[error("no parseable action found in response")]
    NoActionFound,
}

fn malformed(verb: &str, reason: impl Into<String>) -> ActionParseError {
    ActionParseError::MalformedArguments {
        verb: verb.to_string(),
        reason: reason.into(),
    }
}

/// Canonical single-line form of an action.
pub fn render_action(action: &Action) -> String {
    match action {
        Action::Click { id } => format!("click [{id}]"),
        Action::Type {
            id,
            text,
            press_enter,
        } => format!("type [{id}] [{text}] [{}]", u8::from(*press_enter)),
        Action::Hover { id } => format!("hover [{id}]"),
        Action::Press { key_combo } => format!("press [{key_combo}]"),
        Action::Scroll { direction } => format!("scroll [{}]", direction.as_str()),
        Action::Note { content } => format!("note [{content}]"),
        Action::GoBack => "go_back".to_string(),
        Action::GoForward => "go_forward".to_string(),
        Action::Goto { url } => format!("goto [{url}]"),
        Action::NewTab => "new_tab".to_string(),
        Action::TabFocus { index } => format!("tab_focus [{index}]"),
        Action::CloseTab => "close_tab".to_string(),
        Action::PolicyCall { name, query } => format!("{name} [{query}]"),
        Action::Stop { answer } => format!("stop [{answer}]"),
    }
}

/// Parse one action line. `policy_names` is the set of policies that may be
/// invoked from the current context.
pub fn parse_action(
    text: &str,
    policy_names: &HashSet<String>,
) -> Result<Action, ActionParseError> {
    let line = text.trim();
    let head_end = line
        .find(|c: char| c.is_whitespace() || c == '[')
        .unwrap_or(line.len());
    let (verb, rest) = line.split_at(head_end);
    let rest = rest.trim_start();

    match verb {
        "click" => Ok(Action::Click {
            id: single_id(verb, rest)?,
        }),
        "hover" => Ok(Action::Hover {
            id: single_id(verb, rest)?,
        }),
        "type" => parse_type(rest),
        "press" => Ok(Action::Press {
            key_combo: final_arg(verb, rest)?.to_string(),
        }),
        "scroll" => {
            let arg = final_arg(verb, rest)?.trim();
            let arg = arg.strip_prefix("direction=").unwrap_or(arg);
            let direction = match arg {
                "up" => ScrollDirection::Up,
                "down" => ScrollDirection::Down,
                other => return Err(malformed(verb, format!("bad direction `{other}`"))),
            };
            Ok(Action::Scroll { direction })
        }
        "note" => Ok(Action::Note {
            content: final_arg(verb, rest)?.to_string(),
        }),
        "goto" => Ok(Action::Goto {
            url: final_arg(verb, rest)?.to_string(),
        }),
        "tab_focus" => {
            let arg = final_arg(verb, rest)?.trim();
            let index = arg
                .parse()
                .map_err(|_| malformed(verb, format!("bad tab index `{arg}`")))?;
            Ok(Action::TabFocus { index })
        }
        "go_back" => no_args(verb, rest).map(|_| Action::GoBack),
        "go_forward" => no_args(verb, rest).map(|_| Action::GoForward),
        "new_tab" => no_args(verb, rest).map(|_| Action::NewTab),
        "close_tab" => no_args(verb, rest).map(|_| Action::CloseTab),
        "stop" => {
            if rest.is_empty() {
                Ok(Action::Stop {
                    answer: String::new(),
                })
            } else {
                Ok(Action::Stop {
                    answer: final_arg(verb, rest)?.to_string(),
                })
            }
        }
        "CLICK" | "TYPE" | "DONE" => parse_legacy(verb, rest, policy_names),
        name if policy_names.contains(name) => Ok(Action::PolicyCall {
            name: name.to_string(),
            query: final_arg(name, rest)?.to_string(),
        }),
        other => Err(ActionParseError::UnknownVerb(other.to_string())),
    }
}

/// Split off a leading `[...]` argument whose content holds no closing bracket.
fn leading_arg<'a>(verb: &str, rest: &'a str) -> Result<(&'a str, &'a str), ActionParseError> {
    let inner = rest
        .strip_prefix('[')
        .ok_or_else(|| malformed(verb, "expected `[`"))?;
    let close = inner
        .find(']')
        .ok_or_else(|| malformed(verb, "unterminated argument"))?;
    Ok((&inner[..close], inner[close + 1..].trim_start()))
}

/// The last argument of a line extends greedily to the final `]`.
fn final_arg<'a>(verb: &str, rest: &'a str) -> Result<&'a str, ActionParseError> {
    let rest = rest.trim_end();
    let inner = rest
        .strip_prefix('[')
        .ok_or_else(|| malformed(verb, "expected `[`"))?;
    inner
        .strip_suffix(']')
        .ok_or_else(|| malformed(verb, "argument must end with `]`"))
}

fn single_id(verb: &str, rest: &str) -> Result<ElementId, ActionParseError> {
    let arg = final_arg(verb, rest)?.trim();
    arg.parse()
        .map_err(|_| malformed(verb, format!("element id must be a non-negative integer, got `{arg}`")))
}

fn no_args(verb: &str, rest: &str) -> Result<(), ActionParseError> {
    match rest.trim() {
        "" | "[]" => Ok(()),
        other => Err(malformed(verb, format!("takes no arguments, got `{other}`"))),
    }
}

fn enter_flag_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\[(?s)(.*)\]\s*\[\s*(?:press_enter_after\s*=\s*)?([01])\s*\]$").unwrap()
    })
}

fn parse_type(rest: &str) -> Result<Action, ActionParseError> {
    let (id_arg, remainder) = leading_arg("type", rest)?;
    let id_arg = id_arg.trim();
    let id = id_arg.parse().map_err(|_| {
        malformed("type", format!("element id must be a non-negative integer, got `{id_arg}`"))
    })?;
    let remainder = remainder.trim_end();
    if let Some(caps) = enter_flag_regex().captures(remainder) {
        return Ok(Action::Type {
            id,
            text: caps[1].to_string(),
            press_enter: &caps[2] == "1",
        });
    }
    let text = final_arg("type", remainder)?;
    Ok(Action::Type {
        id,
        text: text.to_string(),
        press_enter: true,
    })
}

fn legacy_id_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\bid=(\d+)").unwrap())
}

fn parse_legacy(
    verb: &str,
    rest: &str,
    policy_names: &HashSet<String>,
) -> Result<Action, ActionParseError> {
    if rest.starts_with('[') {
        let lowered = format!("{} {rest}", verb.to_ascii_lowercase());
        return match verb {
            "DONE" => parse_action(&lowered.replacen("done", "stop", 1), policy_names),
            _ => parse_action(&lowered, policy_names),
        };
    }
    match verb {
        "DONE" => Ok(Action::Stop {
            answer: rest.trim().to_string(),
        }),
        "CLICK" => {
            let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
            let id = if !digits.is_empty() {
                digits.parse().ok()
            } else {
                legacy_id_regex()
                    .captures(rest)
                    .and_then(|c| c[1].parse().ok())
            };
            id.map(|id| Action::Click { id })
                .ok_or_else(|| malformed(verb, "expected an element id"))
        }
        _ => {
            let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
            let id = digits
                .parse()
                .map_err(|_| malformed(verb, "expected an element id"))?;
            let tail = rest[digits.len()..].trim();
            let text = match (tail.find('"'), tail.rfind('"')) {
                (Some(open), Some(close)) if close > open => &tail[open + 1..close],
                _ => tail,
            };
            Ok(Action::Type {
                id,
                text: text.to_string(),
                press_enter: true,
            })
        }
    }
}

fn header_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(reason(?:ing)?|action)\s*:").unwrap())
}

fn clean_line(line: &str) -> &str {
    line.trim().trim_matches('`').trim()
}

/// Extract the reason and the first action from a raw model response laid out
/// as `REASON: ... ACTION: ...`.
pub fn parse_model_response(
    raw: &str,
    policy_names: &HashSet<String>,
) -> Result<ParsedResponse, ActionParseError> {
    let mut last_reason: Option<(usize, usize)> = None;
    let mut last_action: Option<(usize, usize)> = None;
    for caps in header_regex().captures_iter(raw) {
        let whole = caps.get(0).unwrap();
        if caps[1].eq_ignore_ascii_case("action") {
            last_action = Some((whole.start(), whole.end()));
        } else {
            last_reason = Some((whole.start(), whole.end()));
        }
    }

    let reason = match (last_reason, last_action) {
        (Some((_, r_end)), Some((a_start, _))) if r_end <= a_start => raw[r_end..a_start].trim(),
        (Some((_, r_end)), None) => raw[r_end..].trim(),
        _ => "",
    };

    let scan = |region: &str| -> Option<(Action, Vec<String>)> {
        let mut found: Option<Action> = None;
        let mut ignored = Vec::new();
        for line in region.lines().map(clean_line).filter(|l| !l.is_empty()) {
            if let Ok(action) = parse_action(line, policy_names) {
                match found {
                    None => found = Some(action),
                    Some(_) => ignored.push(line.to_string()),
                }
            }
        }
        found.map(|a| (a, ignored))
    };

    let after_header = last_action.map(|(_, end)| &raw[end..]);
    let hit = after_header.and_then(scan).or_else(|| scan(raw));
    match hit {
        Some((action, ignored)) => {
            // Without a REASON header the reason is empty even if text precedes ACTION.
            let reason = if last_reason.is_some() {
                reason.to_string()
            } else {
                String::new()
            };
            Ok(ParsedResponse {
                reason,
                action,
                ignored,
            })
        }
        None => Err(ActionParseError::NoActionFound),
    }
}
