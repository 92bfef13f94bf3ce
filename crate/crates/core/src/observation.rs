//! Simplified web pages: salient elements plus URL, and their text form.
//!
//! Each element occupies one line. Elements whose only attribute is `val`
//! and whose text is empty use the compact form `<tag id=N val=V />`; all
//! others use `<tag id=N key="v" ...>text</tag>` (or `... />` when the text is
//! empty). Backslashes, quotes and line breaks inside values are escaped so
//! the text form can always be parsed back.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::action::ElementId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WebElement {
    pub id: ElementId,
    pub tag: String,
    #[serde(default)]
    pub attributes: IndexMap<String, String>,
    #[serde(default)]
    pub text: String,
}

impl WebElement {
    pub fn new(id: ElementId, tag: impl Into<String>) -> Self {
        WebElement {
            id,
            tag: tag.into(),
            attributes: IndexMap::new(),
            text: String::new(),
        }
    }

    pub fn attr(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.attributes.insert(key.into(), value.into());
        self
    }

    pub fn text(mut self, text: impl Into<String>) -> Self {
        self.text = text.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Observation {
    pub elements: Vec<WebElement>,
    pub url: String,
}

impl Observation {
    pub fn new(url: impl Into<String>, elements: Vec<WebElement>) -> Self {
        Observation {
            elements,
            url: url.into(),
        }
    }

    pub fn element(&self, id: ElementId) -> Option<&WebElement> {
        self.elements.iter().find(|e| e.id == id)
    }

    /// Element ids must be unique within one page.
    pub fn has_unique_ids(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.elements.iter().all(|e| seen.insert(e.id))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {reason}")]
pub struct ObservationParseError {
    pub line: usize,
    pub reason: String,
}

fn escape_into(out: &mut String, value: &str, quote: bool) {
    for c in value.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '"' if quote => out.push_str("\\\""),
            c => out.push(c),
        }
    }
}

fn is_compact(element: &WebElement) -> bool {
    element.text.is_empty()
        && element.attributes.len() == 1
        && element.attributes.contains_key("val")
}

pub fn serialize_element(element: &WebElement) -> String {
    let mut out = format!("<{} id={}", element.tag, element.id);
    if is_compact(element) {
        out.push_str(" val=");
        escape_into(&mut out, &element.attributes["val"], true);
        out.push_str(" />");
        return out;
    }
    for (key, value) in &element.attributes {
        out.push(' ');
        out.push_str(key);
        out.push_str("=\"");
        escape_into(&mut out, value, true);
        out.push('"');
    }
    if element.text.is_empty() {
        out.push_str(" />");
    } else {
        out.push('>');
        escape_into(&mut out, &element.text, false);
        out.push_str("</");
        out.push_str(&element.tag);
        out.push('>');
    }
    out
}

/// One line per element, in document order. No trailing newline.
pub fn serialize_elements(obs: &Observation) -> String {
    obs.elements
        .iter()
        .map(serialize_element)
        .collect::<Vec<_>>()
        .join("\n")
}

fn unescape(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut chars = raw.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

/// Inverse of [`serialize_elements`]. Blank lines are skipped. Also reads
/// bare attributes (`<input id=4 text/>`) as attributes with an empty value.
pub fn parse_elements(text: &str) -> Result<Vec<WebElement>, ObservationParseError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_element(l.trim()).map_err(|reason| ObservationParseError { line: i + 1, reason })
        })
        .collect()
}

fn parse_element(line: &str) -> Result<WebElement, String> {
    let body = line.strip_prefix('<').ok_or("expected `<`")?;
    let tag_end = body
        .find(|c: char| c.is_whitespace() || c == '>' || c == '/')
        .ok_or("missing id")?;
    let tag = &body[..tag_end];
    if tag.is_empty() {
        return Err("empty tag".into());
    }
    let rest = body[tag_end..]
        .strip_prefix(" id=")
        .ok_or("expected ` id=`")?;
    let digits_end = rest
        .find(|c: char| !c.is_ascii_digit())
        .unwrap_or(rest.len());
    let id: ElementId = rest[..digits_end]
        .parse()
        .map_err(|_| "id must be a non-negative integer".to_string())?;
    let mut rest = &rest[digits_end..];
    let mut element = WebElement::new(id, tag);

    // compact `val=` form: unquoted value running to the closing ` />`
    if let Some(after) = rest.strip_prefix(" val=") {
        if !after.starts_with('"') {
            let value = after
                .strip_suffix(" />")
                .ok_or("compact val element must end with ` />`")?;
            element.attributes.insert("val".into(), unescape(value));
            return Ok(element);
        }
    }

    loop {
        if rest == " />" || rest == "/>" {
            return Ok(element);
        }
        if let Some(after) = rest.strip_prefix('>') {
            let closing = format!("</{tag}>");
            let text = after
                .strip_suffix(closing.as_str())
                .ok_or_else(|| format!("missing `{closing}`"))?;
            element.text = unescape(text);
            return Ok(element);
        }
        let after_space = rest.strip_prefix(' ').ok_or("expected attribute")?;
        let key_end = after_space
            .find(|c: char| c.is_whitespace() || c == '=' || c == '>' || c == '/')
            .unwrap_or(after_space.len());
        let key = &after_space[..key_end];
        if key.is_empty() {
            return Err("empty attribute name".into());
        }
        let after_key = &after_space[key_end..];
        match after_key.strip_prefix("=\"") {
            Some(quoted) => {
                let mut end = None;
                let mut escaped = false;
                for (i, c) in quoted.char_indices() {
                    if escaped {
                        escaped = false;
                    } else if c == '\\' {
                        escaped = true;
                    } else if c == '"' {
                        end = Some(i);
                        break;
                    }
                }
                let end = end.ok_or("unterminated attribute value")?;
                element
                    .attributes
                    .insert(key.to_string(), unescape(&quoted[..end]));
                rest = &quoted[end + 1..];
            }
            None => {
                element.attributes.insert(key.to_string(), String::new());
                rest = after_key;
            }
        }
    }
}

/// Rough token count: one token per four characters, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

pub const TRUNCATION_MARKER: &str = "[truncated]";

/// Longest whole-line prefix of `text` fitting in `budget` tokens, followed by
/// a `[truncated]` line when anything was dropped. The marker counts against
/// the budget.
pub fn truncate_to_budget(text: &str, budget: usize) -> String {
    if estimate_tokens(text) <= budget {
        return text.to_string();
    }
    let max_chars = budget * 4;
    let marker_len = TRUNCATION_MARKER.chars().count();
    let lines: Vec<&str> = text.split('\n').collect();

    let mut kept = 0;
    let mut prefix_chars = 0;
    for (i, line) in lines.iter().enumerate() {
        let with_line = prefix_chars + line.chars().count() + usize::from(i > 0);
        if with_line + 1 + marker_len > max_chars {
            break;
        }
        prefix_chars = with_line;
        kept = i + 1;
    }

    if kept == 0 {
        return if marker_len <= max_chars {
            TRUNCATION_MARKER.to_string()
        } else {
            String::new()
        };
    }
    let mut out = lines[..kept].join("\n");
    out.push('\n');
    out.push_str(TRUNCATION_MARKER);
    out
}
