//! A deterministic labelling provider for demonstration steps, driven by
//! simple rules over the label prompt. Stands in for a model when the
//! labelling pipeline runs offline.

use webstack_core::action::{parse_action_lenient, Action};
use webstack_core::observation::{estimate_tokens, parse_elements, WebElement};
use webstack_core::provider::{CompletionRequest, CompletionResult, Provider, ProviderError, Usage};

/// Labels a step as:
/// - `CHOOSE_DATE <field> <text>` when typing into a field whose name
///   mentions a date;
/// - `FILL_TEXT <field> "<text>"` for any other typing;
/// - the previous label when clicking a list entry (`li`, `option`, `td`),
///   which completes the field being filled;
/// - `CLICK <element text>` for any other click.
#[derive(Debug, Default, Clone, Copy)]
pub struct RuleLabeler;

/// Body of the section under `header`, up to the next all-caps header line.
fn section<'a>(prompt: &'a str, header: &str) -> Option<&'a str> {
    let marker = format!("\n{header}:\n");
    let start = prompt.rfind(&marker)? + marker.len();
    let rest = &prompt[start..];
    let end = rest
        .match_indices('\n')
        .map(|(i, _)| i)
        .find(|&i| {
            let line = rest[i + 1..].lines().next().unwrap_or("");
            line.ends_with(':') && line.chars().all(|c| c.is_ascii_uppercase() || c == ' ' || c == ':')
        })
        .unwrap_or(rest.len());
    Some(&rest[..end])
}

fn field_name(e: &WebElement) -> String {
    e.attributes
        .get("val")
        .or_else(|| e.attributes.get("name"))
        .cloned()
        .unwrap_or_else(|| e.text.clone())
}

fn element_label(e: &WebElement) -> String {
    if !e.text.is_empty() {
        e.text.clone()
    } else {
        e.attributes
            .get("title")
            .or_else(|| e.attributes.get("val"))
            .cloned()
            .unwrap_or_else(|| e.tag.clone())
    }
}

pub fn label_for(elements: &[WebElement], action: &Action, previous: &str) -> String {
    let find = |id| elements.iter().find(|e| e.id == id);
    match action {
        Action::Type { id, text, .. } => {
            let field = find(*id).map(field_name).unwrap_or_else(|| id.to_string());
            if field.to_ascii_lowercase().contains("date") {
                format!("CHOOSE_DATE {field} {text}")
            } else {
                format!("FILL_TEXT {field} \"{text}\"")
            }
        }
        Action::Click { id } => match find(*id) {
            Some(e) if matches!(e.tag.as_str(), "li" | "option" | "td") && !previous.is_empty() => {
                previous.to_string()
            }
            Some(e) => format!("CLICK {}", element_label(e)),
            None => format!("CLICK {id}"),
        },
        _ if !previous.is_empty() => previous.to_string(),
        other => format!("CLICK {}", other.verb()),
    }
}

impl Provider for RuleLabeler {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, ProviderError> {
        let prompt = &req.prompt;
        let missing = |what: &str| ProviderError::InvalidRequest(format!("label prompt has no {what} section"));
        let content = section(prompt, "BROWSER CONTENT").ok_or_else(|| missing("BROWSER CONTENT"))?;
        let action_text = section(prompt, "CURRENT ACTION").ok_or_else(|| missing("CURRENT ACTION"))?;
        let previous = section(prompt, "PREVIOUS LABEL").unwrap_or("").trim();
        let elements = parse_elements(content).map_err(|e| ProviderError::InvalidRequest(e.to_string()))?;
        let action = parse_action_lenient(action_text).map_err(|e| ProviderError::InvalidRequest(e.to_string()))?;
        let reply = format!("CURRENT LABEL:\n{}", label_for(&elements, &action, previous));
        Ok(CompletionResult {
            usage: Usage {
                prompt_tokens: estimate_tokens(prompt) as u64,
                completion_tokens: estimate_tokens(&reply) as u64,
            },
            candidates: vec![reply],
        })
    }
}
