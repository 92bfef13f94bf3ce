//! Action generators and the listed example actions.

use std::collections::HashSet;

use proptest::prelude::*;
use webstack_core::action::{Action, ScrollDirection, RESERVED_VERBS};

pub const EXAMPLE_ACTIONS: &str = include_str!("../data/example_actions.txt");

pub const LIBRARY_NAMES: [&str; 14] = [
    "find_commits",
    "search_issues",
    "create_project",
    "create_group",
    "find_subreddit",
    "find_user",
    "find_customer_review",
    "find_order",
    "search_customer",
    "search_order",
    "list_products",
    "search_reviews",
    "find_directions",
    "search_nearest_place",
];

pub fn library_names() -> HashSet<String> {
    LIBRARY_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Entries are separated by blank lines; an entry wrapped over several lines
/// is joined with single spaces.
pub fn example_entries() -> Vec<String> {
    EXAMPLE_ACTIONS
        .split("\n\n")
        .map(|block| block.lines().map(str::trim).collect::<Vec<_>>().join(" "))
        .filter(|e| !e.is_empty())
        .collect()
}

pub fn line_text() -> impl Strategy<Value = String> {
    // Any characters except line breaks, including brackets.
    "[^\n\r]{0,24}"
}

pub fn policy_name() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,14}".prop_filter("reserved verb", |n| !RESERVED_VERBS.contains(&n.as_str()))
}

pub fn any_action() -> impl Strategy<Value = Action> {
    prop_oneof![
        any::<u64>().prop_map(|id| Action::Click { id }),
        (any::<u64>(), line_text(), any::<bool>()).prop_map(|(id, text, press_enter)| Action::Type {
            id,
            text,
            press_enter
        }),
        any::<u64>().prop_map(|id| Action::Hover { id }),
        line_text().prop_map(|key_combo| Action::Press { key_combo }),
        prop_oneof![Just(ScrollDirection::Up), Just(ScrollDirection::Down)]
            .prop_map(|direction| Action::Scroll { direction }),
        line_text().prop_map(|content| Action::Note { content }),
        Just(Action::GoBack),
        Just(Action::GoForward),
        line_text().prop_map(|url| Action::Goto { url }),
        Just(Action::NewTab),
        any::<u64>().prop_map(|index| Action::TabFocus { index }),
        Just(Action::CloseTab),
        (policy_name(), line_text()).prop_map(|(name, query)| Action::PolicyCall { name, query }),
        line_text().prop_map(|answer| Action::Stop { answer }),
    ]
}

/// The policy names a parser must know to read `action` back.
pub fn names_for(action: &Action) -> HashSet<String> {
    match action {
        Action::PolicyCall { name, .. } => HashSet::from([name.clone()]),
        _ => HashSet::new(),
    }
}
