use std::collections::HashSet;
use std::sync::Arc;
use std::time::Instant;

use webstack_core::action::Action;
use webstack_core::policy::{format_history, HistoryEntry, PolicyFrame, PolicyLibrary, PolicySpec};
use webstack_core::provider::{Script, ScriptedProvider};
use webstack_core::stack::{FailureKind, Limits, StackState, StepOutcome};
use webstack_core::trace::{LogicalClock, NullSink, StepEvent};
use webstack_core::observation::{Observation, WebElement};

mod support;
use support::random_episodes;

#[test]
fn randomized_episodes_obey_the_laws() {
    let start = Instant::now();
    let mut pushes = 0;
    let mut pops = 0;
    let mut kinds = HashSet::new();
    for seed in 0..600 {
        let report = random_episodes::run(seed);
        assert!(report.auditor.is_clean(), "seed {seed}: {:?}", report.auditor.violations());
        pushes += report.auditor.pushes();
        pops += report.auditor.pops();
        if let Some(StepOutcome::Failed { kind, .. }) = report.outcomes.last() {
            kinds.insert(*kind);
        }
    }
    // The generator must actually exercise pushes, pops and the guards.
    assert!(pushes > 100 && pops > 50, "pushes {pushes}, pops {pops}");
    for kind in [
        FailureKind::DepthExceeded,
        FailureKind::EnvActionBudgetExceeded,
        FailureKind::ScriptExhausted,
        FailureKind::UnparseableResponse,
    ] {
        assert!(kinds.contains(&kind), "{kind} never happened");
    }
    assert!(start.elapsed().as_secs() < 10);
}

#[test]
fn randomized_episodes_are_deterministic() {
    for seed in 0..50 {
        let a = random_episodes::run(seed);
        let b = random_episodes::run(seed);
        assert_eq!(a.outcomes, b.outcomes);
        assert_eq!(a.final_frames, b.final_frames);
    }
}

fn spec(name: &str, callable: &[&str]) -> PolicySpec {
    PolicySpec {
        name: name.into(),
        description: format!("{name} helper"),
        instruction: "Operate the page.".into(),
        examples: Vec::new(),
        callable: callable.iter().map(|s| s.to_string()).collect(),
        prompt_budget: 4000,
    }
}

fn page() -> Observation {
    Observation::new("http://crm/", vec![WebElement::new(4, "input_text").attr("val", "reference")])
}

#[test]
fn push_then_page_operation() {
    let lib = Arc::new(PolicyLibrary::from_specs([spec("root", &["find_booking"]), spec("find_booking", &[])]).unwrap());
    let mut script = Script::default();
    script.push("root", "ACTION: find_booking [ref ABC123]");
    script.push("find_booking", "ACTION: type [4] [ABC123] [1]");
    let provider = ScriptedProvider::new(script);
    let mut state = StackState::new(lib, "root", "Find booking ABC123", Limits::default()).unwrap();
    let out = state.step(&page(), &provider, &mut NullSink);
    assert_eq!(
        out,
        StepOutcome::EnvAction {
            action: Action::Type { id: 4, text: "ABC123".into(), press_enter: true },
            reason: String::new()
        }
    );
    assert_eq!(state.depth(), 2);
}

#[test]
fn pop_hands_value_to_parent() {
    let lib = Arc::new(PolicyLibrary::from_specs([spec("root", &["child"]), spec("child", &[])]).unwrap());
    let provider = ScriptedProvider::sequence(["ACTION: child [look]", "ACTION: stop [N/A]", "ACTION: click [9]"]);
    let mut state = StackState::new(lib, "root", "o", Limits::default()).unwrap();
    let mut events: Vec<StepEvent> = Vec::new();
    let out = state.step(&page(), &provider, &mut events);
    assert_eq!(out, StepOutcome::EnvAction { action: Action::Click { id: 9 }, reason: String::new() });
    assert_eq!(state.depth(), 1);
    let history = state.top().history();
    assert_eq!(
        history[1],
        HistoryEntry::ChildReturned { name: "child".into(), query: "look".into(), value: "N/A".into() }
    );
    assert_eq!(events.len(), 3);
}

#[test]
fn root_stop_finishes_and_self_calls_hit_the_depth_guard() {
    let lib = Arc::new(PolicyLibrary::from_specs([spec("root", &["root"])]).unwrap());
    let provider = ScriptedProvider::sequence(["ACTION: stop [Closed]"]);
    let mut state = StackState::new(lib.clone(), "root", "o", Limits::default()).unwrap();
    assert_eq!(state.step(&page(), &provider, &mut NullSink), StepOutcome::Finished { answer: "Closed".into() });

    let provider = ScriptedProvider::sequence(vec!["ACTION: root [again]"; 20]);
    let limits = Limits { max_depth: 4, max_internal_transitions: 10, max_env_actions: 5 };
    let mut state = StackState::new(lib, "root", "o", limits).unwrap();
    let out = state.step(&page(), &provider, &mut NullSink);
    assert!(matches!(out, StepOutcome::Failed { kind: FailureKind::DepthExceeded, .. }));
    assert_eq!(state.depth(), 4);
}

#[test]
fn unknown_root_is_rejected() {
    let lib = Arc::new(PolicyLibrary::from_specs([spec("root", &[])]).unwrap());
    assert!(StackState::new(lib, "ghost", "o", Limits::default()).is_err());
}

#[test]
fn traces_repeat_byte_for_byte() {
    let run = || {
        let lib = Arc::new(PolicyLibrary::from_specs([spec("root", &["child"]), spec("child", &[])]).unwrap());
        let provider = ScriptedProvider::sequence(["ACTION: child [x]", "ACTION: click [1]", "ACTION: stop [v]", "ACTION: stop [done]"]);
        let mut state = StackState::new(lib, "root", "o", Limits::default())
            .unwrap()
            .with_clock(Arc::new(LogicalClock::new()));
        let mut events: Vec<StepEvent> = Vec::new();
        while let StepOutcome::EnvAction { .. } = state.step(&page(), &provider, &mut events) {}
        serde_json::to_string(&events).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn history_matches_golden_file() {
    let lib = PolicyLibrary::from_specs([spec("root", &["find_commits"]), spec("find_commits", &[])]).unwrap();
    let mut frame = PolicyFrame::new(lib.lookup("root").unwrap().clone(), "Count commits");
    frame.append(HistoryEntry::observed(&page()));
    frame.append(HistoryEntry::Acted { reason: "open".into(), action: Action::Click { id: 7 } });
    frame.append(HistoryEntry::ChildReturned {
        name: "find_commits".into(),
        query: "How many commits did user make on 03/23/2023?".into(),
        value: "8 commits".into(),
    });
    frame.append(HistoryEntry::Acted {
        reason: String::new(),
        action: Action::Type { id: 3, text: "done".into(), press_enter: false },
    });
    frame.append(HistoryEntry::ChildReturned { name: "find_commits".into(), query: "again".into(), value: String::new() });
    assert_eq!(format!("{}\n", format_history(&frame)), include_str!("data/history.golden"));
}
