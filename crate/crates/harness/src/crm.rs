//! The CRM task family: the sample policy library, its single-prompt
//! counterpart, gold scripts for the scripted provider, and replay of
//! recorded episodes.

use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use webstack_core::action::{render_action, Action};
use webstack_core::env::{EnvError, EvalResult};
use webstack_core::policy::{PolicyError, PolicyLibrary, PolicySpec};
use webstack_core::provider::Script;
use webstack_core::provider::Provider;
use webstack_core::stack::StackError;
use webstack_core::trace::Clock;
use webstack_crm::gold::{gold_segments, gold_trace};
use webstack_crm::scenario::{form_date, objective, FlightDetails, Passenger, Scenario, ScenarioKind};
use webstack_crm::simulator::CrmSimulator;

use crate::episode::{
    run_episode_with_clock, summarize_trace, AgentSetup, EpisodeMetrics, EpisodeRecord, TaskInfo, TraceRecord,
};

pub const ROOT_POLICY: &str = "crm_agent";
pub const FLAT_POLICY: &str = "flat_agent";
/// The single prompt holds every procedure, so it gets twice the default
/// budget.
pub const FLAT_PROMPT_BUDGET: usize = 8000;

const POLICY_SOURCES: [(&str, &str); 9] = [
    ("crm_agent", include_str!("../policies/crm/crm_agent.toml")),
    ("find_flight", include_str!("../policies/crm/find_flight.toml")),
    ("select_flights", include_str!("../policies/crm/select_flights.toml")),
    ("fill_passenger", include_str!("../policies/crm/fill_passenger.toml")),
    ("fill_payment", include_str!("../policies/crm/fill_payment.toml")),
    ("find_booking", include_str!("../policies/crm/find_booking.toml")),
    ("cancel_booking", include_str!("../policies/crm/cancel_booking.toml")),
    ("modify_passenger", include_str!("../policies/crm/modify_passenger.toml")),
    ("modify_flights", include_str!("../policies/crm/modify_flights.toml")),
];

/// The built-in CRM policies, root first.
pub fn sample_specs() -> Vec<PolicySpec> {
    POLICY_SOURCES
        .iter()
        .map(|(name, text)| {
            let spec = PolicySpec::from_toml(text).unwrap_or_else(|e| panic!("built-in policy {name}: {e}"));
            assert_eq!(spec.name, *name, "built-in policy file name");
            spec
        })
        .collect()
}

pub fn sample_library() -> PolicyLibrary {
    PolicyLibrary::from_specs(sample_specs()).expect("built-in policies form a valid library")
}

const PLACEHOLDERS: [&str; 4] = ["{base_actions}", "{policies}", "{examples}", "{response_format}"];

fn strip_placeholders(text: &str) -> String {
    let mut out = text.to_string();
    for p in PLACEHOLDERS {
        out = out.replace(p, "");
    }
    out.trim().to_string()
}

/// One prompt doing the work of a whole library: every procedure's
/// instruction, and every example whose action is a page operation or a
/// stop, with no subroutines to call.
pub fn flat_spec(specs: &[PolicySpec], root: &str) -> PolicySpec {
    let mut instruction = String::from(
        "You are an agent working in an airline customer-service web application. \
Handle the customer request from start to finish using page operations only. \
The procedures below describe each part of the work; carry out the parts in order. \
Stop once every part of the request is done.\n",
    );
    let mut examples = Vec::new();
    for spec in specs {
        if spec.name != root {
            instruction.push_str(&format!(
                "\nProcedure {}: {}\n{}\n",
                spec.name,
                spec.description,
                strip_placeholders(&spec.instruction)
            ));
        }
        for ex in &spec.examples {
            let action_line = ex.rsplit("ACTION:").next().unwrap_or("").trim();
            let verb = action_line.split([' ', '[']).next().unwrap_or("");
            let is_call = specs.iter().any(|s| s.name == verb);
            if !is_call {
                examples.push(ex.clone());
            }
        }
    }
    instruction.push_str("\n{base_actions}\n\n{examples}\n\n{response_format}\n");
    PolicySpec {
        name: FLAT_POLICY.to_string(),
        description: "Handles a customer request in the airline CRM with page operations only.".to_string(),
        instruction,
        examples,
        callable: Vec::new(),
        prompt_budget: FLAT_PROMPT_BUDGET,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    /// Root policy delegating to subroutine policies.
    Stacked,
    /// One policy holding all procedures.
    Flat,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Stacked => "stacked",
            AgentKind::Flat => "flat",
        }
    }
}

impl std::fmt::Display for AgentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown agent `{0}` (expected stacked or flat)")]
pub struct UnknownAgent(pub String);

impl FromStr for AgentKind {
    type Err = UnknownAgent;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "stacked" => Ok(AgentKind::Stacked),
            "flat" => Ok(AgentKind::Flat),
            _ => Err(UnknownAgent(s.to_string())),
        }
    }
}

/// Agent for the CRM tasks. `policies_dir` replaces the built-in library;
/// its root policy must be named [`ROOT_POLICY`].
pub fn crm_agent(kind: AgentKind, policies_dir: Option<&Path>) -> Result<AgentSetup, PolicyError> {
    let specs = match policies_dir {
        Some(dir) => {
            let lib = PolicyLibrary::load_dir(dir)?;
            lib.lookup(ROOT_POLICY)?;
            let mut specs: Vec<PolicySpec> = lib.specs().map(|s| (**s).clone()).collect();
            specs.sort_by_key(|s| (s.name != ROOT_POLICY, s.name.clone()));
            specs
        }
        None => sample_specs(),
    };
    Ok(match kind {
        AgentKind::Stacked => AgentSetup::new(Arc::new(PolicyLibrary::from_specs(specs)?), ROOT_POLICY),
        AgentKind::Flat => {
            let flat = flat_spec(&specs, ROOT_POLICY);
            AgentSetup::new(Arc::new(PolicyLibrary::from_specs([flat])?), FLAT_POLICY)
        }
    })
}

fn reply(reason: &str, action: &Action) -> String {
    format!("REASON:\n{reason}\nACTION:\n{}", render_action(action))
}

fn reason_for(action: &Action) -> String {
    match action {
        Action::Click { id } => format!("Element {id} moves the task forward."),
        Action::Type { id, .. } => format!("Field {id} needs this value."),
        Action::PolicyCall { name, .. } => format!("This part of the request is handled by {name}."),
        Action::Stop { .. } => "Everything asked for is done.".to_string(),
        other => format!("Next step: {}.", other.verb()),
    }
}

fn call(name: &str, query: String) -> Action {
    Action::PolicyCall {
        name: name.to_string(),
        query,
    }
}

fn stop(answer: &str) -> Action {
    Action::Stop {
        answer: answer.to_string(),
    }
}

fn search_query(f: &FlightDetails) -> String {
    format!(
        "Search flights from {} to {} departing {} and returning {}",
        f.from,
        f.to,
        form_date(&f.departure),
        form_date(&f.return_date)
    )
}

fn select_query(f: &FlightDetails) -> String {
    format!(
        "Pick the outward flight departing {} arriving {} and the return flight departing {} arriving {}",
        f.outward_departure_time, f.outward_arrival_time, f.return_departure_time, f.return_arrival_time
    )
}

fn passenger_query(p: &Passenger) -> String {
    format!(
        "Title {}, first name {}, last name {}, gender {}, date of birth {}",
        p.title,
        p.first_name,
        p.last_name,
        p.gender,
        form_date(&p.date_of_birth)
    )
}

/// Replies that make the agent carry out the scenario's gold actions.
pub fn gold_script(scenario: &Scenario, kind: AgentKind) -> Script {
    let mut script = Script::default();
    match kind {
        AgentKind::Flat => {
            for a in gold_trace(scenario) {
                script.push(FLAT_POLICY, reply(&reason_for(&a), &a));
            }
            script.push(FLAT_POLICY, reply(&reason_for(&stop("")), &stop("")));
        }
        AgentKind::Stacked => stacked_script(scenario, &mut script),
    }
    script
}

fn stacked_script(scenario: &Scenario, script: &mut Script) {
    let d = &scenario.details;
    let segments = gold_segments(scenario);
    let reference = d.booking.as_ref().map(|b| b.reference.clone()).unwrap_or_default();
    let flight = d.flight.as_ref();
    let mut root_calls: Vec<Action> = Vec::new();
    // Each leaf policy performs its segments' actions and stops with `answer`.
    let leaf = |script: &mut Script, name: &str, query: String, seg: &[usize], answer: &str| {
        for &i in seg {
            for a in &segments[i].actions {
                script.push(name, reply(&reason_for(a), a));
            }
        }
        script.push(name, reply(&reason_for(&stop(answer)), &stop(answer)));
        call(name, query)
    };
    let find_booking = format!("Open booking {reference}");
    match scenario.kind {
        ScenarioKind::FindFlight => {
            let f = flight.expect("flight details");
            root_calls.push(leaf(script, "find_flight", search_query(f), &[0], "Results are shown"));
        }
        ScenarioKind::BookFlight => {
            let f = flight.expect("flight details");
            let pay = d.payment.as_ref().expect("payment details");
            root_calls.push(leaf(script, "find_flight", search_query(f), &[0], "Results are shown"));
            root_calls.push(leaf(script, "select_flights", select_query(f), &[1], "Flights confirmed"));
            root_calls.push(leaf(
                script,
                "fill_passenger",
                passenger_query(d.passenger.as_ref().expect("passenger details")),
                &[2],
                "Passenger saved",
            ));
            root_calls.push(leaf(
                script,
                "fill_payment",
                format!("Card number {}, expiry {}, CVC {}", pay.card_number, pay.expiry, pay.cvc),
                &[3],
                "Booking confirmed",
            ));
        }
        ScenarioKind::FindBooking => {
            root_calls.push(leaf(script, "find_booking", find_booking, &[0], "Booking is open"));
        }
        ScenarioKind::CancelBooking => {
            root_calls.push(leaf(script, "find_booking", find_booking, &[0], "Booking is open"));
            root_calls.push(leaf(
                script,
                "cancel_booking",
                format!("Cancel booking {reference}"),
                &[1, 2],
                "Booking cancelled",
            ));
        }
        ScenarioKind::ModifyPassenger => {
            root_calls.push(leaf(script, "find_booking", find_booking, &[0], "Booking is open"));
            root_calls.push(leaf(
                script,
                "modify_passenger",
                passenger_query(d.passenger.as_ref().expect("passenger details")),
                &[1, 2],
                "Passenger updated",
            ));
        }
        ScenarioKind::ModifyFlights => {
            let f = flight.expect("flight details");
            root_calls.push(leaf(script, "find_booking", find_booking, &[0], "Booking is open"));
            // The middle policy clicks through itself and delegates the rest.
            for a in &segments[1].actions {
                script.push("modify_flights", reply(&reason_for(a), a));
            }
            let search = leaf(script, "find_flight", search_query(f), &[2], "Results are shown");
            let select = leaf(script, "select_flights", select_query(f), &[3], "Flights saved");
            for a in [search, select, stop("Flights changed")] {
                script.push("modify_flights", reply(&reason_for(&a), &a));
            }
            root_calls.push(call(
                "modify_flights",
                format!("Change booking {reference} to: {} and {}", search_query(f), select_query(f)),
            ));
        }
    }
    root_calls.push(stop(""));
    for a in root_calls {
        script.push(ROOT_POLICY, reply(&reason_for(&a), &a));
    }
}

pub fn task_info(scenario: &Scenario, seed: Option<u64>, agent: AgentKind) -> TaskInfo {
    TaskInfo {
        kind: scenario.kind.name().to_string(),
        seed,
        agent: agent.name().to_string(),
        scenario: Some(serde_json::to_value(scenario).expect("scenario serializes")),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CrmRunError {
    #[error(transparent)]
    Stack(#[from] StackError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Runs one scenario on a fresh simulator.
pub fn run_crm_episode(
    scenario: &Scenario,
    seed: Option<u64>,
    agent_kind: AgentKind,
    agent: &AgentSetup,
    provider: &dyn Provider,
    clock: Arc<dyn Clock>,
) -> Result<EpisodeRecord, CrmRunError> {
    let sim = CrmSimulator::new();
    sim.register(scenario.clone())?;
    let mut env = sim.episode(&scenario.id)?;
    let task = task_info(scenario, seed, agent_kind);
    Ok(run_episode_with_clock(&mut env, agent, &objective(scenario), provider, task, clock)?)
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("trace has no episode_start record")]
    MissingStart,
    #[error("trace has no episode_end record")]
    MissingEnd,
    #[error("episode_start holds no scenario document")]
    MissingScenario,
    #[error("invalid scenario document: {0}")]
    Scenario(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Metrics recomputed from a trace next to the ones it recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub recomputed: EpisodeMetrics,
    pub recorded: EpisodeMetrics,
    pub evaluation: EvalResult,
}

impl ReplayReport {
    pub fn matches(&self) -> bool {
        self.recomputed == self.recorded
    }
}

/// Re-executes the recorded page operations on a fresh simulator and
/// recomputes every metric from the trace alone.
pub fn replay_crm(records: &[TraceRecord]) -> Result<ReplayReport, ReplayError> {
    let summary = summarize_trace(records);
    let task = summary.task.as_ref().ok_or(ReplayError::MissingStart)?;
    let recorded = summary.recorded.clone().ok_or(ReplayError::MissingEnd)?;
    let doc = task.scenario.clone().ok_or(ReplayError::MissingScenario)?;
    let scenario: Scenario = serde_json::from_value(doc).map_err(|e| ReplayError::Scenario(e.to_string()))?;
    let sim = CrmSimulator::new();
    sim.register(scenario.clone())?;
    for action in &summary.actions {
        match sim.apply(&scenario.id, action) {
            Ok(_) => {}
            Err(e) if e.is_action_error() => {}
            Err(e) => return Err(e.into()),
        }
    }
    let evaluation = sim.evaluate(&scenario.id)?;
    let recomputed = EpisodeMetrics {
        suc: if summary.failure.is_some() { 0 } else { evaluation.success },
        prog: evaluation.task_progress,
        num_actions: summary.num_actions,
        prompt_tokens_total: summary.prompt_tokens_total,
        completion_tokens_total: summary.completion_tokens_total,
        failure: summary.failure,
    };
    Ok(ReplayReport {
        recomputed,
        recorded,
        evaluation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use webstack_core::provider::ScriptedProvider;
    use webstack_core::trace::LogicalClock;
    use webstack_crm::scenario::generate_scenario;

    fn run(kind: ScenarioKind, seed: u64, agent: AgentKind) -> EpisodeRecord {
        let sc = generate_scenario(kind, seed);
        let setup = crm_agent(agent, None).unwrap();
        let provider = ScriptedProvider::new(gold_script(&sc, agent));
        run_crm_episode(&sc, Some(seed), agent, &setup, &provider, Arc::new(LogicalClock::new())).unwrap()
    }

    #[test]
    fn library_loads_with_root_first() {
        let specs = sample_specs();
        assert_eq!(specs[0].name, ROOT_POLICY);
        let lib = sample_library();
        assert_eq!(lib.len(), 9);
        assert_eq!(lib.callable_names(&specs[0]).len(), 8);
    }

    #[test]
    fn flat_prompt_has_no_subroutines() {
        let flat = flat_spec(&sample_specs(), ROOT_POLICY);
        assert!(flat.callable.is_empty());
        assert_eq!(flat.prompt_budget, FLAT_PROMPT_BUDGET);
        for p in PLACEHOLDERS {
            assert_eq!(flat.instruction.matches(p).count(), usize::from(p != "{policies}"));
        }
        for ex in &flat.examples {
            assert!(!ex.contains("ACTION:\nfind_flight ["), "{ex}");
        }
    }

    #[test]
    fn agent_names_parse() {
        assert_eq!("Flat".parse::<AgentKind>().unwrap(), AgentKind::Flat);
        assert!("deep".parse::<AgentKind>().is_err());
    }

    #[test]
    fn gold_scripts_solve_every_kind_both_ways() {
        for kind in ScenarioKind::ALL {
            for agent in [AgentKind::Stacked, AgentKind::Flat] {
                let r = run(kind, 4, agent);
                assert_eq!((r.metrics.suc, r.metrics.prog), (1, 1.0), "{kind} {agent}: {:?}", r.failure_message);
                assert_eq!(r.metrics.failure, None);
            }
        }
    }

    #[test]
    fn modify_flights_goes_three_deep() {
        assert_eq!(run(ScenarioKind::ModifyFlights, 2, AgentKind::Stacked).max_depth, 3);
        assert_eq!(run(ScenarioKind::BookFlight, 2, AgentKind::Stacked).max_depth, 2);
        assert_eq!(run(ScenarioKind::BookFlight, 2, AgentKind::Flat).max_depth, 1);
    }

    #[test]
    fn replay_reproduces_live_metrics() {
        let r = run(ScenarioKind::CancelBooking, 7, AgentKind::Stacked);
        let report = replay_crm(&r.trace).unwrap();
        assert!(report.matches(), "{report:?}");
        assert_eq!(report.recomputed, r.metrics);
    }

    #[test]
    fn replay_notices_a_tampered_trace() {
        let mut r = run(ScenarioKind::FindBooking, 7, AgentKind::Stacked);
        r.trace.retain(|t| !matches!(t, TraceRecord::EnvAction { .. }));
        let report = replay_crm(&r.trace).unwrap();
        assert!(!report.matches());
        assert_eq!(report.recomputed.prog, 0.0);
    }
}
