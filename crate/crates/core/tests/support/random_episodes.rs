//! Randomized scripted episodes for checking the stack laws.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use webstack_core::audit::LawAuditor;
use webstack_core::observation::{Observation, WebElement};
use webstack_core::policy::{PolicyLibrary, PolicySpec};
use webstack_core::provider::ScriptedProvider;
use webstack_core::stack::{Limits, StackState, StepOutcome};
use webstack_core::trace::LogicalClock;

const POLICIES: [&str; 4] = ["root", "alpha", "beta", "gamma"];

pub struct EpisodeReport {
    pub auditor: LawAuditor,
    pub outcomes: Vec<StepOutcome>,
    pub final_frames: String,
}

fn library(rng: &mut ChaCha8Rng) -> PolicyLibrary {
    let specs = POLICIES.iter().map(|name| {
        let callable = POLICIES
            .iter()
            .filter(|_| rng.random_bool(0.6))
            .map(|s| s.to_string())
            .collect();
        PolicySpec {
            name: name.to_string(),
            description: format!("handles {name} work"),
            instruction: "Operate the page.".into(),
            examples: Vec::new(),
            callable,
            prompt_budget: 4000,
        }
    });
    PolicyLibrary::from_specs(specs.collect::<Vec<_>>()).expect("valid library")
}

fn reply(rng: &mut ChaCha8Rng) -> String {
    let action = match rng.random_range(0..10) {
        0..=2 => format!("click [{}]", rng.random_range(0..20)),
        3 => format!("type [{}] [v{}] [0]", rng.random_range(0..20), rng.random_range(0..99)),
        4..=5 => format!("{} [q{}]", POLICIES[rng.random_range(0..4)], rng.random_range(0..99)),
        6..=7 => format!("stop [r{}]", rng.random_range(0..99)),
        8 => "stop []".to_string(),
        _ => "gibberish".to_string(),
    };
    format!("REASON:\nstep {}\nACTION:\n{action}", rng.random_range(0..1000))
}

fn page(step: usize) -> Observation {
    Observation::new(
        format!("http://test/{step}"),
        vec![
            WebElement::new(1, "button").text("Go"),
            WebElement::new(2, "input_text").attr("val", format!("field-{step}")),
        ],
    )
}

/// Runs one episode from `seed` with the auditor attached.
pub fn run(seed: u64) -> EpisodeReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let library = Arc::new(library(&mut rng));
    let limits = Limits {
        max_depth: rng.random_range(2..6),
        max_internal_transitions: rng.random_range(2..8),
        max_env_actions: rng.random_range(1..10),
    };
    let replies: Vec<String> = (0..rng.random_range(0..40)).map(|_| reply(&mut rng)).collect();
    let provider = ScriptedProvider::sequence(replies);
    let mut state = StackState::new(library, "root", "randomized objective", limits)
        .expect("root exists")
        .with_clock(Arc::new(LogicalClock::new()));
    let mut auditor = LawAuditor::new();
    let mut outcomes = Vec::new();
    for step in 0.. {
        let obs = page(step);
        auditor.begin_step(&state, &obs);
        let outcome = state.step(&obs, &provider, &mut auditor);
        let done = !matches!(outcome, StepOutcome::EnvAction { .. });
        outcomes.push(outcome);
        if done {
            break;
        }
    }
    let final_frames = format!("{:?}", state.snapshot());
    EpisodeReport {
        auditor,
        outcomes,
        final_frames,
    }
}
