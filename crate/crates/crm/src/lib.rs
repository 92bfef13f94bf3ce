//! A deterministic airline customer-service web application for exercising
//! web agents: randomized scenarios, page transitions, gold action sequences
//! and an evaluator for success and task progress.

pub mod evaluate;
pub mod gold;
pub mod scenario;
pub mod service;
pub mod simulator;

pub use evaluate::subgoals;
pub use gold::{gold_segments, gold_trace, GoldSegment};
pub use scenario::{
    generate_random_scenario, generate_scenario, objective, reference_instance, Scenario, ScenarioKind,
};
pub use simulator::{ids, CrmEpisode, CrmSimulator, Screen};
