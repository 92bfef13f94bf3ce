//! Contract between the agent loop and a web environment.

use serde::{Deserialize, Serialize};

use crate::action::{Action, ElementId};
use crate::observation::Observation;

/// Outcome of evaluating an episode against its task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// 1 when the task was fully and correctly completed, else 0.
    pub success: u8,
    /// Fraction of the task's subgoals reached in order, in `[0, 1]`.
    pub task_progress: f64,
    pub subgoals_hit: Vec<String>,
}

impl EvalResult {
    pub fn zero() -> Self {
        EvalResult {
            success: 0,
            task_progress: 0.0,
            subgoals_hit: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnvError {
    #[error("no element with id {0} on the current page")]
    NoSuchElement(ElementId),
    #[error("the scenario is already finished")]
    ScenarioFinished,
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("`{0}` is not a page operation")]
    NotAPageAction(String),
    #[error("environment failure: {0}")]
    Other(String),
}

impl EnvError {
    /// Errors caused by the chosen action rather than by the environment
    /// itself. An episode can continue after these.
    pub fn is_action_error(&self) -> bool {
        matches!(
            self,
            EnvError::NoSuchElement(_) | EnvError::ScenarioFinished | EnvError::NotAPageAction(_)
        )
    }
}

/// A single web task instance the agent interacts with.
pub trait Environment {
    /// The current page.
    fn observe(&self) -> Result<Observation, EnvError>;
    /// Performs a page operation and returns the resulting page.
    fn apply(&mut self, action: &Action) -> Result<Observation, EnvError>;
    fn evaluate(&self) -> Result<EvalResult, EnvError>;
}
