//! A web agent built from prompted policies that call each other through a
//! stack, plus the pieces needed to run it offline.

pub mod action;
pub mod audit;
pub mod autolabel;
pub mod env;
pub mod observation;
pub mod policy;
pub mod provider;
pub mod stack;
pub mod trace;

pub use action::{parse_action, parse_model_response, render_action, Action, ParsedResponse};
pub use env::{EnvError, Environment, EvalResult};
pub use observation::{estimate_tokens, Observation, WebElement};
pub use policy::{PolicyFrame, PolicyLibrary, PolicySpec};
pub use provider::{CompletionRequest, CompletionResult, Provider, ProviderError};
pub use stack::{FailureKind, Limits, StackState, StepOutcome};
