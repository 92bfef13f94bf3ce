//! Running stacked web agents: episodes, CRM task suites, traces, replay and
//! demonstration labelling.

pub mod crm;
pub mod episode;
pub mod metrics;
pub mod suite;
pub mod site;
pub mod labeler;
