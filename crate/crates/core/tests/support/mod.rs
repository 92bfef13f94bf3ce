//! Helpers shared by several test targets; each target uses only some.
#![allow(dead_code)]

pub mod actions;
pub mod random_episodes;
