//! Rule-based Raven-style reasoning problems and the speaker/listener game
//! played over them.

pub mod agents;
pub mod forge;
pub mod game;
pub mod grad;
pub mod harness;
pub mod metrics;
mod par;
pub mod rules;
