//! Interactive training of continuous-control policies from corrective
//! feedback: classic COACH, basic and enhanced D-COACH, toy image-observation
//! environments, simulated teachers and an experiment harness.

pub mod coach;
pub mod dcoach;
pub mod env;
pub mod error;
pub mod fidelity;
pub mod nn;
pub mod session;
pub mod stats;
pub mod teachers;

pub use error::{Error, Result};
