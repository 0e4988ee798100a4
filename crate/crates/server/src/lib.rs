//! Live teaching endpoint and command-line front end for `dcoach` sessions.
//!
//! A console connects over WebSocket, receives one frame per training step
//! and sends back corrective advice and session controls as JSON text
//! messages.

pub mod cli;
mod error;
pub mod frames;
pub mod protocol;
mod serve;

pub use error::{Result, ServerError};
pub use serve::{serve, ServeOptions, ServeReport, Server};
