//! JSON text messages exchanged with the teaching console.

use dcoach::teachers::KeyBinding;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlCommand {
    Pause,
    Resume,
    Save,
    Stop,
}

/// Snapshot of the session streamed once per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    /// Step the next action will be taken at; feedback should carry it back.
    pub step: u64,
    pub image_png_b64: String,
    /// Action executed on the previous step.
    pub action: Vec<f64>,
    pub episode_return: f64,
    pub feedback_rate: f64,
    pub paused: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Frame(Frame),
    Keymap {
        entries: Vec<KeyBinding>,
    },
    /// Confirms a control command; `path` names the checkpoint written by
    /// `save`, and the final checkpoint once the session ends.
    Ack {
        cmd: ControlCommand,
        path: Option<String>,
    },
    Error {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Feedback { step: u64, h: Vec<i8> },
    Control { cmd: ControlCommand },
    KeymapQuery,
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }
}

impl ClientMessage {
    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("client messages always serialize")
    }
}
