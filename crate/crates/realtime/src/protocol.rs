//! JSON wire messages between the session host and a browser client.
//!
//! Every server message carries a per-session sequence number with no gaps.
//! Nothing sent to the client identifies the experimental condition.

use colearn_core::env::Outcome;
use colearn_core::study::BatchKind;
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

/// Beeps before each game: three short and one long.
pub const COUNTDOWN_BEEPS: u32 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Join { session_id: String, protocol_version: u32 },
    /// Raw key as typed; anything outside `i`, `,` and `k` is ignored.
    Key { key: String },
    Ready,
}

impl ClientMessage {
    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AudioCue {
    StartBeeps,
    Win,
    Lose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerEvent {
    Welcome { session_id: String, protocol_version: u32 },
    State { t: f64, x: f64, y: f64, vx: f64, vy: f64 },
    GameStart { countdown_beeps: u32, game_number: u64 },
    GameEnd { outcome: Outcome, score: f64, game_number: u64 },
    BatchStatus { index: usize, kind: BatchKind },
    TrainingProgress { fraction: f64 },
    AudioCue { cue_id: AudioCue },
    Finished { games: u64 },
    Error { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerMessage {
    pub seq: u64,
    #[serde(flatten)]
    pub event: ServerEvent,
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

/// Hands out gapless sequence numbers.
#[derive(Debug, Default, Clone)]
pub struct Sequencer {
    next: u64,
}

impl Sequencer {
    pub fn stamp(&mut self, event: ServerEvent) -> ServerMessage {
        let seq = self.next;
        self.next += 1;
        ServerMessage { seq, event }
    }

    pub fn issued(&self) -> u64 {
        self.next
    }
}
