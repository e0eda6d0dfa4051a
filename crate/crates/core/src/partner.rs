//! Sources of the partner's (y axis) acceleration command.
//!
//! Scripted partners stand in for a human at desk scale; the keyboard stream
//! carries a live participant's key presses, and [`KeyReplay`] plays a
//! recorded session back tick for tick.

use std::collections::BTreeMap;
use std::sync::mpsc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EEState, Level};
use crate::error::{Error, Result};

/// Gains of the scripted expert's velocity-tracking law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpertGains {
    /// Proportional gain from position error to desired velocity (1/s).
    pub kp: f64,
    pub v_max: f64,
    pub deadband: f64,
}

impl Default for ExpertGains {
    fn default() -> Self {
        Self { kp: 2.0, v_max: 0.25, deadband: 0.01 }
    }
}

/// Bang-bang tracking of a clamped proportional velocity target toward zero.
pub fn expert_axis_action(position: f64, velocity: f64, gains: &ExpertGains) -> Level {
    let v_des = (-gains.kp * position).clamp(-gains.v_max, gains.v_max);
    if velocity < v_des - gains.deadband {
        Level::Pos
    } else if velocity > v_des + gains.deadband {
        Level::Neg
    } else {
        Level::Zero
    }
}

/// The scripted expert acting on the partner's axis.
pub fn expert_action(state: &EEState, gains: &ExpertGains) -> Level {
    expert_axis_action(state.y, state.vy, gains)
}

/// Expert action with probability `1 - epsilon`, otherwise a uniformly random level.
pub fn noisy_action<R: Rng + ?Sized>(state: &EEState, epsilon: f64, gains: &ExpertGains, rng: &mut R) -> Level {
    let u: f64 = rng.random();
    if u < epsilon {
        Level::ALL[rng.random_range(0..3)]
    } else {
        expert_action(state, gains)
    }
}

/// Keys accepted from a participant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Key {
    #[serde(rename = "i")]
    I,
    #[serde(rename = ",")]
    Comma,
    #[serde(rename = "k")]
    K,
}

impl Key {
    pub fn level(self) -> Level {
        match self {
            Key::I => Level::Pos,
            Key::Comma => Level::Neg,
            Key::K => Level::Zero,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Key::I => 'i',
            Key::Comma => ',',
            Key::K => 'k',
        }
    }
}

impl TryFrom<char> for Key {
    type Error = Error;

    fn try_from(c: char) -> Result<Self> {
        match c {
            'i' => Ok(Key::I),
            ',' => Ok(Key::Comma),
            'k' => Ok(Key::K),
            other => Err(Error::invalid(format!("unknown key {other:?}"))),
        }
    }
}

impl std::str::FromStr for Key {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Key::try_from(c),
            _ => Err(Error::invalid(format!("unknown key {s:?}"))),
        }
    }
}

/// A key press stamped with a monotonic clock reading (seconds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyEvent {
    pub key: Key,
    pub timestamp: f64,
}

/// Level held at `now`: the most recent event at or before it, or zero before any event.
pub fn keyboard_level(events: &[KeyEvent], now: f64) -> Level {
    events
        .iter()
        .filter(|e| e.timestamp <= now)
        .max_by(|a, b| a.timestamp.total_cmp(&b.timestamp))
        .map_or(Level::Zero, |e| e.key.level())
}

/// Anything that can drive the partner's axis.
pub trait Partner: Send {
    /// Called before the first tick of every game.
    fn begin_game(&mut self, _game_id: u64) {}

    /// Level to apply on the tick that starts at `tick` (ticks counted from game start).
    fn level(&mut self, state: &EEState, tick: u64) -> Level;
}

/// Serializable description of a partner, as accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartnerPolicy {
    ScriptedExpert { gains: ExpertGains },
    Noisy { epsilon: f64, gains: ExpertGains },
    Idle,
    KeyboardStream,
}

impl PartnerPolicy {
    pub fn expert() -> Self {
        PartnerPolicy::ScriptedExpert { gains: ExpertGains::default() }
    }

    pub fn noisy(epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::invalid(format!("noise probability {epsilon} not in [0, 1]")));
        }
        Ok(PartnerPolicy::Noisy { epsilon, gains: ExpertGains::default() })
    }

    /// Instantiates a scripted partner; `seed` feeds the noisy variant's generator.
    pub fn build(&self, seed: u64) -> Result<Box<dyn Partner>> {
        match *self {
            PartnerPolicy::ScriptedExpert { gains } => Ok(Box::new(ScriptedExpert { gains })),
            PartnerPolicy::Noisy { epsilon, gains } => {
                Self::noisy(epsilon)?;
                Ok(Box::new(NoisyExpert { epsilon, gains, rng: ChaCha8Rng::seed_from_u64(seed) }))
            }
            PartnerPolicy::Idle => Ok(Box::new(Idle)),
            PartnerPolicy::KeyboardStream => {
                Err(Error::Config("keyboard partner needs a live connection or a recorded key log".into()))
            }
        }
    }
}

impl std::fmt::Display for PartnerPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PartnerPolicy::ScriptedExpert { .. } => write!(f, "expert"),
            PartnerPolicy::Noisy { epsilon, .. } => write!(f, "noisy:{epsilon}"),
            PartnerPolicy::Idle => write!(f, "idle"),
            PartnerPolicy::KeyboardStream => write!(f, "keyboard"),
        }
    }
}

impl std::str::FromStr for PartnerPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "expert" => Ok(Self::expert()),
            "idle" => Ok(PartnerPolicy::Idle),
            "keyboard" => Ok(PartnerPolicy::KeyboardStream),
            _ => match s.strip_prefix("noisy:") {
                Some(eps) => {
                    let eps: f64 = eps.parse().map_err(|_| Error::invalid(format!("bad noise level in {s:?}")))?;
                    Self::noisy(eps)
                }
                None => Err(Error::invalid(format!("unknown partner {s:?} (expected expert, noisy:<eps> or idle)"))),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedExpert {
    pub gains: ExpertGains,
}

impl Partner for ScriptedExpert {
    fn level(&mut self, state: &EEState, _tick: u64) -> Level {
        expert_action(state, &self.gains)
    }
}

#[derive(Debug, Clone)]
pub struct NoisyExpert {
    epsilon: f64,
    gains: ExpertGains,
    rng: ChaCha8Rng,
}

impl Partner for NoisyExpert {
    fn level(&mut self, state: &EEState, _tick: u64) -> Level {
        noisy_action(state, self.epsilon, &self.gains, &mut self.rng)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Idle;

impl Partner for Idle {
    fn level(&mut self, _state: &EEState, _tick: u64) -> Level {
        Level::Zero
    }
}

/// One key press as applied by the simulation: it took effect at the start of tick `tick` of game `game`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyLogEntry {
    pub game: u64,
    pub tick: u64,
    pub key: Key,
}

/// Producer half of a keyboard stream, owned by the input adapter.
#[derive(Debug, Clone)]
pub struct KeySender {
    tx: mpsc::Sender<Key>,
}

impl KeySender {
    /// Returns false once the consuming stream has been dropped.
    pub fn send(&self, key: Key) -> bool {
        self.tx.send(key).is_ok()
    }
}

/// Live keyboard partner. Key presses queue up between ticks and are drained
/// once per control tick; the level persists until the next press.
#[derive(Debug)]
pub struct KeyboardStream {
    rx: mpsc::Receiver<Key>,
    held: Level,
    game: u64,
    log: Vec<KeyLogEntry>,
}

impl KeyboardStream {
    pub fn channel() -> (KeySender, KeyboardStream) {
        let (tx, rx) = mpsc::channel();
        (KeySender { tx }, KeyboardStream { rx, held: Level::Zero, game: 0, log: Vec::new() })
    }

    pub fn held(&self) -> Level {
        self.held
    }

    /// Every key applied so far, in order.
    pub fn log(&self) -> &[KeyLogEntry] {
        &self.log
    }

    pub fn take_log(&mut self) -> Vec<KeyLogEntry> {
        std::mem::take(&mut self.log)
    }

    /// Drops presses that arrived while no game was running.
    pub fn discard_pending(&mut self) {
        while self.rx.try_recv().is_ok() {}
    }
}

impl Partner for KeyboardStream {
    fn begin_game(&mut self, game_id: u64) {
        self.game = game_id;
        self.held = Level::Zero;
    }

    fn level(&mut self, _state: &EEState, tick: u64) -> Level {
        while let Ok(key) = self.rx.try_recv() {
            self.held = key.level();
            self.log.push(KeyLogEntry { game: self.game, tick, key });
        }
        self.held
    }
}

/// Replays a recorded key log; reproduces a [`KeyboardStream`] session exactly.
#[derive(Debug, Clone, Default)]
pub struct KeyReplay {
    by_game: BTreeMap<u64, Vec<(u64, Key)>>,
    current: Vec<(u64, Key)>,
    next: usize,
    held: Level,
}

impl KeyReplay {
    pub fn new(log: &[KeyLogEntry]) -> Self {
        let mut by_game: BTreeMap<u64, Vec<(u64, Key)>> = BTreeMap::new();
        for e in log {
            by_game.entry(e.game).or_default().push((e.tick, e.key));
        }
        for events in by_game.values_mut() {
            // Stable, so same-tick presses keep their arrival order.
            events.sort_by_key(|&(tick, _)| tick);
        }
        Self { by_game, ..Self::default() }
    }
}

impl Partner for KeyReplay {
    fn begin_game(&mut self, game_id: u64) {
        self.current = self.by_game.get(&game_id).cloned().unwrap_or_default();
        self.next = 0;
        self.held = Level::Zero;
    }

    fn level(&mut self, _state: &EEState, tick: u64) -> Level {
        while let Some(&(at, key)) = self.current.get(self.next) {
            if at > tick {
                break;
            }
            self.held = key.level();
            self.next += 1;
        }
        self.held
    }
}

/// Parses a raw key string from a client, logging and ignoring anything outside the key set.
pub fn parse_client_key(raw: &str) -> Option<Key> {
    match raw.parse() {
        Ok(k) => Some(k),
        Err(_) => {
            log::warn!("ignoring unknown key {raw:?}");
            None
        }
    }
}
