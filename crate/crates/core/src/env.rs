//! Planar point-mass game shared by the learning agent (x axis) and its
//! partner (y axis).
//!
//! Both partners command one of three accelerations on their axis. The
//! commands are integrated at the control rate with a semi-implicit Euler
//! step, and the square workspace acts as a set of virtual walls: reaching
//! an edge zeroes the velocity on that axis, and the point only leaves the
//! wall again once the commanded acceleration points back inside.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reward for every decision that does not reach the goal.
pub const STEP_REWARD: f64 = -1.0;
/// Reward for the decision during which the goal is reached.
pub const GOAL_REWARD: f64 = 10.0;

/// Position and velocity of the end-effector in the table plane.
///
/// `x` is the agent's axis and `y` the partner's axis; the goal sits at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EEState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

impl EEState {
    pub const fn new(x: f64, y: f64, vx: f64, vy: f64) -> Self {
        Self { x, y, vx, vy }
    }

    pub fn at_rest(x: f64, y: f64) -> Self {
        Self::new(x, y, 0.0, 0.0)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.vx, self.vy]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn distance_to_goal(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    pub fn within(&self, half_width: f64) -> bool {
        self.x.abs() <= half_width && self.y.abs() <= half_width
    }
}

/// A discrete acceleration command: `-1`, `0` or `+1` times the configured magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Level {
    Neg,
    #[default]
    Zero,
    Pos,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Neg, Level::Zero, Level::Pos];

    pub fn value(self) -> i8 {
        match self {
            Level::Neg => -1,
            Level::Zero => 0,
            Level::Pos => 1,
        }
    }

    /// Index used by the learner's categorical policy: `-1 -> 0`, `0 -> 1`, `+1 -> 2`.
    pub fn action_index(self) -> usize {
        (self.value() + 1) as usize
    }

    pub fn from_action_index(index: usize) -> Result<Self> {
        match index {
            0 => Ok(Level::Neg),
            1 => Ok(Level::Zero),
            2 => Ok(Level::Pos),
            _ => Err(Error::invalid(format!("action index {index} not in 0..3"))),
        }
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.value())
    }
}

impl From<Level> for i8 {
    fn from(level: Level) -> i8 {
        level.value()
    }
}

impl TryFrom<i8> for Level {
    type Error = Error;

    fn try_from(v: i8) -> Result<Self> {
        match v {
            -1 => Ok(Level::Neg),
            0 => Ok(Level::Zero),
            1 => Ok(Level::Pos),
            _ => Err(Error::Protocol(format!("acceleration level {v} not in {{-1, 0, 1}}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    AgentX,
    HumanY,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccelCommand {
    pub axis: Axis,
    pub level: Level,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    /// Half the side of the square workspace (m).
    pub half_width: f64,
    pub goal_radius: f64,
    /// The goal requires the speed to be strictly below this (m/s).
    pub goal_speed: f64,
    /// Magnitude of a non-zero acceleration command (m/s^2).
    pub accel: f64,
    pub control_period: f64,
    pub decision_period: f64,
    pub game_timeout: f64,
    /// Start positions, indexed by corner.
    pub start_positions: [[f64; 2]; 4],
}

impl Default for GameConfig {
    fn default() -> Self {
        let h = 0.1;
        Self {
            half_width: h,
            goal_radius: 0.01,
            goal_speed: 0.05,
            accel: 0.4,
            control_period: 0.008,
            decision_period: 0.2,
            game_timeout: 30.0,
            start_positions: [[-h, -h], [h, -h], [h, h], [-h, h]],
        }
    }
}

impl GameConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("half_width", self.half_width),
            ("goal_radius", self.goal_radius),
            ("goal_speed", self.goal_speed),
            ("accel", self.accel),
            ("control_period", self.control_period),
            ("decision_period", self.decision_period),
            ("game_timeout", self.game_timeout),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.goal_radius >= self.half_width {
            return Err(Error::Config("goal_radius must be smaller than half_width".into()));
        }
        let ratio = self.decision_period / self.control_period;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return Err(Error::Config(format!(
                "decision_period {} is not an integer multiple of control_period {}",
                self.decision_period, self.control_period
            )));
        }
        let ticks = self.game_timeout / self.control_period;
        if (ticks - ticks.round()).abs() > 1e-6 {
            return Err(Error::Config("game_timeout is not a whole number of control periods".into()));
        }
        for p in &self.start_positions {
            if p[0].abs() > self.half_width || p[1].abs() > self.half_width {
                return Err(Error::Config(format!("start position {p:?} outside workspace")));
            }
        }
        Ok(())
    }

    pub fn ticks_per_decision(&self) -> u32 {
        (self.decision_period / self.control_period).round() as u32
    }

    pub fn max_ticks(&self) -> u64 {
        (self.game_timeout / self.control_period).round() as u64
    }

    pub fn max_decisions(&self) -> u64 {
        self.max_ticks().div_ceil(u64::from(self.ticks_per_decision()))
    }
}

/// Corner selection for [`reset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CornerChoice {
    Fixed(usize),
    Random,
}

/// Places the end-effector at rest on a start corner. Returns the state and the corner index used.
pub fn reset<R: Rng + ?Sized>(config: &GameConfig, corner: CornerChoice, rng: &mut R) -> Result<(EEState, usize)> {
    let index = match corner {
        CornerChoice::Fixed(i) if i < config.start_positions.len() => i,
        CornerChoice::Fixed(i) => return Err(Error::invalid(format!("corner index {i} not in 0..4"))),
        CornerChoice::Random => rng.random_range(0..config.start_positions.len()),
    };
    let [x, y] = config.start_positions[index];
    Ok((EEState::at_rest(x, y), index))
}

fn axis_step(p: f64, v: f64, level: Level, config: &GameConfig) -> (f64, f64) {
    let h = config.half_width;
    let a = level.as_f64() * config.accel;
    // Pinned on a wall until the command points strictly inward.
    if (p >= h && a >= 0.0) || (p <= -h && a <= 0.0) {
        return (p.clamp(-h, h), 0.0);
    }
    let v = v + config.control_period * a;
    let p = p + config.control_period * v;
    if p > h {
        (h, 0.0)
    } else if p < -h {
        (-h, 0.0)
    } else {
        (p, v)
    }
}

/// Advances one control period with the agent commanding `ax` and the partner `ay`.
pub fn control_step(state: &EEState, ax: Level, ay: Level, config: &GameConfig) -> EEState {
    let (x, vx) = axis_step(state.x, state.vx, ax, config);
    let (y, vy) = axis_step(state.y, state.vy, ay, config);
    EEState { x, y, vx, vy }
}

pub fn check_goal(state: &EEState, config: &GameConfig) -> bool {
    state.distance_to_goal() <= config.goal_radius && state.speed() < config.goal_speed
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Win,
    Timeout,
}

/// Result of one agent decision period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionStep {
    pub state: EEState,
    pub reward: f64,
    pub done: bool,
    pub won: bool,
    /// Control ticks actually simulated (25 unless the game ended early).
    pub ticks: u32,
}

/// What happened on a single control tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickReport {
    pub state: EEState,
    /// Set when this tick closes the current agent decision.
    pub decision_end: Option<DecisionStep>,
}

/// One control-rate sample of a game trajectory; levels are the ones applied during the tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub state: EEState,
    pub agent: Level,
    pub human: Level,
}

/// Tick-by-tick game state machine. Both the batch runner and the live
/// session drive games through this type so they share one set of rules.
#[derive(Debug, Clone)]
pub struct Game {
    config: GameConfig,
    ticks_per_decision: u32,
    max_ticks: u64,
    state: EEState,
    tick: u64,
    ticks_in_decision: u32,
    total_return: f64,
    outcome: Option<Outcome>,
}

impl Game {
    pub fn new(config: GameConfig, start: EEState) -> Result<Self> {
        config.validate()?;
        if !start.is_finite() || !start.within(config.half_width) {
            return Err(Error::invalid(format!("start state {start:?} outside workspace")));
        }
        Ok(Self {
            ticks_per_decision: config.ticks_per_decision(),
            max_ticks: config.max_ticks(),
            config,
            state: start,
            tick: 0,
            ticks_in_decision: 0,
            total_return: 0.0,
            outcome: None,
        })
    }

    pub fn config(&self) -> &GameConfig {
        &self.config
    }

    pub fn state(&self) -> EEState {
        self.state
    }

    pub fn ticks(&self) -> u64 {
        self.tick
    }

    pub fn elapsed(&self) -> f64 {
        self.tick as f64 * self.config.control_period
    }

    pub fn total_return(&self) -> f64 {
        self.total_return
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.outcome
    }

    pub fn is_done(&self) -> bool {
        self.outcome.is_some()
    }

    /// True when the next tick starts a new agent decision.
    pub fn at_decision_boundary(&self) -> bool {
        self.ticks_in_decision == 0
    }

    pub fn tick(&mut self, agent: Level, human: Level) -> Result<TickReport> {
        if self.is_done() {
            return Err(Error::Protocol("game already finished".into()));
        }
        self.state = control_step(&self.state, agent, human, &self.config);
        self.tick += 1;
        self.ticks_in_decision += 1;

        let won = check_goal(&self.state, &self.config);
        let timed_out = self.tick >= self.max_ticks;
        let decision_over = won || timed_out || self.ticks_in_decision == self.ticks_per_decision;
        let decision_end = decision_over.then(|| {
            let reward = if won { GOAL_REWARD } else { STEP_REWARD };
            let done = won || timed_out;
            let step = DecisionStep { state: self.state, reward, done, won, ticks: self.ticks_in_decision };
            self.total_return += reward;
            self.ticks_in_decision = 0;
            if done {
                self.outcome = Some(if won { Outcome::Win } else { Outcome::Timeout });
            }
            step
        });
        Ok(TickReport { state: self.state, decision_end })
    }

    /// Runs a whole decision period with both commands held constant.
    pub fn step_decision(&mut self, agent: Level, human: Level) -> Result<DecisionStep> {
        self.step_decision_with(agent, |_| human)
    }

    /// Runs a whole decision period, asking `human` for the partner's level before every tick.
    pub fn step_decision_with(
        &mut self,
        agent: Level,
        mut human: impl FnMut(&EEState) -> Level,
    ) -> Result<DecisionStep> {
        loop {
            let h = human(&self.state);
            if let Some(end) = self.tick(agent, h)?.decision_end {
                return Ok(end);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameResult {
    pub outcome: Outcome,
    /// Simulated seconds from start to the final tick.
    pub duration: f64,
    #[serde(rename = "return")]
    pub total_return: f64,
    pub start_corner: usize,
    pub start: EEState,
    /// One sample per control tick, excluding the start state.
    pub trajectory: Vec<TrajectorySample>,
    pub decisions: u32,
}

impl GameResult {
    pub fn won(&self) -> bool {
        self.outcome == Outcome::Win
    }
}

/// Records the trajectory of a [`Game`] as it is ticked.
#[derive(Debug, Clone)]
pub struct GameRecorder {
    start_corner: usize,
    start: EEState,
    trajectory: Vec<TrajectorySample>,
    decisions: u32,
}

impl GameRecorder {
    pub fn new(start_corner: usize, start: EEState) -> Self {
        Self { start_corner, start, trajectory: Vec::new(), decisions: 0 }
    }

    pub fn record(&mut self, game: &Game, report: &TickReport, agent: Level, human: Level) {
        self.trajectory.push(TrajectorySample { t: game.elapsed(), state: report.state, agent, human });
        if report.decision_end.is_some() {
            self.decisions += 1;
        }
    }

    pub fn finish(self, game: &Game) -> Result<GameResult> {
        let outcome = game.outcome().ok_or_else(|| Error::Protocol("game not finished".into()))?;
        Ok(GameResult {
            outcome,
            duration: game.elapsed(),
            total_return: game.total_return(),
            start_corner: self.start_corner,
            start: self.start,
            trajectory: self.trajectory,
            decisions: self.decisions,
        })
    }
}

/// Plays one game to completion.
///
/// `agent` is queried once per decision period and `partner` before every
/// control tick; both return raw levels, which must lie in `{-1, 0, 1}`.
pub fn run_game<R, A, P>(
    config: &GameConfig,
    corner: CornerChoice,
    rng: &mut R,
    mut agent: A,
    mut partner: P,
) -> Result<GameResult>
where
    R: Rng + ?Sized,
    A: FnMut(&EEState) -> i8,
    P: FnMut(&EEState) -> i8,
{
    let (start, start_corner) = reset(config, corner, rng)?;
    let mut game = Game::new(config.clone(), start)?;
    let mut recorder = GameRecorder::new(start_corner, start);
    let mut agent_level = Level::Zero;
    while !game.is_done() {
        if game.at_decision_boundary() {
            agent_level = Level::try_from(agent(&game.state()))?;
        }
        let human = Level::try_from(partner(&game.state()))?;
        let report = game.tick(agent_level, human)?;
        recorder.record(&game, &report, agent_level, human);
    }
    recorder.finish(&game)
}
