//! One live study session: the full protocol played with a human on the
//! keyboard, advanced one control tick at a time.
//!
//! Games go through the same [`Learner`] and [`GamePlay`] calls as the batch
//! harness, so the recorded key log replayed offline reproduces every game.

use std::sync::mpsc::{self, Receiver};
use std::thread::{self, JoinHandle};
use std::time::Instant;

use colearn_core::env::Outcome;
use colearn_core::partner::{parse_client_key, KeyLogEntry, KeySender, KeyboardStream, Partner};
use colearn_core::ppr::SharedExpert;
use colearn_core::sac::{PolicyParams, TrainingReport};
use colearn_core::study::{
    assemble_report, batch_plan, BatchKind, BatchRecord, GamePlay, GameRecord, Learner, StudyConfig, StudyRun,
};
use colearn_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::protocol::{AudioCue, ClientMessage, Sequencer, ServerEvent, ServerMessage, COUNTDOWN_BEEPS, PROTOCOL_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub session_id: String,
    /// Emit a state message every this many control ticks.
    pub state_decimation: u32,
    /// Seconds of countdown beeps before each game.
    pub countdown: f64,
    /// Seconds of pause after each game.
    pub between_games: f64,
    /// Smallest change in training progress worth reporting.
    pub progress_step: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self { session_id: "session".into(), state_decimation: 2, countdown: 2.0, between_games: 1.5, progress_step: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Countdown,
    InGame,
    BetweenGames,
    TrainingBreak,
    Finished,
}

/// Inputs from the network side.
#[derive(Debug, Clone, PartialEq)]
pub enum Inbound {
    Client(ClientMessage),
    Disconnected,
}

struct Trainer {
    handle: JoinHandle<(Learner, Result<TrainingReport>)>,
    progress: Receiver<f64>,
}

pub struct Session {
    config: SessionConfig,
    study: StudyConfig,
    learner: Option<Learner>,
    trainer: Option<Trainer>,
    keyboard: KeyboardStream,
    keys: KeySender,
    seq: Sequencer,
    outbox: Vec<ServerMessage>,
    phase: Phase,
    wait_ticks: u64,
    plan: Vec<(BatchKind, usize, Option<usize>)>,
    plan_pos: usize,
    current: Vec<GameRecord>,
    play: Option<GamePlay>,
    batches: Vec<BatchRecord>,
    training: Vec<TrainingReport>,
    buffer_sizes: Vec<usize>,
    snapshots: Vec<PolicyParams>,
    joined: bool,
    ready: bool,
    error: Option<String>,
    last_progress: f64,
    started: Instant,
    ticks: u64,
}

impl Session {
    /// Fails before any game if the study cannot run (for example PPR without an expert).
    pub fn new(study: StudyConfig, expert: Option<SharedExpert>, config: SessionConfig) -> Result<Self> {
        if config.state_decimation == 0 || config.countdown < 0.0 || config.between_games < 0.0 {
            return Err(Error::Config("invalid session timing".into()));
        }
        let learner = Learner::new(&study, expert)?;
        let (keys, keyboard) = KeyboardStream::channel();
        Ok(Self {
            plan: batch_plan(study.blocks),
            config,
            study,
            learner: Some(learner),
            trainer: None,
            keyboard,
            keys,
            seq: Sequencer::default(),
            outbox: Vec::new(),
            phase: Phase::Idle,
            wait_ticks: 0,
            plan_pos: 0,
            current: Vec::new(),
            play: None,
            batches: Vec::new(),
            training: Vec::new(),
            buffer_sizes: Vec::new(),
            snapshots: Vec::new(),
            joined: false,
            ready: false,
            error: None,
            last_progress: 0.0,
            started: Instant::now(),
            ticks: 0,
        })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn is_finished(&self) -> bool {
        self.phase == Phase::Finished
    }

    pub fn study(&self) -> &StudyConfig {
        &self.study
    }

    pub fn batches(&self) -> &[BatchRecord] {
        &self.batches
    }

    pub fn training_reports(&self) -> &[TrainingReport] {
        &self.training
    }

    pub fn key_log(&self) -> &[KeyLogEntry] {
        self.keyboard.log()
    }

    pub fn error(&self) -> Option<&str> {
        self.error.as_deref()
    }

    /// Control ticks processed, including countdowns and pauses.
    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    /// Game currently in progress (or counting down).
    pub fn game(&self) -> Option<&GamePlay> {
        self.play.as_ref()
    }

    /// Direct handle for key presses, bypassing the message queue.
    pub fn key_sender(&self) -> KeySender {
        self.keys.clone()
    }

    /// Messages produced since the last call.
    pub fn drain_outbox(&mut self) -> Vec<ServerMessage> {
        std::mem::take(&mut self.outbox)
    }

    fn emit(&mut self, event: ServerEvent) {
        let msg = self.seq.stamp(event);
        self.outbox.push(msg);
    }

    fn seconds_to_ticks(&self, secs: f64) -> u64 {
        (secs / self.study.game.control_period).round() as u64
    }

    pub fn handle(&mut self, inbound: Inbound) {
        match inbound {
            Inbound::Client(ClientMessage::Join { session_id, protocol_version }) => {
                if protocol_version != PROTOCOL_VERSION {
                    self.emit(ServerEvent::Error {
                        message: format!("protocol version {protocol_version} not supported, expected {PROTOCOL_VERSION}"),
                    });
                } else if session_id != self.config.session_id {
                    self.emit(ServerEvent::Error { message: format!("unknown session {session_id:?}") });
                } else {
                    self.joined = true;
                    self.emit(ServerEvent::Welcome { session_id, protocol_version });
                }
            }
            Inbound::Client(ClientMessage::Key { key }) => {
                if self.joined {
                    if let Some(k) = parse_client_key(&key) {
                        self.keys.send(k);
                    }
                }
            }
            Inbound::Client(ClientMessage::Ready) => {
                if self.joined {
                    self.ready = true;
                }
            }
            Inbound::Disconnected => {
                self.joined = false;
                self.ready = false;
            }
        }
    }

    /// Advances one control period.
    pub fn tick(&mut self) {
        self.ticks += 1;
        if let Err(e) = self.step() {
            self.abort(e);
        }
    }

    fn abort(&mut self, e: Error) {
        log::error!("session aborted: {e}");
        self.error = Some(e.to_string());
        self.play = None;
        self.phase = Phase::Finished;
        self.emit(ServerEvent::Error { message: e.to_string() });
        self.emit(ServerEvent::Finished { games: self.games_done() });
    }

    fn games_done(&self) -> u64 {
        self.batches.iter().map(|b| b.games.len() as u64).sum::<u64>() + self.current.len() as u64
    }

    fn step(&mut self) -> Result<()> {
        match self.phase {
            Phase::Idle => {
                if self.joined && self.ready {
                    self.advance()?;
                }
            }
            Phase::Countdown => {
                if self.wait_ticks == 0 {
                    self.phase = Phase::InGame;
                    self.game_tick()?;
                } else {
                    self.wait_ticks -= 1;
                }
            }
            Phase::InGame => self.game_tick()?,
            Phase::BetweenGames => {
                if self.wait_ticks > 0 {
                    self.wait_ticks -= 1;
                } else if self.joined {
                    // a disconnected client holds the session here until it rejoins
                    self.advance()?;
                }
            }
            Phase::TrainingBreak => self.poll_trainer()?,
            Phase::Finished => {}
        }
        Ok(())
    }

    fn learner_mut(&mut self) -> Result<&mut Learner> {
        self.learner.as_mut().ok_or_else(|| Error::Protocol("learner is busy training".into()))
    }

    fn game_tick(&mut self) -> Result<()> {
        let mut play = self.play.take().ok_or_else(|| Error::Protocol("no game in progress".into()))?;
        let human = self.keyboard.level(&play.state(), play.ticks());
        let learner = self.learner.as_mut().ok_or_else(|| Error::Protocol("learner is busy training".into()))?;
        let report = play.tick(learner, human)?;
        let s = report.state;
        if play.ticks() % u64::from(self.config.state_decimation) == 0 || play.is_done() {
            self.emit(ServerEvent::State { t: play.elapsed(), x: s.x, y: s.y, vx: s.vx, vy: s.vy });
        }
        if !play.is_done() {
            self.play = Some(play);
            return Ok(());
        }
        let record = play.finish(self.learner_mut()?)?;
        let outcome = record.result.outcome;
        self.emit(ServerEvent::GameEnd { outcome, score: record.result.total_return, game_number: record.game_id + 1 });
        self.emit(ServerEvent::AudioCue { cue_id: if outcome == Outcome::Win { AudioCue::Win } else { AudioCue::Lose } });
        self.current.push(record);
        self.phase = Phase::BetweenGames;
        self.wait_ticks = self.seconds_to_ticks(self.config.between_games);
        Ok(())
    }

    /// Moves on from a pause: closes a full batch, starts training, or starts the next game.
    fn advance(&mut self) -> Result<()> {
        if self.current.len() == self.study.games_per_batch {
            let (kind, index, block) = self.plan[self.plan_pos];
            let games = std::mem::take(&mut self.current);
            self.batches.push(BatchRecord { batch_index: index, kind, block, games });
            let learner = self.learner.as_ref().ok_or_else(|| Error::Protocol("learner is busy training".into()))?;
            self.buffer_sizes.push(learner.buffer.len());
            if kind == BatchKind::Testing {
                self.snapshots.push(learner.agent.params.clone());
            }
            self.plan_pos += 1;
            if kind == BatchKind::Training {
                return self.start_training();
            }
        }
        if self.plan_pos >= self.plan.len() {
            self.phase = Phase::Finished;
            self.emit(ServerEvent::Finished { games: self.games_done() });
            return Ok(());
        }
        self.start_game()
    }

    fn start_game(&mut self) -> Result<()> {
        let (kind, index, _) = self.plan[self.plan_pos];
        if self.current.is_empty() {
            self.emit(ServerEvent::BatchStatus { index, kind });
        }
        let play = self.learner_mut()?.start_game(kind)?;
        // presses made during the pause are not carried into the new game
        self.keyboard.discard_pending();
        self.keyboard.begin_game(play.game_id);
        self.emit(ServerEvent::GameStart { countdown_beeps: COUNTDOWN_BEEPS, game_number: play.game_id + 1 });
        self.emit(ServerEvent::AudioCue { cue_id: AudioCue::StartBeeps });
        self.play = Some(play);
        self.phase = Phase::Countdown;
        self.wait_ticks = self.seconds_to_ticks(self.config.countdown);
        Ok(())
    }

    fn start_training(&mut self) -> Result<()> {
        let mut learner = self.learner.take().ok_or_else(|| Error::Protocol("learner is already training".into()))?;
        let (tx, rx) = mpsc::channel();
        let handle = thread::Builder::new()
            .name("offline-training".into())
            .spawn(move || {
                let result = learner.train_with_progress(|done, total| {
                    let _ = tx.send(done as f64 / total as f64);
                });
                (learner, result)
            })?;
        self.trainer = Some(Trainer { handle, progress: rx });
        self.last_progress = 0.0;
        self.emit(ServerEvent::TrainingProgress { fraction: 0.0 });
        self.phase = Phase::TrainingBreak;
        Ok(())
    }

    fn poll_trainer(&mut self) -> Result<()> {
        let Some(trainer) = self.trainer.as_ref() else {
            return Err(Error::Protocol("training break without a trainer".into()));
        };
        let latest = trainer.progress.try_iter().last();
        let finished = trainer.handle.is_finished();
        if let Some(f) = latest {
            if f - self.last_progress >= self.config.progress_step && f < 1.0 {
                self.last_progress = f;
                self.emit(ServerEvent::TrainingProgress { fraction: f });
            }
        }
        if !finished {
            return Ok(());
        }
        let trainer = self.trainer.take().expect("checked above");
        let (learner, result) =
            trainer.handle.join().map_err(|_| Error::NumericalFault("training worker panicked".into()))?;
        self.learner = Some(learner);
        self.training.push(result?);
        self.last_progress = 1.0;
        self.emit(ServerEvent::TrainingProgress { fraction: 1.0 });
        self.phase = Phase::BetweenGames;
        self.wait_ticks = 0;
        Ok(())
    }

    /// Blocks until a running training phase completes; for tests and shutdown.
    pub fn wait_for_training(&mut self) {
        while self.phase == Phase::TrainingBreak {
            if self.trainer.as_ref().is_some_and(|t| !t.handle.is_finished()) {
                thread::sleep(std::time::Duration::from_millis(1));
            }
            self.tick();
        }
    }

    /// Results in the batch harness format, plus the key log.
    pub fn into_run(mut self) -> Result<LiveRun> {
        self.wait_for_training();
        let learner = self.learner.take().ok_or_else(|| Error::Protocol("learner lost during training".into()))?;
        let report = assemble_report(&self.study, &self.batches, self.training, self.buffer_sizes, self.error);
        let key_log = self.keyboard.take_log();
        Ok(LiveRun {
            run: StudyRun {
                report,
                batches: self.batches,
                snapshots: self.snapshots,
                learner,
                wall_clock_secs: self.started.elapsed().as_secs_f64(),
            },
            key_log,
            study: self.study,
        })
    }
}

/// Everything a live session produced.
pub struct LiveRun {
    pub study: StudyConfig,
    pub run: StudyRun,
    pub key_log: Vec<KeyLogEntry>,
}
