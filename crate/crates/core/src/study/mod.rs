//! The co-learning study protocol.
//!
//! A study is one baseline testing batch followed by a number of blocks,
//! each a training batch, an off-line training phase and a testing batch.
//! Only training games feed the replay buffer. The [`Learner`] owns every
//! piece of agent-side state (networks, buffer, random streams), and games
//! are driven tick by tick through [`GamePlay`] so that a live session and
//! the batch runner follow exactly the same code path.

pub mod metrics;
pub mod output;

use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{CornerChoice, EEState, Game, GameConfig, GameRecorder, GameResult, Level, Outcome, TickReport};
use crate::error::{Error, Result};
use crate::partner::{Partner, PartnerPolicy};
use crate::ppr::{select_action, ActionMode, ActionSource, PprSchedule, SharedExpert};
use crate::sac::{PolicyParams, ReplayBuffer, SacAgent, SacConfig, TrainingReport, Transition};
use crate::seeds::{derive_seed, stream_rng, Stream, Streams};
pub use metrics::{normalized_travelled_distance, Heatmap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    NoTl,
    Ppr,
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "no_tl" | "notl" => Ok(Condition::NoTl),
            "ppr" => Ok(Condition::Ppr),
            _ => Err(Error::invalid(format!("unknown condition {s:?} (expected no_tl or ppr)"))),
        }
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Condition::NoTl => "no_tl",
            Condition::Ppr => "ppr",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchKind {
    Baseline,
    Training,
    Testing,
    Familiarization,
}

impl std::fmt::Display for BatchKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BatchKind::Baseline => "baseline",
            BatchKind::Training => "training",
            BatchKind::Testing => "testing",
            BatchKind::Familiarization => "familiarization",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// 14K gradient updates per block.
    Paper,
    /// 2K gradient updates per block.
    Desk,
}

impl Profile {
    pub fn sac_config(self) -> SacConfig {
        match self {
            Profile::Paper => SacConfig::paper(),
            Profile::Desk => SacConfig::desk(),
        }
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            _ => Err(Error::invalid(format!("unknown profile {s:?} (expected paper or desk)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub condition: Condition,
    pub partner: PartnerPolicy,
    pub seed: u64,
    pub game: GameConfig,
    pub sac: SacConfig,
    pub ppr: PprSchedule,
    pub blocks: usize,
    pub games_per_batch: usize,
}

impl StudyConfig {
    pub fn new(condition: Condition, partner: PartnerPolicy, seed: u64, profile: Profile) -> Self {
        Self {
            condition,
            partner,
            seed,
            game: GameConfig::default(),
            sac: profile.sac_config(),
            ppr: PprSchedule::default(),
            blocks: 7,
            games_per_batch: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.game.validate()?;
        self.sac.validate()?;
        self.ppr.validate()?;
        if self.blocks == 0 || self.games_per_batch == 0 {
            return Err(Error::Config("a study needs at least one block and one game per batch".into()));
        }
        Ok(())
    }

    pub fn total_games(&self) -> usize {
        self.games_per_batch * (1 + 2 * self.blocks)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// How the agent picks actions during one game.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Selection {
    Current(ActionMode),
    Random,
    /// Expert with probability `psi`; otherwise random before the first training phase, else the current policy.
    Reuse { psi: f64, untrained: bool },
}

/// Agent-side state carried through a study.
#[derive(Debug, Clone)]
pub struct Learner {
    pub agent: SacAgent,
    pub buffer: ReplayBuffer,
    streams: Streams,
    condition: Condition,
    ppr: PprSchedule,
    expert: Option<SharedExpert>,
    game_config: GameConfig,
    ppr_games: u64,
    blocks_trained: usize,
    games_played: u64,
}

impl Learner {
    /// Fails with a configuration error when the reuse condition has no expert.
    pub fn new(config: &StudyConfig, expert: Option<SharedExpert>) -> Result<Self> {
        config.validate()?;
        if config.condition == Condition::Ppr && expert.is_none() {
            return Err(Error::Config("the ppr condition needs an expert snapshot".into()));
        }
        let mut init = stream_rng(config.seed, Stream::AgentInit);
        let agent = SacAgent::new(config.sac.clone(), &mut init)?;
        Ok(Self {
            buffer: ReplayBuffer::new(config.sac.buffer_capacity),
            agent,
            streams: Streams::new(config.seed),
            condition: config.condition,
            ppr: config.ppr,
            expert,
            game_config: config.game.clone(),
            ppr_games: 0,
            blocks_trained: 0,
            games_played: 0,
        })
    }

    pub fn params(&self) -> &PolicyParams {
        &self.agent.params
    }

    pub fn games_played(&self) -> u64 {
        self.games_played
    }

    pub fn blocks_trained(&self) -> usize {
        self.blocks_trained
    }

    pub fn condition(&self) -> Condition {
        self.condition
    }

    fn selection(&self, kind: BatchKind) -> Result<Selection> {
        let untrained = self.blocks_trained == 0;
        Ok(match (kind, self.condition) {
            (BatchKind::Training, Condition::NoTl) if untrained => Selection::Random,
            (BatchKind::Training, Condition::NoTl) => Selection::Current(ActionMode::Sample),
            (BatchKind::Training, Condition::Ppr) => {
                Selection::Reuse { psi: self.ppr.psi_at(self.ppr_games + 1)?, untrained }
            }
            (BatchKind::Familiarization, _) => {
                return Err(Error::invalid("familiarization games do not involve the agent"));
            }
            _ => Selection::Current(ActionMode::Sample),
        })
    }

    fn choose(&mut self, selection: Selection, state: &EEState) -> Result<(usize, ActionSource)> {
        match selection {
            Selection::Current(ActionMode::Sample) => {
                Ok((self.agent.params.sample_action(state, &mut self.streams.policy)?, ActionSource::Current))
            }
            Selection::Current(ActionMode::Greedy) => Ok((self.agent.params.greedy_action(state)?, ActionSource::Current)),
            Selection::Random => Ok((self.random_action(), ActionSource::Random)),
            Selection::Reuse { psi, untrained } => {
                let expert = self.expert.as_ref().ok_or_else(|| Error::Config("no expert loaded".into()))?;
                if untrained {
                    let u: f64 = rand::Rng::random(&mut self.streams.reuse);
                    if u < psi {
                        Ok((expert.greedy_action(state)?, ActionSource::Expert))
                    } else {
                        Ok((self.random_action(), ActionSource::Random))
                    }
                } else {
                    select_action(
                        &self.agent.params,
                        expert,
                        psi,
                        state,
                        &mut self.streams.reuse,
                        &mut self.streams.policy,
                        ActionMode::Sample,
                    )
                }
            }
        }
    }

    fn random_action(&mut self) -> usize {
        rand::Rng::random_range(&mut self.streams.policy, 0..3)
    }

    /// Sets up the next game of a batch, drawing its start corner.
    pub fn start_game(&mut self, kind: BatchKind) -> Result<GamePlay> {
        let selection = self.selection(kind)?;
        let psi = match selection {
            Selection::Reuse { psi, .. } => {
                self.ppr_games += 1;
                Some(psi)
            }
            _ => None,
        };
        let (start, corner) = crate::env::reset(&self.game_config, CornerChoice::Random, &mut self.streams.corners)?;
        let game_id = self.games_played;
        self.games_played += 1;
        Ok(GamePlay {
            game_id,
            kind,
            game: Game::new(self.game_config.clone(), start)?,
            recorder: GameRecorder::new(corner, start),
            selection,
            psi,
            agent_level: Level::Zero,
            open: None,
            sources: Vec::new(),
            transitions: Vec::new(),
        })
    }

    pub fn train(&mut self) -> Result<TrainingReport> {
        self.train_with_progress(|_, _| {})
    }

    /// Off-line training phase on the current buffer.
    pub fn train_with_progress(&mut self, progress: impl FnMut(usize, usize)) -> Result<TrainingReport> {
        let report = self.agent.offline_train_with_progress(&self.buffer, &mut self.streams.minibatch, progress)?;
        self.blocks_trained += 1;
        Ok(report)
    }
}

/// One game in progress.
#[derive(Debug, Clone)]
pub struct GamePlay {
    pub game_id: u64,
    pub kind: BatchKind,
    game: Game,
    recorder: GameRecorder,
    selection: Selection,
    psi: Option<f64>,
    agent_level: Level,
    open: Option<(EEState, usize)>,
    sources: Vec<ActionSource>,
    transitions: Vec<Transition>,
}

impl GamePlay {
    pub fn state(&self) -> EEState {
        self.game.state()
    }

    pub fn ticks(&self) -> u64 {
        self.game.ticks()
    }

    pub fn elapsed(&self) -> f64 {
        self.game.elapsed()
    }

    pub fn is_done(&self) -> bool {
        self.game.is_done()
    }

    pub fn total_return(&self) -> f64 {
        self.game.total_return()
    }

    pub fn psi(&self) -> Option<f64> {
        self.psi
    }

    /// Advances one control tick. The agent is consulted at decision boundaries.
    pub fn tick(&mut self, learner: &mut Learner, human: Level) -> Result<TickReport> {
        if self.game.at_decision_boundary() && !self.game.is_done() {
            let state = self.game.state();
            let (action, source) = learner.choose(self.selection, &state)?;
            self.agent_level = Level::from_action_index(action)?;
            self.open = Some((state, action));
            self.sources.push(source);
        }
        let report = self.game.tick(self.agent_level, human)?;
        self.recorder.record(&self.game, &report, self.agent_level, human);
        if let Some(end) = report.decision_end {
            let (state, action) = self.open.take().ok_or_else(|| Error::Protocol("decision closed twice".into()))?;
            self.transitions.push(Transition { state, action, reward: end.reward, next_state: end.state, done: end.done });
        }
        Ok(report)
    }

    /// Closes the game; training games hand their transitions to the buffer.
    pub fn finish(self, learner: &mut Learner) -> Result<GameRecord> {
        if self.kind == BatchKind::Training {
            for t in &self.transitions {
                learner.buffer.push(*t)?;
            }
        }
        let result = self.recorder.finish(&self.game)?;
        Ok(GameRecord::new(self.game_id, self.kind, result, self.sources, self.psi, &learner.game_config))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameRecord {
    pub game_id: u64,
    pub kind: BatchKind,
    pub result: GameResult,
    /// Source of each agent decision, in order.
    pub sources: Vec<ActionSource>,
    pub psi: Option<f64>,
    pub normalized_distance: f64,
}

impl GameRecord {
    pub fn new(
        game_id: u64,
        kind: BatchKind,
        result: GameResult,
        sources: Vec<ActionSource>,
        psi: Option<f64>,
        config: &GameConfig,
    ) -> Self {
        let normalized_distance = normalized_travelled_distance(&result, config);
        Self { game_id, kind, result, sources, psi, normalized_distance }
    }

    pub fn count_source(&self, source: ActionSource) -> usize {
        self.sources.iter().filter(|&&s| s == source).count()
    }

    pub fn expert_fraction(&self) -> Option<f64> {
        (!self.sources.is_empty()).then(|| self.count_source(ActionSource::Expert) as f64 / self.sources.len() as f64)
    }

    pub fn summary(&self) -> GameSummary {
        GameSummary {
            game_id: self.game_id,
            corner: self.result.start_corner,
            outcome: self.result.outcome,
            duration: self.result.duration,
            total_return: self.result.total_return,
            normalized_distance: self.normalized_distance,
            decisions: self.sources.len(),
            psi: self.psi,
            expert_actions: self.count_source(ActionSource::Expert),
            random_actions: self.count_source(ActionSource::Random),
            samples: self.result.trajectory.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameSummary {
    pub game_id: u64,
    pub corner: usize,
    pub outcome: Outcome,
    pub duration: f64,
    #[serde(rename = "return")]
    pub total_return: f64,
    pub normalized_distance: f64,
    pub decisions: usize,
    pub psi: Option<f64>,
    pub expert_actions: usize,
    pub random_actions: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub batch_index: usize,
    pub kind: BatchKind,
    /// Block number (1-based) for training and testing batches.
    pub block: Option<usize>,
    pub games: Vec<GameRecord>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl BatchRecord {
    pub fn wins(&self) -> usize {
        self.games.iter().filter(|g| g.result.won()).count()
    }

    pub fn mean_return(&self) -> f64 {
        mean(self.games.iter().map(|g| g.result.total_return))
    }

    pub fn mean_duration(&self) -> f64 {
        mean(self.games.iter().map(|g| g.result.duration))
    }

    pub fn mean_normalized_distance(&self) -> f64 {
        mean(self.games.iter().map(|g| g.normalized_distance))
    }

    pub fn heatmap(&self, half_width: f64) -> Heatmap {
        Heatmap::from_games(self.batch_index, self.games.iter().map(|g| &g.result), half_width)
    }

    pub fn sample_count(&self) -> usize {
        self.games.iter().map(|g| g.result.trajectory.len()).sum()
    }

    pub fn summary(&self) -> BatchSummary {
        let winners: Vec<_> = self.games.iter().filter(|g| g.result.won()).collect();
        BatchSummary {
            batch_index: self.batch_index,
            kind: self.kind,
            block: self.block,
            games: self.games.len(),
            wins: self.wins(),
            mean_return: self.mean_return(),
            mean_duration: self.mean_duration(),
            mean_winning_duration: (!winners.is_empty()).then(|| mean(winners.iter().map(|g| g.result.duration))),
            mean_normalized_distance: self.mean_normalized_distance(),
            per_game: self.games.iter().map(GameRecord::summary).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub batch_index: usize,
    pub kind: BatchKind,
    pub block: Option<usize>,
    pub games: usize,
    pub wins: usize,
    pub mean_return: f64,
    pub mean_duration: f64,
    pub mean_winning_duration: Option<f64>,
    pub mean_normalized_distance: f64,
    pub per_game: Vec<GameSummary>,
}

/// Plays `games` games of one batch.
pub fn run_batch(
    learner: &mut Learner,
    partner: &mut dyn Partner,
    kind: BatchKind,
    batch_index: usize,
    block: Option<usize>,
    games: usize,
) -> Result<BatchRecord> {
    let mut records = Vec::with_capacity(games);
    for _ in 0..games {
        let mut play = learner.start_game(kind)?;
        partner.begin_game(play.game_id);
        while !play.is_done() {
            let human = partner.level(&play.state(), play.ticks());
            play.tick(learner, human)?;
        }
        records.push(play.finish(learner)?);
    }
    Ok(BatchRecord { batch_index, kind, block, games: records })
}

/// Training batch, off-line update and testing batch of one block.
#[derive(Debug, Clone)]
pub struct BlockRecord {
    pub block: usize,
    pub training: BatchRecord,
    pub report: TrainingReport,
    pub testing: BatchRecord,
    /// Buffer size after the training batch.
    pub buffer_len: usize,
    pub params: PolicyParams,
}

/// Runs block `block` (1-based); batch indices follow the baseline at 0.
pub fn run_block(learner: &mut Learner, partner: &mut dyn Partner, block: usize, games: usize) -> Result<BlockRecord> {
    let training = run_batch(learner, partner, BatchKind::Training, 2 * block - 1, Some(block), games)?;
    let buffer_len = learner.buffer.len();
    let report = learner.train()?;
    let testing = run_batch(learner, partner, BatchKind::Testing, 2 * block, Some(block), games)?;
    Ok(BlockRecord { block, training, report, testing, buffer_len, params: learner.agent.params.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub condition: Condition,
    pub partner: String,
    pub seed: u64,
    pub config_digest: String,
    pub updates_per_block: usize,
    pub complete: bool,
    pub error: Option<String>,
    pub batches: Vec<BatchSummary>,
    pub heatmaps: Vec<Heatmap>,
    /// Replay buffer size after each batch.
    pub buffer_sizes: Vec<usize>,
    /// Simulated seconds of play over all batches.
    pub total_game_time: f64,
    pub training: Vec<TrainingReport>,
}

impl MetricsReport {
    pub fn testing(&self) -> impl Iterator<Item = &BatchSummary> {
        self.batches.iter().filter(|b| matches!(b.kind, BatchKind::Baseline | BatchKind::Testing))
    }

    pub fn training_batches(&self) -> impl Iterator<Item = &BatchSummary> {
        self.batches.iter().filter(|b| b.kind == BatchKind::Training)
    }

    /// First block whose testing batch reaches `wins`, if any.
    pub fn first_block_reaching(&self, wins: usize) -> Option<usize> {
        self.batches
            .iter()
            .filter(|b| b.kind == BatchKind::Testing && b.wins >= wins)
            .find_map(|b| b.block)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Everything a study run produced.
#[derive(Debug, Clone)]
pub struct StudyRun {
    pub report: MetricsReport,
    pub batches: Vec<BatchRecord>,
    /// Policy after each block.
    pub snapshots: Vec<PolicyParams>,
    pub learner: Learner,
    pub wall_clock_secs: f64,
}

/// Runs the full protocol with the configured scripted partner.
pub fn run_study(config: &StudyConfig, expert: Option<SharedExpert>) -> Result<StudyRun> {
    let mut partner = config.partner.build(derive_seed(config.seed, Stream::Partner))?;
    run_study_with(config, expert, partner.as_mut())
}

/// Runs the full protocol against any partner. Configuration problems fail
/// before the first game; a fault mid-run yields a report flagged incomplete.
pub fn run_study_with(config: &StudyConfig, expert: Option<SharedExpert>, partner: &mut dyn Partner) -> Result<StudyRun> {
    let started = Instant::now();
    let mut learner = Learner::new(config, expert)?;
    let mut batches = Vec::with_capacity(1 + 2 * config.blocks);
    let mut training = Vec::with_capacity(config.blocks);
    let mut snapshots = Vec::with_capacity(config.blocks);
    let mut buffer_sizes = Vec::new();

    let mut run = || -> Result<()> {
        let baseline = run_batch(&mut learner, partner, BatchKind::Baseline, 0, None, config.games_per_batch)?;
        batches.push(baseline);
        buffer_sizes.push(learner.buffer.len());
        for block in 1..=config.blocks {
            let b = run_block(&mut learner, partner, block, config.games_per_batch)?;
            log::info!(
                "block {block}: training wins {}/{}, testing wins {}/{}, buffer {}",
                b.training.wins(),
                b.training.games.len(),
                b.testing.wins(),
                b.testing.games.len(),
                b.buffer_len
            );
            buffer_sizes.push(b.buffer_len);
            buffer_sizes.push(learner.buffer.len());
            batches.push(b.training);
            batches.push(b.testing);
            training.push(b.report);
            snapshots.push(b.params);
        }
        Ok(())
    };
    let error = run().err().map(|e| e.to_string());
    if let Some(e) = &error {
        log::error!("study aborted: {e}");
    }

    let report = assemble_report(config, &batches, training, buffer_sizes, error);
    Ok(StudyRun { report, batches, snapshots, learner, wall_clock_secs: started.elapsed().as_secs_f64() })
}

/// Builds the report for a (possibly partial) sequence of batches.
pub fn assemble_report(
    config: &StudyConfig,
    batches: &[BatchRecord],
    training: Vec<TrainingReport>,
    buffer_sizes: Vec<usize>,
    error: Option<String>,
) -> MetricsReport {
    let half_width = config.game.half_width;
    MetricsReport {
        condition: config.condition,
        partner: config.partner.to_string(),
        seed: config.seed,
        config_digest: config.digest(),
        updates_per_block: config.sac.updates,
        complete: error.is_none() && batches.len() == 1 + 2 * config.blocks,
        error,
        batches: batches.iter().map(BatchRecord::summary).collect(),
        heatmaps: batches.iter().map(|b| b.heatmap(half_width)).collect(),
        buffer_sizes,
        total_game_time: batches.iter().flat_map(|b| &b.games).map(|g| g.result.duration).sum(),
        training,
    }
}

/// Kind, index and block of every batch in protocol order.
pub fn batch_plan(blocks: usize) -> Vec<(BatchKind, usize, Option<usize>)> {
    let mut plan = vec![(BatchKind::Baseline, 0, None)];
    for block in 1..=blocks {
        plan.push((BatchKind::Training, 2 * block - 1, Some(block)));
        plan.push((BatchKind::Testing, 2 * block, Some(block)));
    }
    plan
}

/// Settings of the solo familiarization games on the partner's axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamiliarizationConfig {
    pub game: GameConfig,
    pub games: usize,
}

impl Default for FamiliarizationConfig {
    fn default() -> Self {
        let base = GameConfig::default();
        let sip = [0.0, -base.half_width];
        Self {
            game: GameConfig { goal_speed: 0.02, game_timeout: 10.0, start_positions: [sip; 4], ..base },
            games: 7,
        }
    }
}

/// Solo games: the agent's axis is locked at `x = 0` and every game starts from the same point.
pub fn run_familiarization(partner: &mut dyn Partner, config: &FamiliarizationConfig) -> Result<BatchRecord> {
    let mut unused = stream_rng(0, Stream::Corners);
    let mut games = Vec::with_capacity(config.games);
    for g in 0..config.games {
        partner.begin_game(g as u64);
        let mut tick = 0u64;
        let result = crate::env::run_game(&config.game, CornerChoice::Fixed(0), &mut unused, |_| 0, |s| {
            let level = partner.level(s, tick);
            tick += 1;
            level.value()
        })?;
        games.push(GameRecord::new(g as u64, BatchKind::Familiarization, result, Vec::new(), None, &config.game));
    }
    Ok(BatchRecord { batch_index: 0, kind: BatchKind::Familiarization, block: None, games })
}
