//! Probabilistic policy reuse.
//!
//! During transfer training the agent follows a frozen expert's greedy
//! action with probability `psi`, which starts high and decays by a fixed
//! amount every training game; otherwise it acts from its own policy.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EEState, GameConfig, Level};
use crate::error::{Error, Result};
use crate::partner::PartnerPolicy;
use crate::sac::snapshot::{ExpertMeta, PolicySnapshot};
use crate::sac::{PolicyParams, SacConfig};
use crate::seeds::{stream_rng, Stream};
use crate::study::{self, Condition, StudyConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PprSchedule {
    pub psi0: f64,
    /// Subtracted once per training game.
    pub decay: f64,
    pub floor: f64,
}

impl Default for PprSchedule {
    fn default() -> Self {
        Self { psi0: 0.7, decay: 0.01, floor: 0.0 }
    }
}

impl PprSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.psi0)
            && (0.0..=1.0).contains(&self.floor)
            && self.floor <= self.psi0
            && self.decay >= 0.0
            && self.decay.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid reuse schedule {self:?}")))
        }
    }

    /// Reuse probability for the `k`-th training game (1-based).
    pub fn psi_at(&self, k: u64) -> Result<f64> {
        if k < 1 {
            return Err(Error::invalid("game index must be at least 1"));
        }
        let raw = self.psi0 - (k - 1) as f64 * self.decay;
        // absorb rounding residue so the floor is hit exactly
        Ok(if raw <= self.floor + 1e-12 { self.floor } else { raw.min(1.0) })
    }
}

/// Where an agent action came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSource {
    Expert,
    Current,
    /// Uniformly random exploration before any training.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    Sample,
    Greedy,
}

/// A frozen, qualified policy used as the reuse source.
///
/// Reads are counted so tests can audit that a run never consulted it.
#[derive(Debug)]
pub struct ExpertPolicy {
    params: PolicyParams,
    meta: ExpertMeta,
    reads: AtomicU64,
}

impl Clone for ExpertPolicy {
    fn clone(&self) -> Self {
        Self { params: self.params.clone(), meta: self.meta.clone(), reads: AtomicU64::new(0) }
    }
}

impl ExpertPolicy {
    pub fn new(params: PolicyParams, meta: ExpertMeta) -> Self {
        Self { params, meta, reads: AtomicU64::new(0) }
    }

    pub fn meta(&self) -> &ExpertMeta {
        &self.meta
    }

    pub fn greedy_action(&self, s: &EEState) -> Result<usize> {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.params.greedy_action(s)
    }

    pub fn params(&self) -> &PolicyParams {
        self.reads.fetch_add(1, Ordering::Relaxed);
        &self.params
    }

    /// How many times the policy has been consulted.
    pub fn reads(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn snapshot(&self, config: &SacConfig) -> PolicySnapshot {
        PolicySnapshot::new(&self.params, config, Some(self.meta.clone()))
    }

    pub fn save(&self, config: &SacConfig, path: &Path) -> Result<()> {
        self.snapshot(config).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let snap = PolicySnapshot::load(path)?;
        Self::from_snapshot(&snap)
    }

    pub fn from_snapshot(snap: &PolicySnapshot) -> Result<Self> {
        let meta = snap
            .expert
            .clone()
            .ok_or_else(|| Error::Snapshot("policy snapshot carries no expert header".into()))?;
        Ok(Self::new(snap.to_params()?, meta))
    }
}

/// Chooses the agent's action under policy reuse.
///
/// `reuse_rng` drives the reuse draw and `policy_rng` the learner's own
/// sampling, so with `psi = 0` the action stream equals plain sampling.
pub fn select_action<R1, R2>(
    current: &PolicyParams,
    expert: &ExpertPolicy,
    psi: f64,
    state: &EEState,
    reuse_rng: &mut R1,
    policy_rng: &mut R2,
    mode: ActionMode,
) -> Result<(usize, ActionSource)>
where
    R1: Rng + ?Sized,
    R2: Rng + ?Sized,
{
    if !(0.0..=1.0).contains(&psi) {
        return Err(Error::invalid(format!("reuse probability {psi} not in [0, 1]")));
    }
    let u: f64 = reuse_rng.random();
    if u < psi {
        Ok((expert.greedy_action(state)?, ActionSource::Expert))
    } else {
        let a = match mode {
            ActionMode::Sample => current.sample_action(state, policy_rng)?,
            ActionMode::Greedy => current.greedy_action(state)?,
        };
        Ok((a, ActionSource::Current))
    }
}

/// Fresh evaluation of a candidate expert with the scripted partner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualificationRecord {
    pub games: usize,
    pub wins: usize,
    pub mean_duration: f64,
    pub outcomes: Vec<bool>,
    pub durations: Vec<f64>,
}

impl QualificationRecord {
    pub fn qualifies(&self) -> bool {
        self.wins * 10 >= self.games * 9 && self.mean_duration < 10.0
    }
}

/// Plays `games` games with the candidate acting greedily.
pub fn qualification_eval(
    params: &PolicyParams,
    game: &GameConfig,
    partner: &PartnerPolicy,
    seed: u64,
    games: usize,
) -> Result<QualificationRecord> {
    let mut rng = stream_rng(seed, Stream::Qualification);
    let mut partner = partner.build(rng.random())?;
    let mut outcomes = Vec::with_capacity(games);
    let mut durations = Vec::with_capacity(games);
    for g in 0..games {
        partner.begin_game(g as u64);
        let mut tick = 0u64;
        let mut fault = None;
        let result = crate::env::run_game(
            game,
            crate::env::CornerChoice::Random,
            &mut rng,
            |s| match params.greedy_level(s) {
                Ok(l) => l.value(),
                Err(e) => {
                    fault.get_or_insert(e);
                    Level::Zero.value()
                }
            },
            |s| {
                let l = partner.level(s, tick);
                tick += 1;
                l.value()
            },
        )?;
        if let Some(e) = fault {
            return Err(e);
        }
        outcomes.push(result.won());
        durations.push(result.duration);
    }
    let wins = outcomes.iter().filter(|&&w| w).count();
    let mean_duration = durations.iter().sum::<f64>() / games.max(1) as f64;
    Ok(QualificationRecord { games, wins, mean_duration, outcomes, durations })
}

/// Trains a no-transfer agent with the scripted expert partner through the
/// full study protocol and freezes it, provided it passes a fresh 10-game
/// qualification run.
pub fn make_expert(config: &StudyConfig) -> Result<ExpertPolicy> {
    let mut config = config.clone();
    config.condition = Condition::NoTl;
    config.partner = PartnerPolicy::expert();
    let run = study::run_study(&config, None)?;
    if let Some(err) = &run.report.error {
        return Err(Error::Config(format!("expert training aborted: {err}")));
    }
    let params = run.learner.agent.params;
    let record = qualification_eval(&params, &config.game, &config.partner, config.seed, 10)?;
    if !record.qualifies() {
        return Err(Error::Qualification(Box::new(record)));
    }
    let meta = ExpertMeta {
        condition: Condition::NoTl,
        total_games: run.report.batches.iter().map(|b| b.games as u64).sum(),
        seed: config.seed,
    };
    Ok(ExpertPolicy::new(params, meta))
}

/// Tries successive seeds until one produces a qualified expert.
pub fn make_expert_with_retries(config: &StudyConfig, attempts: usize) -> Result<ExpertPolicy> {
    let mut last = None;
    for i in 0..attempts.max(1) {
        let mut c = config.clone();
        c.seed = config.seed.wrapping_add(i as u64);
        match make_expert(&c) {
            Ok(e) => return Ok(e),
            Err(e @ Error::Qualification(_)) => {
                log::warn!("expert candidate with seed {} did not qualify: {e}", c.seed);
                last = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::Config("no expert attempts made".into())))
}

/// Shared handle used by the study runner.
pub type SharedExpert = Arc<ExpertPolicy>;
