//! Discrete-action Soft Actor-Critic.
//!
//! The actor maps a normalized 4-dim state to three logits; twin critics map
//! it to three action values. Training is off-line: after each batch of
//! games the learner performs a fixed number of gradient updates on
//! minibatches drawn from the replay buffer.

pub mod nn;
pub mod replay;
pub mod snapshot;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EEState, Level};
use crate::error::{Error, Result};
use nn::{log_softmax_rows, Adam, Mlp, MlpGrad};
pub use replay::{Minibatch, ReplayBuffer, Transition};

pub const STATE_DIM: usize = 4;
pub const ACTION_DIM: usize = 3;

/// Scales physical state units to roughly unit range before the networks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub position_scale: f64,
    pub velocity_scale: f64,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self { position_scale: 0.1, velocity_scale: 0.5 }
    }
}

impl Normalizer {
    pub fn apply(&self, s: &EEState) -> [f64; STATE_DIM] {
        [
            s.x / self.position_scale,
            s.y / self.position_scale,
            s.vx / self.velocity_scale,
            s.vy / self.velocity_scale,
        ]
    }

    pub fn row(&self, s: &EEState) -> Array2<f64> {
        Array2::from_shape_vec((1, STATE_DIM), self.apply(s).to_vec()).expect("1x4 shape")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacConfig {
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub temperature_lr: f64,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    /// Soft target update coefficient, applied after every gradient update.
    pub tau: f64,
    pub target_entropy: f64,
    pub initial_temperature: f64,
    /// Gradient updates per off-line training phase.
    pub updates: usize,
    pub buffer_capacity: usize,
    pub normalizer: Normalizer,
    /// Loss curves are averaged over windows of this many updates.
    pub report_every: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl SacConfig {
    /// 14K updates per block.
    pub fn paper() -> Self {
        Self {
            gamma: 0.99,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            temperature_lr: 3e-4,
            batch_size: 256,
            hidden: vec![64, 64],
            tau: 0.005,
            target_entropy: 0.6 * (ACTION_DIM as f64).ln(),
            initial_temperature: 1.0,
            updates: 14_000,
            buffer_capacity: replay::DEFAULT_CAPACITY,
            normalizer: Normalizer::default(),
            report_every: 100,
        }
    }

    /// Same learner with 2K updates per block.
    pub fn desk() -> Self {
        Self { updates: 2_000, ..Self::paper() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("discount {} not in (0, 1)", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau {} not in (0, 1]", self.tau)));
        }
        if self.batch_size == 0 || self.hidden.contains(&0) || self.hidden.is_empty() {
            return Err(Error::Config("batch size and hidden widths must be positive".into()));
        }
        if self.initial_temperature.is_nan() || self.initial_temperature <= 0.0 {
            return Err(Error::Config("initial temperature must be positive".into()));
        }
        if self.report_every == 0 || self.buffer_capacity == 0 {
            return Err(Error::Config("report_every and buffer_capacity must be positive".into()));
        }
        Ok(())
    }

    fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![STATE_DIM];
        sizes.extend(&self.hidden);
        sizes.push(ACTION_DIM);
        sizes
    }
}

/// All learned quantities of the agent.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub actor: Mlp,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub target_critic1: Mlp,
    pub target_critic2: Mlp,
    pub log_temperature: f64,
    pub normalizer: Normalizer,
}

impl PolicyParams {
    /// Fresh parameters. The actor's output layer starts at zero so the initial policy is exactly uniform.
    pub fn new<R: Rng + ?Sized>(config: &SacConfig, rng: &mut R) -> Self {
        let sizes = config.layer_sizes();
        let mut actor = Mlp::new(&sizes, rng);
        actor.zero_output_layer();
        let critic1 = Mlp::new(&sizes, rng);
        let critic2 = Mlp::new(&sizes, rng);
        Self {
            actor,
            target_critic1: critic1.clone(),
            target_critic2: critic2.clone(),
            critic1,
            critic2,
            log_temperature: config.initial_temperature.ln(),
            normalizer: config.normalizer,
        }
    }

    pub fn temperature(&self) -> f64 {
        self.log_temperature.exp()
    }

    pub fn all_finite(&self) -> bool {
        [&self.actor, &self.critic1, &self.critic2, &self.target_critic1, &self.target_critic2]
            .iter()
            .all(|n| n.all_finite())
            && self.log_temperature.is_finite()
    }

    /// Action probabilities in `{-1, 0, +1}` index order.
    pub fn policy_probs(&self, s: &EEState) -> Result<[f64; ACTION_DIM]> {
        if !s.is_finite() {
            return Err(Error::NumericalFault(format!("non-finite state {s:?}")));
        }
        let logits = self.actor.forward(self.normalizer.row(s).view());
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFault("non-finite actor output".into()));
        }
        let (probs, _) = log_softmax_rows(&logits);
        Ok([probs[[0, 0]], probs[[0, 1]], probs[[0, 2]]])
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, s: &EEState, rng: &mut R) -> Result<usize> {
        Ok(sample_index(&self.policy_probs(s)?, rng))
    }

    pub fn greedy_action(&self, s: &EEState) -> Result<usize> {
        Ok(argmax(&self.policy_probs(s)?))
    }

    pub fn sample_level<R: Rng + ?Sized>(&self, s: &EEState, rng: &mut R) -> Result<Level> {
        Level::from_action_index(self.sample_action(s, rng)?)
    }

    pub fn greedy_level(&self, s: &EEState) -> Result<Level> {
        Level::from_action_index(self.greedy_action(s)?)
    }

    /// Copies the online critics into the target critics.
    pub fn hard_sync_targets(&mut self) {
        self.target_critic1 = self.critic1.clone();
        self.target_critic2 = self.critic2.clone();
    }

    pub fn soft_update_targets(&mut self, tau: f64) {
        self.target_critic1.soft_update_from(&self.critic1, tau);
        self.target_critic2.soft_update_from(&self.critic2, tau);
    }
}

/// Inverse-CDF draw from a categorical distribution.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding slack above the total mass: take the last supported index
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Row-wise entropy of a probability matrix given its log.
pub fn entropies(probs: &Array2<f64>, log_probs: &Array2<f64>) -> Array1<f64> {
    -(probs * log_probs).sum_axis(Axis(1))
}

fn check_finite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NumericalFault(format!("{what} is {v}")))
    }
}

/// Soft Bellman targets `r + gamma (1 - done) sum_a pi(a|s') (min Qbar(s', a) - alpha log pi(a|s'))`.
pub fn critic_targets(params: &PolicyParams, batch: &Minibatch, gamma: f64) -> Array1<f64> {
    let alpha = params.temperature();
    let (probs, log_probs) = log_softmax_rows(&params.actor.forward(batch.next_states.view()));
    let q1 = params.target_critic1.forward(batch.next_states.view());
    let q2 = params.target_critic2.forward(batch.next_states.view());
    let soft_q = ndarray::Zip::from(&q1).and(&q2).and(&log_probs).map_collect(|&a, &b, &lp| a.min(b) - alpha * lp);
    let next_value = (&probs * &soft_q).sum_axis(Axis(1));
    &batch.rewards + &(gamma * (1.0 - &batch.dones) * next_value)
}

/// Mean squared TD error of one critic against fixed targets, and its gradient.
pub fn critic_loss_grad(critic: &Mlp, batch: &Minibatch, targets: &Array1<f64>) -> (f64, MlpGrad) {
    let n = batch.len() as f64;
    let cache = critic.forward_cached(batch.states.view());
    let mut d_out = Array2::zeros(cache.output.raw_dim());
    let mut loss = 0.0;
    for (i, &a) in batch.actions.iter().enumerate() {
        let err = cache.output[[i, a]] - targets[i];
        loss += err * err;
        d_out[[i, a]] = 2.0 * err / n;
    }
    (loss / n, critic.backward(&cache, d_out))
}

/// Output of [`actor_loss_grad`].
#[derive(Debug, Clone)]
pub struct ActorLoss {
    pub loss: f64,
    pub grad: MlpGrad,
    /// Policy entropy at each batch state, before the update.
    pub entropies: Array1<f64>,
}

/// `mean_s sum_a pi(a|s) (alpha log pi(a|s) - min Q(s, a))` with critics held fixed.
pub fn actor_loss_grad(actor: &Mlp, critic1: &Mlp, critic2: &Mlp, alpha: f64, states: &Array2<f64>) -> ActorLoss {
    let n = states.nrows() as f64;
    let cache = actor.forward_cached(states.view());
    let (probs, log_probs) = log_softmax_rows(&cache.output);
    let q1 = critic1.forward(states.view());
    let q2 = critic2.forward(states.view());
    let min_q = ndarray::Zip::from(&q1).and(&q2).map_collect(|&a, &b| a.min(b));
    let f = alpha * &log_probs - &min_q;
    let per_state = (&probs * &f).sum_axis(Axis(1));
    // d/dz_k sum_a pi_a f_a = pi_k (f_k - sum_a pi_a f_a); the entropy term's own derivative sums to zero
    let mut d_out = &probs * &(&f - &per_state.view().insert_axis(Axis(1)));
    d_out /= n;
    ActorLoss {
        loss: per_state.mean().unwrap_or(0.0),
        grad: actor.backward(&cache, d_out),
        entropies: entropies(&probs, &log_probs),
    }
}

/// Loss `-log_alpha * mean(target - H)` and its derivative in `log_alpha`.
pub fn temperature_loss_grad(log_temperature: f64, entropies: &Array1<f64>, target_entropy: f64) -> (f64, f64) {
    let gap = entropies.mapv(|h| target_entropy - h).mean().unwrap_or(0.0);
    (-log_temperature * gap, -gap)
}

/// Losses of a single gradient update.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub temperature: f64,
    pub entropy: f64,
}

/// Averaged loss curves over one off-line training phase.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingReport {
    pub updates: usize,
    pub window: usize,
    pub critic_loss: Vec<f64>,
    pub actor_loss: Vec<f64>,
    pub temperature: Vec<f64>,
    pub entropy: Vec<f64>,
}

impl TrainingReport {
    fn push_window(&mut self, acc: &UpdateStats, count: usize) {
        let c = count as f64;
        self.critic_loss.push(acc.critic_loss / c);
        self.actor_loss.push(acc.actor_loss / c);
        self.temperature.push(acc.temperature / c);
        self.entropy.push(acc.entropy / c);
    }
}

/// Parameters plus optimizer state; everything an off-line training phase mutates.
#[derive(Debug, Clone)]
pub struct SacAgent {
    pub params: PolicyParams,
    pub config: SacConfig,
    actor_opt: Adam,
    critic1_opt: Adam,
    critic2_opt: Adam,
    temperature_opt: Adam,
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(config: SacConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let params = PolicyParams::new(&config, rng);
        Ok(Self::from_params(params, config))
    }

    pub fn from_params(params: PolicyParams, config: SacConfig) -> Self {
        Self {
            actor_opt: Adam::new(config.actor_lr, params.actor.num_params()),
            critic1_opt: Adam::new(config.critic_lr, params.critic1.num_params()),
            critic2_opt: Adam::new(config.critic_lr, params.critic2.num_params()),
            temperature_opt: Adam::new(config.temperature_lr, 1),
            params,
            config,
        }
    }

    /// One step on both critics. Returns the mean of the two losses.
    pub fn critic_update(&mut self, batch: &Minibatch) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("empty minibatch"));
        }
        let targets = critic_targets(&self.params, batch, self.config.gamma);
        let (l1, g1) = critic_loss_grad(&self.params.critic1, batch, &targets);
        let (l2, g2) = critic_loss_grad(&self.params.critic2, batch, &targets);
        let loss = check_finite("critic loss", 0.5 * (l1 + l2))?;
        self.critic1_opt.step_mlp(&mut self.params.critic1, &g1);
        self.critic2_opt.step_mlp(&mut self.params.critic2, &g2);
        Ok(loss)
    }

    /// One step on the actor with critics fixed. Returns the loss and batch entropies.
    pub fn actor_update(&mut self, batch: &Minibatch) -> Result<(f64, Array1<f64>)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty minibatch"));
        }
        let p = &self.params;
        let out = actor_loss_grad(&p.actor, &p.critic1, &p.critic2, p.temperature(), &batch.states);
        check_finite("actor loss", out.loss)?;
        self.actor_opt.step_mlp(&mut self.params.actor, &out.grad);
        Ok((out.loss, out.entropies))
    }

    pub fn temperature_update(&mut self, entropies: &Array1<f64>) -> Result<f64> {
        let (loss, grad) = temperature_loss_grad(self.params.log_temperature, entropies, self.config.target_entropy);
        check_finite("temperature loss", loss)?;
        self.temperature_opt.step(std::iter::once(&mut self.params.log_temperature), std::iter::once(grad));
        Ok(loss)
    }

    /// Critic, actor, temperature and target updates on one minibatch.
    pub fn train_step(&mut self, batch: &Minibatch) -> Result<UpdateStats> {
        let critic_loss = self.critic_update(batch)?;
        let (actor_loss, ent) = self.actor_update(batch)?;
        self.temperature_update(&ent)?;
        self.params.soft_update_targets(self.config.tau);
        Ok(UpdateStats {
            critic_loss,
            actor_loss,
            temperature: self.params.temperature(),
            entropy: ent.mean().unwrap_or(0.0),
        })
    }

    pub fn offline_train<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Result<TrainingReport> {
        self.offline_train_with_progress(buffer, rng, |_, _| {})
    }

    /// Runs `config.updates` gradient updates, calling `progress(done, total)` after each.
    pub fn offline_train_with_progress<R: Rng + ?Sized>(
        &mut self,
        buffer: &ReplayBuffer,
        rng: &mut R,
        mut progress: impl FnMut(usize, usize),
    ) -> Result<TrainingReport> {
        let total = self.config.updates;
        let window = self.config.report_every;
        let mut report = TrainingReport { updates: total, window, ..TrainingReport::default() };
        if total == 0 {
            return Ok(report);
        }
        // Minibatches are drawn with replacement, so a buffer smaller than
        // one minibatch is usable; short winning games can leave it that small.
        if buffer.is_empty() {
            return Err(Error::invalid("cannot train on an empty replay buffer"));
        }
        let mut acc = UpdateStats::default();
        let mut in_window = 0;
        for i in 0..total {
            let batch = buffer.minibatch(self.config.batch_size, &self.params.normalizer, rng);
            let s = self.train_step(&batch)?;
            acc.critic_loss += s.critic_loss;
            acc.actor_loss += s.actor_loss;
            acc.temperature += s.temperature;
            acc.entropy += s.entropy;
            in_window += 1;
            if in_window == window || i + 1 == total {
                report.push_window(&acc, in_window);
                acc = UpdateStats::default();
                in_window = 0;
            }
            progress(i + 1, total);
        }
        if !self.params.all_finite() {
            return Err(Error::NumericalFault("non-finite parameters after training".into()));
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> SacConfig {
        SacConfig { hidden: vec![8], batch_size: 16, updates: 10, ..SacConfig::desk() }
    }

    fn random_state<R: Rng>(rng: &mut R) -> EEState {
        EEState::new(
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
        )
    }

    fn filled_buffer(n: usize, rng: &mut ChaCha8Rng) -> ReplayBuffer {
        let mut buf = ReplayBuffer::new(1000);
        for i in 0..n {
            let done = i % 7 == 0;
            let reward = if done && i % 2 == 0 { 10.0 } else { -1.0 };
            buf.push(Transition {
                state: random_state(rng),
                action: i % 3,
                reward,
                next_state: random_state(rng),
                done,
            })
            .unwrap();
        }
        buf
    }

    #[test]
    fn initial_policy_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = PolicyParams::new(&SacConfig::desk(), &mut rng);
        for _ in 0..50 {
            let p = params.policy_probs(&random_state(&mut rng)).unwrap();
            for v in p {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn non_finite_state_is_a_fault() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = PolicyParams::new(&SacConfig::desk(), &mut rng);
        let err = params.policy_probs(&EEState::new(f64::NAN, 0.0, 0.0, 0.0)).unwrap_err();
        assert!(matches!(err, Error::NumericalFault(_)));
    }

    #[test]
    fn degenerate_distribution_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            assert_eq!(sample_index(&[1.0, 0.0, 0.0], &mut rng), 0);
        }
        let a: Vec<_> = (0..50).map(|_| sample_index(&[0.5, 0.5, 0.0], &mut ChaCha8Rng::seed_from_u64(9))).collect();
        let b: Vec<_> = (0..50).map(|_| sample_index(&[0.5, 0.5, 0.0], &mut ChaCha8Rng::seed_from_u64(9))).collect();
        assert_eq!(a, b);
        assert!(a.iter().all(|&i| i < 2));
    }

    #[test]
    fn empirical_frequencies_match_probs() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let probs = [0.2, 0.5, 0.3];
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sample_index(&probs, &mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip(probs) {
            assert!((*c as f64 / n as f64 - p).abs() < 0.01);
        }
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.3, 0.3, 0.3]), 0);
        assert_eq!(argmax(&[0.1, 0.45, 0.45]), 1);
        assert_eq!(argmax(&[0.1, 0.2, 0.7]), 2);
    }

    #[test]
    fn terminal_and_myopic_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = PolicyParams::new(&small_config(), &mut rng);
        let s = random_state(&mut rng);
        let done = Transition { state: s, action: 1, reward: 10.0, next_state: random_state(&mut rng), done: true };
        let live = Transition { state: s, action: 0, reward: -1.0, next_state: random_state(&mut rng), done: false };
        let batch = Minibatch::from_transitions(&[done, live], &params.normalizer);
        let y = critic_targets(&params, &batch, 0.99);
        assert_eq!(y[0], 10.0);
        let y0 = critic_targets(&params, &batch, 0.0);
        assert_eq!(y0.to_vec(), vec![10.0, -1.0]);
    }

    #[test]
    fn temperature_signs() {
        let target = 0.6 * 3f64.ln();
        let (_, g) = temperature_loss_grad(0.0, &Array1::from(vec![target; 4]), target);
        assert_eq!(g, 0.0);
        // Deterministic policy: descent raises log temperature.
        let (_, g) = temperature_loss_grad(0.0, &Array1::from(vec![0.0; 4]), target);
        assert!(g < 0.0);
        let (_, g) = temperature_loss_grad(0.0, &Array1::from(vec![3f64.ln(); 4]), target);
        assert!(g > 0.0);
    }

    #[test]
    fn temperature_update_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut agent = SacAgent::new(small_config(), &mut rng).unwrap();
        let before = agent.params.log_temperature;
        agent.temperature_update(&Array1::from(vec![0.0; 8])).unwrap();
        assert!(agent.params.log_temperature > before);
        // fresh optimizer: Adam momentum would carry the first step over
        let mut agent = SacAgent::new(small_config(), &mut rng).unwrap();
        let before = agent.params.log_temperature;
        agent.temperature_update(&Array1::from(vec![3f64.ln(); 8])).unwrap();
        assert!(agent.params.log_temperature < before);
    }

    #[test]
    fn zero_updates_is_noop_and_empty_buffer_refused() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let buf = filled_buffer(40, &mut rng);
        let mut agent = SacAgent::new(SacConfig { updates: 0, ..small_config() }, &mut rng).unwrap();
        let before = agent.params.clone();
        agent.offline_train(&buf, &mut rng).unwrap();
        assert_eq!(agent.params, before);

        let mut agent = SacAgent::new(small_config(), &mut rng).unwrap();
        assert!(matches!(agent.offline_train(&ReplayBuffer::new(8), &mut rng), Err(Error::InvalidInput(_))));
        let tiny = filled_buffer(4, &mut rng);
        agent.offline_train(&tiny, &mut rng).unwrap();
        assert!(agent.params.all_finite());
    }

    #[test]
    fn training_is_deterministic_and_leaves_buffer_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let buf = filled_buffer(64, &mut rng);
        let snapshot = buf.clone();
        let run = || {
            let mut init = ChaCha8Rng::seed_from_u64(1);
            let mut agent = SacAgent::new(small_config(), &mut init).unwrap();
            let report = agent.offline_train(&buf, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
            (agent.params, report)
        };
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert_eq!(buf, snapshot);
        assert_eq!(ra.critic_loss.len(), 1);
    }

    #[test]
    fn soft_update_exact_and_hard_sync() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = PolicyParams::new(&small_config(), &mut rng);
        p.critic1 = Mlp::new(&[4, 8, 3], &mut rng);
        let online = p.critic1.to_flat();
        let target = p.target_critic1.to_flat();
        p.soft_update_targets(0.005);
        let expected: Vec<f64> = online.iter().zip(&target).map(|(o, t)| 0.005 * o + (1.0 - 0.005) * t).collect();
        assert_eq!(p.target_critic1.to_flat(), expected);
        p.hard_sync_targets();
        assert_eq!(p.target_critic1, p.critic1);
        assert_eq!(p.target_critic2, p.critic2);
    }

    #[test]
    fn actor_step_reduces_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let buf = filled_buffer(64, &mut rng);
        let mut cfg = small_config();
        cfg.actor_lr = 1e-3;
        let mut agent = SacAgent::new(cfg, &mut rng).unwrap();
        // give the actor something non-trivial to start from
        agent.params.actor = Mlp::new(&[4, 8, 3], &mut rng);
        let batch = buf.minibatch(32, &agent.params.normalizer, &mut rng);
        let p = &agent.params;
        let before = actor_loss_grad(&p.actor, &p.critic1, &p.critic2, p.temperature(), &batch.states).loss;
        agent.actor_update(&batch).unwrap();
        let p = &agent.params;
        let after = actor_loss_grad(&p.actor, &p.critic1, &p.critic2, p.temperature(), &batch.states).loss;
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn equal_action_values_push_policy_to_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut actor = Mlp::new(&[4, 8, 3], &mut rng);
        let mut flat_critic = Mlp::new(&[4, 8, 3], &mut rng);
        flat_critic.layers.iter_mut().for_each(|l| {
            l.weight.fill(0.0);
            l.bias.fill(2.5);
        });
        let states = Array2::from_shape_fn((32, 4), |_| rng.random_range(-1.0..1.0));
        let mut opt = Adam::new(1e-2, actor.num_params());
        let entropy = |actor: &Mlp| {
            let (p, lp) = log_softmax_rows(&actor.forward(states.view()));
            entropies(&p, &lp).mean().unwrap()
        };
        let start = entropy(&actor);
        for _ in 0..300 {
            let out = actor_loss_grad(&actor, &flat_critic, &flat_critic, 0.5, &states);
            opt.step_mlp(&mut actor, &out.grad);
        }
        let end = entropy(&actor);
        assert!(end > start);
        assert!((end - 3f64.ln()).abs() < 1e-3, "entropy {end}");
    }
}
