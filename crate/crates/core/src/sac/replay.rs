use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EEState, GOAL_REWARD, STEP_REWARD};
use crate::error::{Error, Result};
use crate::sac::Normalizer;

pub const DEFAULT_CAPACITY: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: EEState,
    /// Index into `{-1, 0, +1}`.
    pub action: usize,
    pub reward: f64,
    pub next_state: EEState,
    pub done: bool,
}

impl Transition {
    pub fn validate(&self) -> Result<()> {
        if self.action > 2 {
            return Err(Error::invalid(format!("action index {} not in 0..3", self.action)));
        }
        if self.reward != STEP_REWARD && self.reward != GOAL_REWARD {
            return Err(Error::invalid(format!("reward {} is neither -1 nor +10", self.reward)));
        }
        if self.reward == GOAL_REWARD && !self.done {
            return Err(Error::invalid("goal reward on a non-terminal transition"));
        }
        if !self.state.is_finite() || !self.next_state.is_finite() {
            return Err(Error::invalid("non-finite state in transition"));
        }
        Ok(())
    }
}

/// Fixed-capacity FIFO of transitions; the oldest entry is evicted when full.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: Vec<Transition>,
    /// Slot of the oldest entry once the buffer has wrapped.
    head: usize,
}

/// Network-ready view of sampled transitions.
#[derive(Debug, Clone)]
pub struct Minibatch {
    pub states: Array2<f64>,
    pub actions: Vec<usize>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    pub dones: Array1<f64>,
}

impl Minibatch {
    pub fn from_transitions(transitions: &[Transition], norm: &Normalizer) -> Self {
        let n = transitions.len();
        let mut states = Array2::zeros((n, 4));
        let mut next_states = Array2::zeros((n, 4));
        for (i, t) in transitions.iter().enumerate() {
            states.row_mut(i).assign(&Array1::from(norm.apply(&t.state).to_vec()));
            next_states.row_mut(i).assign(&Array1::from(norm.apply(&t.next_state).to_vec()));
        }
        Self {
            states,
            actions: transitions.iter().map(|t| t.action).collect(),
            rewards: transitions.iter().map(|t| t.reward).collect(),
            next_states,
            dones: transitions.iter().map(|t| if t.done { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        Self { capacity, entries: Vec::new(), head: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        t.validate()?;
        if self.entries.len() < self.capacity {
            self.entries.push(t);
        } else {
            self.entries[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
        Ok(())
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.entries.split_at(self.head);
        older.iter().chain(newer)
    }

    /// Uniform sampling with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Transition> {
        (0..n).map(|_| self.entries[rng.random_range(0..self.entries.len())]).collect()
    }

    pub fn minibatch<R: Rng + ?Sized>(&self, n: usize, norm: &Normalizer, rng: &mut R) -> Minibatch {
        Minibatch::from_transitions(&self.sample(n, rng), norm)
    }
}
