//! Versioned JSON snapshot of a policy: every network, the temperature,
//! the learner configuration and the state normalization.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::nn::{Linear, Mlp};
use super::{Normalizer, PolicyParams, SacConfig, ACTION_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::study::Condition;

pub const SNAPSHOT_FORMAT: &str = "colearn-policy";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerRecord {
    inputs: usize,
    outputs: usize,
    /// Row-major `inputs x outputs`.
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NetRecord {
    layers: Vec<LayerRecord>,
}

impl NetRecord {
    fn from_mlp(net: &Mlp) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| LayerRecord {
                inputs: l.inputs(),
                outputs: l.outputs(),
                weight: l.weight.iter().copied().collect(),
                bias: l.bias.to_vec(),
            })
            .collect();
        Self { layers }
    }

    fn to_mlp(&self, name: &str) -> Result<Mlp> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let weight = Array2::from_shape_vec((l.inputs, l.outputs), l.weight.clone())
                .map_err(|e| Error::Snapshot(format!("{name} layer {i}: {e}")))?;
            if l.bias.len() != l.outputs {
                return Err(Error::Snapshot(format!("{name} layer {i}: bias length mismatch")));
            }
            if i > 0 && self.layers[i - 1].outputs != l.inputs {
                return Err(Error::Snapshot(format!("{name} layer {i}: width does not chain")));
            }
            layers.push(Linear { weight, bias: Array1::from(l.bias.clone()) });
        }
        let net = Mlp { layers };
        if net.layers.is_empty() || net.input_dim() != STATE_DIM || net.output_dim() != ACTION_DIM {
            return Err(Error::Snapshot(format!(
                "{name} maps {} -> {} but the game needs {STATE_DIM} -> {ACTION_DIM}",
                net.layers.first().map_or(0, Linear::inputs),
                net.output_dim()
            )));
        }
        Ok(net)
    }
}

/// Provenance of an expert snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertMeta {
    pub condition: Condition,
    pub total_games: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Networks {
    actor: NetRecord,
    critic1: NetRecord,
    critic2: NetRecord,
    target_critic1: NetRecord,
    target_critic2: NetRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    format: String,
    version: u32,
    state_dim: usize,
    action_dim: usize,
    pub normalizer: Normalizer,
    pub config: SacConfig,
    log_temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expert: Option<ExpertMeta>,
    networks: Networks,
}

impl PolicySnapshot {
    pub fn new(params: &PolicyParams, config: &SacConfig, expert: Option<ExpertMeta>) -> Self {
        Self {
            format: SNAPSHOT_FORMAT.into(),
            version: SNAPSHOT_VERSION,
            state_dim: STATE_DIM,
            action_dim: ACTION_DIM,
            normalizer: params.normalizer,
            config: config.clone(),
            log_temperature: params.log_temperature,
            expert,
            networks: Networks {
                actor: NetRecord::from_mlp(&params.actor),
                critic1: NetRecord::from_mlp(&params.critic1),
                critic2: NetRecord::from_mlp(&params.critic2),
                target_critic1: NetRecord::from_mlp(&params.target_critic1),
                target_critic2: NetRecord::from_mlp(&params.target_critic2),
            },
        }
    }

    fn check_header(&self) -> Result<()> {
        if self.format != SNAPSHOT_FORMAT {
            return Err(Error::Snapshot(format!("unexpected format tag {:?}", self.format)));
        }
        if self.version != SNAPSHOT_VERSION {
            return Err(Error::Snapshot(format!("unsupported snapshot version {}", self.version)));
        }
        if self.state_dim != STATE_DIM || self.action_dim != ACTION_DIM {
            return Err(Error::Snapshot(format!(
                "snapshot is for {}-dim states and {} actions, expected {STATE_DIM} and {ACTION_DIM}",
                self.state_dim, self.action_dim
            )));
        }
        Ok(())
    }

    pub fn to_params(&self) -> Result<PolicyParams> {
        self.check_header()?;
        let n = &self.networks;
        Ok(PolicyParams {
            actor: n.actor.to_mlp("actor")?,
            critic1: n.critic1.to_mlp("critic1")?,
            critic2: n.critic2.to_mlp("critic2")?,
            target_critic1: n.target_critic1.to_mlp("target_critic1")?,
            target_critic2: n.target_critic2.to_mlp("target_critic2")?,
            log_temperature: self.log_temperature,
            normalizer: self.normalizer,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let snap: Self = serde_json::from_str(s)?;
        snap.check_header()?;
        Ok(snap)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
