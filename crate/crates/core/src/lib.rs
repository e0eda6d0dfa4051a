//! Simulation, learning and study harness for a two-player co-learning game:
//! an agent and a partner jointly steer a point to the centre of a square,
//! each commanding one acceleration axis.

pub mod env;
pub mod error;
pub mod partner;
pub mod ppr;
pub mod sac;
pub mod seeds;
pub mod study;

pub use env::{EEState, GameConfig, GameResult, Level, Outcome};
pub use error::{Error, Result};
pub use partner::{Partner, PartnerPolicy};
pub use ppr::{ExpertPolicy, PprSchedule};
pub use sac::{PolicyParams, SacAgent, SacConfig};
pub use study::{Condition, Profile, StudyConfig};
