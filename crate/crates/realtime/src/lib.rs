//! Real-time host for live co-learning sessions: a 125 Hz control loop,
//! agent decisions every 200 ms, keyboard input from a websocket client and
//! off-line training during breaks.

pub mod output;
pub mod protocol;
pub mod server;
pub mod session;
pub mod timing;

pub use protocol::{ClientMessage, ServerEvent, ServerMessage, PROTOCOL_VERSION};
pub use session::{Inbound, LiveRun, Phase, Session, SessionConfig};
