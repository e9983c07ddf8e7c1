//! Semi-autonomous attentive listening.
//!
//! The autonomous listener ([`dialogue`]) answers each user turn with a
//! short response and backchannels mid-turn. A rule-based detector
//! ([`detector`]) watches for signs that the conversation is breaking down
//! and prompts a remote operator, who can take over the agent's voice and
//! face and later hand control back ([`control`]). Every session is an
//! append-only event log that replays deterministically ([`session`]).
//!
//! [`protocol`] is the JSON message layer used by the network service,
//! [`sim`] drives scripted sessions on a virtual clock and carries the
//! offline reference detector, and [`metrics`] and [`analytics`] summarize
//! finished sessions.

pub mod analytics;
pub mod clock;
pub mod config;
pub mod control;
pub mod detector;
pub mod dialogue;
pub mod metrics;
pub mod protocol;
pub mod session;
pub mod sim;

pub use config::Config;
pub use control::{ControlMode, Expression, SessionEvent, SessionLog};
pub use detector::{TakeoverCondition, TakeoverPrompt};
pub use dialogue::{AgentResponse, Annotation, ResponseKind, UserUtterance};
pub use session::{Input, Session, SessionState};
