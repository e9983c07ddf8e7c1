//! Networked session service, live script driver and batch commands for
//! the attentive-listening engine.

pub mod commands;
pub mod driver;
pub mod server;

pub use server::{serve, spawn, RunningServer, ServerOptions};
