//! Command implementations and the teleoperation server behind the `sqcbf`
//! binary.

pub mod commands;
pub mod protocol;
pub mod server;
