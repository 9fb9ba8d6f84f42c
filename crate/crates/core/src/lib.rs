//! Reward shaping and group-relative policy optimization for a tool-using
//! expression classifier, run against a synthetic world.

pub mod calibration;
pub mod commands;
pub mod config;
pub mod grpo;
pub mod log;
pub mod policy;
pub mod protocol;
pub mod report;
pub mod reward;
pub mod rng;
pub mod sim;
pub mod train;
pub mod types;
