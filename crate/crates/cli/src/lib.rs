//! Command-line driver for training, restoration, evaluation and blind
//! preference studies.

pub mod commands;
pub mod server;
pub mod study;
