//! Command-line workflow and annotation HTTP service.

pub mod args;
pub mod commands;
pub mod exit;
pub mod server;
