pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod modelio;
pub mod pipeline;
pub mod selftest;
