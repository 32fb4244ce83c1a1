//! Evaluation harness for visual question answering strategies.

pub mod analysis;
pub mod backends;
pub mod config;
pub mod dataset;
pub mod e2e;
pub mod instance;
pub mod metrics;
pub mod program;
pub mod report;
pub mod runner;
pub mod scoring;
pub mod successive;
