//! Experiment runner for kernel-EDMD MPC: configuration parsing, the
//! fit/mpc/analyze/reproduce pipelines, trace statistics and SVG plots.

pub mod commands;
pub mod config;
pub mod plot;
pub mod stats;
