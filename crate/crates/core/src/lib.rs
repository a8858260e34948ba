//! Uplink power-domain NOMA for a single NB-IoT cell.
//!
//! The crate is organised around the pipeline a trial goes through:
//!
//! * [`scenario`] draws a reproducible cell (devices, Rayleigh/path-loss gains,
//!   rate thresholds) from a [`scenario::ScenarioConfig`] and a seed.
//! * [`clustering`] places devices into NOMA clusters by average channel gain.
//! * [`allocation`] greedily hands subcarriers to clusters with equal-split
//!   power.
//! * [`rate_model`] evaluates SIC rates, fairness and structural constraints.
//! * [`power_opt`] solves the per-cluster power problem in suffix-sum space.
//! * [`baselines`] holds the OFDMA / fast-OFDM baselines and the brute-force
//!   oracles used to certify the heuristics on small instances.
//! * [`harness`] runs paired Monte Carlo experiments and writes CSV.

pub mod allocation;
pub mod baselines;
pub mod clustering;
pub mod error;
pub mod harness;
pub mod power_opt;
pub mod rate_model;
pub mod scenario;
mod stats;

pub use error::{Error, Result};
