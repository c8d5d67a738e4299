//! Command-line pipeline around the core library: dataset generation,
//! autoencoder and classifier training, attack sweeps, defenses, transfer
//! evaluation, defense calibration, interpolation, and report rendering.
//! Every command reads and writes a run directory named by the hash of the
//! experiment config, so a config maps to one reproducible set of artifacts.

pub mod artifacts;
pub mod config;
pub mod report;
pub mod run;
