//! Config-file and CSV exchange plus seeded synthetic-noise helpers.

pub mod config;
pub mod csv;
pub mod synth;
