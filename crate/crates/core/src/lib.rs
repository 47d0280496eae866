//! Simulation, signal processing, dataset, model and search pipeline for
//! automatic target recognition from OFDM sensing channels.

pub mod dataset;
pub mod error;
pub mod kv;
pub mod model;
pub mod periodogram;
pub mod pgm;
pub mod radio;
pub mod search;
pub mod seed;
pub mod waveform;

pub use error::{Error, Result};
pub use radio::{RadioConfig, TddPattern};
