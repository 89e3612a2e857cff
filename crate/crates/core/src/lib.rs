//! Synthetic pulsed-radar dataset generation and multi-task signal
//! characterisation models.

pub mod bundle;
pub mod dataset;
pub mod error;
pub mod iq_input;
pub mod model;
pub mod train;
pub mod waveform;

pub use error::{Error, Result};
