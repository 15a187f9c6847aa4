//! Spike-based backpropagation for feedforward spiking networks.
//!
//! Forward and error signals are both spike trains. Hidden and output
//! neurons are split into a forward unit and a pair of gradient units
//! (positive and negative), and weight updates are local coincidences
//! between presynaptic forward spikes and postsynaptic gradient spikes.

pub mod data;
pub mod error;
pub mod harness;
pub mod matrix;
pub mod net;
pub mod oracle;
pub mod par;
pub mod rng;
pub mod spike;
pub mod updates;

pub use error::{Error, Result};
