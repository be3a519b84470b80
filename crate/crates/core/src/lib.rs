//! Sleep/wake classification from 1 Hz heart-rate and SpO₂ oximetry.
//!
//! Pipeline: [`signal_io`] loads per-patient records, [`preprocess`] fills
//! bad-quality gaps and standardizes, [`rnn`] runs a two-layer bidirectional
//! GRU (or LSTM) with a relu/softmax head, [`training`] fits it with Adam on
//! length-sorted padded mini-batches, [`staging`] turns per-second predictions
//! into 30-second hypnograms by majority vote and [`metrics`] scores them.
//! [`synthgen`] produces labelled synthetic recordings for desk-scale runs.

pub mod cli;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod preprocess;
pub mod rnn;
pub mod signal_io;
pub mod staging;
pub mod synthgen;
pub mod training;

pub use error::{Error, Result};
pub use signal_io::{OximetryRecord, Stage, WINDOW_SECONDS};
