//! Simulation of adversarial attacks on a recurrent load forecaster and of
//! their cost impact on a merit-order dispatched grid with battery storage.

pub mod adversary;
pub mod analysis;
pub mod autodiff;
pub mod config;
pub mod data;
pub mod dispatch;
pub mod error;
pub mod forecaster;
pub mod pipeline;
pub mod storage;
pub mod sweep;
pub mod synth;

pub use error::{Error, Result};
