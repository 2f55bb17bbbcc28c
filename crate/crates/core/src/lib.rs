//! Weakly supervised speech enhancement.
//!
//! A complex-mask denoiser is trained on synthetic mixtures (with clean
//! references) and on reference-free recordings. The reference-free signal
//! comes from a non-intrusive quality estimator that predicts an intrusive
//! quality score from the enhanced amplitude spectrum alone; the two networks
//! are updated in alternation so the estimator keeps tracking the denoiser.

pub mod audio;
pub mod autodiff;
pub mod config;
pub mod dsp;
pub mod error;
pub mod exec;
pub mod fixture;
pub mod losses;
pub mod metrics;
pub mod mixer;
pub mod models;
pub mod trainer;

pub use audio::Waveform;
pub use dsp::{Mask, Spectrogram, StftConfig};
pub use error::{Error, Result};
pub use exec::ExecMode;
