//! Convolutive blind source separation for multichannel biosignals.
//!
//! The crate is `no_std` (it needs `alloc`) and contains the numerical core:
//!
//! * [`signal`]: multichannel time series and DC removal
//! * [`spectral`]: STFT analysis, centering and filter-bank transforms
//! * [`sphering`]: spatial prewhitening by symmetric eigendecomposition
//! * [`iva`]: frequency-domain independent vector analysis with a
//!   spherical Laplacian score, natural-gradient updates and the minimum
//!   distortion principle
//! * [`demix`]: time-domain MIMO FIR demixing and the full pipeline
//! * [`simulate`]: synthetic convolutive EMG/ECG mixtures with ground truth
//! * [`metrics`]: permutation-invariant SIR/SDR evaluation
//!
//! File formats, configuration and the command-line front end live in the
//! companion `convsep` crate.
#![cfg_attr(not(feature = "std"), no_std)]
#![warn(missing_debug_implementations)]

extern crate alloc;

mod error;
pub mod fft;
pub mod linalg;
pub mod rng;

pub mod demix;
pub mod iva;
pub mod metrics;
pub mod signal;
pub mod simulate;
pub mod spectral;
pub mod sphering;

pub use error::{Error, Result};

/// Complex sample type used throughout the spectral stages.
pub type Complex = num_complex::Complex<f64>;

pub use demix::{apply_mimo_fir, demix_pipeline, PipelineConfig, PipelineOutput};
pub use iva::{run_iva, IvaConfig};
pub use signal::{SignalMetadata, TimeSeries};
pub use spectral::{DemixFilterBank, FrequencyFilterBank, SpectralFrames, Window};
pub use sphering::SpheringTransform;
