//! Unsupervised source separation for time series, driven by wavelet
//! scattering covariance statistics.
//!
//! The crate builds dyadic complex wavelet filter banks, computes two-layer
//! scattering transforms and their covariance summaries, and separates an
//! unknown source from an observed mixture by minimizing normalized
//! statistical distances with L-BFGS. Synthetic generators (multifractal
//! random walk increments, glitch-like transient trains), a classical
//! derivative-threshold deglitcher for comparison, and file I/O round out
//! the toolkit behind the `scatsep` command-line interface.

pub mod baseline;
pub mod dataio;
pub mod error;
pub mod experiments;
pub mod fourier;
pub mod grad;
pub mod lbfgs;
pub mod par;
pub mod scattering;
pub mod separation;
pub mod signal;
pub mod svgplot;
pub mod synth;
pub mod wavelet;

pub use error::{Error, Result};
pub use signal::Waveform;
pub use wavelet::{build_filter_bank, littlewood_paley_profile, wavelet_transform, FilterBank, WaveletFamily};
