//! Waveform: the universal input/output currency of the crate.

use crate::error::{Error, Result};

/// A finite, uniformly sampled real-valued signal with sample-rate metadata.
///
/// The sample rate is advisory: algorithms operate on sample indices, the
/// rate is used for duration reporting and axis labels only.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: f64,
    label: Option<String>,
}

impl Waveform {
    /// Build a waveform, rejecting non-finite samples and non-positive rates.
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if sample_rate.is_nan() || sample_rate <= 0.0 || !sample_rate.is_finite() {
            return Err(Error::invalid(format!(
                "sample rate must be positive and finite, got {sample_rate}"
            )));
        }
        if let Some(idx) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index: idx,
                stage: "waveform samples".into(),
            });
        }
        Ok(Waveform {
            samples,
            sample_rate,
            label: None,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration in seconds implied by the sample-rate metadata.
    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }
}

/// Squared l2 norm of a slice.
pub(crate) fn energy_of(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}
