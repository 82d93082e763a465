//! Multichannel real-valued time series.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SignalMetadata {
    /// Seconds per sample.
    pub sample_interval_s: f64,
    pub channel_labels: Vec<String>,
}

impl SignalMetadata {
    /// Metadata with labels `ch1..chP`.
    pub fn with_default_labels(sample_interval_s: f64, channels: usize) -> Self {
        Self {
            sample_interval_s,
            channel_labels: (1..=channels).map(|i| format!("ch{i}")).collect(),
        }
    }
}

/// `P` channels of equal length `n`, stored channel-major. All values are
/// finite; construction enforces it.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    channels: Vec<Vec<f64>>,
    meta: SignalMetadata,
}

impl TimeSeries {
    pub fn new(channels: Vec<Vec<f64>>, meta: SignalMetadata) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidSignal("a signal needs at least one channel".into()));
        }
        let n = channels[0].len();
        if n == 0 {
            return Err(Error::InvalidSignal("a signal needs at least one sample".into()));
        }
        for ch in &channels {
            if ch.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "channel length",
                    expected: n,
                    found: ch.len(),
                });
            }
        }
        if meta.channel_labels.len() != channels.len() {
            return Err(Error::DimensionMismatch {
                what: "channel labels",
                expected: channels.len(),
                found: meta.channel_labels.len(),
            });
        }
        if !(meta.sample_interval_s > 0.0 && meta.sample_interval_s.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sample interval must be positive, got {}",
                meta.sample_interval_s
            )));
        }
        for (c, ch) in channels.iter().enumerate() {
            if let Some(s) = ch.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { channel: c, sample: s });
            }
        }
        Ok(Self { channels, meta })
    }

    /// Convenience constructor with default labels.
    pub fn from_channels(channels: Vec<Vec<f64>>, sample_interval_s: f64) -> Result<Self> {
        let meta = SignalMetadata::with_default_labels(sample_interval_s, channels.len());
        Self::new(channels, meta)
    }

    pub fn zeros(channels: usize, samples: usize, sample_interval_s: f64) -> Result<Self> {
        Self::from_channels(alloc::vec![alloc::vec![0.0; samples]; channels], sample_interval_s)
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn channel(&self, p: usize) -> &[f64] {
        &self.channels[p]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn meta(&self) -> &SignalMetadata {
        &self.meta
    }

    pub fn sample_interval_s(&self) -> f64 {
        self.meta.sample_interval_s
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    /// Same metadata, new data (re-validated).
    pub fn with_data(&self, channels: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(channels, self.meta.clone())
    }
}

/// First-order highpass `y[n] = a·(y[n−1] + x[n] − x[n−1])` with
/// `a = exp(−2π·f_c·T_a)`, zero initial state, applied per channel.
pub fn highpass_dc_removal(ts: &TimeSeries, cutoff_hz: f64) -> Result<TimeSeries> {
    let nyquist = 0.5 / ts.sample_interval_s();
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(Error::InvalidParameter(format!(
            "highpass cutoff {cutoff_hz} Hz must lie in (0, {nyquist}) Hz"
        )));
    }
    let a = libm::exp(-2.0 * PI * cutoff_hz * ts.sample_interval_s());
    let out = ts
        .channels()
        .iter()
        .map(|x| {
            let mut y = Vec::with_capacity(x.len());
            let (mut x_prev, mut y_prev) = (0.0, 0.0);
            for &xn in x {
                let yn = a * (y_prev + xn - x_prev);
                y.push(yn);
                x_prev = xn;
                y_prev = yn;
            }
            y
        })
        .collect();
    ts.with_data(out)
}
