//! Block-wise STFT, centering and MIMO filter transforms.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::fft::Fft;
use crate::linalg::Square;
use crate::signal::{SignalMetadata, TimeSeries};
use crate::{Complex, Error, Result};

/// Analysis window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Window {
    /// Periodic Hann, `0.5 − 0.5·cos(2πk/M)`.
    #[default]
    Hann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; len],
            Window::Hann => (0..len)
                .map(|k| 0.5 - 0.5 * libm::cos(2.0 * PI * k as f64 / len as f64))
                .collect(),
        }
    }
}

/// Complex STFT data for `P` channels, `N` blocks and `M` bins.
///
/// Values are stored at index `(p·N + m)·M + ν`. All `M` bins are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFrames {
    channels: usize,
    blocks: usize,
    bins: usize,
    data: Vec<Complex>,
    pub block_hop: usize,
    pub window: Window,
    pub meta: SignalMetadata,
}

impl SpectralFrames {
    pub fn new(
        channels: usize,
        blocks: usize,
        bins: usize,
        data: Vec<Complex>,
        block_hop: usize,
        window: Window,
        meta: SignalMetadata,
    ) -> Result<Self> {
        if channels == 0 || blocks == 0 || bins == 0 {
            return Err(Error::InvalidSignal(format!(
                "frames need P, N, M ≥ 1 (got {channels}, {blocks}, {bins})"
            )));
        }
        if data.len() != channels * blocks * bins {
            return Err(Error::DimensionMismatch {
                what: "frame data length",
                expected: channels * blocks * bins,
                found: data.len(),
            });
        }
        Ok(Self {
            channels,
            blocks,
            bins,
            data,
            block_hop,
            window,
            meta,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    #[inline]
    pub fn index(&self, p: usize, m: usize, nu: usize) -> usize {
        (p * self.blocks + m) * self.bins + nu
    }

    #[inline]
    pub fn get(&self, p: usize, m: usize, nu: usize) -> Complex {
        self.data[self.index(p, m, nu)]
    }

    #[inline]
    pub fn set(&mut self, p: usize, m: usize, nu: usize, v: Complex) {
        let i = self.index(p, m, nu);
        self.data[i] = v;
    }

    pub fn data(&self) -> &[Complex] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex] {
        &mut self.data
    }

    /// Spectrum of channel `p`, block `m`.
    pub fn block(&self, p: usize, m: usize) -> &[Complex] {
        let start = self.index(p, m, 0);
        &self.data[start..start + self.bins]
    }

    /// Root mean square magnitude over all entries.
    pub fn rms(&self) -> f64 {
        let e: f64 = self.data.iter().map(|v| v.norm_sqr()).sum();
        libm::sqrt(e / self.data.len() as f64)
    }
}

/// Short-time Fourier transform with `M` bins and hop `hop`.
///
/// Block `m`, bin `ν` holds `Σ_k window(k)·x_p(m·hop + k)·exp(−j2πνk/M)`.
pub fn stft(ts: &TimeSeries, bins: usize, hop: usize, window: Window) -> Result<SpectralFrames> {
    if bins == 0 || !bins.is_power_of_two() {
        return Err(Error::InvalidParameter(format!(
            "bin count M = {bins} must be a power of two"
        )));
    }
    if hop == 0 || hop > bins {
        return Err(Error::InvalidParameter(format!(
            "hop {hop} must lie in 1..={bins}"
        )));
    }
    let n = ts.len();
    if n < bins {
        return Err(Error::SignalTooShort {
            needed: bins,
            found: n,
        });
    }
    let blocks = (n - bins) / hop + 1;
    let p_count = ts.channel_count();
    let fft = Fft::new(bins)?;
    let w = window.coefficients(bins);
    let mut data = vec![Complex::new(0.0, 0.0); p_count * blocks * bins];
    for p in 0..p_count {
        let x = ts.channel(p);
        for m in 0..blocks {
            let start = (p * blocks + m) * bins;
            let buf = &mut data[start..start + bins];
            for (k, slot) in buf.iter_mut().enumerate() {
                *slot = Complex::new(w[k] * x[m * hop + k], 0.0);
            }
            fft.forward(buf);
        }
    }
    SpectralFrames::new(p_count, blocks, bins, data, hop, window, ts.meta().clone())
}

/// Subtracts, per channel and bin, the mean over blocks.
pub fn center(frames: &SpectralFrames) -> SpectralFrames {
    let mut out = frames.clone();
    let (pc, nb, mb) = (frames.channels, frames.blocks, frames.bins);
    let inv_n = 1.0 / nb as f64;
    for p in 0..pc {
        for nu in 0..mb {
            let mut mean = Complex::new(0.0, 0.0);
            for m in 0..nb {
                mean += frames.get(p, m, nu);
            }
            mean *= inv_n;
            for m in 0..nb {
                let i = out.index(p, m, nu);
                out.data[i] -= mean;
            }
        }
    }
    out
}

/// Per-bin complex `P×P` demixing matrices `W^(ν)`, `ν = 0..M−1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyFilterBank {
    matrices: Vec<Square<Complex>>,
}

impl FrequencyFilterBank {
    pub fn new(matrices: Vec<Square<Complex>>) -> Result<Self> {
        let Some(first) = matrices.first() else {
            return Err(Error::InvalidParameter("filter bank needs at least one bin".into()));
        };
        let p = first.dim();
        for (nu, w) in matrices.iter().enumerate() {
            if w.dim() != p {
                return Err(Error::DimensionMismatch {
                    what: "per-bin matrix size",
                    expected: p,
                    found: w.dim(),
                });
            }
            if !w.is_finite() {
                return Err(Error::Divergence { iteration: 0, bin: nu });
            }
        }
        Ok(Self { matrices })
    }

    pub fn identity(channels: usize, bins: usize) -> Self {
        Self {
            matrices: vec![Square::identity(channels); bins],
        }
    }

    pub fn bins(&self) -> usize {
        self.matrices.len()
    }

    pub fn channels(&self) -> usize {
        self.matrices[0].dim()
    }

    pub fn matrices(&self) -> &[Square<Complex>] {
        &self.matrices
    }

    pub fn bin(&self, nu: usize) -> &Square<Complex> {
        &self.matrices[nu]
    }

    pub fn into_matrices(self) -> Vec<Square<Complex>> {
        self.matrices
    }
}

/// Real time-domain MIMO FIR demixing system `w_{q,p,κ}`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DemixFilterBank {
    channels: usize,
    length: usize,
    /// Coefficients in `(q, p, κ)` order.
    coeffs: Vec<f64>,
}

impl DemixFilterBank {
    pub fn new(channels: usize, length: usize, coeffs: Vec<f64>) -> Result<Self> {
        if channels == 0 || length == 0 {
            return Err(Error::InvalidParameter(format!(
                "filter bank needs P ≥ 1 and L ≥ 1 (got {channels}, {length})"
            )));
        }
        if coeffs.len() != channels * channels * length {
            return Err(Error::DimensionMismatch {
                what: "filter coefficient count",
                expected: channels * channels * length,
                found: coeffs.len(),
            });
        }
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSignal("non-finite filter coefficient".into()));
        }
        Ok(Self {
            channels,
            length,
            coeffs,
        })
    }

    /// `w_{q,q,0} = 1`, everything else zero.
    pub fn identity(channels: usize, length: usize) -> Self {
        let mut coeffs = vec![0.0; channels * channels * length];
        for q in 0..channels {
            coeffs[(q * channels + q) * length] = 1.0;
        }
        Self {
            channels,
            length,
            coeffs,
        }
    }

    /// Length-1 bank holding a constant matrix.
    pub fn from_matrix(m: &Square<f64>) -> Self {
        Self {
            channels: m.dim(),
            length: 1,
            coeffs: m.as_slice().to_vec(),
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// FIR from input `p` to output `q`.
    pub fn filter(&self, q: usize, p: usize) -> &[f64] {
        let start = (q * self.channels + p) * self.length;
        &self.coeffs[start..start + self.length]
    }

    pub fn coeff(&self, q: usize, p: usize, kappa: usize) -> f64 {
        self.coeffs[(q * self.channels + p) * self.length + kappa]
    }

    pub fn set_coeff(&mut self, q: usize, p: usize, kappa: usize, v: f64) {
        self.coeffs[(q * self.channels + p) * self.length + kappa] = v;
    }
}

/// What the time-domain conversion throws away.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationDiagnostics {
    /// Energy in lags `L..M` divided by total impulse-response energy.
    pub discarded_energy_fraction: f64,
    /// Imaginary energy divided by total energy, over the kept lags.
    pub imaginary_energy_fraction: f64,
}

fn check_pair(bins: usize, length: usize) -> Result<()> {
    if bins != 2 * length {
        return Err(Error::InvalidParameter(format!(
            "bin count M = {bins} must equal 2L = {}",
            2 * length
        )));
    }
    Ok(())
}

/// Inverse DFT of every entry, keeping the real part of the first `L` lags.
pub fn filters_to_time(fb: &FrequencyFilterBank, length: usize) -> Result<DemixFilterBank> {
    filters_to_time_with_diagnostics(fb, length).map(|(b, _)| b)
}

pub fn filters_to_time_with_diagnostics(
    fb: &FrequencyFilterBank,
    length: usize,
) -> Result<(DemixFilterBank, TruncationDiagnostics)> {
    let bins = fb.bins();
    check_pair(bins, length)?;
    let p = fb.channels();
    let fft = Fft::new(bins)?;
    let mut coeffs = vec![0.0; p * p * length];
    let (mut total, mut discarded, mut kept, mut imag) = (0.0, 0.0, 0.0, 0.0);
    let mut buf = vec![Complex::new(0.0, 0.0); bins];
    for q in 0..p {
        for r in 0..p {
            for (nu, slot) in buf.iter_mut().enumerate() {
                *slot = fb.bin(nu)[(q, r)];
            }
            fft.inverse(&mut buf);
            for (k, v) in buf.iter().enumerate() {
                let e = v.norm_sqr();
                total += e;
                if k < length {
                    kept += e;
                    imag += v.im * v.im;
                    coeffs[(q * p + r) * length + k] = v.re;
                } else {
                    discarded += e;
                }
            }
        }
    }
    let frac = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    let diag = TruncationDiagnostics {
        discarded_energy_fraction: frac(discarded, total),
        imaginary_energy_fraction: frac(imag, kept),
    };
    Ok((DemixFilterBank::new(p, length, coeffs)?, diag))
}

/// Zero-pads each FIR to `M = 2L` and takes the `M`-point DFT.
pub fn filters_to_freq(bank: &DemixFilterBank) -> FrequencyFilterBank {
    let p = bank.channels();
    let length = bank.length();
    let bins = 2 * length;
    let fft = Fft::new(bins).ok();
    let mut matrices = vec![Square::<Complex>::zeros(p); bins];
    let mut buf = vec![Complex::new(0.0, 0.0); bins];
    for q in 0..p {
        for r in 0..p {
            buf.fill(Complex::new(0.0, 0.0));
            for (k, &c) in bank.filter(q, r).iter().enumerate() {
                buf[k] = Complex::new(c, 0.0);
            }
            match &fft {
                Some(plan) => plan.forward(&mut buf),
                None => buf = naive_dft(&buf),
            }
            for (nu, v) in buf.iter().enumerate() {
                matrices[nu][(q, r)] = *v;
            }
        }
    }
    FrequencyFilterBank { matrices }
}

// Only reached for lengths whose doubled size is not a power of two.
fn naive_dft(x: &[Complex]) -> Vec<Complex> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter().enumerate().fold(Complex::new(0.0, 0.0), |acc, (t, &v)| {
                let ph = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
                acc + v * Complex::new(libm::cos(ph), libm::sin(ph))
            })
        })
        .collect()
}
