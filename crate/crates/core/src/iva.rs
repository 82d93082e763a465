//! Frequency-domain independent vector analysis.
//!
//! Each iteration runs, for every bin `ν` and block `m`:
//!
//! 1. `Y = W·X`
//! 2. `b_p(m) = sqrt((1/M)·Σ_ν |Y_p|²)`, the broadband norm coupling all bins
//! 3. `Φ_p = Y_p / (b_p + guard)`, the spherical Laplacian score
//! 4. `W ← W + μ·[I − (1/N)·Σ_m Φ·Yᴴ]·W`
//! 5. `W ← diag(W⁻¹)·W` (minimum distortion)
//!
//! Two conditioning steps sit around this loop. The centered frames are
//! rescaled to unit RMS before iterating, which leaves every fixed point
//! unchanged but keeps the effective step size independent of signal
//! level. After the loop, every bin is multiplied by `exp(−j2πνD/M)` so the
//! causal truncation to `L` taps keeps the response around the reference lag
//! `D` instead of cutting it in half at lag 0.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt::Write;

use crate::linalg::Square;
use crate::spectral::{
    filters_to_time_with_diagnostics, DemixFilterBank, FrequencyFilterBank, SpectralFrames,
    TruncationDiagnostics,
};
use crate::{Complex, Error, Result};

/// Hadamard ratio below which a per-bin matrix counts as singular.
pub const SINGULARITY_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct IvaConfig {
    /// Natural-gradient step size `μ`, in `(0, 1]`.
    pub step_size: f64,
    /// Upper bound on iterations `ℓ_max`.
    pub max_iterations: usize,
    /// Stop once the mean update norm falls below this fraction of its
    /// first-iteration value. Zero disables early stopping.
    pub convergence_tol: f64,
    /// Score denominator guard in units of the (unit-RMS) normalized frames.
    /// `None` uses `1e-12` times the RMS of the initial outputs.
    pub norm_guard: Option<f64>,
    /// Reference lag `D` of the final filters. `None` uses `L/2`.
    pub reference_delay: Option<usize>,
}

impl Default for IvaConfig {
    fn default() -> Self {
        Self {
            step_size: 0.02,
            max_iterations: 800,
            convergence_tol: 1e-6,
            norm_guard: None,
            reference_delay: None,
        }
    }
}

impl IvaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "step size {} must lie in (0, 1]",
                self.step_size
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be at least 1".into()));
        }
        if !(self.convergence_tol >= 0.0 && self.convergence_tol.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "convergence tolerance {} must be finite and non-negative",
                self.convergence_tol
            )));
        }
        if let Some(g) = self.norm_guard {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::InvalidParameter(format!("norm guard {g} must be positive")));
            }
        }
        Ok(())
    }

    /// Reference delay for filters of length `length`.
    pub fn resolved_delay(&self, length: usize) -> Result<usize> {
        let d = self.reference_delay.unwrap_or(length / 2);
        if d >= length {
            return Err(Error::InvalidParameter(format!(
                "reference delay {d} must be smaller than the filter length {length}"
            )));
        }
        Ok(d)
    }
}

/// Broadband norms `b_p(m)`, stored at `m·P + p`.
#[derive(Debug, Clone, PartialEq)]
pub struct BroadbandNorms {
    pub blocks: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl BroadbandNorms {
    pub fn get(&self, m: usize, p: usize) -> f64 {
        self.values[m * self.channels + p]
    }
}

/// Frobenius norm of the update bracket `I − (1/N)·Σ_m Φ·Yᴴ`, averaged and
/// maximized over bins.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct UpdateNorm {
    pub iteration: usize,
    pub mean: f64,
    pub max: f64,
}

/// Everything the update needs for one iteration.
#[derive(Debug, Clone)]
pub struct IterationState {
    /// 1-based index of the iteration being computed.
    pub iteration: usize,
    pub filters: FrequencyFilterBank,
    pub outputs: SpectralFrames,
    pub norms: BroadbandNorms,
    pub guard: f64,
    pub update_norm_trace: Vec<UpdateNorm>,
}

impl IterationState {
    /// Runs the forward pass and norm computation for `filters` on `frames`.
    pub fn new(
        iteration: usize,
        filters: FrequencyFilterBank,
        frames: &SpectralFrames,
        guard: f64,
    ) -> Result<Self> {
        let outputs = forward_pass(&filters, frames)?;
        let norms = broadband_norms(&outputs);
        Ok(Self {
            iteration,
            filters,
            outputs,
            norms,
            guard,
            update_norm_trace: Vec::new(),
        })
    }
}

fn check_shape(fb: &FrequencyFilterBank, frames: &SpectralFrames) -> Result<()> {
    if fb.channels() != frames.channels() {
        return Err(Error::DimensionMismatch {
            what: "filter bank channels",
            expected: frames.channels(),
            found: fb.channels(),
        });
    }
    if fb.bins() != frames.bins() {
        return Err(Error::DimensionMismatch {
            what: "filter bank bins",
            expected: frames.bins(),
            found: fb.bins(),
        });
    }
    Ok(())
}

/// `Y^(ν)(m) = W^(ν)·X^(ν)(m)` for every bin and block.
pub fn forward_pass(fb: &FrequencyFilterBank, frames: &SpectralFrames) -> Result<SpectralFrames> {
    check_shape(fb, frames)?;
    let (pc, nb, mb) = (frames.channels(), frames.blocks(), frames.bins());
    let mut out = frames.clone();
    out.data_mut().fill(Complex::new(0.0, 0.0));
    let mut entry = vec![Complex::new(0.0, 0.0); mb];
    for q in 0..pc {
        for p in 0..pc {
            for (nu, e) in entry.iter_mut().enumerate() {
                *e = fb.bin(nu)[(q, p)];
            }
            for m in 0..nb {
                let x = frames.block(p, m);
                let start = out.index(q, m, 0);
                let y = &mut out.data_mut()[start..start + mb];
                for ((yv, &w), &xv) in y.iter_mut().zip(&entry).zip(x) {
                    *yv += w * xv;
                }
            }
        }
    }
    Ok(out)
}

/// `b_p(m) = sqrt((1/M)·Σ_ν |Y_p^(ν)(m)|²)`.
pub fn broadband_norms(outputs: &SpectralFrames) -> BroadbandNorms {
    let (pc, nb, mb) = (outputs.channels(), outputs.blocks(), outputs.bins());
    let mut values = vec![0.0; nb * pc];
    for p in 0..pc {
        for m in 0..nb {
            let e: f64 = outputs.block(p, m).iter().map(|v| v.norm_sqr()).sum();
            values[m * pc + p] = libm::sqrt(e / mb as f64);
        }
    }
    BroadbandNorms {
        blocks: nb,
        channels: pc,
        values,
    }
}

/// `Φ_p^(ν)(m) = Y_p^(ν)(m) / (b_p(m) + guard)`.
pub fn score(outputs: &SpectralFrames, norms: &BroadbandNorms, guard: f64) -> SpectralFrames {
    let (pc, nb, mb) = (outputs.channels(), outputs.blocks(), outputs.bins());
    let mut phi = outputs.clone();
    for p in 0..pc {
        for m in 0..nb {
            let inv = 1.0 / (norms.get(m, p) + guard);
            let start = phi.index(p, m, 0);
            for v in &mut phi.data_mut()[start..start + mb] {
                *v *= inv;
            }
        }
    }
    phi
}

/// Per-bin bracket `I − (1/N)·Σ_m Φ^(ν)(m)·Y^(ν)(m)ᴴ`, summed over blocks in
/// ascending order.
pub fn update_bracket(phi: &SpectralFrames, outputs: &SpectralFrames) -> Vec<Square<Complex>> {
    let (pc, nb, mb) = (outputs.channels(), outputs.blocks(), outputs.bins());
    let mut brackets = vec![Square::<Complex>::identity(pc); mb];
    let mut acc = vec![Complex::new(0.0, 0.0); mb];
    let inv_n = 1.0 / nb as f64;
    for q in 0..pc {
        for r in 0..pc {
            acc.fill(Complex::new(0.0, 0.0));
            for m in 0..nb {
                let f = phi.block(q, m);
                let y = outputs.block(r, m);
                for ((a, &fv), &yv) in acc.iter_mut().zip(f).zip(y) {
                    *a += fv * yv.conj();
                }
            }
            for (nu, a) in acc.iter().enumerate() {
                brackets[nu][(q, r)] -= *a * inv_n;
            }
        }
    }
    brackets
}

/// Natural-gradient step `W ← W + μ·[I − (1/N)·Σ_m Φ·Yᴴ]·W`.
///
/// Returns the new bank together with the bracket norm statistics.
pub fn update_step(
    state: &IterationState,
    cfg: &IvaConfig,
) -> Result<(FrequencyFilterBank, UpdateNorm)> {
    check_shape(&state.filters, &state.outputs)?;
    let phi = score(&state.outputs, &state.norms, state.guard);
    let brackets = update_bracket(&phi, &state.outputs);
    let mu = Complex::new(cfg.step_size, 0.0);
    let mut sum = 0.0;
    let mut max: f64 = 0.0;
    let mut next = Vec::with_capacity(brackets.len());
    for (nu, g) in brackets.iter().enumerate() {
        let norm = g.frobenius_norm();
        if !norm.is_finite() {
            return Err(Error::Divergence {
                iteration: state.iteration,
                bin: nu,
            });
        }
        sum += norm;
        max = max.max(norm);
        let w = state.filters.bin(nu);
        let step = g.matmul(w);
        let updated = Square::from_fn(w.dim(), |r, c| w[(r, c)] + mu * step[(r, c)]);
        if !updated.is_finite() {
            return Err(Error::Divergence {
                iteration: state.iteration,
                bin: nu,
            });
        }
        next.push(updated);
    }
    let stats = UpdateNorm {
        iteration: state.iteration,
        mean: sum / brackets.len() as f64,
        max,
    };
    Ok((FrequencyFilterBank::new(next)?, stats))
}

/// `W ← diag(W⁻¹)·W` per bin.
pub fn minimum_distortion(fb: &FrequencyFilterBank) -> Result<FrequencyFilterBank> {
    let mut out = Vec::with_capacity(fb.bins());
    for (nu, w) in fb.matrices().iter().enumerate() {
        let singular = Error::Singular { iteration: 0, bin: nu };
        let (inv, ratio) = w.inverse_with_conditioning().ok_or(singular.clone())?;
        if !(ratio >= SINGULARITY_THRESHOLD) {
            return Err(singular);
        }
        let p = w.dim();
        out.push(Square::from_fn(p, |r, c| inv[(r, r)] * w[(r, c)]));
    }
    FrequencyFilterBank::new(out)
}

/// Multiplies bin `ν` by `exp(−j2πνD/M)`, a pure delay of `D` samples.
pub fn delay_bank(fb: &FrequencyFilterBank, delay: usize) -> FrequencyFilterBank {
    let m = fb.bins();
    let mats = fb
        .matrices()
        .iter()
        .enumerate()
        .map(|(nu, w)| {
            let ph = -2.0 * PI * ((nu * delay) % m) as f64 / m as f64;
            let z = Complex::new(libm::cos(ph), libm::sin(ph));
            w.map(|v| v * z)
        })
        .collect();
    FrequencyFilterBank::new(mats).expect("phase rotation keeps the bank valid")
}

/// Result of the separation loop in the frequency domain.
#[derive(Debug, Clone)]
pub struct IterationOutcome {
    /// Final bank after minimum distortion, before the reference delay.
    pub filters: FrequencyFilterBank,
    pub trace: Vec<UpdateNorm>,
    pub converged: bool,
}

/// Runs the update loop from `W = I` on centered frames.
pub fn iterate(frames: &SpectralFrames, cfg: &IvaConfig) -> Result<IterationOutcome> {
    cfg.validate()?;
    if frames.blocks() < 2 {
        return Err(Error::InvalidSignal(format!(
            "separation needs at least 2 blocks, found {}",
            frames.blocks()
        )));
    }
    let rms = frames.rms();
    let normalized;
    let x = if rms > 0.0 && rms != 1.0 {
        let mut f = frames.clone();
        for v in f.data_mut() {
            *v /= rms;
        }
        normalized = f;
        &normalized
    } else {
        frames
    };
    // identity start: the initial outputs are the normalized frames themselves
    let initial_rms = x.rms();
    let guard = cfg
        .norm_guard
        .unwrap_or(1e-12 * if initial_rms > 0.0 { initial_rms } else { 1.0 });

    let mut filters = FrequencyFilterBank::identity(x.channels(), x.bins());
    let mut trace = Vec::with_capacity(cfg.max_iterations);
    let mut converged = false;
    for iteration in 1..=cfg.max_iterations {
        let state = IterationState::new(iteration, filters, x, guard)?;
        let (updated, stats) = update_step(&state, cfg)?;
        filters = minimum_distortion(&updated).map_err(|e| match e {
            Error::Singular { bin, .. } => Error::Singular { iteration, bin },
            other => other,
        })?;
        trace.push(stats);
        let first = trace[0].mean;
        if stats.mean < cfg.convergence_tol * first {
            converged = true;
            break;
        }
    }
    Ok(IterationOutcome {
        filters,
        trace,
        converged,
    })
}

/// Separation result in both domains.
#[derive(Debug, Clone)]
pub struct IvaOutcome {
    /// Final bank including the reference delay.
    pub filters: FrequencyFilterBank,
    pub bank: DemixFilterBank,
    pub trace: Vec<UpdateNorm>,
    pub converged: bool,
    pub reference_delay: usize,
    pub diagnostics: TruncationDiagnostics,
}

/// Full separation: iterate, apply the reference delay, convert to `L = M/2`
/// real FIR taps.
pub fn run_iva(frames: &SpectralFrames, cfg: &IvaConfig) -> Result<IvaOutcome> {
    let bins = frames.bins();
    if bins < 2 || !bins.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "bin count M = {bins} must be even so that L = M/2"
        )));
    }
    let length = bins / 2;
    let delay = cfg.resolved_delay(length)?;
    let outcome = iterate(frames, cfg)?;
    let filters = delay_bank(&outcome.filters, delay);
    let (bank, diagnostics) = filters_to_time_with_diagnostics(&filters, length)?;
    Ok(IvaOutcome {
        filters,
        bank,
        trace: outcome.trace,
        converged: outcome.converged,
        reference_delay: delay,
        diagnostics,
    })
}

/// Convergence trace as CSV with header
/// `iteration,mean_update_norm,max_update_norm`.
pub fn trace_csv(trace: &[UpdateNorm]) -> String {
    let mut s = String::from("iteration,mean_update_norm,max_update_norm\n");
    for t in trace {
        let _ = writeln!(s, "{},{:e},{:e}", t.iteration, t.mean, t.max);
    }
    s
}
