//! Time-domain MIMO FIR demixing and the end-to-end separation pipeline.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::iva::{run_iva, IvaConfig, UpdateNorm};
use crate::signal::{highpass_dc_removal, TimeSeries};
use crate::spectral::{center, stft, DemixFilterBank, TruncationDiagnostics, Window};
use crate::sphering::{
    apply_sphering, compute_sphering, estimate_spatial_covariance, SpheringTransform, DEFAULT_EPS,
};
use crate::{Error, Result};

/// `y_q(n) = Σ_p Σ_κ w_{q,p,κ}·x_p(n−κ)` with zero initial state.
pub fn apply_mimo_fir(bank: &DemixFilterBank, ts: &TimeSeries) -> Result<TimeSeries> {
    let p = ts.channel_count();
    if bank.channels() != p {
        return Err(Error::DimensionMismatch {
            what: "filter bank channels",
            expected: p,
            found: bank.channels(),
        });
    }
    let n = ts.len();
    let mut out = vec![vec![0.0; n]; p];
    for (q, y) in out.iter_mut().enumerate() {
        for r in 0..p {
            let x = ts.channel(r);
            for (kappa, &w) in bank.filter(q, r).iter().enumerate() {
                if w == 0.0 || kappa >= n {
                    continue;
                }
                for (yi, xi) in y[kappa..].iter_mut().zip(x) {
                    *yi += w * xi;
                }
            }
        }
    }
    ts.with_data(out)
}

/// Sensor-to-output bank `w'_{q,p,κ} = Σ_r w_{q,r,κ}·T_{r,p}`, i.e. the
/// demixing bank with the sphering matrix folded in.
pub fn compose_with_sphering(
    bank: &DemixFilterBank,
    sphering: &SpheringTransform,
) -> Result<DemixFilterBank> {
    let p = bank.channels();
    if sphering.channels() != p {
        return Err(Error::DimensionMismatch {
            what: "sphering matrix size",
            expected: p,
            found: sphering.channels(),
        });
    }
    let l = bank.length();
    let t = &sphering.matrix;
    let mut coeffs = vec![0.0; p * p * l];
    for q in 0..p {
        for c in 0..p {
            for k in 0..l {
                coeffs[(q * p + c) * l + k] = (0..p).map(|r| bank.coeff(q, r, k) * t[(r, c)]).sum();
            }
        }
    }
    DemixFilterBank::new(p, l, coeffs)
}

/// Settings for [`demix_pipeline`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PipelineConfig {
    /// One-pole DC removal cutoff; `None` skips the filter.
    pub highpass_cutoff_hz: Option<f64>,
    /// Disabling sphering replaces it by the identity (for comparisons).
    pub sphering: bool,
    pub sphering_eps: f64,
    /// Demixing filter length `L`; the STFT uses `M = 2L` bins.
    pub filter_length: usize,
    /// Block hop in samples; `None` uses `L`.
    pub hop: Option<usize>,
    pub window: Window,
    pub iva: IvaConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            highpass_cutoff_hz: Some(1.0),
            sphering: true,
            sphering_eps: DEFAULT_EPS,
            filter_length: 64,
            hop: None,
            window: Window::Hann,
            iva: IvaConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn bins(&self) -> usize {
        2 * self.filter_length
    }

    pub fn resolved_hop(&self) -> usize {
        self.hop.unwrap_or(self.filter_length)
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.filter_length;
        if l == 0 || !l.is_power_of_two() {
            return Err(Error::InvalidParameter(format!(
                "filter length L = {l} must be a power of two (M = 2L bins)"
            )));
        }
        let hop = self.resolved_hop();
        if hop == 0 || hop > self.bins() {
            return Err(Error::InvalidParameter(format!(
                "hop {hop} must lie in 1..={}",
                self.bins()
            )));
        }
        if let Some(fc) = self.highpass_cutoff_hz {
            if !(fc > 0.0 && fc.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "highpass cutoff {fc} Hz must be positive"
                )));
            }
        }
        if !(self.sphering_eps >= 0.0 && self.sphering_eps < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "sphering eps {} must lie in [0, 1)",
                self.sphering_eps
            )));
        }
        self.iva.validate()?;
        self.iva.resolved_delay(l)?;
        Ok(())
    }
}

/// Everything fitted by one pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub separated: TimeSeries,
    /// Demixing bank acting on the sphered signal.
    pub bank: DemixFilterBank,
    pub sphering: SpheringTransform,
    pub trace: Vec<UpdateNorm>,
    pub converged: bool,
    pub reference_delay: usize,
    pub diagnostics: TruncationDiagnostics,
}

impl PipelineOutput {
    /// Equivalent bank from (DC-filtered) sensors to outputs.
    pub fn overall_bank(&self) -> DemixFilterBank {
        compose_with_sphering(&self.bank, &self.sphering).expect("sizes agree by construction")
    }
}

/// DC removal, sphering, STFT, centering, separation and time-domain
/// demixing of the sphered signal.
pub fn demix_pipeline(ts: &TimeSeries, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let filtered = match cfg.highpass_cutoff_hz {
        Some(fc) => highpass_dc_removal(ts, fc)?,
        None => ts.clone(),
    };
    let sphering = if cfg.sphering {
        compute_sphering(&estimate_spatial_covariance(&filtered), cfg.sphering_eps)?
    } else {
        SpheringTransform::identity(ts.channel_count())
    };
    let sphered = apply_sphering(&sphering, &filtered)?;
    let frames = center(&stft(&sphered, cfg.bins(), cfg.resolved_hop(), cfg.window)?);
    let outcome = run_iva(&frames, &cfg.iva)?;
    let separated = apply_mimo_fir(&outcome.bank, &sphered)?;
    Ok(PipelineOutput {
        separated,
        bank: outcome.bank,
        sphering,
        trace: outcome.trace,
        converged: outcome.converged,
        reference_delay: outcome.reference_delay,
        diagnostics: outcome.diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Square;
    use crate::spectral::{filters_to_freq, filters_to_time};
    use proptest::prelude::*;
    use rand::Rng;

    const TA: f64 = 0.000976;

    fn random_ts(p: usize, n: usize, rng: &mut impl Rng) -> TimeSeries {
        TimeSeries::from_channels(
            (0..p).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
            TA,
        )
        .unwrap()
    }

    fn random_bank(p: usize, l: usize, rng: &mut impl Rng) -> DemixFilterBank {
        DemixFilterBank::new(p, l, (0..p * p * l).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn naive(bank: &DemixFilterBank, ts: &TimeSeries) -> Vec<Vec<f64>> {
        let (p, n, l) = (ts.channel_count(), ts.len(), bank.length());
        let mut y = vec![vec![0.0; n]; p];
        for q in 0..p {
            for i in 0..n {
                for r in 0..p {
                    for k in 0..l {
                        if i >= k {
                            y[q][i] += bank.coeff(q, r, k) * ts.channel(r)[i - k];
                        }
                    }
                }
            }
        }
        y
    }

    #[test]
    fn identity_and_delay_banks() {
        let mut rng = crate::rng::stream(1, "demix");
        let ts = random_ts(3, 50, &mut rng);
        assert_eq!(apply_mimo_fir(&DemixFilterBank::identity(3, 8), &ts).unwrap(), ts);
        let d = 5;
        let mut bank = DemixFilterBank::new(3, 8, vec![0.0; 72]).unwrap();
        for q in 0..3 {
            bank.set_coeff(q, q, d, 1.0);
        }
        let y = apply_mimo_fir(&bank, &ts).unwrap();
        for q in 0..3 {
            assert!(y.channel(q)[..d].iter().all(|&v| v == 0.0));
            assert_eq!(&y.channel(q)[d..], &ts.channel(q)[..50 - d]);
        }
        assert!(apply_mimo_fir(&DemixFilterBank::identity(2, 8), &ts).is_err());
    }

    #[test]
    fn matches_naive_convolution() {
        let mut rng = crate::rng::stream(2, "demix-naive");
        let ts = random_ts(2, 64, &mut rng);
        let bank = random_bank(2, 4, &mut rng);
        let y = apply_mimo_fir(&bank, &ts).unwrap();
        for (a, b) in y.channels().iter().zip(naive(&bank, &ts)) {
            for (u, v) in a.iter().zip(b) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unit_length_is_a_constant_matrix() {
        let mut rng = crate::rng::stream(3, "l1");
        let ts = random_ts(3, 40, &mut rng);
        let m = Square::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
        let y = apply_mimo_fir(&DemixFilterBank::from_matrix(&m), &ts).unwrap();
        for i in 0..40 {
            let x: Vec<f64> = (0..3).map(|p| ts.channel(p)[i]).collect();
            let want = m.mul_vec(&x);
            for q in 0..3 {
                assert_eq!(y.channel(q)[i], want[q]);
            }
        }
    }

    #[test]
    fn composition_folds_in_sphering() {
        let mut rng = crate::rng::stream(4, "compose");
        let ts = random_ts(2, 100, &mut rng);
        let bank = random_bank(2, 4, &mut rng);
        let t = compute_sphering(&estimate_spatial_covariance(&ts), DEFAULT_EPS).unwrap();
        let two_step = apply_mimo_fir(&bank, &apply_sphering(&t, &ts).unwrap()).unwrap();
        let one_step = apply_mimo_fir(&compose_with_sphering(&bank, &t).unwrap(), &ts).unwrap();
        for (a, b) in two_step.channels().iter().zip(one_step.channels()) {
            for (u, v) in a.iter().zip(b) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn shift_invariance(seed in 0u64..500, s in 1usize..20) {
            let mut rng = crate::rng::stream(seed, "shift");
            let ts = random_ts(2, 80, &mut rng);
            let bank = random_bank(2, 4, &mut rng);
            let shifted = ts.with_data(ts.channels().iter().map(|c| {
                let mut v = vec![0.0; s];
                v.extend_from_slice(&c[..80 - s]);
                v
            }).collect()).unwrap();
            let y = apply_mimo_fir(&bank, &ts).unwrap();
            let ys = apply_mimo_fir(&bank, &shifted).unwrap();
            for q in 0..2 {
                prop_assert_eq!(&ys.channel(q)[s..], &y.channel(q)[..80 - s]);
            }
        }

        #[test]
        fn frequency_roundtrip_bank_filters_identically(seed in 0u64..500) {
            let mut rng = crate::rng::stream(seed, "roundtrip-apply");
            let ts = random_ts(2, 64, &mut rng);
            let bank = random_bank(2, 8, &mut rng);
            let back = filters_to_time(&filters_to_freq(&bank), 8).unwrap();
            let a = apply_mimo_fir(&bank, &ts).unwrap();
            let b = apply_mimo_fir(&back, &ts).unwrap();
            let scale = a.channels().iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            for (u, v) in a.channels().iter().flatten().zip(b.channels().iter().flatten()) {
                prop_assert!((u - v).abs() <= 1e-9 * scale);
            }
        }
    }

    #[test]
    fn single_channel_is_sphered_input() {
        let mut rng = crate::rng::stream(5, "p1");
        let ts = random_ts(1, 2000, &mut rng);
        let cfg = PipelineConfig {
            filter_length: 16,
            iva: IvaConfig {
                max_iterations: 5,
                reference_delay: Some(0),
                ..IvaConfig::default()
            },
            ..PipelineConfig::default()
        };
        let out = demix_pipeline(&ts, &cfg).unwrap();
        let filtered = highpass_dc_removal(&ts, 1.0).unwrap();
        let sphered = apply_sphering(&out.sphering, &filtered).unwrap();
        // the inverse DFT leaves rounding-level residue on the other lags
        for (a, b) in out.separated.channel(0).iter().zip(sphered.channel(0)) {
            assert!((a - b).abs() < 1e-12);
        }
        let power = sphered.channel(0).iter().map(|v| v * v).sum::<f64>() / 2000.0;
        assert!((power - 1.0).abs() < 1e-12);

        // with the default reference lag the output is the same signal delayed
        let cfg = PipelineConfig {
            filter_length: 16,
            iva: IvaConfig {
                max_iterations: 5,
                ..IvaConfig::default()
            },
            ..PipelineConfig::default()
        };
        let out = demix_pipeline(&ts, &cfg).unwrap();
        assert_eq!(out.reference_delay, 8);
        for i in 8..2000 {
            assert!((out.separated.channel(0)[i] - sphered.channel(0)[i - 8]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_step_reduces_to_sphering() {
        let mut rng = crate::rng::stream(6, "nostep");
        let ts = random_ts(3, 3000, &mut rng);
        let cfg = PipelineConfig {
            filter_length: 8,
            iva: IvaConfig {
                step_size: f64::MIN_POSITIVE,
                max_iterations: 1,
                reference_delay: Some(0),
                ..IvaConfig::default()
            },
            ..PipelineConfig::default()
        };
        let out = demix_pipeline(&ts, &cfg).unwrap();
        let sphered = apply_sphering(&out.sphering, &highpass_dc_removal(&ts, 1.0).unwrap()).unwrap();
        for (a, b) in out.separated.channels().iter().flatten().zip(sphered.channels().iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn config_rejects_non_power_of_two() {
        let cfg = PipelineConfig {
            filter_length: 48,
            ..PipelineConfig::default()
        };
        let err = cfg.validate().unwrap_err();
        assert!(format!("{err}").contains("power of two"));
    }
}
