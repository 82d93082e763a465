//! Synthetic convolutive EMG/ECG mixtures with ground truth.
//!
//! Sources are impulse trains (motor unit firings), a QRS-like ECG pulse
//! train and broadband Gaussian noise. Each source reaches each sensor
//! through a short FIR kernel. EMG kernels are motor unit action potentials
//! built from two wavelets: a propagating biphasic component whose lag grows
//! with the distance between sensor and innervation zone and whose amplitude
//! falls as `depth⁻²`, and a stationary end-of-fiber triphasic component
//! falling only as `depth⁻¹`. The ECG arrives as an instantaneous gain.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::rng;
use crate::signal::TimeSeries;
use crate::{Error, Result};

/// Kind of a simulated source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SourceKind {
    EmgInspiratory,
    EmgExpiratory,
    Ecg,
    Noise,
}

impl SourceKind {
    pub fn is_emg(self) -> bool {
        matches!(self, SourceKind::EmgInspiratory | SourceKind::EmgExpiratory)
    }

    pub fn label(self) -> &'static str {
        match self {
            SourceKind::EmgInspiratory => "emg_inspiratory",
            SourceKind::EmgExpiratory => "emg_expiratory",
            SourceKind::Ecg => "ecg",
            SourceKind::Noise => "noise",
        }
    }
}

/// On/off gating of a source over time.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ActivityEnvelope {
    AlwaysOn,
    /// Active while the phase `(t mod period)/period` lies in `[start, end)`.
    Cycle { period_s: f64, start: f64, end: f64 },
}

impl ActivityEnvelope {
    pub fn is_active(&self, t_s: f64) -> bool {
        match *self {
            ActivityEnvelope::AlwaysOn => true,
            ActivityEnvelope::Cycle {
                period_s,
                start,
                end,
            } => {
                let phase = (t_s % period_s) / period_s;
                phase >= start && phase < end
            }
        }
    }

    pub fn mask(&self, n: usize, ta: f64) -> Vec<bool> {
        (0..n).map(|i| self.is_active(i as f64 * ta)).collect()
    }

    fn validate(&self) -> Result<()> {
        if let ActivityEnvelope::Cycle {
            period_s,
            start,
            end,
        } = *self
        {
            if !(period_s > 0.0 && period_s.is_finite() && (0.0..=1.0).contains(&start) && (0.0..=1.0).contains(&end))
            {
                return Err(Error::InvalidParameter(format!(
                    "activity cycle needs period > 0 and phases in [0, 1] (got {period_s}, {start}, {end})"
                )));
            }
        }
        Ok(())
    }
}

/// Source-to-sensor FIR kernels, stored at `(q·P + p)·L_mix + κ`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MixingSystem {
    sources: usize,
    sensors: usize,
    length: usize,
    kernels: Vec<f64>,
}

impl MixingSystem {
    pub fn new(sources: usize, sensors: usize, length: usize, kernels: Vec<f64>) -> Result<Self> {
        if sources == 0 || sensors == 0 || length == 0 {
            return Err(Error::InvalidParameter("mixing system needs Q, P, L_mix ≥ 1".into()));
        }
        if kernels.len() != sources * sensors * length {
            return Err(Error::DimensionMismatch {
                what: "mixing kernel coefficients",
                expected: sources * sensors * length,
                found: kernels.len(),
            });
        }
        if kernels.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("mixing kernels must be finite".into()));
        }
        for q in 0..sources {
            let any = kernels[q * sensors * length..(q + 1) * sensors * length]
                .iter()
                .any(|&v| v != 0.0);
            if !any {
                return Err(Error::InvalidParameter(format!(
                    "source {q} has no nonzero mixing kernel"
                )));
            }
        }
        Ok(Self {
            sources,
            sensors,
            length,
            kernels,
        })
    }

    pub fn sources(&self) -> usize {
        self.sources
    }

    pub fn sensors(&self) -> usize {
        self.sensors
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn kernels(&self) -> &[f64] {
        &self.kernels
    }

    pub fn kernel(&self, q: usize, p: usize) -> &[f64] {
        let start = (q * self.sensors + p) * self.length;
        &self.kernels[start..start + self.length]
    }
}

/// Source signals `ŝ_q(n)` with their kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSet {
    pub signals: Vec<Vec<f64>>,
    pub kinds: Vec<SourceKind>,
    pub seed: u64,
}

/// Biphasic wavelet (first Gaussian derivative) with unit peak magnitude,
/// centered at `center` with width `sigma` samples, zero beyond ±6σ.
pub fn biphasic(len: usize, center: f64, sigma: f64) -> Vec<f64> {
    (0..len)
        .map(|i| {
            let t = (i as f64 - center) / sigma;
            if t.abs() > 6.0 {
                0.0
            } else {
                -t * libm::exp(0.5 * (1.0 - t * t))
            }
        })
        .collect()
}

/// Triphasic wavelet (second Gaussian derivative, Mexican hat) with unit
/// peak, zero beyond ±6σ.
pub fn triphasic(len: usize, center: f64, sigma: f64) -> Vec<f64> {
    (0..len)
        .map(|i| {
            let t = (i as f64 - center) / sigma;
            if t.abs() > 6.0 {
                0.0
            } else {
                (1.0 - t * t) * libm::exp(-0.5 * t * t)
            }
        })
        .collect()
}

/// Shape parameters of a simulated motor unit action potential.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct MuapShape {
    pub amplitude: f64,
    /// Gaussian width of both wavelets, in samples.
    pub width_samples: f64,
    /// Lag of the propagating wavelet at zero distance.
    pub onset_lag: f64,
    /// Lag of the end-of-fiber wavelet; `None` means `L_mix − 4`.
    pub eof_lag: Option<f64>,
    /// End-of-fiber amplitude relative to the propagating one at unit depth.
    pub eof_scale: f64,
}

impl Default for MuapShape {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            width_samples: 1.0,
            onset_lag: 3.0,
            eof_lag: None,
            eof_scale: 0.3,
        }
    }
}

/// Depth exponent of the propagating component.
pub const PROPAGATING_EXPONENT: i32 = 2;
/// Depth exponent of the end-of-fiber component.
pub const END_OF_FIBER_EXPONENT: i32 = 1;

/// The propagating and end-of-fiber parts of a MUAP kernel, separately.
pub fn muap_components(
    depth: f64,
    sensor_offset_m: f64,
    v: f64,
    ta: f64,
    length: usize,
    shape: &MuapShape,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(Error::InvalidParameter(format!("fiber depth {depth} must be positive")));
    }
    if length < 8 {
        return Err(Error::InvalidParameter(format!("kernel length {length} must be at least 8")));
    }
    if !(v > 0.0 && ta > 0.0 && sensor_offset_m >= 0.0 && shape.width_samples > 0.0) {
        return Err(Error::InvalidParameter(
            "velocity, sample interval and wavelet width must be positive, offset non-negative".into(),
        ));
    }
    let delay = shape.onset_lag + sensor_offset_m / (v * ta);
    if delay >= length as f64 {
        return Err(Error::InvalidParameter(format!(
            "propagation delay {delay:.2} samples exceeds the kernel length {length}"
        )));
    }
    let eof_lag = shape.eof_lag.unwrap_or(length as f64 - 4.0);
    let prop_gain = shape.amplitude * libm::pow(depth, -f64::from(PROPAGATING_EXPONENT));
    let eof_gain = shape.amplitude * shape.eof_scale * libm::pow(depth, -f64::from(END_OF_FIBER_EXPONENT));
    let prop = biphasic(length, delay, shape.width_samples)
        .into_iter()
        .map(|w| prop_gain * w)
        .collect();
    let eof = triphasic(length, eof_lag, shape.width_samples)
        .into_iter()
        .map(|w| eof_gain * w)
        .collect();
    Ok((prop, eof))
}

/// MUAP kernel of length `L_mix`: propagating plus end-of-fiber components.
pub fn generate_muap_kernel(
    depth: f64,
    sensor_offset_m: f64,
    v: f64,
    ta: f64,
    length: usize,
    shape: &MuapShape,
) -> Result<Vec<f64>> {
    let (prop, eof) = muap_components(depth, sensor_offset_m, v, ta, length, shape)?;
    Ok(prop.iter().zip(&eof).map(|(a, b)| a + b).collect())
}

/// Integer firing period `round(1/(r·T_a))` in samples.
pub fn firing_period_samples(rate_hz: f64, ta: f64) -> usize {
    (libm::round(1.0 / (rate_hz * ta)) as usize).max(1)
}

/// Unit impulses at jittered multiples of the firing period, kept only where
/// the envelope is active. Intervals are `period·(1 + jitter·z)`, `z ~ N(0,1)`,
/// and never shorter than one sample.
pub fn generate_impulse_train<R: Rng + ?Sized>(
    rate_hz: f64,
    envelope: &ActivityEnvelope,
    n: usize,
    ta: f64,
    jitter: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(rate_hz >= 0.0 && rate_hz.is_finite()) {
        return Err(Error::InvalidParameter(format!("firing rate {rate_hz} must be ≥ 0")));
    }
    if !(jitter >= 0.0 && jitter.is_finite()) {
        return Err(Error::InvalidParameter(format!("jitter {jitter} must be ≥ 0")));
    }
    envelope.validate()?;
    let mut s = vec![0.0; n];
    if rate_hz == 0.0 || n == 0 {
        return Ok(s);
    }
    let period = firing_period_samples(rate_hz, ta);
    let mut t = rng.random_range(0..period) as f64;
    while t < n as f64 {
        let i = libm::round(t) as usize;
        if i < n && envelope.is_active(i as f64 * ta) {
            s[i] = 1.0;
        }
        let z: f64 = if jitter > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
        t += (period as f64 * (1.0 + jitter * z)).max(1.0);
    }
    Ok(s)
}

/// Beat onsets of an ECG train: period `60/(bpm·T_a)` samples with uniform
/// ±3% jitter per beat and a random starting phase.
pub fn ecg_beat_times<R: Rng + ?Sized>(bpm: f64, n: usize, ta: f64, rng: &mut R) -> Result<Vec<usize>> {
    if !(bpm > 0.0 && bpm.is_finite()) {
        return Err(Error::InvalidParameter(format!("heart rate {bpm} bpm must be positive")));
    }
    let period = 60.0 / (bpm * ta);
    let mut beats = Vec::new();
    let mut t = rng.random_range(0.0..period);
    while t < n as f64 {
        let i = libm::round(t) as usize;
        if i < n {
            beats.push(i);
        }
        t += period * (1.0 + rng.random_range(-0.03..=0.03));
    }
    Ok(beats)
}

/// QRS-like triphasic pulse train, unit RMS times `amplitude`.
pub fn generate_ecg_interferer<R: Rng + ?Sized>(
    bpm: f64,
    n: usize,
    ta: f64,
    width_samples: f64,
    amplitude: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(width_samples > 0.0) {
        return Err(Error::InvalidParameter("ECG pulse width must be positive".into()));
    }
    let beats = ecg_beat_times(bpm, n, ta, rng)?;
    let half = libm::ceil(6.0 * width_samples) as usize;
    let pulse = triphasic(2 * half + 1, half as f64, width_samples);
    let mut s = vec![0.0; n];
    for &b in &beats {
        for (k, &w) in pulse.iter().enumerate() {
            if let Some(j) = (b + k).checked_sub(half) {
                if j < n {
                    s[j] += w;
                }
            }
        }
    }
    let rms = libm::sqrt(s.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64);
    if rms > 0.0 {
        let g = amplitude / rms;
        s.iter_mut().for_each(|v| *v *= g);
    }
    Ok(s)
}

/// `x_p(n) = Σ_q gain_q·Σ_κ â_{p,q,κ}·ŝ_q(n−κ)`, plus each source's own
/// sensor image.
pub fn mix(
    sources: &SourceSet,
    system: &MixingSystem,
    gains: &[f64],
    ta: f64,
) -> Result<(TimeSeries, Vec<TimeSeries>)> {
    let q_count = sources.signals.len();
    if system.sources() != q_count {
        return Err(Error::DimensionMismatch {
            what: "mixing system sources",
            expected: q_count,
            found: system.sources(),
        });
    }
    if gains.len() != q_count {
        return Err(Error::DimensionMismatch {
            what: "source gains",
            expected: q_count,
            found: gains.len(),
        });
    }
    let n = sources.signals.first().map_or(0, Vec::len);
    if let Some(bad) = sources.signals.iter().find(|s| s.len() != n) {
        return Err(Error::DimensionMismatch {
            what: "source length",
            expected: n,
            found: bad.len(),
        });
    }
    let p_count = system.sensors();
    let mut images = Vec::with_capacity(q_count);
    let mut total = vec![vec![0.0; n]; p_count];
    for (q, s) in sources.signals.iter().enumerate() {
        let mut img = vec![vec![0.0; n]; p_count];
        for (p, y) in img.iter_mut().enumerate() {
            for (kappa, &a) in system.kernel(q, p).iter().enumerate() {
                let c = gains[q] * a;
                if c == 0.0 || kappa >= n {
                    continue;
                }
                for (yi, si) in y[kappa..].iter_mut().zip(s) {
                    *yi += c * si;
                }
            }
        }
        for (t, y) in total.iter_mut().zip(&img) {
            for (a, b) in t.iter_mut().zip(y) {
                *a += b;
            }
        }
        images.push(TimeSeries::from_channels(img, ta)?);
    }
    Ok((TimeSeries::from_channels(total, ta)?, images))
}

/// How EMG and noise reach the sensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum MixingKind {
    /// Sensor-dependent propagation delays plus end-of-fiber components.
    #[default]
    Convolutive,
    /// Every sensor sees the same waveform per source, only scaled: an
    /// instantaneous mixture of filtered sources.
    DelayFree,
}

/// One EMG source: a motor unit firing along a fiber under the sensor array.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct EmgSourceSpec {
    pub kind: SourceKind,
    pub firing_rate_hz: f64,
    pub envelope: ActivityEnvelope,
    /// Innervation zone position along the array axis, in meters.
    pub nmj_position_m: f64,
    /// Fiber depth below each sensor, arbitrary units.
    pub depths: Vec<f64>,
}

/// Full description of a synthetic recording.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SimScenario {
    pub duration_s: f64,
    pub sample_interval_s: f64,
    /// Kernel length `L_mix`.
    pub mixing_length: usize,
    pub mixing: MixingKind,
    pub conduction_velocity_m_per_s: f64,
    /// Sensor positions along the fiber axis, in meters. Their count is `P`.
    pub sensor_positions_m: Vec<f64>,
    pub emg: Vec<EmgSourceSpec>,
    /// ISI jitter as a fraction of the firing period.
    pub firing_jitter: f64,
    pub muap: MuapShape,
    pub heart_rate_bpm: f64,
    pub ecg_width_samples: f64,
    /// Instantaneous ECG gain per sensor.
    pub ecg_sensor_gains: Vec<f64>,
    /// ECG sensor-image RMS over EMG sensor-image RMS.
    pub ecg_gain: f64,
    /// Noise kernel gain per sensor.
    pub noise_sensor_gains: Vec<f64>,
    pub noise_lag: f64,
    /// Noise sensor-image RMS over EMG sensor-image RMS.
    pub noise_gain: f64,
    pub seed: u64,
}

impl Default for SimScenario {
    fn default() -> Self {
        let breath = |start, end| ActivityEnvelope::Cycle {
            period_s: 4.0,
            start,
            end,
        };
        Self {
            duration_s: 60.0,
            sample_interval_s: 0.000976,
            mixing_length: 16,
            mixing: MixingKind::Convolutive,
            conduction_velocity_m_per_s: 4.0,
            sensor_positions_m: vec![0.0, 0.015, 0.03, 0.045],
            emg: vec![
                EmgSourceSpec {
                    kind: SourceKind::EmgInspiratory,
                    firing_rate_hz: 25.0,
                    envelope: breath(0.0, 0.45),
                    nmj_position_m: 0.0,
                    depths: vec![1.0, 1.2, 1.6, 2.2],
                },
                EmgSourceSpec {
                    kind: SourceKind::EmgExpiratory,
                    firing_rate_hz: 25.0,
                    envelope: breath(0.5, 0.95),
                    nmj_position_m: 0.05,
                    depths: vec![2.0, 1.5, 1.1, 1.0],
                },
            ],
            firing_jitter: 0.1,
            muap: MuapShape::default(),
            heart_rate_bpm: 72.0,
            ecg_width_samples: 3.0,
            ecg_sensor_gains: vec![1.0, 0.8, 0.6, 0.15],
            ecg_gain: 1000.0,
            noise_sensor_gains: vec![0.3, -0.5, 0.8, 0.4],
            noise_lag: 3.0,
            noise_gain: 0.3,
            seed: 1,
        }
    }
}

impl SimScenario {
    pub fn sensors(&self) -> usize {
        self.sensor_positions_m.len()
    }

    /// EMG sources plus ECG plus noise.
    pub fn source_count(&self) -> usize {
        self.emg.len() + 2
    }

    pub fn samples(&self) -> usize {
        libm::round(self.duration_s / self.sample_interval_s) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.sensors();
        if p != self.source_count() {
            return Err(Error::InvalidParameter(format!(
                "the scenario must have as many sensors as sources (P = {p}, Q = {})",
                self.source_count()
            )));
        }
        let bad = |what: &str| Err(Error::InvalidParameter(String::from(what)));
        if !(self.duration_s > 0.0 && self.sample_interval_s > 0.0) || self.samples() == 0 {
            return bad("duration and sample interval must be positive");
        }
        if !(self.ecg_gain >= 0.0 && self.noise_gain >= 0.0) {
            return bad("ecg_gain and noise_gain must be non-negative");
        }
        if !(self.conduction_velocity_m_per_s > 0.0) {
            return bad("conduction velocity must be positive");
        }
        if !(self.heart_rate_bpm > 0.0 && self.ecg_width_samples > 0.0) {
            return bad("heart rate and ECG width must be positive");
        }
        if self.ecg_sensor_gains.len() != p || self.noise_sensor_gains.len() != p {
            return bad("ECG and noise sensor gains need one entry per sensor");
        }
        for e in &self.emg {
            if !e.kind.is_emg() {
                return bad("EMG sources must have an EMG kind");
            }
            if e.depths.len() != p {
                return bad("every EMG source needs one depth per sensor");
            }
            e.envelope.validate()?;
        }
        Ok(())
    }
}

/// Output of [`build_scenario`].
#[derive(Debug, Clone)]
pub struct Scenario {
    pub mixture: TimeSeries,
    pub sources: SourceSet,
    pub system: MixingSystem,
    /// Per-source sensor images, gains applied; they sum to `mixture`.
    pub images: Vec<TimeSeries>,
    pub gains: Vec<f64>,
}

fn image_rms(images: &[&TimeSeries]) -> f64 {
    let (mut e, mut count) = (0.0, 0usize);
    for img in images {
        for ch in img.channels() {
            e += ch.iter().map(|v| v * v).sum::<f64>();
            count += ch.len();
        }
    }
    if count == 0 {
        0.0
    } else {
        libm::sqrt(e / count as f64)
    }
}

/// Generates sources and kernels and mixes them. Deterministic in the seed.
pub fn build_scenario(sc: &SimScenario) -> Result<Scenario> {
    sc.validate()?;
    let n = sc.samples();
    let ta = sc.sample_interval_s;
    let p_count = sc.sensors();
    let l_mix = sc.mixing_length;
    let convolutive = sc.mixing == MixingKind::Convolutive;

    let mut signals = Vec::new();
    let mut kinds = Vec::new();
    let mut kernels = Vec::new();
    for (i, e) in sc.emg.iter().enumerate() {
        let mut r = rng::stream(sc.seed, &format!("emg{i}"));
        signals.push(generate_impulse_train(
            e.firing_rate_hz,
            &e.envelope,
            n,
            ta,
            sc.firing_jitter,
            &mut r,
        )?);
        kinds.push(e.kind);
        let shape = MuapShape {
            eof_scale: if convolutive { sc.muap.eof_scale } else { 0.0 },
            ..sc.muap
        };
        for p in 0..p_count {
            let offset = if convolutive {
                (sc.sensor_positions_m[p] - e.nmj_position_m).abs()
            } else {
                0.0
            };
            kernels.extend(generate_muap_kernel(
                e.depths[p],
                offset,
                sc.conduction_velocity_m_per_s,
                ta,
                l_mix,
                &shape,
            )?);
        }
    }

    let mut r = rng::stream(sc.seed, "ecg");
    signals.push(generate_ecg_interferer(sc.heart_rate_bpm, n, ta, sc.ecg_width_samples, 1.0, &mut r)?);
    kinds.push(SourceKind::Ecg);
    for &g in &sc.ecg_sensor_gains {
        let mut k = vec![0.0; l_mix];
        k[0] = g;
        kernels.extend(k);
    }

    let mut r = rng::stream(sc.seed, "noise");
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    signals.push((0..n).map(|_| normal.sample(&mut r)).collect());
    kinds.push(SourceKind::Noise);
    let noise_shape = biphasic(l_mix, sc.noise_lag, sc.muap.width_samples);
    for &g in &sc.noise_sensor_gains {
        kernels.extend(noise_shape.iter().map(|w| g * w));
    }

    let q_count = signals.len();
    let system = MixingSystem::new(q_count, p_count, l_mix, kernels)?;
    let sources = SourceSet {
        signals,
        kinds,
        seed: sc.seed,
    };

    // unit-gain images fix the level ratios
    let (_, unit) = mix(&sources, &system, &vec![1.0; q_count], ta)?;
    let emg_refs: Vec<&TimeSeries> = unit.iter().zip(&sources.kinds).filter(|(_, k)| k.is_emg()).map(|(i, _)| i).collect();
    let emg_rms = image_rms(&emg_refs);
    let gains: Vec<f64> = unit
        .iter()
        .zip(&sources.kinds)
        .map(|(img, kind)| {
            let target = match kind {
                SourceKind::Ecg => sc.ecg_gain,
                SourceKind::Noise => sc.noise_gain,
                _ => return 1.0,
            };
            let own = image_rms(&[img]);
            if own > 0.0 {
                target * emg_rms / own
            } else {
                0.0
            }
        })
        .collect();
    let (mixture, images) = mix(&sources, &system, &gains, ta)?;
    Ok(Scenario {
        mixture,
        sources,
        system,
        images,
        gains,
    })
}
