//! Ground-truth separation quality: permutation-invariant SIR and SDR.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::demix::{apply_mimo_fir, demix_pipeline, PipelineConfig, PipelineOutput};
use crate::signal::{highpass_dc_removal, TimeSeries};
use crate::simulate::{build_scenario, Scenario, SimScenario, SourceKind};
use crate::spectral::DemixFilterBank;
use crate::sphering::{apply_sphering, SpheringTransform};
use crate::{Error, Result};

/// Every reported dB value is clamped to `±DB_CAP`.
pub const DB_CAP: f64 = 100.0;

/// Largest channel count for the exhaustive permutation search.
pub const MAX_PERMUTATION_CHANNELS: usize = 6;

fn db(num: f64, den: f64) -> f64 {
    if num <= 0.0 {
        -DB_CAP
    } else if den <= 0.0 {
        DB_CAP
    } else {
        (10.0 * libm::log10(num / den)).clamp(-DB_CAP, DB_CAP)
    }
}

/// Per-source contributions to every output: `per_source[s]` holds the
/// outputs produced when only source `s` is present.
#[derive(Debug, Clone, PartialEq)]
pub struct Contributions {
    pub per_source: Vec<TimeSeries>,
}

impl Contributions {
    /// `power[s][q]` over samples `skip..`.
    pub fn powers(&self, skip: usize) -> Vec<Vec<f64>> {
        self.per_source
            .iter()
            .map(|ts| {
                ts.channels()
                    .iter()
                    .map(|c| c.iter().skip(skip).map(|v| v * v).sum())
                    .collect()
            })
            .collect()
    }

    /// Sum over sources, which by linearity is the full output.
    pub fn total(&self) -> Result<TimeSeries> {
        let first = self
            .per_source
            .first()
            .ok_or_else(|| Error::InvalidParameter("no contributions".into()))?;
        let mut acc: Vec<Vec<f64>> = first.channels().to_vec();
        for ts in &self.per_source[1..] {
            for (a, c) in acc.iter_mut().zip(ts.channels()) {
                for (x, y) in a.iter_mut().zip(c) {
                    *x += y;
                }
            }
        }
        first.with_data(acc)
    }
}

/// Feeds each source image through the (optional) DC filter, the sphering
/// transform and the demixing bank.
pub fn project_images(
    bank: &DemixFilterBank,
    sphering: &SpheringTransform,
    images: &[TimeSeries],
    highpass_cutoff_hz: Option<f64>,
) -> Result<Contributions> {
    let per_source = images
        .iter()
        .map(|img| {
            let filtered = match highpass_cutoff_hz {
                Some(fc) => highpass_dc_removal(img, fc)?,
                None => img.clone(),
            };
            apply_mimo_fir(bank, &apply_sphering(sphering, &filtered)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Contributions { per_source })
}

/// Output-to-source assignment and per-output SIR.
#[derive(Debug, Clone, PartialEq)]
pub struct SirResult {
    /// `assignment[q]` is the source index matched to output `q`.
    pub assignment: Vec<usize>,
    pub sir_db: Vec<f64>,
}

/// SIR of every output against its assigned source, with the assignment
/// chosen over all `P!` permutations to maximize the summed (capped) SIR.
pub fn sir_from_powers(power: &[Vec<f64>]) -> Result<SirResult> {
    let s_count = power.len();
    if s_count == 0 {
        return Err(Error::InvalidParameter("SIR needs at least one source".into()));
    }
    let q_count = power[0].len();
    if q_count != s_count || power.iter().any(|r| r.len() != q_count) {
        return Err(Error::DimensionMismatch {
            what: "outputs per source",
            expected: s_count,
            found: q_count,
        });
    }
    if q_count > MAX_PERMUTATION_CHANNELS {
        return Err(Error::InvalidParameter(format!(
            "exhaustive assignment supports at most {MAX_PERMUTATION_CHANNELS} channels, got {q_count}"
        )));
    }
    if power.iter().flatten().all(|&v| v == 0.0) {
        return Err(Error::UndefinedSir);
    }
    let column: Vec<f64> = (0..q_count).map(|q| power.iter().map(|r| r[q]).sum()).collect();
    let sir_of = |s: usize, q: usize| db(power[s][q], column[q] - power[s][q]);

    let mut perm: Vec<usize> = (0..q_count).collect();
    let mut best = perm.clone();
    let mut best_total = f64::NEG_INFINITY;
    for_each_permutation(&mut perm, &mut |p| {
        let total: f64 = p.iter().enumerate().map(|(q, &s)| sir_of(s, q)).sum();
        if total > best_total {
            best_total = total;
            best.copy_from_slice(p);
        }
    });
    let sir_db = best.iter().enumerate().map(|(q, &s)| sir_of(s, q)).collect();
    Ok(SirResult {
        assignment: best,
        sir_db,
    })
}

/// Visits every permutation of `items` in lexicographic order.
fn for_each_permutation(items: &mut [usize], f: &mut impl FnMut(&[usize])) {
    items.sort_unstable();
    loop {
        f(items);
        // next lexicographic permutation
        let Some(i) = (1..items.len()).rev().find(|&i| items[i - 1] < items[i]) else {
            return;
        };
        let j = (i..items.len()).rev().find(|&j| items[j] > items[i - 1]).expect("pivot exists");
        items.swap(i - 1, j);
        items[i..].reverse();
    }
}

/// SIR from contributions, skipping the first `skip` samples.
pub fn sir(contributions: &Contributions, skip: usize) -> Result<SirResult> {
    sir_from_powers(&contributions.powers(skip))
}

/// `10·log10(‖αr‖² / ‖y − αr‖²)` with the scale-optimal `α = ⟨y,r⟩/⟨r,r⟩`.
pub fn sdr(output: &[f64], reference: &[f64]) -> f64 {
    let rr: f64 = reference.iter().map(|v| v * v).sum();
    let yr: f64 = output.iter().zip(reference).map(|(a, b)| a * b).sum();
    if rr == 0.0 {
        return -DB_CAP;
    }
    let alpha = yr / rr;
    let target = alpha * alpha * rr;
    let err: f64 = output
        .iter()
        .zip(reference)
        .map(|(y, r)| (y - alpha * r) * (y - alpha * r))
        .sum();
    db(target, err)
}

/// For each source, the best SIR over the unprocessed sensors.
pub fn input_sir(images: &[TimeSeries], skip: usize) -> Vec<f64> {
    let power = Contributions {
        per_source: images.to_vec(),
    }
    .powers(skip);
    let sensors = power.first().map_or(0, Vec::len);
    let column: Vec<f64> = (0..sensors).map(|p| power.iter().map(|r| r[p]).sum()).collect();
    power
        .iter()
        .map(|row| {
            (0..sensors)
                .map(|p| db(row[p], column[p] - row[p]))
                .fold(-DB_CAP, f64::max)
        })
        .collect()
}

/// Separation quality of one run on a simulated scenario.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SeparationReport {
    /// Source index assigned to each output.
    pub assignment: Vec<usize>,
    /// Kind label of the assigned source, per output.
    pub assigned_kinds: Vec<String>,
    pub sir_db: Vec<f64>,
    pub sdr_db: Vec<f64>,
    /// Best unprocessed-sensor SIR of the assigned source, per output.
    pub input_sir_db: Vec<f64>,
    pub sir_improvement_db: Vec<f64>,
    pub filter_length: usize,
    pub reference_delay: usize,
    pub iterations: usize,
    pub converged: bool,
    pub initial_update_norm: f64,
    pub final_update_norm: f64,
    pub discarded_energy_fraction: f64,
    pub imaginary_energy_fraction: f64,
}

impl SeparationReport {
    pub fn mean_sir_db(&self) -> f64 {
        self.sir_db.iter().sum::<f64>() / self.sir_db.len() as f64
    }

    /// SIR improvement of the output assigned to the first source of `kind`.
    pub fn improvement_for(&self, kind: SourceKind) -> Option<f64> {
        self.assigned_kinds
            .iter()
            .position(|k| k == kind.label())
            .map(|q| self.sir_improvement_db[q])
    }
}

/// Scores a pipeline run against the scenario's ground truth.
pub fn evaluate(
    scenario: &Scenario,
    run: &PipelineOutput,
    cfg: &PipelineConfig,
) -> Result<SeparationReport> {
    let skip = cfg.filter_length;
    let contributions = project_images(&run.bank, &run.sphering, &scenario.images, cfg.highpass_cutoff_hz)?;
    let sir_res = sir(&contributions, skip)?;
    let inputs = input_sir(&scenario.images, skip);

    let d = run.reference_delay;
    let mut sdr_db = Vec::with_capacity(sir_res.assignment.len());
    for (q, &s) in sir_res.assignment.iter().enumerate() {
        // the output approximates the source's sphered sensor-q image at lag D
        let img = &scenario.images[s];
        let filtered = match cfg.highpass_cutoff_hz {
            Some(fc) => highpass_dc_removal(img, fc)?,
            None => img.clone(),
        };
        let sphered = apply_sphering(&run.sphering, &filtered)?;
        let reference = sphered.channel(q);
        let y = run.separated.channel(q);
        let n = y.len();
        let start = skip.max(d).min(n);
        sdr_db.push(sdr(&y[start..], &reference[start - d..n - d]));
    }

    let input_sir_db: Vec<f64> = sir_res.assignment.iter().map(|&s| inputs[s]).collect();
    let sir_improvement_db = sir_res
        .sir_db
        .iter()
        .zip(&input_sir_db)
        .map(|(o, i)| o - i)
        .collect();
    let assigned_kinds = sir_res
        .assignment
        .iter()
        .map(|&s| String::from(scenario.sources.kinds[s].label()))
        .collect();
    Ok(SeparationReport {
        assignment: sir_res.assignment,
        assigned_kinds,
        sir_db: sir_res.sir_db,
        sdr_db,
        input_sir_db,
        sir_improvement_db,
        filter_length: cfg.filter_length,
        reference_delay: d,
        iterations: run.trace.len(),
        converged: run.converged,
        initial_update_norm: run.trace.first().map_or(0.0, |t| t.mean),
        final_update_norm: run.trace.last().map_or(0.0, |t| t.mean),
        discarded_energy_fraction: run.diagnostics.discarded_energy_fraction,
        imaginary_energy_fraction: run.diagnostics.imaginary_energy_fraction,
    })
}

/// Builds the scenario, runs the pipeline and scores it.
pub fn run_and_evaluate(sc: &SimScenario, cfg: &PipelineConfig) -> Result<(Scenario, PipelineOutput, SeparationReport)> {
    let scenario = build_scenario(sc)?;
    let run = demix_pipeline(&scenario.mixture, cfg)?;
    let report = evaluate(&scenario, &run, cfg)?;
    Ok((scenario, run, report))
}

/// Reports for the instantaneous (`L = 1`) and the configured filter length
/// on the same scenario and seed.
#[derive(Debug, Clone)]
pub struct InstantaneousComparison {
    pub instantaneous: SeparationReport,
    pub convolutive: SeparationReport,
}

pub fn compare_instantaneous(sc: &SimScenario, cfg: &PipelineConfig) -> Result<InstantaneousComparison> {
    let scenario = build_scenario(sc)?;
    let inst_cfg = PipelineConfig {
        filter_length: 1,
        hop: None,
        ..cfg.clone()
    };
    let inst_run = demix_pipeline(&scenario.mixture, &inst_cfg)?;
    let conv_run = demix_pipeline(&scenario.mixture, cfg)?;
    Ok(InstantaneousComparison {
        instantaneous: evaluate(&scenario, &inst_run, &inst_cfg)?,
        convolutive: evaluate(&scenario, &conv_run, cfg)?,
    })
}

/// Length of the propagation path covered by a filter of `L` taps:
/// `Δs = v·L·T_a`.
pub fn physical_path_length(filter_length: usize, sample_interval_s: f64, velocity_m_per_s: f64) -> f64 {
    velocity_m_per_s * filter_length as f64 * sample_interval_s
}

/// Trailing moving RMS over `window` samples (shorter at the head).
pub fn moving_rms(x: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    for i in 0..x.len() {
        acc += x[i] * x[i];
        if i >= window {
            acc -= x[i - window] * x[i - window];
        }
        let count = (i + 1).min(window);
        out.push(libm::sqrt(acc.max(0.0) / count as f64));
    }
    out
}

/// Envelope CSV with header `time_s,env_out1,...`.
pub fn envelopes_csv(ts: &TimeSeries, window_s: f64) -> String {
    let ta = ts.sample_interval_s();
    let window = libm::round(window_s / ta) as usize;
    let env: Vec<Vec<f64>> = ts.channels().iter().map(|c| moving_rms(c, window)).collect();
    let mut s = String::from("time_s");
    for q in 1..=env.len() {
        let _ = write!(s, ",env_out{q}");
    }
    s.push('\n');
    for i in 0..ts.len() {
        let _ = write!(s, "{:.6}", i as f64 * ta);
        for e in &env {
            let _ = write!(s, ",{:e}", e[i]);
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Square;
    use alloc::vec;
    use crate::sphering::{compute_sphering, estimate_spatial_covariance, DEFAULT_EPS};
    use proptest::prelude::*;
    use rand::Rng;

    const TA: f64 = 0.000976;

    #[test]
    fn diagonal_contributions_hit_the_cap() {
        let power = vec![vec![4.0, 0.0], vec![0.0, 9.0]];
        let r = sir_from_powers(&power).unwrap();
        assert_eq!(r.assignment, vec![0, 1]);
        assert_eq!(r.sir_db, vec![DB_CAP, DB_CAP]);
    }

    #[test]
    fn equal_powers_give_zero_db() {
        let r = sir_from_powers(&[vec![2.0, 2.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(r.sir_db, vec![0.0, 0.0]);
    }

    #[test]
    fn undefined_when_all_zero() {
        assert_eq!(sir_from_powers(&[vec![0.0, 0.0], vec![0.0, 0.0]]), Err(Error::UndefinedSir));
        assert!(sir_from_powers(&vec![vec![1.0; 7]; 7]).is_err());
    }

    fn brute_force(power: &[Vec<f64>]) -> Vec<usize> {
        // independent oracle: recursive enumeration
        fn rec(power: &[Vec<f64>], used: &mut Vec<bool>, cur: &mut Vec<usize>, best: &mut (f64, Vec<usize>)) {
            let p = power.len();
            if cur.len() == p {
                let total: f64 = cur
                    .iter()
                    .enumerate()
                    .map(|(q, &s)| {
                        let others: f64 = (0..p).filter(|&t| t != s).map(|t| power[t][q]).sum();
                        db(power[s][q], others)
                    })
                    .sum();
                if total > best.0 {
                    *best = (total, cur.clone());
                }
                return;
            }
            for s in 0..p {
                if !used[s] {
                    used[s] = true;
                    cur.push(s);
                    rec(power, used, cur, best);
                    cur.pop();
                    used[s] = false;
                }
            }
        }
        let mut best = (f64::NEG_INFINITY, vec![]);
        rec(power, &mut vec![false; power.len()], &mut vec![], &mut best);
        best.1
    }

    proptest! {
        #[test]
        fn assignment_matches_brute_force(p in 1usize..=4, seed in 0u64..1000) {
            let mut r = crate::rng::stream(seed, "sir-brute");
            let power: Vec<Vec<f64>> = (0..p).map(|_| (0..p).map(|_| r.random_range(0.0..10.0)).collect()).collect();
            let res = sir_from_powers(&power).unwrap();
            prop_assert_eq!(res.assignment, brute_force(&power));
        }

        #[test]
        fn sir_ignores_output_rescaling(seed in 0u64..1000, c in prop::collection::vec(0.01f64..100.0, 3)) {
            let mut r = crate::rng::stream(seed, "sir-scale");
            let power: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| r.random_range(0.01..10.0)).collect()).collect();
            // rescaling output q by c_q multiplies every power in column q by c_q²
            let scaled: Vec<Vec<f64>> = power.iter().map(|row| row.iter().zip(&c).map(|(v, k)| v * k * k).collect()).collect();
            let a = sir_from_powers(&power).unwrap();
            let b = sir_from_powers(&scaled).unwrap();
            prop_assert_eq!(&a.assignment, &b.assignment);
            for (x, y) in a.sir_db.iter().zip(&b.sir_db) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn assignment_follows_relabeling(seed in 0u64..1000, perm in Just(vec![0usize, 1, 2]).prop_shuffle()) {
            let mut r = crate::rng::stream(seed, "sir-relabel");
            let power: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| r.random_range(0.01..10.0)).collect()).collect();
            // rename source s as perm[s]
            let mut relabeled = vec![vec![0.0; 3]; 3];
            for s in 0..3 {
                relabeled[perm[s]] = power[s].clone();
            }
            let a = sir_from_powers(&power).unwrap();
            let b = sir_from_powers(&relabeled).unwrap();
            let mapped: Vec<usize> = a.assignment.iter().map(|&s| perm[s]).collect();
            prop_assert_eq!(mapped, b.assignment);
            // column sums run in a different order, so allow rounding
            for (x, y) in a.sir_db.iter().zip(&b.sir_db) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    fn random_ts(p: usize, n: usize, r: &mut impl Rng) -> TimeSeries {
        TimeSeries::from_channels((0..p).map(|_| (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).collect(), TA)
            .unwrap()
    }

    #[test]
    fn projection_is_linear_and_matches_direct_filtering() {
        let mut r = crate::rng::stream(5, "proj");
        let a = random_ts(2, 300, &mut r);
        let b = random_ts(2, 300, &mut r);
        let total = a.with_data(a.channels().iter().zip(b.channels()).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect()).collect()).unwrap();
        let bank = DemixFilterBank::new(2, 4, (0..16).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        let t = compute_sphering(&estimate_spatial_covariance(&total), DEFAULT_EPS).unwrap();
        let contrib = project_images(&bank, &t, &[a.clone(), b], Some(2.0)).unwrap();
        let direct = apply_mimo_fir(&bank, &apply_sphering(&t, &highpass_dc_removal(&total, 2.0).unwrap()).unwrap()).unwrap();
        let sum = contrib.total().unwrap();
        let scale = direct.channels().iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        for (u, v) in sum.channels().iter().flatten().zip(direct.channels().iter().flatten()) {
            assert!((u - v).abs() <= 1e-9 * scale);
        }
        // a single source's contribution is the whole output
        let single = project_images(&bank, &t, &[a.clone()], Some(2.0)).unwrap();
        let direct_a = apply_mimo_fir(&bank, &apply_sphering(&t, &highpass_dc_removal(&a, 2.0).unwrap()).unwrap()).unwrap();
        assert_eq!(single.per_source[0], direct_a);
    }

    #[test]
    fn oracle_inverse_is_perfect() {
        let mut r = crate::rng::stream(6, "oracle");
        let s = random_ts(3, 500, &mut r);
        let a = Square::from_row_major(3, vec![1.0, 0.4, -0.2, 0.3, 1.0, 0.5, -0.1, 0.2, 1.0]);
        let images: Vec<TimeSeries> = (0..3)
            .map(|q| {
                let ch = (0..3).map(|p| s.channel(q).iter().map(|v| a[(p, q)] * v).collect()).collect();
                TimeSeries::from_channels(ch, TA).unwrap()
            })
            .collect();
        // the inverse of an instantaneous mixing maps each image to one output
        let inv = {
            let c = a.map(|v| crate::Complex::new(v, 0.0)).inverse_with_conditioning().unwrap().0;
            c.map(|v| v.re)
        };
        let contrib = project_images(&DemixFilterBank::from_matrix(&inv), &SpheringTransform::identity(3), &images, None).unwrap();
        let res = sir(&contrib, 0).unwrap();
        assert_eq!(res.assignment, vec![0, 1, 2]);
        assert!(res.sir_db.iter().all(|&v| v >= 99.0), "{:?}", res.sir_db);
    }

    #[test]
    fn sdr_cases() {
        let r = [1.0, -2.0, 0.5, 3.0];
        let y: Vec<f64> = r.iter().map(|v| 2.5 * v).collect();
        assert_eq!(sdr(&y, &r), DB_CAP);
        let noisy: Vec<f64> = y.iter().zip([0.1, -0.1, 0.1, -0.1]).map(|(a, b)| a + b).collect();
        let v = sdr(&noisy, &r);
        assert!(v > 20.0 && v < DB_CAP);
    }

    #[test]
    fn path_length() {
        let ds = physical_path_length(64, 0.000976, 4.0);
        assert!((ds - 0.249856).abs() < 1e-12);
        assert_eq!(physical_path_length(1, 0.000976, 4.0), 4.0 * 0.000976);
        assert_eq!(physical_path_length(128, 0.000976, 4.0), 2.0 * ds);
    }

    #[test]
    fn moving_rms_and_csv() {
        let x = [3.0, 4.0, 0.0, 0.0];
        let e = moving_rms(&x, 2);
        assert_eq!(e[0], 3.0);
        assert!((e[1] - libm::sqrt(12.5)).abs() < 1e-15);
        assert_eq!(e[3], 0.0);
        let ts = TimeSeries::from_channels(vec![vec![1.0; 3], vec![2.0; 3]], 0.5).unwrap();
        let csv = envelopes_csv(&ts, 1.0);
        assert!(csv.starts_with("time_s,env_out1,env_out2\n0.000000,1e0,2e0\n"));
        assert_eq!(csv.lines().count(), 4);
    }
}
