use convsep_core::metrics::{sir, Contributions};
use convsep_core::spectral::{center, filters_to_time, stft, FrequencyFilterBank};
use convsep_core::{apply_mimo_fir, run_iva, DemixFilterBank, IvaConfig, SpectralFrames, TimeSeries, Window};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TA: f64 = 0.001;

fn laplacian(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random::<f64>() - 0.5;
    // unit variance: scale 1/√2
    -u.signum() * (1.0 - 2.0 * u.abs()).ln() / core::f64::consts::SQRT_2
}

/// Laplacian samples under a piecewise-constant random envelope.
fn bursty_source(rng: &mut ChaCha8Rng, n: usize, segment: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut gain = 1.0;
    for i in 0..n {
        if i % segment == 0 {
            gain = -(1.0 - rng.random::<f64>()).ln();
        }
        out.push(gain * laplacian(rng));
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    out.iter().map(|v| v / rms).collect()
}

fn frames(ts: &TimeSeries, length: usize) -> SpectralFrames {
    center(&stft(ts, 2 * length, length, Window::Hann).unwrap())
}

fn relative_distance(bank: &DemixFilterBank, reference: &DemixFilterBank) -> f64 {
    let num: f64 = bank
        .coeffs()
        .iter()
        .zip(reference.coeffs())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let den: f64 = reference.coeffs().iter().map(|b| b * b).sum();
    (num / den).sqrt()
}

/// Per-source contributions at the outputs when each image passes the bank.
fn contributions(bank: &DemixFilterBank, images: &[TimeSeries]) -> Contributions {
    Contributions {
        per_source: images.iter().map(|img| apply_mimo_fir(bank, img).unwrap()).collect(),
    }
}

/// Sensor images of `sources` through short FIR kernels `kernels[q][p]`.
fn convolutive_images(sources: &[Vec<f64>], kernels: &[Vec<Vec<f64>>]) -> Vec<TimeSeries> {
    let n = sources[0].len();
    sources
        .iter()
        .zip(kernels)
        .map(|(s, ks)| {
            let chans = ks
                .iter()
                .map(|k| {
                    (0..n)
                        .map(|i| k.iter().enumerate().filter(|(d, _)| *d <= i).map(|(d, a)| a * s[i - d]).sum())
                        .collect()
                })
                .collect();
            TimeSeries::from_channels(chans, TA).unwrap()
        })
        .collect()
}

fn sum_images(images: &[TimeSeries]) -> TimeSeries {
    Contributions {
        per_source: images.to_vec(),
    }
    .total()
    .unwrap()
}

fn no_delay() -> IvaConfig {
    IvaConfig {
        reference_delay: Some(0),
        ..IvaConfig::default()
    }
}

#[test]
fn independent_uncorrelated_sources_keep_identity_bank() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let chans: Vec<Vec<f64>> = (0..3).map(|_| bursty_source(&mut rng, 1 << 15, 512)).collect();
    let ts = TimeSeries::from_channels(chans, TA).unwrap();
    let length = 16;
    let out = run_iva(&frames(&ts, length), &no_delay()).unwrap();
    let dist = relative_distance(&out.bank, &DemixFilterBank::identity(3, length));
    assert!(dist < 0.1, "relative distance to identity {dist}");
}

#[test]
fn single_channel_is_a_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ts = TimeSeries::from_channels(vec![bursty_source(&mut rng, 4096, 256)], TA).unwrap();
    let out = run_iva(&frames(&ts, 8), &no_delay()).unwrap();
    let identity = DemixFilterBank::identity(1, 8);
    for (a, b) in out.bank.coeffs().iter().zip(identity.coeffs()) {
        // MDP makes W = 1 per bin up to one rounding of w·(1/w)
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn orthogonal_instantaneous_laplacian_mixture_is_separated() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 20_000;
    let sources: Vec<Vec<f64>> = (0..2).map(|_| (0..n).map(|_| laplacian(&mut rng)).collect()).collect();
    let (s, c) = 0.5f64.sin_cos();
    let kernels = vec![vec![vec![c], vec![s]], vec![vec![-s], vec![c]]];
    let images = convolutive_images(&sources, &kernels);
    let out = run_iva(&frames(&sum_images(&images), 2), &IvaConfig::default()).unwrap();
    let res = sir(&contributions(&out.bank, &images), 2).unwrap();
    assert!(res.sir_db.iter().all(|&v| v > 20.0), "SIR {:?}", res.sir_db);
}

fn convolutive_pair(seed: u64) -> (Vec<TimeSeries>, TimeSeries) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sources: Vec<Vec<f64>> = (0..2).map(|_| bursty_source(&mut rng, 1 << 15, 400)).collect();
    let kernels = vec![
        vec![vec![1.0, 0.3, -0.1], vec![0.0, 0.6, 0.25]],
        vec![vec![0.0, 0.5, -0.2], vec![1.0, -0.2, 0.1]],
    ];
    let images = convolutive_images(&sources, &kernels);
    let mix = sum_images(&images);
    (images, mix)
}

#[test]
fn bin_shuffle_leaves_separation_unchanged() {
    let (images, mix) = convolutive_pair(21);
    let length = 8;
    let x = frames(&mix, length);
    let cfg = no_delay();
    let plain = run_iva(&x, &cfg).unwrap();
    let plain_sir = sir(&contributions(&plain.bank, &images), length).unwrap();

    let bins = x.bins();
    let mut order: Vec<usize> = (0..bins).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(99));
    let mut shuffled = x.clone();
    for p in 0..x.channels() {
        for m in 0..x.blocks() {
            for (k, &nu) in order.iter().enumerate() {
                shuffled.set(p, m, k, x.get(p, m, nu));
            }
        }
    }
    let out = run_iva(&shuffled, &cfg).unwrap();
    let mut restored = vec![None; bins];
    for (k, &nu) in order.iter().enumerate() {
        restored[nu] = Some(out.filters.bin(k).clone());
    }
    let fb = FrequencyFilterBank::new(restored.into_iter().map(Option::unwrap).collect()).unwrap();
    let bank = filters_to_time(&fb, length).unwrap();
    let shuffled_sir = sir(&contributions(&bank, &images), length).unwrap();

    assert_eq!(plain_sir.assignment, shuffled_sir.assignment);
    for (a, b) in plain_sir.sir_db.iter().zip(&shuffled_sir.sir_db) {
        assert!((a - b).abs() < 0.5, "{a} vs {b}");
    }
    assert!(plain_sir.sir_db.iter().all(|&v| v > 10.0), "SIR {:?}", plain_sir.sir_db);
}

#[test]
fn real_input_yields_negligible_imaginary_filter_energy() {
    let (_, mix) = convolutive_pair(8);
    let out = run_iva(&frames(&mix, 8), &IvaConfig::default()).unwrap();
    assert!(
        out.diagnostics.imaginary_energy_fraction < 1e-6,
        "imaginary fraction {}",
        out.diagnostics.imaginary_energy_fraction
    );
}
