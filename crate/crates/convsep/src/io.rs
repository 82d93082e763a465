//! On-disk formats.
//!
//! A signal `base` is stored as `base.json` (header) and `base.raw`
//! (little-endian `f32`, sample-major, channels interleaved) and widened to
//! `f64` on reading. A filter bank keeps full `f64` precision with
//! coefficients in `(q, p, κ)` order.

use std::fs;
use std::path::{Path, PathBuf};

use convsep_core::iva::UpdateNorm;
use convsep_core::simulate::{MixingSystem, Scenario, SourceKind, SourceSet};
use convsep_core::{DemixFilterBank, SignalMetadata, TimeSeries};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const BANK_DTYPE: &str = "f64le";
pub const BANK_LAYOUT: &str = "q,p,kappa";

/// Header of a stored multichannel signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalHeader {
    pub channels: usize,
    pub samples: usize,
    pub sample_interval_s: f64,
    pub labels: Vec<String>,
}

/// Header of a stored FIR demixing bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankHeader {
    pub channels: usize,
    pub length: usize,
    pub layout: String,
    pub dtype: String,
}

/// Header and payload paths of a stored object.
pub fn paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("json"), base.with_extension("raw"))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json {
        path: path.into(),
        source,
    })?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|source| CliError::Json {
        path: path.into(),
        source,
    })
}

fn write_f64s(path: &Path, values: impl Iterator<Item = f64>) -> Result<()> {
    let bytes: Vec<u8> = values.flat_map(f64::to_le_bytes).collect();
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn read_payload(path: &Path, expected: usize, width: usize) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.len() != expected * width {
        return Err(CliError::format(
            path,
            format!("expected {} bytes ({expected} values), found {}", expected * width, bytes.len()),
        ));
    }
    Ok(bytes)
}

fn read_f64s(path: &Path, expected: usize) -> Result<Vec<f64>> {
    Ok(read_payload(path, expected, 8)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

fn read_f32s(path: &Path, expected: usize) -> Result<Vec<f64>> {
    Ok(read_payload(path, expected, 4)?
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("chunk of 4"))))
        .collect())
}

pub fn write_signal(base: &Path, ts: &TimeSeries) -> Result<()> {
    let (header_path, raw_path) = paths(base);
    let header = SignalHeader {
        channels: ts.channel_count(),
        samples: ts.len(),
        sample_interval_s: ts.sample_interval_s(),
        labels: ts.meta().channel_labels.clone(),
    };
    if let Some(v) = ts.channels().iter().flatten().find(|v| v.abs() > f64::from(f32::MAX)) {
        return Err(CliError::format(&raw_path, format!("value {v} exceeds the float32 range")));
    }
    write_json(&header_path, &header)?;
    let n = ts.len();
    let bytes: Vec<u8> = (0..n)
        .flat_map(|i| ts.channels().iter().map(move |c| c[i] as f32))
        .flat_map(f32::to_le_bytes)
        .collect();
    fs::write(&raw_path, bytes).map_err(|e| CliError::io(&raw_path, e))
}

pub fn read_signal(base: &Path) -> Result<TimeSeries> {
    let (header_path, raw_path) = paths(base);
    let header: SignalHeader = read_json(&header_path)?;
    let p = header.channels;
    let data = read_f32s(&raw_path, p * header.samples)?;
    let mut chans = vec![Vec::with_capacity(header.samples); p];
    for frame in data.chunks_exact(p.max(1)) {
        for (c, &v) in chans.iter_mut().zip(frame) {
            c.push(v);
        }
    }
    let meta = SignalMetadata {
        sample_interval_s: header.sample_interval_s,
        channel_labels: header.labels,
    };
    TimeSeries::new(chans, meta).map_err(|e| CliError::format(&header_path, e.to_string()))
}

pub fn write_bank(base: &Path, bank: &DemixFilterBank) -> Result<()> {
    let (header_path, raw_path) = paths(base);
    let header = BankHeader {
        channels: bank.channels(),
        length: bank.length(),
        layout: BANK_LAYOUT.into(),
        dtype: BANK_DTYPE.into(),
    };
    write_json(&header_path, &header)?;
    write_f64s(&raw_path, bank.coeffs().iter().copied())
}

pub fn read_bank(base: &Path) -> Result<(BankHeader, DemixFilterBank)> {
    let (header_path, raw_path) = paths(base);
    let header: BankHeader = read_json(&header_path)?;
    if header.dtype != BANK_DTYPE {
        return Err(CliError::format(
            &header_path,
            format!("unsupported dtype {:?}, expected {BANK_DTYPE:?}", header.dtype),
        ));
    }
    if header.layout != BANK_LAYOUT {
        return Err(CliError::format(
            &header_path,
            format!("unsupported layout {:?}, expected {BANK_LAYOUT:?}", header.layout),
        ));
    }
    let coeffs = read_f64s(&raw_path, header.channels * header.channels * header.length)?;
    let bank = DemixFilterBank::new(header.channels, header.length, coeffs)
        .map_err(|e| CliError::format(&header_path, e.to_string()))?;
    Ok((header, bank))
}

/// Parses a convergence trace written by `convsep_core::iva::trace_csv`.
pub fn read_trace_csv(path: &Path) -> Result<Vec<UpdateNorm>> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("iteration,mean_update_norm,max_update_norm") {
        return Err(CliError::format(path, "missing convergence trace header"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || CliError::format(path, format!("malformed trace row {}", i + 1));
            let mut cols = line.split(',');
            let mut next = || cols.next().ok_or_else(bad);
            let iteration = next()?.parse().map_err(|_| bad())?;
            let mean = next()?.parse().map_err(|_| bad())?;
            let max = next()?.parse().map_err(|_| bad())?;
            Ok(UpdateNorm { iteration, mean, max })
        })
        .collect()
}

/// Scalar description of the ground truth next to the stored signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthManifest {
    pub seed: u64,
    pub kinds: Vec<SourceKind>,
    pub gains: Vec<f64>,
    pub mixing: MixingSystem,
}

const TRUTH_MANIFEST: &str = "truth.json";
const TRUTH_SOURCES: &str = "sources";

fn image_base(dir: &Path, q: usize) -> PathBuf {
    dir.join(format!("image_{q}"))
}

/// Writes sources, per-source sensor images and the mixing system to `dir`.
pub fn write_truth(dir: &Path, scenario: &Scenario) -> Result<()> {
    create_dir(dir)?;
    let manifest = TruthManifest {
        seed: scenario.sources.seed,
        kinds: scenario.sources.kinds.clone(),
        gains: scenario.gains.clone(),
        mixing: scenario.system.clone(),
    };
    write_json(&dir.join(TRUTH_MANIFEST), &manifest)?;
    let ta = scenario.mixture.sample_interval_s();
    let labels = scenario.sources.kinds.iter().map(|k| k.label().to_string()).collect();
    let sources = TimeSeries::new(
        scenario.sources.signals.clone(),
        SignalMetadata {
            sample_interval_s: ta,
            channel_labels: labels,
        },
    )?;
    write_signal(&dir.join(TRUTH_SOURCES), &sources)?;
    for (q, img) in scenario.images.iter().enumerate() {
        write_signal(&image_base(dir, q), img)?;
    }
    Ok(())
}

/// Reads a truth bundle back; the mixture is rebuilt as the sum of images.
pub fn read_truth(dir: &Path) -> Result<Scenario> {
    let manifest_path = dir.join(TRUTH_MANIFEST);
    let manifest: TruthManifest = read_json(&manifest_path)?;
    let m = &manifest.mixing;
    let system = MixingSystem::new(m.sources(), m.sensors(), m.length(), m.kernels().to_vec())
        .map_err(|e| CliError::format(&manifest_path, e.to_string()))?;
    let q_count = manifest.kinds.len();
    if system.sources() != q_count || manifest.gains.len() != q_count {
        return Err(CliError::format(
            &manifest_path,
            format!("{q_count} sources but mixing system and gains disagree"),
        ));
    }
    let sources = read_signal(&dir.join(TRUTH_SOURCES))?;
    if sources.channel_count() != q_count {
        return Err(CliError::format(
            &manifest_path,
            format!("{q_count} sources but the source signal has {} channels", sources.channel_count()),
        ));
    }
    let images = (0..q_count)
        .map(|q| read_signal(&image_base(dir, q)))
        .collect::<Result<Vec<_>>>()?;
    let mut mixture = images[0].clone().into_channels();
    for img in &images[1..] {
        if img.channel_count() != mixture.len() || img.len() != images[0].len() {
            return Err(CliError::format(&manifest_path, "source images differ in shape"));
        }
        for (acc, c) in mixture.iter_mut().zip(img.channels()) {
            acc.iter_mut().zip(c).for_each(|(a, b)| *a += b);
        }
    }
    let mixture = images[0].with_data(mixture)?;
    Ok(Scenario {
        mixture,
        sources: SourceSet {
            signals: sources.into_channels(),
            kinds: manifest.kinds,
            seed: manifest.seed,
        },
        system,
        images,
        gains: manifest.gains,
    })
}
