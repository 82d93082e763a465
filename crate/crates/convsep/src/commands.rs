//! The four subcommands. Each writes its resolved configuration to
//! `config_echo_<command>.json` in the output directory before doing any
//! work, so a failed run can be reproduced from the echo as well.

use std::path::{Path, PathBuf};

use convsep_core::iva::trace_csv;
use convsep_core::metrics::{self, envelopes_csv, SeparationReport};
use convsep_core::simulate::{build_scenario, Scenario};
use convsep_core::spectral::TruncationDiagnostics;
use convsep_core::sphering::SpheringTransform;
use convsep_core::{demix_pipeline, PipelineConfig, PipelineOutput};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::io;

pub const MIXTURE: &str = "mixture";
pub const TRUTH_DIR: &str = "truth";
pub const SEPARATED: &str = "separated";
pub const BANK: &str = "bank";
pub const SPHERING: &str = "sphering.json";
pub const CONVERGENCE: &str = "convergence.csv";
pub const SEPARATION: &str = "separation.json";
pub const REPORT: &str = "report.json";
pub const ENVELOPES: &str = "envelopes.csv";

pub fn echo_path(out: &Path, command: &str) -> PathBuf {
    out.join(format!("config_echo_{command}.json"))
}

fn start(out: &Path, command: &str, cfg: &RunConfig) -> Result<()> {
    io::create_dir(out)?;
    io::write_json(&echo_path(out, command), cfg)
}

/// Scalar facts about a separation run needed to score it later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparationSummary {
    pub filter_length: usize,
    pub reference_delay: usize,
    pub iterations: usize,
    pub converged: bool,
    pub highpass_cutoff_hz: Option<f64>,
    pub discarded_energy_fraction: f64,
    pub imaginary_energy_fraction: f64,
}

/// Simulates the configured scenario; writes the mixture and the truth
/// bundle.
pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<Scenario> {
    start(out, "simulate", cfg)?;
    let scenario = build_scenario(&cfg.scenario)?;
    write_scenario(out, &scenario)?;
    Ok(scenario)
}

/// Separates the mixture at `paths.mixture` (default `<out>/mixture`).
pub fn separate(cfg: &RunConfig, out: &Path) -> Result<PipelineOutput> {
    let mut cfg = cfg.clone();
    let input = cfg.paths.mixture.get_or_insert_with(|| out.join(MIXTURE)).clone();
    start(out, "separate", &cfg)?;
    separate_stage(&input, out, &cfg.pipeline)
}

/// Scores the artifacts in `paths.separation` (default `<out>`) against the
/// truth bundle in `paths.truth` (default `<out>/truth`).
pub fn evaluate(cfg: &RunConfig, out: &Path) -> Result<SeparationReport> {
    let mut cfg = cfg.clone();
    let truth_dir = cfg.paths.truth.get_or_insert_with(|| out.join(TRUTH_DIR)).clone();
    let sep_dir = cfg.paths.separation.get_or_insert_with(|| out.to_path_buf()).clone();
    start(out, "evaluate", &cfg)?;
    evaluate_stage(&truth_dir, &sep_dir, out, &cfg)
}

/// Simulate, separate and evaluate in one go, all under `out`. The stages
/// exchange data through the stored files, exactly as the separate
/// commands do.
pub fn pipeline(cfg: &RunConfig, out: &Path) -> Result<SeparationReport> {
    start(out, "pipeline", cfg)?;
    write_scenario(out, &build_scenario(&cfg.scenario)?)?;
    separate_stage(&out.join(MIXTURE), out, &cfg.pipeline)?;
    evaluate_stage(&out.join(TRUTH_DIR), out, out, cfg)
}

fn separate_stage(input: &Path, out: &Path, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let mixture = io::read_signal(input)?;
    let run = demix_pipeline(&mixture, cfg)?;
    write_separation(out, &run, cfg)?;
    Ok(run)
}

fn evaluate_stage(truth_dir: &Path, sep_dir: &Path, out: &Path, cfg: &RunConfig) -> Result<SeparationReport> {
    let scenario = io::read_truth(truth_dir)?;
    let (run, summary) = read_separation(sep_dir)?;
    let scoring = PipelineConfig {
        filter_length: summary.filter_length,
        hop: None,
        highpass_cutoff_hz: summary.highpass_cutoff_hz,
        ..cfg.pipeline.clone()
    };
    let report = metrics::evaluate(&scenario, &run, &scoring)?;
    write_report(out, &report, &run, cfg)?;
    Ok(report)
}

fn write_scenario(out: &Path, scenario: &Scenario) -> Result<()> {
    io::write_signal(&out.join(MIXTURE), &scenario.mixture)?;
    io::write_truth(&out.join(TRUTH_DIR), scenario)
}

fn write_separation(out: &Path, run: &PipelineOutput, cfg: &PipelineConfig) -> Result<()> {
    io::write_signal(&out.join(SEPARATED), &run.separated)?;
    io::write_bank(&out.join(BANK), &run.bank)?;
    io::write_json(&out.join(SPHERING), &run.sphering)?;
    io::write_text(&out.join(CONVERGENCE), &trace_csv(&run.trace))?;
    let summary = SeparationSummary {
        filter_length: run.bank.length(),
        reference_delay: run.reference_delay,
        iterations: run.trace.len(),
        converged: run.converged,
        highpass_cutoff_hz: cfg.highpass_cutoff_hz,
        discarded_energy_fraction: run.diagnostics.discarded_energy_fraction,
        imaginary_energy_fraction: run.diagnostics.imaginary_energy_fraction,
    };
    io::write_json(&out.join(SEPARATION), &summary)
}

/// Reassembles a pipeline result from the files of `separate`.
pub fn read_separation(dir: &Path) -> Result<(PipelineOutput, SeparationSummary)> {
    let summary_path = dir.join(SEPARATION);
    let summary: SeparationSummary = io::read_json(&summary_path)?;
    let separated = io::read_signal(&dir.join(SEPARATED))?;
    let (_, bank) = io::read_bank(&dir.join(BANK))?;
    let sphering: SpheringTransform = io::read_json(&dir.join(SPHERING))?;
    let trace = io::read_trace_csv(&dir.join(CONVERGENCE))?;
    let p = separated.channel_count();
    if bank.channels() != p || sphering.channels() != p || sphering.matrix.dim() != p {
        return Err(CliError::format(
            &summary_path,
            format!(
                "separated signal has {p} channels, bank {} and sphering {}",
                bank.channels(),
                sphering.matrix.dim()
            ),
        ));
    }
    if bank.length() != summary.filter_length {
        return Err(CliError::format(
            &summary_path,
            format!("filter_length {} but the bank has {} taps", summary.filter_length, bank.length()),
        ));
    }
    let run = PipelineOutput {
        separated,
        bank,
        sphering,
        trace,
        converged: summary.converged,
        reference_delay: summary.reference_delay,
        diagnostics: TruncationDiagnostics {
            discarded_energy_fraction: summary.discarded_energy_fraction,
            imaginary_energy_fraction: summary.imaginary_energy_fraction,
        },
    };
    Ok((run, summary))
}

fn write_report(out: &Path, report: &SeparationReport, run: &PipelineOutput, cfg: &RunConfig) -> Result<()> {
    io::write_json(&out.join(REPORT), report)?;
    io::write_text(
        &out.join(ENVELOPES),
        &envelopes_csv(&run.separated, cfg.evaluation.envelope_window_s),
    )
}
