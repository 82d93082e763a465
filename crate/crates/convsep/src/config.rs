use std::path::{Path, PathBuf};

use convsep_core::simulate::SimScenario;
use convsep_core::PipelineConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io;

/// Everything a run needs, loaded from JSON. Missing fields take their
/// defaults; unknown fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. Overrides `scenario.seed` so one number governs a run.
    pub seed: u64,
    pub scenario: SimScenario,
    pub pipeline: PipelineConfig,
    pub evaluation: EvaluationConfig,
    pub paths: PathConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            scenario: SimScenario::default(),
            pipeline: PipelineConfig::default(),
            evaluation: EvaluationConfig::default(),
            paths: PathConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Moving-RMS window for the envelope CSV.
    pub envelope_window_s: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            envelope_window_s: 0.1,
        }
    }
}

/// Inputs of the individual subcommands. Unset paths resolve into the
/// output directory, and the resolved values are what the echo records.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathConfig {
    /// Mixture signal base path (without extension) read by `separate`.
    pub mixture: Option<PathBuf>,
    /// Truth bundle directory read by `evaluate`.
    pub truth: Option<PathBuf>,
    /// Directory holding the artifacts of `separate`, read by `evaluate`.
    pub separation: Option<PathBuf>,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub filter_length: Option<usize>,
    pub step_size: Option<f64>,
    pub iterations: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let mut cfg: RunConfig = io::read_json(path)?;
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(l) = o.filter_length {
            self.pipeline.filter_length = l;
            self.pipeline.hop = None;
        }
        if let Some(mu) = o.step_size {
            self.pipeline.iva.step_size = mu;
        }
        if let Some(k) = o.iterations {
            self.pipeline.iva.max_iterations = k;
        }
        self.scenario.seed = self.seed;
    }

    /// Checks every parameter group, including `M = 2L` with `L` a power
    /// of two.
    pub fn validate(&self) -> Result<()> {
        let wrap = |e: convsep_core::Error| CliError::Config(e.to_string());
        self.pipeline.validate().map_err(wrap)?;
        self.scenario.validate().map_err(wrap)?;
        if !(self.evaluation.envelope_window_s > 0.0 && self.evaluation.envelope_window_s.is_finite()) {
            return Err(CliError::Config(format!(
                "envelope_window_s must be positive, got {}",
                self.evaluation.envelope_window_s
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.pipeline.filter_length, 64);
        assert_eq!(cfg.pipeline.bins(), 128);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sede": 3}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"pipeline": {"filter_len": 3}}"#).is_err());
    }

    #[test]
    fn overrides_win_and_seed_propagates() {
        let mut cfg = RunConfig::default();
        cfg.apply(&Overrides {
            seed: Some(9),
            filter_length: Some(1),
            step_size: Some(0.5),
            iterations: Some(3),
        });
        assert_eq!(cfg.scenario.seed, 9);
        assert_eq!(cfg.pipeline.filter_length, 1);
        assert_eq!(cfg.pipeline.iva.step_size, 0.5);
        assert_eq!(cfg.pipeline.iva.max_iterations, 3);
        cfg.validate().unwrap();
    }

    #[test]
    fn non_power_of_two_length_is_a_config_error() {
        let mut cfg = RunConfig::default();
        cfg.pipeline.filter_length = 48;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("power of two"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn echo_roundtrips() {
        let mut cfg = RunConfig::default();
        cfg.paths.mixture = Some("a/b".into());
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
    }
}
