//! Experiment configuration, read from a TOML document. Unknown keys are
//! rejected at every level.

use std::path::{Path, PathBuf};

use fire_core::baselines::{ReinitMethod, ReinitSpec};
use fire_core::metrics::{DEFAULT_DELTA, DEFAULT_TAU};
use fire_core::nn::TrainConfig;
use fire_core::params::Architecture;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, HarnessError, Result};
use crate::stream::StreamSpec;

/// Environment variable naming the root that relative output dirs resolve against.
pub const OUTPUT_ROOT_ENV: &str = "FIRE_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
    pub bias: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            bias: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSpec {
    /// Heavy metrics (DfI, srank, dormancy) every `cadence` epochs and at
    /// every chunk start and end.
    pub cadence: usize,
    pub delta: f64,
    pub tau: f64,
    /// Training samples used for feature statistics and curvature.
    pub probe_size: usize,
    /// Measure the Hessian spectral norm at each chunk start.
    pub hessian: bool,
    pub hessian_tol: f64,
    pub hessian_max_iter: usize,
}

impl Default for MetricsSpec {
    fn default() -> Self {
        Self {
            cadence: 10,
            delta: DEFAULT_DELTA,
            tau: DEFAULT_TAU,
            probe_size: 256,
            hessian: false,
            hessian_tol: 1e-4,
            hessian_max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Method label used in run ids; defaults to the reinit method name.
    pub name: Option<String>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub stream: StreamSpec,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub reinit: ReinitSpec,
    pub metrics: MetricsSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: None,
            seeds: vec![0, 1, 2],
            output_dir: PathBuf::from("runs"),
            stream: StreamSpec::default(),
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            reinit: ReinitSpec::default(),
            metrics: MetricsSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|source| HarnessError::ConfigParse {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.metrics.cadence == 0 {
            return bad("metrics.cadence must be at least 1".into());
        }
        if self.metrics.probe_size == 0 {
            return bad("metrics.probe_size must be positive".into());
        }
        if !(self.metrics.delta > 0.0 && self.metrics.delta < 1.0) {
            return bad(format!("metrics.delta {} outside (0, 1)", self.metrics.delta));
        }
        if self.model.hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        if self.train.learning_rate <= 0.0 {
            return bad("train.learning_rate must be positive".into());
        }
        self.stream.validate()?;
        self.train.validate()?;
        self.reinit.validate()?;
        if let Some(mask) = &self.reinit.layer_mask {
            if mask.len() != self.model.hidden.len() + 1 {
                return bad(format!(
                    "reinit.layer_mask has {} entries for {} layers",
                    mask.len(),
                    self.model.hidden.len() + 1
                ));
            }
        }
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        let d = &self.stream.dataset;
        Architecture::mlp(d.input_dim, &self.model.hidden, d.num_classes, self.model.bias)
    }

    pub fn method_label(&self) -> String {
        match &self.name {
            Some(n) => n.clone(),
            None if self.reinit.method == ReinitMethod::Fire && self.reinit.iters != 10 => {
                format!("fire-iters{}", self.reinit.iters)
            }
            None => self.reinit.method.name().to_string(),
        }
    }

    pub fn run_id(&self, seed: u64) -> String {
        format!("{}-seed{seed}", self.method_label())
    }

    /// Output directory, resolved against `FIRE_OUTPUT_ROOT` when relative.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::Protocol;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = ExperimentConfig::from_toml("", Path::new("x.toml")).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.architecture().layers.len(), 3);
        assert_eq!(cfg.run_id(2), "none-seed2");
    }

    #[test]
    fn nested_fields_parse() {
        let text = r#"
            seeds = [4]
            [stream]
            protocol = "warm_start"
            [stream.dataset]
            num_classes = 3
            [train]
            epochs_per_chunk = 2
            [train.regularizer]
            kind = "l2_init"
            strength = 0.01
            [reinit]
            method = "fire"
            iters = 5
        "#;
        let cfg = ExperimentConfig::from_toml(text, Path::new("x.toml")).unwrap();
        assert_eq!(cfg.stream.protocol, Protocol::WarmStart);
        assert_eq!(cfg.stream.dataset.num_classes, 3);
        assert_eq!(cfg.train.epochs_per_chunk, 2);
        assert_eq!(cfg.train.learning_rate, 1e-3);
        assert_eq!(cfg.run_id(4), "fire-iters5-seed4");
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let p = Path::new("x.toml");
        assert!(ExperimentConfig::from_toml("sedes = [1]", p).is_err());
        assert!(ExperimentConfig::from_toml("[train]\nlearning_rte = 0.1", p).is_err());
        assert!(ExperimentConfig::from_toml("[reinit]\nmethod = \"fire\"\nitrs = 3", p).is_err());
        assert!(ExperimentConfig::from_toml("seeds = []", p).is_err());
        assert!(ExperimentConfig::from_toml("[metrics]\ncadence = 0", p).is_err());
        assert!(ExperimentConfig::from_toml("[train]\nwarmup_fraction = 1.0", p).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml(), Path::new("x.toml")).unwrap();
        assert_eq!(back, cfg);
    }
}
