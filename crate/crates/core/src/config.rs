//! The single TOML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::codebook::CodebookConfig;
use crate::dataset::{ScenarioConfig, SplitMode, GNN_NODE_FEATURES, NUM_FEATURES};
use crate::error::{Error, Result};
use crate::fl::FLConfig;
use crate::nn::{Arch, ModelKind};
use crate::orbit::{ConstellationConfig, GroundConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Fraction of final snapshots held out for testing.
    pub test_fraction: f64,
    pub split: SplitMode,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            split: SplitMode::Temporal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Used when the command line does not pick a model.
    pub default_kind: ModelKind,
    pub mlp_hidden: Vec<usize>,
    pub gnn_hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            default_kind: ModelKind::Gnn,
            mlp_hidden: vec![64, 64],
            gnn_hidden: vec![32, 32],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub bin_width_deg: f64,
    /// Batch size used by `grad-check`.
    pub grad_check_batch: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            bin_width_deg: 10.0,
            grad_check_batch: 16,
        }
    }
}

/// Output locations, relative to the run's output directory unless
/// absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub dataset: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            dataset: "dataset.csv".into(),
            checkpoints: "checkpoints".into(),
            reports: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    pub constellation: ConstellationConfig,
    pub ground: GroundConfig,
    pub channel: ChannelParams,
    pub codebook: CodebookConfig,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub fl: FLConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = Self {
            master_seed: 42,
            constellation: ConstellationConfig::default(),
            ground: GroundConfig::default(),
            channel: ChannelParams::default(),
            codebook: CodebookConfig::default(),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            fl: FLConfig::default(),
            eval: EvalConfig::default(),
            paths: PathsConfig::default(),
        };
        cfg.sync_seeds();
        cfg
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Validation(vec![e.to_string()]))?;
        cfg.canonicalize();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Fills derived fields and pushes the master seed into sub-configs.
    pub fn canonicalize(&mut self) {
        self.constellation.canonicalize();
        self.sync_seeds();
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.master_seed = seed;
        self.sync_seeds();
    }

    fn sync_seeds(&mut self) {
        self.fl.seed = self.master_seed;
    }

    /// Every problem with the configuration, not just the first.
    pub fn validation_errors(&self) -> Vec<String> {
        let mut errs = self.scenario().validate();
        errs.extend(self.fl.validate());
        let tf = self.dataset.test_fraction;
        if !(tf > 0.0 && tf < 1.0) {
            errs.push(format!("dataset.test_fraction must lie in (0, 1), got {tf}"));
        }
        if !(self.eval.bin_width_deg > 0.0) {
            errs.push("eval.bin_width_deg must be > 0".into());
        }
        if self.eval.grad_check_batch < 1 {
            errs.push("eval.grad_check_batch must be >= 1".into());
        }
        for kind in [ModelKind::Mlp, ModelKind::Gnn] {
            errs.extend(self.arch(kind).validate());
        }
        for (name, p) in [
            ("paths.dataset", &self.paths.dataset),
            ("paths.checkpoints", &self.paths.checkpoints),
            ("paths.reports", &self.paths.reports),
        ] {
            if p.as_os_str().is_empty() {
                errs.push(format!("{name} must not be empty"));
            }
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.validation_errors();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    pub fn scenario(&self) -> ScenarioConfig {
        ScenarioConfig {
            constellation: self.constellation.clone(),
            ground: self.ground.clone(),
            channel: self.channel.clone(),
            codebook: self.codebook,
        }
    }

    pub fn arch(&self, kind: ModelKind) -> Arch {
        match kind {
            ModelKind::Mlp => Arch::Mlp {
                input: NUM_FEATURES,
                hidden: self.model.mlp_hidden.clone(),
                n_beams: self.codebook.n_az * self.codebook.n_el,
            },
            ModelKind::Gnn => Arch::Gnn {
                node_features: GNN_NODE_FEATURES,
                hidden: self.model.gnn_hidden.clone(),
                n_az: self.codebook.n_az,
                n_el: self.codebook.n_el,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_as_fixed_point() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml(), text);
        assert!(cfg.validation_errors().is_empty());
    }

    #[test]
    fn omitted_altitudes_are_filled() {
        let mut cfg = RunConfig::default();
        cfg.constellation.plane_altitudes_km.clear();
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, RunConfig::default());
    }

    #[test]
    fn every_bad_field_is_reported() {
        let mut cfg = RunConfig::default();
        cfg.fl.rounds = 0;
        cfg.dataset.test_fraction = 1.5;
        cfg.ground.num_ues = 0;
        cfg.paths.reports = PathBuf::new();
        let errs = cfg.validation_errors();
        for needle in ["fl.rounds", "test_fraction", "num_ues", "paths.reports"] {
            assert!(
                errs.iter().any(|e| e.contains(needle)),
                "{needle} missing from {errs:?}"
            );
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = RunConfig::default().to_toml().replace("[fl]", "[fl]\nmomentum = 0.9");
        assert!(matches!(RunConfig::from_toml(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn seed_reaches_trainer() {
        let mut cfg = RunConfig::default();
        cfg.set_seed(7);
        assert_eq!(cfg.fl.seed, 7);
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back.fl.seed, 7);
    }
}
