//! The experiment configuration: one JSON document, every field defaulted.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{Station, DEFAULT_INTERVAL};
use crate::encoding::POINTS_PER_SIDE;
use crate::error::{Error, Result};
use crate::flow::{FlowConditions, SolverOptions};
use crate::geometry::{DatumSpec, LibrarySweep};
use crate::models::{ArchKind, BankArch, TrainConfig};

/// File name under which the config is copied into every output directory.
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub datum: DatumSpec,
    pub sweep: LibrarySweep,
    pub library_seed: u64,
    pub flow: FlowConditions,
    pub solver: SolverOptions,
    pub stations: Vec<Station>,
    pub label_interval: f64,
    pub split_seed: u64,
    /// Largest tolerated share of blades lost to geometry or solver failures.
    pub max_failure_fraction: f64,
    pub architectures: Vec<BankArch>,
    pub train: TrainConfig,
    pub train_seed: u64,
    /// Threshold of `count_activated`, relative to the largest activation.
    pub activation_fraction: f64,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let arch = |kind, conv_depth| BankArch {
            kind,
            conv_depth,
            fc_hidden: 256,
            keep_prob: 0.5,
        };
        ExperimentConfig {
            datum: DatumSpec::default(),
            sweep: LibrarySweep::default(),
            library_seed: 7,
            flow: FlowConditions::default(),
            solver: SolverOptions::default(),
            stations: Station::standard(),
            label_interval: DEFAULT_INTERVAL,
            split_seed: 11,
            max_failure_fraction: 0.01,
            architectures: vec![
                arch(ArchKind::Nn2, 16),
                arch(ArchKind::Cnn2Nn2, 16),
                arch(ArchKind::Cnn4Nn2, 16),
            ],
            train: TrainConfig::default(),
            train_seed: 2019,
            activation_fraction: 0.5,
            out: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes the config verbatim into `dir`.
    pub fn save_into(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(CONFIG_FILE), self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.datum.validate()?;
        if self.datum.points_per_side != POINTS_PER_SIDE {
            return Err(Error::invalid(format!(
                "the 20x20 encoding needs {POINTS_PER_SIDE} points per side, config has {}",
                self.datum.points_per_side
            )));
        }
        self.sweep.validate()?;
        self.flow.validate()?;
        if self.stations.is_empty() {
            return Err(Error::invalid("no stations configured"));
        }
        for (i, a) in self.stations.iter().enumerate() {
            if !(a.cx > 0.0 && a.cx < 1.0) {
                return Err(Error::invalid(format!("station {a} outside (0, 1)")));
            }
            if self.stations[..i].contains(a) {
                return Err(Error::invalid(format!("station {a} listed twice")));
            }
        }
        if !(self.label_interval > 0.0 && self.label_interval.is_finite()) {
            return Err(Error::invalid("label interval must be positive"));
        }
        if !(0.0..1.0).contains(&self.max_failure_fraction) {
            return Err(Error::invalid("max_failure_fraction outside [0, 1)"));
        }
        for a in &self.architectures {
            a.for_labels(1).validate()?;
        }
        self.train.validate()?;
        if !(self.activation_fraction > 0.0 && self.activation_fraction < 1.0) {
            return Err(Error::invalid("activation_fraction outside (0, 1)"));
        }
        Ok(())
    }

    pub fn architecture(&self, kind: ArchKind) -> Option<&BankArch> {
        self.architectures.iter().find(|a| a.kind == kind)
    }
}
