//! Experiment configuration, read from a single JSON document.

use std::fs;
use std::path::{Path, PathBuf};

use outage_core::channel_sim::{CapacityMode, ChannelMode, SimConfig};
use outage_core::losses::LossKind;
use outage_core::predictor::{Architecture, FeatureMode};
use outage_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub sim: SimSection,
    pub data: DataSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            output_dir: PathBuf::from("out"),
            sim: SimSection::default(),
            data: DataSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacityModeName {
    Sum,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelModeName {
    SharedFft,
    IndependentEpisodes,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureModeName {
    Magnitude,
    ReIm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossChoice {
    All,
    Custom,
    Bce,
    Mse,
    Mae,
}

impl LossChoice {
    pub fn kinds(self) -> Vec<LossKind> {
        match self {
            LossChoice::All => LossKind::ALL.to_vec(),
            LossChoice::Custom => vec![LossKind::Custom],
            LossChoice::Bce => vec![LossKind::Bce],
            LossChoice::Mse => vec![LossKind::Mse],
            LossChoice::Mae => vec![LossKind::Mae],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub n_taps: usize,
    pub k: usize,
    pub l: usize,
    pub resource_count: usize,
    pub phase_half_width: f64,
    pub gamma_th: f64,
    pub capacity_mode: CapacityModeName,
    pub channel_mode: ChannelModeName,
}

impl Default for SimSection {
    fn default() -> Self {
        let d = SimConfig::default();
        SimSection {
            n_taps: d.n_taps,
            k: d.k,
            l: d.l,
            resource_count: d.resource_count,
            phase_half_width: d.phase_half_width,
            gamma_th: d.gamma_th,
            capacity_mode: CapacityModeName::Mean,
            channel_mode: ChannelModeName::SharedFft,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub n_windows: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection { n_windows: 20_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub loss_kind: LossChoice,
    pub q_th_train: f64,
    pub alpha: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub replicate_count: usize,
    pub validation_fraction: f64,
    pub hidden: usize,
    pub dense: usize,
    pub feature_mode: FeatureModeName,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            loss_kind: LossChoice::All,
            q_th_train: d.q_th_train,
            alpha: d.alpha,
            batch_size: d.batch_size,
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            beta1: d.beta1,
            beta2: d.beta2,
            epsilon: d.epsilon,
            replicate_count: d.replicate_count,
            validation_fraction: d.validation_fraction,
            hidden: d.architecture.hidden,
            dense: d.architecture.dense,
            feature_mode: FeatureModeName::Magnitude,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub n_episodes: usize,
    /// Threshold used by the `gamma` and `l` sweeps.
    pub q_th: f64,
    pub q_th_grid: Vec<f64>,
    pub gamma_grid: Vec<f64>,
    pub l_grid: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            n_episodes: 20_000,
            q_th: 0.1,
            q_th_grid: (0..=20).map(|i| i as f64 / 20.0).collect(),
            gamma_grid: (0..=6).map(|i| (40 + 5 * i) as f64 / 100.0).collect(),
            l_grid: vec![10, 20, 30, 40],
        }
    }
}

fn field_err(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

impl ExperimentConfig {
    /// Parses JSON text. Syntax errors and unknown keys carry the line and
    /// column of the offending token.
    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn channel_mode(&self) -> ChannelMode {
        match self.sim.channel_mode {
            ChannelModeName::SharedFft => ChannelMode::SharedFft,
            ChannelModeName::IndependentEpisodes => ChannelMode::IndependentEpisodes,
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        let s = &self.sim;
        SimConfig {
            n_taps: s.n_taps,
            k: s.k,
            l: s.l,
            resource_count: s.resource_count,
            phase_half_width: s.phase_half_width,
            gamma_th: s.gamma_th,
            capacity_mode: match s.capacity_mode {
                CapacityModeName::Sum => CapacityMode::Sum,
                CapacityModeName::Mean => CapacityMode::Mean,
            },
            seed: self.seed,
        }
    }

    /// Training settings for one loss kind; the custom loss uses the
    /// simulated resource count.
    pub fn train_config(&self, kind: LossKind) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            loss_kind: kind,
            q_th_train: t.q_th_train,
            alpha: t.alpha,
            resource_count: self.sim.resource_count,
            batch_size: t.batch_size,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            seed: self.seed,
            replicate_count: t.replicate_count,
            validation_fraction: t.validation_fraction,
            architecture: Architecture {
                feature_mode: match t.feature_mode {
                    FeatureModeName::Magnitude => FeatureMode::Magnitude,
                    FeatureModeName::ReIm => FeatureMode::ReIm,
                },
                hidden: t.hidden,
                dense: t.dense,
            },
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let s = &self.sim;
        if !s.n_taps.is_power_of_two() {
            return Err(field_err("sim.n_taps", format!("{} is not a power of two", s.n_taps)));
        }
        if s.k == 0 {
            return Err(field_err("sim.k", "must be at least 1"));
        }
        if s.l == 0 {
            return Err(field_err("sim.l", "must be at least 1"));
        }
        if s.resource_count == 0 {
            return Err(field_err("sim.resource_count", "must be at least 1"));
        }
        if self.channel_mode() == ChannelMode::SharedFft && s.n_taps % s.resource_count != 0 {
            return Err(field_err(
                "sim.resource_count",
                format!(
                    "{} does not divide sim.n_taps = {} (use channel_mode \"independent_episodes\" for other counts)",
                    s.resource_count, s.n_taps
                ),
            ));
        }
        if !(s.phase_half_width > 0.0 && s.phase_half_width.is_finite()) {
            return Err(field_err("sim.phase_half_width", "must be positive"));
        }
        if !(s.gamma_th > 0.0 && s.gamma_th.is_finite()) {
            return Err(field_err("sim.gamma_th", "must be positive"));
        }
        if self.data.n_windows == 0 {
            return Err(field_err("data.n_windows", "must be at least 1"));
        }
        if self.eval.n_episodes == 0 {
            return Err(field_err("eval.n_episodes", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.eval.q_th) {
            return Err(field_err("eval.q_th", "must lie in [0, 1]"));
        }
        if self.eval.q_th_grid.is_empty() || self.eval.q_th_grid.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return Err(field_err("eval.q_th_grid", "must be a nonempty list of values in [0, 1]"));
        }
        if self.eval.gamma_grid.is_empty() || self.eval.gamma_grid.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err(field_err("eval.gamma_grid", "must be a nonempty list of positive values"));
        }
        if self.eval.l_grid.is_empty() || self.eval.l_grid.contains(&0) {
            return Err(field_err("eval.l_grid", "must be a nonempty list of positive lengths"));
        }
        for kind in self.train.loss_kind.kinds() {
            self.train_config(kind).validate().map_err(|e| field_err("train", e))?;
        }
        Ok(())
    }
}
