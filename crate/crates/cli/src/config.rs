//! TOML configuration. Every field has a default, so an empty file (or no
//! file) reproduces the stock experiment.

use std::path::Path;

use anyhow::{bail, Context, Result};
use insdvl_core::datagen::{DatasetRecipe, EvalSensors, NoiseGrid};
use insdvl_core::harness::RunConfig;
use insdvl_core::nalgebra::Matrix3;
use insdvl_core::trees::EnsembleParams;
use insdvl_core::{ErrorFilterState, ProcessNoiseSpec, StrategySpec, TrajectoryId};
use serde::{Deserialize, Serialize};

pub const CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub format_version: u32,
    pub seed: u64,
    pub generate: GenerateConfig,
    pub train: TrainConfig,
    pub evaluate: EvaluateConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub rate_hz: f64,
    pub duration_s: f64,
    pub window_len: usize,
    pub train_fraction: f64,
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_levels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_trees: usize,
    pub min_leaf: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub runs: usize,
    pub strategies: Vec<String>,
    pub trajectory: String,
    pub duration_s: f64,
    pub imu_rate_hz: f64,
    pub dvl_period_s: f64,
    /// Per-channel IMU noise variance injected into the evaluation streams,
    /// accelerometer axes then gyro axes.
    pub imu_noise: [f64; 6],
    /// Per-axis DVL noise variance, used both to corrupt and in the filter.
    pub dvl_noise: f64,
    pub nominal_q_f: f64,
    pub nominal_q_w: f64,
    pub eps_bias: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            format_version: CONFIG_FORMAT_VERSION,
            seed: 0,
            generate: GenerateConfig::default(),
            train: TrainConfig::default(),
            evaluate: EvaluateConfig::default(),
        }
    }
}

impl Default for GenerateConfig {
    fn default() -> Self {
        let r = DatasetRecipe::default();
        Self {
            rate_hz: r.rate_hz,
            duration_s: r.duration_s,
            window_len: r.window_len,
            train_fraction: r.train_fraction,
            grid_min: r.grid.values[0],
            grid_max: r.grid.values[r.grid.len() - 1],
            grid_levels: r.grid.len(),
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        let p = EnsembleParams::default();
        Self {
            n_trees: p.n_trees,
            min_leaf: p.min_leaf,
        }
    }
}

/// Rows of the stock comparison table.
pub const DEFAULT_STRATEGIES: [&str; 5] = [
    "constant:0.01,0.001",
    "constant:0.2,0.02",
    "adaptive:1",
    "adaptive:5",
    "learned:1",
];

impl Default for EvaluateConfig {
    fn default() -> Self {
        let s = EvalSensors::default();
        let nominal = RunConfig::default().nominal_q;
        Self {
            runs: 20,
            strategies: DEFAULT_STRATEGIES.iter().map(|s| s.to_string()).collect(),
            trajectory: TrajectoryId::EvalLawnmower.to_string(),
            duration_s: s.duration,
            imu_rate_hz: s.imu_rate_hz,
            dvl_period_s: s.dvl_period,
            imu_noise: s.imu_noise,
            dvl_noise: s.dvl_noise[(0, 0)],
            nominal_q_f: nominal.q_f[0],
            nominal_q_w: nominal.q_w[0],
            eps_bias: nominal.eps_bias,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Config =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if cfg.format_version != CONFIG_FORMAT_VERSION {
            bail!(
                "config {} has format_version {}, expected {}",
                path.display(),
                cfg.format_version,
                CONFIG_FORMAT_VERSION
            );
        }
        Ok(cfg)
    }

    pub fn recipe(&self) -> Result<DatasetRecipe> {
        let g = &self.generate;
        Ok(DatasetRecipe {
            rate_hz: g.rate_hz,
            duration_s: g.duration_s,
            window_len: g.window_len,
            train_fraction: g.train_fraction,
            grid: NoiseGrid::log_spaced(g.grid_min, g.grid_max, g.grid_levels)?,
            seed: self.seed,
        })
    }

    pub fn ensemble_params(&self, window_len: usize) -> EnsembleParams {
        EnsembleParams {
            n_trees: self.train.n_trees,
            min_leaf: self.train.min_leaf,
            seed: self.seed,
            window_len,
            ..EnsembleParams::default()
        }
    }

    pub fn strategies(&self) -> Result<Vec<StrategySpec>> {
        if self.evaluate.strategies.is_empty() {
            bail!("no strategies configured");
        }
        self.evaluate
            .strategies
            .iter()
            .map(|s| s.parse().map_err(Into::into))
            .collect()
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        let e = &self.evaluate;
        let nominal =
            ProcessNoiseSpec::uniform(e.nominal_q_f, e.nominal_q_w).with_eps_bias(e.eps_bias);
        nominal.validate()?;
        if !(e.dvl_noise >= 0.0) {
            bail!("dvl_noise must be non-negative");
        }
        let trajectory: TrajectoryId = e.trajectory.parse()?;
        let sensors = EvalSensors {
            imu_noise: e.imu_noise,
            dvl_noise: Matrix3::from_diagonal_element(e.dvl_noise),
            imu_rate_hz: e.imu_rate_hz,
            dvl_period: e.dvl_period_s,
            duration: e.duration_s,
        };
        sensors.dvl_steps()?;
        // the filter needs a positive R even when the streams are noise-free
        let filter_r = e.dvl_noise.max(1e-12);
        Ok(RunConfig {
            sensors,
            dvl_r: Matrix3::from_diagonal_element(filter_r),
            nominal_q: nominal,
            initial_p: ErrorFilterState::default_covariance(),
            trajectory,
        })
    }
}
