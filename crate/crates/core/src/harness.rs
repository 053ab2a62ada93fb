//! Filter run loop, speed-error metrics and Monte-Carlo comparison.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::adapt::{QAdapter, QStrategy, StrategySpec};
use crate::datagen::{steps_of, synthesize_eval_run, EvalRun, EvalSensors};
use crate::error::{Error, Result};
use crate::eskf::{DvlMeasurement, ErrorFilterState, Matrix12, ProcessNoiseSpec};
use crate::features::{Channel, Window};
use crate::nav::Strapdown;
use crate::par::{derive_seed, Exec};
use crate::trajectory::{AnalyticTrajectory, TrajectoryId};
use crate::trees::TreeEnsemble;

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Speed RMSE: root of the per-epoch squared NED error norm, averaged over
/// epochs.
pub fn srmse(errors: &[Vector3<f64>]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument("no velocity errors".into()));
    }
    Ok((errors.iter().map(|e| e.norm_squared()).sum::<f64>() / errors.len() as f64).sqrt())
}

/// Speed MAE: per-epoch sum of absolute NED errors, averaged over epochs.
pub fn smae(errors: &[Vector3<f64>]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument("no velocity errors".into()));
    }
    Ok(errors.iter().map(|e| e.abs().sum()).sum::<f64>() / errors.len() as f64)
}

/// Filter-side settings of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub sensors: EvalSensors,
    /// Filter DVL noise covariance, (m/s)².
    pub dvl_r: Matrix3<f64>,
    /// Base spec for the adaptive strategies.
    pub nominal_q: ProcessNoiseSpec,
    pub initial_p: Matrix12,
    pub trajectory: TrajectoryId,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sensors: EvalSensors::default(),
            dvl_r: Matrix3::from_diagonal_element(0.01),
            nominal_q: ProcessNoiseSpec::uniform(0.01, 0.001),
            initial_p: ErrorFilterState::default_covariance(),
            trajectory: TrajectoryId::EvalLawnmower,
        }
    }
}

impl RunConfig {
    pub fn dt(&self) -> f64 {
        1.0 / self.sensors.imu_rate_hz
    }

    pub fn synthesize(&self, seed: u64) -> Result<EvalRun> {
        let traj = AnalyticTrajectory::builtin(self.trajectory, self.sensors.duration);
        synthesize_eval_run(&traj, &self.sensors, seed)
    }
}

/// Outcome of one filter run. Velocity errors are filtered minus true,
/// sampled right after each DVL update.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub srmse: f64,
    pub smae: f64,
    pub errors: Vec<Vector3<f64>>,
    pub innovations: Vec<Vector3<f64>>,
    /// Trace of the process-noise spec in force after each DVL epoch.
    pub q_trace: Vec<f64>,
    pub alphas: Vec<f64>,
    pub max_asymmetry: f64,
    pub min_eigenvalue: f64,
    pub psd_repairs: u64,
}

/// Runs the hybrid filter loop over one set of streams.
///
/// Each IMU step propagates the covariance and mechanizes the bias-corrected
/// reading; every DVL epoch applies the velocity update; every tuning epoch
/// of the learned strategy replaces Q with the model's prediction from the
/// trailing raw windows.
pub fn run_filter(cfg: &RunConfig, strategy: QStrategy, run: &EvalRun) -> Result<RunMetrics> {
    let dt = cfg.dt();
    let n = cfg.sensors.n_imu();
    let dvl_steps = cfg.sensors.dvl_steps()?;
    if run.imu.len() < n {
        return Err(Error::StreamUnderrun {
            index: run.imu.len(),
            what: "IMU stream shorter than the configured duration",
        });
    }
    if run.truth.len() < n + 1 {
        return Err(Error::StreamUnderrun {
            index: run.truth.len(),
            what: "ground truth shorter than the IMU stream",
        });
    }

    let mut adapter = QAdapter::new(strategy);
    let schedule = match adapter.learned_schedule() {
        Some((len, rate)) => Some((len, steps_of(rate, cfg.sensors.imu_rate_hz, "tuning rate")?)),
        None => None,
    };
    let mut ring: Vec<VecDeque<f64>> = match schedule {
        Some((len, _)) => (0..6).map(|_| VecDeque::with_capacity(len + 1)).collect(),
        None => Vec::new(),
    };

    let sd = Strapdown::at_latitude(run.truth[0].lat);
    let mut nav = run.truth[0];
    let mut fs = ErrorFilterState::new(cfg.initial_p);
    let mut dvl = run.dvl.iter().peekable();

    let n_epochs = n / dvl_steps;
    let mut errors = Vec::with_capacity(n_epochs);
    let mut innovations = Vec::with_capacity(n_epochs);
    let mut q_trace = Vec::with_capacity(n_epochs);
    let mut max_asymmetry: f64 = 0.0;
    let mut min_eigenvalue = f64::INFINITY;

    for k in 0..n {
        let imu = &run.imu[k];
        let corrected = fs.correct(imu);
        fs = fs.propagate(&nav, imu, adapter.current(), dt);
        nav = sd.mechanize(&nav, &corrected, dt)?;

        if let Some((len, _)) = schedule {
            for (buf, v) in ring.iter_mut().zip(imu.channels()) {
                buf.push_back(v);
                if buf.len() > len {
                    buf.pop_front();
                }
            }
        }

        let step = k + 1;
        if step % dvl_steps == 0 {
            let &(at, v_meas) = dvl.next().ok_or(Error::StreamUnderrun {
                index: step,
                what: "DVL stream exhausted",
            })?;
            if at != step {
                return Err(Error::StreamUnderrun {
                    index: step,
                    what: "DVL fix out of step with the IMU stream",
                });
            }
            let z = DvlMeasurement::new(v_meas, cfg.dvl_r);
            let (f2, n2) = fs.dvl_update(&nav, &z)?;
            fs = f2;
            nav = n2;
            adapter.on_dvl_update(fs.last_innovation, &fs.last_innovation_cov);

            errors.push(nav.v_n - run.truth[step].v_n);
            innovations.push(fs.last_innovation);
            max_asymmetry = max_asymmetry.max(fs.max_asymmetry());
            min_eigenvalue = min_eigenvalue.min(fs.min_eigenvalue());
        }

        if let Some((len, tune_steps)) = schedule {
            if step % tune_steps == 0 && ring[0].len() == len {
                let windows: Vec<Window> = Channel::ALL
                    .iter()
                    .zip(&ring)
                    .map(|(&c, buf)| Window {
                        channel: c,
                        samples: buf.iter().copied().collect(),
                    })
                    .collect();
                adapter.on_tuning_epoch(&windows)?;
            }
        }

        if step % dvl_steps == 0 {
            q_trace.push(adapter.current().trace());
        }
    }

    Ok(RunMetrics {
        srmse: srmse(&errors)?,
        smae: smae(&errors)?,
        errors,
        innovations,
        q_trace,
        alphas: adapter.alphas().to_vec(),
        max_asymmetry,
        min_eigenvalue,
        psd_repairs: fs.psd_repairs,
    })
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub strategy: String,
    pub mean_srmse: f64,
    pub mean_smae: f64,
    pub std_srmse: f64,
    pub std_smae: f64,
    /// `(srmse, smae)` per Monte-Carlo run, in run order.
    pub runs: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format_version: u32,
    pub seed: u64,
    pub n_runs: usize,
    pub trajectory: String,
    pub rows: Vec<ReportRow>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

/// Runs every strategy on `n_runs` independent realizations. Run `r` uses
/// streams seeded from `(seed, r)`, shared by all strategies.
pub fn monte_carlo(
    cfg: &RunConfig,
    strategies: &[StrategySpec],
    ensemble: Option<Arc<TreeEnsemble>>,
    n_runs: usize,
    seed: u64,
    exec: Exec,
) -> Result<Report> {
    if n_runs < 1 {
        return Err(Error::InvalidArgument(
            "at least one Monte-Carlo run is required".into(),
        ));
    }
    let resolved: Vec<QStrategy> = strategies
        .iter()
        .map(|s| QStrategy::resolve(s, &cfg.nominal_q, ensemble.clone()))
        .collect::<Result<_>>()?;

    let per_run = exec.map(n_runs, |r| -> Result<Vec<(f64, f64)>> {
        let run = cfg.synthesize(derive_seed(seed, &[r as u64]))?;
        resolved
            .iter()
            .map(|s| run_filter(cfg, s.clone(), &run).map(|m| (m.srmse, m.smae)))
            .collect()
    });
    let per_run: Vec<Vec<(f64, f64)>> = per_run.into_iter().collect::<Result<_>>()?;

    let rows = strategies
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let runs: Vec<(f64, f64)> = per_run.iter().map(|r| r[i]).collect();
            let (mean_srmse, std_srmse) = mean_std(&runs.iter().map(|r| r.0).collect::<Vec<_>>());
            let (mean_smae, std_smae) = mean_std(&runs.iter().map(|r| r.1).collect::<Vec<_>>());
            ReportRow {
                strategy: s.to_string(),
                mean_srmse,
                mean_smae,
                std_srmse,
                std_smae,
                runs,
            }
        })
        .collect();
    Ok(Report {
        format_version: REPORT_FORMAT_VERSION,
        seed,
        n_runs,
        trajectory: cfg.trajectory.to_string(),
        rows,
    })
}

impl Report {
    pub fn row(&self, strategy: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.strategy == strategy)
    }

    /// Aligned text table.
    pub fn to_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.strategy.len())
            .max()
            .unwrap_or(8)
            .max(8);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "trajectory {}  runs {}  seed {}",
            self.trajectory, self.n_runs, self.seed
        );
        let _ = writeln!(
            s,
            "{:<width$}  {:>12}  {:>12}  {:>10}  {:>10}",
            "approach", "SRMSE [m/s]", "SMAE [m/s]", "sd SRMSE", "sd SMAE"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<width$}  {:>12.6}  {:>12.6}  {:>10.6}  {:>10.6}",
                r.strategy, r.mean_srmse, r.mean_smae, r.std_srmse, r.std_smae
            );
        }
        s
    }

    /// Metadata comment lines and one comma-separated row per strategy.
    pub fn to_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# format_version={}", self.format_version)?;
        writeln!(w, "# seed={}", self.seed)?;
        writeln!(w, "# n_runs={}", self.n_runs)?;
        writeln!(w, "# trajectory={}", self.trajectory)?;
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record([
            "strategy",
            "mean_srmse",
            "mean_smae",
            "std_srmse",
            "std_smae",
        ])?;
        for r in &self.rows {
            csv.write_record([
                r.strategy.clone(),
                r.mean_srmse.to_string(),
                r.mean_smae.to_string(),
                r.std_srmse.to_string(),
                r.std_smae.to_string(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }
}
