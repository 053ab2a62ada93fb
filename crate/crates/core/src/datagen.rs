//! Labelled dataset and evaluation-run synthesis.
//!
//! Each baseline trajectory is turned into ideal IMU readings, corrupted once
//! per noise-grid level with zero-mean Gaussian noise of that variance on all
//! six channels, and cut into non-overlapping windows. Every window becomes
//! one row labelled with the injected variance. Rows are split into train and
//! test sets per (trajectory, noise level) cell so that every cell appears in
//! both.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::features::{extract_features_len, Channel, FeatureVector, Window, N_FEATURES};
use crate::nav::{ImuSample, NavState, Strapdown};
use crate::par::{derive_seed, Exec};
use crate::trajectory::{AnalyticTrajectory, TrajectoryId};
use crate::trees::TrainingExample;

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Variance levels injected into the ideal readings.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseGrid {
    pub values: Vec<f64>,
}

impl NoiseGrid {
    /// `n` logarithmically spaced values from `lo` to `hi`, endpoints exact.
    pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo > 0.0 && hi > lo && n >= 2) {
            return Err(Error::InvalidArgument(format!(
                "noise grid needs 0 < lo < hi and n >= 2, got ({lo}, {hi}, {n})"
            )));
        }
        let (a, b) = (lo.ln(), hi.ln());
        let mut values: Vec<f64> = (0..n)
            .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
            .collect();
        values[0] = lo;
        values[n - 1] = hi;
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl Default for NoiseGrid {
    fn default() -> Self {
        Self::log_spaced(0.001, 0.05, 15).expect("static grid")
    }
}

/// Recipe for [`build_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecipe {
    pub rate_hz: f64,
    pub duration_s: f64,
    pub window_len: usize,
    pub train_fraction: f64,
    pub grid: NoiseGrid,
    pub seed: u64,
}

impl Default for DatasetRecipe {
    fn default() -> Self {
        Self {
            rate_hz: 100.0,
            duration_s: 400.0,
            window_len: 200,
            train_fraction: 0.8,
            grid: NoiseGrid::default(),
            seed: 0,
        }
    }
}

/// One ideal baseline: trajectory id and `(reading, true state)` pairs.
pub type Baseline = (TrajectoryId, Vec<(ImuSample, NavState)>);

/// Ideal readings of the four baseline trajectories.
pub fn generate_baselines(rate_hz: f64, duration_s: f64) -> Result<Vec<Baseline>> {
    TrajectoryId::BASELINES
        .iter()
        .map(|&id| {
            let traj = AnalyticTrajectory::builtin(id, duration_s);
            let sd = Strapdown::at_latitude(traj.lat0);
            Ok((id, sd.inverse_mechanize(&traj, rate_hz)?))
        })
        .collect()
}

/// Adds zero-mean Gaussian noise with per-channel variances
/// (`ax ay az gx gy gz`). Draws are sample-major, channel-minor.
pub fn corrupt_channels(seq: &[ImuSample], variances: &[f64; 6], seed: u64) -> Vec<ImuSample> {
    let sd: Vec<f64> = variances.iter().map(|v| v.max(0.0).sqrt()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    seq.iter()
        .map(|s| {
            let mut c = s.channels();
            for (v, sigma) in c.iter_mut().zip(&sd) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += sigma * z;
            }
            ImuSample::from_channels(s.t, c)
        })
        .collect()
}

/// Same variance `q` on all six channels.
pub fn corrupt(seq: &[ImuSample], q: f64, seed: u64) -> Vec<ImuSample> {
    corrupt_channels(seq, &[q; 6], seed)
}

/// A dataset row.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub trajectory: TrajectoryId,
    pub channel: Channel,
    pub label: f64,
    /// Index of the first sample of the window in its series.
    pub start: usize,
    pub features: FeatureVector,
}

impl DatasetRow {
    pub fn example(&self) -> TrainingExample {
        TrainingExample {
            features: self.features,
            label: self.label,
        }
    }
}

/// Rows of one split plus the recipe metadata they were generated with.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub metadata: BTreeMap<String, String>,
    pub rows: Vec<DatasetRow>,
}

/// Cuts a series into non-overlapping windows of `n` samples per channel.
pub fn windows_of(seq: &[ImuSample], n: usize) -> Vec<(usize, Vec<Window>)> {
    (0..seq.len() / n)
        .map(|w| {
            let chunk = &seq[w * n..(w + 1) * n];
            let wins = Channel::ALL
                .iter()
                .map(|&c| Window {
                    channel: c,
                    samples: chunk.iter().map(|s| s.channels()[c.index()]).collect(),
                })
                .collect();
            (w * n, wins)
        })
        .collect()
}

/// Builds the train and test splits.
pub fn build_dataset(
    baselines: &[Baseline],
    recipe: &DatasetRecipe,
    exec: Exec,
) -> Result<(DatasetFile, DatasetFile)> {
    if recipe.window_len < 4 {
        return Err(Error::InvalidArgument(
            "window length must be at least 4".into(),
        ));
    }
    if !(recipe.train_fraction > 0.0 && recipe.train_fraction < 1.0) {
        return Err(Error::InvalidArgument(
            "train fraction must be in (0, 1)".into(),
        ));
    }
    let n_levels = recipe.grid.len();
    let cells = exec.map(
        baselines.len() * n_levels,
        |cell| -> Result<(Vec<DatasetRow>, Vec<DatasetRow>)> {
            let (ti, qi) = (cell / n_levels, cell % n_levels);
            let (id, ideal) = &baselines[ti];
            let q = recipe.grid.values[qi];
            let imu: Vec<ImuSample> = ideal.iter().map(|(s, _)| *s).collect();
            let noisy = corrupt(
                &imu,
                q,
                derive_seed(recipe.seed, &[0, ti as u64, qi as u64]),
            );

            let mut rows = Vec::new();
            for (start, wins) in windows_of(&noisy, recipe.window_len) {
                for w in wins {
                    rows.push(DatasetRow {
                        trajectory: *id,
                        channel: w.channel,
                        label: q,
                        start,
                        features: extract_features_len(&w, recipe.window_len)?,
                    });
                }
            }
            // canonical order: channel-major, then window start
            rows.sort_by_key(|r| (r.channel, r.start));

            let n_train = (rows.len() as f64 * recipe.train_fraction).round() as usize;
            let mut order: Vec<usize> = (0..rows.len()).collect();
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(recipe.seed, &[1, ti as u64, qi as u64]));
            order.shuffle(&mut rng);
            let mut in_train = vec![false; rows.len()];
            for &i in &order[..n_train] {
                in_train[i] = true;
            }
            let (train, test): (Vec<_>, Vec<_>) =
                rows.into_iter().zip(in_train).partition(|(_, t)| *t);
            Ok((
                train.into_iter().map(|(r, _)| r).collect(),
                test.into_iter().map(|(r, _)| r).collect(),
            ))
        },
    );

    let mut train = Vec::new();
    let mut test = Vec::new();
    for cell in cells {
        let (a, b) = cell?;
        train.extend(a);
        test.extend(b);
    }
    let meta = |split: &str| {
        let mut m = BTreeMap::new();
        m.insert("format_version".into(), DATASET_FORMAT_VERSION.to_string());
        m.insert("split".into(), split.into());
        m.insert("seed".into(), recipe.seed.to_string());
        m.insert("window_len".into(), recipe.window_len.to_string());
        m.insert("rate_hz".into(), recipe.rate_hz.to_string());
        m.insert("duration_s".into(), recipe.duration_s.to_string());
        m.insert("train_fraction".into(), recipe.train_fraction.to_string());
        m.insert(
            "grid".into(),
            recipe
                .grid
                .values
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(";"),
        );
        m
    };
    Ok((
        DatasetFile {
            metadata: meta("train"),
            rows: train,
        },
        DatasetFile {
            metadata: meta("test"),
            rows: test,
        },
    ))
}

fn header() -> Vec<String> {
    let mut h: Vec<String> = ["trajectory", "channel", "label", "start"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend(FeatureVector::names());
    h
}

impl DatasetFile {
    /// `# key=value` metadata lines followed by a comma-separated table with
    /// a header row.
    pub fn to_writer<W: Write>(&self, mut w: W) -> Result<()> {
        for (k, v) in &self.metadata {
            writeln!(w, "# {k}={v}")?;
        }
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(header())?;
        let mut rec: Vec<String> = Vec::with_capacity(4 + N_FEATURES);
        for r in &self.rows {
            rec.clear();
            rec.push(r.trajectory.to_string());
            rec.push(r.channel.to_string());
            rec.push(r.label.to_string());
            rec.push(r.start.to_string());
            rec.extend(r.features.0.iter().map(|v| v.to_string()));
            csv.write_record(&rec)?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn from_reader<R: BufRead>(mut r: R) -> Result<Self> {
        let mut metadata = BTreeMap::new();
        let mut body = String::new();
        let mut line = String::new();
        loop {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                break;
            }
            match line.strip_prefix('#') {
                Some(meta) => {
                    let (k, v) = meta.trim().split_once('=').ok_or_else(|| {
                        Error::Format(format!("bad metadata line '{}'", line.trim()))
                    })?;
                    metadata.insert(k.to_string(), v.to_string());
                }
                None => {
                    body.push_str(&line);
                    r.read_to_string(&mut body)?;
                    break;
                }
            }
        }
        match metadata.get("format_version") {
            Some(v) if v == &DATASET_FORMAT_VERSION.to_string() => {}
            other => {
                return Err(Error::Format(format!(
                    "unsupported dataset format_version {other:?}"
                )))
            }
        }

        let mut csv = csv::Reader::from_reader(body.as_bytes());
        if csv.headers()?.iter().collect::<Vec<_>>() != header() {
            return Err(Error::Format("unexpected dataset columns".into()));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Format(format!("bad number '{s}'")))
        };
        let mut rows = Vec::new();
        for rec in csv.records() {
            let rec = rec?;
            if rec.len() != 4 + N_FEATURES {
                return Err(Error::Format(format!("row has {} columns", rec.len())));
            }
            let mut f = [0.0; N_FEATURES];
            for (i, v) in f.iter_mut().enumerate() {
                *v = num(&rec[4 + i])?;
            }
            rows.push(DatasetRow {
                trajectory: rec[0].parse()?,
                channel: rec[1].parse()?,
                label: num(&rec[2])?,
                start: rec[3]
                    .parse()
                    .map_err(|_| Error::Format(format!("bad start '{}'", &rec[3])))?,
                features: FeatureVector(f),
            });
        }
        Ok(Self { metadata, rows })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.to_writer(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn examples(&self) -> Vec<TrainingExample> {
        self.rows.iter().map(DatasetRow::example).collect()
    }

    pub fn window_len(&self) -> Option<usize> {
        self.metadata.get("window_len").and_then(|v| v.parse().ok())
    }
}

/// Sensor noise and timing of a synthetic evaluation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSensors {
    /// Per-channel IMU noise variances (`ax ay az gx gy gz`).
    pub imu_noise: [f64; 6],
    /// Covariance of the noise added to the DVL fixes.
    pub dvl_noise: Matrix3<f64>,
    pub imu_rate_hz: f64,
    /// Seconds between DVL fixes.
    pub dvl_period: f64,
    pub duration: f64,
}

impl Default for EvalSensors {
    /// Accelerometer 0.01² (m/s²)², gyro 0.001² (rad/s)², DVL 0.01 (m/s)²
    /// at 1 Hz, 330 s at 100 Hz.
    fn default() -> Self {
        Self {
            imu_noise: [1e-4, 1e-4, 1e-4, 1e-6, 1e-6, 1e-6],
            dvl_noise: Matrix3::from_diagonal_element(0.01),
            imu_rate_hz: 100.0,
            dvl_period: 1.0,
            duration: 330.0,
        }
    }
}

impl EvalSensors {
    pub fn noiseless() -> Self {
        Self {
            imu_noise: [0.0; 6],
            dvl_noise: Matrix3::zeros(),
            ..Self::default()
        }
    }

    pub fn n_imu(&self) -> usize {
        (self.duration * self.imu_rate_hz).round() as usize
    }

    /// IMU samples between DVL fixes.
    pub fn dvl_steps(&self) -> Result<usize> {
        steps_of(self.dvl_period, self.imu_rate_hz, "DVL period")
    }
}

/// Number of IMU intervals in `period`, which must be a positive integer
/// multiple of the IMU period.
pub fn steps_of(period: f64, rate_hz: f64, what: &str) -> Result<usize> {
    let steps = period * rate_hz;
    let r = steps.round();
    if r < 1.0 || (steps - r).abs() > 1e-9 * steps.max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "{what} {period} s is not a positive multiple of the IMU period"
        )));
    }
    Ok(r as usize)
}

/// Streams for one filter run.
#[derive(Debug, Clone)]
pub struct EvalRun {
    pub trajectory: TrajectoryId,
    /// Noisy readings; `imu[k]` covers `[t_k, t_{k+1})`.
    pub imu: Vec<ImuSample>,
    /// True state at `t_0 ..= t_n`.
    pub truth: Vec<NavState>,
    /// `(k, v)`: DVL velocity valid at `t_k`, available after `k` IMU steps.
    pub dvl: Vec<(usize, Vector3<f64>)>,
}

pub fn synthesize_eval_run(
    traj: &AnalyticTrajectory,
    sensors: &EvalSensors,
    seed: u64,
) -> Result<EvalRun> {
    if !(sensors.duration > 0.0) {
        return Err(Error::InvalidArgument("duration must be positive".into()));
    }
    let dvl_steps = sensors.dvl_steps()?;
    let mut traj = traj.clone();
    traj.duration = sensors.duration;
    let sd = Strapdown::at_latitude(traj.lat0);
    let ideal = sd.inverse_mechanize(&traj, sensors.imu_rate_hz)?;
    let n = ideal.len();
    let dt = 1.0 / sensors.imu_rate_hz;

    let mut truth: Vec<NavState> = ideal.iter().map(|(_, s)| *s).collect();
    let (last_imu, last_state) = ideal[n - 1];
    truth.push(sd.mechanize(&last_state, &last_imu, dt)?);

    let clean: Vec<ImuSample> = ideal.iter().map(|(s, _)| *s).collect();
    let imu = corrupt_channels(&clean, &sensors.imu_noise, derive_seed(seed, &[2]));

    let noisy_dvl = sensors.dvl_noise.iter().any(|v| *v != 0.0);
    let chol = if noisy_dvl {
        Some(
            sensors
                .dvl_noise
                .cholesky()
                .ok_or_else(|| {
                    Error::InvalidArgument("DVL noise covariance is not positive definite".into())
                })?
                .l(),
        )
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[3]));
    let dvl = (1..=n / dvl_steps)
        .map(|m| {
            let k = m * dvl_steps;
            let mut v = truth[k].v_n;
            if let Some(l) = &chol {
                let z = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
                v += l * z;
            }
            (k, v)
        })
        .collect();

    Ok(EvalRun {
        trajectory: traj.id,
        imu,
        truth,
        dvl,
    })
}
