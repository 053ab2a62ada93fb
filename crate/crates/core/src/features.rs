//! Handcrafted features of a single-channel IMU window.
//!
//! Three transforms are applied in parallel to the raw window (linear
//! detrend, Gaussian normalization, absolute value) and each output is
//! reduced by eight statistics, giving 24 features in transform-major order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Samples per window at 100 Hz (two seconds).
pub const WINDOW_LEN: usize = 200;
pub const N_STATS: usize = 8;
pub const N_FEATURES: usize = 3 * N_STATS;

pub const STAT_NAMES: [&str; N_STATS] = [
    "min",
    "max",
    "median",
    "std",
    "mean",
    "kurtosis",
    "skewness",
    "second_max",
];
pub const TRANSFORM_NAMES: [&str; 3] = ["detrend", "normalize", "absolute"];

/// IMU channel tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Ax,
    Ay,
    Az,
    Gx,
    Gy,
    Gz,
}

impl Channel {
    pub const ALL: [Channel; 6] = [
        Channel::Ax,
        Channel::Ay,
        Channel::Az,
        Channel::Gx,
        Channel::Gy,
        Channel::Gz,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        ["ax", "ay", "az", "gx", "gy", "gz"][self.index()]
    }

    pub fn is_accel(self) -> bool {
        self.index() < 3
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Channel::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown channel '{s}'")))
    }
}

/// A run of consecutive samples from one IMU channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub samples: Vec<f64>,
    pub channel: Channel,
}

impl Window {
    pub fn new(channel: Channel, samples: Vec<f64>) -> Result<Self> {
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("window sample"));
        }
        Ok(Self { samples, channel })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// The 24 features of one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; N_FEATURES]);

impl FeatureVector {
    pub fn values(&self) -> &[f64; N_FEATURES] {
        &self.0
    }

    /// Column names in storage order, e.g. `detrend_min`.
    pub fn names() -> Vec<String> {
        TRANSFORM_NAMES
            .iter()
            .flat_map(|t| STAT_NAMES.iter().map(move |s| format!("{t}_{s}")))
            .collect()
    }

    pub fn block(&self, transform: usize) -> &[f64] {
        &self.0[transform * N_STATS..(transform + 1) * N_STATS]
    }
}

fn all_equal(x: &[f64]) -> bool {
    x.windows(2).all(|w| w[0] == w[1])
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Removes the least-squares straight line fitted against sample index.
pub fn detrend(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "detrend needs at least 2 samples, got {n}"
        )));
    }
    if all_equal(x) {
        return Ok(vec![0.0; n]);
    }
    let t_mean = (n as f64 - 1.0) / 2.0;
    let y_mean = mean(x);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &y) in x.iter().enumerate() {
        let dt = i as f64 - t_mean;
        sxy += dt * (y - y_mean);
        sxx += dt * dt;
    }
    let slope = sxy / sxx;
    Ok(x.iter()
        .enumerate()
        .map(|(i, &y)| (y - y_mean) - slope * (i as f64 - t_mean))
        .collect())
}

/// `(x − mean) / std` with the N−1 standard deviation. A constant series maps
/// to all zeros.
pub fn gauss_normalize(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "normalize needs at least 2 samples, got {n}"
        )));
    }
    if all_equal(x) {
        return Ok(vec![0.0; n]);
    }
    let m = mean(x);
    let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    if sd == 0.0 {
        return Ok(vec![0.0; n]);
    }
    Ok(x.iter().map(|v| (v - m) / sd).collect())
}

pub fn abs_series(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.abs()).collect()
}

/// `(min, max, median, std, mean, kurtosis, skewness, second_max)`.
///
/// `std` uses the N−1 divisor; kurtosis (non-excess) and skewness use
/// population central moments and are 0 when the series has no spread.
/// `second_max` is the second-largest order statistic, duplicates included.
pub fn low_level_stats(x: &[f64]) -> Result<[f64; N_STATS]> {
    let n = x.len();
    if n < 4 {
        return Err(Error::InvalidArgument(format!(
            "statistics need at least 4 samples, got {n}"
        )));
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let min = sorted[0];
    let max = sorted[n - 1];
    let second_max = sorted[n - 2];
    let median = if n.is_multiple_of(2) {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    } else {
        sorted[n / 2]
    };

    if all_equal(x) {
        return Ok([min, max, median, 0.0, min, 0.0, 0.0, second_max]);
    }

    let m = mean(x);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in x {
        let d = v - m;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let std = (m2 / (n - 1) as f64).sqrt();
    let nf = n as f64;
    let (m2, m3, m4) = (m2 / nf, m3 / nf, m4 / nf);
    let (kurtosis, skewness) = if m2 > 0.0 {
        (m4 / (m2 * m2), m3 / m2.powf(1.5))
    } else {
        (0.0, 0.0)
    };
    Ok([min, max, median, std, m, kurtosis, skewness, second_max])
}

/// 24-feature vector of a window of exactly `expected_len` samples.
pub fn extract_features_len(w: &Window, expected_len: usize) -> Result<FeatureVector> {
    if w.len() != expected_len {
        return Err(Error::WindowLength {
            expected: expected_len,
            got: w.len(),
        });
    }
    let mut out = [0.0; N_FEATURES];
    let blocks = [
        detrend(&w.samples)?,
        gauss_normalize(&w.samples)?,
        abs_series(&w.samples),
    ];
    for (b, series) in blocks.iter().enumerate() {
        out[b * N_STATS..(b + 1) * N_STATS].copy_from_slice(&low_level_stats(series)?);
    }
    Ok(FeatureVector(out))
}

/// [`extract_features_len`] with the default 200-sample window.
pub fn extract_features(w: &Window) -> Result<FeatureVector> {
    extract_features_len(w, WINDOW_LEN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Least squares through explicit 2×2 normal equations.
    fn detrend_oracle(x: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        let (mut st, mut stt, mut sy, mut sty) = (0.0, 0.0, 0.0, 0.0);
        for (i, y) in x.iter().enumerate() {
            let t = i as f64;
            st += t;
            stt += t * t;
            sy += y;
            sty += t * y;
        }
        let det = n * stt - st * st;
        let b = (n * sty - st * sy) / det;
        let a = (sy - b * st) / n;
        x.iter()
            .enumerate()
            .map(|(i, y)| y - a - b * i as f64)
            .collect()
    }

    #[test]
    fn detrend_examples() {
        assert_eq!(detrend(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![0.0; 4]);
        assert_eq!(detrend(&[2.5; 7]).unwrap(), vec![0.0; 7]);
        let got = detrend(&[0.0, 1.0, 0.0, 1.0]).unwrap();
        let want = detrend_oracle(&[0.0, 1.0, 0.0, 1.0]);
        for (g, w) in got.iter().zip(&want) {
            assert_abs_diff_eq!(g, w, epsilon = 1e-12);
        }
        for (g, w) in got.iter().zip([-0.2, 0.6, -0.6, 0.2]) {
            assert_abs_diff_eq!(*g, w, epsilon = 1e-9);
        }
        assert!(detrend(&[1.0]).is_err());
    }

    #[test]
    fn normalize_examples() {
        let z = gauss_normalize(&[-1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(z[0], -std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_abs_diff_eq!(z[1], std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_eq!(gauss_normalize(&[3.0; 5]).unwrap(), vec![0.0; 5]);
        assert!(gauss_normalize(&[3.0]).is_err());
    }

    #[test]
    fn abs_examples() {
        assert_eq!(abs_series(&[-1.0, 2.0, -3.0]), vec![1.0, 2.0, 3.0]);
        assert_eq!(abs_series(&[0.0, 2.0]), vec![0.0, 2.0]);
        assert_eq!(abs_series(&[-1.5, 2.0]), abs_series(&[1.5, -2.0]));
    }

    #[test]
    fn stats_examples() {
        let s = low_level_stats(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let sd = (5.0f64 / 3.0).sqrt();
        let want = [1.0, 4.0, 2.5, sd, 2.5, 1.64, 0.0, 3.0];
        for (g, w) in s.iter().zip(want) {
            assert_abs_diff_eq!(*g, w, epsilon = 1e-12);
        }
        assert_eq!(
            low_level_stats(&[-2.0; 6]).unwrap(),
            [-2.0, -2.0, -2.0, 0.0, -2.0, 0.0, 0.0, -2.0]
        );
        assert_eq!(low_level_stats(&[5.0, 5.0, 1.0, 0.0]).unwrap()[7], 5.0);
        assert!(low_level_stats(&[1.0, 2.0, 3.0]).is_err());

        let a = [0.0, 1.0, 1.0, 5.0, 2.0];
        let mirrored: Vec<f64> = a.iter().map(|v| -v).collect();
        let (sa, sm) = (
            low_level_stats(&a).unwrap(),
            low_level_stats(&mirrored).unwrap(),
        );
        assert!(sa[6] > 0.0);
        assert_abs_diff_eq!(sa[6], -sm[6], epsilon = 1e-12);
    }

    #[test]
    fn feature_layout() {
        let w = Window::new(
            Channel::Gx,
            (0..WINDOW_LEN).map(|i| (i as f64 * 0.37).sin()).collect(),
        )
        .unwrap();
        let f = extract_features(&w).unwrap();
        assert_eq!(f.0.len(), 24);
        assert_eq!(FeatureVector::names()[0], "detrend_min");
        assert_eq!(FeatureVector::names()[23], "absolute_second_max");
        assert_eq!(f, extract_features(&w).unwrap());

        let c = Window::new(Channel::Az, vec![-9.8; WINDOW_LEN]).unwrap();
        let f = extract_features(&c).unwrap();
        assert_eq!(f.block(0), &[0.0; 8]);
        assert_eq!(f.block(1), &[0.0; 8]);
        assert_eq!(f.block(2), &[9.8, 9.8, 9.8, 0.0, 9.8, 0.0, 0.0, 9.8]);

        let short = Window::new(Channel::Ax, vec![0.0; 10]).unwrap();
        assert!(matches!(
            extract_features(&short),
            Err(Error::WindowLength {
                expected: 200,
                got: 10
            })
        ));
        assert!(Window::new(Channel::Ax, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn channel_tags() {
        for c in Channel::ALL {
            assert_eq!(c.as_str().parse::<Channel>().unwrap(), c);
        }
        assert!(Channel::Az.is_accel() && !Channel::Gx.is_accel());
    }

    fn window_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-50.0f64..50.0, WINDOW_LEN)
    }

    proptest! {
        #[test]
        fn detrend_block_is_centered(x in window_strategy()) {
            let f = extract_features(&Window::new(Channel::Ax, x).unwrap()).unwrap();
            prop_assert!(f.block(0)[4].abs() < 1e-9);
        }

        #[test]
        fn normalize_block_is_standard(x in window_strategy()) {
            let f = extract_features(&Window::new(Channel::Ax, x).unwrap()).unwrap();
            prop_assert!((f.block(1)[3] - 1.0).abs() < 1e-9);
            prop_assert!(f.block(1)[4].abs() < 1e-9);
        }

        #[test]
        fn order_statistics_are_ordered(x in window_strategy()) {
            let f = extract_features(&Window::new(Channel::Ax, x).unwrap()).unwrap();
            for b in 0..3 {
                let s = f.block(b);
                prop_assert!(s[0] <= s[7] && s[7] <= s[1]);
            }
        }

        #[test]
        fn detrend_is_orthogonal_to_index(x in window_strategy()) {
            let r = detrend(&x).unwrap();
            let scale = x.iter().map(|v| v.abs()).fold(1.0, f64::max);
            let mean_r = mean(&r);
            let corr: f64 = r.iter().enumerate().map(|(i, v)| v * (i as f64 - 99.5)).sum();
            prop_assert!(mean_r.abs() < 1e-9 * scale);
            prop_assert!(corr.abs() < 1e-9 * scale * 1e4);
        }

        #[test]
        fn scaling_a_centered_window(x in window_strategy(), a in 0.1f64..10.0) {
            let m = mean(&x);
            let centered: Vec<f64> = x.iter().map(|v| v - m).collect();
            let scaled: Vec<f64> = centered.iter().map(|v| v * a).collect();
            let f0 = extract_features(&Window::new(Channel::Gz, centered).unwrap()).unwrap();
            let f1 = extract_features(&Window::new(Channel::Gz, scaled).unwrap()).unwrap();
            for i in 0..8 {
                prop_assert!((f0.block(1)[i] - f1.block(1)[i]).abs() < 1e-9);
            }
            for i in [0, 1, 2, 3, 4, 7] {
                prop_assert!((f0.block(0)[i] * a - f1.block(0)[i]).abs() < 1e-9 * a.max(1.0) * 50.0);
            }
        }

        #[test]
        fn normalize_is_affine_invariant(x in window_strategy(), a in 0.1f64..10.0, b in -20.0f64..20.0) {
            let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let (zx, zy) = (gauss_normalize(&x).unwrap(), gauss_normalize(&y).unwrap());
            for (p, q) in zx.iter().zip(&zy) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }
    }
}
