//! Brute-force reference implementations used by the integration and
//! acceptance tests. Written directly from the definitions, without sharing
//! code with the library.

#![allow(dead_code)]

use insdvl_core::trees::RegressionTree;

/// Straight-line fit by solving the 2×2 normal equations on raw sums.
pub fn detrend_ref(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let (mut st, mut stt, mut sy, mut sty) = (0.0, 0.0, 0.0, 0.0);
    for (i, &y) in x.iter().enumerate() {
        let t = i as f64;
        st += t;
        stt += t * t;
        sy += y;
        sty += t * y;
    }
    let det = n * stt - st * st;
    let slope = (n * sty - st * sy) / det;
    let icpt = (sy - slope * st) / n;
    x.iter()
        .enumerate()
        .map(|(i, &y)| y - (icpt + slope * i as f64))
        .collect()
}

pub fn normalize_ref(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - m) / var.sqrt()).collect()
}

pub fn stats_ref(x: &[f64]) -> [f64; 8] {
    let n = x.len();
    let nf = n as f64;
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    };
    let mean = x.iter().sum::<f64>() / nf;
    let moment = |k: i32| x.iter().map(|v| (v - mean).powi(k)).sum::<f64>() / nf;
    let (m2, m3, m4) = (moment(2), moment(3), moment(4));
    let std = (m2 * nf / (nf - 1.0)).sqrt();
    let (kurt, skew) = if m2 == 0.0 {
        (0.0, 0.0)
    } else {
        (m4 / m2.powi(2), m3 / m2.powf(1.5))
    };
    [s[0], s[n - 1], median, std, mean, kurt, skew, s[n - 2]]
}

pub fn features_ref(x: &[f64]) -> [f64; 24] {
    let abs: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    let mut out = [0.0; 24];
    for (b, series) in [detrend_ref(x), normalize_ref(x), abs].iter().enumerate() {
        out[b * 8..b * 8 + 8].copy_from_slice(&stats_ref(series));
    }
    out
}

/// Compares a library feature vector with the reference. Location and scale
/// statistics are compared relative to the magnitude of their series, shape
/// statistics relative to 1.
pub fn features_match(x: &[f64], got: &[f64; 24], rel: f64) -> Result<(), String> {
    let want = features_ref(x);
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..24 {
        let stat = i % 8;
        let floor = match (i / 8, stat) {
            (_, 5) | (_, 6) => 1.0,
            (1, _) => 1.0,
            _ => scale,
        };
        let tol = rel * got[i].abs().max(want[i].abs()).max(floor);
        if (got[i] - want[i]).abs() > tol {
            return Err(format!("feature {i}: got {} want {}", got[i], want[i]));
        }
    }
    Ok(())
}

/// Reference tree: recursive, scores every legal split with a direct
/// two-pass sum of squares.
#[derive(Debug, Clone)]
pub enum RefNode {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<RefNode>,
        right: Box<RefNode>,
    },
}

fn sse(ys: &[f64]) -> f64 {
    let m = ys.iter().sum::<f64>() / ys.len() as f64;
    ys.iter().map(|y| (y - m) * (y - m)).sum()
}

pub fn fit_ref(rows: &[Vec<f64>], ys: &[f64], min_leaf: usize) -> RefNode {
    let n = ys.len();
    let mean = ys.iter().sum::<f64>() / n as f64;
    if n < 2 * min_leaf || ys.iter().all(|&y| y == ys[0]) {
        return RefNode::Leaf(mean);
    }
    let node_sse = sse(ys);
    let tol = 1e-12 * node_sse;
    let d = rows[0].len();
    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..d {
        let mut vals: Vec<f64> = rows.iter().map(|r| r[f]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals.dedup();
        for w in vals.windows(2) {
            let mut t = (w[0] + w[1]) / 2.0;
            if t >= w[1] {
                t = w[0];
            }
            let left: Vec<f64> = (0..n).filter(|&i| rows[i][f] <= t).map(|i| ys[i]).collect();
            let right: Vec<f64> = (0..n).filter(|&i| rows[i][f] > t).map(|i| ys[i]).collect();
            if left.len() < min_leaf || right.len() < min_leaf {
                continue;
            }
            let score = sse(&left) + sse(&right);
            if best.is_none_or(|(b, _, _)| score < b - tol) {
                best = Some((score, f, t));
            }
        }
    }
    let Some((_, feature, threshold)) = best else {
        return RefNode::Leaf(mean);
    };
    let (mut lr, mut ly, mut rr, mut ry) = (vec![], vec![], vec![], vec![]);
    for i in 0..n {
        if rows[i][feature] <= threshold {
            lr.push(rows[i].clone());
            ly.push(ys[i]);
        } else {
            rr.push(rows[i].clone());
            ry.push(ys[i]);
        }
    }
    RefNode::Split {
        feature,
        threshold,
        left: Box::new(fit_ref(&lr, &ly, min_leaf)),
        right: Box::new(fit_ref(&rr, &ry, min_leaf)),
    }
}

/// Structural equality: identical split features and thresholds, leaf
/// values equal up to summation-order rounding.
pub fn same_tree(t: &RegressionTree, node: usize, r: &RefNode) -> Result<(), String> {
    match r {
        RefNode::Leaf(v) => {
            if !t.is_leaf(node) {
                return Err(format!(
                    "node {node}: library split where reference has a leaf"
                ));
            }
            let got = t.value[node];
            if (got - v).abs() > 1e-13 * v.abs().max(1e-300) {
                return Err(format!("node {node}: leaf {got} vs {v}"));
            }
            Ok(())
        }
        RefNode::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            if t.is_leaf(node) {
                return Err(format!("node {node}: library leaf where reference splits"));
            }
            if t.feature[node] as usize != *feature || t.threshold[node] != *threshold {
                return Err(format!(
                    "node {node}: split ({}, {}) vs ({feature}, {threshold})",
                    t.feature[node], t.threshold[node]
                ));
            }
            same_tree(t, t.left[node] as usize, left)?;
            same_tree(t, t.right[node] as usize, right)
        }
    }
}
