//! Bagged CART regression trees.
//!
//! Trees are grown greedily with exact split search: for every feature the
//! candidate thresholds are the midpoints between consecutive distinct
//! values, and the split minimizing the summed squared error of the two
//! children wins. Equal scores keep the earlier candidate (lowest feature
//! index, then lowest threshold). Growth stops when a node is pure or no
//! split leaves at least `min_leaf` samples on each side.
//!
//! The ensemble trains every tree on its own bootstrap sample drawn from a
//! ChaCha stream selected by the tree index, so a fixed seed reproduces the
//! model bit for bit regardless of how trees are scheduled.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureVector, N_FEATURES, WINDOW_LEN};
use crate::par::Exec;

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_N_TREES: usize = 30;
pub const DEFAULT_MIN_LEAF: usize = 8;
pub const DEFAULT_LABEL_RANGE: (f64, f64) = (0.001, 0.05);

/// Two split scores closer than this (relative to the node's own squared
/// error) are treated as equal.
pub const TIE_REL_TOL: f64 = 1e-12;

const LEAF: i32 = -1;

/// One labelled window: features and the injected noise variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub features: FeatureVector,
    pub label: f64,
}

/// A fitted tree stored as flat node arrays. Internal nodes send
/// `x[feature] <= threshold` to `left`; leaves carry `feature == -1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub feature: Vec<i32>,
    pub threshold: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub value: Vec<f64>,
    pub n_samples: Vec<u32>,
}

impl RegressionTree {
    fn empty() -> Self {
        Self {
            feature: Vec::new(),
            threshold: Vec::new(),
            left: Vec::new(),
            right: Vec::new(),
            value: Vec::new(),
            n_samples: Vec::new(),
        }
    }

    fn push_leaf(&mut self, value: f64, n: usize) -> usize {
        self.feature.push(LEAF);
        self.threshold.push(0.0);
        self.left.push(0);
        self.right.push(0);
        self.value.push(value);
        self.n_samples.push(n as u32);
        self.feature.len() - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.feature.len()
    }

    pub fn n_leaves(&self) -> usize {
        self.feature.iter().filter(|&&f| f == LEAF).count()
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.feature[node] == LEAF
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = 0;
        while !self.is_leaf(node) {
            node = if x[self.feature[node] as usize] <= self.threshold[node] {
                self.left[node] as usize
            } else {
                self.right[node] as usize
            };
        }
        self.value[node]
    }

    pub fn leaf_values(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_nodes())
            .filter(|&i| self.is_leaf(i))
            .map(|i| self.value[i])
    }

    pub fn depth(&self) -> usize {
        let mut best = 0;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((n, d)) = stack.pop() {
            best = best.max(d);
            if !self.is_leaf(n) {
                stack.push((self.left[n] as usize, d + 1));
                stack.push((self.right[n] as usize, d + 1));
            }
        }
        best
    }

    fn check(&self, n_features: usize) -> Result<()> {
        let n = self.n_nodes();
        let same_len = [
            self.threshold.len(),
            self.left.len(),
            self.right.len(),
            self.value.len(),
            self.n_samples.len(),
        ]
        .iter()
        .all(|&l| l == n);
        if n == 0 || !same_len {
            return Err(Error::Format("tree node arrays are empty or ragged".into()));
        }
        for i in 0..n {
            let f = self.feature[i];
            if f == LEAF {
                continue;
            }
            let (l, r) = (self.left[i] as usize, self.right[i] as usize);
            if f < 0 || f as usize >= n_features || l >= n || r >= n || l <= i || r <= i {
                return Err(Error::Format(format!("tree node {i} is malformed")));
            }
        }
        Ok(())
    }
}

/// Column-major view of a (possibly bootstrapped) sample.
struct Sample {
    cols: Vec<Vec<f64>>,
    y: Vec<f64>,
}

impl Sample {
    fn from_rows(rows: &[&[f64]], y: Vec<f64>, n_features: usize) -> Self {
        let cols = (0..n_features)
            .map(|f| rows.iter().map(|r| r[f]).collect())
            .collect();
        Self { cols, y }
    }
}

#[derive(Clone, Copy)]
struct Split {
    feature: usize,
    threshold: f64,
    score: f64,
}

/// Midpoint threshold between two consecutive distinct values `a < b`,
/// guaranteed to satisfy `a <= t < b`.
fn midpoint(a: f64, b: f64) -> f64 {
    let m = 0.5 * (a + b);
    if m < b {
        m
    } else {
        a
    }
}

struct Grower<'a> {
    s: &'a Sample,
    min_leaf: usize,
    /// One ascending ordering of sample positions per feature, plus a final
    /// ordering by position used for leaf means.
    orders: Vec<Vec<u32>>,
    scratch: Vec<u32>,
    go_left: Vec<bool>,
    tree: RegressionTree,
}

impl<'a> Grower<'a> {
    fn new(s: &'a Sample, min_leaf: usize) -> Self {
        let n = s.y.len();
        let mut orders: Vec<Vec<u32>> = s
            .cols
            .iter()
            .map(|col| {
                let mut o: Vec<u32> = (0..n as u32).collect();
                o.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                o
            })
            .collect();
        orders.push((0..n as u32).collect());
        Self {
            s,
            min_leaf,
            orders,
            scratch: vec![0; n],
            go_left: vec![false; n],
            tree: RegressionTree::empty(),
        }
    }

    fn positions(&self, lo: usize, hi: usize) -> &[u32] {
        &self.orders[self.orders.len() - 1][lo..hi]
    }

    fn grow(mut self) -> RegressionTree {
        let n = self.s.y.len();
        // (node id, lo, hi); node ids are allocated before their range is processed
        let root_val = self.leaf_mean(0, n);
        self.tree.push_leaf(root_val, n);
        let mut stack = vec![(0usize, 0usize, n)];
        while let Some((node, lo, hi)) = stack.pop() {
            let Some(split) = self.best_split(lo, hi) else {
                continue;
            };
            let mid = self.partition(lo, hi, &split);
            let l_val = self.leaf_mean(lo, mid);
            let r_val = self.leaf_mean(mid, hi);
            let l = self.tree.push_leaf(l_val, mid - lo);
            let r = self.tree.push_leaf(r_val, hi - mid);
            self.tree.feature[node] = split.feature as i32;
            self.tree.threshold[node] = split.threshold;
            self.tree.left[node] = l as u32;
            self.tree.right[node] = r as u32;
            stack.push((r, mid, hi));
            stack.push((l, lo, mid));
        }
        self.tree
    }

    /// Mean label, accumulated as offsets from the first label so a node of
    /// equal labels returns that label exactly.
    fn leaf_mean(&self, lo: usize, hi: usize) -> f64 {
        let pos = self.positions(lo, hi);
        let base = self.s.y[pos[0] as usize];
        let sum: f64 = pos.iter().map(|&p| self.s.y[p as usize] - base).sum();
        base + sum / (hi - lo) as f64
    }

    fn best_split(&self, lo: usize, hi: usize) -> Option<Split> {
        let n = hi - lo;
        if n < 2 * self.min_leaf {
            return None;
        }
        let pos = self.positions(lo, hi);
        let y = &self.s.y;
        let first = y[pos[0] as usize];
        if pos.iter().all(|&p| y[p as usize] == first) {
            return None;
        }
        let node_mean = self.leaf_mean(lo, hi);
        let (tot, tot2) = pos.iter().fold((0.0, 0.0), |(a, b), &p| {
            let c = y[p as usize] - node_mean;
            (a + c, b + c * c)
        });
        let node_sse = tot2 - tot * tot / n as f64;
        let tol = TIE_REL_TOL * node_sse.abs().max(f64::MIN_POSITIVE);

        let mut best: Option<Split> = None;
        for (f, col) in self.s.cols.iter().enumerate() {
            let order = &self.orders[f][lo..hi];
            let (mut ls, mut ls2) = (0.0, 0.0);
            for i in 0..n - 1 {
                let p = order[i] as usize;
                let c = y[p] - node_mean;
                ls += c;
                ls2 += c * c;
                let n_left = i + 1;
                let n_right = n - n_left;
                if n_left < self.min_leaf {
                    continue;
                }
                if n_right < self.min_leaf {
                    break;
                }
                let a = col[p];
                let b = col[order[i + 1] as usize];
                if a == b {
                    continue;
                }
                let (rs, rs2) = (tot - ls, tot2 - ls2);
                let score = (ls2 - ls * ls / n_left as f64) + (rs2 - rs * rs / n_right as f64);
                if best.is_none_or(|bs| score < bs.score - tol) {
                    best = Some(Split {
                        feature: f,
                        threshold: midpoint(a, b),
                        score,
                    });
                }
            }
        }
        best
    }

    /// Stable partition of every ordering over `[lo, hi)`; returns the split
    /// point.
    fn partition(&mut self, lo: usize, hi: usize, split: &Split) -> usize {
        let col = &self.s.cols[split.feature];
        for &p in &self.orders[split.feature][lo..hi] {
            self.go_left[p as usize] = col[p as usize] <= split.threshold;
        }
        let mut mid = lo;
        for order in self.orders.iter_mut() {
            let range = &mut order[lo..hi];
            let mut l = 0;
            let mut r = 0;
            let right_buf = &mut self.scratch[..hi - lo];
            for i in 0..range.len() {
                let p = range[i];
                if self.go_left[p as usize] {
                    range[l] = p;
                    l += 1;
                } else {
                    right_buf[r] = p;
                    r += 1;
                }
            }
            range[l..].copy_from_slice(&right_buf[..r]);
            mid = lo + l;
        }
        mid
    }
}

fn fit_sample(s: &Sample, min_leaf: usize) -> RegressionTree {
    Grower::new(s, min_leaf.max(1)).grow()
}

/// Fits one tree on raw rows (any feature count).
pub fn fit_tree_rows(rows: &[&[f64]], labels: &[f64], min_leaf: usize) -> Result<RegressionTree> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot fit a tree on an empty dataset".into(),
        ));
    }
    if rows.len() != labels.len() {
        return Err(Error::InvalidArgument("row and label counts differ".into()));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidArgument("rows have different lengths".into()));
    }
    Ok(fit_sample(
        &Sample::from_rows(rows, labels.to_vec(), d),
        min_leaf,
    ))
}

pub fn fit_tree(data: &[TrainingExample], min_leaf: usize) -> Result<RegressionTree> {
    let rows: Vec<&[f64]> = data.iter().map(|e| &e.features.0[..]).collect();
    let labels: Vec<f64> = data.iter().map(|e| e.label).collect();
    fit_tree_rows(&rows, &labels, min_leaf)
}

/// Hyperparameters of the bagged ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleParams {
    pub n_trees: usize,
    pub min_leaf: usize,
    pub seed: u64,
    pub label_range: (f64, f64),
    /// Window length the features were computed on.
    pub window_len: usize,
}

impl Default for EnsembleParams {
    fn default() -> Self {
        Self {
            n_trees: DEFAULT_N_TREES,
            min_leaf: DEFAULT_MIN_LEAF,
            seed: 0,
            label_range: DEFAULT_LABEL_RANGE,
            window_len: WINDOW_LEN,
        }
    }
}

/// Bootstrap sample of tree `tree`: `n` draws with replacement from `0..n`.
pub fn bootstrap_indices(seed: u64, tree: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub format_version: u32,
    pub seed: u64,
    pub min_leaf: usize,
    pub window_len: usize,
    pub label_range: (f64, f64),
    pub trees: Vec<RegressionTree>,
}

pub fn fit_ensemble(
    data: &[TrainingExample],
    params: &EnsembleParams,
    exec: Exec,
) -> Result<TreeEnsemble> {
    if params.n_trees < 1 {
        return Err(Error::InvalidArgument("n_trees must be at least 1".into()));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot fit an ensemble on an empty dataset".into(),
        ));
    }
    let (lo, hi) = params.label_range;
    if !(lo > 0.0 && lo <= hi) {
        return Err(Error::InvalidArgument(format!(
            "bad label range ({lo}, {hi})"
        )));
    }
    let n = data.len();
    let trees = exec.map(params.n_trees, |t| {
        let idx = bootstrap_indices(params.seed, t, n);
        let rows: Vec<&[f64]> = idx.iter().map(|&i| &data[i].features.0[..]).collect();
        let y: Vec<f64> = idx.iter().map(|&i| data[i].label).collect();
        fit_sample(&Sample::from_rows(&rows, y, N_FEATURES), params.min_leaf)
    });
    Ok(TreeEnsemble {
        format_version: MODEL_FORMAT_VERSION,
        seed: params.seed,
        min_leaf: params.min_leaf,
        window_len: params.window_len,
        label_range: params.label_range,
        trees,
    })
}

impl TreeEnsemble {
    /// Mean of the tree outputs, clamped to the label range.
    pub fn predict(&self, f: &FeatureVector) -> f64 {
        let base = self.trees[0].predict(&f.0);
        let sum: f64 = self.trees.iter().map(|t| t.predict(&f.0) - base).sum();
        let mean = base + sum / self.trees.len() as f64;
        mean.clamp(self.label_range.0, self.label_range.1)
    }

    /// Mean squared residual over `test`.
    pub fn evaluate_mse(&self, test: &[TrainingExample]) -> Result<f64> {
        if test.is_empty() {
            return Err(Error::InvalidArgument("empty test set".into()));
        }
        let sse: f64 = test
            .iter()
            .map(|e| (e.label - self.predict(&e.features)).powi(2))
            .sum();
        Ok(sse / test.len() as f64)
    }

    pub fn to_writer<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn from_reader<R: Read>(r: R) -> Result<Self> {
        let ens: TreeEnsemble = serde_json::from_reader(r)?;
        if ens.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported model format_version {}",
                ens.format_version
            )));
        }
        if ens.trees.is_empty() {
            return Err(Error::Format("model has no trees".into()));
        }
        for t in &ens.trees {
            t.check(N_FEATURES)?;
        }
        Ok(ens)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.to_writer(f)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// MSE of always predicting the mean label of `train` on `test`.
pub fn mean_predictor_mse(train: &[TrainingExample], test: &[TrainingExample]) -> f64 {
    let m = train.iter().map(|e| e.label).sum::<f64>() / train.len() as f64;
    test.iter().map(|e| (e.label - m).powi(2)).sum::<f64>() / test.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example(f0: f64, label: f64) -> TrainingExample {
        let mut f = [0.0; N_FEATURES];
        f[0] = f0;
        TrainingExample {
            features: FeatureVector(f),
            label,
        }
    }

    fn toy() -> Vec<TrainingExample> {
        (0..16)
            .map(|i| {
                if i < 8 {
                    example(0.0, 0.001)
                } else {
                    example(1.0, 0.05)
                }
            })
            .collect()
    }

    #[test]
    fn toy_split() {
        let t = fit_tree(&toy(), 8).unwrap();
        assert_eq!(t.n_nodes(), 3);
        assert_eq!(t.feature[0], 0);
        assert_eq!(t.threshold[0], 0.5);
        assert_eq!(t.value[t.left[0] as usize], 0.001);
        assert_eq!(t.value[t.right[0] as usize], 0.05);
    }

    #[test]
    fn pure_node_is_a_leaf() {
        let data: Vec<_> = (0..20).map(|i| example(i as f64, 0.02)).collect();
        let t = fit_tree(&data, 2).unwrap();
        assert_eq!(t.n_nodes(), 1);
        assert_eq!(t.value[0], 0.02);
    }

    #[test]
    fn too_small_for_any_split() {
        let data: Vec<_> = (0..10)
            .map(|i| example(i as f64, i as f64 * 0.001 + 0.001))
            .collect();
        let t = fit_tree(&data, 8).unwrap();
        assert_eq!(t.n_nodes(), 1);
        assert!(fit_tree(&[], 8).is_err());
    }

    #[test]
    fn leaves_respect_min_size() {
        let data: Vec<_> = (0..200)
            .map(|i| example(((i * 37) % 101) as f64, 0.001 + (i % 13) as f64 * 0.003))
            .collect();
        let t = fit_tree(&data, 8).unwrap();
        assert!(t.n_leaves() > 1);
        for i in 0..t.n_nodes() {
            if t.is_leaf(i) {
                assert!(t.n_samples[i] >= 8);
            }
        }
    }

    #[test]
    fn ensemble_basics() {
        let params = EnsembleParams {
            seed: 11,
            ..Default::default()
        };
        let ens = fit_ensemble(&toy(), &params, Exec::default()).unwrap();
        assert_eq!(ens.trees.len(), 30);
        for x in [-1.0, 0.0, 0.3, 0.7, 1.0, 2.0] {
            let p = ens.predict(&example(x, 0.0).features);
            assert!((0.001..=0.05).contains(&p));
        }
        let bad = EnsembleParams {
            n_trees: 0,
            ..params
        };
        assert!(fit_ensemble(&toy(), &bad, Exec::default()).is_err());
    }

    #[test]
    fn predict_toy_and_mse() {
        let params = EnsembleParams {
            n_trees: 1,
            seed: 0,
            ..Default::default()
        };
        let mut ens = fit_ensemble(&toy(), &params, Exec::Sequential).unwrap();
        ens.trees = vec![fit_tree(&toy(), 8).unwrap()];
        assert_eq!(ens.predict(&example(0.0, 0.0).features), 0.001);
        assert_eq!(ens.evaluate_mse(&toy()).unwrap(), 0.0);

        let mut one_leaf = RegressionTree::empty();
        one_leaf.push_leaf(0.03, 1);
        ens.trees = vec![one_leaf];
        let mse = ens.evaluate_mse(&[example(0.0, 0.05)]).unwrap();
        assert!((mse - 4e-4).abs() < 1e-15);
        assert!(ens.evaluate_mse(&[]).is_err());
    }

    #[test]
    fn repeated_single_example() {
        let data = vec![example(0.3, 0.017); 40];
        let ens = fit_ensemble(&data, &EnsembleParams::default(), Exec::default()).unwrap();
        for t in &ens.trees {
            assert_eq!(t.n_nodes(), 1);
        }
        assert_eq!(ens.predict(&example(5.0, 0.0).features), 0.017);
    }

    #[test]
    fn json_round_trip_and_determinism() {
        let data: Vec<_> = (0..300)
            .map(|i| example((i as f64 * 0.7).sin(), 0.001 + (i % 7) as f64 * 0.007))
            .collect();
        let params = EnsembleParams {
            seed: 5,
            ..Default::default()
        };
        let a = fit_ensemble(&data, &params, Exec::Parallel).unwrap();
        let b = fit_ensemble(&data, &params, Exec::Sequential).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        a.to_writer(&mut ba).unwrap();
        b.to_writer(&mut bb).unwrap();
        assert_eq!(ba, bb);
        let back = TreeEnsemble::from_reader(&ba[..]).unwrap();
        assert_eq!(back, a);

        let mut broken = a.clone();
        broken.format_version = 99;
        let mut buf = Vec::new();
        broken.to_writer(&mut buf).unwrap();
        assert!(TreeEnsemble::from_reader(&buf[..]).is_err());
    }

    #[test]
    fn bootstrap_streams_differ() {
        let sets: std::collections::HashSet<Vec<usize>> = (0..30)
            .map(|t| {
                let mut v = bootstrap_indices(42, t, 150);
                v.sort_unstable();
                v
            })
            .collect();
        assert!(sets.len() >= 25);
        assert_eq!(bootstrap_indices(42, 3, 50), bootstrap_indices(42, 3, 50));
    }

    #[test]
    fn midpoint_stays_below_upper_value() {
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let m = midpoint(a, b);
        assert!(a <= m && m < b);
        assert_eq!(midpoint(1.0, 2.0), 1.5);
    }
}
