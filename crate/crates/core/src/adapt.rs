//! Process-noise strategies: constant, innovation-adaptive and learned.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eskf::ProcessNoiseSpec;
use crate::features::{extract_features_len, Channel, Window};
use crate::trees::TreeEnsemble;

/// Clamp applied to the innovation trace ratio.
pub const ALPHA_RANGE: (f64, f64) = (0.1, 10.0);

/// Returns `spec` unchanged.
pub fn next_q_constant(spec: &ProcessNoiseSpec) -> ProcessNoiseSpec {
    *spec
}

/// Trace-ratio scale of the empirical innovation covariance over the last
/// innovations against the predicted one, clamped to [`ALPHA_RANGE`].
/// `None` when no innovation has been seen yet.
pub fn innovation_scale(history: &[Vector3<f64>], predicted: &Matrix3<f64>) -> Option<f64> {
    if history.is_empty() {
        return None;
    }
    let empirical = history.iter().map(|v| v.norm_squared()).sum::<f64>() / history.len() as f64;
    let alpha = empirical / predicted.trace();
    Some(alpha.clamp(ALPHA_RANGE.0, ALPHA_RANGE.1))
}

/// Innovation-adaptive update: `base` scaled by [`innovation_scale`].
/// `predicted` is `H P Hᵀ + R` of the latest update.
pub fn next_q_innovation(
    history: &[Vector3<f64>],
    predicted: &Matrix3<f64>,
    base: &ProcessNoiseSpec,
) -> ProcessNoiseSpec {
    match innovation_scale(history, predicted) {
        Some(alpha) => base.scaled(alpha),
        None => *base,
    }
}

/// Learned update: one prediction per channel window. Accelerometer windows
/// set `q_f`, gyro windows set `q_w`; `eps_bias` is carried through.
pub fn next_q_learned(
    windows: &[Window],
    ensemble: &TreeEnsemble,
    eps_bias: f64,
) -> Result<ProcessNoiseSpec> {
    let mut q = [f64::NAN; 6];
    for w in windows {
        let f = extract_features_len(w, ensemble.window_len)?;
        let slot = &mut q[w.channel.index()];
        if !slot.is_nan() {
            return Err(Error::InvalidArgument(format!(
                "duplicate window for channel {}",
                w.channel
            )));
        }
        *slot = ensemble.predict(&f);
    }
    if let Some(c) = Channel::ALL.iter().find(|c| q[c.index()].is_nan()) {
        return Err(Error::InvalidArgument(format!(
            "missing window for channel {c}"
        )));
    }
    Ok(ProcessNoiseSpec {
        q_f: Vector3::new(q[0], q[1], q[2]),
        q_w: Vector3::new(q[3], q[4], q[5]),
        eps_bias,
    })
}

/// Strategy selection as it appears on the command line and in config files:
/// `constant:<q_f>,<q_w>`, `adaptive:<xi>`, `learned[:<tuning_rate_s>]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StrategySpec {
    Constant { q_f: f64, q_w: f64 },
    Adaptive { xi: usize },
    Learned { tuning_rate: f64 },
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategySpec::Constant { q_f, q_w } => write!(f, "constant:{q_f},{q_w}"),
            StrategySpec::Adaptive { xi } => write!(f, "adaptive:{xi}"),
            StrategySpec::Learned { tuning_rate } => write!(f, "learned:{tuning_rate}"),
        }
    }
}

impl FromStr for StrategySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::InvalidArgument(format!("strategy '{s}': {why}"));
        let (name, params) = match s.split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (s, None),
        };
        let num = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| bad("expected a number"))
        };
        match name {
            "constant" => {
                let p = params.ok_or_else(|| bad("expected constant:<q_f>,<q_w>"))?;
                let (a, b) = p
                    .split_once(',')
                    .ok_or_else(|| bad("expected constant:<q_f>,<q_w>"))?;
                let (q_f, q_w) = (num(a)?, num(b)?);
                if !(q_f > 0.0 && q_w > 0.0) {
                    return Err(bad("variances must be positive"));
                }
                Ok(StrategySpec::Constant { q_f, q_w })
            }
            "adaptive" => {
                let xi: usize = params
                    .ok_or_else(|| bad("expected adaptive:<xi>"))?
                    .trim()
                    .parse()
                    .map_err(|_| bad("xi must be a positive integer"))?;
                if xi < 1 {
                    return Err(bad("xi must be at least 1"));
                }
                Ok(StrategySpec::Adaptive { xi })
            }
            "learned" => {
                let tuning_rate = params.map(num).transpose()?.unwrap_or(1.0);
                if !(tuning_rate > 0.0) {
                    return Err(bad("tuning rate must be positive"));
                }
                Ok(StrategySpec::Learned { tuning_rate })
            }
            _ => Err(bad("unknown strategy")),
        }
    }
}

/// Resolved strategy, ready to drive a filter run.
#[derive(Debug, Clone)]
pub enum QStrategy {
    Constant(ProcessNoiseSpec),
    /// Scales `base` by the innovation trace ratio over the last `xi` DVL
    /// updates.
    InnovationAdaptive {
        base: ProcessNoiseSpec,
        xi: usize,
    },
    /// Starts from `initial` and adopts the model's prediction every
    /// `tuning_rate` seconds once a full window is available.
    Learned {
        ensemble: Arc<TreeEnsemble>,
        tuning_rate: f64,
        initial: ProcessNoiseSpec,
    },
}

impl QStrategy {
    /// Builds the runtime strategy. `nominal` is the constant/base spec used
    /// by the adaptive strategies before they have data.
    pub fn resolve(
        spec: &StrategySpec,
        nominal: &ProcessNoiseSpec,
        ensemble: Option<Arc<TreeEnsemble>>,
    ) -> Result<Self> {
        Ok(match *spec {
            StrategySpec::Constant { q_f, q_w } => QStrategy::Constant(ProcessNoiseSpec {
                eps_bias: nominal.eps_bias,
                ..ProcessNoiseSpec::uniform(q_f, q_w)
            }),
            StrategySpec::Adaptive { xi } => QStrategy::InnovationAdaptive { base: *nominal, xi },
            StrategySpec::Learned { tuning_rate } => QStrategy::Learned {
                ensemble: ensemble.ok_or_else(|| {
                    Error::InvalidArgument("learned strategy needs a trained model".into())
                })?,
                tuning_rate,
                initial: *nominal,
            },
        })
    }

    fn initial(&self) -> ProcessNoiseSpec {
        match self {
            QStrategy::Constant(s) => *s,
            QStrategy::InnovationAdaptive { base, .. } => *base,
            QStrategy::Learned { initial, .. } => *initial,
        }
    }
}

/// Per-run state of a strategy.
#[derive(Debug, Clone)]
pub struct QAdapter {
    strategy: QStrategy,
    current: ProcessNoiseSpec,
    innovations: VecDeque<Vector3<f64>>,
    alphas: Vec<f64>,
}

impl QAdapter {
    pub fn new(strategy: QStrategy) -> Self {
        Self {
            current: strategy.initial(),
            strategy,
            innovations: VecDeque::new(),
            alphas: Vec::new(),
        }
    }

    pub fn current(&self) -> &ProcessNoiseSpec {
        &self.current
    }

    pub fn strategy(&self) -> &QStrategy {
        &self.strategy
    }

    /// Scale factors chosen so far by the innovation strategy.
    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// `(window length, tuning period in seconds)` for the learned strategy.
    pub fn learned_schedule(&self) -> Option<(usize, f64)> {
        match &self.strategy {
            QStrategy::Learned {
                ensemble,
                tuning_rate,
                ..
            } => Some((ensemble.window_len, *tuning_rate)),
            _ => None,
        }
    }

    pub fn on_dvl_update(&mut self, innovation: Vector3<f64>, predicted: &Matrix3<f64>) {
        match &self.strategy {
            QStrategy::Constant(s) => self.current = next_q_constant(s),
            QStrategy::InnovationAdaptive { base, xi } => {
                self.innovations.push_back(innovation);
                while self.innovations.len() > *xi {
                    self.innovations.pop_front();
                }
                let hist = self.innovations.make_contiguous();
                if let Some(a) = innovation_scale(hist, predicted) {
                    self.alphas.push(a);
                }
                self.current = next_q_innovation(hist, predicted, base);
            }
            QStrategy::Learned { .. } => {}
        }
    }

    /// Replaces the current spec with the learned prediction from the six
    /// trailing channel windows. No-op for the other strategies.
    pub fn on_tuning_epoch(&mut self, windows: &[Window]) -> Result<()> {
        if let QStrategy::Learned { ensemble, .. } = &self.strategy {
            self.current = next_q_learned(windows, ensemble, self.current.eps_bias)?;
        }
        Ok(())
    }
}
