//! Smooth analytic vehicle trajectories at constant depth.
//!
//! Every trajectory is level (zero roll and pitch) with the body x-axis along
//! the velocity, so motion is fully described by a speed and a heading
//! function. Heading is at least twice continuously differentiable.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Heading law of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Profile {
    StraightLine,
    /// heading0 + amplitude·sin(2πt/period)
    SinusoidalHeading {
        amplitude: f64,
        period: f64,
    },
    /// Straight legs joined by 180° turns of alternating direction; the turn
    /// rate follows a raised-cosine pulse so it starts and ends at zero.
    Lawnmower {
        leg: f64,
        turn: f64,
    },
    /// Turn rate rate0/(1 + t/tau): a spiral whose radius keeps growing.
    SpiralTurn {
        rate0: f64,
        tau: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticTrajectory {
    pub id: TrajectoryId,
    pub profile: Profile,
    /// m/s
    pub speed: f64,
    /// rad
    pub heading0: f64,
    /// s
    pub duration: f64,
    /// m, positive down
    pub depth: f64,
    pub lat0: f64,
    pub lon0: f64,
}

/// Names of the built-in trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryId {
    StraightLine,
    SinusoidalHeading,
    Lawnmower,
    SpiralTurn,
    /// Held-out lawnmower variant used for evaluation only.
    EvalLawnmower,
}

impl TrajectoryId {
    pub const BASELINES: [TrajectoryId; 4] = [
        TrajectoryId::StraightLine,
        TrajectoryId::SinusoidalHeading,
        TrajectoryId::Lawnmower,
        TrajectoryId::SpiralTurn,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TrajectoryId::StraightLine => "straight-line",
            TrajectoryId::SinusoidalHeading => "sinusoidal-heading",
            TrajectoryId::Lawnmower => "lawnmower",
            TrajectoryId::SpiralTurn => "spiral-turn",
            TrajectoryId::EvalLawnmower => "eval-lawnmower",
        }
    }
}

impl fmt::Display for TrajectoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrajectoryId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "straight-line" => Ok(TrajectoryId::StraightLine),
            "sinusoidal-heading" => Ok(TrajectoryId::SinusoidalHeading),
            "lawnmower" => Ok(TrajectoryId::Lawnmower),
            "spiral-turn" => Ok(TrajectoryId::SpiralTurn),
            "eval-lawnmower" => Ok(TrajectoryId::EvalLawnmower),
            other => Err(Error::InvalidArgument(format!(
                "unknown trajectory '{other}'"
            ))),
        }
    }
}

impl AnalyticTrajectory {
    /// Built-in trajectory with the given duration, starting at 32°N 34°E,
    /// 5 m deep.
    pub fn builtin(id: TrajectoryId, duration: f64) -> Self {
        let (profile, speed, heading0) = match id {
            TrajectoryId::StraightLine => (Profile::StraightLine, 1.5, 30f64.to_radians()),
            TrajectoryId::SinusoidalHeading => (
                Profile::SinusoidalHeading {
                    amplitude: 35f64.to_radians(),
                    period: 80.0,
                },
                1.8,
                0.0,
            ),
            TrajectoryId::Lawnmower => (
                Profile::Lawnmower {
                    leg: 60.0,
                    turn: 20.0,
                },
                2.0,
                90f64.to_radians(),
            ),
            TrajectoryId::SpiralTurn => (
                Profile::SpiralTurn {
                    rate0: 0.12,
                    tau: 80.0,
                },
                1.2,
                0.0,
            ),
            TrajectoryId::EvalLawnmower => (
                Profile::Lawnmower {
                    leg: 45.0,
                    turn: 15.0,
                },
                1.0,
                0.0,
            ),
        };
        Self {
            id,
            profile,
            speed,
            heading0,
            duration,
            depth: 5.0,
            lat0: 32f64.to_radians(),
            lon0: 34f64.to_radians(),
        }
    }

    pub fn heading(&self, t: f64) -> f64 {
        self.heading0
            + match self.profile {
                Profile::StraightLine => 0.0,
                Profile::SinusoidalHeading { amplitude, period } => {
                    amplitude * (TAU * t / period).sin()
                }
                Profile::Lawnmower { leg, turn } => {
                    let cycle = leg + turn;
                    let n = (t / cycle).floor();
                    let tau = t - n * cycle;
                    // turns alternate +π, −π
                    let done = if (n as i64) % 2 == 1 { PI } else { 0.0 };
                    let sign = if (n as i64) % 2 == 0 { 1.0 } else { -1.0 };
                    if tau <= leg {
                        done
                    } else {
                        let u = tau - leg;
                        done + sign * PI * (u - turn / TAU * (TAU * u / turn).sin()) / turn
                    }
                }
                Profile::SpiralTurn { rate0, tau } => rate0 * tau * (1.0 + t / tau).ln(),
            }
    }

    pub fn yaw_rate(&self, t: f64) -> f64 {
        match self.profile {
            Profile::StraightLine => 0.0,
            Profile::SinusoidalHeading { amplitude, period } => {
                amplitude * TAU / period * (TAU * t / period).cos()
            }
            Profile::Lawnmower { leg, turn } => {
                let cycle = leg + turn;
                let n = (t / cycle).floor();
                let tau = t - n * cycle;
                let sign = if (n as i64) % 2 == 0 { 1.0 } else { -1.0 };
                if tau <= leg {
                    0.0
                } else {
                    sign * PI / turn * (1.0 - (TAU * (tau - leg) / turn).cos())
                }
            }
            Profile::SpiralTurn { rate0, tau } => rate0 / (1.0 + t / tau),
        }
    }

    /// NED velocity, m/s.
    pub fn velocity(&self, t: f64) -> Vector3<f64> {
        let psi = self.heading(t);
        Vector3::new(self.speed * psi.cos(), self.speed * psi.sin(), 0.0)
    }

    /// Body→NED attitude.
    pub fn attitude(&self, t: f64) -> UnitQuaternion<f64> {
        UnitQuaternion::from_euler_angles(0.0, 0.0, self.heading(t))
    }
}
