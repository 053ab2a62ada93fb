//! Strapdown mechanization in the local North-East-Down frame.
//!
//! Earth rate and transport rate are not modelled; gravity is the normal
//! gravity of the reference latitude and is held constant over a run.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::AnalyticTrajectory;

/// WGS-84 semi-major axis, m.
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS-84 first eccentricity squared.
pub const WGS84_E2: f64 = 6.694_379_990_14e-3;

/// One IMU reading. `f_b` is specific force (m/s²), `w_ib` angular rate
/// (rad/s), both in the body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub f_b: Vector3<f64>,
    pub w_ib: Vector3<f64>,
}

impl ImuSample {
    pub fn new(t: f64, f_b: Vector3<f64>, w_ib: Vector3<f64>) -> Self {
        Self { t, f_b, w_ib }
    }

    /// The six channels in `ax ay az gx gy gz` order.
    pub fn channels(&self) -> [f64; 6] {
        [
            self.f_b.x,
            self.f_b.y,
            self.f_b.z,
            self.w_ib.x,
            self.w_ib.y,
            self.w_ib.z,
        ]
    }

    pub fn from_channels(t: f64, c: [f64; 6]) -> Self {
        Self {
            t,
            f_b: Vector3::new(c[0], c[1], c[2]),
            w_ib: Vector3::new(c[3], c[4], c[5]),
        }
    }

    fn is_finite(&self) -> bool {
        self.t.is_finite() && self.channels().iter().all(|v| v.is_finite())
    }
}

/// Navigation solution: geodetic position, NED velocity and body→NED attitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavState {
    /// rad
    pub lat: f64,
    /// rad
    pub lon: f64,
    /// m, positive down
    pub depth: f64,
    pub v_n: Vector3<f64>,
    pub q_bn: UnitQuaternion<f64>,
}

impl NavState {
    pub fn new(
        lat: f64,
        lon: f64,
        depth: f64,
        v_n: Vector3<f64>,
        q_bn: UnitQuaternion<f64>,
    ) -> Self {
        Self {
            lat,
            lon,
            depth,
            v_n,
            q_bn,
        }
    }

    /// Level, north-facing vehicle moving at 1 m/s north from 32°N 34°E,
    /// 5 m below the surface.
    pub fn default_initial() -> Self {
        Self::new(
            32f64.to_radians(),
            34f64.to_radians(),
            5.0,
            Vector3::new(1.0, 0.0, 0.0),
            UnitQuaternion::identity(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.lat.is_finite()
            && self.lon.is_finite()
            && self.depth.is_finite()
            && self.v_n.iter().all(|v| v.is_finite())
            && self.q_bn.coords.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("navigation state"));
        }
        if self.lat.abs() >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::PolarSingularity(self.lat));
        }
        Ok(())
    }
}

/// Normal gravity (Somigliana) at geodetic latitude `lat`, m/s².
pub fn normal_gravity(lat: f64) -> f64 {
    let s2 = lat.sin().powi(2);
    9.780_325_335_9 * (1.0 + 0.001_931_852_652_41 * s2) / (1.0 - WGS84_E2 * s2).sqrt()
}

/// Meridian and transverse radii of curvature at `lat`, m.
pub fn earth_radii(lat: f64) -> (f64, f64) {
    let d = 1.0 - WGS84_E2 * lat.sin().powi(2);
    let r_n = WGS84_A / d.sqrt();
    let r_m = WGS84_A * (1.0 - WGS84_E2) / (d * d.sqrt());
    (r_m, r_n)
}

fn wrap_lon(lon: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut l = lon % TAU;
    if l > PI {
        l -= TAU;
    } else if l <= -PI {
        l += TAU;
    }
    l
}

/// Trapezoidal position update from the velocities at both ends of a step.
fn advance_position(
    lat: f64,
    lon: f64,
    depth: f64,
    v0: &Vector3<f64>,
    v1: &Vector3<f64>,
    dt: f64,
) -> (f64, f64, f64) {
    let v = (v0 + v1) * 0.5;
    let (r_m, r_n) = earth_radii(lat);
    let h = -depth;
    let lat1 = lat + v.x * dt / (r_m + h);
    let lon1 = wrap_lon(lon + v.y * dt / ((r_n + h) * lat.cos()));
    (lat1, lon1, depth + v.z * dt)
}

/// Strapdown integrator bound to a fixed gravity magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Strapdown {
    pub gravity: f64,
}

impl Strapdown {
    pub fn at_latitude(lat: f64) -> Self {
        Self {
            gravity: normal_gravity(lat),
        }
    }

    pub fn gravity_n(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, self.gravity)
    }

    /// Advances `state` by one IMU interval.
    ///
    /// Attitude takes a first-order quaternion step and is renormalized.
    /// Velocity integrates the specific force rotated with the start-of-step
    /// attitude plus gravity; position is integrated trapezoidally.
    pub fn mechanize(&self, state: &NavState, imu: &ImuSample, dt: f64) -> Result<NavState> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "dt must be positive, got {dt}"
            )));
        }
        if !imu.is_finite() {
            return Err(Error::NonFinite("IMU sample"));
        }
        state.validate()?;

        let half = imu.w_ib * (0.5 * dt);
        let dq = UnitQuaternion::from_quaternion(Quaternion::new(1.0, half.x, half.y, half.z));
        let q_bn = UnitQuaternion::new_normalize((state.q_bn * dq).into_inner());

        let a_n = state.q_bn * imu.f_b + self.gravity_n();
        let v_n = state.v_n + a_n * dt;

        let (lat, lon, depth) =
            advance_position(state.lat, state.lon, state.depth, &state.v_n, &v_n, dt);
        Ok(NavState {
            lat,
            lon,
            depth,
            v_n,
            q_bn,
        })
    }

    /// Ideal IMU readings for an analytic trajectory, paired with the true
    /// state at the start of each interval.
    ///
    /// The readings are the exact inverse of [`Strapdown::mechanize`], so
    /// feeding them back from the first state reproduces the trajectory up to
    /// floating-point rounding.
    pub fn inverse_mechanize(
        &self,
        traj: &AnalyticTrajectory,
        rate: f64,
    ) -> Result<Vec<(ImuSample, NavState)>> {
        if !(rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "rate must be positive, got {rate}"
            )));
        }
        let dt = 1.0 / rate;
        let n = (traj.duration * rate).round() as usize;
        let g_n = self.gravity_n();
        let mut out = Vec::with_capacity(n);

        let (mut lat, mut lon, mut depth) = (traj.lat0, traj.lon0, traj.depth);
        let mut q0 = traj.attitude(0.0);
        let mut v0 = traj.velocity(0.0);
        for k in 0..n {
            let t = k as f64 * dt;
            let t1 = (k + 1) as f64 * dt;
            let q1 = traj.attitude(t1);
            let v1 = traj.velocity(t1);

            let mut dq = (q0.inverse() * q1).into_inner();
            if dq.w < 0.0 {
                dq = -dq;
            }
            let w_ib = dq.imag() * (2.0 / (dq.w * dt));
            let f_b = q0.inverse() * ((v1 - v0) / dt - g_n);

            out.push((
                ImuSample::new(t, f_b, w_ib),
                NavState::new(lat, lon, depth, v0, q0),
            ));
            (lat, lon, depth) = advance_position(lat, lon, depth, &v0, &v1, dt);
            q0 = q1;
            v0 = v1;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn at_rest() -> NavState {
        NavState::new(0.5, 0.6, 5.0, Vector3::zeros(), UnitQuaternion::identity())
    }

    #[test]
    fn gravity_cancels_at_rest() {
        let sd = Strapdown::at_latitude(0.5);
        let s0 = at_rest();
        let imu = ImuSample::new(0.0, Vector3::new(0.0, 0.0, -sd.gravity), Vector3::zeros());
        let s1 = sd.mechanize(&s0, &imu, 0.01).unwrap();
        assert_eq!(s1, s0);
    }

    #[test]
    fn zero_motion_stays_bounded() {
        let sd = Strapdown::at_latitude(0.5);
        let mut s = at_rest();
        let imu = ImuSample::new(0.0, Vector3::new(0.0, 0.0, -sd.gravity), Vector3::zeros());
        for _ in 0..10_000 {
            s = sd.mechanize(&s, &imu, 0.01).unwrap();
        }
        assert!(s.v_n.norm() < 1e-9);
    }

    #[test]
    fn straight_line_moves_north() {
        let sd = Strapdown::at_latitude(0.5);
        let mut s0 = at_rest();
        s0.v_n = Vector3::new(1.0, 0.0, 0.0);
        let imu = ImuSample::new(0.0, Vector3::new(0.0, 0.0, -sd.gravity), Vector3::zeros());
        let s1 = sd.mechanize(&s0, &imu, 1.0).unwrap();
        // straight-line closed form: dlat = v dt / (R_M + h)
        let (r_m, _) = earth_radii(0.5);
        assert_abs_diff_eq!(s1.lat - s0.lat, 1.0 / (r_m - 5.0), epsilon = 1e-15);
        assert!((s1.lat - s0.lat - 1.0 / 6.371e6).abs() < 2e-9);
        assert_eq!(s1.v_n, s0.v_n);
        assert_eq!(s1.lon, s0.lon);
    }

    #[test]
    fn constant_rate_turn() {
        let sd = Strapdown::at_latitude(0.5);
        let mut s = at_rest();
        let rate = std::f64::consts::FRAC_PI_2;
        let imu = ImuSample::new(
            0.0,
            Vector3::new(0.0, 0.0, -sd.gravity),
            Vector3::new(0.0, 0.0, rate),
        );
        for _ in 0..100 {
            s = sd.mechanize(&s, &imu, 0.01).unwrap();
        }
        let (_, _, yaw) = s.q_bn.euler_angles();
        // analytic: yaw = rate * t
        assert_abs_diff_eq!(yaw, rate * 1.0, epsilon = 1e-4);
        assert_abs_diff_eq!(s.q_bn.coords.norm(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn rejects_bad_inputs() {
        let sd = Strapdown::at_latitude(0.5);
        let s = at_rest();
        let nan = ImuSample::new(0.0, Vector3::new(f64::NAN, 0.0, 0.0), Vector3::zeros());
        assert!(matches!(
            sd.mechanize(&s, &nan, 0.01),
            Err(Error::NonFinite(_))
        ));
        let ok = ImuSample::new(0.0, Vector3::zeros(), Vector3::zeros());
        assert!(matches!(
            sd.mechanize(&s, &ok, 0.0),
            Err(Error::InvalidArgument(_))
        ));
        let mut polar = s;
        polar.lat = std::f64::consts::FRAC_PI_2;
        assert!(matches!(
            sd.mechanize(&polar, &ok, 0.01),
            Err(Error::PolarSingularity(_))
        ));
    }

    #[test]
    fn longitude_wraps() {
        assert_abs_diff_eq!(
            wrap_lon(std::f64::consts::PI + 0.1),
            -std::f64::consts::PI + 0.1,
            epsilon = 1e-12
        );
        assert_eq!(wrap_lon(std::f64::consts::PI), std::f64::consts::PI);
        assert_eq!(wrap_lon(0.3), 0.3);
    }

    #[test]
    fn gravity_magnitude() {
        assert_abs_diff_eq!(normal_gravity(0.0), 9.7803253359, epsilon = 1e-9);
        assert!(
            normal_gravity(32f64.to_radians()) > 9.79 && normal_gravity(32f64.to_radians()) < 9.80
        );
    }
}
