//! 12-state error-state Kalman filter for DVL velocity aiding.
//!
//! Error state ordering is `[δv(3), δε(3), b_a(3), b_g(3)]` and every error
//! is defined as true minus nominal. `δε` is a NED-frame small rotation:
//! `C_true = (I + [δε×]) C_nominal`.

use nalgebra::{Matrix3, SMatrix, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nav::{ImuSample, NavState};

pub type Matrix12 = SMatrix<f64, 12, 12>;
pub type Vector12 = SMatrix<f64, 12, 1>;
type Matrix12x3 = SMatrix<f64, 12, 3>;

/// Default bias random-walk variance.
pub const DEFAULT_EPS_BIAS: f64 = 0.001;

const SYMMETRY_TOL: f64 = 1e-10;
const PSD_TOL: f64 = -1e-9;

/// Diagonal continuous process-noise covariance: accelerometer variances,
/// gyro variances and one bias random-walk variance shared by all six bias
/// states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessNoiseSpec {
    /// (m/s²)²
    pub q_f: Vector3<f64>,
    /// (rad/s)²
    pub q_w: Vector3<f64>,
    pub eps_bias: f64,
}

impl ProcessNoiseSpec {
    pub fn new(q_f: Vector3<f64>, q_w: Vector3<f64>) -> Self {
        Self {
            q_f,
            q_w,
            eps_bias: DEFAULT_EPS_BIAS,
        }
    }

    /// Same variance on every accelerometer axis and on every gyro axis.
    pub fn uniform(q_f: f64, q_w: f64) -> Self {
        Self::new(Vector3::repeat(q_f), Vector3::repeat(q_w))
    }

    pub fn with_eps_bias(mut self, eps_bias: f64) -> Self {
        self.eps_bias = eps_bias;
        self
    }

    /// Sensor variances multiplied by `alpha`; the bias term is kept.
    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            q_f: self.q_f * alpha,
            q_w: self.q_w * alpha,
            eps_bias: self.eps_bias,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self
            .q_f
            .iter()
            .chain(self.q_w.iter())
            .chain(std::iter::once(&self.eps_bias))
            .all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "process noise entries must be positive and finite: {self:?}"
            )))
        }
    }

    /// The six sensor variances in `ax ay az gx gy gz` order.
    pub fn channels(&self) -> [f64; 6] {
        [
            self.q_f.x, self.q_f.y, self.q_f.z, self.q_w.x, self.q_w.y, self.q_w.z,
        ]
    }

    pub fn trace(&self) -> f64 {
        self.q_f.sum() + self.q_w.sum() + 6.0 * self.eps_bias
    }
}

/// Direct NED velocity fix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DvlMeasurement {
    pub v_meas: Vector3<f64>,
    /// (m/s)²
    pub r: Matrix3<f64>,
}

impl DvlMeasurement {
    pub fn new(v_meas: Vector3<f64>, r: Matrix3<f64>) -> Self {
        Self { v_meas, r }
    }

    /// Fix with the default `diag(0.01, 0.01, 0.01)` noise.
    pub fn with_default_noise(v_meas: Vector3<f64>) -> Self {
        Self::new(v_meas, Matrix3::from_diagonal_element(0.01))
    }
}

/// Covariance, bias estimates and the last innovation of the error filter.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorFilterState {
    pub p: Matrix12,
    pub b_a: Vector3<f64>,
    pub b_g: Vector3<f64>,
    pub last_innovation: Vector3<f64>,
    /// Predicted innovation covariance `H P Hᵀ + R` of the last update.
    pub last_innovation_cov: Matrix3<f64>,
    /// Number of times P had to be repaired back to PSD.
    pub psd_repairs: u64,
}

impl Default for ErrorFilterState {
    fn default() -> Self {
        Self::new(Self::default_covariance())
    }
}

impl ErrorFilterState {
    pub fn new(p: Matrix12) -> Self {
        Self {
            p,
            b_a: Vector3::zeros(),
            b_g: Vector3::zeros(),
            last_innovation: Vector3::zeros(),
            last_innovation_cov: Matrix3::zeros(),
            psd_repairs: 0,
        }
    }

    /// (0.1 m/s)² velocity, (0.01 rad)² attitude, (0.01)² biases.
    pub fn default_covariance() -> Matrix12 {
        let mut d = Vector12::zeros();
        d.fixed_rows_mut::<3>(0).fill(0.1f64.powi(2));
        d.fixed_rows_mut::<3>(3).fill(0.01f64.powi(2));
        d.fixed_rows_mut::<6>(6).fill(0.01f64.powi(2));
        Matrix12::from_diagonal(&d)
    }

    /// IMU reading with the current bias estimates removed.
    pub fn correct(&self, imu: &ImuSample) -> ImuSample {
        ImuSample::new(imu.t, imu.f_b - self.b_a, imu.w_ib - self.b_g)
    }

    /// Covariance prediction over one IMU interval.
    ///
    /// `imu` is the raw reading; the bias estimates are removed internally.
    pub fn propagate(
        &self,
        state: &NavState,
        imu: &ImuSample,
        q: &ProcessNoiseSpec,
        dt: f64,
    ) -> ErrorFilterState {
        let c = state.q_bn.to_rotation_matrix().into_inner();
        let f_n = c * (imu.f_b - self.b_a);
        let f_cross = f_n.cross_matrix();

        // Φ = I + F dt, applied blockwise.
        let mut phi = Matrix12::identity();
        phi.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-f_cross * dt));
        phi.fixed_view_mut::<3, 3>(0, 6).copy_from(&(-c * dt));
        phi.fixed_view_mut::<3, 3>(3, 9).copy_from(&(-c * dt));

        let mut qd = Matrix12::zeros();
        qd.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(c * Matrix3::from_diagonal(&q.q_f) * c.transpose() * dt));
        qd.fixed_view_mut::<3, 3>(3, 3)
            .copy_from(&(c * Matrix3::from_diagonal(&q.q_w) * c.transpose() * dt));
        for i in 6..12 {
            qd[(i, i)] = q.eps_bias * dt;
        }

        let mut next = self.clone();
        next.p = phi * self.p * phi.transpose() + qd;
        next.symmetrize();
        if (0..12).any(|i| next.p[(i, i)] < PSD_TOL) {
            next.repair();
        }
        next
    }

    /// DVL velocity update with Joseph-form covariance and error injection.
    pub fn dvl_update(
        &self,
        state: &NavState,
        z: &DvlMeasurement,
    ) -> Result<(ErrorFilterState, NavState)> {
        let p_hx: Matrix12x3 = self.p.fixed_columns::<3>(0).into_owned();
        let s = self.p.fixed_view::<3, 3>(0, 0).into_owned() + z.r;
        let s_inv = s.try_inverse().ok_or(Error::Singular)?;
        let k: Matrix12x3 = p_hx * s_inv;

        let innovation = z.v_meas - state.v_n;
        let dx: Vector12 = k * innovation;

        let mut nav = *state;
        nav.v_n += dx.fixed_rows::<3>(0);
        let d_eps: Vector3<f64> = dx.fixed_rows::<3>(3).into_owned();
        nav.q_bn = UnitQuaternion::new_normalize(
            (UnitQuaternion::from_scaled_axis(d_eps) * state.q_bn).into_inner(),
        );

        let mut kh = Matrix12::zeros();
        kh.fixed_columns_mut::<3>(0).copy_from(&k);
        let i_kh = Matrix12::identity() - kh;
        let mut next = self.clone();
        next.p = i_kh * self.p * i_kh.transpose() + k * z.r * k.transpose();
        next.b_a += dx.fixed_rows::<3>(6);
        next.b_g += dx.fixed_rows::<3>(9);
        next.last_innovation = innovation;
        next.last_innovation_cov = s;
        next.symmetrize();
        if !next.is_psd() {
            next.repair();
        }
        Ok((next, nav))
    }

    pub fn max_asymmetry(&self) -> f64 {
        (self.p - self.p.transpose()).abs().max()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.p.symmetric_eigenvalues().min()
    }

    pub fn is_psd(&self) -> bool {
        self.max_asymmetry() <= SYMMETRY_TOL && self.min_eigenvalue() > PSD_TOL
    }

    fn symmetrize(&mut self) {
        self.p = (self.p + self.p.transpose()) * 0.5;
    }

    fn repair(&mut self) {
        log::warn!("covariance lost positive semidefiniteness, clamping eigenvalues");
        let mut eig = self.p.symmetric_eigen();
        eig.eigenvalues.apply(|v| *v = v.max(0.0));
        self.p = eig.recompose();
        self.symmetrize();
        self.psd_repairs += 1;
    }
}
