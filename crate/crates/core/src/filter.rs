//! Constant-velocity state filter with reprojection-gated adaptive gain.
//!
//! The state is `[x, y, z, v_x, v_y, v_z, yaw, pitch, roll]`. The gain is
//! diagonal: PnP position and orientation use `w_pnp`, velocities `w_vel`.
//! There is no covariance propagation.

use crate::scalar::{lit, wrap_angle, Real};
use nalgebra::{Matrix3, Point3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("no samples")]
    Empty,
    #[error("duplicate timestamp {0}")]
    DuplicateTimestamp(f64),
    #[error("gate parameters must be positive")]
    InvalidGate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct FilterState<T: Real = f64> {
    pub position: Vector3<T>,
    pub velocity: Vector3<T>,
    /// Yaw, pitch, roll of the camera-to-world rotation [rad], each wrapped
    /// to `(-pi, pi]`.
    pub orientation: Vector3<T>,
    pub timestamp: f64,
}

impl<T: Real> FilterState<T> {
    pub fn new(position: Vector3<T>, velocity: Vector3<T>, orientation: Vector3<T>, timestamp: f64) -> Self {
        Self {
            position,
            velocity,
            orientation: orientation.map(wrap_angle),
            timestamp,
        }
    }

    pub fn as_array(&self) -> [T; 9] {
        let (p, v, o) = (self.position, self.velocity, self.orientation);
        [p.x, p.y, p.z, v.x, v.y, v.z, o.x, o.y, o.z]
    }
}

/// Measurement `Z` with the state layout plus its quality scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement<T: Real = f64> {
    pub position: Vector3<T>,
    pub velocity: Vector3<T>,
    pub orientation: Vector3<T>,
    pub timestamp: f64,
    /// Reprojection error of the PnP estimate [px]; infinite without one.
    pub reprojection_error: T,
    /// Deviation of the PnP position from the last state estimate [m].
    pub deviation: T,
}

impl<T: Real> Measurement<T> {
    /// Velocity-only measurement for frames without a usable pose.
    pub fn velocity_only(velocity: Vector3<T>, timestamp: f64) -> Self {
        Self {
            position: Vector3::zeros(),
            velocity,
            orientation: Vector3::zeros(),
            timestamp,
            reprojection_error: lit(f64::INFINITY),
            deviation: lit(f64::INFINITY),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", default)]
pub struct GateConfig<T: Real = f64> {
    pub sigma: T,
    /// Reprojection error threshold [px].
    pub th_r: T,
    /// Position deviation threshold [m].
    pub th_d: T,
    pub w_vel: T,
    /// Gate on the largest per-axis deviation instead of the Euclidean norm.
    pub per_axis: bool,
}

impl<T: Real> Default for GateConfig<T> {
    fn default() -> Self {
        Self {
            sigma: lit(0.16),
            th_r: lit(2.0),
            th_d: lit(10.0),
            w_vel: T::one(),
            per_axis: false,
        }
    }
}

impl<T: Real> GateConfig<T> {
    pub fn validate(&self) -> Result<(), FilterError> {
        if self.sigma > T::zero() && self.th_r > T::zero() && self.th_d > T::zero() && self.w_vel > T::zero() {
            Ok(())
        } else {
            Err(FilterError::InvalidGate)
        }
    }

    /// Deviation of a measured position from the current estimate under the
    /// configured norm.
    pub fn deviation(&self, measured: &Vector3<T>, estimate: &Vector3<T>) -> T {
        let d = measured - estimate;
        if self.per_axis {
            d.amax()
        } else {
            d.norm()
        }
    }
}

/// Constant-velocity prediction over `dt`, with an optional additive
/// control term `B(dt) u` applied to the velocity.
pub fn predict<T: Real>(state: &FilterState<T>, dt: f64, control: Option<Vector3<T>>) -> Result<FilterState<T>, FilterError> {
    if !(dt > 0.0) {
        return Err(FilterError::NonPositiveStep(dt));
    }
    let h: T = lit(dt);
    let accel = control.unwrap_or_else(Vector3::zeros);
    let two: T = lit(2.0);
    Ok(FilterState {
        position: state.position + state.velocity * h + accel * (h * h / two),
        velocity: state.velocity + accel * h,
        orientation: state.orientation,
        timestamp: state.timestamp + dt,
    })
}

/// Gain for the PnP components: 0 when either gate fails, otherwise
/// `min(sigma * th_r / eps_r, 2 sigma)`.
pub fn pnp_weight<T: Real>(eps_r: T, eps_d: T, gate: &GateConfig<T>) -> T {
    if !(eps_r <= gate.th_r) || !(eps_d <= gate.th_d) {
        return T::zero();
    }
    let cap = gate.sigma * lit(2.0);
    if eps_r <= T::zero() {
        return cap;
    }
    (gate.th_r / eps_r * gate.sigma).min(cap)
}

/// `X <- X_hat + K (Z - X_hat)` with a diagonal gain and `H = I`.
/// Orientation innovations are wrapped before weighting.
pub fn update<T: Real>(predicted: &FilterState<T>, z: &Measurement<T>, gate: &GateConfig<T>) -> FilterState<T> {
    let w = pnp_weight(z.reprojection_error, z.deviation, gate);
    let mut out = *predicted;
    if w > T::zero() {
        out.position += (z.position - predicted.position) * w;
        let innovation = (z.orientation - predicted.orientation).map(wrap_angle);
        out.orientation = (predicted.orientation + innovation * w).map(wrap_angle);
    }
    out.velocity += (z.velocity - predicted.velocity) * gate.w_vel;
    out.timestamp = predicted.timestamp.max(z.timestamp);
    out
}

/// Twice the median of calibration reprojection errors.
pub fn compute_th_r(samples: &[f64]) -> Result<f64, FilterError> {
    if samples.is_empty() {
        return Err(FilterError::Empty);
    }
    Ok(2.0 * median(samples))
}

pub(crate) fn median(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Velocities from timestamped positions by central differences, one-sided
/// at the ends.
pub fn derive_velocity<T: Real>(times: &[f64], positions: &[Vector3<T>]) -> Result<Vec<Vector3<T>>, FilterError> {
    let n = times.len().min(positions.len());
    if n < 2 {
        return Err(FilterError::Empty);
    }
    for w in times[..n].windows(2) {
        if w[1] <= w[0] {
            return Err(FilterError::DuplicateTimestamp(w[1]));
        }
    }
    Ok((0..n)
        .map(|i| {
            let (a, b) = if i == 0 {
                (0, 1)
            } else if i == n - 1 {
                (n - 2, n - 1)
            } else {
                (i - 1, i + 1)
            };
            (positions[b] - positions[a]) / lit::<T>(times[b] - times[a])
        })
        .collect())
}

/// Yaw, pitch, roll (`R = Rz(yaw) Ry(pitch) Rx(roll)`) of a rotation.
pub fn rotation_to_ypr<T: Real>(r: &Matrix3<T>) -> Vector3<T> {
    let (roll, pitch, yaw) = Rotation3::from_matrix_unchecked(*r).euler_angles();
    Vector3::new(yaw, pitch, roll)
}

pub fn ypr_to_rotation<T: Real>(ypr: &Vector3<T>) -> Matrix3<T> {
    Rotation3::from_euler_angles(ypr.z, ypr.y, ypr.x).into_inner()
}

/// Filter state position as a point.
pub fn state_point<T: Real>(s: &FilterState<T>) -> Point3<T> {
    Point3::from(s.position)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn state(p: [f64; 3], v: [f64; 3]) -> FilterState {
        FilterState::new(Vector3::from(p), Vector3::from(v), Vector3::zeros(), 0.0)
    }

    #[test]
    fn predict_constant_velocity() {
        let s = predict(&state([0.0; 3], [1.0, 0.0, 0.0]), 1.0, None).unwrap();
        assert_eq!(s.position, Vector3::new(1.0, 0.0, 0.0));
        let s = predict(&state([2.0, 3.0, 4.0], [0.0; 3]), 0.5, None).unwrap();
        assert_eq!(s.position, Vector3::new(2.0, 3.0, 4.0));
        let s = predict(&state([0.0; 3], [0.0, 3.8, 0.0]), 0.2, None).unwrap();
        assert_relative_eq!(s.position.y, 0.76, epsilon = 1e-12);
        assert!(predict(&state([0.0; 3], [0.0; 3]), 0.0, None).is_err());
    }

    #[test]
    fn gate_cases() {
        let g = GateConfig {
            th_r: 2.0,
            ..Default::default()
        };
        assert_eq!(pnp_weight(2.2, 0.0, &g), 0.0);
        assert_eq!(pnp_weight(2.0, 0.0, &g), 0.16);
        assert_eq!(pnp_weight(0.5, 0.0, &g), 0.32);
        assert_eq!(pnp_weight(0.0, 0.0, &g), 0.32);
        assert_eq!(pnp_weight(1.0, 10.5, &g), 0.0);
    }

    #[test]
    fn update_gain_structure() {
        let g = GateConfig::default();
        let pred = state([0.0; 3], [1.0, 0.0, 0.0]);
        let z = Measurement {
            position: pred.position,
            velocity: pred.velocity,
            orientation: pred.orientation,
            timestamp: 0.0,
            reprojection_error: 0.1,
            deviation: 0.0,
        };
        assert_eq!(update(&pred, &z, &g), pred);

        let z = Measurement {
            position: Vector3::new(1.0, 0.0, 0.0),
            velocity: Vector3::new(0.0, 2.0, 0.0),
            reprojection_error: 5.0,
            deviation: 1.0,
            ..z
        };
        let out = update(&pred, &z, &g);
        assert_eq!(out.position, pred.position);
        assert_eq!(out.velocity, z.velocity);

        // eps_r = th_r gives w = sigma
        let z = Measurement {
            reprojection_error: 2.0,
            ..z
        };
        let out = update(&pred, &z, &g);
        assert_relative_eq!(out.position.x, 0.16, epsilon = 1e-12);
    }

    #[test]
    fn orientation_innovation_wraps() {
        let g = GateConfig::default();
        let mut pred = state([0.0; 3], [0.0; 3]);
        pred.orientation.z = 3.1;
        let z = Measurement {
            position: Vector3::zeros(),
            velocity: Vector3::zeros(),
            orientation: Vector3::new(0.0, 0.0, -3.1),
            timestamp: 0.0,
            reprojection_error: 0.5,
            deviation: 0.0,
        };
        let out = update(&pred, &z, &g);
        let step = 2.0 * std::f64::consts::PI - 6.2;
        assert_relative_eq!(out.orientation.z, wrap_angle(3.1 + 0.32 * step), epsilon = 1e-12);
    }

    #[test]
    fn th_r_examples() {
        assert_relative_eq!(compute_th_r(&[0.3, 0.5, 0.7]).unwrap(), 1.0);
        assert_eq!(compute_th_r(&[0.4]).unwrap(), 0.8);
        assert_eq!(compute_th_r(&[0.6; 5]).unwrap(), 1.2);
        assert_eq!(compute_th_r(&[]), Err(FilterError::Empty));
    }

    #[test]
    fn velocity_examples() {
        let v = derive_velocity(&[0.0, 1.0], &[Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)]).unwrap();
        assert_eq!(v, vec![Vector3::new(1.0, 0.0, 0.0); 2]);
        let still = derive_velocity(&[0.0, 1.0, 2.0], &[Vector3::new(1.0, 2.0, 3.0); 3]).unwrap();
        assert!(still.iter().all(|v| v.norm() == 0.0));
        assert!(derive_velocity(&[0.0, 0.0], &[Vector3::<f64>::zeros(); 2]).is_err());

        // a drifting stream shows the drift as velocity bias
        let t: Vec<f64> = (0..20).map(|i| i as f64 / 3.0).collect();
        let p: Vec<_> = t.iter().map(|t| Vector3::new(0.8 * t + 0.02 * t, 0.0, 0.0)).collect();
        for v in derive_velocity(&t, &p).unwrap() {
            assert_relative_eq!(v.x - 0.8, 0.02, epsilon = 1e-9);
        }
    }

    #[test]
    fn ypr_round_trip() {
        let ypr = Vector3::new(0.3, -0.2, 2.9);
        assert_relative_eq!(rotation_to_ypr(&ypr_to_rotation(&ypr)), ypr, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn weight_cap(er in 0.0f64..10.0, ed in 0.0f64..20.0, th_r in 0.1f64..5.0, sigma in 0.01f64..1.0) {
            let g = GateConfig { sigma, th_r, ..Default::default() };
            let w = pnp_weight(er, ed, &g);
            prop_assert!(w <= 2.0 * sigma);
            let passes = er <= th_r && ed <= g.th_d;
            prop_assert_eq!(w == 2.0 * sigma, passes && er <= th_r / 2.0);
        }

        #[test]
        fn distance_gate_keeps_prediction(
            p in proptest::array::uniform3(-50.0f64..50.0),
            z in proptest::array::uniform3(-50.0f64..50.0),
            er in 0.0f64..1.0,
            extra in 0.001f64..100.0,
        ) {
            let g = GateConfig::default();
            let pred = FilterState::new(Vector3::from(p), Vector3::zeros(), Vector3::new(0.1, 0.2, 0.3), 0.0);
            let m = Measurement {
                position: Vector3::from(z),
                velocity: Vector3::new(1.0, 0.0, 0.0),
                orientation: Vector3::new(-1.0, 0.5, 2.0),
                timestamp: 0.0,
                reprojection_error: er,
                deviation: g.th_d + extra,
            };
            let out = update(&pred, &m, &g);
            prop_assert_eq!(out.position, pred.position);
            prop_assert_eq!(out.orientation, pred.orientation);
        }
    }
}
