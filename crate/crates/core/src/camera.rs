//! Pinhole camera with Brown–Conrady distortion, and rigid camera poses.

use crate::scalar::{lit, Real};
use nalgebra::{Matrix3, Point2, Point3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("focal lengths must be positive (fx={fx}, fy={fy})")]
    NonPositiveFocal { fx: f64, fy: f64 },
    #[error("principal point ({cx}, {cy}) lies outside the {width}x{height} image")]
    PrincipalPointOutside { cx: f64, cy: f64, width: u32, height: u32 },
    #[error("rotation is not orthonormal with det +1 (orthogonality residual {residual:e}, det {det})")]
    InvalidRotation { residual: f64, det: f64 },
}

/// Radial (k1, k2, k3) and tangential (p1, p2) lens distortion coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Distortion<T: Real = f64> {
    pub k1: T,
    pub k2: T,
    pub p1: T,
    pub p2: T,
    pub k3: T,
}

impl<T: Real> Distortion<T> {
    pub fn is_zero(&self) -> bool {
        [self.k1, self.k2, self.p1, self.p2, self.k3]
            .iter()
            .all(|c| *c == T::zero())
    }

    /// Applies the distortion to normalized image coordinates.
    pub fn distort(&self, p: Vector2<T>) -> Vector2<T> {
        let (x, y) = (p.x, p.y);
        let r2 = x * x + y * y;
        let radial = T::one() + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
        let two: T = lit(2.0);
        let dx = two * self.p1 * x * y + self.p2 * (r2 + two * x * x);
        let dy = self.p1 * (r2 + two * y * y) + two * self.p2 * x * y;
        Vector2::new(x * radial + dx, y * radial + dy)
    }

    fn jacobian(&self, p: Vector2<T>) -> nalgebra::Matrix2<T> {
        let (x, y) = (p.x, p.y);
        let two: T = lit(2.0);
        let r2 = x * x + y * y;
        let radial = T::one() + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
        // d(radial)/d(r2)
        let dradial = self.k1 + r2 * (two * self.k2 + lit::<T>(3.0) * r2 * self.k3);
        let dr_dx = two * x;
        let dr_dy = two * y;
        let j00 = radial + x * dradial * dr_dx + two * self.p1 * y + self.p2 * lit::<T>(6.0) * x;
        let j01 = x * dradial * dr_dy + two * self.p1 * x + self.p2 * two * y;
        let j10 = y * dradial * dr_dx + self.p1 * two * x + two * self.p2 * y;
        let j11 = radial + y * dradial * dr_dy + self.p1 * lit::<T>(6.0) * y + two * self.p2 * x;
        nalgebra::Matrix2::new(j00, j01, j10, j11)
    }

    /// Inverts [`Distortion::distort`] by Gauss–Newton iteration.
    pub fn undistort(&self, distorted: Vector2<T>) -> Vector2<T> {
        if self.is_zero() {
            return distorted;
        }
        let mut p = distorted;
        for _ in 0..20 {
            let r = self.distort(p) - distorted;
            if r.norm() < lit(1e-14) {
                break;
            }
            match self.jacobian(p).try_inverse() {
                Some(inv) => p -= inv * r,
                None => break,
            }
        }
        p
    }
}

/// Intrinsic camera calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CameraIntrinsics<T: Real = f64> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub distortion: Distortion<T>,
}

impl<T: Real> CameraIntrinsics<T> {
    /// Distortion-free camera.
    pub fn pinhole(fx: T, fy: T, cx: T, cy: T, width: u32, height: u32) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            distortion: Distortion::default(),
        }
    }

    /// Camera with the principal point at the image center and a given
    /// horizontal field of view.
    pub fn from_hfov(hfov_rad: T, width: u32, height: u32) -> Self {
        let w: T = lit(width as f64);
        let h: T = lit(height as f64);
        let f = w / (lit::<T>(2.0) * (hfov_rad / lit(2.0)).tan());
        Self::pinhole(f, f, w / lit(2.0), h / lit(2.0), width, height)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return Err(CameraError::NonPositiveFocal {
                fx: crate::scalar::to_f64(self.fx),
                fy: crate::scalar::to_f64(self.fy),
            });
        }
        let inside = self.cx >= T::zero()
            && self.cy >= T::zero()
            && self.cx <= lit(self.width as f64)
            && self.cy <= lit(self.height as f64);
        if !inside {
            return Err(CameraError::PrincipalPointOutside {
                cx: crate::scalar::to_f64(self.cx),
                cy: crate::scalar::to_f64(self.cy),
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<T> {
        Matrix3::new(
            self.fx,
            T::zero(),
            self.cx,
            T::zero(),
            self.fy,
            self.cy,
            T::zero(),
            T::zero(),
            T::one(),
        )
    }

    /// Pixel to normalized coordinates (no distortion handling).
    pub fn normalize(&self, px: Point2<T>) -> Vector2<T> {
        Vector2::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy)
    }

    pub fn denormalize(&self, n: Vector2<T>) -> Point2<T> {
        Point2::new(n.x * self.fx + self.cx, n.y * self.fy + self.cy)
    }

    /// Maps an observed (distorted) pixel to its ideal pinhole pixel.
    pub fn undistort_pixel(&self, px: Point2<T>) -> Point2<T> {
        self.denormalize(self.distortion.undistort(self.normalize(px)))
    }

    /// Maps an ideal pinhole pixel to where the lens images it.
    pub fn distort_pixel(&self, px: Point2<T>) -> Point2<T> {
        self.denormalize(self.distortion.distort(self.normalize(px)))
    }

    /// Unit viewing ray through an (undistorted) pixel.
    pub fn ray(&self, px: Point2<T>) -> Vector3<T> {
        let n = self.normalize(px);
        Vector3::new(n.x, n.y, T::one()).normalize()
    }

    /// Same camera with every intrinsic expressed at `scale` times the resolution.
    pub fn scaled(&self, scale: T) -> Self {
        let half: T = lit(0.5);
        Self {
            fx: self.fx * scale,
            fy: self.fy * scale,
            // pixel centers stay consistent under resampling
            cx: (self.cx + half) * scale - half,
            cy: (self.cy + half) * scale - half,
            width: crate::scalar::to_f64(lit::<T>(self.width as f64) * scale).round() as u32,
            height: crate::scalar::to_f64(lit::<T>(self.height as f64) * scale).round() as u32,
            distortion: self.distortion,
        }
    }
}

/// World-to-camera rigid transform: `x_cam = R * x_world + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Pose<T: Real = f64> {
    pub rotation: Matrix3<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> Pose<T> {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose after checking `R^T R = I` and `det R = +1`.
    pub fn new(rotation: Matrix3<T>, translation: Vector3<T>) -> Result<Self, CameraError> {
        let pose = Self {
            rotation,
            translation,
        };
        pose.check_rotation(lit(1e-9))?;
        Ok(pose)
    }

    /// Pose of a camera centered at `center` whose axes (x right, y down,
    /// z forward) are the columns of `camera_to_world`.
    pub fn from_center(center: Point3<T>, camera_to_world: Matrix3<T>) -> Self {
        let rotation = camera_to_world.transpose();
        let translation = -(rotation * center.coords);
        Self {
            rotation,
            translation,
        }
    }

    /// Camera looking from `center` towards `target`, with `up_hint`
    /// pointing roughly to the top of the image.
    pub fn look_at(center: Point3<T>, target: Point3<T>, up_hint: Vector3<T>) -> Self {
        let z = (target - center).normalize();
        let y = (-up_hint - z * z.dot(&-up_hint)).normalize();
        let x = y.cross(&z);
        Self::from_center(center, Matrix3::from_columns(&[x, y, z]))
    }

    pub fn check_rotation(&self, tol: T) -> Result<(), CameraError> {
        let residual = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        let det = self.rotation.determinant();
        if residual > tol || (det - T::one()).abs() > tol {
            return Err(CameraError::InvalidRotation {
                residual: crate::scalar::to_f64(residual),
                det: crate::scalar::to_f64(det),
            });
        }
        Ok(())
    }

    /// Camera center in world coordinates, `C = R^T (-t)`.
    pub fn camera_position(&self) -> Point3<T> {
        camera_position(&self.rotation, &self.translation)
    }

    pub fn transform(&self, p: &Point3<T>) -> Point3<T> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// Angle of the relative rotation between two poses [rad].
    pub fn rotation_distance(&self, other: &Self) -> T {
        rotation_angle(&(self.rotation.transpose() * other.rotation))
    }
}

/// `C = R^T (-t)`.
pub fn camera_position<T: Real>(rotation: &Matrix3<T>, translation: &Vector3<T>) -> Point3<T> {
    Point3::from(rotation.transpose() * (-translation))
}

/// Rotation angle of `R` from its trace, robust near 0 and pi.
pub fn rotation_angle<T: Real>(r: &Matrix3<T>) -> T {
    // atan2 form: |skew part| = sin(theta) * 2, trace - 1 = 2 cos(theta)
    let s = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm();
    let c = r.trace() - T::one();
    s.atan2(c)
}

/// A projected point and whether it lies in front of the camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection<T: Real = f64> {
    pub pixel: Point2<T>,
    /// Projective depth `s`; points with `s <= 0` are not visible.
    pub depth: T,
    pub visible: bool,
}

/// Projects world points with `s [u v 1]^T = K [R|t] [x y z 1]^T`, optionally
/// through the lens distortion.
pub fn project_points<T: Real>(
    points: &[Point3<T>],
    pose: &Pose<T>,
    k: &CameraIntrinsics<T>,
    distort: bool,
) -> Vec<Projection<T>> {
    points
        .iter()
        .map(|p| project_point(p, pose, k, distort))
        .collect()
}

pub fn project_point<T: Real>(
    p: &Point3<T>,
    pose: &Pose<T>,
    k: &CameraIntrinsics<T>,
    distort: bool,
) -> Projection<T> {
    let pc = pose.transform(p);
    let s = pc.z;
    if s <= T::zero() {
        return Projection {
            pixel: Point2::new(lit::<T>(f64::NAN), lit::<T>(f64::NAN)),
            depth: s,
            visible: false,
        };
    }
    let mut n = Vector2::new(pc.x / s, pc.y / s);
    if distort {
        n = k.distortion.distort(n);
    }
    Projection {
        pixel: k.denormalize(n),
        depth: s,
        visible: true,
    }
}
