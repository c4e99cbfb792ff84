//! EPnP camera pose estimation and reprojection scoring.

use crate::camera::{CameraIntrinsics, Pose};
use crate::scalar::{lit, Real};
use nalgebra::{DMatrix, DVector, Matrix3, Point2, Point3, Vector2, Vector3};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PnpError {
    #[error("insufficient correspondences: need at least 4, got {0}")]
    Insufficient(usize),
    #[error("degenerate point configuration")]
    Degenerate,
}

/// Image points (undistorted pixels) paired with world points.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrespondenceSet<T: Real = f64> {
    pub image: Vec<Point2<T>>,
    pub world: Vec<Point3<T>>,
    pub frame: usize,
}

impl<T: Real> CorrespondenceSet<T> {
    pub fn new(frame: usize) -> Self {
        Self {
            image: Vec::new(),
            world: Vec::new(),
            frame,
        }
    }

    pub fn push(&mut self, image: Point2<T>, world: Point3<T>) {
        self.image.push(image);
        self.world.push(world);
    }

    pub fn len(&self) -> usize {
        self.image.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEstimate<T: Real = f64> {
    pub pose: Pose<T>,
    /// Camera center `R^T (-t)` [m].
    pub position: Point3<T>,
    /// RMS reprojection error [px].
    pub reprojection_error: T,
    pub count: usize,
}

/// Root-mean-square pixel residual of the correspondences under `pose`.
/// Points behind the camera make the error infinite.
pub fn reprojection_error<T: Real>(pose: &Pose<T>, c: &CorrespondenceSet<T>, k: &CameraIntrinsics<T>) -> T {
    if c.is_empty() {
        return T::zero();
    }
    let mut sum = T::zero();
    for (img, w) in c.image.iter().zip(&c.world) {
        let pc = pose.transform(w);
        if pc.z <= T::zero() {
            return lit(f64::INFINITY);
        }
        let px = k.denormalize(Vector2::new(pc.x / pc.z, pc.y / pc.z));
        sum += (px - img).norm_squared();
    }
    (sum / lit(c.len() as f64)).sqrt()
}

struct Basis<T: Real> {
    controls: Vec<Point3<T>>,
    alphas: Vec<Vec<T>>,
}

/// Control points at the centroid and along the principal axes. Nearly
/// planar point sets get three control points spanning their plane.
fn control_basis<T: Real>(world: &[Point3<T>]) -> Result<Basis<T>, PnpError> {
    let n: T = lit(world.len() as f64);
    let centroid = world.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mut cov = Matrix3::zeros();
    for p in world {
        let d = p.coords - centroid;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).expect("finite"));
    let lambda: Vec<T> = order.iter().map(|&i| eig.eigenvalues[i].max(T::zero())).collect();
    if lambda[0] <= T::zero() || lambda[1] <= lambda[0] * lit(1e-10) {
        return Err(PnpError::Degenerate);
    }
    let planar = lambda[2] < lambda[0] * lit(1e-8);
    let axes = if planar { 2 } else { 3 };

    let mut controls = vec![Point3::from(centroid)];
    let mut dirs = Vec::with_capacity(axes);
    for (a, &i) in order.iter().take(axes).enumerate() {
        let scale = (lambda[a] / n).sqrt();
        let dir: Vector3<T> = eig.eigenvectors.column(i).into_owned();
        controls.push(Point3::from(centroid + dir * scale));
        dirs.push((dir, scale));
    }
    let alphas = world
        .iter()
        .map(|p| {
            let d = p.coords - centroid;
            let mut a = vec![T::zero(); axes + 1];
            let mut rest = T::zero();
            for (j, (dir, scale)) in dirs.iter().enumerate() {
                a[j + 1] = d.dot(dir) / *scale;
                rest += a[j + 1];
            }
            a[0] = T::one() - rest;
            a
        })
        .collect();
    Ok(Basis { controls, alphas })
}

fn rigid_align<T: Real>(world: &[Point3<T>], cam: &[Vector3<T>]) -> Option<Pose<T>> {
    let n: T = lit(world.len() as f64);
    let cw = world.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let cc = cam.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mut h = Matrix3::zeros();
    for (w, c) in world.iter().zip(cam) {
        h += (c - cc) * (w.coords - cw).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u?;
    let vt = svd.v_t?;
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < T::zero() {
        d[(2, 2)] = -T::one();
    }
    let rotation = u * d * vt;
    let translation = cc - rotation * cw;
    Some(Pose {
        rotation,
        translation,
    })
}

/// Squared inter-control-point distances and the matching differences of
/// each null-space vector.
struct DistanceSystem<T: Real> {
    world: Vec<T>,
    /// `diffs[pair][k]` is the difference of control points of pair under
    /// null vector `k`.
    diffs: Vec<Vec<Vector3<T>>>,
}

impl<T: Real> DistanceSystem<T> {
    fn new(controls: &[Point3<T>], null: &[DVector<T>]) -> Self {
        let m = controls.len();
        let mut world = Vec::new();
        let mut diffs = Vec::new();
        for i in 0..m {
            for j in i + 1..m {
                world.push((controls[i] - controls[j]).norm_squared());
                diffs.push(
                    null.iter()
                        .map(|v| {
                            Vector3::new(
                                v[3 * i] - v[3 * j],
                                v[3 * i + 1] - v[3 * j + 1],
                                v[3 * i + 2] - v[3 * j + 2],
                            )
                        })
                        .collect(),
                );
            }
        }
        Self { world, diffs }
    }

    fn pairs(&self) -> usize {
        self.world.len()
    }

    /// Rows of the linearized system in the products `b_kl = beta_k beta_l`,
    /// `k <= l`, over the first `n` null vectors.
    fn linear_rows(&self, n: usize) -> DMatrix<T> {
        let cols = n * (n + 1) / 2;
        let mut l = DMatrix::zeros(self.pairs(), cols);
        for (r, d) in self.diffs.iter().enumerate() {
            let mut c = 0;
            for a in 0..n {
                for b in a..n {
                    let f = if a == b { T::one() } else { lit(2.0) };
                    l[(r, c)] = f * d[a].dot(&d[b]);
                    c += 1;
                }
            }
        }
        l
    }

    fn refine(&self, beta: &mut [T], iterations: usize) {
        let n = beta.len();
        for _ in 0..iterations {
            let mut jtj = DMatrix::zeros(n, n);
            let mut jtr = DVector::zeros(n);
            for (d, w) in self.diffs.iter().zip(&self.world) {
                let v = (0..n).fold(Vector3::zeros(), |a, k| a + d[k] * beta[k]);
                let r = v.norm_squared() - *w;
                let j: Vec<T> = (0..n).map(|k| lit::<T>(2.0) * v.dot(&d[k])).collect();
                for a in 0..n {
                    jtr[a] += j[a] * r;
                    for b in 0..n {
                        jtj[(a, b)] += j[a] * j[b];
                    }
                }
            }
            let Some(step) = jtj.lu().solve(&jtr) else { break };
            for k in 0..n {
                beta[k] -= step[k];
            }
        }
    }
}

fn least_squares<T: Real>(a: DMatrix<T>, b: DVector<T>) -> Option<DVector<T>> {
    a.svd(true, true).solve(&b, lit(1e-14)).ok()
}

fn initial_betas<T: Real>(sys: &DistanceSystem<T>, n: usize) -> Option<Vec<T>> {
    let rhs = DVector::from_vec(sys.world.clone());
    let root = |x: T| x.abs().sqrt();
    match n {
        1 => {
            let (mut num, mut den) = (T::zero(), T::zero());
            for (d, w) in sys.diffs.iter().zip(&sys.world) {
                let dc = d[0].norm();
                num += dc * w.sqrt();
                den += dc * dc;
            }
            (den > T::zero()).then(|| vec![num / den])
        }
        2 => {
            let b = least_squares(sys.linear_rows(2), rhs)?;
            let (b11, b12, b22) = (b[0], b[1], b[2]);
            let b1 = root(b11);
            let b2 = if b12 < T::zero() { -root(b22) } else { root(b22) };
            Some(vec![b1, b2])
        }
        3 => {
            let b = least_squares(sys.linear_rows(3), rhs)?;
            // b11 b12 b13 b22 b23 b33
            let b1 = root(b[0]);
            let b2 = if b[1] < T::zero() { -root(b[3]) } else { root(b[3]) };
            let b3 = if b[2] < T::zero() { -root(b[5]) } else { root(b[5]) };
            Some(vec![b1, b2, b3])
        }
        4 => {
            // only the products involving beta_1 are solved for
            let full = sys.linear_rows(4);
            let cols = [0usize, 1, 2, 3];
            let a = DMatrix::from_fn(sys.pairs(), 4, |r, c| full[(r, cols[c])]);
            let b = least_squares(a, rhs)?;
            let b1 = root(b[0]);
            if b1 <= T::zero() {
                return None;
            }
            let sign = if b[0] < T::zero() { -T::one() } else { T::one() };
            Some(vec![b1, sign * b[1] / b1, sign * b[2] / b1, sign * b[3] / b1])
        }
        _ => None,
    }
}

/// Solves the perspective-n-point problem with EPnP.
///
/// Image points must be undistorted pixels. The best of the beta
/// hypotheses (N = 1..4, each refined by 10 Gauss–Newton steps) is chosen
/// by RMS reprojection error.
pub fn solve_epnp<T: Real>(c: &CorrespondenceSet<T>, k: &CameraIntrinsics<T>) -> Result<PoseEstimate<T>, PnpError> {
    let n = c.len();
    if n < 4 || c.world.len() != n {
        return Err(PnpError::Insufficient(n.min(c.world.len())));
    }
    let basis = control_basis(&c.world)?;
    let m = basis.controls.len();

    let mut mtm = DMatrix::<T>::zeros(3 * m, 3 * m);
    let mut row_u = DVector::<T>::zeros(3 * m);
    let mut row_v = DVector::<T>::zeros(3 * m);
    for (img, alpha) in c.image.iter().zip(&basis.alphas) {
        let p = k.normalize(*img);
        for j in 0..m {
            row_u[3 * j] = alpha[j];
            row_u[3 * j + 1] = T::zero();
            row_u[3 * j + 2] = -alpha[j] * p.x;
            row_v[3 * j] = T::zero();
            row_v[3 * j + 1] = alpha[j];
            row_v[3 * j + 2] = -alpha[j] * p.y;
        }
        mtm.ger(T::one(), &row_u, &row_u, T::one());
        mtm.ger(T::one(), &row_v, &row_v, T::one());
    }
    let eig = mtm.symmetric_eigen();
    let mut order: Vec<usize> = (0..3 * m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).expect("finite"));

    let max_dims = if m == 4 { 4 } else { 2 };
    let null: Vec<DVector<T>> = order
        .iter()
        .take(max_dims)
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();
    let sys = DistanceSystem::new(&basis.controls, &null);

    let mut best: Option<PoseEstimate<T>> = None;
    for dims in 1..=max_dims {
        let Some(mut beta) = initial_betas(&sys, dims) else {
            continue;
        };
        let sub = DistanceSystem {
            world: sys.world.clone(),
            diffs: sys.diffs.iter().map(|d| d[..dims].to_vec()).collect(),
        };
        sub.refine(&mut beta, 10);
        let Some(est) = pose_from_betas(c, k, &basis, &null[..dims], &beta) else {
            continue;
        };
        if best
            .as_ref()
            .is_none_or(|b| est.reprojection_error < b.reprojection_error)
        {
            best = Some(est);
        }
    }
    best.ok_or(PnpError::Degenerate)
}

fn pose_from_betas<T: Real>(
    c: &CorrespondenceSet<T>,
    k: &CameraIntrinsics<T>,
    basis: &Basis<T>,
    null: &[DVector<T>],
    beta: &[T],
) -> Option<PoseEstimate<T>> {
    let m = basis.controls.len();
    let mut x = DVector::<T>::zeros(3 * m);
    for (v, b) in null.iter().zip(beta) {
        x.axpy(*b, v, T::one());
    }
    let ctrl: Vec<Vector3<T>> = (0..m).map(|j| Vector3::new(x[3 * j], x[3 * j + 1], x[3 * j + 2])).collect();
    let mut cam: Vec<Vector3<T>> = basis
        .alphas
        .iter()
        .map(|a| (0..m).fold(Vector3::zeros(), |s, j| s + ctrl[j] * a[j]))
        .collect();
    let mean_depth = cam.iter().fold(T::zero(), |s, p| s + p.z);
    if mean_depth < T::zero() {
        for p in &mut cam {
            *p = -*p;
        }
    }
    let pose = rigid_align(&c.world, &cam)?;
    if !pose.rotation.iter().all(|v| v.is_finite()) {
        return None;
    }
    let err = reprojection_error(&pose, c, k);
    Some(PoseEstimate {
        position: pose.camera_position(),
        pose,
        reprojection_error: err,
        count: c.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::project_points;
    use approx::assert_relative_eq;

    fn camera() -> CameraIntrinsics {
        CameraIntrinsics::pinhole(1000.0, 1000.0, 960.0, 540.0, 1920, 1080)
    }

    fn grid(rows: usize, cols: usize) -> Vec<Point3<f64>> {
        let mut pts = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                pts.push(Point3::new(c as f64 * 1.05 - 2.0, r as f64 * 2.05 - 1.0, 0.0));
            }
        }
        pts
    }

    fn correspondences(world: &[Point3<f64>], pose: &Pose, k: &CameraIntrinsics) -> CorrespondenceSet {
        let mut c = CorrespondenceSet::new(0);
        for (p, w) in project_points(world, pose, k, false).iter().zip(world) {
            c.push(p.pixel, *w);
        }
        c
    }

    #[test]
    fn too_few_points() {
        let world = grid(1, 3);
        let pose = Pose::look_at(Point3::new(0.0, 0.0, 12.0), Point3::origin(), Vector3::y());
        let c = correspondences(&world, &pose, &camera());
        assert_eq!(solve_epnp(&c, &camera()), Err(PnpError::Insufficient(3)));
    }

    #[test]
    fn collinear_is_degenerate() {
        let world: Vec<_> = (0..6).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let pose = Pose::look_at(Point3::new(0.0, 0.0, 12.0), Point3::origin(), Vector3::y());
        let c = correspondences(&world, &pose, &camera());
        assert_eq!(solve_epnp(&c, &camera()), Err(PnpError::Degenerate));
    }

    #[test]
    fn planar_exact() {
        let world = grid(2, 4);
        let center = Point3::new(1.0, -2.0, 12.0);
        let pose = Pose::look_at(center, Point3::new(0.5, 0.0, 0.0), Vector3::y());
        let c = correspondences(&world, &pose, &camera());
        let est = solve_epnp(&c, &camera()).unwrap();
        assert!((est.position - center).norm() < 1e-6);
        assert!(est.pose.rotation_distance(&pose) < 1e-8);
        assert!(est.reprojection_error < 1e-6);
        assert!(est.pose.check_rotation(1e-9).is_ok());
    }

    #[test]
    fn nonplanar_exact() {
        let mut world = grid(2, 4);
        world.push(Point3::new(0.3, 0.2, 1.5));
        world.push(Point3::new(-1.0, 0.9, -0.7));
        let center = Point3::new(-3.0, 2.0, 15.0);
        let pose = Pose::look_at(center, Point3::origin(), Vector3::y());
        let c = correspondences(&world, &pose, &camera());
        let est = solve_epnp(&c, &camera()).unwrap();
        assert!((est.position - center).norm() < 1e-6);
        assert!(est.pose.rotation_distance(&pose) < 1e-8);
    }

    #[test]
    fn reprojection_of_lateral_shift() {
        // 0.1 m at 10 m depth with f = 1000 is 10 px on every point
        let world = vec![
            Point3::new(0.0, 0.0, 10.0),
            Point3::new(1.0, 0.0, 10.0),
            Point3::new(0.0, 1.0, 10.0),
        ];
        let truth = Pose::identity();
        let c = correspondences(&world, &truth, &camera());
        assert_relative_eq!(reprojection_error(&truth, &c, &camera()), 0.0, epsilon = 1e-9);
        let shifted = Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::new(0.1, 0.0, 0.0),
        };
        assert_relative_eq!(reprojection_error(&shifted, &c, &camera()), 10.0, epsilon = 1e-9);
    }

    #[test]
    fn single_point_residual() {
        let mut c = CorrespondenceSet::new(0);
        c.push(Point2::new(963.0, 544.0), Point3::new(0.0, 0.0, 5.0));
        assert_relative_eq!(reprojection_error(&Pose::identity(), &c, &camera()), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn works_in_f32() {
        let world: Vec<Point3<f32>> = grid(2, 4).iter().map(|p| p.cast()).collect();
        let k = CameraIntrinsics::<f32>::pinhole(1000.0, 1000.0, 960.0, 540.0, 1920, 1080);
        let center = Point3::new(0.5f32, -1.0, 12.0);
        let pose = Pose::look_at(center, Point3::origin(), Vector3::y());
        let mut c = CorrespondenceSet::new(0);
        for (p, w) in project_points(&world, &pose, &k, false).iter().zip(&world) {
            c.push(p.pixel, *w);
        }
        let est = solve_epnp(&c, &k).unwrap();
        assert!((est.position - center).norm() < 5e-2);
    }
}
