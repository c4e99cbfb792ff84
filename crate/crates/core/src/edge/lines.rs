//! Image lines: Hough detection, the border-point Hausdorff distance,
//! agglomerative clustering, and vanishing-direction filtering.

use super::canny::EdgeMap;
use super::EdgeError;
use crate::camera::CameraIntrinsics;
use nalgebra::{Matrix3, Point2, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LineClass {
    /// Along the bench rows.
    Horizontal,
    /// Across the rows, separating columns.
    Vertical,
}

/// Infinite line `x cos(theta) + y sin(theta) = rho`, represented by its
/// two intersections with the image border.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageLine {
    pub p0: Point2<f64>,
    pub p1: Point2<f64>,
    /// Normal angle in `[0, pi)`.
    pub theta: f64,
    pub rho: f64,
    pub weight: f64,
    pub class: Option<LineClass>,
    /// Image size `(width, height)` the line is clipped to.
    pub bounds: (f64, f64),
}

fn canonical(theta: f64, rho: f64) -> (f64, f64) {
    let t = theta.rem_euclid(2.0 * PI);
    if t >= PI {
        (t - PI, -rho)
    } else {
        (t, rho)
    }
}

impl ImageLine {
    /// Clips the line to `[0, width] x [0, height]`; `None` if it misses.
    pub fn from_normal(theta: f64, rho: f64, bounds: (f64, f64), weight: f64) -> Option<Self> {
        let (theta, rho) = canonical(theta, rho);
        let (c, s) = (theta.cos(), theta.sin());
        let (w, h) = bounds;
        let eps = 1e-9;
        let mut pts: Vec<Point2<f64>> = Vec::with_capacity(4);
        if s.abs() > eps {
            for x in [0.0, w] {
                let y = (rho - x * c) / s;
                if (-eps..=h + eps).contains(&y) {
                    pts.push(Point2::new(x, y.clamp(0.0, h)));
                }
            }
        }
        if c.abs() > eps {
            for y in [0.0, h] {
                let x = (rho - y * s) / c;
                if (-eps..=w + eps).contains(&x) {
                    pts.push(Point2::new(x.clamp(0.0, w), y));
                }
            }
        }
        let mut best: Option<(f64, Point2<f64>, Point2<f64>)> = None;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                let d = (pts[i] - pts[j]).norm();
                if best.is_none_or(|b| d > b.0) {
                    best = Some((d, pts[i], pts[j]));
                }
            }
        }
        let (d, a, b) = best?;
        if d < 1e-9 {
            return None;
        }
        let (p0, p1) = if (a.x, a.y) <= (b.x, b.y) { (a, b) } else { (b, a) };
        Some(Self {
            p0,
            p1,
            theta,
            rho,
            weight,
            class: None,
            bounds,
        })
    }

    /// Line through two points, clipped to the image bounds.
    pub fn through(a: Point2<f64>, b: Point2<f64>, bounds: (f64, f64), weight: f64) -> Option<Self> {
        let d = b - a;
        if d.norm() < 1e-12 {
            return None;
        }
        let n = Vector2::new(-d.y, d.x).normalize();
        Self::from_normal(n.y.atan2(n.x), n.dot(&a.coords), bounds, weight)
    }

    pub fn with_class(mut self, class: Option<LineClass>) -> Self {
        self.class = class;
        self
    }

    pub fn normal(&self) -> Vector2<f64> {
        Vector2::new(self.theta.cos(), self.theta.sin())
    }

    /// Unit direction (normal rotated by +90 degrees).
    pub fn direction(&self) -> Vector2<f64> {
        Vector2::new(-self.theta.sin(), self.theta.cos())
    }

    /// Direction angle in `[0, pi)`.
    pub fn angle(&self) -> f64 {
        (self.theta + PI / 2.0).rem_euclid(PI)
    }

    /// Distance of a point to the infinite line.
    pub fn line_distance(&self, p: &Point2<f64>) -> f64 {
        (self.normal().dot(&p.coords) - self.rho).abs()
    }

    /// Distance of a point to the clipped segment between the border points.
    pub fn segment_distance(&self, p: &Point2<f64>) -> f64 {
        let d = self.p1 - self.p0;
        let t = ((p - self.p0).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
        // the endpoint terms keep d(p0) and d(p1) exactly zero
        (p - (self.p0 + d * t)).norm().min((p - self.p0).norm()).min((p - self.p1).norm())
    }

    pub fn intersection(&self, other: &ImageLine) -> Option<Point2<f64>> {
        let (a, b) = (self.normal(), other.normal());
        let det = a.x * b.y - a.y * b.x;
        if det.abs() < 1e-12 {
            return None;
        }
        let x = (self.rho * b.y - a.y * other.rho) / det;
        let y = (a.x * other.rho - self.rho * b.x) / det;
        Some(Point2::new(x, y))
    }

    /// Foot of the perpendicular from `p`.
    pub fn project(&self, p: &Point2<f64>) -> Point2<f64> {
        let n = self.normal();
        p - n * (n.dot(&p.coords) - self.rho)
    }

}

/// `H(L, K) = max(d(l0, K), d(l1, K), d(k0, L), d(k1, L))` over the border
/// points, with `d` the distance to the other line's in-image segment.
pub fn hausdorff_line_distance(l: &ImageLine, k: &ImageLine) -> Result<f64, EdgeError> {
    for line in [l, k] {
        if (line.p1 - line.p0).norm() < 1e-12 {
            return Err(EdgeError::DegenerateLine);
        }
    }
    Ok(k.segment_distance(&l.p0)
        .max(k.segment_distance(&l.p1))
        .max(l.segment_distance(&k.p0))
        .max(l.segment_distance(&k.p1)))
}

// ---- Hough ----

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HoughParams {
    pub rho_step: f64,
    pub theta_step_deg: f64,
    /// Half-width of the orientation class bands around the family angles [deg].
    pub band_deg: f64,
    /// Accumulator threshold for vertical lines [votes].
    pub vertical_weight: f64,
    /// Horizontal threshold as a multiple of the vertical one.
    pub horizontal_ratio: f64,
    /// Each edge pixel votes only within this many degrees of its gradient
    /// direction; 0 votes over all angles.
    pub vote_spread_deg: f64,
    /// Half-size of the non-maximum suppression window [cells].
    pub nms_radius: usize,
}

impl Default for HoughParams {
    fn default() -> Self {
        Self {
            rho_step: 1.0,
            theta_step_deg: 1.0,
            band_deg: 20.0,
            vertical_weight: 40.0,
            horizontal_ratio: 1.5,
            vote_spread_deg: 10.0,
            nms_radius: 2,
        }
    }
}

/// Hough line detection on an edge map. Lines are kept when they are local
/// accumulator maxima inside a band around one of the two dominant family
/// angles and reach that family's weight threshold. The family closer to
/// the image x axis is the horizontal class.
pub fn hough_lines(edges: &EdgeMap, params: &HoughParams) -> Vec<ImageLine> {
    let (w, h) = (edges.width as f64, edges.height as f64);
    let n_theta = (180.0 / params.theta_step_deg).round().max(1.0) as usize;
    let diag = (w * w + h * h).sqrt();
    let rho_max = (diag / params.rho_step).ceil() as i64;
    let n_rho = (2 * rho_max + 1) as usize;
    let step = params.theta_step_deg.to_radians();
    let trig: Vec<(f64, f64)> = (0..n_theta).map(|t| ((t as f64 * step).cos(), (t as f64 * step).sin())).collect();

    let mut acc = vec![0u32; n_theta * n_rho];
    let spread = (params.vote_spread_deg / params.theta_step_deg).round() as i64;
    for (x, y, g) in edges.pixels() {
        let (xf, yf) = (x as f64, y as f64);
        let vote = |acc: &mut Vec<u32>, t: usize| {
            let (c, s) = trig[t];
            let r = ((xf * c + yf * s) / params.rho_step).round() as i64 + rho_max;
            acc[t * n_rho + r as usize] += 1;
        };
        if params.vote_spread_deg <= 0.0 {
            for t in 0..n_theta {
                vote(&mut acc, t);
            }
        } else {
            let center = ((g as f64).rem_euclid(PI) / step).round() as i64;
            for dt in -spread..=spread {
                vote(&mut acc, (center + dt).rem_euclid(n_theta as i64) as usize);
            }
        }
    }

    let profile: Vec<u32> = (0..n_theta)
        .map(|t| acc[t * n_rho..(t + 1) * n_rho].iter().copied().max().unwrap_or(0))
        .collect();
    let circ = |a: usize, b: usize| {
        let d = (a as i64 - b as i64).rem_euclid(n_theta as i64) as usize;
        d.min(n_theta - d)
    };
    let band = (params.band_deg / params.theta_step_deg).round() as usize;
    let Some(t1) = (0..n_theta).max_by_key(|&t| (profile[t], std::cmp::Reverse(t))) else {
        return Vec::new();
    };
    let t2 = (0..n_theta)
        .filter(|&t| circ(t, t1) > band)
        .max_by_key(|&t| (profile[t], std::cmp::Reverse(t)));

    // normal angle near 90 degrees means a near-horizontal line
    let horizontalness = |t: usize| circ(t, n_theta / 2);
    let mut families = vec![t1];
    families.extend(t2);
    let class_of = |t: usize| -> LineClass {
        let other = families.iter().copied().find(|&f| f != t);
        match other {
            Some(o) if horizontalness(o) < horizontalness(t) => LineClass::Vertical,
            Some(_) => LineClass::Horizontal,
            None if horizontalness(t) <= n_theta / 4 => LineClass::Horizontal,
            None => LineClass::Vertical,
        }
    };
    let threshold = |c: LineClass| match c {
        LineClass::Vertical => params.vertical_weight,
        LineClass::Horizontal => params.vertical_weight * params.horizontal_ratio,
    };

    let r = params.nms_radius as i64;
    let mut lines = Vec::new();
    for t in 0..n_theta {
        let Some(&fam) = families.iter().find(|&&f| circ(t, f) <= band) else {
            continue;
        };
        let class = class_of(fam);
        let thr = threshold(class);
        for ri in 0..n_rho {
            let v = acc[t * n_rho + ri];
            if (v as f64) < thr || v == 0 {
                continue;
            }
            let mut is_max = true;
            'nms: for dt in -r..=r {
                let tt = t as i64 + dt;
                // wrapping theta flips the sign of rho
                let (tt, flip) = if tt < 0 {
                    (tt + n_theta as i64, true)
                } else if tt >= n_theta as i64 {
                    (tt - n_theta as i64, true)
                } else {
                    (tt, false)
                };
                for dr in -r..=r {
                    if dt == 0 && dr == 0 {
                        continue;
                    }
                    let rr = ri as i64 + dr;
                    let rr = if flip { 2 * rho_max - rr } else { rr };
                    if rr < 0 || rr >= n_rho as i64 {
                        continue;
                    }
                    let o = acc[tt as usize * n_rho + rr as usize];
                    let earlier = (dt, dr) < (0, 0);
                    if o > v || (o == v && earlier) {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if !is_max {
                continue;
            }
            let theta = t as f64 * step;
            let rho = (ri as i64 - rho_max) as f64 * params.rho_step;
            if let Some(l) = ImageLine::from_normal(theta, rho, (w, h), v as f64) {
                lines.push(l.with_class(Some(class)));
            }
        }
    }
    lines
}

// ---- clustering ----

#[derive(Debug, Clone, PartialEq)]
pub struct LineCluster {
    pub members: Vec<ImageLine>,
    pub representative: ImageLine,
}

fn canonical_order(a: &ImageLine, b: &ImageLine) -> std::cmp::Ordering {
    a.theta
        .total_cmp(&b.theta)
        .then(a.rho.total_cmp(&b.rho))
        .then(a.weight.total_cmp(&b.weight))
        .then(a.p0.x.total_cmp(&b.p0.x))
        .then(a.p0.y.total_cmp(&b.p0.y))
}

/// Vector mean of lines: direction from the mean of doubled angles, position
/// through the mean of the feet of the perpendiculars from the image center.
pub fn mean_line(lines: &[ImageLine]) -> Option<ImageLine> {
    let first = lines.first()?;
    let bounds = first.bounds;
    let center = Point2::new(bounds.0 / 2.0, bounds.1 / 2.0);
    let (mut c2, mut s2) = (0.0, 0.0);
    let mut foot = Vector2::zeros();
    for l in lines {
        let a = 2.0 * l.angle();
        c2 += a.cos();
        s2 += a.sin();
        foot += l.project(&center).coords;
    }
    let angle = 0.5 * s2.atan2(c2);
    let foot = Point2::from(foot / lines.len() as f64);
    let theta = angle + PI / 2.0;
    let n = Vector2::new(theta.cos(), theta.sin());
    let weight = lines.iter().map(|l| l.weight).sum();
    let class = first.class;
    ImageLine::from_normal(theta, n.dot(&foot.coords), bounds, weight).map(|l| l.with_class(class))
}

/// Complete-linkage agglomerative clustering under the Hausdorff line
/// distance, stopped when the closest pair of clusters is at least `stop`
/// apart. The result does not depend on the input order.
pub fn cluster_lines(lines: &[ImageLine], stop: f64) -> Vec<LineCluster> {
    let mut sorted: Vec<ImageLine> = lines
        .iter()
        .copied()
        .filter(|l| (l.p1 - l.p0).norm() >= 1e-12)
        .collect();
    sorted.sort_by(canonical_order);
    let n = sorted.len();
    let mut dist = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = hausdorff_line_distance(&sorted[i], &sorted[j]).expect("non-degenerate");
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut active: Vec<bool> = vec![true; n];
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if !active[j] {
                    continue;
                }
                let d = dist[i * n + j];
                if best.is_none_or(|b| d < b.0) {
                    best = Some((d, i, j));
                }
            }
        }
        let Some((d, i, j)) = best else { break };
        if d >= stop {
            break;
        }
        let moved = std::mem::take(&mut members[j]);
        members[i].extend(moved);
        active[j] = false;
        for k in 0..n {
            let m = dist[i * n + k].max(dist[j * n + k]);
            dist[i * n + k] = m;
            dist[k * n + i] = m;
        }
    }
    members
        .into_iter()
        .zip(active)
        .filter(|(_, a)| *a)
        .filter_map(|(idx, _)| {
            let m: Vec<ImageLine> = idx.iter().map(|&i| sorted[i]).collect();
            let representative = mean_line(&m)?;
            Some(LineCluster {
                members: m,
                representative,
            })
        })
        .collect()
}

// ---- Gaussian sphere ----

/// The two line families with their vanishing directions (unit vectors in
/// camera coordinates).
#[derive(Debug, Clone, PartialEq)]
pub struct LineFamilies {
    pub horizontal: Vec<LineCluster>,
    pub vertical: Vec<LineCluster>,
    pub vanishing: [Vector3<f64>; 2],
}

impl LineFamilies {
    /// `|v1 . v2|` of the two vanishing directions.
    pub fn orthogonality_residual(&self) -> f64 {
        self.vanishing[0].dot(&self.vanishing[1]).abs()
    }
}

/// Normal of the plane through the camera center containing the line.
pub fn great_circle_normal(line: &ImageLine, k: &CameraIntrinsics) -> Vector3<f64> {
    let ray = |p: &Point2<f64>| Vector3::new((p.x - k.cx) / k.fx, (p.y - k.cy) / k.fy, 1.0);
    ray(&line.p0).cross(&ray(&line.p1)).normalize()
}

fn vanishing_direction(normals: &[Vector3<f64>]) -> Vector3<f64> {
    // direction most orthogonal to all normals: smallest eigenvector of N^T N
    let m = normals.iter().fold(Matrix3::zeros(), |a, n| a + n * n.transpose());
    let eig = m.symmetric_eigen();
    let imin = eig.eigenvalues.imin();
    eig.eigenvectors.column(imin).normalize()
}

/// Splits clusters into two families and trims, per family, the lines whose
/// great circle misses the family's vanishing direction by more than
/// `angle_tol`. Fails when a family keeps fewer than two lines.
pub fn filter_perpendicular(
    clusters: &[LineCluster],
    k: &CameraIntrinsics,
    angle_tol: f64,
) -> Result<LineFamilies, EdgeError> {
    if clusters.len() < 2 {
        return Err(EdgeError::FamilyEstimation);
    }
    let seed = clusters
        .iter()
        .max_by(|a, b| a.representative.weight.total_cmp(&b.representative.weight))
        .expect("non-empty");
    let seed_angle = seed.representative.angle();
    let diff = |a: f64| {
        let d = (a - seed_angle).rem_euclid(PI);
        d.min(PI - d)
    };
    let (mut fam_a, mut fam_b): (Vec<&LineCluster>, Vec<&LineCluster>) =
        clusters.iter().partition(|c| diff(c.representative.angle()) < PI / 4.0);

    let tol = angle_tol.sin();
    let trim = |fam: &mut Vec<&LineCluster>| -> Result<Vector3<f64>, EdgeError> {
        if fam.len() < 2 {
            return Err(EdgeError::FamilyEstimation);
        }
        // seed with the pair whose common direction explains the most weight,
        // then drop the worst line until all residuals are within tolerance
        let normals: Vec<_> = fam.iter().map(|c| great_circle_normal(&c.representative, k)).collect();
        let mut best: Option<(usize, f64, Vector3<f64>)> = None;
        for i in 0..normals.len() {
            for j in i + 1..normals.len() {
                let v = normals[i].cross(&normals[j]);
                if v.norm() < 1e-12 {
                    continue;
                }
                let v = v.normalize();
                let inl: Vec<usize> = (0..normals.len()).filter(|&m| normals[m].dot(&v).abs() <= tol).collect();
                let w: f64 = inl.iter().map(|&m| fam[m].representative.weight).sum();
                if best.as_ref().is_none_or(|b| (inl.len(), w) > (b.0, b.1)) {
                    best = Some((inl.len(), w, v));
                }
            }
        }
        if let Some((_, _, v)) = best {
            let keep: Vec<bool> = normals.iter().map(|n| n.dot(&v).abs() <= tol).collect();
            let mut it = keep.iter();
            fam.retain(|_| *it.next().expect("same length"));
        }
        loop {
            if fam.len() < 2 {
                return Err(EdgeError::FamilyEstimation);
            }
            let normals: Vec<_> = fam.iter().map(|c| great_circle_normal(&c.representative, k)).collect();
            let v = vanishing_direction(&normals);
            let (worst, res) = normals
                .iter()
                .map(|n| n.dot(&v).abs())
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .expect("non-empty");
            if res <= tol {
                return Ok(v);
            }
            fam.remove(worst);
        }
    };
    let va = trim(&mut fam_a)?;
    let vb = trim(&mut fam_b)?;

    // the family whose lines run closer to the image x axis is horizontal
    let horizontalness = |fam: &[&LineCluster]| {
        let (c, s) = fam.iter().fold((0.0, 0.0), |(c, s), l| {
            let a = 2.0 * l.representative.angle();
            (c + a.cos(), s + a.sin())
        });
        c / (c * c + s * s).sqrt().max(1e-12)
    };
    let tag = |fam: Vec<&LineCluster>, class: LineClass| -> Vec<LineCluster> {
        fam.into_iter()
            .map(|c| LineCluster {
                members: c.members.clone(),
                representative: c.representative.with_class(Some(class)),
            })
            .collect()
    };
    if horizontalness(&fam_a) >= horizontalness(&fam_b) {
        Ok(LineFamilies {
            horizontal: tag(fam_a, LineClass::Horizontal),
            vertical: tag(fam_b, LineClass::Vertical),
            vanishing: [va, vb],
        })
    } else {
        Ok(LineFamilies {
            horizontal: tag(fam_b, LineClass::Horizontal),
            vertical: tag(fam_a, LineClass::Vertical),
            vanishing: [vb, va],
        })
    }
}

fn aligned_support(line: &ImageLine, pixels: &[(usize, usize, f32)], band: f64, angle_tol: f64) -> Vec<Point2<f64>> {
    let n = line.normal();
    let cos_tol = angle_tol.cos();
    pixels
        .iter()
        .filter_map(|&(x, y, g)| {
            let p = Point2::new(x as f64, y as f64);
            if line.line_distance(&p) > band {
                return None;
            }
            let gd = Vector2::new((g as f64).cos(), (g as f64).sin());
            (gd.dot(&n).abs() >= cos_tol).then_some(p)
        })
        .collect()
}

/// Number of edge pixels within `band` of the line whose gradient is within
/// `angle_tol` of its normal.
pub fn line_support(line: &ImageLine, pixels: &[(usize, usize, f32)], band: f64, angle_tol: f64) -> usize {
    aligned_support(line, pixels, band, angle_tol).len()
}

/// Lines of one grid family never cross inside the image. Going through the
/// lines by decreasing support, drops every line that crosses an already
/// kept line of the same class within the bounds.
pub fn suppress_crossing(clusters: Vec<LineCluster>, support: &[usize], bounds: (f64, f64)) -> Vec<LineCluster> {
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    order.sort_by(|&a, &b| {
        support[b]
            .cmp(&support[a])
            .then(canonical_order(&clusters[a].representative, &clusters[b].representative))
    });
    let inside = |p: &Point2<f64>| p.x >= 0.0 && p.y >= 0.0 && p.x <= bounds.0 && p.y <= bounds.1;
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let l = &clusters[i].representative;
        let crosses = kept.iter().any(|&j| {
            let o = &clusters[j].representative;
            o.class == l.class && o.intersection(l).is_some_and(|p| inside(&p))
        });
        if !crosses {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    let mut it = kept.into_iter().peekable();
    clusters
        .into_iter()
        .enumerate()
        .filter_map(|(i, c)| {
            if it.peek() == Some(&i) {
                it.next();
                Some(c)
            } else {
                None
            }
        })
        .collect()
}

/// Total-least-squares refit of a line to the edge pixels within `band`
/// pixels whose gradient is within `angle_tol` of the line normal. Returns
/// the input line when fewer than `min_pixels` support it.
pub fn refine_line(line: &ImageLine, pixels: &[(usize, usize, f32)], band: f64, angle_tol: f64, min_pixels: usize) -> ImageLine {
    let support = aligned_support(line, pixels, band, angle_tol);
    if support.len() < min_pixels {
        return *line;
    }
    let fit = crate::bbox::fit_line(&support);
    let d = fit.direction;
    let nn = Vector2::new(-d.y, d.x);
    ImageLine::from_normal(nn.y.atan2(nn.x), nn.dot(&fit.point.coords), line.bounds, line.weight)
        .map(|l| l.with_class(line.class))
        .unwrap_or(*line)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const B: (f64, f64) = (100.0, 100.0);

    fn horiz(y: f64) -> ImageLine {
        ImageLine::from_normal(PI / 2.0, y, B, 1.0).unwrap()
    }

    fn vert(x: f64) -> ImageLine {
        ImageLine::from_normal(0.0, x, B, 1.0).unwrap()
    }

    #[test]
    fn clipping_puts_points_on_border() {
        let l = ImageLine::through(Point2::new(10.0, 20.0), Point2::new(30.0, 50.0), B, 1.0).unwrap();
        for p in [l.p0, l.p1] {
            let on = p.x.abs() < 1e-9 || (p.x - 100.0).abs() < 1e-9 || p.y.abs() < 1e-9 || (p.y - 100.0).abs() < 1e-9;
            assert!(on);
            assert!(l.line_distance(&p) < 1e-9);
        }
        assert!(ImageLine::from_normal(0.0, 150.0, B, 1.0).is_none());
    }

    #[test]
    fn hausdorff_examples() {
        assert_eq!(hausdorff_line_distance(&horiz(30.0), &horiz(30.0)).unwrap(), 0.0);
        assert_relative_eq!(hausdorff_line_distance(&horiz(0.0), &horiz(10.0)).unwrap(), 10.0, epsilon = 1e-12);
        assert_relative_eq!(hausdorff_line_distance(&horiz(50.0), &vert(50.0)).unwrap(), 50.0, epsilon = 1e-12);
        let mut degenerate = horiz(5.0);
        degenerate.p1 = degenerate.p0;
        assert_eq!(hausdorff_line_distance(&degenerate, &horiz(1.0)), Err(EdgeError::DegenerateLine));
    }

    #[test]
    fn clustering_examples() {
        let lines = [horiz(0.0), horiz(1.0), horiz(40.0)];
        let c = cluster_lines(&lines, 5.0);
        assert_eq!(c.len(), 2);
        let mut ys: Vec<f64> = c.iter().map(|c| c.representative.rho).collect();
        ys.sort_by(f64::total_cmp);
        assert_relative_eq!(ys[0], 0.5, epsilon = 1e-9);
        assert_relative_eq!(ys[1], 40.0, epsilon = 1e-9);

        let one = cluster_lines(&[horiz(7.0)], 5.0);
        assert_eq!(one.len(), 1);
        assert_relative_eq!(one[0].representative.rho, 7.0, epsilon = 1e-9);
        assert_relative_eq!(one[0].representative.theta, PI / 2.0, epsilon = 1e-12);

        assert_eq!(cluster_lines(&lines, 1e-9).len(), 3);
    }

    fn grid_clusters(k: &CameraIntrinsics) -> Vec<LineCluster> {
        let b = (k.width as f64, k.height as f64);
        let mut lines = Vec::new();
        for y in [100.0, 180.0, 260.0] {
            lines.push(ImageLine::from_normal(PI / 2.0, y, b, 500.0).unwrap());
        }
        for x in [100.0, 140.0, 180.0, 220.0] {
            lines.push(ImageLine::from_normal(0.0, x, b, 200.0).unwrap());
        }
        lines.iter().map(|l| LineCluster { members: vec![*l], representative: *l }).collect()
    }

    #[test]
    fn perpendicular_filter_drops_oblique_line() {
        let k = CameraIntrinsics::pinhole(460.0, 460.0, 399.5, 224.5, 800, 450);
        let mut c = grid_clusters(&k);
        let oblique = ImageLine::through(Point2::new(300.0, 200.0), Point2::new(300.0 + 37f64.to_radians().cos(), 200.0 + 37f64.to_radians().sin()), (800.0, 450.0), 100.0).unwrap();
        c.push(LineCluster { members: vec![oblique], representative: oblique });
        let f = filter_perpendicular(&c, &k, 2f64.to_radians()).unwrap();
        assert_eq!(f.horizontal.len(), 3);
        assert_eq!(f.vertical.len(), 4);
        assert!(f.orthogonality_residual() < 1e-9);
    }

    #[test]
    fn perpendicular_filter_under_tilt() {
        use crate::camera::{project_point, Pose};
        let k = CameraIntrinsics::pinhole(460.0, 460.0, 399.5, 224.5, 800, 450);
        let tilt = 30f64.to_radians();
        let center = nalgebra::Point3::new(0.0, -12.0 * tilt.sin(), 12.0 * tilt.cos());
        let pose = Pose::look_at(center, nalgebra::Point3::origin(), Vector3::y());
        let b = (800.0, 450.0);
        let mut clusters = Vec::new();
        let mut line = |a: nalgebra::Point3<f64>, c: nalgebra::Point3<f64>| {
            let pa = project_point(&a, &pose, &k, false).pixel;
            let pc = project_point(&c, &pose, &k, false).pixel;
            let l = ImageLine::through(pa, pc, b, 100.0).unwrap();
            clusters.push(LineCluster { members: vec![l], representative: l });
        };
        for y in [-2.0, 0.0, 2.0] {
            line(nalgebra::Point3::new(-5.0, y, 0.0), nalgebra::Point3::new(5.0, y, 0.0));
        }
        for x in [-3.0, -1.0, 1.0, 3.0] {
            line(nalgebra::Point3::new(x, -2.0, 0.0), nalgebra::Point3::new(x, 2.0, 0.0));
        }
        let tol = 1f64.to_radians();
        let f = filter_perpendicular(&clusters, &k, tol).unwrap();
        assert_eq!((f.horizontal.len(), f.vertical.len()), (3, 4));
        assert!(f.orthogonality_residual() < tol.sin());
    }

    #[test]
    fn parallel_only_fails() {
        let k = CameraIntrinsics::pinhole(460.0, 460.0, 399.5, 224.5, 800, 450);
        let c: Vec<_> = grid_clusters(&k).into_iter().take(3).collect();
        assert_eq!(filter_perpendicular(&c, &k, 0.03), Err(EdgeError::FamilyEstimation));
    }

    fn arb_line() -> impl Strategy<Value = ImageLine> {
        (0.0f64..PI, -20.0f64..160.0).prop_filter_map("misses image", |(t, r)| ImageLine::from_normal(t, r, B, 1.0))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn hausdorff_is_a_metric(a in arb_line(), b in arb_line(), c in arb_line()) {
            let ab = hausdorff_line_distance(&a, &b).unwrap();
            let ba = hausdorff_line_distance(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert_eq!(hausdorff_line_distance(&a, &a).unwrap(), 0.0);
            let ac = hausdorff_line_distance(&a, &c).unwrap();
            let bc = hausdorff_line_distance(&b, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-9);
        }
    }

    proptest! {
        #[test]
        fn clustering_ignores_order(ys in proptest::collection::vec(0.0f64..100.0, 1..20), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let lines: Vec<_> = ys.iter().map(|&y| horiz(y)).collect();
            let mut shuffled = lines.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(cluster_lines(&lines, 6.0), cluster_lines(&shuffled, 6.0));
        }
    }
}
