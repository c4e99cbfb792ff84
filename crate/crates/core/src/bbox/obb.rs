//! Oriented bounding boxes, minimum-area rectangles, and polygon overlap.

use nalgebra::{Point2, Vector2};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ObbError {
    #[error("contour needs at least 3 non-collinear points")]
    Collinear,
}

/// Rotated rectangle `[x_c, y_c, w, h, alpha]` with a detection confidence.
///
/// Canonical form has `w >= h` and `alpha` in `[0, pi)`, the angle of the
/// long side measured from the image x axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBBox {
    pub x_c: f64,
    pub y_c: f64,
    pub w: f64,
    pub h: f64,
    pub alpha: f64,
    pub confidence: f64,
}

impl OrientedBBox {
    pub fn new(x_c: f64, y_c: f64, w: f64, h: f64, alpha: f64, confidence: f64) -> Self {
        Self {
            x_c,
            y_c,
            w,
            h,
            alpha,
            confidence,
        }
        .canonical()
    }

    pub fn canonical(mut self) -> Self {
        if self.w < self.h {
            std::mem::swap(&mut self.w, &mut self.h);
            self.alpha += FRAC_PI_2;
        }
        // squares are symmetric under quarter turns
        let period = if (self.w - self.h).abs() <= 1e-9 * self.w.max(1.0) {
            FRAC_PI_2
        } else {
            PI
        };
        self.alpha = self.alpha.rem_euclid(period);
        if period - self.alpha < 1e-12 {
            self.alpha = 0.0;
        }
        self
    }

    pub fn center(&self) -> Point2<f64> {
        Point2::new(self.x_c, self.y_c)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Corners in polygon order (counter-clockwise in a y-down image).
    pub fn polygon(&self) -> [Point2<f64>; 4] {
        let (s, c) = self.alpha.sin_cos();
        let du = Vector2::new(c, s) * (self.w / 2.0);
        let dv = Vector2::new(-s, c) * (self.h / 2.0);
        let o = self.center();
        [o - du - dv, o + du - dv, o + du + dv, o - du + dv]
    }

    /// Corners ordered top-left, top-right, bottom-right, bottom-left.
    pub fn image_corners(&self) -> [Point2<f64>; 4] {
        order_quad(self.polygon())
    }

    pub fn iou(&self, other: &OrientedBBox) -> f64 {
        let inter = convex_intersection_area(&self.polygon(), &other.polygon());
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

/// Orders four corners as top-left, top-right, bottom-right, bottom-left.
pub fn order_quad(q: [Point2<f64>; 4]) -> [Point2<f64>; 4] {
    let c = (q[0].coords + q[1].coords + q[2].coords + q[3].coords) / 4.0;
    let mut pts = q;
    // angular sort around the centroid
    pts.sort_by(|a, b| {
        let ka = angle_key(a.coords - c);
        let kb = angle_key(b.coords - c);
        ka.total_cmp(&kb)
    });
    pts
}

fn angle_key(d: Vector2<f64>) -> f64 {
    // clockwise on screen starting from the -x direction
    (d.y.atan2(d.x) + PI).rem_euclid(2.0 * PI)
}

/// Convex hull by Andrew's monotone chain, counter-clockwise, no collinear
/// points.
pub fn convex_hull(points: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let mut pts: Vec<Point2<f64>> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>| {
        (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
    };
    let mut hull: Vec<Point2<f64>> = Vec::with_capacity(2 * pts.len());
    for p in &pts {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    // the upper chain must not pop into the lower one
    let lower = hull.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    hull
}

/// Minimum-area rectangle among those aligned with the convex hull edges.
pub fn min_bounding_rect(contour: &[Point2<f64>]) -> Result<OrientedBBox, ObbError> {
    let hull = convex_hull(contour);
    if hull.len() < 3 || polygon_area(&hull) <= 1e-12 {
        return Err(ObbError::Collinear);
    }
    let mut best: Option<(f64, OrientedBBox)> = None;
    for i in 0..hull.len() {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        let e = (b - a).normalize();
        let n = Vector2::new(-e.y, e.x);
        let (mut lo_e, mut hi_e, mut lo_n, mut hi_n) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in &hull {
            let d = p.coords;
            let pe = d.dot(&e);
            let pn = d.dot(&n);
            lo_e = lo_e.min(pe);
            hi_e = hi_e.max(pe);
            lo_n = lo_n.min(pn);
            hi_n = hi_n.max(pn);
        }
        let area = (hi_e - lo_e) * (hi_n - lo_n);
        if best.as_ref().is_none_or(|(ba, _)| area < *ba - 1e-12) {
            let mid_e = (lo_e + hi_e) / 2.0;
            let mid_n = (lo_n + hi_n) / 2.0;
            let c = e * mid_e + n * mid_n;
            let obb = OrientedBBox::new(c.x, c.y, hi_e - lo_e, hi_n - lo_n, e.y.atan2(e.x), 1.0);
            best = Some((area, obb));
        }
    }
    Ok(best.expect("hull has edges").1)
}

/// Shoelace area (absolute).
pub fn polygon_area(poly: &[Point2<f64>]) -> f64 {
    let n = poly.len();
    let mut s = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        s += a.x * b.y - b.x * a.y;
    }
    (s / 2.0).abs()
}

fn signed_area(poly: &[Point2<f64>]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        / 2.0
}

/// Intersection area of two convex polygons (Sutherland–Hodgman).
pub fn convex_intersection_area(subject: &[Point2<f64>], clip: &[Point2<f64>]) -> f64 {
    let mut clip = clip.to_vec();
    if signed_area(&clip) < 0.0 {
        clip.reverse();
    }
    let mut out: Vec<Point2<f64>> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if out.is_empty() {
            return 0.0;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let side = |p: &Point2<f64>| (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let p = input[j];
            let q = input[(j + 1) % input.len()];
            let sp = side(&p);
            let sq = side(&q);
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                let t = sp / (sp - sq);
                out.push(p + (q - p) * t);
            }
        }
    }
    if out.len() < 3 {
        0.0
    } else {
        polygon_area(&out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn p(x: f64, y: f64) -> Point2<f64> {
        Point2::new(x, y)
    }

    #[test]
    fn axis_aligned_rectangle_keeps_all_corners() {
        // ties in x used to let the upper chain eat the lower one
        let r = [p(476.0, 147.0), p(515.0, 147.0), p(515.0, 224.0), p(476.0, 224.0)];
        assert_eq!(convex_hull(&r).len(), 4);
        let b = min_bounding_rect(&r).unwrap();
        assert_relative_eq!(b.w.max(b.h), 77.0, epsilon = 1e-9);
        assert_relative_eq!(b.w.min(b.h), 39.0, epsilon = 1e-9);
    }

    #[test]
    fn unit_square() {
        let b = min_bounding_rect(&[p(0.0, 0.0), p(1.0, 0.0), p(1.0, 1.0), p(0.0, 1.0)]).unwrap();
        assert_relative_eq!(b.x_c, 0.5, epsilon = 1e-12);
        assert_relative_eq!(b.y_c, 0.5, epsilon = 1e-12);
        assert_relative_eq!(b.w, 1.0, epsilon = 1e-12);
        assert_relative_eq!(b.h, 1.0, epsilon = 1e-12);
        assert_relative_eq!(b.alpha, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rotated_square() {
        let t = std::f64::consts::FRAC_PI_4;
        let (s, c) = t.sin_cos();
        let rot = |x: f64, y: f64| {
            let (dx, dy) = (x - 0.5, y - 0.5);
            p(0.5 + c * dx - s * dy, 0.5 + s * dx + c * dy)
        };
        let b = min_bounding_rect(&[rot(0.0, 0.0), rot(1.0, 0.0), rot(1.0, 1.0), rot(0.0, 1.0)]).unwrap();
        assert_relative_eq!(b.x_c, 0.5, epsilon = 1e-12);
        assert_relative_eq!(b.y_c, 0.5, epsilon = 1e-12);
        assert_relative_eq!(b.w, 1.0, epsilon = 1e-12);
        assert_relative_eq!(b.h, 1.0, epsilon = 1e-12);
        assert_relative_eq!(b.alpha, t, epsilon = 1e-12);
    }

    #[test]
    fn collinear_rejected() {
        let err = min_bounding_rect(&[p(0.0, 0.0), p(1.0, 1.0), p(2.0, 2.0)]).unwrap_err();
        assert_eq!(err, ObbError::Collinear);
    }

    #[test]
    fn canonical_swaps_sides() {
        let b = OrientedBBox::new(0.0, 0.0, 2.0, 5.0, 0.0, 1.0);
        assert_eq!((b.w, b.h), (5.0, 2.0));
        assert_relative_eq!(b.alpha, FRAC_PI_2);
        let b = OrientedBBox::new(0.0, 0.0, 5.0, 2.0, -0.1, 1.0);
        assert_relative_eq!(b.alpha, PI - 0.1);
    }

    #[test]
    fn iou_of_identical_and_disjoint() {
        let a = OrientedBBox::new(10.0, 10.0, 4.0, 2.0, 0.3, 1.0);
        assert_relative_eq!(a.iou(&a), 1.0, epsilon = 1e-9);
        let b = OrientedBBox::new(30.0, 10.0, 4.0, 2.0, 0.3, 1.0);
        assert_eq!(a.iou(&b), 0.0);
        // half overlap of axis-aligned boxes: inter 4, union 12
        let c = OrientedBBox::new(0.0, 0.0, 4.0, 2.0, 0.0, 1.0);
        let d = OrientedBBox::new(2.0, 0.0, 4.0, 2.0, 0.0, 1.0);
        assert_relative_eq!(c.iou(&d), 4.0 / 12.0, epsilon = 1e-12);
    }

    #[test]
    fn image_corner_order() {
        let b = OrientedBBox::new(10.0, 20.0, 4.0, 2.0, 0.1, 1.0);
        let [tl, tr, br, bl] = b.image_corners();
        assert!(tl.x < tr.x && bl.x < br.x);
        assert!(tl.y < bl.y && tr.y < br.y);
    }

    proptest! {
        #[test]
        fn area_never_exceeds_axis_aligned_box(
            pts in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 3..30)
        ) {
            let pts: Vec<_> = pts.into_iter().map(|(x, y)| p(x, y)).collect();
            let hull = convex_hull(&pts);
            prop_assume!(hull.len() >= 3 && polygon_area(&hull) > 1e-6);
            let b = min_bounding_rect(&pts).unwrap();
            let (x0, x1) = pts.iter().fold((f64::MAX, f64::MIN), |(a, b), q| (a.min(q.x), b.max(q.x)));
            let (y0, y1) = pts.iter().fold((f64::MAX, f64::MIN), |(a, b), q| (a.min(q.y), b.max(q.y)));
            prop_assert!(b.area() <= (x1 - x0) * (y1 - y0) + 1e-9);
            prop_assert!(b.area() >= polygon_area(&hull) - 1e-9);
        }
    }
}
