//! Visual anchors (bench ends and gaps) and frame-to-frame module tracking.

use crate::imaging::Image;
use crate::plant::{AnchorKind, EndSide, ObservedAnchor};
use crate::structure::{LogicalCoord, SemanticStructure, StructuredDetection};
use nalgebra::{Matrix2, Point2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

// ---- gaps ----

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GapParams {
    /// Spacing above this multiple of the median spacing is a gap candidate.
    pub spacing_factor: f64,
    pub bins: usize,
    /// Minimum Bhattacharyya distance to the median intra-bench transition.
    pub distance_threshold: f64,
    /// The candidate patch mean must be below this fraction of the median
    /// intra-bench transition mean.
    pub darkness_ratio: f64,
    /// Patch size relative to the module size (along, across the row).
    pub patch_along: f64,
    pub patch_across: f64,
}

impl Default for GapParams {
    fn default() -> Self {
        Self {
            spacing_factor: 1.5,
            bins: 32,
            distance_threshold: 0.3,
            darkness_ratio: 0.7,
            patch_along: 0.5,
            patch_across: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapObservation {
    pub row: usize,
    /// Sequence positions of the detections before and after the gap.
    pub between: (i64, i64),
    /// Center of the transition patch [px].
    pub position: Point2<f64>,
    /// Bhattacharyya distance to the median intra-bench transition.
    pub distance: f64,
    /// Patch mean over the median intra-bench transition mean.
    pub darkness: f64,
}

impl GapObservation {
    pub fn anchor(&self, hint: Option<String>) -> ObservedAnchor {
        ObservedAnchor {
            kind: AnchorKind::BenchGap,
            row: self.row,
            seq: self.between.0,
            seq_after: Some(self.between.1),
            side: None,
            hint,
        }
    }
}

struct Patch {
    hist: Vec<f64>,
    mean: f64,
    center: Point2<f64>,
}

fn along_size(d: &StructuredDetection) -> f64 {
    let c = d.footprint.corners();
    0.5 * ((c[1] - c[0]).norm() + (c[2] - c[3]).norm())
}

fn across_size(d: &StructuredDetection) -> f64 {
    let c = d.footprint.corners();
    0.5 * ((c[3] - c[0]).norm() + (c[2] - c[1]).norm())
}

/// Intensity histogram of the rectangle between two neighbouring detections,
/// centered at the midpoint of the facing edges.
fn transition_patch(a: &StructuredDetection, b: &StructuredDetection, image: &Image, p: &GapParams) -> Option<Patch> {
    let (ca, cb) = (a.center(), b.center());
    let d = cb - ca;
    let len = d.norm();
    if len < 1e-9 {
        return None;
    }
    let u = d / len;
    let v = Vector2::new(-u.y, u.x);
    let (wa, wb) = (along_size(a), along_size(b));
    // midpoint between the facing module edges
    let center = ca + u * (0.5 * wa + 0.5 * (len - 0.5 * wa - 0.5 * wb));
    let w = p.patch_along * 0.5 * (wa + wb);
    let h = p.patch_across * 0.5 * (across_size(a) + across_size(b));
    let (nu, nv) = ((w.ceil() as usize).max(2), (h.ceil() as usize).max(2));
    let mut hist = vec![0.0; p.bins];
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..nu {
        for j in 0..nv {
            let su = (i as f64 + 0.5) / nu as f64 - 0.5;
            let sv = (j as f64 + 0.5) / nv as f64 - 0.5;
            let q = center + u * (su * w) + v * (sv * h);
            if let Some(val) = image.sample(q.x, q.y) {
                let bin = ((val as f64 / 256.0 * p.bins as f64) as usize).min(p.bins - 1);
                hist[bin] += 1.0;
                sum += val as f64;
                n += 1;
            }
        }
    }
    if n == 0 {
        return None;
    }
    hist.iter_mut().for_each(|h| *h /= n as f64);
    Some(Patch {
        hist,
        mean: sum / n as f64,
        center,
    })
}

/// `sqrt(1 - sum sqrt(p q))` of two normalized histograms.
pub fn bhattacharyya_distance(p: &[f64], q: &[f64]) -> f64 {
    let bc: f64 = p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).sum();
    (1.0 - bc.min(1.0)).max(0.0).sqrt()
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(v[v.len() / 2])
}

/// Gap candidates are consecutive detections of a row spaced more than
/// `spacing_factor` times the median spacing. A candidate is confirmed when
/// its transition patch differs from the median intra-bench transition
/// (Bhattacharyya distance above the threshold) and is darker.
pub fn detect_bench_gaps(structure: &SemanticStructure, image: &Image, params: &GapParams) -> Vec<GapObservation> {
    let rows: Vec<Vec<&StructuredDetection>> = (0..structure.row_count()).map(|r| structure.row(r)).collect();
    if !rows.iter().any(|r| r.len() >= 3) {
        return Vec::new();
    }
    let spacing = |a: &StructuredDetection, b: &StructuredDetection| (b.center() - a.center()).norm();
    let Some(med) = median(
        rows.iter()
            .flat_map(|r| r.windows(2).map(|w| spacing(w[0], w[1])))
            .collect(),
    ) else {
        return Vec::new();
    };

    let mut intra = Vec::new();
    let mut candidates = Vec::new();
    for (r, row) in rows.iter().enumerate() {
        for w in row.windows(2) {
            let s = spacing(w[0], w[1]);
            if s > params.spacing_factor * med {
                candidates.push((r, w[0], w[1]));
            } else if let Some(p) = transition_patch(w[0], w[1], image, params) {
                intra.push(p);
            }
        }
    }
    if intra.is_empty() {
        return Vec::new();
    }
    let mut reference: Vec<f64> = (0..params.bins)
        .map(|b| median(intra.iter().map(|p| p.hist[b]).collect()).unwrap_or(0.0))
        .collect();
    let total: f64 = reference.iter().sum();
    if total > 0.0 {
        reference.iter_mut().for_each(|v| *v /= total);
    }
    let ref_mean = median(intra.iter().map(|p| p.mean).collect()).unwrap_or(0.0);

    candidates
        .into_iter()
        .filter_map(|(r, a, b)| {
            let p = transition_patch(a, b, image, params)?;
            let distance = bhattacharyya_distance(&p.hist, &reference);
            let darkness = if ref_mean > 0.0 { p.mean / ref_mean } else { f64::INFINITY };
            (distance > params.distance_threshold && darkness < params.darkness_ratio).then_some(GapObservation {
                row: r,
                between: (a.coord.seq, b.coord.seq),
                position: p.center,
                distance,
                darkness,
            })
        })
        .collect()
}

// ---- ends ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndObservation {
    pub row: usize,
    pub seq: i64,
    /// Start: first position along the flight direction; End: last.
    pub side: EndSide,
    pub position: Point2<f64>,
}

impl EndObservation {
    pub fn anchor(&self, hint: Option<String>) -> ObservedAnchor {
        ObservedAnchor {
            kind: AnchorKind::BenchEnd,
            row: self.row,
            seq: self.seq,
            seq_after: None,
            side: Some(self.side),
            hint,
        }
    }
}

/// First and last detection of every row. An end is reported only when the
/// module's outer edge is more than `margin_factor` module widths (along the
/// row) from the image border, so a further module would have been visible.
pub fn detect_bench_ends(structure: &SemanticStructure, image_size: (u32, u32), margin_factor: f64) -> Vec<EndObservation> {
    let width = image_size.0 as f64;
    let mut out = Vec::new();
    for r in 0..structure.row_count() {
        let row = structure.row(r);
        let (Some(first), Some(last)) = (row.first(), row.last()) else {
            continue;
        };
        let Some(along) = median(row.iter().map(|d| along_size(d)).collect()) else {
            continue;
        };
        let margin = margin_factor * along;
        let xs = |d: &StructuredDetection| {
            let c = d.footprint.corners();
            let min = c.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
            let max = c.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
            (min, max)
        };
        if xs(first).0 > margin {
            out.push(EndObservation {
                row: r,
                seq: first.coord.seq,
                side: EndSide::Start,
                position: first.center(),
            });
        }
        if xs(last).1 < width - margin {
            out.push(EndObservation {
                row: r,
                seq: last.coord.seq,
                side: EndSide::End,
                position: last.center(),
            });
        }
    }
    out
}

// ---- optical flow ----

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowParams {
    pub levels: usize,
    /// Odd window size [px].
    pub window: usize,
    pub iterations: usize,
    /// Minimum eigenvalue of the window's gradient matrix per pixel.
    pub min_eigen: f64,
    /// Maximum mean absolute intensity difference after alignment.
    pub max_residual: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            levels: 4,
            window: 15,
            iterations: 10,
            min_eigen: 1.0,
            max_residual: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowEstimate {
    pub displacement: Vector2<f64>,
    pub valid: bool,
}

/// Image pyramid for flow; level 0 is the full-resolution image and each
/// further level averages 2x2 blocks.
#[derive(Debug, Clone)]
pub struct FlowPyramid {
    levels: Vec<Image>,
}

impl FlowPyramid {
    pub fn new(img: &Image, levels: usize) -> Self {
        let mut out = vec![img.clone()];
        for _ in 1..levels.max(1) {
            let last = out.last().expect("level 0");
            if last.width < 2 || last.height < 2 {
                break;
            }
            out.push(last.downsample());
        }
        Self { levels: out }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.levels[0].dims()
    }
}

fn sample_clamped(img: &Image, x: f64, y: f64) -> f32 {
    let x = x.clamp(0.0, (img.width - 1) as f64);
    let y = y.clamp(0.0, (img.height - 1) as f64);
    img.sample(x, y).unwrap_or(0.0)
}

/// Bilinear samples of the `n x n` grid with top-left corner `(x, y)` and
/// unit spacing, row-major into `out`. All samples share one sub-pixel
/// offset, so the weights are computed once; grids reaching outside the
/// image fall back to clamped sampling.
fn sample_grid(img: &Image, x: f64, y: f64, n: usize, out: &mut Vec<f32>) {
    out.clear();
    let (x0, y0) = (x.floor(), y.floor());
    let inside = x0 >= 0.0 && y0 >= 0.0 && x0 + n as f64 + 1.0 <= (img.width - 1) as f64 && y0 + n as f64 + 1.0 <= (img.height - 1) as f64;
    if !inside {
        for j in 0..n {
            for i in 0..n {
                out.push(sample_clamped(img, x + i as f64, y + j as f64));
            }
        }
        return;
    }
    // same arithmetic as `Image::sample`
    let (fx, fy) = ((x - x0) as f32, (y - y0) as f32);
    let (bx, by, w) = (x0 as usize, y0 as usize, img.width);
    for j in 0..n {
        let r0 = &img.data[(by + j) * w + bx..(by + j) * w + bx + n + 1];
        let r1 = &img.data[(by + j + 1) * w + bx..(by + j + 1) * w + bx + n + 1];
        for i in 0..n {
            let a = r0[i] * (1.0 - fx) + r0[i + 1] * fx;
            let b = r1[i] * (1.0 - fx) + r1[i + 1] * fx;
            out.push(a * (1.0 - fy) + b * fy);
        }
    }
}

/// Pyramidal Lucas-Kanade displacement of `points` from `prev` to `cur`.
/// Points whose window lacks texture in two directions are invalid.
pub fn estimate_flow(prev: &Image, cur: &Image, points: &[Point2<f64>], params: &FlowParams) -> Vec<FlowEstimate> {
    if prev.dims() != cur.dims() {
        return vec![FlowEstimate::INVALID; points.len()];
    }
    let pa = FlowPyramid::new(prev, params.levels);
    let pb = FlowPyramid::new(cur, params.levels);
    estimate_flow_pyramids(&pa, &pb, points, params)
}

impl FlowEstimate {
    const INVALID: FlowEstimate = FlowEstimate {
        displacement: Vector2::new(0.0, 0.0),
        valid: false,
    };
}

/// [`estimate_flow`] on prebuilt pyramids, so that each frame's pyramid is
/// built once.
pub fn estimate_flow_pyramids(
    prev: &FlowPyramid,
    cur: &FlowPyramid,
    points: &[Point2<f64>],
    params: &FlowParams,
) -> Vec<FlowEstimate> {
    let (w, h) = prev.dims();
    if prev.dims() != cur.dims() || w < 2 || h < 2 {
        return vec![FlowEstimate::INVALID; points.len()];
    }
    points.par_iter().map(|p| flow_point(prev, cur, *p, params)).collect()
}

fn flow_point(pa: &FlowPyramid, pb: &FlowPyramid, p: Point2<f64>, params: &FlowParams) -> FlowEstimate {
    let invalid = FlowEstimate::INVALID;
    let half = params.window / 2;
    let n = 2 * half + 1;
    let area = (n * n) as f64;
    let h = half as f64;
    let (w0, h0) = pa.dims();
    // the window must lie inside the image; clamped samples do not move
    if !(p.x >= h && p.y >= h && p.x <= (w0 - 1) as f64 - h && p.y <= (h0 - 1) as f64 - h) {
        return invalid;
    }
    let levels = pa.levels.len().min(pb.levels.len());
    let mut g = Vector2::zeros();
    let mut min_eig0 = 0.0;
    let mut residual = f64::INFINITY;
    let (mut ext, mut cur) = (Vec::new(), Vec::new());
    let (mut i0, mut ix, mut iy) = (vec![0f32; n * n], vec![0f32; n * n], vec![0f32; n * n]);
    for l in (0..levels).rev() {
        let s = (1u64 << l) as f64;
        let c = Point2::new(p.x / s, p.y / s);
        let (la, lb) = (&pa.levels[l], &pb.levels[l]);
        // coarse levels whose window crosses the border are skipped
        let (lw, lh) = ((la.width - 1) as f64, (la.height - 1) as f64);
        if l > 0 && !(c.x >= h && c.y >= h && c.x <= lw - h && c.y <= lh - h) {
            g *= 2.0;
            continue;
        }
        // window plus a one pixel ring for central differences
        sample_grid(la, c.x - h - 1.0, c.y - h - 1.0, n + 2, &mut ext);
        let m = n + 2;
        let mut gm = Matrix2::zeros();
        for j in 0..n {
            for i in 0..n {
                let e = (j + 1) * m + i + 1;
                let k = j * n + i;
                i0[k] = ext[e];
                ix[k] = 0.5 * (ext[e + 1] - ext[e - 1]);
                iy[k] = 0.5 * (ext[e + m] - ext[e - m]);
                let (gx, gy) = (ix[k] as f64, iy[k] as f64);
                gm += Matrix2::new(gx * gx, gx * gy, gx * gy, gy * gy);
            }
        }
        let eig = gm.symmetric_eigen().eigenvalues.min() / area;
        if l == 0 {
            min_eig0 = eig;
        }
        let Some(inv) = gm.try_inverse() else {
            if l == 0 {
                return invalid;
            }
            g *= 2.0;
            continue;
        };
        let mut nu = Vector2::zeros();
        for _ in 0..params.iterations {
            sample_grid(lb, c.x - h + g.x + nu.x, c.y - h + g.y + nu.y, n, &mut cur);
            let (mut bx, mut by) = (0f64, 0f64);
            for k in 0..n * n {
                let dt = (i0[k] - cur[k]) as f64;
                bx += dt * ix[k] as f64;
                by += dt * iy[k] as f64;
            }
            let eta = inv * Vector2::new(bx, by);
            nu += eta;
            if eta.norm() < 0.01 {
                break;
            }
        }
        g = if l == 0 { g + nu } else { 2.0 * (g + nu) };
        if l == 0 {
            sample_grid(lb, c.x - h + g.x, c.y - h + g.y, n, &mut cur);
            residual = i0.iter().zip(&cur).map(|(a, b)| (a - b).abs() as f64).sum::<f64>() / area;
        }
    }
    let valid = min_eig0 >= params.min_eigen && residual <= params.max_residual && g.iter().all(|v| v.is_finite());
    FlowEstimate {
        displacement: if valid { g } else { Vector2::zeros() },
        valid,
    }
}

// ---- tracks ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: u64,
    /// Corners (top-left, top-right, bottom-right, bottom-left) and center.
    pub points: [Point2<f64>; 5],
    pub coord: LogicalCoord,
    pub module: Option<String>,
    /// Frames with a matched detection.
    pub age: usize,
    pub last_seen: usize,
    /// Consecutive frames without a match.
    pub missing: usize,
    /// Last image motion per frame [px], used while the track is missing.
    pub motion: Vector2<f64>,
}

impl Track {
    pub fn center(&self) -> Point2<f64> {
        self.points[4]
    }
}

fn feature_points(d: &StructuredDetection) -> [Point2<f64>; 5] {
    let c = d.footprint.corners();
    [c[0], c[1], c[2], c[3], d.center()]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackParams {
    /// Matching threshold as a fraction of the representative short side.
    pub match_fraction: f64,
    pub max_missing: usize,
}

impl Default for TrackParams {
    fn default() -> Self {
        Self {
            match_fraction: 0.25,
            max_missing: 5,
        }
    }
}

/// Tracks of one flight. Ids are never reused.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackSet {
    pub tracks: Vec<Track>,
    next_id: u64,
}

impl TrackSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: u64) -> Option<&Track> {
        self.tracks.iter().find(|t| t.id == id)
    }

    pub fn get_mut(&mut self, id: u64) -> Option<&mut Track> {
        self.tracks.iter_mut().find(|t| t.id == id)
    }

    /// Median flow of each track's feature points. Tracks without a valid
    /// point, or far off the median motion of all tracks of the frame, take
    /// that median; `None` when no track has a valid point.
    pub fn flow_motion(&self, prev: &Image, cur: &Image, params: &FlowParams) -> Vec<Option<Vector2<f64>>> {
        let pa = FlowPyramid::new(prev, params.levels);
        let pb = FlowPyramid::new(cur, params.levels);
        self.flow_motion_pyramids(&pa, &pb, params)
    }

    /// [`TrackSet::flow_motion`] on prebuilt pyramids.
    pub fn flow_motion_pyramids(
        &self,
        prev: &FlowPyramid,
        cur: &FlowPyramid,
        params: &FlowParams,
    ) -> Vec<Option<Vector2<f64>>> {
        let pts: Vec<Point2<f64>> = self.tracks.iter().flat_map(|t| t.points).collect();
        let flow = estimate_flow_pyramids(prev, cur, &pts, params);
        let own: Vec<Option<Vector2<f64>>> = flow
            .chunks(5)
            .map(|f| {
                let valid: Vec<Vector2<f64>> = f.iter().filter(|e| e.valid).map(|e| e.displacement).collect();
                median_vector(&valid)
            })
            .collect();
        let all: Vec<Vector2<f64>> = own.iter().flatten().copied().collect();
        let Some(global) = median_vector(&all) else {
            return own;
        };
        // the scene is nearly planar and the camera moves rigidly: motions far
        // from the frame median are flow failures
        let spread = median(all.iter().map(|m| (m - global).norm()).collect()).unwrap_or(0.0);
        let limit = (3.0 * spread).max(2.0);
        own.into_iter()
            .map(|m| Some(m.filter(|m| (m - global).norm() <= limit).unwrap_or(global)))
            .collect()
    }
}

fn median_vector(v: &[Vector2<f64>]) -> Option<Vector2<f64>> {
    Some(Vector2::new(
        median(v.iter().map(|d| d.x).collect())?,
        median(v.iter().map(|d| d.y).collect())?,
    ))
}

/// Matches detections to tracks greedily by ascending distance between the
/// predicted track center (moved by `motion`, or by the track's last motion
/// when `None`) and the detection center. Unmatched detections open new
/// tracks; unmatched tracks coast for at most `max_missing` frames. Writes
/// the track ids into `detections` and returns them.
pub fn track_modules(
    set: &mut TrackSet,
    motion: &[Option<Vector2<f64>>],
    detections: &mut [StructuredDetection],
    frame: usize,
    threshold: f64,
    max_missing: usize,
) -> Vec<u64> {
    let predicted: Vec<Vector2<f64>> = set
        .tracks
        .iter()
        .enumerate()
        .map(|(i, t)| motion.get(i).copied().flatten().unwrap_or(t.motion))
        .collect();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (ti, t) in set.tracks.iter().enumerate() {
        let pc = t.center() + predicted[ti];
        for (di, d) in detections.iter().enumerate() {
            let dist = (d.center() - pc).norm();
            if dist < threshold {
                pairs.push((dist, ti, di));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut track_used = vec![false; set.tracks.len()];
    let mut det_track: Vec<Option<usize>> = vec![None; detections.len()];
    for (_, ti, di) in pairs {
        if track_used[ti] || det_track[di].is_some() {
            continue;
        }
        track_used[ti] = true;
        det_track[di] = Some(ti);
    }

    for (ti, t) in set.tracks.iter_mut().enumerate() {
        if track_used[ti] {
            continue;
        }
        t.missing += 1;
        let m = predicted[ti];
        t.points.iter_mut().for_each(|p| *p += m);
        t.motion = m;
    }
    let mut ids = Vec::with_capacity(detections.len());
    for (di, d) in detections.iter_mut().enumerate() {
        let pts = feature_points(d);
        let id = match det_track[di] {
            Some(ti) => {
                let t = &mut set.tracks[ti];
                // the observed motion over the frames since the last match
                let frames = (t.missing + 1) as f64;
                t.motion = (pts[4] - t.center()) / frames;
                t.points = pts;
                t.coord = d.coord;
                t.age += 1;
                t.last_seen = frame;
                t.missing = 0;
                t.id
            }
            None => {
                let id = set.next_id;
                set.next_id += 1;
                set.tracks.push(Track {
                    id,
                    points: pts,
                    coord: d.coord,
                    module: None,
                    age: 1,
                    last_seen: frame,
                    missing: 0,
                    motion: Vector2::zeros(),
                });
                id
            }
        };
        d.track = Some(id);
        ids.push(id);
    }
    set.tracks.retain(|t| t.missing <= max_missing);
    ids
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::{FlightDirection, Footprint};

    fn quad(x: f64, y: f64, w: f64, h: f64) -> Footprint {
        Footprint::Quad([
            Point2::new(x, y),
            Point2::new(x + w, y),
            Point2::new(x + w, y + h),
            Point2::new(x, y + h),
        ])
    }

    fn det(x: f64, y: f64, seq: i64) -> StructuredDetection {
        StructuredDetection {
            footprint: quad(x, y, 30.0, 60.0),
            coord: LogicalCoord { row: 0, seq },
            track: None,
        }
    }

    fn row_structure(xs: &[f64]) -> SemanticStructure {
        SemanticStructure {
            detections: xs.iter().enumerate().map(|(i, &x)| det(x, 100.0, i as i64)).collect(),
            rows: Vec::new(),
            representative: (60.0, 30.0),
            direction: FlightDirection::Forward,
        }
    }

    #[test]
    fn ends_respect_margin() {
        let s = row_structure(&[100.0, 132.0, 164.0]);
        let ends = detect_bench_ends(&s, (400, 300), 1.5);
        assert_eq!(ends.len(), 2);
        assert_eq!((ends[0].side, ends[0].seq), (EndSide::Start, 0));
        assert_eq!((ends[1].side, ends[1].seq), (EndSide::End, 2));
        let s = row_structure(&[300.0, 332.0, 364.0]);
        let ends = detect_bench_ends(&s, (400, 300), 1.5);
        assert_eq!(ends.len(), 1);
        assert_eq!(ends[0].side, EndSide::Start);
        assert!(detect_bench_ends(&SemanticStructure::default(), (400, 300), 1.5).is_empty());
    }

    #[test]
    fn uniform_row_has_no_gap() {
        let img = Image::new(400, 300, 90.0);
        let s = row_structure(&[10.0, 42.0, 74.0, 106.0]);
        assert!(detect_bench_gaps(&s, &img, &GapParams::default()).is_empty());
    }

    #[test]
    fn bhattacharyya_bounds() {
        let a = [0.5, 0.5, 0.0];
        let b = [0.0, 0.0, 1.0];
        assert_eq!(bhattacharyya_distance(&a, &a), 0.0);
        assert!((bhattacharyya_distance(&a, &b) - 1.0).abs() < 1e-12);
    }

    fn textured(w: usize, h: usize, shift: f64) -> Image {
        Image::from_fn(w, h, |x, y| {
            let (x, y) = (x as f64 - shift, y as f64);
            (128.0 + 50.0 * (x * 0.21).sin() * (y * 0.17).cos() + 30.0 * (x * 0.05 + y * 0.08).sin()) as f32
        })
    }

    #[test]
    fn flow_on_identical_and_shifted_images() {
        let a = textured(200, 160, 0.0);
        let pts: Vec<_> = (0..5).map(|i| Point2::new(60.0 + 20.0 * i as f64, 80.0)).collect();
        for f in estimate_flow(&a, &a, &pts, &FlowParams::default()) {
            assert!(f.valid && f.displacement.norm() < 1e-6);
        }
        let b = textured(200, 160, 5.0);
        for f in estimate_flow(&a, &b, &pts, &FlowParams::default()) {
            assert!(f.valid);
            assert!((f.displacement - Vector2::new(5.0, 0.0)).norm() < 1.0, "{:?}", f.displacement);
        }
    }

    #[test]
    fn flat_region_is_invalid() {
        let a = Image::new(100, 100, 77.0);
        let f = estimate_flow(&a, &a, &[Point2::new(50.0, 50.0)], &FlowParams::default());
        assert!(!f[0].valid);
    }

    #[test]
    fn static_scene_keeps_ids() {
        let mut set = TrackSet::new();
        let mut d = vec![det(10.0, 10.0, 0), det(50.0, 10.0, 1)];
        let first = track_modules(&mut set, &[], &mut d, 0, 8.0, 5);
        for f in 1..4 {
            let mut d = vec![det(10.0, 10.0, 0), det(50.0, 10.0, 1)];
            let ids = track_modules(&mut set, &[Some(Vector2::zeros()); 2], &mut d, f, 8.0, 5);
            assert_eq!(ids, first);
        }
        let mut d = vec![det(10.0, 10.0, 0), det(50.0, 10.0, 1), det(90.0, 10.0, 2)];
        let ids = track_modules(&mut set, &[Some(Vector2::zeros()); 2], &mut d, 4, 8.0, 5);
        assert_eq!(&ids[..2], &first[..]);
        assert!(!first.contains(&ids[2]));
    }

    #[test]
    fn dropout_keeps_id() {
        let mut set = TrackSet::new();
        let step = Vector2::new(-6.0, 0.0);
        let mut x = 200.0;
        let mut d = vec![det(x, 10.0, 0)];
        let id = track_modules(&mut set, &[], &mut d, 0, 8.0, 5)[0];
        x += step.x;
        let mut d = vec![det(x, 10.0, 0)];
        track_modules(&mut set, &[Some(step)], &mut d, 1, 8.0, 5);
        for f in 2..4 {
            x += step.x;
            track_modules(&mut set, &[None], &mut [], f, 8.0, 5);
        }
        x += step.x;
        let mut d = vec![det(x, 10.0, 0)];
        let ids = track_modules(&mut set, &[None], &mut d, 4, 8.0, 5);
        assert_eq!(ids, vec![id]);
        assert_eq!(set.get(id).unwrap().age, 3);
    }

    #[test]
    fn lost_tracks_expire() {
        let mut set = TrackSet::new();
        let mut d = vec![det(10.0, 10.0, 0)];
        let id = track_modules(&mut set, &[], &mut d, 0, 8.0, 2)[0];
        for f in 1..=3 {
            track_modules(&mut set, &[None], &mut [], f, 8.0, 2);
        }
        assert!(set.get(id).is_none());
        let mut d = vec![det(10.0, 10.0, 0)];
        assert_ne!(track_modules(&mut set, &[], &mut d, 4, 8.0, 2)[0], id);
    }
}
