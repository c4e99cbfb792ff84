//! Row fitting (sequential RANSAC) and sequence-position assignment.

use crate::structure::{
    FlightDirection, Footprint, LogicalCoord, RowLine, SemanticStructure, StructuredDetection,
};
use nalgebra::{Matrix2, Point2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RowFitError {
    #[error("need at least 2 centers, got {0}")]
    TooFewPoints(usize),
    #[error("no row line with at least 2 inliers")]
    NoRow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RowFitParams {
    pub iterations: usize,
    pub seed: u64,
    /// Rows deviating more than this from the dominant row direction are
    /// discarded [deg].
    pub parallel_tol_deg: f64,
    /// Residual threshold as a fraction of the representative short side.
    pub residual_fraction: f64,
    /// Largest angle between a row line and the image x axis, which is the
    /// direction of travel [deg]. `None` accepts any orientation.
    pub max_row_angle_deg: Option<f64>,
}

impl Default for RowFitParams {
    fn default() -> Self {
        Self {
            iterations: 200,
            seed: 0,
            parallel_tol_deg: 10.0,
            residual_fraction: 0.2,
            max_row_angle_deg: Some(30.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedRow {
    pub line: RowLine,
    /// Indices into the input centers.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RowFit {
    /// Rows ordered top to bottom in the image.
    pub rows: Vec<FittedRow>,
    pub outliers: Vec<usize>,
}

/// Total least squares line through points; direction has non-negative x.
pub fn fit_line(points: &[Point2<f64>]) -> RowLine {
    let n = points.len() as f64;
    let c = points.iter().fold(Vector2::zeros(), |a, p| a + p.coords) / n;
    let mut cov = Matrix2::zeros();
    for p in points {
        let d = p.coords - c;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let i = if eig.eigenvalues[0] >= eig.eigenvalues[1] { 0 } else { 1 };
    let mut dir: Vector2<f64> = eig.eigenvectors.column(i).into_owned();
    if dir.x < 0.0 || (dir.x == 0.0 && dir.y < 0.0) {
        dir = -dir;
    }
    RowLine {
        point: Point2::from(c),
        direction: dir.normalize(),
    }
}

fn line_through(a: &Point2<f64>, b: &Point2<f64>) -> Option<RowLine> {
    let d = b - a;
    let n = d.norm();
    if n < 1e-9 {
        return None;
    }
    let mut dir = d / n;
    if dir.x < 0.0 {
        dir = -dir;
    }
    Some(RowLine {
        point: *a,
        direction: dir,
    })
}

/// Sequential RANSAC: fit a line, remove its inliers, repeat while at least
/// two points remain. Rows failing the parallelism check become outliers.
pub fn fit_rows(
    centers: &[Point2<f64>],
    residual_threshold: f64,
    params: &RowFitParams,
) -> Result<RowFit, RowFitError> {
    if centers.len() < 2 {
        return Err(RowFitError::TooFewPoints(centers.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut remaining: Vec<usize> = (0..centers.len()).collect();
    let mut rows: Vec<FittedRow> = Vec::new();
    let min_cos = params.max_row_angle_deg.map_or(-1.0, |a| a.to_radians().cos());

    while remaining.len() >= 2 {
        let pairs = remaining.len() * (remaining.len() - 1) / 2;
        let candidates: Vec<(usize, usize)> = if pairs <= params.iterations {
            (0..remaining.len())
                .flat_map(|i| (i + 1..remaining.len()).map(move |j| (i, j)))
                .collect()
        } else {
            (0..params.iterations)
                .map(|_| {
                    let i = rng.random_range(0..remaining.len());
                    let mut j = rng.random_range(0..remaining.len() - 1);
                    if j >= i {
                        j += 1;
                    }
                    (i, j)
                })
                .collect()
        };

        let mut best: Option<(usize, f64, RowLine)> = None;
        for (i, j) in candidates {
            let Some(line) = line_through(&centers[remaining[i]], &centers[remaining[j]]) else {
                continue;
            };
            if line.direction.x.abs() < min_cos {
                continue;
            }
            let (count, cost) = remaining
                .iter()
                .map(|&k| line.distance(&centers[k]))
                .filter(|d| *d <= residual_threshold)
                .fold((0usize, 0.0), |(c, s), d| (c + 1, s + d));
            let better = match &best {
                None => true,
                Some((bc, bs, _)) => count > *bc || (count == *bc && cost < *bs),
            };
            if better {
                best = Some((count, cost, line));
            }
        }
        let Some((count, _, line)) = best else { break };
        if count < 2 {
            break;
        }
        let inliers: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&k| line.distance(&centers[k]) <= residual_threshold)
            .collect();
        let pts: Vec<_> = inliers.iter().map(|&k| centers[k]).collect();
        let refined = fit_line(&pts);
        let refined_inliers: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&k| refined.distance(&centers[k]) <= residual_threshold)
            .collect();
        let (line, members) = if refined_inliers.len() >= inliers.len() {
            (refined, refined_inliers)
        } else {
            (line, inliers)
        };
        remaining.retain(|k| !members.contains(k));
        rows.push(FittedRow { line, members });
    }
    if rows.is_empty() {
        return Err(RowFitError::NoRow);
    }

    let mut outliers = remaining;
    let dominant = rows
        .iter()
        .max_by_key(|r| r.members.len())
        .map(|r| r.line.direction)
        .expect("non-empty");
    let tol = params.parallel_tol_deg.to_radians();
    rows.retain(|r| {
        let cos = r.line.direction.dot(&dominant).abs().min(1.0);
        let ok = cos.acos() <= tol;
        if !ok {
            outliers.extend(&r.members);
        }
        ok
    });
    outliers.sort_unstable();

    let normal = Vector2::new(-dominant.y, dominant.x);
    rows.sort_by(|a, b| {
        normal
            .dot(&a.line.point.coords)
            .total_cmp(&normal.dot(&b.line.point.coords))
    });
    Ok(RowFit { rows, outliers })
}

/// Builds the semantic structure from fitted rows of footprints.
///
/// The camera's x axis points along the direction of travel, so within a
/// row detections are sorted by increasing image x for either flight
/// direction; `direction` is only recorded for the association with the
/// model. A spacing larger than 1.5x the median spacing skips
/// `round(spacing / median) - 1` positions. Rows are then aligned on a common sequence origin by matching
/// detections to their nearest neighbours in the most populated row.
pub fn assign_sequence(
    rows: Vec<(RowLine, Vec<Footprint>)>,
    direction: FlightDirection,
) -> SemanticStructure {
    let rows: Vec<(RowLine, Vec<Footprint>)> = rows
        .into_iter()
        .filter(|(_, f)| !f.is_empty())
        .map(|(mut line, mut fps)| {
            if line.direction.x < 0.0 {
                line.direction = -line.direction;
            }
            fps.sort_by(|a, b| {
                line.position_along(&a.center())
                    .total_cmp(&line.position_along(&b.center()))
            });
            (line, fps)
        })
        .collect();

    let mut spacings: Vec<f64> = rows
        .iter()
        .flat_map(|(line, fps)| {
            fps.windows(2)
                .map(|w| line.position_along(&w[1].center()) - line.position_along(&w[0].center()))
                .collect::<Vec<_>>()
        })
        .collect();
    spacings.sort_by(f64::total_cmp);
    let median = spacings.get(spacings.len() / 2).copied().unwrap_or(0.0);

    let mut local: Vec<Vec<i64>> = Vec::with_capacity(rows.len());
    for (line, fps) in &rows {
        let mut seq = Vec::with_capacity(fps.len());
        let mut cur = 0i64;
        for (i, f) in fps.iter().enumerate() {
            if i > 0 {
                let s = line.position_along(&f.center()) - line.position_along(&fps[i - 1].center());
                cur += if median > 0.0 && s > 1.5 * median {
                    ((s / median).round() as i64).max(1)
                } else {
                    1
                };
            }
            seq.push(cur);
        }
        local.push(seq);
    }

    if let Some(reference) = (0..rows.len()).max_by_key(|&r| (rows[r].1.len(), std::cmp::Reverse(r))) {
        let ref_line = rows[reference].0;
        let ref_pos: Vec<f64> = rows[reference]
            .1
            .iter()
            .map(|f| ref_line.position_along(&f.center()))
            .collect();
        for r in 0..rows.len() {
            if r == reference {
                continue;
            }
            let mut votes: HashMap<i64, usize> = HashMap::new();
            for (k, f) in rows[r].1.iter().enumerate() {
                let p = ref_line.position_along(&f.center());
                let nearest = ref_pos
                    .iter()
                    .enumerate()
                    .min_by(|a, b| (a.1 - p).abs().total_cmp(&(b.1 - p).abs()))
                    .map(|(i, _)| i)
                    .expect("reference row is non-empty");
                let offset = local[reference][nearest] - local[r][k];
                *votes.entry(offset).or_default() += 1;
            }
            let best = votes
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.abs().cmp(&a.0.abs())).then(b.0.cmp(&a.0)))
                .map(|(o, _)| o)
                .unwrap_or(0);
            for s in &mut local[r] {
                *s += best;
            }
        }
    }
    let min_seq = local.iter().flatten().copied().min().unwrap_or(0);

    let mut detections = Vec::new();
    let mut lines = Vec::new();
    for (r, ((line, fps), seqs)) in rows.into_iter().zip(local).enumerate() {
        for (f, s) in fps.into_iter().zip(seqs) {
            detections.push(StructuredDetection {
                footprint: f,
                coord: LogicalCoord {
                    row: r,
                    seq: s - min_seq,
                },
                track: None,
            });
        }
        lines.push(line);
    }
    SemanticStructure {
        detections,
        rows: lines,
        representative: (0.0, 0.0),
        direction,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bbox::OrientedBBox;

    fn p(x: f64, y: f64) -> Point2<f64> {
        Point2::new(x, y)
    }

    fn boxes_at(xs: &[f64], y: f64) -> Vec<Footprint> {
        xs.iter()
            .map(|&x| Footprint::Box(OrientedBBox::new(x, y, 20.0, 10.0, 0.0, 1.0)))
            .collect()
    }

    fn horizontal(y: f64) -> RowLine {
        RowLine {
            point: p(0.0, y),
            direction: Vector2::new(1.0, 0.0),
        }
    }

    #[test]
    fn two_clean_rows() {
        let mut centers = Vec::new();
        for r in 0..2 {
            for c in 0..10 {
                centers.push(p(30.0 + 25.0 * c as f64, 40.0 + 60.0 * r as f64 + 0.3 * c as f64));
            }
        }
        let fit = fit_rows(&centers, 0.2 * 50.0, &RowFitParams::default()).unwrap();
        assert_eq!(fit.rows.len(), 2);
        assert_eq!(fit.rows.iter().map(|r| r.members.len()).sum::<usize>(), 20);
        assert!(fit.outliers.is_empty());
        assert!(fit.rows[0].line.point.y < fit.rows[1].line.point.y);
    }

    #[test]
    fn perturbed_center_is_outlier() {
        let h_rep = 50.0;
        let mut centers: Vec<_> = (0..10).map(|c| p(30.0 + 25.0 * c as f64, 40.0)).collect();
        centers[4].y += 0.5 * h_rep;
        let fit = fit_rows(&centers, 0.2 * h_rep, &RowFitParams::default()).unwrap();
        assert_eq!(fit.rows.len(), 1);
        assert_eq!(fit.outliers, vec![4]);
    }

    #[test]
    fn single_collinear_row() {
        let centers: Vec<_> = (0..6).map(|c| p(10.0 * c as f64, 5.0 + 2.0 * c as f64)).collect();
        let fit = fit_rows(&centers, 1.0, &RowFitParams::default()).unwrap();
        assert_eq!(fit.rows.len(), 1);
    }

    #[test]
    fn too_few_points() {
        assert_eq!(
            fit_rows(&[p(0.0, 0.0)], 1.0, &RowFitParams::default()),
            Err(RowFitError::TooFewPoints(1))
        );
    }

    fn seqs(s: &SemanticStructure, row: usize) -> Vec<i64> {
        s.row(row).iter().map(|d| d.coord.seq).collect()
    }

    #[test]
    fn uniform_spacing() {
        let s = assign_sequence(
            vec![(horizontal(10.0), boxes_at(&[0.0, 1.0, 2.0, 3.0], 10.0))],
            FlightDirection::Forward,
        );
        assert_eq!(seqs(&s, 0), vec![0, 1, 2, 3]);
    }

    #[test]
    fn one_skipped_position() {
        let s = assign_sequence(
            vec![(horizontal(10.0), boxes_at(&[0.0, 1.0, 3.1, 4.1], 10.0))],
            FlightDirection::Forward,
        );
        assert_eq!(seqs(&s, 0), vec![0, 1, 3, 4]);
    }

    #[test]
    fn single_detection() {
        let s = assign_sequence(vec![(horizontal(10.0), boxes_at(&[7.0], 10.0))], FlightDirection::Forward);
        assert_eq!(seqs(&s, 0), vec![0]);
    }

    #[test]
    fn rows_share_sequence_origin() {
        // second row misses its first module
        let s = assign_sequence(
            vec![
                (horizontal(10.0), boxes_at(&[0.0, 30.0, 60.0, 90.0], 10.0)),
                (horizontal(40.0), boxes_at(&[31.0, 61.0, 89.0], 40.0)),
            ],
            FlightDirection::Forward,
        );
        assert_eq!(seqs(&s, 0), vec![0, 1, 2, 3]);
        assert_eq!(seqs(&s, 1), vec![1, 2, 3]);
    }

    #[test]
    fn backward_flight_keeps_image_order() {
        let s = assign_sequence(
            vec![(horizontal(10.0), boxes_at(&[0.0, 30.0, 60.0], 10.0))],
            FlightDirection::Backward,
        );
        let row = s.row(0);
        assert_eq!(row[0].center().x, 0.0);
        assert_eq!(row[2].center().x, 60.0);
        assert_eq!(s.direction, FlightDirection::Backward);
    }
}
