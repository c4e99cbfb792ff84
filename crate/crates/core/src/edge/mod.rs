//! Classical edge-based module segmentation: lines from Canny + Hough,
//! clustered, filtered on the Gaussian sphere, intersected into a grid graph
//! whose 4-cycles are module cells.

mod canny;
mod grid;
mod lines;

pub use canny::{adaptive_blur, apply_mask, canny, otsu_threshold, select_mask, undistort, BlurResult, EdgeMap};
pub use grid::{build_grid_graph, grid_cells, CellFilter, DetectionSource, GridCell, GridGraph};
pub use lines::{
    cluster_lines, filter_perpendicular, great_circle_normal, hausdorff_line_distance, hough_lines, mean_line,
    refine_line, line_support, suppress_crossing, HoughParams, ImageLine, LineClass, LineCluster, LineFamilies,
};

use crate::bbox::assign_sequence;
use crate::camera::CameraIntrinsics;
use crate::imaging::Image;
use crate::structure::{FlightDirection, Footprint, LogicalCoord, RowLine, SemanticStructure};
use nalgebra::Point2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EdgeError {
    #[error("image is {got:?} but {expected:?} was expected")]
    DimensionMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("line has coincident border points")]
    DegenerateLine,
    #[error("could not estimate two perpendicular line families")]
    FamilyEstimation,
    #[error("invalid edge detector parameter: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EdgeParams {
    /// Target global intensity variance for the adaptive blur. Without a
    /// target a fixed 3x3 Gaussian is applied.
    pub blur_target: Option<f64>,
    pub max_kernel: usize,
    /// Explicit Canny `(low, high)`; Otsu-derived when absent.
    pub canny: Option<(f32, f32)>,
    pub hough: HoughParams,
    /// Vertical Hough threshold as a fraction of the expected cell height;
    /// overrides `hough.vertical_weight` when set.
    pub vertical_weight_fraction: Option<f64>,
    /// Clustering stop threshold as a fraction of the expected short side.
    pub cluster_stop_fraction: f64,
    /// Great-circle tolerance for the vanishing-direction filter [deg].
    pub perpendicular_tol_deg: f64,
    /// Half-width of the least-squares line refinement band as a fraction
    /// of the expected short side; it must cover the parallel edges of one
    /// module boundary. No refinement when 0.
    pub refine_band: f64,
    pub refine_angle_deg: f64,
    pub size_tol: f64,
    pub aspect_band: (f64, f64),
    /// Minimum distance of accepted cell corners from the image border [px].
    pub border_margin: f64,
    /// Mask components within this distance of the main axis are kept [px].
    pub mask_axis_tol: f64,
}

impl Default for EdgeParams {
    fn default() -> Self {
        Self {
            blur_target: None,
            max_kernel: 15,
            canny: None,
            hough: HoughParams::default(),
            vertical_weight_fraction: Some(0.6),
            cluster_stop_fraction: 0.35,
            perpendicular_tol_deg: 1.5,
            refine_band: 0.2,
            refine_angle_deg: 15.0,
            size_tol: 0.35,
            aspect_band: (0.75, 1.33),
            border_margin: 4.0,
            mask_axis_tol: 60.0,
        }
    }
}

impl EdgeParams {
    pub fn validate(&self) -> Result<(), EdgeError> {
        let bad = |m: &str| Err(EdgeError::InvalidParams(m.into()));
        if self.blur_target.is_some_and(|t| t <= 0.0) {
            return bad("blur target must be positive");
        }
        if let Some((lo, hi)) = self.canny {
            if !(lo > 0.0 && hi >= lo) {
                return bad("canny thresholds must satisfy 0 < low <= high");
            }
        }
        if self.hough.rho_step <= 0.0 || self.hough.theta_step_deg <= 0.0 || self.hough.vertical_weight <= 0.0 {
            return bad("hough resolution and weights must be positive");
        }
        if self.cluster_stop_fraction <= 0.0 || self.perpendicular_tol_deg <= 0.0 || self.size_tol <= 0.0 {
            return bad("tolerances must be positive");
        }
        Ok(())
    }
}

/// Expected image size of a module `(along rows, across rows)` [px] from
/// its metric size and the viewing distance.
pub fn expected_module_size(k: &CameraIntrinsics, dims: (f64, f64), distance: f64) -> (f64, f64) {
    (k.fx * dims.0 / distance, k.fy * dims.1 / distance)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleDetection {
    /// Top-left, top-right, bottom-right, bottom-left [px].
    pub corners: [Point2<f64>; 4],
    pub coord: LogicalCoord,
    pub source: DetectionSource,
}

/// Per-frame output. `structure` is `None` when the frame had no usable grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeDetection {
    pub modules: Vec<ModuleDetection>,
    pub structure: Option<SemanticStructure>,
    /// Grid graph of the filtered lines, when two families were found.
    pub graph: Option<GridGraph>,
    pub line_count: usize,
    pub cluster_count: usize,
    pub kernel: usize,
}

impl EdgeDetection {
    fn empty(line_count: usize, cluster_count: usize, kernel: usize) -> Self {
        Self {
            modules: Vec::new(),
            structure: None,
            graph: None,
            line_count,
            cluster_count,
            kernel,
        }
    }
}

/// Organizes accepted cells into rows by their top line and assigns
/// sequence positions.
pub fn cells_to_structure(graph: &GridGraph, cells: &[GridCell], direction: FlightDirection) -> Option<SemanticStructure> {
    let mut by_row: BTreeMap<usize, Vec<&GridCell>> = BTreeMap::new();
    for c in cells {
        by_row.entry(c.line_row).or_default().push(c);
    }
    let rows: Vec<(RowLine, Vec<Footprint>)> = by_row
        .iter()
        .map(|(&r, cs)| {
            let n = cs.len() as f64;
            let mid = cs.iter().fold(nalgebra::Vector2::zeros(), |a, c| a + Footprint::Quad(c.corners).center().coords) / n;
            let mut dir = graph.horizontal[r].direction();
            if dir.x < 0.0 {
                dir = -dir;
            }
            let line = RowLine {
                point: Point2::from(mid),
                direction: dir,
            };
            (line, cs.iter().map(|c| Footprint::Quad(c.corners)).collect())
        })
        .collect();
    if rows.is_empty() {
        return None;
    }
    let mut s = assign_sequence(rows, direction);
    let mut ws: Vec<f64> = cells.iter().map(|c| 0.5 * ((c.corners[1] - c.corners[0]).norm() + (c.corners[2] - c.corners[3]).norm())).collect();
    let mut hs: Vec<f64> = cells.iter().map(|c| 0.5 * ((c.corners[3] - c.corners[0]).norm() + (c.corners[2] - c.corners[1]).norm())).collect();
    ws.sort_by(f64::total_cmp);
    hs.sort_by(f64::total_cmp);
    let (w, h) = (ws[ws.len() / 2], hs[hs.len() / 2]);
    s.representative = (w.max(h), w.min(h));
    Some(s)
}

/// Full single-image pipeline. `expected` is the expected module size in
/// the image `(along rows, across rows)` [px]. Frames without two line
/// families or without cells give an empty detection, not an error.
pub fn detect_modules(
    image: &Image,
    k: &CameraIntrinsics,
    expected: (f64, f64),
    mask: Option<&Image>,
    direction: FlightDirection,
    params: &EdgeParams,
) -> Result<EdgeDetection, EdgeError> {
    params.validate()?;
    let dims = (k.width as usize, k.height as usize);
    if image.dims() != dims {
        return Err(EdgeError::DimensionMismatch {
            expected: dims,
            got: image.dims(),
        });
    }
    let bounds = (image.width as f64, image.height as f64);
    let undistorted = undistort(image, k);
    let (smooth, kernel) = match params.blur_target {
        Some(t) => {
            let b = adaptive_blur(&undistorted, t, params.max_kernel);
            (b.image, b.kernel)
        }
        None => (crate::imaging::gaussian_blur(&undistorted, 3), 3),
    };
    let mut edges = canny(&smooth, params.canny);
    if let Some(m) = mask {
        if m.dims() != image.dims() {
            return Err(EdgeError::DimensionMismatch {
                expected: image.dims(),
                got: m.dims(),
            });
        }
        edges = apply_mask(&edges, &undistort(m, k), params.mask_axis_tol)?;
    }

    let mut hough = params.hough;
    if let Some(f) = params.vertical_weight_fraction {
        hough.vertical_weight = (f * expected.1).max(1.0);
    }
    let lines = hough_lines(&edges, &hough);
    let short = expected.0.min(expected.1);
    let clusters = cluster_lines(&lines, params.cluster_stop_fraction * short);
    let cluster_count = clusters.len();

    let pixels = edges.pixels();
    let tol = params.refine_angle_deg.to_radians();
    let stop = params.cluster_stop_fraction * short;
    let band = params.refine_band * short;
    let refine = |clusters: Vec<LineCluster>| -> Vec<LineCluster> {
        if band <= 0.0 {
            return clusters;
        }
        clusters
            .into_iter()
            .map(|c| {
                let mut r = c.representative;
                for _ in 0..3 {
                    r = refine_line(&r, &pixels, band, tol, 10);
                }
                LineCluster {
                    members: c.members,
                    representative: r,
                }
            })
            .collect()
    };
    // refinement can pull separate clusters onto the same boundary
    let mut clusters = clusters;
    for _ in 0..2 {
        let reps: Vec<ImageLine> = refine(clusters).iter().map(|c| c.representative).collect();
        clusters = cluster_lines(&reps, stop);
    }
    let support: Vec<usize> = clusters
        .iter()
        .map(|c| line_support(&c.representative, &pixels, band.max(1.5), tol))
        .collect();
    let clusters = suppress_crossing(clusters, &support, bounds);

    let families = match filter_perpendicular(&clusters, k, params.perpendicular_tol_deg.to_radians()) {
        Ok(f) => f,
        Err(EdgeError::FamilyEstimation) => return Ok(EdgeDetection::empty(lines.len(), cluster_count, kernel)),
        Err(e) => return Err(e),
    };
    let reps = |f: &[LineCluster]| f.iter().map(|c| c.representative).collect::<Vec<_>>();
    let graph = build_grid_graph(&reps(&families.horizontal), &reps(&families.vertical), bounds);
    let filter = CellFilter {
        expected,
        size_tol: params.size_tol,
        aspect_band: params.aspect_band,
        border_margin: params.border_margin,
    };
    let cells = grid_cells(&graph, &filter, bounds);
    let Some(structure) = cells_to_structure(&graph, &cells, direction) else {
        let mut d = EdgeDetection::empty(lines.len(), cluster_count, kernel);
        d.graph = Some(graph);
        return Ok(d);
    };
    let modules = structure
        .detections
        .iter()
        .map(|d| ModuleDetection {
            corners: d.footprint.corners(),
            coord: d.coord,
            source: DetectionSource::Edge,
        })
        .collect();
    Ok(EdgeDetection {
        modules,
        structure: Some(structure),
        graph: Some(graph),
        line_count: lines.len(),
        cluster_count,
        kernel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rectangle() -> Image {
        Image::from_fn(200, 160, |x, y| if (50..150).contains(&x) && (40..120).contains(&y) { 200.0 } else { 40.0 })
    }

    #[test]
    fn rectangle_gives_two_lines_per_class() {
        let img = crate::imaging::gaussian_blur(&rectangle(), 3);
        let edges = canny(&img, None);
        let lines = hough_lines(&edges, &HoughParams { vertical_weight: 30.0, ..Default::default() });
        assert!(lines.len() >= 4);
        let clusters = cluster_lines(&lines, 10.0);
        let count = |c: LineClass| clusters.iter().filter(|l| l.representative.class == Some(c)).count();
        assert_eq!((count(LineClass::Horizontal), count(LineClass::Vertical)), (2, 2));
    }

    #[test]
    fn blank_and_dominated_threshold_give_nothing() {
        let blank = Image::new(100, 80, 90.0);
        assert!(hough_lines(&canny(&blank, None), &HoughParams::default()).is_empty());
        let img = crate::imaging::gaussian_blur(&rectangle(), 3);
        let p = HoughParams { vertical_weight: 1e6, ..Default::default() };
        assert!(hough_lines(&canny(&img, None), &p).is_empty());
    }

    #[test]
    fn wrong_size_is_rejected() {
        let k = CameraIntrinsics::pinhole(100.0, 100.0, 50.0, 40.0, 100, 80);
        let r = detect_modules(&rectangle(), &k, (40.0, 80.0), None, FlightDirection::Forward, &EdgeParams::default());
        assert!(matches!(r, Err(EdgeError::DimensionMismatch { .. })));
    }

    #[test]
    fn blank_frame_has_no_structure() {
        let k = CameraIntrinsics::pinhole(100.0, 100.0, 50.0, 40.0, 100, 80);
        let r = detect_modules(&Image::new(100, 80, 10.0), &k, (20.0, 40.0), None, FlightDirection::Forward, &EdgeParams::default()).unwrap();
        assert!(r.structure.is_none() && r.modules.is_empty());
    }
}
