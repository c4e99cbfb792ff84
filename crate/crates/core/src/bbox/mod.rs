//! Post-processing of box/mask detections into a semantic structure.

mod detections;
mod filter;
mod obb;
mod rows;

pub use detections::{
    load_detections, parse_detections, to_detection_file, DetectionFile, DetectionFileError,
    FrameDetections, FrameRecord,
};
pub use filter::{filter_boxes, representative_box, BoxFilterParams, FilteredBoxes};
pub use obb::{
    convex_hull, convex_intersection_area, min_bounding_rect, order_quad, polygon_area, ObbError,
    OrientedBBox,
};
pub use rows::{assign_sequence, fit_line, fit_rows, FittedRow, RowFit, RowFitError, RowFitParams};

use crate::structure::{FlightDirection, Footprint, SemanticStructure};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BoxStructureParams {
    pub filter: BoxFilterParams,
    pub rows: RowFitParams,
}

/// Filters raw boxes, fits rows, and assigns sequence positions. Returns
/// `None` when no row can be formed.
pub fn structure_from_boxes(
    boxes: &[OrientedBBox],
    image_size: (u32, u32),
    expected_dims: Option<(f64, f64)>,
    direction: FlightDirection,
    params: &BoxStructureParams,
) -> Option<SemanticStructure> {
    let filtered = filter_boxes(boxes, image_size, expected_dims, &params.filter);
    let rep = filtered.representative?;
    let centers: Vec<_> = filtered.boxes.iter().map(|b| b.center()).collect();
    let (long, short) = (rep.w.max(rep.h), rep.w.min(rep.h));
    let fit = fit_rows(&centers, params.rows.residual_fraction * short, &params.rows).ok()?;
    let rows = fit
        .rows
        .iter()
        .map(|r| {
            let fps = r.members.iter().map(|&i| Footprint::Box(filtered.boxes[i])).collect();
            (r.line, fps)
        })
        .collect();
    let mut s = assign_sequence(rows, direction);
    s.representative = (long, short);
    Some(s)
}
