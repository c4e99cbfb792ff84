//! Per-frame semantic structure: module detections organized in rows and
//! sequence positions. Both detector paths produce this type.

use crate::bbox::OrientedBBox;
use nalgebra::{Point2, Vector2};
use serde::{Deserialize, Serialize};

/// Direction of travel along the bench line axis of the model. The camera
/// is yawed with the flight, so in the image travel is always towards +x;
/// flying backwards rotates the view by 180 degrees relative to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlightDirection {
    /// Along the model's +u axis.
    #[default]
    Forward,
    /// Along the model's -u axis.
    Backward,
}

impl FlightDirection {
    pub fn sign(self) -> i64 {
        match self {
            FlightDirection::Forward => 1,
            FlightDirection::Backward => -1,
        }
    }
}

/// Logical grid coordinate of a detection within one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LogicalCoord {
    pub row: usize,
    pub seq: i64,
}

/// Image-space footprint of a detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Footprint {
    Box(OrientedBBox),
    /// Corners ordered top-left, top-right, bottom-right, bottom-left.
    Quad([Point2<f64>; 4]),
}

impl Footprint {
    pub fn center(&self) -> Point2<f64> {
        match self {
            Footprint::Box(b) => b.center(),
            Footprint::Quad(q) => Point2::from((q[0].coords + q[1].coords + q[2].coords + q[3].coords) / 4.0),
        }
    }

    /// Corner points in top-left, top-right, bottom-right, bottom-left order.
    pub fn corners(&self) -> [Point2<f64>; 4] {
        match self {
            Footprint::Box(b) => b.image_corners(),
            Footprint::Quad(q) => *q,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredDetection {
    pub footprint: Footprint,
    pub coord: LogicalCoord,
    pub track: Option<u64>,
}

impl StructuredDetection {
    pub fn center(&self) -> Point2<f64> {
        self.footprint.center()
    }
}

/// Image line through a row of module centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowLine {
    pub point: Point2<f64>,
    /// Unit direction, oriented along increasing sequence positions.
    pub direction: Vector2<f64>,
}

impl RowLine {
    pub fn distance(&self, p: &Point2<f64>) -> f64 {
        let d = p - self.point;
        (d.x * self.direction.y - d.y * self.direction.x).abs()
    }

    pub fn position_along(&self, p: &Point2<f64>) -> f64 {
        (p - self.point).dot(&self.direction)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SemanticStructure {
    pub detections: Vec<StructuredDetection>,
    /// Row lines indexed by logical row.
    pub rows: Vec<RowLine>,
    /// Representative module size in the image (long side, short side) [px].
    pub representative: (f64, f64),
    pub direction: FlightDirection,
}

impl SemanticStructure {
    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn row_count(&self) -> usize {
        self.detections
            .iter()
            .map(|d| d.coord.row + 1)
            .max()
            .unwrap_or(0)
    }

    /// Detections of one row sorted by sequence position.
    pub fn row(&self, row: usize) -> Vec<&StructuredDetection> {
        let mut r: Vec<_> = self.detections.iter().filter(|d| d.coord.row == row).collect();
        r.sort_by_key(|d| d.coord.seq);
        r
    }

    pub fn find(&self, coord: LogicalCoord) -> Option<&StructuredDetection> {
        self.detections.iter().find(|d| d.coord == coord)
    }
}
