//! Detection file produced by an external box/mask detector.

use super::obb::{min_bounding_rect, ObbError, OrientedBBox};
use nalgebra::Point2;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DetectionFileError {
    #[error("failed to read detections: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse detections: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("frame {frame}, box {index}: {reason}")]
    InvalidBox { frame: usize, index: usize, reason: String },
    #[error("frame {frame}, contour {index}: {source}")]
    InvalidContour {
        frame: usize,
        index: usize,
        source: ObbError,
    },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DetectionFile {
    pub frames: Vec<FrameRecord>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: usize,
    /// `[x_c, y_c, w, h, alpha, confidence]`
    #[serde(default)]
    pub boxes: Vec<[f64; 6]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contours: Vec<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetections {
    pub index: usize,
    pub boxes: Vec<OrientedBBox>,
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<FrameDetections>, DetectionFileError> {
    let text = std::fs::read_to_string(path)?;
    parse_detections(&text)
}

/// Parses and canonicalizes boxes; contours are reduced to their minimum
/// bounding rectangles with confidence 1.
pub fn parse_detections(text: &str) -> Result<Vec<FrameDetections>, DetectionFileError> {
    let file: DetectionFile = serde_json::from_str(text)?;
    file.frames
        .iter()
        .map(|f| {
            let mut boxes = Vec::with_capacity(f.boxes.len() + f.contours.len());
            for (i, b) in f.boxes.iter().enumerate() {
                let [x, y, w, h, a, c] = *b;
                let invalid = |reason: &str| DetectionFileError::InvalidBox {
                    frame: f.index,
                    index: i,
                    reason: reason.into(),
                };
                if b.iter().any(|v| !v.is_finite()) {
                    return Err(invalid("non-finite value"));
                }
                if w < 0.0 || h < 0.0 {
                    return Err(invalid("negative width or height"));
                }
                if !(0.0..=1.0).contains(&c) {
                    return Err(invalid("confidence outside [0, 1]"));
                }
                boxes.push(OrientedBBox::new(x, y, w, h, a, c));
            }
            for (i, contour) in f.contours.iter().enumerate() {
                let pts: Vec<_> = contour.iter().map(|p| Point2::new(p[0], p[1])).collect();
                let b = min_bounding_rect(&pts).map_err(|source| DetectionFileError::InvalidContour {
                    frame: f.index,
                    index: i,
                    source,
                })?;
                boxes.push(b);
            }
            Ok(FrameDetections {
                index: f.index,
                boxes,
            })
        })
        .collect()
}

pub fn to_detection_file(frames: &[FrameDetections]) -> DetectionFile {
    DetectionFile {
        frames: frames
            .iter()
            .map(|f| FrameRecord {
                index: f.index,
                boxes: f
                    .boxes
                    .iter()
                    .map(|b| [b.x_c, b.y_c, b.w, b.h, b.alpha, b.confidence])
                    .collect(),
                contours: Vec::new(),
            })
            .collect(),
    }
}
