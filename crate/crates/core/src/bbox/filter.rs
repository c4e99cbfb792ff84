use super::obb::OrientedBBox;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoxFilterParams {
    /// Boxes with a corner closer than this to the image border are dropped [px].
    pub border_margin: f64,
    /// Maximum IoU between two kept boxes.
    pub max_overlap: f64,
    /// Quantile of the area-sorted boxes used as the representative.
    pub representative_quantile: f64,
    /// Allowed relative deviation of w and h from the representative.
    pub size_divergence: f64,
}

impl Default for BoxFilterParams {
    fn default() -> Self {
        Self {
            border_margin: 1.0,
            max_overlap: 0.20,
            representative_quantile: 0.75,
            size_divergence: 0.35,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilteredBoxes {
    pub boxes: Vec<OrientedBBox>,
    pub representative: Option<OrientedBBox>,
}

/// Element at rank `floor(q * (n - 1))` of the area-ascending order.
pub fn representative_box(boxes: &[OrientedBBox], quantile: f64) -> Option<OrientedBBox> {
    if boxes.is_empty() {
        return None;
    }
    let mut sorted = boxes.to_vec();
    sorted.sort_by(|a, b| a.area().total_cmp(&b.area()));
    let rank = (quantile * (sorted.len() - 1) as f64).floor() as usize;
    Some(sorted[rank])
}

fn touches_border(b: &OrientedBBox, width: u32, height: u32, margin: f64) -> bool {
    let (w, h) = (width as f64 - 1.0, height as f64 - 1.0);
    b.polygon()
        .iter()
        .any(|p| p.x < margin || p.y < margin || p.x > w - margin || p.y > h - margin)
}

/// Size check on (long, short) sides, since `w` and `h` of an oriented box
/// swap with a quarter turn of `alpha`.
fn within(b: &OrientedBBox, w: f64, h: f64, divergence: f64) -> bool {
    let (bl, bs) = (b.w.max(b.h), b.w.min(b.h));
    let (l, s) = (w.max(h), w.min(h));
    (bl - l).abs() <= divergence * l && (bs - s).abs() <= divergence * s
}

/// Drops border-touching, overlapping, and abnormally sized detections.
///
/// Overlapping pairs keep the higher-confidence box (then the larger one).
/// The representative and size filter are iterated to a fixed point so the
/// whole filter is idempotent.
pub fn filter_boxes(
    boxes: &[OrientedBBox],
    image_size: (u32, u32),
    expected_dims: Option<(f64, f64)>,
    params: &BoxFilterParams,
) -> FilteredBoxes {
    let mut candidates: Vec<(usize, OrientedBBox)> = boxes
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, b)| !touches_border(b, image_size.0, image_size.1, params.border_margin))
        .collect();

    candidates.sort_by(|(ia, a), (ib, b)| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(b.area().total_cmp(&a.area()))
            .then(ia.cmp(ib))
    });
    let mut kept: Vec<(usize, OrientedBBox)> = Vec::new();
    for (i, b) in candidates {
        if kept.iter().all(|(_, k)| k.iou(&b) <= params.max_overlap) {
            kept.push((i, b));
        }
    }
    kept.sort_by_key(|(i, _)| *i);
    let mut kept: Vec<OrientedBBox> = kept.into_iter().map(|(_, b)| b).collect();

    if let Some((ew, eh)) = expected_dims {
        kept.retain(|b| within(b, ew, eh, params.size_divergence));
    }

    let mut representative = representative_box(&kept, params.representative_quantile);
    while let Some(rep) = representative {
        let before = kept.len();
        kept.retain(|b| within(b, rep.w, rep.h, params.size_divergence));
        representative = representative_box(&kept, params.representative_quantile);
        if kept.len() == before {
            break;
        }
    }
    FilteredBoxes {
        boxes: kept,
        representative,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x: f64, y: f64, w: f64, h: f64, conf: f64) -> OrientedBBox {
        OrientedBBox::new(x, y, w, h, 0.0, conf)
    }

    #[test]
    fn representative_rank_rule() {
        let boxes: Vec<_> = [10.0, 40.0, 20.0, 30.0]
            .iter()
            .enumerate()
            .map(|(i, a)| bx(100.0 * i as f64, 0.0, *a, 1.0, 1.0))
            .collect();
        let rep = representative_box(&boxes, 0.75).unwrap();
        assert_eq!(rep.area(), 30.0);
    }

    #[test]
    fn identical_boxes_keep_higher_confidence() {
        let a = bx(50.0, 50.0, 20.0, 10.0, 0.6);
        let b = bx(50.0, 50.0, 20.0, 10.0, 0.9);
        let out = filter_boxes(&[a, b], (200, 200), None, &BoxFilterParams::default());
        assert_eq!(out.boxes, vec![b]);
    }

    #[test]
    fn border_box_removed() {
        // corner at pixel 0
        let a = bx(10.0, 5.0, 20.0, 10.0, 0.9);
        let b = bx(100.0, 100.0, 20.0, 10.0, 0.9);
        let out = filter_boxes(&[a, b], (200, 200), None, &BoxFilterParams::default());
        assert_eq!(out.boxes, vec![b]);
    }

    #[test]
    fn abnormal_size_removed() {
        let mut boxes: Vec<_> = (0..6).map(|i| bx(30.0 + 30.0 * i as f64, 50.0, 20.0, 10.0, 0.9)).collect();
        boxes.push(bx(100.0, 150.0, 60.0, 30.0, 0.9));
        let out = filter_boxes(&boxes, (300, 300), None, &BoxFilterParams::default());
        assert_eq!(out.boxes.len(), 6);
        assert_eq!(out.representative.unwrap().w, 20.0);
    }

    #[test]
    fn expected_dims_prior() {
        let boxes: Vec<_> = (0..4).map(|i| bx(30.0 + 30.0 * i as f64, 50.0, 20.0, 10.0, 0.9)).collect();
        let out = filter_boxes(&boxes, (300, 300), Some((40.0, 20.0)), &BoxFilterParams::default());
        assert!(out.boxes.is_empty());
    }

    proptest! {
        #[test]
        fn idempotent(raw in proptest::collection::vec(
            (5.0f64..295.0, 5.0f64..295.0, 4.0f64..60.0, 4.0f64..40.0, 0.0f64..std::f64::consts::PI, 0.0f64..1.0), 0..25)
        ) {
            let boxes: Vec<_> = raw.into_iter().map(|(x, y, w, h, a, c)| OrientedBBox::new(x, y, w, h, a, c)).collect();
            let p = BoxFilterParams::default();
            let once = filter_boxes(&boxes, (300, 300), None, &p);
            let twice = filter_boxes(&once.boxes, (300, 300), None, &p);
            prop_assert_eq!(once, twice);
        }
    }
}
