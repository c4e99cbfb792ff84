use nalgebra::{Point2, Rotation3, Unit, Vector2, Vector3};
use pvnav::bbox::{structure_from_boxes, BoxStructureParams};
use pvnav::camera::{CameraIntrinsics, Pose};
use pvnav::plant::*;
use pvnav::structure::*;
use pvnav::synth::*;
use pvnav::tracking::{detect_bench_ends, detect_bench_gaps, GapParams};
use proptest::prelude::*;
use std::collections::{BTreeSet, HashSet};

/// Structure with unit-square quads on a regular grid; association only
/// looks at the logical coordinates.
fn grid_structure(coords: &[(usize, i64)], direction: FlightDirection) -> SemanticStructure {
    let rows = coords.iter().map(|c| c.0 + 1).max().unwrap_or(0);
    let detections = coords
        .iter()
        .map(|&(row, seq)| {
            let (x, y) = (seq as f64 * 10.0, row as f64 * 10.0);
            let quad = [
                Point2::new(x, y),
                Point2::new(x + 5.0, y),
                Point2::new(x + 5.0, y + 5.0),
                Point2::new(x, y + 5.0),
            ];
            StructuredDetection {
                footprint: Footprint::Quad(quad),
                coord: LogicalCoord { row, seq },
                track: None,
            }
        })
        .collect();
    SemanticStructure {
        detections,
        rows: (0..rows)
            .map(|r| RowLine {
                point: Point2::new(0.0, r as f64 * 10.0),
                direction: Vector2::x(),
            })
            .collect(),
        representative: (5.0, 5.0),
        direction,
    }
}

fn full_grid(rows: usize, seqs: std::ops::Range<i64>) -> Vec<(usize, i64)> {
    (0..rows).flat_map(|r| seqs.clone().map(move |s| (r, s))).collect()
}

fn end_at(row: usize, seq: i64, side: EndSide, hint: &str) -> ObservedAnchor {
    ObservedAnchor {
        kind: AnchorKind::BenchEnd,
        row,
        seq,
        seq_after: None,
        side: Some(side),
        hint: Some(hint.into()),
    }
}

#[test]
fn bench_start_at_sequence_zero_maps_to_columns() {
    let model = generate_layout(&LayoutSpec::ppa_like()).unwrap();
    let s = grid_structure(&full_grid(2, 0..8), FlightDirection::Forward);
    let map = associate_structure(&s, &end_at(0, 0, EndSide::Start, "L0B1R0-start"), &model).unwrap();
    assert!(map.valid && map.unmapped.is_empty());
    assert_eq!(map.anchor.as_deref(), Some("L0B1R0-start"));
    for d in &s.detections {
        let c = d.coord;
        assert_eq!(map.get(&c).unwrap(), module_id(0, 1, c.row, c.seq as usize));
    }
}

#[test]
fn gap_after_column_twenty() {
    let spec = LayoutSpec {
        benches: 2,
        columns: vec![21, 12],
        ..LayoutSpec::ppa_like()
    };
    let model = generate_layout(&spec).unwrap();
    let s = grid_structure(&full_grid(2, 0..12), FlightDirection::Forward);
    let gap = ObservedAnchor {
        kind: AnchorKind::BenchGap,
        row: 1,
        seq: 5,
        seq_after: Some(6),
        side: None,
        hint: Some("L0B0R1-gap".into()),
    };
    let map = associate_structure(&s, &gap, &model).unwrap();
    for row in 0..2 {
        let at = |seq| map.get(&LogicalCoord { row, seq }).unwrap().to_string();
        assert_eq!(at(5), module_id(0, 0, row, 20));
        assert_eq!(at(6), module_id(0, 1, row, 0));
        assert_eq!(at(0), module_id(0, 0, row, 15));
        assert_eq!(at(11), module_id(0, 1, row, 5));
    }
}

#[test]
fn gap_with_skipped_positions_aligns_both_sides() {
    let spec = LayoutSpec {
        benches: 2,
        columns: vec![21, 12],
        ..LayoutSpec::ppa_like()
    };
    let model = generate_layout(&spec).unwrap();
    // a wide gap counted as two skipped positions
    let coords: Vec<_> = full_grid(2, 0..6).into_iter().chain(full_grid(2, 8..12)).collect();
    let s = grid_structure(&coords, FlightDirection::Forward);
    let gap = ObservedAnchor {
        kind: AnchorKind::BenchGap,
        row: 0,
        seq: 5,
        seq_after: Some(8),
        side: None,
        hint: None,
    };
    let err = associate_structure(&s, &gap, &model).unwrap_err();
    assert!(matches!(err, PlantError::AmbiguousAnchor(2)), "{err:?}");
    let gap = ObservedAnchor {
        hint: Some("L0B0R0-gap".into()),
        ..gap
    };
    let map = associate_structure(&s, &gap, &model).unwrap();
    assert_eq!(map.get(&LogicalCoord { row: 0, seq: 8 }), Some("L0B1R0C00"));
    assert_eq!(map.get(&LogicalCoord { row: 1, seq: 11 }), Some("L0B1R1C03"));
}

#[test]
fn four_rows_on_a_two_row_bench_overflow() {
    let model = generate_layout(&LayoutSpec::ppa_like()).unwrap();
    let s = grid_structure(&full_grid(4, 0..5), FlightDirection::Forward);
    let err = associate_structure(&s, &end_at(0, 0, EndSide::Start, "L0B0R0-start"), &model).unwrap_err();
    assert!(matches!(err, PlantError::ExtentOverflow { rows: 2, .. }), "{err:?}");
}

#[test]
fn hint_of_wrong_kind_or_side_is_rejected() {
    let model = generate_layout(&LayoutSpec::ppa_like()).unwrap();
    let s = grid_structure(&full_grid(2, 0..5), FlightDirection::Forward);
    let err = associate_structure(&s, &end_at(0, 0, EndSide::Start, "L0B0R0-end"), &model).unwrap_err();
    assert!(matches!(err, PlantError::NoMatchingAnchor));
    let err = associate_structure(&s, &end_at(0, 0, EndSide::Start, "L0B0R0-gap"), &model).unwrap_err();
    assert!(matches!(err, PlantError::NoMatchingAnchor));
    let err = associate_structure(&s, &end_at(0, 0, EndSide::Start, "nowhere"), &model).unwrap_err();
    assert!(matches!(err, PlantError::UnknownAnchor(_)));
}

#[test]
fn detections_past_the_bench_end_are_unmapped() {
    let model = generate_layout(&LayoutSpec::ppa_like()).unwrap();
    // last module of bench 2 (25 columns) at seq 4, three more positions after it
    let s = grid_structure(&full_grid(2, 0..8), FlightDirection::Forward);
    let map = associate_structure(&s, &end_at(0, 4, EndSide::End, "L0B2R0-end"), &model).unwrap();
    assert_eq!(map.get(&LogicalCoord { row: 0, seq: 4 }), Some("L0B2R0C24"));
    assert_eq!(map.unmapped.len(), 6);
    assert!(map.unmapped.iter().all(|c| c.seq > 4));
}

fn flight(spec: &LayoutSpec, direction: FlightDirection) -> (PlantModel, FlightLog) {
    let model = generate_layout(spec).unwrap();
    let plan = FlightPlan {
        direction,
        ..Default::default()
    };
    let traj = plan_trajectory(&model, &plan).unwrap();
    let log = simulate_flight(&model, &traj, &default_intrinsics(), 3.0, &GnssNoise::default()).unwrap();
    (model, log)
}

fn truth_ids(model: &PlantModel, pose: &Pose, k: &CameraIntrinsics, s: &SemanticStructure) -> Vec<Option<String>> {
    let vis = visible_modules(model, pose, k, -100.0);
    s.detections
        .iter()
        .map(|d| {
            let c = d.center();
            vis.iter()
                .map(|(id, q)| {
                    let qc = Point2::from((q[0].coords + q[1].coords + q[2].coords + q[3].coords) / 4.0);
                    ((qc - c).norm(), id)
                })
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .filter(|(e, _)| *e < 10.0)
                .map(|(_, id)| id.clone())
        })
        .collect()
}

/// Model anchor of the observed end, named from the truth id of the end
/// module.
fn end_anchor_id(model: &PlantModel, module: &str) -> String {
    model
        .anchors
        .iter()
        .find(|a| a.kind == AnchorKind::BenchEnd && a.modules[0] == module)
        .map(|a| a.id.clone())
        .unwrap()
}

/// Associates every frame of a noise-free pass that shows a bench end or a
/// bench gap and compares all mapped detections with the truth.
fn check_pass(spec: &LayoutSpec, direction: FlightDirection) -> (usize, usize) {
    let (model, log) = flight(spec, direction);
    let k = log.intrinsics;
    let boxes = simulate_detections(&model, &log, &DetectorNoise::default());
    let (mut frames, mut mapped) = (0, 0);
    for (i, fd) in boxes.iter().enumerate().step_by(4) {
        let Some(s) = structure_from_boxes(&fd.boxes, (k.width, k.height), None, direction, &BoxStructureParams::default())
        else {
            continue;
        };
        let pose = &log.truth[i].pose;
        let ids = truth_ids(&model, pose, &k, &s);
        let id_at = |c: LogicalCoord| {
            let j = s.detections.iter().position(|d| d.coord == c).unwrap();
            ids[j].clone().unwrap()
        };
        let mut observed = Vec::new();
        for e in detect_bench_ends(&s, (k.width, k.height), 1.5) {
            let module = id_at(LogicalCoord { row: e.row, seq: e.seq });
            observed.push(e.anchor(Some(end_anchor_id(&model, &module))));
        }
        if observed.is_empty() {
            let img = render_frame(&model, pose, &k, &RenderOptions::default());
            for g in detect_bench_gaps(&s, &img, &GapParams::default()) {
                let before = id_at(LogicalCoord { row: g.row, seq: g.between.0 });
                let anchor = model
                    .anchors
                    .iter()
                    .find(|a| a.kind == AnchorKind::BenchGap && a.modules.contains(&before))
                    .unwrap();
                observed.push(g.anchor(Some(anchor.id.clone())));
            }
        }
        for obs in &observed {
            let map = associate_structure(&s, obs, &model).unwrap();
            assert!(map.unmapped.is_empty(), "frame {i}: {:?}", map.unmapped);
            for (d, truth) in s.detections.iter().zip(&ids) {
                assert_eq!(map.get(&d.coord), truth.as_deref(), "frame {i} {:?} via {obs:?}", d.coord);
                mapped += 1;
            }
        }
        frames += !observed.is_empty() as usize;
    }
    (frames, mapped)
}

#[test]
fn noise_free_frames_map_to_truth_forward() {
    let (frames, mapped) = check_pass(&LayoutSpec::ppa_like(), FlightDirection::Forward);
    assert!(frames >= 10 && mapped > 200, "{frames} frames, {mapped} detections");
}

#[test]
fn noise_free_frames_map_to_truth_backward() {
    let (frames, mapped) = check_pass(&LayoutSpec::ppa_like(), FlightDirection::Backward);
    assert!(frames >= 10 && mapped > 200, "{frames} frames, {mapped} detections");
}

#[test]
fn five_row_landscape_plant_maps_to_truth() {
    let (frames, mapped) = check_pass(&LayoutSpec::ppb_like(), FlightDirection::Forward);
    assert!(frames >= 5 && mapped > 200, "{frames} frames, {mapped} detections");
}

fn layout() -> impl Strategy<Value = LayoutSpec> {
    (1usize..4, 1usize..5, 3usize..30, 0u64..1000, prop::bool::ANY).prop_map(|(benches, rows, cols, seed, portrait)| {
        let base = if portrait { LayoutSpec::ppa_like() } else { LayoutSpec::ppb_like() };
        LayoutSpec {
            benches,
            rows,
            columns: vec![cols],
            seed,
            jitter: 0.01,
            ..base
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn association_is_injective(
        spec in layout(),
        anchor_pick in 0usize..1000,
        rows in 1usize..5,
        seqs in prop::collection::btree_set(-20i64..40, 1..30),
        backward in prop::bool::ANY,
    ) {
        let model = generate_layout(&spec).unwrap();
        let direction = if backward { FlightDirection::Backward } else { FlightDirection::Forward };
        let anchor = &model.anchors[anchor_pick % model.anchors.len()];
        let rows = rows.min(spec.rows);
        let coords: Vec<(usize, i64)> = (0..rows).flat_map(|r| seqs.iter().map(move |&s| (r, s))).collect();
        let s = grid_structure(&coords, direction);
        let first = *seqs.iter().next().unwrap();
        let side = anchor.side.map(|side| match direction {
            FlightDirection::Forward => side,
            FlightDirection::Backward => if side == EndSide::Start { EndSide::End } else { EndSide::Start },
        });
        let observed = ObservedAnchor {
            kind: anchor.kind,
            row: 0,
            seq: first,
            seq_after: (anchor.kind == AnchorKind::BenchGap).then_some(first + 1),
            side,
            hint: Some(anchor.id.clone()),
        };
        match associate_structure(&s, &observed, &model) {
            Ok(map) => {
                let ids: HashSet<&String> = map.mapping.values().collect();
                prop_assert_eq!(ids.len(), map.mapping.len());
                for id in &ids {
                    prop_assert!(model.module(id).is_some());
                }
                let all: BTreeSet<LogicalCoord> = map.mapping.keys().chain(&map.unmapped).copied().collect();
                prop_assert_eq!(all.len(), coords.len());
                prop_assert_eq!(map.mapping.len() + map.unmapped.len(), coords.len());
            }
            Err(PlantError::ExtentOverflow { .. }) => {}
            Err(e) => prop_assert!(false, "{e:?}"),
        }
    }

    #[test]
    fn corners_follow_rigid_transforms(
        spec in layout(),
        axis in (-1.0f64..1.0, -1.0f64..1.0, 0.1f64..1.0),
        angle in -3.1f64..3.1,
        t in (-500.0f64..500.0, -500.0f64..500.0, -50.0f64..50.0),
    ) {
        let model = generate_layout(&spec).unwrap();
        let rot = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::new(axis.0, axis.1, axis.2)), angle);
        let t = Vector3::new(t.0, t.1, t.2);
        let moved = model.transformed(&rot, &t);
        for m in &model.modules {
            let a = model.module_world_corners(&m.id).unwrap();
            let b = moved.module_world_corners(&m.id).unwrap();
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((rot * p + t - q).norm() < 1e-9);
            }
        }
    }
}
