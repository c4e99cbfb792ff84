use nalgebra::{Matrix3, Point3, Rotation3, Vector3};
use pvnav::camera::{camera_position, project_points, CameraIntrinsics, Pose};
use pvnav::pnp::*;
use pvnav::structure::FlightDirection;
use pvnav::synth::{generate_layout, inspection_rotation, LayoutSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn camera() -> CameraIntrinsics {
    CameraIntrinsics::pinhole(1164.0, 1164.0, 960.0, 540.0, 1920, 1080)
}

/// Corners of `columns` adjacent module columns of a one-bench layout.
fn bench_corners(spec: &LayoutSpec, columns: usize) -> (Vec<Point3<f64>>, Vector3<f64>, Vector3<f64>) {
    let model = generate_layout(&LayoutSpec {
        benches: 1,
        columns: vec![columns.max(2)],
        ..spec.clone()
    })
    .unwrap();
    let world = model
        .benches[0]
        .grid
        .iter()
        .flat_map(|row| row[..columns].iter())
        .flat_map(|id| model.module_world_corners(id).unwrap())
        .collect();
    let m = &model.modules[0];
    (world, m.normal, m.axis_u)
}

/// Inspection pose `depth` metres above the centroid of `world`, shifted and
/// tilted a little.
fn view(world: &[Point3<f64>], normal: Vector3<f64>, u: Vector3<f64>, depth: f64, rng: &mut ChaCha8Rng) -> Pose {
    let centroid = world.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / world.len() as f64;
    let lateral = u * rng.random_range(-0.5..0.5) + normal.cross(&u) * rng.random_range(-0.5..0.5);
    let c = centroid + lateral + normal * depth;
    let d = |rng: &mut ChaCha8Rng| rng.random_range(-5.0f64..5.0).to_radians();
    let wobble = Rotation3::from_euler_angles(d(rng), d(rng), d(rng));
    let direction = if rng.random_bool(0.5) { FlightDirection::Forward } else { FlightDirection::Backward };
    Pose::from_center(c.into(), inspection_rotation(normal, u, direction) * wobble.matrix())
}

fn observe(world: &[Point3<f64>], pose: &Pose, k: &CameraIntrinsics, sigma: f64, rng: &mut ChaCha8Rng) -> CorrespondenceSet {
    let noise = Normal::new(0.0, sigma.max(1e-300)).unwrap();
    let mut c = CorrespondenceSet::new(0);
    for (p, w) in project_points(world, pose, k, false).iter().zip(world) {
        let mut px = p.pixel;
        if sigma > 0.0 {
            px.x += noise.sample(rng);
            px.y += noise.sample(rng);
        }
        c.push(px, *w);
    }
    c
}

/// Eight corners of two modules at opposite ends of the view: row 0 of the
/// first column and row 1 of the sixteenth.
fn spread_corners() -> (Vec<Point3<f64>>, Vector3<f64>, Vector3<f64>) {
    let model = generate_layout(&LayoutSpec {
        benches: 1,
        columns: vec![16],
        ..LayoutSpec::ppa_like()
    })
    .unwrap();
    let world = ["L0B0R0C00", "L0B0R1C15"]
        .iter()
        .flat_map(|id| model.module_world_corners(id).unwrap())
        .collect();
    let m = &model.modules[0];
    (world, m.normal, m.axis_u)
}

fn assert_rotation(est: &PoseEstimate) {
    let r = est.pose.rotation;
    assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-9);
    assert!((r.determinant() - 1.0).abs() < 1e-9);
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[test]
fn eight_coplanar_corners_without_noise() {
    let (world, n, u) = bench_corners(&LayoutSpec::ppa_like(), 1);
    assert_eq!(world.len(), 8);
    let pose = Pose::from_center(
        Point3::from(world.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / 8.0 + n * 12.0),
        inspection_rotation(n, u, FlightDirection::Forward),
    );
    let k = camera();
    let est = solve_epnp(&observe(&world, &pose, &k, 0.0, &mut ChaCha8Rng::seed_from_u64(0)), &k).unwrap();
    assert!((est.position - pose.camera_position()).norm() < 1e-6);
    assert!(est.pose.rotation_distance(&pose) < 1e-8);
    assert!(est.reprojection_error < 1e-6);
    assert_eq!(est.count, 8);
    assert_rotation(&est);
}

#[test]
fn inspection_envelope_is_exact_without_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let k = camera();
    for spec in [LayoutSpec::ppa_like(), LayoutSpec::ppb_like()] {
        for _ in 0..200 {
            let columns = rng.random_range(1..6);
            let (world, n, u) = bench_corners(&spec, columns);
            let depth = rng.random_range(12.0..30.0);
            let pose = view(&world, n, u, depth, &mut rng);
            let est = solve_epnp(&observe(&world, &pose, &k, 0.0, &mut rng), &k).unwrap();
            let truth = pose.camera_position();
            let rel = (est.position - truth).norm() / depth;
            assert!(rel < 1e-6, "depth {depth}, {columns} columns: relative error {rel:e}");
            assert!(est.pose.rotation_distance(&pose) < 1e-6);
            assert!((camera_position(&est.pose.rotation, &est.pose.translation) - est.position).norm() < 1e-12);
            assert_rotation(&est);
        }
    }
}

#[test]
fn half_pixel_noise_at_twelve_metres() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let k = camera();
    // one module column (1 m x 4 m) is limited by the tilt/translation
    // ambiguity to about 0.28 m, which a full maximum likelihood refinement
    // does not improve; spread corners constrain the tilt
    let (world, n, u) = spread_corners();
    assert_eq!(world.len(), 8);
    let errors: Vec<f64> = (0..1000)
        .map(|_| {
            let pose = view(&world, n, u, 12.0, &mut rng);
            let est = solve_epnp(&observe(&world, &pose, &k, 0.5, &mut rng), &k).unwrap();
            assert_rotation(&est);
            (est.position - pose.camera_position()).norm()
        })
        .collect();
    let med = median(errors);
    assert!(med < 0.05, "median position error {med}");
}

#[test]
fn reprojection_error_grows_with_pixel_noise() {
    let k = camera();
    let (world, n, u) = bench_corners(&LayoutSpec::ppa_like(), 3);
    let mut means = Vec::new();
    for sigma in [0.0, 0.25, 0.5, 1.0] {
        // the same poses for every noise level
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let total: f64 = (0..300)
            .map(|_| {
                let pose = view(&world, n, u, rng.random_range(12.0..30.0), &mut rng);
                let est = solve_epnp(&observe(&world, &pose, &k, sigma, &mut rng), &k).unwrap();
                assert_rotation(&est);
                est.reprojection_error
            })
            .sum();
        means.push(total / 300.0);
    }
    assert!(means[0] < 1e-6, "{means:?}");
    assert!(means.windows(2).all(|w| w[1] >= w[0]), "{means:?}");
}

#[test]
fn more_rows_give_better_positions() {
    let k = camera();
    let med = |spec: &LayoutSpec, expected: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (world, n, u) = bench_corners(spec, 1);
        assert_eq!(world.len(), expected);
        median(
            (0..1000)
                .map(|_| {
                    let pose = view(&world, n, u, 12.0, &mut rng);
                    let est = solve_epnp(&observe(&world, &pose, &k, 0.5, &mut rng), &k).unwrap();
                    (est.position - pose.camera_position()).norm()
                })
                .collect(),
        )
    };
    let two_rows = med(&LayoutSpec::ppa_like(), 8);
    let five_rows = med(&LayoutSpec::ppb_like(), 20);
    assert!(five_rows <= two_rows, "20 points {five_rows}, 8 points {two_rows}");
}

#[test]
fn insufficient_and_degenerate_inputs() {
    let k = camera();
    let (world, n, u) = bench_corners(&LayoutSpec::ppa_like(), 1);
    let pose = view(&world, n, u, 12.0, &mut ChaCha8Rng::seed_from_u64(5));
    let c = observe(&world[..3], &pose, &k, 0.0, &mut ChaCha8Rng::seed_from_u64(5));
    assert_eq!(solve_epnp(&c, &k), Err(PnpError::Insufficient(3)));
    // four corners along the bottom edges of a row are collinear
    let line: Vec<_> = (0..5).map(|i| world[0] + (world[1] - world[0]) * i as f64).collect();
    let c = observe(&line, &pose, &k, 0.0, &mut ChaCha8Rng::seed_from_u64(5));
    assert_eq!(solve_epnp(&c, &k), Err(PnpError::Degenerate));
}

#[test]
fn camera_position_examples() {
    let c = camera_position(&Matrix3::identity(), &Vector3::new(1.0, 2.0, 3.0));
    assert_eq!(c, Point3::new(-1.0, -2.0, -3.0));
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::PI).into_inner();
    let c = camera_position(&rz, &Vector3::new(1.0, 0.0, 0.0));
    assert!((c - Point3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn noisy_rotations_stay_orthonormal(seed in 0u64..10_000, sigma in 0.0f64..3.0, columns in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = camera();
        let (world, n, u) = bench_corners(&LayoutSpec::ppb_like(), columns);
        let pose = view(&world, n, u, rng.random_range(12.0..30.0), &mut rng);
        let est = solve_epnp(&observe(&world, &pose, &k, sigma, &mut rng), &k).unwrap();
        let r = est.pose.rotation;
        prop_assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-9);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        prop_assert!(est.reprojection_error >= 0.0);
    }
}
