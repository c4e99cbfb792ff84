//! End-to-end replay: detection, structure, anchors and tracking,
//! association, PnP, and filtering over a recorded or synthetic flight.

mod config;
mod report;

pub use config::{
    DetectorConfig, DetectorSource, InitParams, InputConfig, ModelFrame, PipelineParams, RunConfig, SimulationSpec,
};
pub use report::{
    five_point, quantile, summarize, time_stages, ErrorStatistics, FivePoint, FrameRow, RunReport, StageMeans,
    StageTimes, Summary, FRAMES_FILE, SUMMARY_FILE, TIMINGS_FILE,
};

use crate::bbox::{load_detections, structure_from_boxes, to_detection_file, FrameDetections, OrientedBBox};
use crate::camera::{project_point, CameraIntrinsics, Distortion, Pose};
use crate::edge::{detect_modules, expected_module_size};
use crate::filter::{
    compute_th_r, pnp_weight, predict, rotation_to_ypr, update, ypr_to_rotation, FilterState, GateConfig, Measurement,
};
use crate::imaging::Image;
use crate::plant::{associate_structure, associate_with_reference, load_plant_model, AssociationMap, ObservedAnchor, PlantModel};
use crate::pnp::{solve_epnp, CorrespondenceSet, PoseEstimate};
use crate::structure::{FlightDirection, LogicalCoord, SemanticStructure};
use crate::synth::{
    frame_path, generate_layout, plan_trajectory, read_flight_log, render_flight, render_frame, simulate_detections,
    simulate_flight, write_flight_log, FlightLog, RenderOptions,
};
use crate::tracking::{detect_bench_ends, detect_bench_gaps, track_modules, FlowPyramid, TrackSet};
use nalgebra::{Point2, Point3, Vector3};
use rayon::prelude::*;
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const MODEL_FILE: &str = "model.json";
pub const DETECTIONS_FILE: &str = "detections.json";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("initialization failed: {0}")]
    Initialization(String),
    #[error("report: {0}")]
    Report(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

impl PipelineError {
    /// Process exit code: 2 for configuration errors, 3 for initialization
    /// failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Initialization(_) => 3,
            _ => 1,
        }
    }
}

fn config_err(what: &str, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Config(format!("{what}: {e}"))
}

// ---- flights ----

enum Frames {
    Dir(PathBuf),
    Render(RenderOptions),
}

struct Flight {
    model: PlantModel,
    log: FlightLog,
    frames: Frames,
}

impl Flight {
    fn load(input: &InputConfig) -> Result<Self, PipelineError> {
        match input {
            InputConfig::Flight { dir, model } => {
                let log = read_flight_log(dir).map_err(|e| config_err(&format!("flight log {}", dir.display()), e))?;
                let path = model.clone().unwrap_or_else(|| dir.join(MODEL_FILE));
                let model =
                    load_plant_model(&path).map_err(|e| config_err(&format!("plant model {}", path.display()), e))?;
                Ok(Flight {
                    model,
                    log,
                    frames: Frames::Dir(dir.clone()),
                })
            }
            InputConfig::Synthetic(spec) => {
                let (model, log) = simulate(spec)?;
                Ok(Flight {
                    model,
                    log,
                    frames: Frames::Render(spec.render.clone()),
                })
            }
        }
    }

    fn image(&self, i: usize) -> Result<Image, PipelineError> {
        match &self.frames {
            Frames::Dir(dir) => {
                let path = frame_path(dir, &self.log.frames[i]);
                Image::load(&path).map_err(|e| PipelineError::Other(format!("{}: {e}", path.display())))
            }
            // same per-frame seeds as `render_flight`
            Frames::Render(opts) => {
                let o = RenderOptions {
                    seed: opts.seed.wrapping_add(i as u64),
                    ..opts.clone()
                };
                Ok(render_frame(&self.model, &self.log.truth[i].pose, &self.log.intrinsics, &o))
            }
        }
    }

    /// Linearly interpolated GNSS position and velocity at `t`.
    fn gnss_at(&self, t: f64) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let g = &self.log.gnss;
        let v = |i: usize| (Vector3::from(g[i].position), Vector3::from(g[i].velocity));
        let first = g.first()?;
        let j = g.partition_point(|s| s.timestamp < t);
        if j == 0 || t <= first.timestamp {
            return Some(v(0));
        }
        if j == g.len() {
            return Some(v(g.len() - 1));
        }
        let (a, b) = (&g[j - 1], &g[j]);
        let s = (t - a.timestamp) / (b.timestamp - a.timestamp);
        let (pa, va) = v(j - 1);
        let (pb, vb) = v(j);
        Some((pa + (pb - pa) * s, va + (vb - va) * s))
    }
}

/// Generates the plant and flight of a synthetic spec.
pub fn simulate(spec: &SimulationSpec) -> Result<(PlantModel, FlightLog), PipelineError> {
    spec.validate()?;
    let model = generate_layout(&spec.layout).map_err(|e| config_err("layout", e))?;
    let traj = plan_trajectory(&model, &spec.plan).map_err(|e| config_err("flight plan", e))?;
    let log = simulate_flight(&model, &traj, &spec.intrinsics(), spec.plan.fps, &spec.gnss)
        .map_err(|e| config_err("flight", e))?;
    Ok((model, log))
}

/// Writes a synthetic flight as a replayable directory: `log.json`, the
/// rendered frames, `model.json`, and `detections.json` when simulated
/// boxes are requested.
pub fn simulate_to_dir(spec: &SimulationSpec, out: impl AsRef<Path>) -> Result<(), PipelineError> {
    let out = out.as_ref();
    let (model, log) = simulate(spec)?;
    let images = render_flight(&model, &log, &spec.render);
    write_flight_log(out, &log, &images).map_err(|e| PipelineError::Other(e.to_string()))?;
    std::fs::write(out.join(MODEL_FILE), model.to_json())?;
    if let Some(noise) = &spec.detections {
        let dets = simulate_detections(&model, &log, noise);
        let text = serde_json::to_string_pretty(&to_detection_file(&dets)).map_err(|e| PipelineError::Other(e.to_string()))?;
        std::fs::write(out.join(DETECTIONS_FILE), text)?;
    }
    Ok(())
}

// ---- detection ----

enum Detector {
    Edge(crate::edge::EdgeParams),
    Boxes(HashMap<usize, Vec<OrientedBBox>>),
}

impl Detector {
    fn new(source: DetectorSource, flight: &Flight) -> Result<Self, PipelineError> {
        let by_index = |d: Vec<FrameDetections>| d.into_iter().map(|f| (f.index, f.boxes)).collect();
        Ok(match source {
            DetectorSource::Edge(p) => Detector::Edge(p),
            DetectorSource::BboxFile(path) => Detector::Boxes(by_index(
                load_detections(&path).map_err(|e| config_err(&format!("detections {}", path.display()), e))?,
            )),
            DetectorSource::BboxSimulated(noise) => {
                Detector::Boxes(by_index(simulate_detections(&flight.model, &flight.log, &noise)))
            }
        })
    }

    /// Box detections live in the distorted image; edge detections are
    /// already undistorted.
    fn undistorts(&self) -> bool {
        matches!(self, Detector::Edge(_))
    }
}

struct Detected {
    image: Image,
    structure: Option<SemanticStructure>,
    acquire: f64,
    detection: f64,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

fn median_of(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Frame indices processed under an fps limit: a frame is taken when at
/// least `1/fps` has passed since the last taken one.
pub fn select_frames(timestamps: &[f64], fps: Option<f64>) -> Vec<usize> {
    let Some(fps) = fps else {
        return (0..timestamps.len()).collect();
    };
    let period = 1.0 / fps;
    let mut out = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for (i, &t) in timestamps.iter().enumerate() {
        // tolerance for timestamps rounded in the log
        if t - last >= period - 1e-6 {
            out.push(i);
            last = t;
        }
    }
    out
}

/// Infers the flight direction from the mean GNSS velocity along the model
/// row axis.
fn infer_direction(flight: &Flight) -> FlightDirection {
    let axis = flight.model.modules.first().map(|m| m.axis_u).unwrap_or_else(Vector3::x);
    let along: f64 = flight.log.gnss.iter().map(|g| Vector3::from(g.velocity).dot(&axis)).sum();
    if along < 0.0 {
        FlightDirection::Backward
    } else {
        FlightDirection::Forward
    }
}

// ---- pose ----

/// 2D-3D correspondences of the mapped modules. Module corners are
/// top-left, top-right, bottom-right, bottom-left in both the image and the
/// model; flying backwards turns the image by half a turn.
fn correspondences(
    structure: &SemanticStructure,
    map: &AssociationMap,
    model: &PlantModel,
    k: &CameraIntrinsics,
    undistort: bool,
    frame: usize,
) -> (CorrespondenceSet, usize) {
    let shift = match structure.direction {
        FlightDirection::Forward => 0,
        FlightDirection::Backward => 2,
    };
    let mut c = CorrespondenceSet::new(frame);
    let mut modules = 0;
    for d in &structure.detections {
        let Some(id) = map.get(&d.coord) else { continue };
        let Ok(world) = model.module_world_corners(id) else { continue };
        for (i, px) in d.footprint.corners().into_iter().enumerate() {
            let px = if undistort { k.undistort_pixel(px) } else { px };
            c.push(px, world[(i + shift) % 4]);
        }
        modules += 1;
    }
    (c, modules)
}

fn pinhole(k: &CameraIntrinsics) -> CameraIntrinsics {
    CameraIntrinsics {
        distortion: Distortion::default(),
        ..*k
    }
}

fn state_pose(s: &FilterState) -> Pose {
    Pose::from_center(Point3::from(s.position), ypr_to_rotation(&s.orientation))
}

/// Identifies detections by projecting the model with a pose prior: each
/// detection takes the module whose projected center is nearest, within
/// half the representative short side.
fn known_from_prior(
    structure: &SemanticStructure,
    model: &PlantModel,
    pose: &Pose,
    k: &CameraIntrinsics,
    undistort: bool,
) -> Vec<(LogicalCoord, String)> {
    let radius = 0.5 * structure.representative.1.max(1.0);
    let projected: Vec<(Point2<f64>, &str)> = model
        .modules
        .iter()
        .filter(|m| pose.transform(&m.center).z > 0.0)
        .map(|m| (project_point(&m.center, pose, k, false).pixel, m.id.as_str()))
        .collect();
    structure
        .detections
        .iter()
        .filter_map(|d| {
            let c = if undistort { k.undistort_pixel(d.center()) } else { d.center() };
            let (dist, id) = projected
                .iter()
                .map(|(p, id)| ((p - c).norm(), *id))
                .min_by(|a, b| a.0.total_cmp(&b.0))?;
            (dist < radius).then(|| (d.coord, id.to_string()))
        })
        .collect()
}

// ---- initialization ----

struct Hypothesis {
    anchor: String,
    map: AssociationMap,
    estimate: PoseEstimate,
    gnss_distance: f64,
}

struct Initializer<'a> {
    flight: &'a Flight,
    cfg: &'a RunConfig,
    k: CameraIntrinsics,
    undistort: bool,
    streak: Option<(String, usize)>,
    observations: usize,
    hypotheses: usize,
}

impl Initializer<'_> {
    /// Best anchor hypothesis of one frame.
    fn hypothesis(
        &mut self,
        s: &SemanticStructure,
        observed: &[ObservedAnchor],
        gnss: Option<Vector3<f64>>,
        frame: usize,
    ) -> Option<Hypothesis> {
        let p = &self.cfg.params;
        let tol = p.init.gnss_tolerance.unwrap_or(p.gate.th_d);
        let mut best: Option<Hypothesis> = None;
        for obs in observed {
            self.observations += 1;
            let candidates: Vec<String> = match &self.cfg.anchor_hint {
                Some(h) => vec![h.clone()],
                None => {
                    let m = &self.flight.model;
                    m.anchors.iter().filter(|a| a.kind == obs.kind).map(|a| a.id.clone()).collect()
                }
            };
            for anchor in candidates {
                let hinted = ObservedAnchor {
                    hint: Some(anchor.clone()),
                    ..obs.clone()
                };
                let Ok(map) = associate_structure(s, &hinted, &self.flight.model) else { continue };
                let (c, modules) = correspondences(s, &map, &self.flight.model, &self.k, self.undistort, frame);
                if modules < p.min_modules {
                    continue;
                }
                let Ok(est) = solve_epnp(&c, &self.k) else { continue };
                if !(est.reprojection_error <= p.init.max_reprojection) {
                    continue;
                }
                let gnss_distance = match (self.cfg.model_frame, gnss) {
                    (ModelFrame::Georeferenced, Some(g)) => (est.position.coords - g).norm(),
                    _ => 0.0,
                };
                if gnss_distance > tol {
                    continue;
                }
                self.hypotheses += 1;
                let h = Hypothesis {
                    anchor,
                    map,
                    estimate: est,
                    gnss_distance,
                };
                let key = |h: &Hypothesis| (h.gnss_distance, h.estimate.reprojection_error);
                let better = match &best {
                    None => true,
                    Some(b) => {
                        let (a, bk) = (key(&h), key(b));
                        a.0.total_cmp(&bk.0).then(a.1.total_cmp(&bk.1)).then_with(|| h.anchor.cmp(&b.anchor)).is_lt()
                    }
                };
                if better {
                    best = Some(h);
                }
            }
        }
        best
    }

    /// Feeds one frame's best hypothesis; returns it once the same anchor
    /// was seen over `confirm_frames` consecutive processed frames.
    fn confirm(&mut self, h: Option<Hypothesis>) -> Option<Hypothesis> {
        let Some(h) = h else {
            self.streak = None;
            return None;
        };
        let n = match &self.streak {
            Some((a, n)) if *a == h.anchor => n + 1,
            _ => 1,
        };
        self.streak = Some((h.anchor.clone(), n));
        (n >= self.cfg.params.init.confirm_frames).then_some(h)
    }
}

// ---- replay ----

struct Calibration {
    samples: Vec<f64>,
    target: Option<usize>,
}

impl Calibration {
    fn push(&mut self, eps_r: f64, gate: &mut GateConfig) {
        let Some(n) = self.target else { return };
        self.samples.push(eps_r);
        if self.samples.len() >= n {
            if let Ok(th) = compute_th_r(&self.samples) {
                gate.th_r = th.max(1e-6);
            }
            self.target = None;
        }
    }
}

/// Runs the configured flight and returns the per-frame report. Frames are
/// detected ahead in parallel batches; tracking, association, and filtering
/// run in frame order.
pub fn run_replay(cfg: &RunConfig) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    let flight = Flight::load(&cfg.input)?;
    let detector = Detector::new(cfg.detector.source()?, &flight)?;
    let p = cfg.params;
    let k = flight.log.intrinsics;
    let kp = pinhole(&k);
    let undistort = !detector.undistorts();
    let direction = cfg.direction.unwrap_or_else(|| infer_direction(&flight));
    let georef = cfg.model_frame == ModelFrame::Georeferenced;
    if let Some(h) = &cfg.anchor_hint {
        if flight.model.anchor(h).is_none() {
            return Err(PipelineError::Config(format!("unknown anchor hint {h}")));
        }
    }
    let (mw, mh): (Vec<f64>, Vec<f64>) = flight.model.modules.iter().map(|m| (m.width, m.height)).unzip();
    if mw.is_empty() {
        return Err(PipelineError::Config("plant model has no modules".into()));
    }
    let expected = expected_module_size(&k, (median_of(mw), median_of(mh)), p.nominal_distance);
    let size = (k.width, k.height);

    let times: Vec<f64> = flight.log.frames.iter().map(|f| f.timestamp).collect();
    let selected = select_frames(&times, cfg.fps);

    let mut init = Initializer {
        flight: &flight,
        cfg,
        k: kp,
        undistort,
        streak: None,
        observations: 0,
        hypotheses: 0,
    };
    let mut gate = p.gate;
    let mut calibration = Calibration {
        samples: Vec::new(),
        target: p.calibration_frames,
    };
    let mut tracks = TrackSet::new();
    let mut state: Option<FilterState> = None;
    let mut prev_pyramid: Option<FlowPyramid> = None;
    let mut report = RunReport::default();

    for batch in selected.chunks(p.batch) {
        let detected: Vec<Result<Detected, PipelineError>> = batch
            .par_iter()
            .map(|&i| {
                let t0 = Instant::now();
                let image = flight.image(i)?;
                let acquire = ms(t0);
                let t1 = Instant::now();
                let structure = match &detector {
                    Detector::Edge(params) => detect_modules(&image, &k, expected, None, direction, params)
                        .map_err(|e| PipelineError::Other(format!("frame {i}: {e}")))?
                        .structure,
                    Detector::Boxes(by_frame) => by_frame
                        .get(&i)
                        .and_then(|b| structure_from_boxes(b, size, Some(expected), direction, &p.bbox)),
                };
                Ok(Detected {
                    image,
                    structure,
                    acquire,
                    detection: ms(t1),
                })
            })
            .collect();

        for (&i, det) in batch.iter().zip(detected) {
            let det = det?;
            let t = times[i];
            let mut st = StageTimes {
                frame: i,
                acquire: det.acquire,
                detection: det.detection,
                ..Default::default()
            };
            let mut row = FrameRow {
                frame: i,
                timestamp: t,
                th_r: gate.th_r,
                th_d: gate.th_d,
                ..Default::default()
            };
            let gnss = flight.gnss_at(t);
            let truth = flight.log.truth.get(i).map(|e| e.pose);

            // tracking and anchor observations
            let t_track = Instant::now();
            let mut s = det.structure.unwrap_or_else(|| SemanticStructure {
                detections: Vec::new(),
                rows: Vec::new(),
                representative: (0.0, 0.0),
                direction,
            });
            let pyramid = FlowPyramid::new(&det.image, p.flow.levels);
            let motion = match &prev_pyramid {
                Some(prev) => tracks.flow_motion_pyramids(prev, &pyramid, &p.flow),
                None => vec![None; tracks.tracks.len()],
            };
            let threshold = p.track.match_fraction * s.representative.1.max(1.0);
            track_modules(&mut tracks, &motion, &mut s.detections, i, threshold, p.track.max_missing);
            let gaps = detect_bench_gaps(&s, &det.image, &p.gaps);
            let ends = detect_bench_ends(&s, size, p.end_margin);
            row.detections = s.detections.len();
            row.gaps = gaps.len();
            row.ends = ends.len();
            st.tracking = ms(t_track);

            // association
            let t_assoc = Instant::now();
            let mut estimate: Option<PoseEstimate> = None;
            let map = match &state {
                None => {
                    let observed: Vec<ObservedAnchor> = gaps
                        .iter()
                        .map(|g| g.anchor(None))
                        .chain(ends.iter().map(|e| e.anchor(None)))
                        .collect();
                    let h = init.hypothesis(&s, &observed, gnss.map(|g| g.0), i);
                    match init.confirm(h) {
                        Some(h) => {
                            row.anchor = Some(h.anchor.clone());
                            estimate = Some(h.estimate);
                            Some(h.map)
                        }
                        None => {
                            if report.rows.len() + 1 >= p.init.max_frames {
                                return Err(init_failure(&init, report.rows.len() + 1));
                            }
                            None
                        }
                    }
                }
                Some(x) => {
                    let known: Vec<(LogicalCoord, String)> = s
                        .detections
                        .iter()
                        .filter_map(|d| {
                            let id = tracks.get(d.track?)?.module.clone()?;
                            Some((d.coord, id))
                        })
                        .collect();
                    let known = if known.is_empty() {
                        known_from_prior(&s, &flight.model, &state_pose(x), &k, undistort)
                    } else {
                        known
                    };
                    associate_with_reference(&s, &known, &flight.model).ok()
                }
            };
            if let Some(map) = &map {
                for d in &s.detections {
                    if let Some(tr) = d.track.and_then(|id| tracks.get_mut(id)) {
                        tr.module = map.get(&d.coord).map(String::from);
                    }
                }
                row.mapped = map.mapping.len();
            }
            st.association = ms(t_assoc);

            // pose
            let t_pnp = Instant::now();
            if estimate.is_none() {
                if let Some(map) = &map {
                    let (c, modules) = correspondences(&s, map, &flight.model, &kp, undistort, i);
                    if modules >= p.min_modules {
                        estimate = solve_epnp(&c, &kp).ok();
                    }
                }
            }
            st.pnp = ms(t_pnp);

            // filter
            let t_filter = Instant::now();
            let gnss_velocity = |fallback: Vector3<f64>| match (georef, gnss) {
                (true, Some((_, v))) => v,
                _ => fallback,
            };
            if let Some(e) = &estimate {
                pnp_row(&mut row, e);
            }
            match (&state, &estimate) {
                (None, Some(e)) => {
                    // first association: the filter starts at the PnP pose
                    let ypr = rotation_to_ypr(&e.pose.rotation.transpose());
                    let s0 = FilterState::new(e.position.coords, gnss_velocity(Vector3::zeros()), ypr, t);
                    row.eps_d = Some(0.0);
                    calibration.push(e.reprojection_error, &mut gate);
                    state = Some(s0);
                }
                (None, None) => {}
                (Some(x), _) => {
                    let dt = t - x.timestamp;
                    let pred = predict(x, dt, None).map_err(|e| PipelineError::Other(format!("frame {i}: {e}")))?;
                    let v = gnss_velocity(pred.velocity);
                    let z = match &estimate {
                        Some(e) => {
                            let eps_d = gate.deviation(&e.position.coords, &pred.position);
                            let w = pnp_weight(e.reprojection_error, eps_d, &gate);
                            row.eps_d = Some(eps_d);
                            row.w_pnp = Some(w);
                            row.gated = w == 0.0;
                            Measurement {
                                position: e.position.coords,
                                velocity: v,
                                orientation: rotation_to_ypr(&e.pose.rotation.transpose()),
                                timestamp: t,
                                reprojection_error: e.reprojection_error,
                                deviation: eps_d,
                            }
                        }
                        None => Measurement::velocity_only(v, t),
                    };
                    let mut next = update(&pred, &z, &gate);
                    if !georef {
                        // no velocity source: difference of filtered positions
                        next.velocity = (next.position - x.position) / dt;
                    }
                    if let Some(e) = &estimate {
                        calibration.push(e.reprojection_error, &mut gate);
                    }
                    state = Some(next);
                }
            }
            st.filter = ms(t_filter);

            row.initialized = state.is_some();
            if let Some(x) = &state {
                fill_state(&mut row, x, gnss.map(|g| g.0), truth.as_ref());
            }
            if let Some((g, _)) = gnss {
                row.gnss_x = Some(g.x);
                row.gnss_y = Some(g.y);
                row.gnss_z = Some(g.z);
                if let Some(tp) = &truth {
                    row.err_gnss = Some((g - tp.camera_position().coords).norm());
                }
            }
            if let (Some(e), Some(tp)) = (&estimate, &truth) {
                row.err_pnp = Some((e.position - tp.camera_position()).norm());
            }
            report.rows.push(row);
            report.timings.push(st);
            prev_pyramid = Some(pyramid);
        }
    }
    if state.is_none() {
        return Err(init_failure(&init, report.rows.len()));
    }
    Ok(report)
}

fn init_failure(init: &Initializer, frames: usize) -> PipelineError {
    let hint = init.cfg.anchor_hint.as_deref().unwrap_or("any anchor");
    PipelineError::Initialization(format!(
        "no anchor confirmed for {hint} within {frames} processed frames \
         ({} anchor observations, {} accepted hypotheses, {} consecutive frames needed)",
        init.observations, init.hypotheses, init.cfg.params.init.confirm_frames
    ))
}

fn pnp_row(row: &mut FrameRow, e: &PoseEstimate) {
    let ypr = rotation_to_ypr(&e.pose.rotation.transpose());
    row.pnp_valid = true;
    row.pnp_x = Some(e.position.x);
    row.pnp_y = Some(e.position.y);
    row.pnp_z = Some(e.position.z);
    row.pnp_yaw = Some(ypr.x);
    row.pnp_pitch = Some(ypr.y);
    row.pnp_roll = Some(ypr.z);
    row.eps_r = Some(e.reprojection_error);
}

fn fill_state(row: &mut FrameRow, x: &FilterState, gnss: Option<Vector3<f64>>, truth: Option<&Pose>) {
    row.filt_x = Some(x.position.x);
    row.filt_y = Some(x.position.y);
    row.filt_z = Some(x.position.z);
    row.filt_yaw = Some(x.orientation.x);
    row.filt_pitch = Some(x.orientation.y);
    row.filt_roll = Some(x.orientation.z);
    if let Some(g) = gnss {
        row.dev_gnss = Some((x.position - g).norm());
    }
    if let Some(tp) = truth {
        row.err_filtered = Some((x.position - tp.camera_position().coords).norm());
        row.err_orientation = Some(state_pose(x).rotation_distance(tp));
    }
}

/// Runs a config and writes its report to the configured output directory.
pub fn run(cfg: &RunConfig) -> Result<RunReport, PipelineError> {
    let report = run_replay(cfg)?;
    report.write(&cfg.output)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::Config(String::new()).exit_code(), 2);
        assert_eq!(PipelineError::Initialization(String::new()).exit_code(), 3);
        assert_eq!(PipelineError::Other(String::new()).exit_code(), 1);
    }

    #[test]
    fn frame_selection_respects_rate() {
        let t: Vec<f64> = (0..30).map(|i| i as f64 / 10.0).collect();
        assert_eq!(select_frames(&t, None).len(), 30);
        let s = select_frames(&t, Some(5.0));
        assert_eq!(s, (0..30).step_by(2).collect::<Vec<_>>());
        let s = select_frames(&t, Some(3.0));
        assert!(s.windows(2).all(|w| t[w[1]] - t[w[0]] >= 1.0 / 3.0 - 1e-6));
        assert_eq!(s[..3], [0, 4, 8]);
    }
}
