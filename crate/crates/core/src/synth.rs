//! Synthetic plants, flights, and rendered frames with ground truth.

use crate::bbox::{min_bounding_rect, FrameDetections, OrientedBBox};
use crate::camera::{project_point, CameraIntrinsics, Pose};
use crate::imaging::{motion_blur, Image};
use crate::plant::{
    AnchorKind, AnchorRecord, BenchRecord, EndSide, ModelFile, ModuleRecord, PlantError, PlantModel, PvModule,
    MODEL_VERSION,
};
use crate::structure::FlightDirection;
use nalgebra::{Matrix3, Point2, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("gap ({gap} m) must exceed the module pitch ({pitch} m)")]
    GapTooSmall { gap: f64, pitch: f64 },
    #[error("trajectory passes through module {0}")]
    TrajectoryIntersects(String),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
    #[error("log parse: {0}")]
    Parse(#[from] serde_json::Error),
}

// ---- layout ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutSpec {
    /// Benches per bench line.
    pub benches: usize,
    pub rows: usize,
    /// Columns per bench; a single entry applies to every bench.
    pub columns: Vec<usize>,
    pub module_width: f64,
    pub module_height: f64,
    /// Center distance of neighbouring modules in a row [m].
    pub pitch: f64,
    /// Center distance of neighbouring rows [m].
    pub row_pitch: f64,
    /// Center distance of the facing modules across a bench gap [m].
    pub gap: f64,
    /// Module tilt about the x axis [rad].
    pub tilt: f64,
    /// Parallel bench lines, spaced along -y.
    pub lines: usize,
    pub line_spacing: f64,
    /// Mounting height of the module centers above the ground [m].
    pub mount_height: f64,
    /// Standard deviation of random in-plane module placement error [m].
    pub jitter: f64,
    pub seed: u64,
}

impl Default for LayoutSpec {
    fn default() -> Self {
        Self::ppa_like()
    }
}

impl LayoutSpec {
    /// Three benches of portrait modules in two rows, 154 modules.
    pub fn ppa_like() -> Self {
        Self {
            benches: 3,
            rows: 2,
            columns: vec![26, 26, 25],
            module_width: 1.0,
            module_height: 2.0,
            pitch: 1.05,
            row_pitch: 2.05,
            gap: 2.5,
            tilt: 20f64.to_radians(),
            lines: 1,
            line_spacing: 8.0,
            mount_height: 1.5,
            jitter: 0.0,
            seed: 0,
        }
    }

    /// Two benches of landscape modules in five rows, 350 modules.
    pub fn ppb_like() -> Self {
        Self {
            benches: 2,
            rows: 5,
            columns: vec![35],
            module_width: 2.0,
            module_height: 1.0,
            pitch: 2.05,
            row_pitch: 1.05,
            gap: 4.0,
            ..Self::ppa_like()
        }
    }

    pub fn columns_of(&self, bench: usize) -> usize {
        match self.columns.as_slice() {
            [] => 0,
            [c] => *c,
            cs => cs[bench.min(cs.len() - 1)],
        }
    }

    pub fn module_normal(&self) -> Vector3<f64> {
        Vector3::new(0.0, -self.tilt.sin(), self.tilt.cos())
    }

    fn validate(&self) -> Result<(), SynthError> {
        let checks = [
            (self.benches as f64, "benches"),
            (self.rows as f64, "rows"),
            (self.module_width, "module_width"),
            (self.module_height, "module_height"),
            (self.pitch, "pitch"),
            (self.row_pitch, "row_pitch"),
            (self.gap, "gap"),
            (self.lines as f64, "lines"),
        ];
        for (v, name) in checks {
            if !(v > 0.0) {
                return Err(SynthError::NonPositive(name));
            }
        }
        if (0..self.benches).any(|b| self.columns_of(b) == 0) {
            return Err(SynthError::NonPositive("columns"));
        }
        if self.benches > 1 && self.gap <= self.pitch {
            return Err(SynthError::GapTooSmall {
                gap: self.gap,
                pitch: self.pitch,
            });
        }
        Ok(())
    }
}

pub fn module_id(line: usize, bench: usize, row: usize, col: usize) -> String {
    format!("L{line}B{bench}R{row}C{col:02}")
}

fn bench_id(line: usize, bench: usize) -> String {
    format!("L{line}B{bench}")
}

/// Builds a plant of straight bench lines along +x. Row 0 of every bench is
/// the upper row on the tilted plane. End anchors are emitted for every row
/// end and gap anchors for every row across each bench gap.
pub fn generate_layout(spec: &LayoutSpec) -> Result<PlantModel, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let jitter = Normal::new(0.0, spec.jitter.max(0.0)).expect("finite sigma");
    let normal = spec.module_normal();
    let axis_u = Vector3::x();
    let axis_v = normal.cross(&axis_u);

    let mut modules = Vec::new();
    let mut benches = Vec::new();
    let mut anchors = Vec::new();
    for line in 0..spec.lines {
        let base = Vector3::new(0.0, -(line as f64) * spec.line_spacing, spec.mount_height);
        let mut x0 = 0.0;
        for b in 0..spec.benches {
            let cols = spec.columns_of(b);
            let mut grid = Vec::with_capacity(spec.rows);
            for r in 0..spec.rows {
                let dv = ((spec.rows - 1) as f64 / 2.0 - r as f64) * spec.row_pitch;
                let mut ids = Vec::with_capacity(cols);
                for c in 0..cols {
                    let id = module_id(line, b, r, c);
                    let (ju, jv) = if spec.jitter > 0.0 {
                        (jitter.sample(&mut rng), jitter.sample(&mut rng))
                    } else {
                        (0.0, 0.0)
                    };
                    let center = base + axis_u * (x0 + c as f64 * spec.pitch + ju) + axis_v * (dv + jv);
                    modules.push(ModuleRecord {
                        id: id.clone(),
                        center: center.into(),
                        normal: normal.into(),
                        axis_u: axis_u.into(),
                        width: spec.module_width,
                        height: spec.module_height,
                    });
                    ids.push(id);
                }
                let bid = bench_id(line, b);
                for (side, col) in [(EndSide::Start, 0), (EndSide::End, cols - 1)] {
                    let tag = if side == EndSide::Start { "start" } else { "end" };
                    anchors.push(AnchorRecord {
                        id: format!("{bid}R{r}-{tag}"),
                        kind: AnchorKind::BenchEnd,
                        bench: bid.clone(),
                        row: r,
                        between: None,
                        module: Some(ids[col].clone()),
                        side: Some(side),
                    });
                }
                if b + 1 < spec.benches {
                    anchors.push(AnchorRecord {
                        id: format!("{bid}R{r}-gap"),
                        kind: AnchorKind::BenchGap,
                        bench: bid.clone(),
                        row: r,
                        between: Some([ids[cols - 1].clone(), module_id(line, b + 1, r, 0)]),
                        module: None,
                        side: None,
                    });
                }
                grid.push(ids);
            }
            benches.push(BenchRecord {
                id: bench_id(line, b),
                grid,
            });
            x0 += (cols - 1) as f64 * spec.pitch + spec.gap;
        }
    }
    let file = ModelFile {
        version: MODEL_VERSION,
        frame: "local-enu-meters".into(),
        coplanarity_tol: Some(0.05 + 4.0 * spec.jitter),
        modules,
        benches,
        anchors,
    };
    Ok(PlantModel::from_file(file)?)
}

// ---- rendering ----

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Glare {
    pub center: [f64; 2],
    pub radii: [f64; 2],
    pub angle: f64,
    /// Added intensity at the ellipse center, falling off smoothly.
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    pub cell_level: f32,
    pub frame_level: f32,
    pub ground_level: f32,
    /// Module frame width in pixels at `reference_distance`.
    pub frame_px: f64,
    pub reference_distance: f64,
    pub noise_sigma: f64,
    pub blur_length: usize,
    pub glare: Option<Glare>,
    pub seed: u64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            cell_level: 90.0,
            frame_level: 230.0,
            ground_level: 45.0,
            frame_px: 1.5,
            reference_distance: 12.0,
            noise_sigma: 0.0,
            blur_length: 0,
            glare: None,
            seed: 0,
        }
    }
}

impl RenderOptions {
    pub fn validate(&self) -> Result<(), SynthError> {
        let levels = [self.cell_level, self.frame_level, self.ground_level];
        if levels.iter().any(|l| !(0.0..=255.0).contains(l)) || !(self.noise_sigma >= 0.0) {
            return Err(SynthError::NonPositive("render levels within [0, 255] and noise sigma"));
        }
        Ok(())
    }
}

const SUBSAMPLES: [(f64, f64); 4] = [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)];

/// Fills a convex polygon with 2x2 supersampled coverage.
fn fill_convex(img: &mut Image, poly: &[Point2<f64>], level: f32) {
    let n = poly.len();
    let area: f64 = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum();
    let orient = area.signum();
    if orient == 0.0 {
        return;
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in poly {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    let xs = x0.floor().max(0.0) as usize;
    let ys = y0.floor().max(0.0) as usize;
    let xe = (x1.ceil() as i64).min(img.width as i64 - 1);
    let ye = (y1.ceil() as i64).min(img.height as i64 - 1);
    if xe < 0 || ye < 0 {
        return;
    }
    let inside = |x: f64, y: f64| {
        (0..n).all(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            ((b.x - a.x) * (y - a.y) - (b.y - a.y) * (x - a.x)) * orient >= 0.0
        })
    };
    for y in ys..=ye as usize {
        for x in xs..=xe as usize {
            let hits = SUBSAMPLES
                .iter()
                .filter(|(dx, dy)| inside(x as f64 + dx, y as f64 + dy))
                .count();
            if hits > 0 {
                let c = hits as f32 / SUBSAMPLES.len() as f32;
                let v = img.get(x, y);
                img.set(x, y, v + (level - v) * c);
            }
        }
    }
}

fn module_quads(m: &PvModule, inset: f64) -> ([Point3<f64>; 4], [Point3<f64>; 4]) {
    let outer = m.corners();
    let inner_m = PvModule {
        width: (m.width - 2.0 * inset).max(0.0),
        height: (m.height - 2.0 * inset).max(0.0),
        ..m.clone()
    };
    (outer, inner_m.corners())
}

fn render_pinhole(model: &PlantModel, pose: &Pose, k: &CameraIntrinsics, opts: &RenderOptions) -> Image {
    let mut img = Image::new(k.width as usize, k.height as usize, opts.ground_level);
    let inset = opts.frame_px * opts.reference_distance / k.fx;
    let cam = pose.camera_position();
    let mut order: Vec<&PvModule> = model.modules.iter().collect();
    // painter's algorithm: far modules first
    order.sort_by(|a, b| (b.center - cam).norm().total_cmp(&(a.center - cam).norm()));
    let pinhole = CameraIntrinsics {
        distortion: Default::default(),
        ..*k
    };
    for m in order {
        let (outer, inner) = module_quads(m, inset);
        let proj = |q: &[Point3<f64>; 4]| -> Option<Vec<Point2<f64>>> {
            q.iter()
                .map(|p| {
                    let pr = project_point(p, pose, &pinhole, false);
                    pr.visible.then_some(pr.pixel)
                })
                .collect()
        };
        let (Some(o), Some(i)) = (proj(&outer), proj(&inner)) else {
            continue;
        };
        fill_convex(&mut img, &o, opts.frame_level);
        fill_convex(&mut img, &i, opts.cell_level);
    }
    img
}

fn distort_image(img: &Image, k: &CameraIntrinsics, fill: f32) -> Image {
    if k.distortion.is_zero() {
        return img.clone();
    }
    Image::from_fn(img.width, img.height, |x, y| {
        let p = k.undistort_pixel(Point2::new(x as f64, y as f64));
        img.sample(p.x, p.y).unwrap_or(fill)
    })
}

/// Binary presegmentation mask (255 inside, 0 outside) of the selected
/// modules, grown by `dilate` pixels, in the same distorted image space as
/// `render_frame`.
pub fn render_mask(
    model: &PlantModel,
    pose: &Pose,
    k: &CameraIntrinsics,
    select: impl Fn(&PvModule) -> bool,
    dilate: usize,
) -> Image {
    let mut img = Image::new(k.width as usize, k.height as usize, 0.0);
    let pinhole = CameraIntrinsics {
        distortion: Default::default(),
        ..*k
    };
    for m in model.modules.iter().filter(|m| select(m)) {
        let poly: Option<Vec<Point2<f64>>> = m
            .corners()
            .iter()
            .map(|p| {
                let pr = project_point(p, pose, &pinhole, false);
                pr.visible.then_some(pr.pixel)
            })
            .collect();
        if let Some(poly) = poly {
            fill_convex(&mut img, &poly, 255.0);
        }
    }
    let (w, h) = img.dims();
    let r = dilate as i64;
    let grown = Image::from_fn(w, h, |x, y| {
        let hit = (-r..=r).any(|dy| {
            (-r..=r).any(|dx| {
                let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                xx >= 0 && yy >= 0 && xx < w as i64 && yy < h as i64 && img.get(xx as usize, yy as usize) > 127.0
            })
        });
        if hit { 255.0 } else { 0.0 }
    });
    let warped = distort_image(&grown, k, 0.0);
    Image::from_fn(w, h, |x, y| if warped.get(x, y) > 127.0 { 255.0 } else { 0.0 })
}

/// Renders a grayscale frame. Modules are flat-shaded (bright frame around a
/// dark cell area) over uniform ground; lens distortion, motion blur, glare
/// and pixel noise are applied in that order.
pub fn render_frame(model: &PlantModel, pose: &Pose, k: &CameraIntrinsics, opts: &RenderOptions) -> Image {
    let mut img = distort_image(&render_pinhole(model, pose, k, opts), k, opts.ground_level);
    if opts.blur_length > 1 {
        img = motion_blur(&img, opts.blur_length);
    }
    if let Some(g) = &opts.glare {
        let (s, c) = g.angle.sin_cos();
        for y in 0..img.height {
            for x in 0..img.width {
                let dx = x as f64 - g.center[0];
                let dy = y as f64 - g.center[1];
                let u = (c * dx + s * dy) / g.radii[0];
                let v = (-s * dx + c * dy) / g.radii[1];
                let r2 = u * u + v * v;
                if r2 < 4.0 {
                    let add = g.gain * (-r2).exp();
                    let val = img.get(x, y);
                    img.set(x, y, val + add as f32);
                }
            }
        }
    }
    if opts.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let normal = Normal::new(0.0, opts.noise_sigma).expect("finite sigma");
        for v in &mut img.data {
            *v += normal.sample(&mut rng) as f32;
        }
    }
    img.quantized()
}

/// Modules whose four corners project inside the image (with `margin`
/// pixels to spare), with their projected corners.
pub fn visible_modules(
    model: &PlantModel,
    pose: &Pose,
    k: &CameraIntrinsics,
    margin: f64,
) -> Vec<(String, [Point2<f64>; 4])> {
    let (w, h) = (k.width as f64 - 1.0, k.height as f64 - 1.0);
    model
        .modules
        .iter()
        .filter_map(|m| {
            let mut px = [Point2::origin(); 4];
            for (i, c) in m.corners().iter().enumerate() {
                let p = project_point(c, pose, k, true);
                if !p.visible || p.pixel.x < margin || p.pixel.y < margin || p.pixel.x > w - margin || p.pixel.y > h - margin {
                    return None;
                }
                px[i] = p.pixel;
            }
            Some((m.id.clone(), px))
        })
        .collect()
}

// ---- flights ----

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub waypoints: Vec<Point3<f64>>,
    /// Ground speed along the polyline [m/s].
    pub speed: f64,
    /// Camera axes (x right, y down, z forward) in world coordinates.
    pub camera_to_world: Matrix3<f64>,
}

impl Trajectory {
    pub fn length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    /// Point at arc length `s` along the polyline.
    pub fn position_at(&self, s: f64) -> Point3<f64> {
        let mut rest = s.max(0.0);
        for w in self.waypoints.windows(2) {
            let seg = (w[1] - w[0]).norm();
            if rest <= seg && seg > 0.0 {
                return w[0] + (w[1] - w[0]) * (rest / seg);
            }
            rest -= seg;
        }
        *self.waypoints.last().expect("non-empty trajectory")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct GnssNoise {
    pub offset: [f64; 3],
    /// Linear drift rate [m/s].
    pub drift: [f64; 3],
    /// White jitter standard deviation [m].
    pub jitter: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GnssSample {
    pub timestamp: f64,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub index: usize,
    pub timestamp: f64,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthEntry {
    pub timestamp: f64,
    pub pose: Pose,
}

/// Timestamped frames, GNSS samples and (for synthetic flights) true poses.
/// Persisted as `log.json` next to `frame_%06d.pgm` images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightLog {
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<FrameEntry>,
    pub gnss: Vec<GnssSample>,
    #[serde(default)]
    pub truth: Vec<TruthEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<GnssNoise>,
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.pgm")
}

fn segment_hits_module(a: &Point3<f64>, b: &Point3<f64>, m: &PvModule) -> bool {
    let da = (a - m.center).dot(&m.normal);
    let db = (b - m.center).dot(&m.normal);
    if da * db > 0.0 || da == db {
        return false;
    }
    let p = a + (b - a) * (da / (da - db));
    let d = p - m.center;
    d.dot(&m.axis_u).abs() <= m.width / 2.0 && d.dot(&m.axis_v).abs() <= m.height / 2.0
}

/// Samples a flight at `fps` with GNSS = truth + offset + drift t + jitter.
/// GNSS velocities are central differences of the GNSS positions.
pub fn simulate_flight(
    model: &PlantModel,
    trajectory: &Trajectory,
    k: &CameraIntrinsics,
    fps: f64,
    noise: &GnssNoise,
) -> Result<FlightLog, SynthError> {
    if !(fps > 0.0) {
        return Err(SynthError::NonPositive("fps"));
    }
    if !(trajectory.speed > 0.0) {
        return Err(SynthError::NonPositive("speed"));
    }
    if trajectory.waypoints.is_empty() {
        return Err(SynthError::NonPositive("waypoint count"));
    }
    for w in trajectory.waypoints.windows(2) {
        if let Some(m) = model.modules.iter().find(|m| segment_hits_module(&w[0], &w[1], m)) {
            return Err(SynthError::TrajectoryIntersects(m.id.clone()));
        }
    }
    let duration = trajectory.length() / trajectory.speed;
    let count = (duration * fps + 1e-9).floor() as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let jitter = Normal::new(0.0, noise.jitter.max(0.0)).expect("finite sigma");
    let rotation = trajectory.camera_to_world;

    let mut frames = Vec::with_capacity(count);
    let mut truth = Vec::with_capacity(count);
    let mut times = Vec::with_capacity(count);
    let mut gnss_pos = Vec::with_capacity(count);
    for i in 0..count {
        let t = i as f64 / fps;
        let c = trajectory.position_at(t * trajectory.speed);
        let pose = Pose::from_center(c, rotation);
        let mut g = c.coords + Vector3::from(noise.offset) + Vector3::from(noise.drift) * t;
        if noise.jitter > 0.0 {
            g += Vector3::new(jitter.sample(&mut rng), jitter.sample(&mut rng), jitter.sample(&mut rng));
        }
        frames.push(FrameEntry {
            index: i,
            timestamp: t,
            file: frame_file_name(i),
        });
        truth.push(TruthEntry { timestamp: t, pose });
        times.push(t);
        gnss_pos.push(g);
    }
    let vel = if count >= 2 {
        crate::filter::derive_velocity(&times, &gnss_pos).expect("increasing timestamps")
    } else {
        vec![Vector3::zeros(); count]
    };
    let gnss = times
        .iter()
        .zip(&gnss_pos)
        .zip(&vel)
        .map(|((t, p), v)| GnssSample {
            timestamp: *t,
            position: (*p).into(),
            velocity: (*v).into(),
        })
        .collect();
    Ok(FlightLog {
        intrinsics: *k,
        frames,
        gnss,
        truth,
        noise: Some(*noise),
    })
}

/// Renders every frame of a synthetic log in parallel. Frame `i` uses noise
/// seed `opts.seed + i`.
pub fn render_flight(model: &PlantModel, log: &FlightLog, opts: &RenderOptions) -> Vec<Image> {
    log.truth
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let o = RenderOptions {
                seed: opts.seed.wrapping_add(i as u64),
                ..opts.clone()
            };
            render_frame(model, &t.pose, &log.intrinsics, &o)
        })
        .collect()
}

pub fn write_flight_log(dir: impl AsRef<Path>, log: &FlightLog, images: &[Image]) -> Result<(), SynthError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("log.json"), serde_json::to_string_pretty(log)?)?;
    images
        .par_iter()
        .zip(log.frames.par_iter())
        .try_for_each(|(img, f)| img.save_pgm(dir.join(&f.file)))?;
    Ok(())
}

pub fn read_flight_log(dir: impl AsRef<Path>) -> Result<FlightLog, SynthError> {
    let text = std::fs::read_to_string(dir.as_ref().join("log.json"))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn frame_path(dir: impl AsRef<Path>, entry: &FrameEntry) -> PathBuf {
    dir.as_ref().join(&entry.file)
}

// ---- flight plans ----

/// A straight pass along one bench line at a fixed standoff from the module
/// plane, camera looking along the negative module normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlightPlan {
    pub line: usize,
    /// Distance from the module plane [m].
    pub standoff: f64,
    pub speed: f64,
    pub fps: f64,
    pub direction: FlightDirection,
    /// Extra travel before the first and after the last module [m].
    pub lead_in: f64,
    pub lead_out: f64,
    /// Offset of the path from the bench line center along the module v axis [m].
    pub lateral_offset: f64,
}

impl Default for FlightPlan {
    fn default() -> Self {
        Self {
            line: 0,
            standoff: 12.0,
            speed: 0.8,
            fps: 3.0,
            direction: FlightDirection::Forward,
            lead_in: 2.0,
            lead_out: 2.0,
            lateral_offset: 0.0,
        }
    }
}

/// Camera axes looking along `-normal`, image right along `+u` for forward
/// flights and `-u` for backward ones.
pub fn inspection_rotation(model_normal: Vector3<f64>, axis_u: Vector3<f64>, direction: FlightDirection) -> Matrix3<f64> {
    let z = -model_normal;
    let x = axis_u * direction.sign() as f64;
    let y = z.cross(&x);
    Matrix3::from_columns(&[x, y, z])
}

pub fn plan_trajectory(model: &PlantModel, plan: &FlightPlan) -> Result<Trajectory, SynthError> {
    let prefix = format!("L{}B", plan.line);
    let line: Vec<&PvModule> = model.modules.iter().filter(|m| m.id.starts_with(&prefix)).collect();
    let first = line.first().ok_or(SynthError::NonPositive("modules on the planned line"))?;
    let (u, n, v) = (first.axis_u, first.normal, first.axis_v);
    let count = line.len() as f64;
    let centroid = line.iter().fold(Vector3::zeros(), |a, m| a + m.center.coords) / count;
    let (lo, hi) = line.iter().fold((f64::MAX, f64::MIN), |(lo, hi), m| {
        let s = m.center.coords.dot(&u);
        (lo.min(s - m.width / 2.0), hi.max(s + m.width / 2.0))
    });
    let mid = centroid - u * centroid.dot(&u) + v * plan.lateral_offset + n * plan.standoff;
    let a = Point3::from(mid + u * (lo - plan.lead_in));
    let b = Point3::from(mid + u * (hi + plan.lead_out));
    let waypoints = match plan.direction {
        FlightDirection::Forward => vec![a, b],
        FlightDirection::Backward => vec![b, a],
    };
    Ok(Trajectory {
        waypoints,
        speed: plan.speed,
        camera_to_world: inspection_rotation(n, u, plan.direction),
    })
}

/// Camera intrinsics sized like the reference inspection imagery.
pub fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::pinhole(460.0, 460.0, 399.5, 224.5, 800, 450)
}

// ---- simulated box detector ----

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorNoise {
    /// Center jitter standard deviation [px].
    pub center_sigma: f64,
    /// Probability of dropping a visible module.
    pub drop_rate: f64,
    pub seed: u64,
}

impl Default for DetectorNoise {
    fn default() -> Self {
        Self {
            center_sigma: 0.0,
            drop_rate: 0.0,
            seed: 0,
        }
    }
}

/// Oriented boxes around the fully visible modules of every frame, as an
/// ideal box detector would report them.
pub fn simulate_detections(model: &PlantModel, log: &FlightLog, noise: &DetectorNoise) -> Vec<FrameDetections> {
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let jitter = Normal::new(0.0, noise.center_sigma.max(0.0)).expect("finite sigma");
    log.truth
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let boxes = visible_modules(model, &t.pose, &log.intrinsics, 2.0)
                .into_iter()
                .filter_map(|(_, px)| {
                    if noise.drop_rate > 0.0 && rng.random::<f64>() < noise.drop_rate {
                        return None;
                    }
                    let b = min_bounding_rect(&px).ok()?;
                    let (dx, dy) = if noise.center_sigma > 0.0 {
                        (jitter.sample(&mut rng), jitter.sample(&mut rng))
                    } else {
                        (0.0, 0.0)
                    };
                    Some(OrientedBBox::new(b.x_c + dx, b.y_c + dy, b.w, b.h, b.alpha, 0.9))
                })
                .collect();
            FrameDetections { index: i, boxes }
        })
        .collect()
}
