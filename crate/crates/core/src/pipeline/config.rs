//! Replay configuration and synthetic flight specification.

use super::PipelineError;
use crate::bbox::BoxStructureParams;
use crate::camera::CameraIntrinsics;
use crate::edge::EdgeParams;
use crate::filter::GateConfig;
use crate::structure::FlightDirection;
use crate::synth::{default_intrinsics, DetectorNoise, FlightPlan, GnssNoise, LayoutSpec, RenderOptions};
use crate::tracking::{FlowParams, GapParams, TrackParams};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// A synthetic plant, flight, and sensor setup.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSpec {
    pub layout: LayoutSpec,
    pub plan: FlightPlan,
    pub intrinsics: Option<CameraIntrinsics>,
    pub gnss: GnssNoise,
    pub render: RenderOptions,
    /// Also emit simulated box detections.
    pub detections: Option<DetectorNoise>,
}

impl SimulationSpec {
    pub fn intrinsics(&self) -> CameraIntrinsics {
        self.intrinsics.unwrap_or_else(default_intrinsics)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg = |m: String| PipelineError::Config(m);
        if !(self.plan.fps > 0.0) {
            return Err(cfg("plan.fps must be positive".into()));
        }
        if !(self.plan.speed > 0.0 && self.plan.standoff > 0.0) {
            return Err(cfg("plan.speed and plan.standoff must be positive".into()));
        }
        self.intrinsics().validate().map_err(|e| cfg(format!("intrinsics: {e}")))?;
        self.render.validate().map_err(|e| cfg(format!("render: {e}")))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InputConfig {
    /// A flight log directory as written by `simulate`, with the plant model
    /// (default `<dir>/model.json`).
    Flight { dir: PathBuf, model: Option<PathBuf> },
    /// Generated and rendered in memory.
    Synthetic(SimulationSpec),
}

/// Exactly one source must be set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub edge: Option<EdgeParams>,
    /// Box/contour detections file.
    pub bbox_file: Option<PathBuf>,
    /// Boxes simulated from the ground truth (synthetic input only).
    pub bbox_simulated: Option<DetectorNoise>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DetectorSource {
    Edge(EdgeParams),
    BboxFile(PathBuf),
    BboxSimulated(DetectorNoise),
}

impl DetectorConfig {
    pub fn source(&self) -> Result<DetectorSource, PipelineError> {
        match (&self.edge, &self.bbox_file, &self.bbox_simulated) {
            (Some(p), None, None) => Ok(DetectorSource::Edge(*p)),
            (None, Some(f), None) => Ok(DetectorSource::BboxFile(f.clone())),
            (None, None, Some(n)) => Ok(DetectorSource::BboxSimulated(*n)),
            (None, None, None) => Err(PipelineError::Config("no detector source configured".into())),
            _ => Err(PipelineError::Config("more than one detector source configured".into())),
        }
    }
}

/// Where positions live relative to GNSS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFrame {
    /// The plant model is georeferenced: GNSS positions check anchor
    /// hypotheses and GNSS velocities enter the filter.
    #[default]
    Georeferenced,
    /// The model lives in its own frame (e.g. a reconstruction): GNSS is not
    /// used, velocities come from the filtered positions, and an anchor hint
    /// is required.
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitParams {
    /// Consecutive frames confirming the same anchor.
    pub confirm_frames: usize,
    /// Processed frames after which initialization gives up.
    pub max_frames: usize,
    /// Largest PnP reprojection error of an anchor hypothesis [px].
    pub max_reprojection: f64,
    /// Largest distance of an anchor hypothesis from GNSS [m]; the gate's
    /// `th_d` when absent.
    pub gnss_tolerance: Option<f64>,
}

impl Default for InitParams {
    fn default() -> Self {
        Self {
            confirm_frames: 3,
            max_frames: 200,
            max_reprojection: 5.0,
            gnss_tolerance: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineParams {
    pub bbox: BoxStructureParams,
    pub gaps: GapParams,
    /// Bench-end margin in module widths along the row.
    pub end_margin: f64,
    pub flow: FlowParams,
    pub track: TrackParams,
    pub gate: GateConfig,
    /// Valid PnP frames after initialization used to calibrate `th_r`;
    /// `None` keeps the gate's `th_r`.
    pub calibration_frames: Option<usize>,
    pub init: InitParams,
    /// Planned distance to the module plane, sets the expected module size [m].
    pub nominal_distance: f64,
    /// Associated modules needed for a PnP solve.
    pub min_modules: usize,
    /// Frames detected ahead of the sequential stages.
    pub batch: usize,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            bbox: BoxStructureParams::default(),
            gaps: GapParams::default(),
            end_margin: 1.5,
            flow: FlowParams::default(),
            track: TrackParams::default(),
            gate: GateConfig::default(),
            calibration_frames: Some(10),
            init: InitParams::default(),
            nominal_distance: 12.0,
            min_modules: 2,
            batch: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub input: InputConfig,
    pub detector: DetectorConfig,
    /// Processing rate limit [frames/s]; every frame when absent.
    #[serde(default)]
    pub fps: Option<f64>,
    #[serde(default)]
    pub anchor_hint: Option<String>,
    /// Inferred from the GNSS velocity when absent (georeferenced models only).
    #[serde(default)]
    pub direction: Option<FlightDirection>,
    #[serde(default)]
    pub model_frame: ModelFrame,
    #[serde(default)]
    pub params: PipelineParams,
    pub output: PathBuf,
}

impl RunConfig {
    /// Reads a config file; relative paths are resolved against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let InputConfig::Flight { dir, model } = &mut self.input {
            fix(dir);
            if let Some(m) = model {
                fix(m);
            }
        }
        if let Some(f) = &mut self.detector.bbox_file {
            fix(f);
        }
        fix(&mut self.output);
    }

    /// 5 fps degraded-rate preset.
    pub fn limited_to_5fps(mut self) -> Self {
        self.fps = Some(5.0);
        self
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg = |m: &str| PipelineError::Config(m.into());
        let source = self.detector.source()?;
        if let Some(fps) = self.fps {
            if !(fps > 0.0) {
                return Err(cfg("fps must be positive"));
            }
        }
        match &self.input {
            InputConfig::Synthetic(spec) => spec.validate()?,
            InputConfig::Flight { .. } => {
                if matches!(source, DetectorSource::BboxSimulated(_)) {
                    return Err(cfg("simulated boxes need synthetic input"));
                }
            }
        }
        if let DetectorSource::Edge(p) = source {
            p.validate().map_err(|e| PipelineError::Config(format!("edge: {e}")))?;
        }
        let p = &self.params;
        p.gate.validate().map_err(|e| PipelineError::Config(format!("gate: {e}")))?;
        if !(p.nominal_distance > 0.0 && p.end_margin >= 0.0) {
            return Err(cfg("nominal_distance must be positive and end_margin non-negative"));
        }
        if p.init.confirm_frames == 0 || p.init.max_frames == 0 || p.min_modules == 0 || p.batch == 0 {
            return Err(cfg("confirm_frames, max_frames, min_modules and batch must be at least 1"));
        }
        if p.calibration_frames == Some(0) {
            return Err(cfg("calibration_frames must be at least 1"));
        }
        if self.model_frame == ModelFrame::Local && (self.anchor_hint.is_none() || self.direction.is_none()) {
            return Err(cfg("a local model frame needs an anchor hint and a flight direction"));
        }
        Ok(())
    }
}
