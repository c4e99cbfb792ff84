//! Power plant model: world geometry of every PV module, bench layout, and
//! the anchor points used to tie image detections to the model.

use crate::structure::{FlightDirection, LogicalCoord, SemanticStructure};
use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use thiserror::Error;

pub const MODEL_VERSION: u32 = 1;
const AXIS_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PlantError {
    #[error("failed to read plant model: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse plant model: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported plant model version {0}")]
    Version(u32),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("module `{id}`: {reason}")]
    InvalidModule { id: String, reason: String },
    #[error("bench `{bench}` references unknown module `{module}`")]
    UnknownBenchModule { bench: String, module: String },
    #[error("anchor `{anchor}`: {reason}")]
    InvalidAnchor { anchor: String, reason: String },
    #[error("bench `{bench}` row {row} is not coplanar: module `{module}` is {distance:.3} m off the row plane")]
    NotCoplanar { bench: String, row: usize, module: String, distance: f64 },
    #[error("unknown module id `{0}`")]
    UnknownModule(String),
    #[error("unknown anchor id `{0}`")]
    UnknownAnchor(String),
    #[error("ambiguous anchor: {0} model anchors match the observation")]
    AmbiguousAnchor(usize),
    #[error("no model anchor matches the observation")]
    NoMatchingAnchor,
    #[error("structure row {row} maps outside the model rows (0..{rows})")]
    ExtentOverflow { row: i64, rows: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorKind {
    BenchEnd,
    BenchGap,
}

/// Which end of a bench row an end anchor marks, along the module `u` axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndSide {
    Start,
    End,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PvModule {
    pub id: String,
    pub center: Point3<f64>,
    pub normal: Vector3<f64>,
    /// In-plane width axis.
    pub axis_u: Vector3<f64>,
    /// In-plane height axis, `normal x axis_u`.
    pub axis_v: Vector3<f64>,
    pub width: f64,
    pub height: f64,
}

impl PvModule {
    /// Corners ordered top-left, top-right, bottom-right, bottom-left in
    /// the module's u/v frame.
    pub fn corners(&self) -> [Point3<f64>; 4] {
        let du = self.axis_u * (self.width / 2.0);
        let dv = self.axis_v * (self.height / 2.0);
        [
            self.center - du + dv,
            self.center + du + dv,
            self.center + du - dv,
            self.center - du - dv,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bench {
    pub id: String,
    /// Module ids per row; row 0 is the top row.
    pub grid: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorPoint {
    pub id: String,
    pub kind: AnchorKind,
    pub bench: String,
    pub row: usize,
    /// One module for bench ends, the two flanking modules for gaps.
    pub modules: Vec<String>,
    pub side: Option<EndSide>,
    pub position: Point3<f64>,
}

#[derive(Debug, Clone)]
pub struct PlantModel {
    pub frame: String,
    pub modules: Vec<PvModule>,
    pub benches: Vec<Bench>,
    pub anchors: Vec<AnchorPoint>,
    pub coplanarity_tol: f64,
    index: HashMap<String, usize>,
    /// module index -> (bench index, row, column)
    cells: HashMap<usize, (usize, usize, usize)>,
    corners: Vec<[Point3<f64>; 4]>,
}

// ---- file schema ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub frame: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coplanarity_tol: Option<f64>,
    pub modules: Vec<ModuleRecord>,
    pub benches: Vec<BenchRecord>,
    pub anchors: Vec<AnchorRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModuleRecord {
    pub id: String,
    pub center: [f64; 3],
    pub normal: [f64; 3],
    pub axis_u: [f64; 3],
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRecord {
    pub id: String,
    pub grid: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnchorRecord {
    pub id: String,
    pub kind: AnchorKind,
    pub bench: String,
    pub row: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub between: Option<[String; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub module: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side: Option<EndSide>,
}

pub const DEFAULT_COPLANARITY_TOL: f64 = 0.05;

pub fn load_plant_model(path: impl AsRef<Path>) -> Result<PlantModel, PlantError> {
    let text = std::fs::read_to_string(path)?;
    PlantModel::from_json(&text)
}

impl PlantModel {
    pub fn from_json(text: &str) -> Result<Self, PlantError> {
        let file: ModelFile = serde_json::from_str(text)?;
        Self::from_file(file)
    }

    pub fn from_file(file: ModelFile) -> Result<Self, PlantError> {
        if file.version != MODEL_VERSION {
            return Err(PlantError::Version(file.version));
        }
        let mut modules = Vec::with_capacity(file.modules.len());
        let mut index = HashMap::new();
        for rec in &file.modules {
            if index.insert(rec.id.clone(), modules.len()).is_some() {
                return Err(PlantError::DuplicateId(rec.id.clone()));
            }
            modules.push(module_from_record(rec)?);
        }

        let mut bench_ids = HashSet::new();
        let mut cells = HashMap::new();
        let mut benches = Vec::with_capacity(file.benches.len());
        for (bi, b) in file.benches.iter().enumerate() {
            if !bench_ids.insert(b.id.clone()) {
                return Err(PlantError::DuplicateId(b.id.clone()));
            }
            for (r, row) in b.grid.iter().enumerate() {
                for (c, mid) in row.iter().enumerate() {
                    let &mi = index.get(mid).ok_or_else(|| PlantError::UnknownBenchModule {
                        bench: b.id.clone(),
                        module: mid.clone(),
                    })?;
                    if cells.insert(mi, (bi, r, c)).is_some() {
                        return Err(PlantError::InvalidModule {
                            id: mid.clone(),
                            reason: "module appears in more than one bench cell".into(),
                        });
                    }
                }
            }
            benches.push(Bench {
                id: b.id.clone(),
                grid: b.grid.clone(),
            });
        }

        let corners = modules.iter().map(PvModule::corners).collect();
        let mut model = PlantModel {
            frame: file.frame.clone(),
            modules,
            benches,
            anchors: Vec::new(),
            coplanarity_tol: file.coplanarity_tol.unwrap_or(DEFAULT_COPLANARITY_TOL),
            index,
            cells,
            corners,
        };
        model.check_coplanar()?;

        let mut anchor_ids = HashSet::new();
        for rec in &file.anchors {
            if !anchor_ids.insert(rec.id.clone()) {
                return Err(PlantError::DuplicateId(rec.id.clone()));
            }
            let anchor = model.anchor_from_record(rec)?;
            model.anchors.push(anchor);
        }
        Ok(model)
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            version: MODEL_VERSION,
            frame: self.frame.clone(),
            coplanarity_tol: Some(self.coplanarity_tol),
            modules: self
                .modules
                .iter()
                .map(|m| ModuleRecord {
                    id: m.id.clone(),
                    center: m.center.coords.into(),
                    normal: m.normal.into(),
                    axis_u: m.axis_u.into(),
                    width: m.width,
                    height: m.height,
                })
                .collect(),
            benches: self
                .benches
                .iter()
                .map(|b| BenchRecord {
                    id: b.id.clone(),
                    grid: b.grid.clone(),
                })
                .collect(),
            anchors: self
                .anchors
                .iter()
                .map(|a| AnchorRecord {
                    id: a.id.clone(),
                    kind: a.kind,
                    bench: a.bench.clone(),
                    row: a.row,
                    between: match a.kind {
                        AnchorKind::BenchGap => Some([a.modules[0].clone(), a.modules[1].clone()]),
                        AnchorKind::BenchEnd => None,
                    },
                    module: match a.kind {
                        AnchorKind::BenchEnd => Some(a.modules[0].clone()),
                        AnchorKind::BenchGap => None,
                    },
                    side: a.side,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("model serializes")
    }

    pub fn module(&self, id: &str) -> Option<&PvModule> {
        self.index.get(id).map(|&i| &self.modules[i])
    }

    pub fn module_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn anchor(&self, id: &str) -> Option<&AnchorPoint> {
        self.anchors.iter().find(|a| a.id == id)
    }

    /// (bench index, row, column) of a module.
    pub fn cell_of(&self, id: &str) -> Option<(usize, usize, usize)> {
        self.index.get(id).and_then(|i| self.cells.get(i).copied())
    }

    pub fn corner_count(&self) -> usize {
        self.corners.len() * 4
    }

    /// Precomputed corners of a module, top-left, top-right, bottom-right,
    /// bottom-left.
    pub fn module_world_corners(&self, id: &str) -> Result<[Point3<f64>; 4], PlantError> {
        self.index
            .get(id)
            .map(|&i| self.corners[i])
            .ok_or_else(|| PlantError::UnknownModule(id.to_string()))
    }

    /// Applies a rigid transform `x -> R x + t` to every module and anchor.
    pub fn transformed(&self, rotation: &nalgebra::Rotation3<f64>, translation: &Vector3<f64>) -> Self {
        let mut out = self.clone();
        for m in &mut out.modules {
            m.center = rotation * m.center + translation;
            m.normal = rotation * m.normal;
            m.axis_u = rotation * m.axis_u;
            m.axis_v = rotation * m.axis_v;
        }
        for a in &mut out.anchors {
            a.position = rotation * a.position + translation;
        }
        out.corners = out.modules.iter().map(PvModule::corners).collect();
        out
    }

    /// Median center spacing of consecutive modules in a bench row.
    pub fn row_pitch(&self, bench: usize, row: usize) -> Option<f64> {
        let ids = self.benches.get(bench)?.grid.get(row)?;
        let mut d: Vec<f64> = ids
            .windows(2)
            .filter_map(|w| Some((self.module(&w[1])?.center - self.module(&w[0])?.center).norm()))
            .collect();
        if d.is_empty() {
            return None;
        }
        d.sort_by(f64::total_cmp);
        Some(d[d.len() / 2])
    }

    fn bench_index(&self, id: &str) -> Option<usize> {
        self.benches.iter().position(|b| b.id == id)
    }

    fn check_coplanar(&self) -> Result<(), PlantError> {
        for b in &self.benches {
            for (r, row) in b.grid.iter().enumerate() {
                let Some(first) = row.first().and_then(|id| self.module(id)) else {
                    continue;
                };
                for id in row.iter().skip(1) {
                    let m = self.module(id).expect("validated");
                    let distance = (m.center - first.center).dot(&first.normal).abs();
                    if distance > self.coplanarity_tol {
                        return Err(PlantError::NotCoplanar {
                            bench: b.id.clone(),
                            row: r,
                            module: id.clone(),
                            distance,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    fn anchor_from_record(&self, rec: &AnchorRecord) -> Result<AnchorPoint, PlantError> {
        let invalid = |reason: String| PlantError::InvalidAnchor {
            anchor: rec.id.clone(),
            reason,
        };
        let bi = self
            .bench_index(&rec.bench)
            .ok_or_else(|| invalid(format!("unknown bench `{}`", rec.bench)))?;
        let bench = &self.benches[bi];
        let row = bench
            .grid
            .get(rec.row)
            .ok_or_else(|| invalid(format!("bench has no row {}", rec.row)))?;
        match rec.kind {
            AnchorKind::BenchEnd => {
                let mid = rec
                    .module
                    .as_ref()
                    .ok_or_else(|| invalid("bench_end anchor needs `module`".into()))?;
                let m = self
                    .module(mid)
                    .ok_or_else(|| invalid(format!("unknown module `{mid}`")))?;
                let col = row
                    .iter()
                    .position(|x| x == mid)
                    .ok_or_else(|| invalid(format!("module `{mid}` is not in row {}", rec.row)))?;
                let side = match rec.side {
                    Some(s) => s,
                    None if col == 0 => EndSide::Start,
                    None if col + 1 == row.len() => EndSide::End,
                    None => return Err(invalid(format!("module `{mid}` is not at a row end"))),
                };
                let expected_col = match side {
                    EndSide::Start => 0,
                    EndSide::End => row.len() - 1,
                };
                if col != expected_col {
                    return Err(invalid(format!("module `{mid}` is not at the {side:?} of the row")));
                }
                let sign = if side == EndSide::Start { -1.0 } else { 1.0 };
                Ok(AnchorPoint {
                    id: rec.id.clone(),
                    kind: rec.kind,
                    bench: rec.bench.clone(),
                    row: rec.row,
                    modules: vec![mid.clone()],
                    side: Some(side),
                    position: m.center + m.axis_u * (sign * m.width / 2.0),
                })
            }
            AnchorKind::BenchGap => {
                let [a, b] = rec
                    .between
                    .as_ref()
                    .ok_or_else(|| invalid("bench_gap anchor needs `between`".into()))?;
                let ma = self
                    .module(a)
                    .ok_or_else(|| invalid(format!("unknown module `{a}`")))?;
                let mb = self
                    .module(b)
                    .ok_or_else(|| invalid(format!("unknown module `{b}`")))?;
                let (_, ra, _) = self.cell_of(a).ok_or_else(|| invalid(format!("module `{a}` is not on a bench")))?;
                let (_, rb, _) = self.cell_of(b).ok_or_else(|| invalid(format!("module `{b}` is not on a bench")))?;
                if ra != rb || ra != rec.row {
                    return Err(invalid("gap modules are not in the anchor row".into()));
                }
                let spacing = (mb.center - ma.center).norm();
                let pitch = [self.cell_of(a), self.cell_of(b)]
                    .into_iter()
                    .flatten()
                    .filter_map(|(bench, r, _)| self.row_pitch(bench, r))
                    .fold(f64::NAN, f64::min);
                if pitch.is_finite() && spacing <= pitch {
                    return Err(invalid(format!(
                        "gap spacing {spacing:.3} m is not larger than the module pitch {pitch:.3} m"
                    )));
                }
                Ok(AnchorPoint {
                    id: rec.id.clone(),
                    kind: rec.kind,
                    bench: rec.bench.clone(),
                    row: rec.row,
                    modules: vec![a.clone(), b.clone()],
                    side: None,
                    position: Point3::from((ma.center.coords + mb.center.coords) / 2.0),
                })
            }
        }
    }
}

fn module_from_record(rec: &ModuleRecord) -> Result<PvModule, PlantError> {
    let invalid = |reason: &str| PlantError::InvalidModule {
        id: rec.id.clone(),
        reason: reason.to_string(),
    };
    if !(rec.width > 0.0 && rec.height > 0.0) {
        return Err(invalid("width and height must be positive"));
    }
    let normal = Vector3::from(rec.normal);
    let axis_u = Vector3::from(rec.axis_u);
    if (normal.norm() - 1.0).abs() > AXIS_TOL || (axis_u.norm() - 1.0).abs() > AXIS_TOL {
        return Err(invalid("normal and axis_u must be unit vectors"));
    }
    if normal.dot(&axis_u).abs() > AXIS_TOL {
        return Err(invalid("axis_u must be orthogonal to the normal"));
    }
    let normal = normal.normalize();
    let axis_u = (axis_u - normal * normal.dot(&axis_u)).normalize();
    Ok(PvModule {
        id: rec.id.clone(),
        center: Point3::from(rec.center),
        axis_v: normal.cross(&axis_u),
        normal,
        axis_u,
        width: rec.width,
        height: rec.height,
    })
}

// ---- association ----

/// An anchor seen in the image, in the structure's logical coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedAnchor {
    pub kind: AnchorKind,
    /// Structure row the anchor was observed in.
    pub row: usize,
    /// End: sequence position of the end module. Gap: position before the gap.
    pub seq: i64,
    /// Gap only: sequence position after the gap.
    pub seq_after: Option<i64>,
    /// End only: image side, expressed along the flight direction.
    pub side: Option<EndSide>,
    /// Model anchor suggested by the flight plan / GNSS prior.
    pub hint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AssociationMap {
    pub mapping: BTreeMap<LogicalCoord, String>,
    /// Detections that fall outside the model extent.
    pub unmapped: Vec<LogicalCoord>,
    pub anchor: Option<String>,
    pub valid: bool,
}

impl AssociationMap {
    pub fn get(&self, coord: &LogicalCoord) -> Option<&str> {
        self.mapping.get(coord).map(String::as_str)
    }
}

/// Modules of one bench line indexed by (row, slot), where slots are module
/// pitches counted along the row axis from an origin module.
#[derive(Debug, Clone)]
pub struct SlotFrame {
    origin: Point3<f64>,
    axis: Vector3<f64>,
    pitch: f64,
    rows: usize,
    by_slot: HashMap<(usize, i64), String>,
    by_module: HashMap<String, (usize, i64)>,
}

impl SlotFrame {
    /// Builds the frame of the bench line containing `seed`.
    pub fn around(model: &PlantModel, seed: &str) -> Result<Self, PlantError> {
        let m = model
            .module(seed)
            .ok_or_else(|| PlantError::UnknownModule(seed.to_string()))?;
        let (bench, row, _) = model
            .cell_of(seed)
            .ok_or_else(|| PlantError::UnknownModule(seed.to_string()))?;
        let rows = model.benches[bench].grid.len();
        let pitch = model
            .row_pitch(bench, row)
            .or_else(|| (0..rows).find_map(|r| model.row_pitch(bench, r)))
            .unwrap_or(m.width);
        let axis = m.axis_u;
        let origin = m.center;
        // Line membership: same row index, center within half a module height
        // of the seed's row line once shifted to that row.
        let mut by_slot = HashMap::new();
        let mut by_module = HashMap::new();
        for (bi, b) in model.benches.iter().enumerate() {
            if b.grid.len() != rows {
                continue;
            }
            for (r, ids) in b.grid.iter().enumerate() {
                let Some(ref_row) = model.benches[bench].grid.get(r).and_then(|v| v.first()) else {
                    continue;
                };
                let ref_center = model.module(ref_row).expect("validated").center;
                for id in ids {
                    let mm = model.module(id).expect("validated");
                    let d = mm.center - ref_center;
                    let off_line = (d - axis * d.dot(&axis)).norm();
                    if off_line > 0.5 * mm.height.min(mm.width) && bi != bench {
                        continue;
                    }
                    let slot = ((mm.center - origin).dot(&axis) / pitch).round() as i64;
                    if let Some(prev) = by_slot.insert((r, slot), id.clone()) {
                        // two modules in one slot: keep the one nearer the slot center
                        let err = |x: &str| {
                            let c = model.module(x).expect("validated").center;
                            ((c - origin).dot(&axis) / pitch - slot as f64).abs()
                        };
                        if err(&prev) < err(id) {
                            by_slot.insert((r, slot), prev);
                            continue;
                        }
                        by_module.remove(&prev);
                    }
                    by_module.insert(id.clone(), (r, slot));
                }
            }
        }
        Ok(Self {
            origin,
            axis,
            pitch,
            rows,
            by_slot,
            by_module,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn slot_of(&self, id: &str) -> Option<(usize, i64)> {
        self.by_module.get(id).copied()
    }

    pub fn module_at(&self, row: usize, slot: i64) -> Option<&str> {
        self.by_slot.get(&(row, slot)).map(String::as_str)
    }

    /// Slot coordinate of a world point along the line axis.
    pub fn slot_position(&self, p: &Point3<f64>) -> f64 {
        (p - self.origin).dot(&self.axis) / self.pitch
    }
}

/// Offset that maps structure coordinates to slot-frame coordinates:
/// `model_row = row_base + dir * row`, `slot = slot_base + dir * seq`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Alignment {
    pub row_base: i64,
    pub slot_base: i64,
    pub dir: i64,
}

impl Alignment {
    pub fn apply(&self, c: LogicalCoord) -> (i64, i64) {
        (self.row_base + self.dir * c.row as i64, self.slot_base + self.dir * c.seq)
    }
}

/// Maps every detection of `structure` to model modules, given an observed
/// anchor.
pub fn associate_structure(
    structure: &SemanticStructure,
    observed: &ObservedAnchor,
    model: &PlantModel,
) -> Result<AssociationMap, PlantError> {
    let anchor = resolve_anchor(observed, model, structure.direction)?;
    let frame = SlotFrame::around(model, &anchor.modules[0])?;
    let dir = structure.direction.sign();
    let row_base = anchor.row as i64 - dir * observed.row as i64;

    // For gaps the two sides are aligned independently so that the number of
    // skipped positions at the gap does not matter.
    let (before, after) = match anchor.kind {
        AnchorKind::BenchEnd => {
            let (_, slot) = frame.slot_of(&anchor.modules[0]).expect("seed is in frame");
            let a = Alignment {
                row_base,
                slot_base: slot - dir * observed.seq,
                dir,
            };
            (a, None)
        }
        AnchorKind::BenchGap => {
            // the model lists the gap modules along +u; backwards the image
            // sees them in reverse order
            let (first, second) = match structure.direction {
                FlightDirection::Forward => (&anchor.modules[0], &anchor.modules[1]),
                FlightDirection::Backward => (&anchor.modules[1], &anchor.modules[0]),
            };
            let slot = |id: &String| {
                frame
                    .slot_of(id)
                    .map(|(_, s)| s)
                    .ok_or_else(|| PlantError::UnknownModule(id.clone()))
            };
            let (sa, sb) = (slot(first)?, slot(second)?);
            let after_seq = observed.seq_after.unwrap_or(observed.seq + 1);
            let a = Alignment {
                row_base,
                slot_base: sa - dir * observed.seq,
                dir,
            };
            let b = Alignment {
                row_base,
                slot_base: sb - dir * after_seq,
                dir,
            };
            (a, Some((after_seq, b)))
        }
    };

    let mut map = map_with(structure, &frame, |c| match after {
        Some((after_seq, b)) if c.seq >= after_seq => b,
        _ => before,
    })?;
    map.anchor = Some(anchor.id.clone());
    Ok(map)
}

/// Maps a structure using already-identified detections (e.g. from tracks)
/// as the reference. The alignment is the majority vote over `known`.
pub fn associate_with_reference(
    structure: &SemanticStructure,
    known: &[(LogicalCoord, String)],
    model: &PlantModel,
) -> Result<AssociationMap, PlantError> {
    let Some((_, seed)) = known.first() else {
        return Ok(AssociationMap::default());
    };
    let frame = SlotFrame::around(model, seed)?;
    let dir = structure.direction.sign();
    let mut votes: HashMap<Alignment, usize> = HashMap::new();
    for (c, id) in known {
        if let Some((r, s)) = frame.slot_of(id) {
            let a = Alignment {
                row_base: r as i64 - dir * c.row as i64,
                slot_base: s - dir * c.seq,
                dir,
            };
            *votes.entry(a).or_default() += 1;
        }
    }
    let Some(best) = votes
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then_with(|| (b.0.row_base, b.0.slot_base).cmp(&(a.0.row_base, a.0.slot_base))))
        .map(|(a, _)| a)
    else {
        return Ok(AssociationMap::default());
    };
    map_with(structure, &frame, |_| best)
}

fn map_with(
    structure: &SemanticStructure,
    frame: &SlotFrame,
    alignment: impl Fn(LogicalCoord) -> Alignment,
) -> Result<AssociationMap, PlantError> {
    let mut out = AssociationMap {
        valid: true,
        ..Default::default()
    };
    let mut used = HashSet::new();
    let mut coords: Vec<LogicalCoord> = structure.detections.iter().map(|d| d.coord).collect();
    coords.sort();
    coords.dedup();
    for c in coords {
        let (row, slot) = alignment(c).apply(c);
        if row < 0 || row >= frame.rows() as i64 {
            return Err(PlantError::ExtentOverflow {
                row,
                rows: frame.rows(),
            });
        }
        match frame.module_at(row as usize, slot) {
            Some(id) if used.insert(id.to_string()) => {
                out.mapping.insert(c, id.to_string());
            }
            _ => out.unmapped.push(c),
        }
    }
    Ok(out)
}

fn resolve_anchor<'m>(
    observed: &ObservedAnchor,
    model: &'m PlantModel,
    direction: FlightDirection,
) -> Result<&'m AnchorPoint, PlantError> {
    // an end seen at the start of the flight direction is the start of the
    // row in model terms when flying along +u
    let model_side = observed.side.map(|s| match (s, direction) {
        (s, FlightDirection::Forward) => s,
        (EndSide::Start, FlightDirection::Backward) => EndSide::End,
        (EndSide::End, FlightDirection::Backward) => EndSide::Start,
    });
    if let Some(hint) = &observed.hint {
        let a = model
            .anchor(hint)
            .ok_or_else(|| PlantError::UnknownAnchor(hint.clone()))?;
        let side_ok = model_side.is_none() || a.side.is_none() || a.side == model_side;
        if a.kind != observed.kind || !side_ok {
            return Err(PlantError::NoMatchingAnchor);
        }
        return Ok(a);
    }
    let candidates: Vec<_> = model
        .anchors
        .iter()
        .filter(|a| a.kind == observed.kind)
        .filter(|a| model_side.is_none() || a.side == model_side)
        .collect();
    match candidates.len() {
        0 => Err(PlantError::NoMatchingAnchor),
        1 => Ok(candidates[0]),
        n => Err(PlantError::AmbiguousAnchor(n)),
    }
}
