//! Per-frame report rows, aggregates, order statistics, and stage timings.

use super::PipelineError;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const FRAMES_FILE: &str = "frames.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TIMINGS_FILE: &str = "timings.json";

/// One processed frame. Positions in meters, angles in radians
/// (yaw, pitch, roll of the camera-to-world rotation).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameRow {
    pub frame: usize,
    pub timestamp: f64,
    pub detections: usize,
    /// Confirmed bench gaps and visible bench ends.
    pub gaps: usize,
    pub ends: usize,
    /// Detections associated with model modules.
    pub mapped: usize,
    pub initialized: bool,
    /// Anchor that initialized (or re-anchored) the association this frame.
    pub anchor: Option<String>,
    pub pnp_valid: bool,
    pub pnp_x: Option<f64>,
    pub pnp_y: Option<f64>,
    pub pnp_z: Option<f64>,
    pub pnp_yaw: Option<f64>,
    pub pnp_pitch: Option<f64>,
    pub pnp_roll: Option<f64>,
    pub eps_r: Option<f64>,
    pub eps_d: Option<f64>,
    /// Reprojection threshold in effect [px].
    pub th_r: f64,
    /// Deviation threshold [m].
    pub th_d: f64,
    pub w_pnp: Option<f64>,
    /// A valid PnP estimate was rejected by the gate.
    pub gated: bool,
    pub filt_x: Option<f64>,
    pub filt_y: Option<f64>,
    pub filt_z: Option<f64>,
    pub filt_yaw: Option<f64>,
    pub filt_pitch: Option<f64>,
    pub filt_roll: Option<f64>,
    pub gnss_x: Option<f64>,
    pub gnss_y: Option<f64>,
    pub gnss_z: Option<f64>,
    pub truth_x: Option<f64>,
    pub truth_y: Option<f64>,
    pub truth_z: Option<f64>,
    /// Filtered position vs truth [m].
    pub err_filtered: Option<f64>,
    /// Raw PnP position vs truth [m].
    pub err_pnp: Option<f64>,
    /// GNSS position vs truth [m].
    pub err_gnss: Option<f64>,
    /// Filtered position vs GNSS [m].
    pub dev_gnss: Option<f64>,
    /// Filtered orientation vs truth, angular distance [rad].
    pub err_orientation: Option<f64>,
}

/// Minimum, quartiles, and maximum with linear interpolation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FivePoint {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted values, `q` in [0, 1].
fn quantile_sorted(s: &[f64], q: f64) -> f64 {
    let pos = q * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut s: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    s.sort_by(f64::total_cmp);
    s
}

pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    let s = sorted(values);
    (!s.is_empty()).then(|| quantile_sorted(&s, q))
}

pub fn five_point(values: &[f64]) -> Option<FivePoint> {
    let s = sorted(values);
    if s.is_empty() {
        return None;
    }
    Some(FivePoint {
        min: s[0],
        q1: quantile_sorted(&s, 0.25),
        median: quantile_sorted(&s, 0.5),
        q3: quantile_sorted(&s, 0.75),
        max: s[s.len() - 1],
    })
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn pct(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

/// Aggregates of a run; a pure function of the frame rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub frames: usize,
    pub initialized_at: Option<usize>,
    pub anchor: Option<String>,
    /// Reprojection threshold in effect at the last frame [px].
    pub th_r: f64,
    /// Frames after initialization.
    pub tracked_frames: usize,
    /// Frames with at least one detection, over all frames [%].
    pub detection_rate: f64,
    pub valid_pnp: usize,
    /// Over frames after initialization [%].
    pub valid_pnp_pct: f64,
    /// Valid PnP estimates with `eps_r <= th_r` [%].
    pub under_th_r_pct: f64,
    /// Valid PnP estimates with `eps_d <= th_d` [%].
    pub under_th_d_pct: f64,
    /// Valid PnP estimates passed by the gate [%].
    pub accepted_pct: f64,
    pub median_eps_r: Option<f64>,
    pub mean_eps_d: Option<f64>,
    pub p90_eps_d: Option<f64>,
    pub mean_err_filtered: Option<f64>,
    pub p90_err_filtered: Option<f64>,
    pub mean_err_pnp: Option<f64>,
    pub p90_err_pnp: Option<f64>,
    pub mean_err_gnss: Option<f64>,
    pub mean_dev_gnss: Option<f64>,
    pub p90_dev_gnss: Option<f64>,
    pub position_error: Option<FivePoint>,
    pub orientation_error: Option<FivePoint>,
}

fn collect(rows: &[FrameRow], f: impl Fn(&FrameRow) -> Option<f64>) -> Vec<f64> {
    rows.iter().filter_map(f).collect()
}

impl Summary {
    pub fn from_rows(rows: &[FrameRow]) -> Self {
        let after: Vec<&FrameRow> = rows.iter().filter(|r| r.initialized).collect();
        let valid: Vec<&FrameRow> = after.iter().copied().filter(|r| r.pnp_valid).collect();
        let under = valid.iter().filter(|r| r.eps_r.is_some_and(|e| e <= r.th_r)).count();
        let under_d = valid.iter().filter(|r| r.eps_d.is_some_and(|e| e <= r.th_d)).count();
        let accepted = valid.iter().filter(|r| !r.gated).count();
        let eps_r: Vec<f64> = valid.iter().filter_map(|r| r.eps_r).collect();
        let eps_d: Vec<f64> = valid.iter().filter_map(|r| r.eps_d).collect();
        let filt = collect(rows, |r| r.err_filtered);
        let pnp = collect(rows, |r| r.err_pnp);
        let dev = collect(rows, |r| r.dev_gnss);
        let ori = collect(rows, |r| r.err_orientation);
        let first = rows.iter().find(|r| r.initialized);
        Summary {
            frames: rows.len(),
            initialized_at: first.map(|r| r.frame),
            anchor: first.and_then(|r| r.anchor.clone()),
            th_r: rows.last().map(|r| r.th_r).unwrap_or(0.0),
            tracked_frames: after.len(),
            detection_rate: pct(rows.iter().filter(|r| r.detections > 0).count(), rows.len()),
            valid_pnp: valid.len(),
            valid_pnp_pct: pct(valid.len(), after.len()),
            under_th_r_pct: pct(under, valid.len()),
            under_th_d_pct: pct(under_d, valid.len()),
            accepted_pct: pct(accepted, valid.len()),
            median_eps_r: quantile(&eps_r, 0.5),
            mean_eps_d: mean(&eps_d),
            p90_eps_d: quantile(&eps_d, 0.9),
            mean_err_filtered: mean(&filt),
            p90_err_filtered: quantile(&filt, 0.9),
            mean_err_pnp: mean(&pnp),
            p90_err_pnp: quantile(&pnp, 0.9),
            mean_err_gnss: mean(&collect(rows, |r| r.err_gnss)),
            mean_dev_gnss: mean(&dev),
            p90_dev_gnss: quantile(&dev, 0.9),
            position_error: five_point(&filt),
            orientation_error: five_point(&ori),
        }
    }
}

/// Wall-clock time of each stage for one processed frame [ms].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimes {
    pub frame: usize,
    /// Image acquisition (load or render).
    pub acquire: f64,
    pub detection: f64,
    pub tracking: f64,
    pub association: f64,
    pub pnp: f64,
    pub filter: f64,
}

impl StageTimes {
    /// Localization work, excluding acquisition.
    pub fn total(&self) -> f64 {
        self.detection + self.tracking + self.association + self.pnp + self.filter
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageMeans {
    pub frames: usize,
    pub acquire: f64,
    pub detection: f64,
    pub tracking: f64,
    pub association: f64,
    pub pnp: f64,
    pub filter: f64,
    pub total: f64,
}

pub fn time_stages(times: &[StageTimes]) -> StageMeans {
    let n = times.len();
    if n == 0 {
        return StageMeans::default();
    }
    let m = |f: fn(&StageTimes) -> f64| times.iter().map(f).sum::<f64>() / n as f64;
    StageMeans {
        frames: n,
        acquire: m(|t| t.acquire),
        detection: m(|t| t.detection),
        tracking: m(|t| t.tracking),
        association: m(|t| t.association),
        pnp: m(|t| t.pnp),
        filter: m(|t| t.filter),
        total: m(StageTimes::total),
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunReport {
    pub rows: Vec<FrameRow>,
    pub timings: Vec<StageTimes>,
}

/// Five-point statistics of the filtered position and orientation errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStatistics {
    pub position: FivePoint,
    pub orientation: Option<FivePoint>,
}

pub fn summarize(report: &RunReport) -> Result<ErrorStatistics, PipelineError> {
    let pos = collect(&report.rows, |r| r.err_filtered);
    let position = five_point(&pos).ok_or_else(|| PipelineError::Report("no frames with a position error".into()))?;
    let orientation = five_point(&collect(&report.rows, |r| r.err_orientation));
    Ok(ErrorStatistics { position, orientation })
}

impl RunReport {
    pub fn summary(&self) -> Summary {
        Summary::from_rows(&self.rows)
    }

    /// Writes `frames.csv`, `summary.json`, and `timings.json`. The first two
    /// depend only on the inputs; timings vary between runs.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), PipelineError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join(FRAMES_FILE)).map_err(csv_error)?;
        for r in &self.rows {
            w.serialize(r).map_err(csv_error)?;
        }
        w.flush()?;
        let summary = serde_json::to_string_pretty(&self.summary()).map_err(json_error)?;
        std::fs::write(dir.join(SUMMARY_FILE), summary + "\n")?;
        let timings = TimingsFile {
            means: time_stages(&self.timings),
            frames: self.timings.clone(),
        };
        std::fs::write(dir.join(TIMINGS_FILE), serde_json::to_string_pretty(&timings).map_err(json_error)?)?;
        Ok(())
    }

    /// Reads a report directory and checks that the stored summary matches
    /// the one recomputed from the frame rows.
    pub fn read(dir: impl AsRef<Path>) -> Result<(Self, Summary), PipelineError> {
        let dir = dir.as_ref();
        let mut r = csv::Reader::from_path(dir.join(FRAMES_FILE)).map_err(csv_error)?;
        let rows = r.deserialize().collect::<Result<Vec<FrameRow>, _>>().map_err(csv_error)?;
        let text = std::fs::read_to_string(dir.join(SUMMARY_FILE))?;
        let stored: Summary = serde_json::from_str(&text).map_err(json_error)?;
        let timings = match std::fs::read_to_string(dir.join(TIMINGS_FILE)) {
            Ok(t) => serde_json::from_str::<TimingsFile>(&t).map_err(json_error)?.frames,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let report = RunReport { rows, timings };
        let recomputed = report.summary();
        if recomputed != stored {
            return Err(PipelineError::Report(
                "summary.json does not match the aggregates of frames.csv".into(),
            ));
        }
        Ok((report, stored))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TimingsFile {
    means: StageMeans,
    frames: Vec<StageTimes>,
}

fn csv_error(e: csv::Error) -> PipelineError {
    PipelineError::Report(format!("frames.csv: {e}"))
}

fn json_error(e: serde_json::Error) -> PipelineError {
    PipelineError::Report(format!("json: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_point_of_one_to_five() {
        let f = five_point(&[3.0, 1.0, 5.0, 2.0, 4.0]).unwrap();
        assert_eq!((f.min, f.q1, f.median, f.q3, f.max), (1.0, 2.0, 3.0, 4.0, 5.0));
        assert_eq!(five_point(&[]), None);
        assert_eq!(quantile(&[0.0, 10.0], 0.9), Some(9.0));
    }

    #[test]
    fn empty_report_has_no_statistics() {
        assert!(summarize(&RunReport::default()).is_err());
    }

    fn row(frame: usize, valid: bool, eps_r: f64, gated: bool, err: f64) -> FrameRow {
        FrameRow {
            frame,
            timestamp: frame as f64 / 3.0,
            detections: 10,
            mapped: 8,
            initialized: true,
            pnp_valid: valid,
            eps_r: valid.then_some(eps_r),
            eps_d: valid.then_some(0.5),
            th_r: 1.0,
            th_d: 10.0,
            gated,
            err_filtered: Some(err),
            ..Default::default()
        }
    }

    #[test]
    fn summary_counts_match_rows() {
        let rows = vec![
            FrameRow {
                frame: 0,
                ..Default::default()
            },
            row(1, true, 0.5, false, 0.1),
            row(2, true, 1.5, true, 0.2),
            row(3, false, 0.0, false, 0.3),
            row(4, true, 0.8, false, 0.4),
        ];
        let s = Summary::from_rows(&rows);
        assert_eq!((s.frames, s.tracked_frames, s.valid_pnp, s.initialized_at), (5, 4, 3, Some(1)));
        assert_eq!(s.valid_pnp_pct, 75.0);
        assert!((s.under_th_r_pct - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.median_eps_r, Some(0.8));
        assert!((s.mean_err_filtered.unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn report_round_trip_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let report = RunReport {
            rows: vec![row(0, true, 0.3, false, 0.12345678901234), row(1, false, 0.0, false, 0.2)],
            timings: vec![StageTimes::default(); 2],
        };
        report.write(dir.path()).unwrap();
        let (back, summary) = RunReport::read(dir.path()).unwrap();
        assert_eq!(back.rows, report.rows);
        assert_eq!(summary, report.summary());
        // tampering with the aggregates is detected
        let text = std::fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
        std::fs::write(dir.path().join(SUMMARY_FILE), text.replace("\"frames\": 2", "\"frames\": 3")).unwrap();
        assert!(RunReport::read(dir.path()).is_err());
    }

    #[test]
    fn stage_means() {
        let t = [
            StageTimes {
                detection: 10.0,
                pnp: 2.0,
                ..Default::default()
            },
            StageTimes {
                detection: 20.0,
                pnp: 4.0,
                ..Default::default()
            },
        ];
        let m = time_stages(&t);
        assert_eq!((m.frames, m.detection, m.pnp, m.total), (2, 15.0, 3.0, 18.0));
    }
}
