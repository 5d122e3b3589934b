//! Tracking-by-detection with a constant-velocity Kalman filter.
//!
//! The filter state is `(x, y, z, heading, l, w, h, vx, vy)`; velocities are
//! in metres per frame. Boxes are expected in world coordinates.

mod hungarian;

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

pub use hungarian::solve as solve_assignment;

use crate::error::{Error, Result};
use crate::geometry::{bev_iou, normalize_heading, Box7};

const STATE_DIM: usize = 9;
const MEAS_DIM: usize = 7;

type StateVec = SVector<f64, STATE_DIM>;
type StateMat = SMatrix<f64, STATE_DIM, STATE_DIM>;
type MeasVec = SVector<f64, MEAS_DIM>;
type MeasMat = SMatrix<f64, MEAS_DIM, MEAS_DIM>;
type Gain = SMatrix<f64, STATE_DIM, MEAS_DIM>;

/// Cost used for a forbidden (gated-out) pair; larger than any feasible total.
const GATED_COST: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssociationMetric {
    BevIou,
    CentroidDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub metric: AssociationMetric,
    /// Minimum BEV IoU for a pair to be associated.
    pub iou_threshold: f64,
    /// Maximum BEV centroid distance (m) for a pair to be associated.
    pub distance_threshold: f64,
    /// After IoU association, match leftovers by centroid distance.
    pub distance_fallback: bool,
    /// Frames a track may go unmatched before it is retired.
    pub max_age: u32,
    /// Associated detections required before a track is emitted.
    pub min_hits: u32,
    pub measurement_position_sigma: f64,
    pub measurement_heading_sigma: f64,
    pub measurement_dims_sigma: f64,
    pub process_position_sigma: f64,
    pub process_velocity_sigma: f64,
    pub process_heading_sigma: f64,
    pub process_dims_sigma: f64,
    /// Prior standard deviation of a new track's velocity (m/frame).
    pub initial_velocity_sigma: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            metric: AssociationMetric::BevIou,
            iou_threshold: 0.1,
            distance_threshold: 2.0,
            distance_fallback: true,
            max_age: 3,
            min_hits: 2,
            measurement_position_sigma: 0.5,
            measurement_heading_sigma: 0.1,
            measurement_dims_sigma: 0.2,
            process_position_sigma: 0.5,
            process_velocity_sigma: 0.2,
            process_heading_sigma: 0.1,
            process_dims_sigma: 0.05,
            initial_velocity_sigma: 1e4,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("iou_threshold", self.iou_threshold),
            ("distance_threshold", self.distance_threshold),
            (
                "measurement_position_sigma",
                self.measurement_position_sigma,
            ),
            ("measurement_heading_sigma", self.measurement_heading_sigma),
            ("measurement_dims_sigma", self.measurement_dims_sigma),
            ("initial_velocity_sigma", self.initial_velocity_sigma),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("tracker {name} must be positive")));
            }
        }
        for (name, v) in [
            ("process_position_sigma", self.process_position_sigma),
            ("process_velocity_sigma", self.process_velocity_sigma),
            ("process_heading_sigma", self.process_heading_sigma),
            ("process_dims_sigma", self.process_dims_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "tracker {name} must be non-negative"
                )));
            }
        }
        if self.iou_threshold > 1.0 {
            return Err(Error::Config(
                "tracker iou_threshold must be at most 1".into(),
            ));
        }
        if self.max_age < 1 {
            return Err(Error::Config("tracker max_age must be at least 1".into()));
        }
        Ok(())
    }

    fn process_noise(&self) -> StateMat {
        let p = self.process_position_sigma.powi(2);
        let a = self.process_heading_sigma.powi(2);
        let d = self.process_dims_sigma.powi(2);
        let v = self.process_velocity_sigma.powi(2);
        StateMat::from_diagonal(&StateVec::from([p, p, p, a, d, d, d, v, v]))
    }

    fn measurement_noise(&self) -> MeasMat {
        let p = self.measurement_position_sigma.powi(2);
        let a = self.measurement_heading_sigma.powi(2);
        let d = self.measurement_dims_sigma.powi(2);
        MeasMat::from_diagonal(&MeasVec::from([p, p, p, a, d, d, d]))
    }
}

/// Kalman filter state of one track.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub mean: SVector<f64, 9>,
    pub covariance: SMatrix<f64, 9, 9>,
    pub hits: u32,
    pub misses: u32,
    pub track_id: u64,
    /// Score of the most recent associated detection.
    pub last_score: f64,
    pub class_id: u32,
}

fn measurement_of(b: &Box7) -> MeasVec {
    MeasVec::from([b.cx, b.cy, b.cz, b.heading, b.l, b.w, b.h])
}

impl TrackState {
    /// New track from a first detection; velocity starts at zero with a broad prior.
    pub fn spawn(detection: &Box7, track_id: u64, cfg: &TrackerConfig) -> Self {
        let mut mean = StateVec::zeros();
        mean.fixed_rows_mut::<MEAS_DIM>(0)
            .copy_from(&measurement_of(detection));
        let mut covariance = StateMat::zeros();
        covariance
            .fixed_view_mut::<MEAS_DIM, MEAS_DIM>(0, 0)
            .copy_from(&cfg.measurement_noise());
        let v = cfg.initial_velocity_sigma.powi(2);
        covariance[(7, 7)] = v;
        covariance[(8, 8)] = v;
        Self {
            mean,
            covariance,
            hits: 1,
            misses: 0,
            track_id,
            last_score: detection.score,
            class_id: detection.class_id,
        }
    }

    pub fn position(&self) -> [f64; 3] {
        [self.mean[0], self.mean[1], self.mean[2]]
    }

    pub fn velocity(&self) -> [f64; 2] {
        [self.mean[7], self.mean[8]]
    }

    /// The box described by the current mean.
    pub fn to_box(&self, frame_idx: u32) -> Box7 {
        let m = &self.mean;
        Box7 {
            cx: m[0],
            cy: m[1],
            cz: m[2],
            l: m[4].max(1e-3),
            w: m[5].max(1e-3),
            h: m[6].max(1e-3),
            heading: normalize_heading(m[3]),
            score: self.last_score,
            class_id: self.class_id,
            detector_id: crate::geometry::FUSED_DETECTOR_ID,
            frame_idx,
        }
    }

    /// Smallest eigenvalue of the covariance.
    pub fn min_covariance_eigenvalue(&self) -> f64 {
        self.covariance
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }
}

fn transition() -> StateMat {
    let mut f = StateMat::identity();
    f[(0, 7)] = 1.0;
    f[(1, 8)] = 1.0;
    f
}

/// One constant-velocity step: `(x, y) += (vx, vy)`, everything else held.
pub fn predict(state: &TrackState, cfg: &TrackerConfig) -> TrackState {
    let f = transition();
    let mut out = state.clone();
    out.mean = f * state.mean;
    out.covariance = f * state.covariance * f.transpose() + cfg.process_noise();
    out
}

/// Kalman measurement update with a box; the heading innovation is wrapped.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn update(state: &TrackState, detection: &Box7, cfg: &TrackerConfig) -> Result<TrackState> {
    let mut h = SMatrix::<f64, MEAS_DIM, STATE_DIM>::zeros();
    for i in 0..MEAS_DIM {
        h[(i, i)] = 1.0;
    }
    let r = cfg.measurement_noise();
    let p = &state.covariance;

    let mut innovation = measurement_of(detection) - h * state.mean;
    innovation[3] = normalize_heading(innovation[3]);

    let s = h * p * h.transpose() + r;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular innovation covariance".into()))?;
    let gain: Gain = p * h.transpose() * s_inv;

    let mut mean = state.mean + gain * innovation;
    mean[3] = normalize_heading(mean[3]);

    // Joseph form keeps the covariance symmetric positive semi-definite.
    let i_kh = StateMat::identity() - gain * h;
    let cov = i_kh * p * i_kh.transpose() + gain * r * gain.transpose();
    let cov = (cov + cov.transpose()) * 0.5;

    let out = TrackState {
        mean,
        covariance: cov,
        hits: state.hits + 1,
        misses: 0,
        track_id: state.track_id,
        last_score: detection.score,
        class_id: detection.class_id,
    };
    let scale = cov.abs().max().max(1.0);
    let min_eig = out.min_covariance_eigenvalue();
    if !mean.iter().all(|v| v.is_finite()) || !(min_eig >= -1e-9 * scale) {
        return Err(Error::Numerical(format!(
            "track {} covariance lost positive semi-definiteness (min eigenvalue {min_eig})",
            state.track_id
        )));
    }
    Ok(out)
}

/// Result of matching tracks to one frame's detections.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Association {
    /// `(track index, detection index)` pairs.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Cost of pairing two boxes under `metric`, or `None` if outside the gate.
pub fn pair_cost(
    a: &Box7,
    b: &Box7,
    metric: AssociationMetric,
    cfg: &TrackerConfig,
) -> Option<f64> {
    match metric {
        AssociationMetric::BevIou => {
            let iou = bev_iou(a, b);
            (iou >= cfg.iou_threshold).then_some(1.0 - iou)
        }
        AssociationMetric::CentroidDistance => {
            let d = (a.cx - b.cx).hypot(a.cy - b.cy);
            (d <= cfg.distance_threshold).then_some(d)
        }
    }
}

fn assign(
    track_boxes: &[Box7],
    track_idx: &[usize],
    detections: &[Box7],
    det_idx: &[usize],
    metric: AssociationMetric,
    cfg: &TrackerConfig,
) -> Vec<(usize, usize)> {
    let (rows, cols) = (track_idx.len(), det_idx.len());
    let mut costs = vec![GATED_COST; rows * cols];
    let mut any = false;
    for (r, &t) in track_idx.iter().enumerate() {
        for (c, &d) in det_idx.iter().enumerate() {
            if let Some(cost) = pair_cost(&track_boxes[t], &detections[d], metric, cfg) {
                costs[r * cols + c] = cost;
                any = true;
            }
        }
    }
    if !any {
        return Vec::new();
    }
    hungarian::solve(&costs, rows, cols)
        .into_iter()
        .enumerate()
        .filter_map(|(r, c)| {
            let c = c?;
            (costs[r * cols + c] < GATED_COST).then(|| (track_idx[r], det_idx[c]))
        })
        .collect()
}

/// Minimum-cost one-to-one matching of predicted tracks to detections.
///
/// Only gated pairs are matched; among assignments with the most gated pairs
/// the total cost is minimal. With `distance_fallback`, leftovers of an IoU
/// pass get a second pass on centroid distance.
pub fn associate(tracks: &[TrackState], detections: &[Box7], cfg: &TrackerConfig) -> Association {
    let frame = detections.first().map_or(0, |d| d.frame_idx);
    let track_boxes: Vec<Box7> = tracks.iter().map(|t| t.to_box(frame)).collect();
    let all_tracks: Vec<usize> = (0..tracks.len()).collect();
    let all_dets: Vec<usize> = (0..detections.len()).collect();

    let mut pairs = assign(
        &track_boxes,
        &all_tracks,
        detections,
        &all_dets,
        cfg.metric,
        cfg,
    );
    if cfg.distance_fallback && cfg.metric == AssociationMetric::BevIou {
        let rest_t: Vec<usize> = all_tracks
            .iter()
            .copied()
            .filter(|t| !pairs.iter().any(|p| p.0 == *t))
            .collect();
        let rest_d: Vec<usize> = all_dets
            .iter()
            .copied()
            .filter(|d| !pairs.iter().any(|p| p.1 == *d))
            .collect();
        if !rest_t.is_empty() && !rest_d.is_empty() {
            pairs.extend(assign(
                &track_boxes,
                &rest_t,
                detections,
                &rest_d,
                AssociationMetric::CentroidDistance,
                cfg,
            ));
        }
    }
    pairs.sort_unstable();
    let unmatched_tracks = all_tracks
        .into_iter()
        .filter(|t| !pairs.iter().any(|p| p.0 == *t))
        .collect();
    let unmatched_detections = all_dets
        .into_iter()
        .filter(|d| !pairs.iter().any(|p| p.1 == *d))
        .collect();
    Association {
        pairs,
        unmatched_tracks,
        unmatched_detections,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionState {
    Static,
    Dynamic,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackEntry {
    pub frame_idx: u32,
    pub bbox: Box7,
    /// Filled from the filter prediction rather than a detection.
    pub interpolated: bool,
}

/// An identity-linked sequence of boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub track_id: u64,
    pub entries: Vec<TrackEntry>,
    pub motion_state: MotionState,
}

impl Track {
    pub fn first_frame(&self) -> Option<u32> {
        self.entries.first().map(|e| e.frame_idx)
    }

    pub fn last_frame(&self) -> Option<u32> {
        self.entries.last().map(|e| e.frame_idx)
    }

    /// Entries backed by an actual detection.
    pub fn detection_count(&self) -> usize {
        self.entries.iter().filter(|e| !e.interpolated).count()
    }

    pub fn boxes(&self) -> impl Iterator<Item = &Box7> {
        self.entries.iter().map(|e| &e.bbox)
    }
}

/// Detections of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBoxes {
    pub frame_idx: u32,
    pub boxes: Vec<Box7>,
}

struct LiveTrack {
    state: TrackState,
    entries: Vec<TrackEntry>,
    /// Predictions made while unmatched; become interpolated entries if the
    /// track is matched again.
    pending: Vec<TrackEntry>,
}

impl LiveTrack {
    fn finish(self, min_hits: u32) -> Option<Track> {
        (self.state.hits >= min_hits).then_some(Track {
            track_id: self.state.track_id,
            entries: self.entries,
            motion_state: MotionState::Unknown,
        })
    }
}

/// Run the tracker over a sequence of frames.
///
/// Entries of associated frames hold the detection itself; gaps inside a
/// track hold the filter prediction flagged as interpolated. Tracks with
/// fewer than `min_hits` detections are dropped. Output is ordered by id.
pub fn track_sequence(frames: &[FrameBoxes], cfg: &TrackerConfig) -> Result<Vec<Track>> {
    cfg.validate()?;
    let mut live: Vec<LiveTrack> = Vec::new();
    let mut done: Vec<Track> = Vec::new();
    let mut next_id: u64 = 0;
    let mut previous: Option<u32> = None;

    for frame in frames {
        if let Some(prev) = previous {
            if frame.frame_idx <= prev {
                return Err(Error::FrameOrder {
                    previous: prev,
                    found: frame.frame_idx,
                });
            }
            for t in &mut live {
                for _ in prev..frame.frame_idx {
                    t.state = predict(&t.state, cfg);
                }
            }
        }
        previous = Some(frame.frame_idx);

        let states: Vec<TrackState> = live.iter().map(|t| t.state.clone()).collect();
        let assoc = associate(&states, &frame.boxes, cfg);

        for &(ti, di) in &assoc.pairs {
            let det = frame.boxes[di];
            let t = &mut live[ti];
            t.state = update(&t.state, &det, cfg)?;
            t.entries.append(&mut t.pending);
            t.entries.push(TrackEntry {
                frame_idx: frame.frame_idx,
                bbox: det,
                interpolated: false,
            });
        }
        for &ti in &assoc.unmatched_tracks {
            let t = &mut live[ti];
            t.state.misses += 1;
            t.pending.push(TrackEntry {
                frame_idx: frame.frame_idx,
                bbox: t.state.to_box(frame.frame_idx),
                interpolated: true,
            });
        }

        let (keep, retire): (Vec<LiveTrack>, Vec<LiveTrack>) = std::mem::take(&mut live)
            .into_iter()
            .partition(|t| t.state.misses <= cfg.max_age);
        live = keep;
        done.extend(retire.into_iter().filter_map(|t| t.finish(cfg.min_hits)));

        for &di in &assoc.unmatched_detections {
            let det = frame.boxes[di];
            live.push(LiveTrack {
                state: TrackState::spawn(&det, next_id, cfg),
                entries: vec![TrackEntry {
                    frame_idx: frame.frame_idx,
                    bbox: det,
                    interpolated: false,
                }],
                pending: Vec::new(),
            });
            next_id += 1;
        }
    }
    done.extend(live.into_iter().filter_map(|t| t.finish(cfg.min_hits)));
    done.sort_by_key(|t| t.track_id);
    Ok(done)
}
