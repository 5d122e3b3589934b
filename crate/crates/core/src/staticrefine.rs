//! Motion-state classification, motion-trail correction, and temporal
//! refinement of static objects.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{kbf_fuse_cluster, Bandwidths, FusionConfig};
use crate::geometry::{bev_iou, Box7};
use crate::tracking::{MotionState, Track};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionConfig {
    /// Tracks whose first and last centroids are this far apart (m) are dynamic.
    pub begin_to_end_threshold: f64,
    /// Per-axis centroid variance (m^2) at or above which a track is dynamic.
    pub centre_variance_threshold: f64,
    /// BEV IoU with a dynamic trajectory that turns a static track dynamic.
    pub overlap_iou_threshold: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            begin_to_end_threshold: 2.0,
            centre_variance_threshold: 0.25,
            overlap_iou_threshold: 0.1,
        }
    }
}

impl MotionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("begin_to_end_threshold", self.begin_to_end_threshold),
            ("centre_variance_threshold", self.centre_variance_threshold),
            ("overlap_iou_threshold", self.overlap_iou_threshold),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("motion {name} must be positive")));
            }
        }
        if self.overlap_iou_threshold > 1.0 {
            return Err(Error::Config(
                "motion overlap_iou_threshold must be at most 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaticRefineConfig {
    /// Number of historical frames fused with the current one.
    pub window: u32,
    /// Minimum score of a refined static box.
    pub score_floor: f64,
    /// Per-frame score decay of propagated boxes.
    pub decay: f64,
    /// Propagate only tracks with more associated detections than this.
    pub min_track_detections: usize,
    pub bandwidths: Bandwidths,
}

impl Default for StaticRefineConfig {
    fn default() -> Self {
        Self {
            window: 16,
            score_floor: 0.7,
            decay: 0.95,
            min_track_detections: 7,
            bandwidths: Bandwidths::default(),
        }
    }
}

impl StaticRefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score_floor) {
            return Err(Error::Config("score_floor must lie in [0, 1]".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config("decay must lie in (0, 1]".into()));
        }
        self.bandwidths.validate()
    }

    fn fusion(&self) -> FusionConfig {
        FusionConfig {
            min_cluster_size: 1,
            bandwidths: self.bandwidths,
            ..FusionConfig::default()
        }
    }
}

/// Static if the track barely moves end to end and its centroids stay
/// tightly clustered on every axis. Single-entry tracks are unknown.
pub fn classify_motion(track: &Track, cfg: &MotionConfig) -> Result<MotionState> {
    let (first, last) = match (track.entries.first(), track.entries.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => {
            return Err(Error::Input(format!(
                "track {} has no entries",
                track.track_id
            )))
        }
    };
    if track.entries.len() == 1 {
        return Ok(MotionState::Unknown);
    }
    let displacement = (last.bbox.center() - first.bbox.center()).norm();
    if displacement >= cfg.begin_to_end_threshold {
        return Ok(MotionState::Dynamic);
    }
    let n = track.entries.len() as f64;
    for axis in 0..3 {
        let values = track.entries.iter().map(|e| e.bbox.center()[axis]);
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        if var >= cfg.centre_variance_threshold {
            return Ok(MotionState::Dynamic);
        }
    }
    Ok(MotionState::Static)
}

/// Label every track in place.
pub fn classify_tracks(tracks: &mut [Track], cfg: &MotionConfig) -> Result<()> {
    for t in tracks.iter_mut() {
        t.motion_state = classify_motion(t, cfg)?;
    }
    Ok(())
}

/// Bounding rectangle of a set of boxes in BEV, padded by their radii.
#[derive(Debug, Clone, Copy)]
struct Extent {
    lo: [f64; 2],
    hi: [f64; 2],
}

impl Extent {
    fn of<'a>(boxes: impl Iterator<Item = &'a Box7>) -> Option<Self> {
        let mut out: Option<Extent> = None;
        for b in boxes {
            let r = b.bev_radius();
            let e = Extent {
                lo: [b.cx - r, b.cy - r],
                hi: [b.cx + r, b.cy + r],
            };
            out = Some(match out {
                None => e,
                Some(o) => Extent {
                    lo: [o.lo[0].min(e.lo[0]), o.lo[1].min(e.lo[1])],
                    hi: [o.hi[0].max(e.hi[0]), o.hi[1].max(e.hi[1])],
                },
            });
        }
        out
    }

    fn intersects(&self, other: &Extent) -> bool {
        (0..2).all(|k| self.lo[k] <= other.hi[k] && other.lo[k] <= self.hi[k])
    }
}

fn trajectories_overlap(a: &Track, b: &Track, threshold: f64) -> bool {
    a.boxes().any(|x| {
        b.boxes().any(|y| {
            let reach = x.bev_radius() + y.bev_radius();
            (x.cx - y.cx).powi(2) + (x.cy - y.cy).powi(2) <= reach * reach
                && bev_iou(x, y) >= threshold
        })
    })
}

/// Relabel static 16-frame tracks that overlap any dynamic 1-frame
/// trajectory, across all frames. Unknown 1-frame tracks count as dynamic.
/// Dynamic labels are never changed.
pub fn correct_16f_motion(
    tracks_1f: &[Track],
    mut tracks_16f: Vec<Track>,
    cfg: &MotionConfig,
) -> Vec<Track> {
    let dynamic: Vec<(&Track, Extent)> = tracks_1f
        .iter()
        .filter(|t| t.motion_state != MotionState::Static)
        .filter_map(|t| Extent::of(t.boxes()).map(|e| (t, e)))
        .collect();
    for t in tracks_16f.iter_mut() {
        if t.motion_state != MotionState::Static {
            continue;
        }
        let Some(extent) = Extent::of(t.boxes()) else {
            continue;
        };
        let crossed = dynamic.iter().any(|(d, e)| {
            extent.intersects(e) && trajectories_overlap(t, d, cfg.overlap_iou_threshold)
        });
        if crossed {
            log::debug!(
                "track {} relabelled dynamic by trajectory overlap",
                t.track_id
            );
            t.motion_state = MotionState::Dynamic;
        }
    }
    tracks_16f
}

/// Fuse each entry with the track's boxes from the preceding `window`
/// frames. The score of the result is at least `score_floor`.
pub fn refine_static_boxes(track: &Track, cfg: &StaticRefineConfig) -> Result<Vec<(u32, Box7)>> {
    let fusion = cfg.fusion();
    let mut out = Vec::with_capacity(track.entries.len());
    let mut start = 0;
    for (i, entry) in track.entries.iter().enumerate() {
        let k = entry.frame_idx;
        let lo = k.saturating_sub(cfg.window);
        while track.entries[start].frame_idx < lo {
            start += 1;
        }
        let members: Vec<Box7> = track.entries[start..=i].iter().map(|e| e.bbox).collect();
        let mut fused = kbf_fuse_cluster(&members, &fusion)?;
        fused.score = fused.score.max(cfg.score_floor);
        fused.frame_idx = k;
        out.push((k, fused));
    }
    Ok(out)
}

/// Extend a static track's refined boxes to every frame of the sequence
/// before its first and after its last entry, with the boundary box's score
/// decayed by `decay` per frame of distance. Frames are `0..sequence_length`.
pub fn propagate_static(
    track: &Track,
    refined: &[(u32, Box7)],
    sequence_length: u32,
    cfg: &StaticRefineConfig,
) -> Vec<(u32, Box7)> {
    let frames: Vec<u32> = (0..sequence_length).collect();
    propagate_static_over(track, refined, &frames, cfg)
}

/// [`propagate_static`] over an explicit, increasing list of frame indices.
/// The decay exponent is the frame-index distance to the boundary.
pub fn propagate_static_over(
    track: &Track,
    refined: &[(u32, Box7)],
    frames: &[u32],
    cfg: &StaticRefineConfig,
) -> Vec<(u32, Box7)> {
    let (Some(&(first, head)), Some(&(last, tail))) = (refined.first(), refined.last()) else {
        return refined.to_vec();
    };
    if track.detection_count() <= cfg.min_track_detections {
        return refined.to_vec();
    }
    let copy = |src: Box7, frame: u32, m: u32| {
        let mut b = src;
        b.frame_idx = frame;
        b.score = src.score * cfg.decay.powi(m as i32);
        (frame, b)
    };
    let mut out: Vec<(u32, Box7)> = frames
        .iter()
        .filter(|&&f| f < first)
        .map(|&f| copy(head, f, first - f))
        .collect();
    out.extend_from_slice(refined);
    out.extend(
        frames
            .iter()
            .filter(|&&f| f > last)
            .map(|&f| copy(tail, f, f - last)),
    );
    out
}
