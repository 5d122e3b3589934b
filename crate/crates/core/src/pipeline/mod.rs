//! End-to-end pseudo-label generation for one sequence.
//!
//! Stages, each exposed separately: [`fuse_sequence`] (ego frame),
//! [`track_streams`] (world frame), [`static_boxes`] (world frame) and
//! [`assemble_frame`] (ego frame). [`run_pipeline`] chains them.

mod config;
pub mod io;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::PipelineConfig;

use crate::error::{Error, Result};
use crate::fusion::{deaugment_box, fuse_with, FusionConfig, FusionMethod, ProposalSet, Tta};
use crate::geometry::{points_in_box, transform_box, Box7, EgoPose, FUSED_DETECTOR_ID};
use crate::staticrefine::{
    classify_tracks, correct_16f_motion, propagate_static_over, refine_static_boxes,
};
use crate::tracking::{track_sequence, FrameBoxes, MotionState, Track};

/// Which detection stream a proposal belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stream {
    #[serde(rename = "1f")]
    OneFrame,
    #[serde(rename = "16f")]
    SixteenFrame,
}

/// A raw detector output together with the augmentation it was predicted under.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub bbox: Box7,
    pub tta: Tta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameInput {
    pub frame_idx: u32,
    pub pose: EgoPose,
    pub proposals_1f: Vec<Proposal>,
    pub proposals_16f: Vec<Proposal>,
    /// Lidar points in the ego frame, if available.
    pub points: Option<Vec<[f64; 3]>>,
}

impl FrameInput {
    pub fn new(frame_idx: u32, pose: EgoPose) -> Self {
        Self {
            frame_idx,
            pose,
            proposals_1f: Vec::new(),
            proposals_16f: Vec::new(),
            points: None,
        }
    }

    pub fn proposals(&self, stream: Stream) -> &[Proposal] {
        match stream {
            Stream::OneFrame => &self.proposals_1f,
            Stream::SixteenFrame => &self.proposals_16f,
        }
    }
}

/// Detections, poses and optional points of one sequence. Box
/// `detector_id`s index into `detectors`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceInput {
    pub sequence_id: String,
    pub detectors: Vec<String>,
    pub frames: Vec<FrameInput>,
}

impl SequenceInput {
    pub fn validate(&self) -> Result<()> {
        let mut previous: Option<u32> = None;
        for f in &self.frames {
            if let Some(p) = previous {
                if f.frame_idx <= p {
                    return Err(Error::FrameOrder {
                        previous: p,
                        found: f.frame_idx,
                    });
                }
            }
            previous = Some(f.frame_idx);
            if f.pose.frame_idx != f.frame_idx {
                return Err(Error::MissingPose(f.frame_idx));
            }
            for p in f.proposals_1f.iter().chain(&f.proposals_16f) {
                p.bbox.validate()?;
                if p.bbox.frame_idx != f.frame_idx {
                    return Err(Error::Input(format!(
                        "box tagged frame {} stored under frame {}",
                        p.bbox.frame_idx, f.frame_idx
                    )));
                }
                if p.bbox.detector_id as usize >= self.detectors.len() {
                    return Err(Error::Input(format!(
                        "unknown detector id {}",
                        p.bbox.detector_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn frame_indices(&self) -> Vec<u32> {
        self.frames.iter().map(|f| f.frame_idx).collect()
    }
}

/// Source of a final pseudo-label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "fused-1f")]
    Fused1f,
    #[serde(rename = "tracked-1f")]
    Tracked1f,
    #[serde(rename = "static-refined")]
    StaticRefined,
    #[serde(rename = "static-propagated")]
    StaticPropagated,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Fused1f => "fused-1f",
            Provenance::Tracked1f => "tracked-1f",
            Provenance::StaticRefined => "static-refined",
            Provenance::StaticPropagated => "static-propagated",
        }
    }

    pub fn is_static(&self) -> bool {
        matches!(
            self,
            Provenance::StaticRefined | Provenance::StaticPropagated
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoLabel {
    pub bbox: Box7,
    pub provenance: Provenance,
}

/// Final labels in ego coordinates, ordered by frame and, within a frame,
/// by descending score.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    pub config_hash: String,
    pub labels: Vec<PseudoLabel>,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn by_frame(&self) -> BTreeMap<u32, Vec<PseudoLabel>> {
        let mut out: BTreeMap<u32, Vec<PseudoLabel>> = BTreeMap::new();
        for l in &self.labels {
            out.entry(l.bbox.frame_idx).or_default().push(*l);
        }
        out
    }

    /// Boxes of `frame`.
    pub fn boxes(&self, frame: u32) -> Vec<Box7> {
        self.labels
            .iter()
            .filter(|l| l.bbox.frame_idx == frame)
            .map(|l| l.bbox)
            .collect()
    }
}

/// De-augment and fuse one frame's proposals with `method`.
///
/// With `two_stage_tta` each detector's augmentation variants are fused on
/// their own first (every cluster kept), then the per-detector boxes are
/// fused together; otherwise all proposals go through one pass.
pub fn fuse_proposals(
    proposals: &[Proposal],
    frame_idx: u32,
    cfg: &FusionConfig,
    method: FusionMethod,
    nms_iou: f64,
) -> Result<Vec<Box7>> {
    let restored: Vec<Box7> = proposals
        .iter()
        .map(|p| deaugment_box(&p.bbox, &p.tta).with_frame(frame_idx))
        .collect();
    let sources = restored
        .iter()
        .map(|b| b.detector_id)
        .collect::<BTreeSet<_>>()
        .len();
    if !cfg.two_stage_tta {
        let set = ProposalSet::new(restored, sources)?;
        return Ok(fuse_with(&set, cfg, method, nms_iou));
    }
    let mut per_detector: BTreeMap<u32, Vec<Box7>> = BTreeMap::new();
    for b in restored {
        per_detector.entry(b.detector_id).or_default().push(b);
    }
    let stage1 = FusionConfig {
        min_cluster_size: 1,
        ..*cfg
    };
    let mut pooled = Vec::new();
    for (det, boxes) in per_detector {
        let set = ProposalSet::new(boxes, 1)?;
        pooled.extend(
            fuse_with(&set, &stage1, method, nms_iou)
                .into_iter()
                .map(|b| b.with_detector(det)),
        );
    }
    let set = ProposalSet::new(pooled, sources)?;
    Ok(fuse_with(&set, cfg, method, nms_iou))
}

/// Fused boxes of one frame, in the ego frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedFrame {
    pub frame_idx: u32,
    pub boxes_1f: Vec<Box7>,
    pub boxes_16f: Vec<Box7>,
}

/// Stage 1: KBF on both streams of every frame, frames in parallel.
pub fn fuse_sequence(input: &SequenceInput, cfg: &PipelineConfig) -> Result<Vec<FusedFrame>> {
    input
        .frames
        .par_iter()
        .map(|f| {
            let fuse = |props: &[Proposal]| {
                fuse_proposals(
                    props,
                    f.frame_idx,
                    &cfg.fusion,
                    FusionMethod::Kbf,
                    cfg.final_nms_iou,
                )
            };
            Ok(FusedFrame {
                frame_idx: f.frame_idx,
                boxes_1f: fuse(&f.proposals_1f)?,
                boxes_16f: if cfg.use_16f {
                    fuse(&f.proposals_16f)?
                } else {
                    Vec::new()
                },
            })
        })
        .collect()
}

/// Tracks of both streams in world coordinates with motion labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedSequence {
    pub tracks_1f: Vec<Track>,
    pub tracks_16f: Vec<Track>,
}

/// Stages 2 to 4: move fused boxes to world, track both streams, classify
/// motion and correct the 16-frame labels with 1-frame dynamic trajectories.
pub fn track_streams(
    input: &SequenceInput,
    fused: &[FusedFrame],
    cfg: &PipelineConfig,
) -> Result<TrackedSequence> {
    let to_world = |pick: fn(&FusedFrame) -> &Vec<Box7>| -> Vec<FrameBoxes> {
        input
            .frames
            .iter()
            .zip(fused)
            .map(|(f, ff)| FrameBoxes {
                frame_idx: f.frame_idx,
                boxes: pick(ff).iter().map(|b| transform_box(b, &f.pose)).collect(),
            })
            .collect()
    };
    let (tracks_1f, tracks_16f) = rayon::join(
        || track_sequence(&to_world(|f| &f.boxes_1f), &cfg.tracker_1f),
        || {
            if cfg.use_16f {
                track_sequence(&to_world(|f| &f.boxes_16f), &cfg.tracker_16f)
            } else {
                Ok(Vec::new())
            }
        },
    );
    let mut tracks_1f = tracks_1f?;
    let mut tracks_16f = tracks_16f?;
    classify_tracks(&mut tracks_1f, &cfg.motion)?;
    classify_tracks(&mut tracks_16f, &cfg.motion)?;
    let tracks_16f = correct_16f_motion(&tracks_1f, tracks_16f, &cfg.motion);
    Ok(TrackedSequence {
        tracks_1f,
        tracks_16f,
    })
}

/// Stage 5: refined and propagated boxes of every static 16-frame track,
/// in world coordinates, restricted to `frames`.
pub fn static_boxes(
    tracks_16f: &[Track],
    frames: &[u32],
    cfg: &PipelineConfig,
) -> Result<Vec<PseudoLabel>> {
    let per_track: Vec<Vec<PseudoLabel>> = tracks_16f
        .par_iter()
        .filter(|t| t.motion_state == MotionState::Static)
        .map(|t| {
            let refined = refine_static_boxes(t, &cfg.static_refine)?;
            let (first, last) = (refined[0].0, refined[refined.len() - 1].0);
            Ok(
                propagate_static_over(t, &refined, frames, &cfg.static_refine)
                    .into_iter()
                    .map(|(k, bbox)| PseudoLabel {
                        bbox,
                        provenance: if k < first || k > last {
                            Provenance::StaticPropagated
                        } else {
                            Provenance::StaticRefined
                        },
                    })
                    .collect(),
            )
        })
        .collect::<Result<_>>()?;
    Ok(per_track.into_iter().flatten().collect())
}

/// Merge one frame's candidates into final labels. Candidates are taken in
/// the order given, then suppressed by BEV NMS (descending score, earlier
/// candidate wins ties), thresholded on score, and filtered on point count
/// when points are available.
pub fn assemble_candidates(
    candidates: &[PseudoLabel],
    points: Option<&[[f64; 3]]>,
    cfg: &PipelineConfig,
) -> Vec<PseudoLabel> {
    let boxes: Vec<Box7> = candidates.iter().map(|c| c.bbox).collect();
    crate::fusion::nms_indices(&boxes, cfg.final_nms_iou)
        .into_iter()
        .map(|i| candidates[i])
        .filter(|c| c.bbox.score >= cfg.final_score_threshold)
        .filter(|c| match points {
            Some(pts) => points_in_box(&c.bbox, pts) >= cfg.min_points_in_box,
            None => true,
        })
        .collect()
}

/// Final labels of one frame from 1-frame fused boxes, 1-frame tracked boxes
/// and static boxes, all in the same coordinate frame.
pub fn assemble_frame(
    fused_1f: &[Box7],
    tracked_1f: &[Box7],
    static_boxes: &[Box7],
    points: Option<&[[f64; 3]]>,
    cfg: &PipelineConfig,
) -> Vec<Box7> {
    let tag = |boxes: &[Box7], provenance| {
        boxes
            .iter()
            .map(move |&bbox| PseudoLabel { bbox, provenance })
            .collect::<Vec<_>>()
    };
    let mut candidates = tag(fused_1f, Provenance::Fused1f);
    candidates.extend(tag(tracked_1f, Provenance::Tracked1f));
    candidates.extend(tag(static_boxes, Provenance::StaticRefined));
    assemble_candidates(&candidates, points, cfg)
        .into_iter()
        .map(|c| c.bbox)
        .collect()
}

/// Run every stage on one sequence.
pub fn run_pipeline(input: &SequenceInput, cfg: &PipelineConfig) -> Result<PseudoLabelSet> {
    cfg.validate()?;
    input.validate()?;
    let fused = fuse_sequence(input, cfg)?;
    let tracked = track_streams(input, &fused, cfg)?;
    let frames = input.frame_indices();
    let statics = if cfg.use_16f {
        static_boxes(&tracked.tracks_16f, &frames, cfg)?
    } else {
        Vec::new()
    };

    let mut tracked_by_frame: BTreeMap<u32, Vec<Box7>> = BTreeMap::new();
    for t in &tracked.tracks_1f {
        for e in &t.entries {
            tracked_by_frame
                .entry(e.frame_idx)
                .or_default()
                .push(e.bbox);
        }
    }
    let mut static_by_frame: BTreeMap<u32, Vec<PseudoLabel>> = BTreeMap::new();
    for s in statics {
        static_by_frame.entry(s.bbox.frame_idx).or_default().push(s);
    }
    if input.frames.iter().any(|f| f.points.is_none()) {
        log::info!(
            "sequence {}: no points for some frames, point-count filter skipped there",
            input.sequence_id
        );
    }

    let per_frame: Vec<Vec<PseudoLabel>> = input
        .frames
        .par_iter()
        .zip(&fused)
        .map(|(f, ff)| {
            let to_ego = f.pose.inverse();
            let mut candidates: Vec<PseudoLabel> = ff
                .boxes_1f
                .iter()
                .map(|&bbox| PseudoLabel {
                    bbox,
                    provenance: Provenance::Fused1f,
                })
                .collect();
            if let Some(boxes) = tracked_by_frame.get(&f.frame_idx) {
                candidates.extend(boxes.iter().map(|b| PseudoLabel {
                    bbox: transform_box(b, &to_ego),
                    provenance: Provenance::Tracked1f,
                }));
            }
            if let Some(labels) = static_by_frame.get(&f.frame_idx) {
                candidates.extend(labels.iter().map(|l| PseudoLabel {
                    bbox: transform_box(&l.bbox, &to_ego),
                    provenance: l.provenance,
                }));
            }
            assemble_candidates(&candidates, f.points.as_deref(), cfg)
                .into_iter()
                .map(|mut l| {
                    l.bbox.frame_idx = f.frame_idx;
                    l.bbox.detector_id = FUSED_DETECTOR_ID;
                    l
                })
                .collect()
        })
        .collect();

    Ok(PseudoLabelSet {
        config_hash: cfg.hash(),
        labels: per_frame.into_iter().flatten().collect(),
    })
}
