//! Multi-detector box fusion.
//!
//! Proposals from every detector variant on a frame are grouped by centroid
//! proximity and each group is collapsed into one box. KDE box fusion
//! ([`kbf`]) selects every parameter at the peak of a score-weighted density;
//! [`nms`], [`wbf_corners`] and [`wbf_params`] are the usual alternatives.

mod kdtree;

use std::cmp::Ordering;
use std::f64::consts::PI;

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

pub use kdtree::KdTree;

use crate::error::{Error, Result};
use crate::geometry::{bev_iou, normalize_heading, Box7, FUSED_DETECTOR_ID};
use crate::kde::{peak_sample, weighted_peak_stat, WeightedSamples};

/// All proposals of one frame in a common coordinate frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProposalSet {
    pub boxes: Vec<Box7>,
    /// Number of distinct detector variants that contributed.
    pub source_count: usize,
}

impl ProposalSet {
    pub fn new(boxes: Vec<Box7>, source_count: usize) -> Result<Self> {
        if let Some(first) = boxes.first() {
            if let Some(other) = boxes.iter().find(|b| b.frame_idx != first.frame_idx) {
                return Err(Error::Input(format!(
                    "proposal set mixes frames {} and {}",
                    first.frame_idx, other.frame_idx
                )));
            }
        }
        Ok(Self {
            boxes,
            source_count,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

/// Kernel bandwidths per fused quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bandwidths {
    /// Centre coordinates, metres.
    pub center: f64,
    /// Length, width and height, metres.
    pub dims: f64,
    /// Applied to `sin(heading)`.
    pub heading: f64,
    pub score: f64,
}

impl Default for Bandwidths {
    fn default() -> Self {
        Self {
            center: 1.0,
            dims: 0.1,
            heading: 0.1,
            score: 0.1,
        }
    }
}

impl Bandwidths {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("center", self.center),
            ("dims", self.dims),
            ("heading", self.heading),
            ("score", self.score),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("bandwidth {name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Proposals whose centroids lie within this distance of a seed join its cluster.
    pub match_radius: f64,
    /// Clusters with fewer members produce no box.
    pub min_cluster_size: usize,
    pub bandwidths: Bandwidths,
    /// Fuse each detector's test-time-augmentation variants first, then fuse
    /// the per-detector results, instead of one pooled pass.
    pub two_stage_tta: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            match_radius: 2.0,
            min_cluster_size: 4,
            bandwidths: Bandwidths::default(),
            two_stage_tta: false,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.match_radius > 0.0 && self.match_radius.is_finite()) {
            return Err(Error::Config("match_radius must be positive".into()));
        }
        if self.min_cluster_size < 1 {
            return Err(Error::Config("min_cluster_size must be at least 1".into()));
        }
        self.bandwidths.validate()
    }
}

/// Test-time augmentation applied to the point cloud before inference.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Tta {
    /// Mirror across the x-axis (y -> -y).
    pub flip_x: bool,
    /// Mirror across the y-axis (x -> -x).
    pub flip_y: bool,
    /// World rotation about z, radians.
    pub rot: f64,
}

impl Tta {
    pub const NONE: Tta = Tta {
        flip_x: false,
        flip_y: false,
        rot: 0.0,
    };

    pub fn is_identity(&self) -> bool {
        !self.flip_x && !self.flip_y && self.rot == 0.0
    }
}

fn rotate_z(b: &mut Box7, angle: f64) {
    let (s, c) = angle.sin_cos();
    let (x, y) = (b.cx, b.cy);
    b.cx = c * x - s * y;
    b.cy = s * x + c * y;
    b.heading = normalize_heading(b.heading + angle);
}

fn apply_flips(b: &mut Box7, tta: &Tta) {
    if tta.flip_x {
        b.cy = -b.cy;
        b.heading = normalize_heading(-b.heading);
    }
    if tta.flip_y {
        b.cx = -b.cx;
        b.heading = normalize_heading(PI - b.heading);
    }
}

/// Forward augmentation: flips, then rotation by `tta.rot`.
pub fn augment_box(b: &Box7, tta: &Tta) -> Box7 {
    let mut out = *b;
    apply_flips(&mut out, tta);
    if tta.rot != 0.0 {
        rotate_z(&mut out, tta.rot);
    }
    out
}

/// Undo [`augment_box`]: rotate by `-tta.rot`, then un-flip.
pub fn deaugment_box(b: &Box7, tta: &Tta) -> Box7 {
    let mut out = *b;
    if tta.rot != 0.0 {
        rotate_z(&mut out, -tta.rot);
    }
    apply_flips(&mut out, tta);
    out
}

/// Content-only total order: score descending, then geometry and provenance.
/// Makes every downstream choice independent of input order.
fn canonical_cmp(a: &Box7, b: &Box7) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| {
            a.params()
                .iter()
                .zip(b.params().iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
        .then(a.detector_id.cmp(&b.detector_id))
        .then(a.class_id.cmp(&b.class_id))
}

fn canonical_order(boxes: &[Box7]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| canonical_cmp(&boxes[i], &boxes[j]).then(i.cmp(&j)));
    order
}

/// Greedy radius clustering seeded by the highest-scoring unassigned box.
///
/// Each returned cluster lists indices into `props.boxes`, seed first, the
/// rest in canonical order. Boxes claimed by an undersized cluster are not
/// offered to later seeds.
pub fn cluster_proposals(props: &ProposalSet, cfg: &FusionConfig) -> Vec<Vec<usize>> {
    let boxes = &props.boxes;
    if boxes.is_empty() {
        return Vec::new();
    }
    let tree = KdTree::build(boxes.iter().map(|b| [b.cx, b.cy, b.cz]).collect());
    let order = canonical_order(boxes);
    let mut rank = vec![0usize; boxes.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }

    let mut claimed = vec![false; boxes.len()];
    let mut clusters = Vec::new();
    for &seed in &order {
        if claimed[seed] {
            continue;
        }
        let s = &boxes[seed];
        let mut members: Vec<usize> = tree
            .within_radius(&[s.cx, s.cy, s.cz], cfg.match_radius)
            .into_iter()
            .filter(|&i| !claimed[i])
            .collect();
        members.sort_by_key(|&i| rank[i]);
        for &i in &members {
            claimed[i] = true;
        }
        if members.len() >= cfg.min_cluster_size {
            clusters.push(members);
        }
    }
    clusters
}

fn fusion_weights(cluster: &[Box7]) -> Vec<f64> {
    if cluster.iter().any(|b| b.score > 0.0) {
        cluster.iter().map(|b| b.score.max(0.0)).collect()
    } else {
        vec![1.0; cluster.len()]
    }
}

fn top_scoring(cluster: &[Box7]) -> &Box7 {
    cluster
        .iter()
        .min_by(|a, b| canonical_cmp(a, b))
        .expect("non-empty cluster")
}

/// KDE box fusion of one cluster.
///
/// Centre axes, dimensions and score are each set to the score-weighted KDE
/// peak over the members. The heading is the original heading of the member
/// whose `sin(heading)` has the highest density.
pub fn kbf_fuse_cluster(cluster: &[Box7], cfg: &FusionConfig) -> Result<Box7> {
    if cluster.is_empty() {
        return Err(Error::EmptyCluster);
    }
    let mut members = cluster.to_vec();
    members.sort_by(canonical_cmp);
    let weights = fusion_weights(&members);
    let bw = &cfg.bandwidths;

    let mut values = vec![0.0; members.len()];
    let mut peak_of = |extract: fn(&Box7) -> f64, bandwidth: f64| -> Result<f64> {
        for (v, b) in values.iter_mut().zip(&members) {
            *v = extract(b);
        }
        Ok(weighted_peak_stat(&WeightedSamples::new(
            &values, &weights, bandwidth,
        )?))
    };

    let cx = peak_of(|b| b.cx, bw.center)?;
    let cy = peak_of(|b| b.cy, bw.center)?;
    let cz = peak_of(|b| b.cz, bw.center)?;
    let l = peak_of(|b| b.l, bw.dims)?;
    let w = peak_of(|b| b.w, bw.dims)?;
    let h = peak_of(|b| b.h, bw.dims)?;
    let score = peak_of(|b| b.score, bw.score)?;

    let sines: Vec<f64> = members.iter().map(|b| b.heading.sin()).collect();
    let heading_idx = peak_sample(&WeightedSamples::new(&sines, &weights, bw.heading)?).index;

    let lead = top_scoring(&members);
    Ok(Box7 {
        cx,
        cy,
        cz,
        l,
        w,
        h,
        heading: members[heading_idx].heading,
        score,
        class_id: lead.class_id,
        detector_id: FUSED_DETECTOR_ID,
        frame_idx: lead.frame_idx,
    })
}

fn sort_by_score(boxes: &mut [Box7]) {
    boxes.sort_by(canonical_cmp);
}

/// Cluster the proposals and fuse every surviving cluster with KBF.
/// Output is sorted by descending score.
pub fn kbf(props: &ProposalSet, cfg: &FusionConfig) -> Vec<Box7> {
    fuse_clusters(props, cfg, |members| kbf_fuse_cluster(members, cfg))
}

fn fuse_clusters<F>(props: &ProposalSet, cfg: &FusionConfig, fuse: F) -> Vec<Box7>
where
    F: Fn(&[Box7]) -> Result<Box7>,
{
    let mut out: Vec<Box7> = cluster_proposals(props, cfg)
        .into_iter()
        .map(|idx| {
            let members: Vec<Box7> = idx.iter().map(|&i| props.boxes[i]).collect();
            fuse(&members).expect("clusters are non-empty")
        })
        .collect();
    sort_by_score(&mut out);
    out
}

/// Indices kept by greedy BEV-IoU non-maximum suppression, in descending
/// score order. Equal scores keep input order.
pub fn nms_indices(boxes: &[Box7], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| boxes[j].score.total_cmp(&boxes[i].score).then(i.cmp(&j)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let suppressed = kept
            .iter()
            .any(|&k| bev_iou(&boxes[k], &boxes[i]) > iou_threshold);
        if !suppressed {
            kept.push(i);
        }
    }
    kept
}

/// Greedy non-maximum suppression by BEV IoU.
pub fn nms(boxes: &[Box7], iou_threshold: f64) -> Vec<Box7> {
    nms_indices(boxes, iou_threshold)
        .into_iter()
        .map(|i| boxes[i])
        .collect()
}

/// Weighted circular mean of headings.
pub fn circular_mean(headings: &[f64], weights: &[f64]) -> f64 {
    let (s, c) = headings
        .iter()
        .zip(weights)
        .fold((0.0, 0.0), |(s, c), (h, w)| {
            (s + w * h.sin(), c + w * h.cos())
        });
    normalize_heading(s.atan2(c))
}

fn weighted_mean(values: impl Iterator<Item = f64>, weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    values.zip(weights).map(|(v, w)| v * w).sum::<f64>() / total
}

/// Smallest dimension a corner-averaged box may collapse to.
const MIN_FUSED_DIM: f64 = 1e-6;

/// Weighted box fusion over opposite 3D corners.
pub fn wbf_corners(cluster: &[Box7]) -> Result<Box7> {
    if cluster.is_empty() {
        return Err(Error::EmptyCluster);
    }
    let weights = fusion_weights(cluster);
    let total: f64 = weights.iter().sum();
    let (mut upper, mut lower) = (Vector3::zeros(), Vector3::zeros());
    for (b, w) in cluster.iter().zip(&weights) {
        let (u, l) = b.opposite_corners();
        upper += u * *w;
        lower += l * *w;
    }
    upper /= total;
    lower /= total;

    let headings: Vec<f64> = cluster.iter().map(|b| b.heading).collect();
    let heading = circular_mean(&headings, &weights);
    let local = Rotation3::from_axis_angle(&Vector3::z_axis(), -heading) * (upper - lower);
    let center = (upper + lower) * 0.5;
    let lead = top_scoring(cluster);
    Ok(Box7 {
        cx: center.x,
        cy: center.y,
        cz: center.z,
        l: local.x.abs().max(MIN_FUSED_DIM),
        w: local.y.abs().max(MIN_FUSED_DIM),
        h: local.z.abs().max(MIN_FUSED_DIM),
        heading,
        score: cluster.iter().map(|b| b.score).sum::<f64>() / cluster.len() as f64,
        class_id: lead.class_id,
        detector_id: FUSED_DETECTOR_ID,
        frame_idx: lead.frame_idx,
    })
}

/// Weighted box fusion by averaging box parameters.
pub fn wbf_params(cluster: &[Box7]) -> Result<Box7> {
    if cluster.is_empty() {
        return Err(Error::EmptyCluster);
    }
    let weights = fusion_weights(cluster);
    let mean = |f: fn(&Box7) -> f64| weighted_mean(cluster.iter().map(f), &weights);
    let headings: Vec<f64> = cluster.iter().map(|b| b.heading).collect();
    let lead = top_scoring(cluster);
    Ok(Box7 {
        cx: mean(|b| b.cx),
        cy: mean(|b| b.cy),
        cz: mean(|b| b.cz),
        l: mean(|b| b.l),
        w: mean(|b| b.w),
        h: mean(|b| b.h),
        heading: circular_mean(&headings, &weights),
        score: mean(|b| b.score),
        class_id: lead.class_id,
        detector_id: FUSED_DETECTOR_ID,
        frame_idx: lead.frame_idx,
    })
}

/// Fusion strategies compared by the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMethod {
    Nms,
    WbfCorners,
    WbfParams,
    Kbf,
}

impl FusionMethod {
    pub const ALL: [FusionMethod; 4] = [
        FusionMethod::Nms,
        FusionMethod::WbfCorners,
        FusionMethod::WbfParams,
        FusionMethod::Kbf,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            FusionMethod::Nms => "NMS",
            FusionMethod::WbfCorners => "WBF-C",
            FusionMethod::WbfParams => "WBF-P",
            FusionMethod::Kbf => "KBF",
        }
    }
}

/// Fuse one frame of proposals with `method`. All methods share the same
/// clustering so they see identical candidate groups; NMS keeps the
/// survivors of BEV-IoU suppression at `nms_iou` within each cluster.
pub fn fuse_with(
    props: &ProposalSet,
    cfg: &FusionConfig,
    method: FusionMethod,
    nms_iou: f64,
) -> Vec<Box7> {
    match method {
        FusionMethod::Kbf => kbf(props, cfg),
        FusionMethod::WbfParams => fuse_clusters(props, cfg, wbf_params),
        FusionMethod::WbfCorners => fuse_clusters(props, cfg, wbf_corners),
        FusionMethod::Nms => {
            let mut out: Vec<Box7> = cluster_proposals(props, cfg)
                .into_iter()
                .flat_map(|idx| {
                    let members: Vec<Box7> = idx.iter().map(|&i| props.boxes[i]).collect();
                    nms(&members, nms_iou)
                })
                .collect();
            sort_by_score(&mut out);
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn car(x: f64, y: f64) -> Box7 {
        Box7::new([x, y, 0.8], [4.5, 1.9, 1.6], 0.0).with_score(0.8)
    }

    fn set(boxes: Vec<Box7>) -> ProposalSet {
        ProposalSet::new(boxes, 4).unwrap()
    }

    #[test]
    fn deaugment_identity_and_reflection() {
        let b = Box7::new([1.0, 2.0, 0.0], [4.0, 2.0, 1.5], 0.3);
        assert_eq!(deaugment_box(&b, &Tta::NONE), b);

        let flip = Tta {
            flip_x: true,
            ..Tta::NONE
        };
        let out = deaugment_box(&b, &flip);
        assert_eq!((out.cx, out.cy, out.cz), (1.0, -2.0, 0.0));
        assert_abs_diff_eq!(out.heading, -0.3, epsilon = 1e-12);
    }

    #[test]
    fn deaugment_inverse_quarter_turn() {
        let b = Box7::new([0.0, 1.0, 0.0], [4.0, 2.0, 1.5], FRAC_PI_2);
        let tta = Tta {
            rot: FRAC_PI_2,
            ..Tta::NONE
        };
        let out = deaugment_box(&b, &tta);
        assert_abs_diff_eq!(out.cx, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.cy, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.heading, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn flip_y_reflects_heading_about_vertical() {
        let b = Box7::new([3.0, 1.0, 0.0], [4.0, 2.0, 1.5], 0.4);
        let tta = Tta {
            flip_y: true,
            ..Tta::NONE
        };
        let out = augment_box(&b, &tta);
        assert_eq!(out.cx, -3.0);
        assert_abs_diff_eq!(out.heading, PI - 0.4, epsilon = 1e-12);
    }

    #[test]
    fn clustering_cases() {
        let cfg = FusionConfig::default();
        let five: Vec<Box7> = (0..5).map(|i| car(0.1 * i as f64, 0.0)).collect();
        let c = cluster_proposals(&set(five), &cfg);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].len(), 5);

        let three: Vec<Box7> = (0..3).map(|_| car(0.0, 0.0)).collect();
        assert!(cluster_proposals(&set(three), &cfg).is_empty());

        let mut two_groups: Vec<Box7> = (0..6).map(|i| car(0.05 * i as f64, 0.0)).collect();
        two_groups.extend((0..6).map(|i| car(10.0 + 0.05 * i as f64, 0.0)));
        let c = cluster_proposals(&set(two_groups), &cfg);
        assert_eq!(c.len(), 2);
        assert!(c.iter().all(|m| m.len() == 6));
    }

    #[test]
    fn greedy_seed_bounds_chains() {
        // A chain of boxes 1.5 m apart would merge under connected components.
        let chain: Vec<Box7> = (0..8)
            .map(|i| car(1.5 * i as f64, 0.0).with_score(0.9 - 0.01 * i as f64))
            .collect();
        let cfg = FusionConfig {
            min_cluster_size: 1,
            ..FusionConfig::default()
        };
        let clusters = cluster_proposals(&set(chain.clone()), &cfg);
        for members in &clusters {
            let seed = &chain[members[0]];
            for &i in members {
                assert!((chain[i].cx - seed.cx).abs() <= 2.0);
            }
        }
        let total: usize = clusters.iter().map(Vec::len).sum();
        assert_eq!(total, chain.len());
    }

    #[test]
    fn kbf_identical_boxes_pass_through() {
        let b = car(3.0, 4.0).with_score(0.7);
        let fused = kbf_fuse_cluster(&[b; 5], &FusionConfig::default()).unwrap();
        assert_eq!(fused.params(), b.params());
        assert_eq!(fused.score, b.score);
        assert_eq!(fused.detector_id, FUSED_DETECTOR_ID);
    }

    #[test]
    fn kbf_heading_selects_majority() {
        let members: Vec<Box7> = [0.1, 0.1, 0.1, 2.0]
            .iter()
            .map(|&h| Box7::new([0.0; 3], [4.0, 2.0, 1.5], h).with_score(0.5))
            .collect();
        let fused = kbf_fuse_cluster(&members, &FusionConfig::default()).unwrap();
        assert_eq!(fused.heading, 0.1);
    }

    #[test]
    fn kbf_centre_selects_dense_high_weight_member() {
        let members: Vec<Box7> = [(0.0, 0.9), (0.05, 0.9), (0.1, 0.9), (3.0, 0.2)]
            .iter()
            .map(|&(x, s)| Box7::new([x, 0.0, 0.0], [4.0, 2.0, 1.5], 0.0).with_score(s))
            .collect();
        let fused = kbf_fuse_cluster(&members, &FusionConfig::default()).unwrap();
        assert_eq!(fused.cx, 0.05);
    }

    #[test]
    fn kbf_empty_cluster_is_an_error() {
        assert!(matches!(
            kbf_fuse_cluster(&[], &FusionConfig::default()),
            Err(Error::EmptyCluster)
        ));
        assert!(wbf_corners(&[]).is_err());
        assert!(wbf_params(&[]).is_err());
    }

    #[test]
    fn kbf_frames() {
        let cfg = FusionConfig::default();
        assert!(kbf(&ProposalSet::default(), &cfg).is_empty());
        let mut boxes: Vec<Box7> = (0..6).map(|i| car(0.05 * i as f64, 0.0)).collect();
        boxes.extend((0..6).map(|i| car(10.0, 0.05 * i as f64).with_score(0.6)));
        let out = kbf(&set(boxes), &cfg);
        assert_eq!(out.len(), 2);
        assert!(out[0].score >= out[1].score);
    }

    #[test]
    fn nms_cases() {
        let a = car(0.0, 0.0).with_score(0.9);
        let b = car(0.1, 0.0).with_score(0.8);
        assert!(bev_iou(&a, &b) > 0.85);
        assert_eq!(nms(&[b, a], 0.1), vec![a]);
        let far = car(20.0, 0.0).with_score(0.3);
        assert_eq!(nms(&[far, a], 0.1), vec![a, far]);
    }

    #[test]
    fn wbf_corner_averages() {
        let cube = |x: f64, s: f64| Box7::new([x, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0).with_score(s);
        let fused = wbf_corners(&[cube(0.0, 0.5), cube(2.0, 0.5)]).unwrap();
        assert_abs_diff_eq!(fused.cx, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fused.l, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fused.w, 1.0, epsilon = 1e-12);

        let fused = wbf_corners(&[cube(0.0, 0.9), cube(2.0, 0.1)]).unwrap();
        assert_abs_diff_eq!(fused.cx, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(fused.score, 0.5, epsilon = 1e-12);

        let b = car(1.0, 2.0);
        let same = wbf_corners(&[b, b, b]).unwrap();
        for (x, y) in same.params().iter().zip(b.params()) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn wbf_corner_flip_shrinks_box() {
        let b = car(0.0, 0.0);
        let mut flipped = b;
        flipped.heading = PI;
        let fused = wbf_corners(&[b, b, b, flipped]).unwrap();
        assert!(fused.l < 0.6 * b.l);
    }

    #[test]
    fn wbf_params_cases() {
        let b = car(1.0, 2.0);
        let same = wbf_params(&[b, b]).unwrap();
        for (x, y) in same.params().iter().zip(b.params()) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-12);
        }

        let fused =
            wbf_params(&[car(0.0, 0.0).with_score(0.9), car(2.0, 0.0).with_score(0.1)]).unwrap();
        assert_abs_diff_eq!(fused.cx, 0.2, epsilon = 1e-12);

        let wrap = |h: f64| Box7::new([0.0; 3], [4.0, 2.0, 1.5], h).with_score(0.5);
        let fused = wbf_params(&[wrap(-3.1), wrap(3.1)]).unwrap();
        assert_abs_diff_eq!(fused.heading.abs(), PI, epsilon = 1e-12);
    }

    #[test]
    fn mixed_frames_rejected() {
        assert!(ProposalSet::new(vec![car(0.0, 0.0), car(1.0, 0.0).with_frame(2)], 1).is_err());
    }
}
