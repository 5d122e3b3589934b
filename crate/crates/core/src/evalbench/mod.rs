//! Average-precision evaluation, a synthetic multi-detector scene generator,
//! and the fusion benchmark built on both.

pub mod bench;
mod report;
pub mod synth;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use report::{benchmark_report, Report};

use crate::error::{Error, Result};
use crate::geometry::{bev_iou, iou_3d, Box7};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IouMode {
    #[serde(rename = "bev")]
    Bev,
    #[serde(rename = "3d")]
    ThreeD,
}

impl IouMode {
    pub fn label(&self) -> &'static str {
        match self {
            IouMode::Bev => "BEV",
            IouMode::ThreeD => "3D",
        }
    }

    pub fn iou(&self, a: &Box7, b: &Box7) -> f64 {
        match self {
            IouMode::Bev => bev_iou(a, b),
            IouMode::ThreeD => iou_3d(a, b),
        }
    }
}

/// Half-open range interval `[lo, hi)` in metres from the ego origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeBin {
    pub lo: f64,
    /// `None` means unbounded.
    pub hi: Option<f64>,
}

impl RangeBin {
    pub fn contains(&self, range: f64) -> bool {
        range >= self.lo && self.hi.is_none_or(|h| range < h)
    }

    pub fn label(&self) -> String {
        match self.hi {
            Some(h) => format!("[{},{})", self.lo, h),
            None => format!("[{},inf)", self.lo),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub modes: Vec<IouMode>,
    pub recall_positions: usize,
    pub range_bins: Vec<RangeBin>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: vec![0.7, 0.5],
            modes: vec![IouMode::Bev, IouMode::ThreeD],
            recall_positions: 40,
            range_bins: vec![
                RangeBin {
                    lo: 0.0,
                    hi: Some(30.0),
                },
                RangeBin {
                    lo: 30.0,
                    hi: Some(50.0),
                },
                RangeBin { lo: 50.0, hi: None },
            ],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iou_thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err(Error::Config("IoU thresholds must lie in (0, 1]".into()));
        }
        if self.recall_positions == 0 {
            return Err(Error::Config("recall_positions must be positive".into()));
        }
        for (i, b) in self.range_bins.iter().enumerate() {
            if !(b.lo >= 0.0 && b.hi.is_none_or(|h| h > b.lo)) {
                return Err(Error::Config(format!("range bin {} is empty", b.label())));
            }
            if let Some(next) = self.range_bins.get(i + 1) {
                if b.hi.is_none_or(|h| h > next.lo) {
                    return Err(Error::Config(
                        "range bins must be ordered and disjoint".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// AP for one threshold, mode and (optional) range bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApEntry {
    pub iou_threshold: f64,
    pub mode: IouMode,
    /// `None` for the whole range.
    pub range: Option<RangeBin>,
    pub ap: f64,
    pub num_gt: usize,
}

impl ApEntry {
    pub fn column(&self) -> String {
        let base = format!("AP_{}@{}", self.mode.label(), self.iou_threshold);
        match &self.range {
            Some(r) => format!("{base} {}", r.label()),
            None => base,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ApTable {
    pub entries: Vec<ApEntry>,
}

impl ApTable {
    /// Overall AP for a threshold and mode.
    pub fn ap(&self, iou_threshold: f64, mode: IouMode) -> Option<f64> {
        self.find(iou_threshold, mode, None)
    }

    /// AP restricted to the range bin starting at `lo`.
    pub fn ap_in_bin(&self, iou_threshold: f64, mode: IouMode, lo: f64) -> Option<f64> {
        self.find(iou_threshold, mode, Some(lo))
    }

    fn find(&self, t: f64, mode: IouMode, lo: Option<f64>) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.iou_threshold == t && e.mode == mode && e.range.map(|r| r.lo) == lo)
            .map(|e| e.ap)
    }
}

/// Per-frame greedy matching. Returns `(score, is_true_positive)` for every
/// prediction of the frame.
fn match_frame(preds: &[Box7], gts: &[Box7], threshold: f64, mode: IouMode) -> Vec<(f64, bool)> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&i, &j| preds[j].score.total_cmp(&preds[i].score).then(i.cmp(&j)));
    let mut taken = vec![false; gts.len()];
    order
        .into_iter()
        .map(|i| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let iou = mode.iou(&preds[i], gt);
                if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
            }
            (preds[i].score, best.is_some())
        })
        .collect()
}

/// Interpolated-precision AP from scored detections pooled over frames.
///
/// Detections are ranked by descending score (ties keep their pooled order).
/// Precision at recall `r` is the best precision at any recall `>= r`; AP is
/// its mean over `r = 1/n, 2/n, ..., 1`. With no ground truth AP is 0.
pub fn ap_from_matches(
    mut scored: Vec<(f64, bool)>,
    num_gt: usize,
    recall_positions: usize,
) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    // Stable sort so equal scores keep frame order.
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut curve: Vec<(f64, f64)> = Vec::with_capacity(scored.len());
    let mut tp = 0usize;
    for (k, (_, is_tp)) in scored.iter().enumerate() {
        if *is_tp {
            tp += 1;
        }
        curve.push((tp as f64 / num_gt as f64, tp as f64 / (k + 1) as f64));
    }
    // Suffix maximum of precision.
    let mut best = vec![0.0f64; curve.len() + 1];
    for k in (0..curve.len()).rev() {
        best[k] = best[k + 1].max(curve[k].1);
    }
    let mut total = 0.0;
    let mut k = 0;
    for j in 1..=recall_positions {
        let r = j as f64 / recall_positions as f64;
        while k < curve.len() && curve[k].0 < r - 1e-12 {
            k += 1;
        }
        total += best[k];
    }
    total / recall_positions as f64
}

/// AP of per-frame predictions against aligned per-frame ground truth.
/// Boxes outside `bin` (by BEV distance from the origin) are ignored.
pub fn average_precision(
    predictions: &[Vec<Box7>],
    ground_truth: &[Vec<Box7>],
    threshold: f64,
    mode: IouMode,
    bin: Option<&RangeBin>,
    recall_positions: usize,
) -> Result<f64> {
    if predictions.len() != ground_truth.len() {
        return Err(Error::Input(format!(
            "{} prediction frames but {} ground-truth frames",
            predictions.len(),
            ground_truth.len()
        )));
    }
    let keep = |b: &&Box7| bin.is_none_or(|r| r.contains(b.range()));
    let per_frame: Vec<(Vec<(f64, bool)>, usize)> = predictions
        .par_iter()
        .zip(ground_truth)
        .map(|(p, g)| {
            let p: Vec<Box7> = p.iter().filter(keep).copied().collect();
            let g: Vec<Box7> = g.iter().filter(keep).copied().collect();
            (match_frame(&p, &g, threshold, mode), g.len())
        })
        .collect();
    let num_gt = per_frame.iter().map(|(_, n)| n).sum();
    let scored = per_frame.into_iter().flat_map(|(s, _)| s).collect();
    Ok(ap_from_matches(scored, num_gt, recall_positions))
}

/// AP for every threshold and mode of `cfg`, overall and per range bin.
pub fn evaluate_ap(
    predictions: &[Vec<Box7>],
    ground_truth: &[Vec<Box7>],
    cfg: &EvalConfig,
) -> Result<ApTable> {
    cfg.validate()?;
    let mut entries = Vec::new();
    for &t in &cfg.iou_thresholds {
        for &mode in &cfg.modes {
            let bins = std::iter::once(None).chain(cfg.range_bins.iter().map(Some));
            for bin in bins {
                let ap = average_precision(
                    predictions,
                    ground_truth,
                    t,
                    mode,
                    bin,
                    cfg.recall_positions,
                )?;
                let num_gt = ground_truth
                    .iter()
                    .flatten()
                    .filter(|b| bin.is_none_or(|r| r.contains(b.range())))
                    .count();
                entries.push(ApEntry {
                    iou_threshold: t,
                    mode,
                    range: bin.copied(),
                    ap,
                    num_gt,
                });
            }
        }
    }
    Ok(ApTable { entries })
}
