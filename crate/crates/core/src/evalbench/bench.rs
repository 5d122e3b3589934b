//! Synthetic benchmark: single detectors against fusion methods, and the
//! static-refinement window ablation.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::synth::{generate_scene, SynthConfig, SynthScene};
use super::{evaluate_ap, ApTable, EvalConfig};
use crate::error::Result;
use crate::fusion::{deaugment_box, FusionMethod};
use crate::geometry::Box7;
use crate::pipeline::{fuse_proposals, run_pipeline, PipelineConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub seeds: Vec<u64>,
    /// Scene template; its seed is replaced by each entry of `seeds`.
    pub synth: SynthConfig,
    pub pipeline: PipelineConfig,
    pub eval: EvalConfig,
    /// Static-refinement windows compared by the ablation.
    pub windows: Vec<u32>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3, 4, 5],
            synth: SynthConfig::default(),
            pipeline: PipelineConfig::default(),
            eval: EvalConfig::default(),
            windows: vec![0, 4, 16],
        }
    }
}

/// One detector's un-augmented 1-frame boxes, per frame.
pub fn single_detector_predictions(scene: &SynthScene, detector: u32) -> Vec<Vec<Box7>> {
    scene
        .input
        .frames
        .iter()
        .map(|f| {
            f.proposals_1f
                .iter()
                .filter(|p| p.bbox.detector_id == detector && p.tta.is_identity())
                .map(|p| deaugment_box(&p.bbox, &p.tta))
                .collect()
        })
        .collect()
}

/// 1-frame proposals of every frame fused with `method`.
pub fn fused_predictions(
    scene: &SynthScene,
    cfg: &PipelineConfig,
    method: FusionMethod,
) -> Result<Vec<Vec<Box7>>> {
    scene
        .input
        .frames
        .par_iter()
        .map(|f| {
            fuse_proposals(
                &f.proposals_1f,
                f.frame_idx,
                &cfg.fusion,
                method,
                cfg.final_nms_iou,
            )
        })
        .collect()
}

/// Full pipeline output, per frame.
pub fn pipeline_predictions(scene: &SynthScene, cfg: &PipelineConfig) -> Result<Vec<Vec<Box7>>> {
    let labels = run_pipeline(&scene.input, cfg)?;
    let by_frame = labels.by_frame();
    Ok(scene
        .input
        .frames
        .iter()
        .map(|f| {
            by_frame
                .get(&f.frame_idx)
                .map(|ls| ls.iter().map(|l| l.bbox).collect())
                .unwrap_or_default()
        })
        .collect())
}

/// AP of every single detector and every fusion method on one scene.
/// Rows are keyed by detector name and method label.
pub fn fusion_comparison(
    scene: &SynthScene,
    cfg: &PipelineConfig,
    eval: &EvalConfig,
) -> Result<BTreeMap<String, ApTable>> {
    let mut out = BTreeMap::new();
    for (d, name) in scene.input.detectors.iter().enumerate() {
        let preds = single_detector_predictions(scene, d as u32);
        out.insert(
            name.clone(),
            evaluate_ap(&preds, &scene.ground_truth, eval)?,
        );
    }
    for method in FusionMethod::ALL {
        let preds = fused_predictions(scene, cfg, method)?;
        out.insert(
            method.label().to_string(),
            evaluate_ap(&preds, &scene.ground_truth, eval)?,
        );
    }
    Ok(out)
}

/// Row label of a window in the ablation, zero-padded so rows sort by H.
pub fn window_label(h: u32) -> String {
    format!("H={h:02}")
}

/// Full-pipeline AP for each static-refinement window.
pub fn window_ablation(
    scene: &SynthScene,
    cfg: &PipelineConfig,
    windows: &[u32],
    eval: &EvalConfig,
) -> Result<BTreeMap<String, ApTable>> {
    let mut out = BTreeMap::new();
    for &h in windows {
        let mut c = cfg.clone();
        c.static_refine.window = h;
        let preds = pipeline_predictions(scene, &c)?;
        out.insert(
            window_label(h),
            evaluate_ap(&preds, &scene.ground_truth, eval)?,
        );
    }
    Ok(out)
}

/// Results of one benchmark seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub fusion: BTreeMap<String, ApTable>,
    pub windows: BTreeMap<String, ApTable>,
}

pub fn run_benchmark(cfg: &BenchConfig) -> Result<Vec<SeedResult>> {
    cfg.pipeline.validate()?;
    cfg.eval.validate()?;
    cfg.seeds
        .iter()
        .map(|&seed| {
            let scene = generate_scene(&SynthConfig {
                seed,
                ..cfg.synth.clone()
            })?;
            Ok(SeedResult {
                seed,
                fusion: fusion_comparison(&scene, &cfg.pipeline, &cfg.eval)?,
                windows: window_ablation(&scene, &cfg.pipeline, &cfg.windows, &cfg.eval)?,
            })
        })
        .collect()
}
