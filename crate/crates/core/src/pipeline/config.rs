use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::staticrefine::{MotionConfig, StaticRefineConfig};
use crate::tracking::TrackerConfig;

/// Every tunable of the pseudo-label pipeline. Loaded from TOML; missing
/// keys take their defaults, unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub fusion: FusionConfig,
    pub tracker_1f: TrackerConfig,
    pub tracker_16f: TrackerConfig,
    pub motion: MotionConfig,
    pub static_refine: StaticRefineConfig,
    /// Boxes scoring below this are dropped from the final labels.
    pub final_score_threshold: f64,
    /// BEV IoU above which the assembly NMS suppresses a box.
    pub final_nms_iou: f64,
    /// Boxes containing fewer lidar points are dropped (when points are given).
    pub min_points_in_box: usize,
    /// Use the 16-frame stream; when off only 1-frame fusion and tracking run.
    pub use_16f: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            fusion: FusionConfig::default(),
            tracker_1f: TrackerConfig::default(),
            tracker_16f: TrackerConfig::default(),
            motion: MotionConfig::default(),
            static_refine: StaticRefineConfig::default(),
            final_score_threshold: 0.6,
            final_nms_iou: 0.1,
            min_points_in_box: 1,
            use_16f: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.fusion.validate()?;
        self.tracker_1f.validate()?;
        self.tracker_16f.validate()?;
        self.motion.validate()?;
        self.static_refine.validate()?;
        if !(0.0..=1.0).contains(&self.final_score_threshold) {
            return Err(Error::Config(
                "final_score_threshold must lie in [0, 1]".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.final_nms_iou) {
            return Err(Error::Config("final_nms_iou must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
