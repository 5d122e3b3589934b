//! Deterministic synthetic driving scenes with several simulated detectors.
//!
//! The ego drives along +x with a gentle yaw wobble past two rows of parked
//! cars while other vehicles travel in straight lanes. Each simulated
//! detector sees the scene through every test-time augmentation and emits
//! a 1-frame and a 16-frame stream. Ground truth is every vehicle within
//! sensor range, in ego coordinates.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{augment_box, Tta};
use crate::geometry::{normalize_heading, transform_box, Box7, EgoPose};
use crate::pipeline::{FrameInput, Proposal, SequenceInput};

/// Step function of drop probability over range: `[start_range, prob]`
/// pairs with ascending starts; the last step at or below the range applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutCurve {
    pub steps: Vec<[f64; 2]>,
}

impl DropoutCurve {
    pub fn constant(p: f64) -> Self {
        Self {
            steps: vec![[0.0, p]],
        }
    }

    pub fn prob(&self, range: f64) -> f64 {
        self.steps
            .iter()
            .take_while(|s| s[0] <= range)
            .last()
            .map_or(0.0, |s| s[1])
    }

    fn validate(&self) -> Result<()> {
        if self.steps.windows(2).any(|w| w[1][0] <= w[0][0]) {
            return Err(Error::Config(
                "dropout steps must have increasing ranges".into(),
            ));
        }
        if self.steps.iter().any(|s| !(0.0..=1.0).contains(&s[1])) {
            return Err(Error::Config(
                "dropout probabilities must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreModel {
    /// Mean score of a true detection at zero range.
    pub base: f64,
    /// Score lost per metre of range.
    pub range_slope: f64,
    pub sigma: f64,
    /// False positives score uniformly in `[fp_low, fp_high)`.
    pub fp_low: f64,
    pub fp_high: f64,
}

impl Default for ScoreModel {
    fn default() -> Self {
        Self {
            base: 0.9,
            range_slope: 0.004,
            sigma: 0.08,
            fp_low: 0.1,
            fp_high: 0.6,
        }
    }
}

/// Error model of one simulated detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorModel {
    pub name: String,
    /// RMS horizontal centre error (m), split evenly over the two axes;
    /// vertical noise per axis is half of the horizontal.
    pub centre_sigma: f64,
    pub dims_sigma: f64,
    pub heading_sigma: f64,
    /// Probability that a box comes out facing backwards.
    pub heading_flip_prob: f64,
    /// Systematic centre offset (m) along the heading, across it, and up.
    pub centre_bias: [f64; 3],
    /// Systematic offset added to (l, w, h).
    pub dims_bias: [f64; 3],
    /// Probability of a gross centre error drawn with `outlier_sigma`.
    pub outlier_prob: f64,
    pub outlier_sigma: f64,
    pub dropout_1f: DropoutCurve,
    pub dropout_16f: DropoutCurve,
    /// Mean false positives per frame and stream.
    pub fp_rate: f64,
    pub score: ScoreModel,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self {
            name: "det".into(),
            centre_sigma: 0.3,
            dims_sigma: 0.15,
            heading_sigma: 0.1,
            heading_flip_prob: 0.1,
            centre_bias: [0.0; 3],
            dims_bias: [0.0; 3],
            outlier_prob: 0.05,
            outlier_sigma: 1.0,
            dropout_1f: DropoutCurve {
                steps: vec![[0.0, 0.05], [30.0, 0.2], [50.0, 0.6]],
            },
            dropout_16f: DropoutCurve {
                steps: vec![[0.0, 0.02], [50.0, 0.2]],
            },
            fp_rate: 0.5,
            score: ScoreModel::default(),
        }
    }
}

impl DetectorModel {
    pub fn noiseless(name: &str) -> Self {
        Self {
            name: name.into(),
            centre_sigma: 0.0,
            dims_sigma: 0.0,
            heading_sigma: 0.0,
            heading_flip_prob: 0.0,
            outlier_prob: 0.0,
            dropout_1f: DropoutCurve::constant(0.0),
            dropout_16f: DropoutCurve::constant(0.0),
            fp_rate: 0.0,
            score: ScoreModel {
                sigma: 0.0,
                range_slope: 0.0,
                ..ScoreModel::default()
            },
            ..Self::default()
        }
    }

    // Negated comparisons so NaN fails too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    fn validate(&self) -> Result<()> {
        let sigmas = [
            self.centre_sigma,
            self.dims_sigma,
            self.heading_sigma,
            self.outlier_sigma,
            self.score.sigma,
            self.fp_rate,
        ];
        if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::Config(format!(
                "detector {}: noise scales must be >= 0",
                self.name
            )));
        }
        for p in [self.heading_flip_prob, self.outlier_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!(
                    "detector {}: probabilities must lie in [0, 1]",
                    self.name
                )));
            }
        }
        if !(self.score.fp_low <= self.score.fp_high) {
            return Err(Error::Config("fp_low must not exceed fp_high".into()));
        }
        self.dropout_1f.validate()?;
        self.dropout_16f.validate()
    }
}

/// Four detectors sharing the default noise levels, each with its own
/// systematic bias, as if trained on different source datasets.
pub fn default_detectors() -> Vec<DetectorModel> {
    let biased = |name: &str, centre_bias: [f64; 3], dims_bias: [f64; 3]| DetectorModel {
        name: name.into(),
        centre_bias,
        dims_bias,
        ..DetectorModel::default()
    };
    vec![
        biased("det_a", [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]),
        biased("det_b", [0.1, 0.0, 0.05], [0.1, 0.05, 0.0]),
        biased("det_c", [-0.1, 0.05, 0.0], [-0.1, 0.0, 0.05]),
        biased("det_d", [0.4, -0.15, 0.15], [0.5, 0.2, 0.15]),
    ]
}

/// Flip and rotation combinations of test-time augmentation.
pub fn default_tta() -> Vec<Tta> {
    let rot = PI / 8.0;
    vec![
        Tta::NONE,
        Tta {
            flip_x: true,
            ..Tta::NONE
        },
        Tta { rot, ..Tta::NONE },
        Tta {
            flip_x: true,
            flip_y: false,
            rot: -rot,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_frames: u32,
    pub n_static_vehicles: usize,
    pub n_dynamic_vehicles: usize,
    /// Ego speed along its heading (m per frame).
    pub ego_speed: f64,
    /// Ego yaw follows `amplitude * sin(2 pi k / period)`.
    pub ego_yaw_amplitude: f64,
    pub ego_yaw_period: f64,
    /// Vehicles farther than this (BEV, m) are neither labelled nor detected.
    pub sensor_range: f64,
    /// Dynamic vehicle speeds are drawn from `[min, max)` m per frame.
    pub dynamic_speed: [f64; 2],
    pub detectors: Vec<DetectorModel>,
    pub tta: Vec<Tta>,
    /// Noise multiplier of 16-frame detections of parked cars.
    pub static_16f_noise_scale: f64,
    /// Noise multiplier of 16-frame detections of moving cars.
    pub dynamic_16f_noise_scale: f64,
    /// Score bonus of 16-frame detections of parked cars.
    pub static_16f_score_bonus: f64,
    /// Per frame and moving car, chance of a 16-frame box on its motion trail.
    pub trail_prob: f64,
    /// Chance that one augmentation variant misses an object its detector saw.
    pub variant_dropout: f64,
    /// Fraction of the error variance drawn independently per augmentation
    /// variant; the rest is shared by all variants of a detector.
    pub variant_share: f64,
    /// Points sampled inside a box at zero range; falls off with range squared.
    pub points_per_box: f64,
    pub points_range_scale: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_frames: 200,
            n_static_vehicles: 20,
            n_dynamic_vehicles: 10,
            ego_speed: 1.0,
            ego_yaw_amplitude: 0.02,
            ego_yaw_period: 200.0,
            sensor_range: 75.0,
            dynamic_speed: [0.6, 1.4],
            detectors: default_detectors(),
            tta: default_tta(),
            static_16f_noise_scale: 0.5,
            dynamic_16f_noise_scale: 1.5,
            static_16f_score_bonus: 0.05,
            trail_prob: 0.3,
            variant_dropout: 0.1,
            variant_share: 0.25,
            points_per_box: 150.0,
            points_range_scale: 25.0,
        }
    }
}

impl SynthConfig {
    // Negated comparisons so NaN fails too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if self.detectors.is_empty() || self.tta.is_empty() {
            return Err(Error::Config(
                "need at least one detector and one augmentation".into(),
            ));
        }
        for d in &self.detectors {
            d.validate()?;
        }
        for p in [self.trail_prob, self.variant_dropout, self.variant_share] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config("probabilities must lie in [0, 1]".into()));
            }
        }
        let positive = [
            self.sensor_range,
            self.ego_yaw_period,
            self.points_range_scale,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("ranges and periods must be positive".into()));
        }
        if !(self.dynamic_speed[0] <= self.dynamic_speed[1]) {
            return Err(Error::Config("dynamic_speed must be [min, max]".into()));
        }
        let scales = [
            self.static_16f_noise_scale,
            self.dynamic_16f_noise_scale,
            self.points_per_box,
            self.ego_speed,
        ];
        if scales.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("scales must be non-negative".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A simulated vehicle and its world box in every frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthVehicle {
    pub is_static: bool,
    /// Metres per frame along the heading (0 for parked cars).
    pub speed: f64,
    pub world: Vec<Box7>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub input: SequenceInput,
    /// Visible vehicles per frame, in ego coordinates, aligned with `input.frames`.
    pub ground_truth: Vec<Vec<Box7>>,
    /// Vehicle index of every ground-truth box.
    pub ground_truth_vehicle: Vec<Vec<usize>>,
    pub vehicles: Vec<SynthVehicle>,
}

impl SynthScene {
    /// All ground truth boxes, flattened.
    pub fn ground_truth_boxes(&self) -> Vec<Box7> {
        self.ground_truth.iter().flatten().copied().collect()
    }
}

fn ego_poses(cfg: &SynthConfig) -> Vec<EgoPose> {
    let mut pos = [0.0, 0.0];
    (0..cfg.n_frames)
        .map(|k| {
            let yaw = cfg.ego_yaw_amplitude * (2.0 * PI * k as f64 / cfg.ego_yaw_period).sin();
            let pose = EgoPose::from_yaw(yaw, [pos[0], pos[1], 0.0], k);
            pos[0] += cfg.ego_speed * yaw.cos();
            pos[1] += cfg.ego_speed * yaw.sin();
            pose
        })
        .collect()
}

fn vehicle_dims(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [
        rng.random_range(3.9..5.1),
        rng.random_range(1.7..2.1),
        rng.random_range(1.4..1.8),
    ]
}

fn place_vehicles(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<SynthVehicle> {
    let span = cfg.ego_speed * cfg.n_frames as f64;
    let (x_lo, x_hi) = (-40.0, span + 40.0);
    let mut out = Vec::new();

    // Parked cars: two rows on either side, evenly spread with jitter.
    let rows = [-11.0, 11.0];
    for (i, row) in rows.iter().enumerate() {
        let n = cfg.n_static_vehicles / 2 + usize::from(i < cfg.n_static_vehicles % 2);
        let spacing = (x_hi - x_lo) / n.max(1) as f64;
        for j in 0..n {
            let dims = vehicle_dims(rng);
            let jitter = rng.random_range(0.0..(spacing - dims[0] - 1.5).max(0.0));
            let x = x_lo + j as f64 * spacing + jitter;
            let y = row + rng.random_range(-0.3..0.3);
            let heading =
                if rng.random_bool(0.5) { 0.0 } else { PI } + rng.random_range(-0.05..0.05);
            let b = Box7::new([x, y, dims[2] / 2.0], dims, heading);
            out.push(SynthVehicle {
                is_static: true,
                speed: 0.0,
                world: (0..cfg.n_frames).map(|k| b.with_frame(k)).collect(),
            });
        }
    }

    // Moving cars: four lanes, right-hand traffic, one speed per lane.
    let lanes = [(-7.0, 1.0), (-3.5, 1.0), (3.5, -1.0), (7.0, -1.0)];
    let lane_speed: Vec<f64> = lanes
        .iter()
        .map(|_| rng.random_range(cfg.dynamic_speed[0]..=cfg.dynamic_speed[1]))
        .collect();
    let mut next_x = [x_lo, x_lo, x_lo, x_lo];
    for v in 0..cfg.n_dynamic_vehicles {
        let lane = v % lanes.len();
        let (y, dir) = lanes[lane];
        let dims = vehicle_dims(rng);
        let x0 = next_x[lane] + rng.random_range(0.0..40.0);
        next_x[lane] = x0 + dims[0] + 12.0;
        let speed = lane_speed[lane];
        let heading = if dir > 0.0 { 0.0 } else { PI };
        let start = if dir > 0.0 {
            x0 - 0.5 * speed * cfg.n_frames as f64
        } else {
            x0 + 0.5 * speed * cfg.n_frames as f64
        };
        out.push(SynthVehicle {
            is_static: false,
            speed,
            world: (0..cfg.n_frames)
                .map(|k| {
                    let x = start + dir * speed * k as f64;
                    Box7::new([x, y, dims[2] / 2.0], dims, heading).with_frame(k)
                })
                .collect(),
        });
    }
    out
}

struct Noise {
    centre: f64,
    dims: f64,
    heading: f64,
}

fn normal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
    }
}

/// Error of one box relative to the truth: along and across the heading,
/// vertical, the three dimensions, then heading.
type BoxError = [f64; 7];

fn draw_error(rng: &mut ChaCha8Rng, n: &Noise, fraction: f64) -> BoxError {
    let k = fraction.sqrt();
    [
        normal(rng, k * n.centre),
        normal(rng, k * n.centre),
        normal(rng, k * 0.5 * n.centre),
        normal(rng, k * n.dims),
        normal(rng, k * n.dims),
        normal(rng, k * n.dims),
        normal(rng, k * n.heading),
    ]
}

/// A detector's shared error for one object: the shared noise share plus a
/// possible gross centre error.
fn shared_error(
    rng: &mut ChaCha8Rng,
    det: &DetectorModel,
    n: &Noise,
    variant_share: f64,
) -> BoxError {
    let mut e = draw_error(rng, n, 1.0 - variant_share);
    if det.outlier_prob > 0.0 && rng.random_bool(det.outlier_prob) {
        e[0] += normal(rng, det.outlier_sigma);
        e[1] += normal(rng, det.outlier_sigma);
    }
    e
}

fn noisy_box(
    rng: &mut ChaCha8Rng,
    truth: &Box7,
    det: &DetectorModel,
    shared: &BoxError,
    n: &Noise,
    variant_share: f64,
) -> Box7 {
    let own = draw_error(rng, n, variant_share);
    let e: BoxError = std::array::from_fn(|i| shared[i] + own[i]);
    let (s, c) = truth.heading.sin_cos();
    let along = det.centre_bias[0] + e[0];
    let across = det.centre_bias[1] + e[1];
    let mut b = *truth;
    b.cx += c * along - s * across;
    b.cy += s * along + c * across;
    b.cz += det.centre_bias[2] + e[2];
    b.l = (b.l + det.dims_bias[0] + e[3]).max(0.5);
    b.w = (b.w + det.dims_bias[1] + e[4]).max(0.3);
    b.h = (b.h + det.dims_bias[2] + e[5]).max(0.3);
    let mut heading = b.heading + e[6];
    if det.heading_flip_prob > 0.0 && rng.random_bool(det.heading_flip_prob) {
        heading += PI;
    }
    b.heading = normalize_heading(heading);
    b
}

fn score(rng: &mut ChaCha8Rng, m: &ScoreModel, range: f64, bonus: f64) -> f64 {
    (m.base + bonus - m.range_slope * range + normal(rng, m.sigma)).clamp(0.05, 0.99)
}

fn points_inside(rng: &mut ChaCha8Rng, b: &Box7, count: usize) -> Vec<[f64; 3]> {
    let (s, c) = b.heading.sin_cos();
    (0..count)
        .map(|_| {
            let u = rng.random_range(-0.49..0.49) * b.l;
            let v = rng.random_range(-0.49..0.49) * b.w;
            let z = rng.random_range(-0.49..0.49) * b.h;
            // Stored as f32 on disk; round now so files round-trip exactly.
            [
                (b.cx + c * u - s * v) as f32 as f64,
                (b.cy + s * u + c * v) as f32 as f64,
                (b.cz + z) as f32 as f64,
            ]
        })
        .collect()
}

/// Generate a scene. The same config always yields the same scene.
pub fn generate_scene(cfg: &SynthConfig) -> Result<SynthScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let poses = ego_poses(cfg);
    let vehicles = place_vehicles(cfg, &mut rng);

    let mut frames = Vec::with_capacity(poses.len());
    let mut ground_truth = Vec::with_capacity(poses.len());
    let mut ground_truth_vehicle = Vec::with_capacity(poses.len());

    for (k, pose) in poses.iter().enumerate() {
        let k32 = k as u32;
        let to_ego = pose.inverse();
        let mut frame = FrameInput::new(k32, *pose);
        let mut gt = Vec::new();
        let mut gt_ids = Vec::new();
        let mut points = Vec::new();

        for (vi, v) in vehicles.iter().enumerate() {
            let truth = transform_box(&v.world[k], &to_ego);
            let range = truth.range();
            if range > cfg.sensor_range {
                continue;
            }
            gt.push(truth);
            gt_ids.push(vi);
            let n_points = cfg.points_per_box / (1.0 + (range / cfg.points_range_scale).powi(2));
            points.extend(points_inside(&mut rng, &truth, n_points.round() as usize));

            // Motion trail: where the car was halfway through the 16-frame window.
            let trail = (!v.is_static && rng.random_bool(cfg.trail_prob)).then(|| {
                let back = k.saturating_sub(8);
                transform_box(&v.world[back], &to_ego)
            });

            for (di, det) in cfg.detectors.iter().enumerate() {
                let base = Noise {
                    centre: det.centre_sigma * std::f64::consts::FRAC_1_SQRT_2,
                    dims: det.dims_sigma,
                    heading: det.heading_sigma,
                };
                let scale16 = if v.is_static {
                    cfg.static_16f_noise_scale
                } else {
                    cfg.dynamic_16f_noise_scale
                };
                let noise16 = Noise {
                    centre: base.centre * scale16,
                    dims: base.dims * scale16,
                    heading: base.heading * scale16,
                };
                let drop16 = if v.is_static {
                    det.dropout_16f.prob(range)
                } else {
                    det.dropout_1f.prob(range)
                };
                let bonus16 = if v.is_static {
                    cfg.static_16f_score_bonus
                } else {
                    0.0
                };

                let seen_1f = !rng.random_bool(det.dropout_1f.prob(range));
                let seen_16f = !rng.random_bool(drop16);
                let share = cfg.variant_share;
                let shared_1f = shared_error(&mut rng, det, &base, share);
                let shared_16f = shared_error(&mut rng, det, &noise16, share);
                let shared_trail = shared_error(&mut rng, det, &noise16, share);
                for tta in &cfg.tta {
                    let variant_ok = |rng: &mut ChaCha8Rng| {
                        cfg.variant_dropout == 0.0 || !rng.random_bool(cfg.variant_dropout)
                    };
                    if seen_1f && variant_ok(&mut rng) {
                        let mut b = noisy_box(&mut rng, &truth, det, &shared_1f, &base, share);
                        b.score = score(&mut rng, &det.score, range, 0.0);
                        frame.proposals_1f.push(proposal(b, *tta, di, k32));
                    }
                    if seen_16f && variant_ok(&mut rng) {
                        let mut b = noisy_box(&mut rng, &truth, det, &shared_16f, &noise16, share);
                        b.score = score(&mut rng, &det.score, range, bonus16);
                        frame.proposals_16f.push(proposal(b, *tta, di, k32));
                    }
                    if let Some(t) = &trail {
                        if variant_ok(&mut rng) {
                            let mut b = noisy_box(&mut rng, t, det, &shared_trail, &noise16, share);
                            b.score = score(&mut rng, &det.score, range, -0.2);
                            frame.proposals_16f.push(proposal(b, *tta, di, k32));
                        }
                    }
                }
            }
        }

        for (di, det) in cfg.detectors.iter().enumerate() {
            for stream16 in [false, true] {
                let count = if det.fp_rate > 0.0 {
                    Poisson::new(det.fp_rate)
                        .expect("positive rate")
                        .sample(&mut rng) as usize
                } else {
                    0
                };
                for _ in 0..count {
                    let r = cfg.sensor_range * rng.random_range(0.0f64..1.0).sqrt();
                    let a = rng.random_range(-PI..PI);
                    let dims = vehicle_dims(&mut rng);
                    let fp = Box7::new(
                        [r * a.cos(), r * a.sin(), dims[2] / 2.0],
                        dims,
                        rng.random_range(-PI..PI),
                    );
                    for tta in &cfg.tta {
                        if !rng.random_bool(0.5) {
                            continue;
                        }
                        let mut b = fp;
                        b.cx += normal(&mut rng, 0.3);
                        b.cy += normal(&mut rng, 0.3);
                        b.score = rng.random_range(det.score.fp_low..=det.score.fp_high);
                        let p = proposal(b, *tta, di, k32);
                        if stream16 {
                            frame.proposals_16f.push(p);
                        } else {
                            frame.proposals_1f.push(p);
                        }
                    }
                }
            }
        }

        frame.points = Some(points);
        frames.push(frame);
        ground_truth.push(gt.into_iter().map(|b| b.with_score(1.0)).collect());
        ground_truth_vehicle.push(gt_ids);
    }

    Ok(SynthScene {
        input: SequenceInput {
            sequence_id: format!("synth-{}", cfg.seed),
            detectors: cfg.detectors.iter().map(|d| d.name.clone()).collect(),
            frames,
        },
        ground_truth,
        ground_truth_vehicle,
        vehicles,
    })
}

fn proposal(b: Box7, tta: Tta, detector: usize, frame: u32) -> Proposal {
    Proposal {
        bbox: augment_box(&b, &tta)
            .with_detector(detector as u32)
            .with_frame(frame),
        tta,
    }
}
