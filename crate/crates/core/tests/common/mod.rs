//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use pseudofuse::evalbench::IouMode;
use pseudofuse::fusion::Tta;
use pseudofuse::geometry::{Box7, EgoPose};
use pseudofuse::pipeline::{FrameInput, Proposal, SequenceInput};
use pseudofuse::tracking::{MotionState, Track, TrackEntry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn car(x: f64, y: f64, heading: f64) -> Box7 {
    Box7::new([x, y, 0.8], [4.5, 1.9, 1.6], heading)
}

pub fn random_box(rng: &mut ChaCha8Rng, spread: f64) -> Box7 {
    Box7::new(
        [
            rng.random_range(-spread..spread),
            rng.random_range(-spread..spread),
            rng.random_range(-0.5..0.5),
        ],
        [
            rng.random_range(1.0..6.0),
            rng.random_range(0.8..3.0),
            rng.random_range(0.8..2.5),
        ],
        rng.random_range(-PI..PI),
    )
}

/// A second box overlapping `a` more often than not.
pub fn random_neighbour(rng: &mut ChaCha8Rng, a: &Box7) -> Box7 {
    let mut b = random_box(rng, 1.0);
    b.cx += a.cx + rng.random_range(-2.0..2.0);
    b.cy += a.cy + rng.random_range(-2.0..2.0);
    b.cz = a.cz + rng.random_range(-1.0..1.0);
    b
}

fn inside_bev(b: &Box7, x: f64, y: f64) -> bool {
    let (dx, dy) = (x - b.cx, y - b.cy);
    let (s, c) = b.heading.sin_cos();
    let u = c * dx + s * dy;
    let v = -s * dx + c * dy;
    u.abs() <= b.l / 2.0 && v.abs() <= b.w / 2.0
}

fn bev_aabb(b: &Box7) -> [f64; 4] {
    let (s, c) = b.heading.sin_cos();
    let ex = (c * b.l).abs() / 2.0 + (s * b.w).abs() / 2.0;
    let ey = (s * b.l).abs() / 2.0 + (c * b.w).abs() / 2.0;
    [b.cx - ex, b.cx + ex, b.cy - ey, b.cy + ey]
}

/// Monte-Carlo IoU. The intersection is estimated by uniform sampling of
/// the overlap of the two axis-aligned bounds; box areas are exact.
pub fn monte_carlo_iou(
    a: &Box7,
    b: &Box7,
    samples: usize,
    three_d: bool,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let (pa, pb) = (bev_aabb(a), bev_aabb(b));
    let x0 = pa[0].max(pb[0]);
    let x1 = pa[1].min(pb[1]);
    let y0 = pa[2].max(pb[2]);
    let y1 = pa[3].min(pb[3]);
    if x1 <= x0 || y1 <= y0 {
        return 0.0;
    }
    let hits = (0..samples)
        .filter(|_| {
            let x = rng.random_range(x0..x1);
            let y = rng.random_range(y0..y1);
            inside_bev(a, x, y) && inside_bev(b, x, y)
        })
        .count();
    let bev_inter = hits as f64 / samples as f64 * (x1 - x0) * (y1 - y0);
    if !three_d {
        return bev_inter / (a.l * a.w + b.l * b.w - bev_inter);
    }
    let z0 = (a.cz - a.h / 2.0).max(b.cz - b.h / 2.0);
    let z1 = (a.cz + a.h / 2.0).min(b.cz + b.h / 2.0);
    let inter = bev_inter * (z1 - z0).max(0.0);
    inter / (a.l * a.w * a.h + b.l * b.w * b.h - inter)
}

/// Density as the symmetric difference quotient of the closed-form
/// cumulative mass (which tends to the weight sum).
pub fn cdf_density(values: &[f64], weights: &[f64], h: f64, x: f64) -> f64 {
    let cdf = |t: f64| {
        values
            .iter()
            .zip(weights)
            .map(|(v, w)| w * 0.5 * (1.0 + libm::erf((t - v) / (h * std::f64::consts::SQRT_2))))
            .sum::<f64>()
    };
    let d = 1e-4 * h;
    (cdf(x + d) - cdf(x - d)) / (2.0 * d)
}

fn oracle_iou(mode: IouMode, a: &Box7, b: &Box7) -> f64 {
    mode.iou(a, b)
}

/// Reference AP: greedy per-frame matching, then for every recall position
/// the best precision over all score cut-offs reaching that recall, with
/// precision and recall recounted from scratch at each cut-off.
pub fn brute_force_ap(
    preds: &[Vec<Box7>],
    gts: &[Vec<Box7>],
    threshold: f64,
    mode: IouMode,
    recall_positions: usize,
) -> f64 {
    let num_gt: usize = gts.iter().map(Vec::len).sum();
    if num_gt == 0 {
        return 0.0;
    }
    let mut scored: Vec<(f64, bool)> = Vec::new();
    for (p, g) in preds.iter().zip(gts) {
        let mut idx: Vec<usize> = (0..p.len()).collect();
        idx.sort_by(|&i, &j| p[j].score.partial_cmp(&p[i].score).unwrap());
        let mut used = vec![false; g.len()];
        for i in idx {
            let mut best = None;
            let mut best_iou = threshold;
            for (k, gt) in g.iter().enumerate() {
                let iou = oracle_iou(mode, &p[i], gt);
                if !used[k] && iou >= best_iou && best.is_none_or(|_| iou > best_iou) {
                    best = Some(k);
                    best_iou = iou;
                }
            }
            if let Some(k) = best {
                used[k] = true;
            }
            scored.push((p[i].score, best.is_some()));
        }
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut total = 0.0;
    for j in 1..=recall_positions {
        let mut best: f64 = 0.0;
        for cut in 1..=scored.len() {
            let tp = scored[..cut].iter().filter(|s| s.1).count();
            // recall >= j / n, compared in integers
            if tp * recall_positions >= j * num_gt {
                best = best.max(tp as f64 / cut as f64);
            }
        }
        total += best;
    }
    total / recall_positions as f64
}

pub fn track_of(boxes: &[Box7], first_frame: u32) -> Track {
    Track {
        track_id: 0,
        entries: boxes
            .iter()
            .enumerate()
            .map(|(i, b)| TrackEntry {
                frame_idx: first_frame + i as u32,
                bbox: b.with_frame(first_frame + i as u32),
                interpolated: false,
            })
            .collect(),
        motion_state: MotionState::Unknown,
    }
}

/// `n` frames with identity poses and no proposals.
pub fn empty_sequence(n: u32, detectors: usize) -> SequenceInput {
    SequenceInput {
        sequence_id: "test".into(),
        detectors: (0..detectors).map(|d| format!("det_{d}")).collect(),
        frames: (0..n)
            .map(|k| FrameInput::new(k, EgoPose::identity(k)))
            .collect(),
    }
}

/// Add `b` (ego frame) as an un-augmented proposal of every detector to both
/// streams of frame slot `slot`.
pub fn add_everywhere(seq: &mut SequenceInput, slot: usize, b: Box7) {
    let frame = seq.frames[slot].frame_idx;
    for d in 0..seq.detectors.len() as u32 {
        let p = Proposal {
            bbox: b.with_detector(d).with_frame(frame),
            tta: Tta::NONE,
        };
        seq.frames[slot].proposals_1f.push(p);
        seq.frames[slot].proposals_16f.push(p);
    }
}

/// Noiseless 10-frame windows of every synthetic vehicle over several
/// scenes, classified. Returns `(correct, total)`.
pub fn motion_classification_score(seeds: &[u64]) -> (usize, usize) {
    use pseudofuse::evalbench::synth::{generate_scene, SynthConfig};
    use pseudofuse::staticrefine::{classify_motion, MotionConfig};
    let cfg = MotionConfig::default();
    let (mut correct, mut total) = (0, 0);
    for &seed in seeds {
        let scene = generate_scene(&SynthConfig {
            seed,
            n_frames: 60,
            ..Default::default()
        })
        .expect("scene");
        for v in &scene.vehicles {
            for start in (0..50).step_by(7) {
                let track = track_of(&v.world[start..start + 10], start as u32);
                let want = if v.is_static {
                    MotionState::Static
                } else {
                    MotionState::Dynamic
                };
                total += 1;
                correct += usize::from(classify_motion(&track, &cfg).expect("track") == want);
            }
        }
    }
    (correct, total)
}

/// Outcome of injecting static-looking 16-frame trail tracks on the paths
/// of dynamic 1-frame tracks next to genuinely parked cars.
pub struct TrailCorrection {
    pub injected: usize,
    pub flipped: usize,
    pub parked: usize,
    pub parked_kept: usize,
}

pub fn trail_correction(seed: u64) -> TrailCorrection {
    use pseudofuse::staticrefine::{classify_tracks, correct_16f_motion, MotionConfig};
    let cfg = MotionConfig::default();
    let mut r = rng(seed);
    let mut tracks_1f = Vec::new();
    let mut tracks_16f = Vec::new();
    let mut injected = 0;
    for lane in 0..4 {
        let y = -7.0 + 3.5 * lane as f64 + if lane >= 2 { 3.5 } else { 0.0 };
        let heading = if lane < 2 { 0.0 } else { PI };
        let speed = r.random_range(0.6..1.4) * if lane < 2 { 1.0 } else { -1.0 };
        let x0 = r.random_range(-20.0..20.0);
        let path: Vec<Box7> = (0..40)
            .map(|k| car(x0 + speed * k as f64, y, heading))
            .collect();
        tracks_1f.push(track_of(&path, 0));
        // Two trails per path: a lingering box at a point the car passed.
        for _ in 0..2 {
            let k = r.random_range(5..35);
            let stuck = path[k];
            let len = r.random_range(3..12);
            tracks_16f.push(track_of(&vec![stuck; len], k as u32));
            injected += 1;
        }
    }
    let parked: Vec<Track> = (0..6)
        .map(|i| {
            let b = car(
                -20.0 + 8.0 * i as f64,
                if i % 2 == 0 { 11.0 } else { -11.0 },
                0.0,
            );
            track_of(&[b; 20], 0)
        })
        .collect();
    tracks_16f.extend(parked.iter().cloned());
    classify_tracks(&mut tracks_1f, &cfg).expect("1f");
    classify_tracks(&mut tracks_16f, &cfg).expect("16f");
    assert!(tracks_16f
        .iter()
        .all(|t| t.motion_state == MotionState::Static));
    let out = correct_16f_motion(&tracks_1f, tracks_16f, &cfg);
    let flipped = out[..injected]
        .iter()
        .filter(|t| t.motion_state == MotionState::Dynamic)
        .count();
    let parked_kept = out[injected..]
        .iter()
        .filter(|t| t.motion_state == MotionState::Static)
        .count();
    TrailCorrection {
        injected,
        flipped,
        parked: parked.len(),
        parked_kept,
    }
}

/// Run the `pseudofuse` binary, panicking with its stderr on failure.
pub fn cli(args: &[&str]) -> Vec<u8> {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_pseudofuse"))
        .args(args)
        .output()
        .expect("spawn pseudofuse");
    assert!(
        out.status.success(),
        "pseudofuse {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

/// `synth` a short scene into `dir`, then `run` it on one worker and on
/// four. Returns the two label files' bytes.
pub fn cli_run_twice(dir: &std::path::Path) -> (Vec<u8>, Vec<u8>) {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    std::fs::write(dir.join("synth.toml"), "seed = 9\nn_frames = 20\n").expect("write config");
    cli(&["synth", "--config", &p("synth.toml"), "--out-dir", &p("")]);
    let mut outs = Vec::new();
    for (name, workers) in [("a.jsonl", "1"), ("b.jsonl", "4")] {
        cli(&[
            "run",
            "--workers",
            workers,
            "--detections",
            &p("detections.jsonl"),
            "--poses",
            &p("poses.jsonl"),
            "--points",
            &p("points.bin"),
            "--out",
            &p(name),
        ]);
        outs.push(std::fs::read(dir.join(name)).expect("read labels"));
    }
    let b = outs.pop().unwrap();
    (outs.pop().unwrap(), b)
}

/// Largest gap between the library AP and [`brute_force_ap`] over random
/// small instances with distinct scores.
pub fn ap_max_error(instances: usize, seed: u64) -> f64 {
    use pseudofuse::evalbench::average_precision;
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let frames = r.random_range(1..4);
        let mut preds = Vec::new();
        let mut gts = Vec::new();
        for _ in 0..frames {
            let g: Vec<Box7> = (0..r.random_range(0..5))
                .map(|_| random_box(&mut r, 10.0))
                .collect();
            let mut p = Vec::new();
            for b in &g {
                if r.random_bool(0.8) {
                    let mut q = *b;
                    q.cx += r.random_range(-0.6..0.6);
                    q.cy += r.random_range(-0.6..0.6);
                    q.heading += r.random_range(-0.2..0.2);
                    p.push(q);
                }
            }
            p.extend((0..r.random_range(0..3)).map(|_| random_box(&mut r, 10.0)));
            for b in &mut p {
                b.score = r.random_range(0.0..1.0);
            }
            preds.push(p);
            gts.push(g);
        }
        let t = [0.3, 0.5, 0.7][r.random_range(0..3)];
        for mode in [IouMode::Bev, IouMode::ThreeD] {
            let n = [11, 40][r.random_range(0..2)];
            let got = average_precision(&preds, &gts, t, mode, None, n).expect("aligned frames");
            worst = worst.max((got - brute_force_ap(&preds, &gts, t, mode, n)).abs());
        }
    }
    worst
}

/// One true positive ranked below a false positive: AP 0.5.
pub fn ap_hand_case() -> f64 {
    use pseudofuse::evalbench::average_precision;
    let gt = vec![vec![car(10.0, 0.0, 0.0)]];
    let pred = vec![vec![
        car(10.0, 0.0, 0.0).with_score(0.8),
        car(40.0, 5.0, 0.0).with_score(0.9),
    ]];
    average_precision(&pred, &gt, 0.7, IouMode::ThreeD, None, 40).expect("aligned frames")
}
