mod common;

use std::f64::consts::{FRAC_PI_2, PI};

use approx::assert_abs_diff_eq;
use common::*;
use pseudofuse::fusion::*;
use pseudofuse::geometry::{bev_iou, iou_3d, Box7, FUSED_DETECTOR_ID};
use pseudofuse::pipeline::{fuse_proposals, Proposal};
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn tta_variants() -> [Tta; 4] {
    [
        Tta::NONE,
        Tta {
            flip_x: true,
            ..Tta::NONE
        },
        Tta {
            rot: 0.6,
            ..Tta::NONE
        },
        Tta {
            flip_x: true,
            flip_y: true,
            rot: -1.1,
        },
    ]
}

#[test]
fn deaugment_examples() {
    let b = Box7::new([1.0, 2.0, 0.0], [4.0, 2.0, 1.5], 0.3);
    let un = deaugment_box(
        &b,
        &Tta {
            flip_x: true,
            ..Tta::NONE
        },
    );
    assert_abs_diff_eq!(un.cy, -2.0, epsilon = 1e-12);
    assert_abs_diff_eq!(un.heading, -0.3, epsilon = 1e-12);

    let q = Box7::new([0.0, 1.0, 0.0], [4.0, 2.0, 1.5], FRAC_PI_2);
    let un = deaugment_box(
        &q,
        &Tta {
            rot: FRAC_PI_2,
            ..Tta::NONE
        },
    );
    assert_abs_diff_eq!(un.cx, 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(un.cy, 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(un.heading, 0.0, epsilon = 1e-12);

    assert_eq!(deaugment_box(&b, &Tta::NONE), b);
}

#[test]
fn clustering_examples() {
    let cfg = FusionConfig::default();
    let near: Vec<Box7> = (0..5).map(|i| car(i as f64 * 0.1, 0.0, 0.0)).collect();
    let c = cluster_proposals(&ProposalSet::new(near.clone(), 5).unwrap(), &cfg);
    assert_eq!(c.len(), 1);
    assert_eq!(c[0].len(), 5);

    let few = ProposalSet::new(near[..3].to_vec(), 3).unwrap();
    assert!(cluster_proposals(&few, &cfg).is_empty());

    let mut two: Vec<Box7> = (0..6).map(|i| car(i as f64 * 0.1, 0.0, 0.0)).collect();
    two.extend((0..6).map(|i| car(10.0 + i as f64 * 0.1, 0.0, 0.0)));
    let set = ProposalSet::new(two, 6).unwrap();
    let c = cluster_proposals(&set, &cfg);
    assert_eq!(c.iter().map(Vec::len).collect::<Vec<_>>(), [6, 6]);
    assert_eq!(kbf(&set, &cfg).len(), 2);
    assert!(kbf(&ProposalSet::default(), &cfg).is_empty());
}

#[test]
fn kbf_examples() {
    let cfg = FusionConfig::default();
    let b = car(4.0, 1.0, 0.2).with_score(0.6);
    let fused = kbf_fuse_cluster(&[b; 5], &cfg).unwrap();
    assert_eq!(fused.params(), b.params());
    assert_eq!(fused.score, 0.6);
    assert_eq!(fused.detector_id, FUSED_DETECTOR_ID);

    let hs: Vec<Box7> = [0.1, 0.1, 0.1, 2.0]
        .iter()
        .map(|&h| car(0.0, 0.0, h))
        .collect();
    assert_eq!(kbf_fuse_cluster(&hs, &cfg).unwrap().heading, 0.1);

    let xs: Vec<Box7> = [(0.0, 0.9), (0.05, 0.9), (0.1, 0.9), (3.0, 0.2)]
        .iter()
        .map(|&(x, s)| car(x, 0.0, 0.0).with_score(s))
        .collect();
    assert_eq!(kbf_fuse_cluster(&xs, &cfg).unwrap().cx, 0.05);
    assert!(kbf_fuse_cluster(&[], &cfg).is_err());
}

#[test]
fn kbf_keeps_the_majority_heading_over_flips() {
    let cfg = FusionConfig::default();
    let mut members: Vec<Box7> = (0..6).map(|_| car(0.0, 0.0, 0.8)).collect();
    members.push(car(0.0, 0.0, 0.8 - PI));
    members.push(car(0.0, 0.0, 0.8 - PI));
    assert_eq!(kbf_fuse_cluster(&members, &cfg).unwrap().heading, 0.8);
}

#[test]
fn wbf_examples() {
    let cube = |x: f64, s: f64| Box7::new([x, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0).with_score(s);
    let c = wbf_corners(&[cube(0.0, 0.5), cube(2.0, 0.5)]).unwrap();
    assert_abs_diff_eq!(c.cx, 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(c.l, 1.0, epsilon = 1e-12);
    let c = wbf_corners(&[cube(0.0, 0.9), cube(2.0, 0.1)]).unwrap();
    assert_abs_diff_eq!(c.cx, 0.2, epsilon = 1e-12);
    let p = wbf_params(&[cube(0.0, 0.9), cube(2.0, 0.1)]).unwrap();
    assert_abs_diff_eq!(p.cx, 0.2, epsilon = 1e-12);

    let wrap = wbf_params(&[car(0.0, 0.0, -3.1), car(0.0, 0.0, 3.1)]).unwrap();
    assert_abs_diff_eq!(wrap.heading.abs(), PI, epsilon = 1e-9);
    let b = car(1.0, 2.0, 0.3).with_score(0.7);
    for fused in [wbf_params(&[b, b]).unwrap(), wbf_corners(&[b, b]).unwrap()] {
        for (x, y) in fused.params().iter().zip(b.params()) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-9);
        }
    }
    assert!(wbf_params(&[]).is_err());
    assert!(wbf_corners(&[]).is_err());
}

fn reference_nms(boxes: &[Box7], t: f64) -> Vec<Box7> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| {
        boxes[j]
            .score
            .partial_cmp(&boxes[i].score)
            .unwrap()
            .then(i.cmp(&j))
    });
    let mut keep: Vec<Box7> = Vec::new();
    for i in order {
        if keep.iter().all(|k| bev_iou(k, &boxes[i]) <= t) {
            keep.push(boxes[i]);
        }
    }
    keep
}

#[test]
fn nms_matches_reference() {
    let mut r = rng(5);
    for _ in 0..200 {
        let boxes: Vec<Box7> = (0..10)
            .map(|_| random_box(&mut r, 4.0).with_score(r.random_range(0.0..1.0)))
            .collect();
        let t = r.random_range(0.0..0.8);
        assert_eq!(nms(&boxes, t), reference_nms(&boxes, t));
    }
    let a = car(0.0, 0.0, 0.0).with_score(0.9);
    let mut b = car(0.1, 0.0, 0.0).with_score(0.8);
    assert_eq!(nms(&[a, b], 0.1), vec![a]);
    b.cx = 20.0;
    assert_eq!(nms(&[a, b], 0.1).len(), 2);
}

/// One car seen by 4 detectors under 4 augmentations with Gaussian noise:
/// the fused box beats the average single proposal.
#[test]
fn noisy_object_fuses_to_one_better_box() {
    let mut r = rng(6);
    let n = Normal::new(0.0, 0.15).unwrap();
    let (mut fused_iou, mut single_iou) = (0.0, 0.0);
    for trial in 0..100 {
        let truth = car(
            r.random_range(5.0..40.0),
            r.random_range(-10.0..10.0),
            r.random_range(-PI..PI),
        );
        let mut props = Vec::new();
        for det in 0..4u32 {
            for tta in tta_variants() {
                let mut b = truth;
                b.cx += n.sample(&mut r);
                b.cy += n.sample(&mut r);
                b.cz += 0.5 * n.sample(&mut r);
                b.l += n.sample(&mut r);
                b.w += 0.5 * n.sample(&mut r);
                b.heading += 0.3 * n.sample(&mut r);
                let b = b
                    .with_score(r.random_range(0.6..0.95))
                    .with_detector(det)
                    .with_frame(trial);
                single_iou += iou_3d(&b, &truth) / 16.0;
                props.push(Proposal {
                    bbox: augment_box(&b, &tta),
                    tta,
                });
            }
        }
        let out = fuse_proposals(
            &props,
            trial,
            &FusionConfig::default(),
            FusionMethod::Kbf,
            0.1,
        )
        .unwrap();
        assert_eq!(out.len(), 1);
        fused_iou += iou_3d(&out[0], &truth);
    }
    assert!(
        fused_iou > single_iou,
        "fused {fused_iou} single {single_iou}"
    );
}

#[test]
fn two_stage_tta_fuses_each_detector_first() {
    let cfg = FusionConfig {
        two_stage_tta: true,
        ..FusionConfig::default()
    };
    let mut props = Vec::new();
    for det in 0..4u32 {
        for tta in tta_variants() {
            let b = car(10.0 + 0.05 * det as f64, 3.0, 0.4)
                .with_detector(det)
                .with_score(0.8);
            props.push(Proposal {
                bbox: augment_box(&b, &tta),
                tta,
            });
        }
    }
    let out = fuse_proposals(&props, 0, &cfg, FusionMethod::Kbf, 0.1).unwrap();
    assert_eq!(out.len(), 1);
    assert!((out[0].cx - 10.075).abs() <= 0.076);
    assert_eq!(out[0].detector_id, FUSED_DETECTOR_ID);
}

#[test]
fn every_method_sees_the_same_clusters() {
    let mut r = rng(7);
    let boxes: Vec<Box7> = (0..3)
        .flat_map(|k| {
            let c = car(12.0 * k as f64, 0.0, 0.0);
            (0..5).map(move |i| c.with_detector(i))
        })
        .map(|mut b| {
            b.cx += r.random_range(-0.3..0.3);
            b.with_score(r.random_range(0.5..1.0))
        })
        .collect();
    let set = ProposalSet::new(boxes, 5).unwrap();
    let cfg = FusionConfig::default();
    for m in [
        FusionMethod::Kbf,
        FusionMethod::WbfParams,
        FusionMethod::WbfCorners,
    ] {
        assert_eq!(fuse_with(&set, &cfg, m, 0.1).len(), 3, "{}", m.label());
    }
    assert!(fuse_with(&set, &cfg, FusionMethod::Nms, 0.1).len() >= 3);
}
