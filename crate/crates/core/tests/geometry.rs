mod common;

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use approx::assert_abs_diff_eq;
use common::*;
use pseudofuse::geometry::{bev_iou, iou_3d, points_in_box, transform_box, Box7, EgoPose};

fn square(angle: f64) -> Box7 {
    Box7::new([0.0, 0.0, 0.0], [2.0, 2.0, 1.0], angle)
}

#[test]
fn analytic_cases() {
    let a = car(3.0, -1.0, 0.4);
    assert_abs_diff_eq!(bev_iou(&a, &a), 1.0, epsilon = 1e-9);
    assert_abs_diff_eq!(iou_3d(&a, &a), 1.0, epsilon = 1e-9);

    let far = car(30.0, -1.0, 0.4);
    assert_eq!(bev_iou(&a, &far), 0.0);
    assert_eq!(iou_3d(&a, &far), 0.0);

    // Half-length shift: intersection 2.25 x 1.9 of two 4.5 x 1.9 boxes.
    let b = Box7::new([0.0, 0.0, 0.8], [4.5, 1.9, 1.6], 0.0);
    let mut c = b;
    c.cx = 2.25;
    assert_abs_diff_eq!(bev_iou(&b, &c), 1.0 / 3.0, epsilon = 1e-9);

    // Square against itself turned 45 degrees: a regular octagon.
    assert_abs_diff_eq!(
        bev_iou(&square(0.0), &square(FRAC_PI_4)),
        0.5f64.sqrt(),
        epsilon = 1e-9
    );

    // 4 x 2 against its quarter turn: 2 x 2 overlap.
    let r = Box7::new([0.0, 0.0, 0.0], [4.0, 2.0, 1.0], 0.0);
    let q = Box7::new([0.0, 0.0, 0.0], [4.0, 2.0, 1.0], FRAC_PI_2);
    assert_abs_diff_eq!(bev_iou(&r, &q), 1.0 / 3.0, epsilon = 1e-9);

    // Same footprint, half-height vertical offset.
    let mut up = b;
    up.cz += 0.8;
    assert_abs_diff_eq!(bev_iou(&b, &up), 1.0, epsilon = 1e-9);
    assert_abs_diff_eq!(iou_3d(&b, &up), 1.0 / 3.0, epsilon = 1e-9);

    // Heading flips do not change the footprint.
    let mut flipped = a;
    flipped.heading -= PI;
    assert_abs_diff_eq!(bev_iou(&a, &flipped), 1.0, epsilon = 1e-9);
}

#[test]
fn monte_carlo_spot_check() {
    let mut r = rng(11);
    for _ in 0..20 {
        let a = random_box(&mut r, 3.0);
        let b = random_neighbour(&mut r, &a);
        let mc = monte_carlo_iou(&a, &b, 200_000, false, &mut r);
        assert_abs_diff_eq!(bev_iou(&a, &b), mc, epsilon = 1e-2);
        let mc3 = monte_carlo_iou(&a, &b, 200_000, true, &mut r);
        assert_abs_diff_eq!(iou_3d(&a, &b), mc3, epsilon = 1e-2);
    }
}

#[test]
fn pose_composition() {
    let p = EgoPose::from_yaw(0.7, [10.0, -3.0, 0.5], 4);
    let b = car(2.0, 1.0, -0.3);
    let w = transform_box(&b, &p);
    assert_abs_diff_eq!(w.heading, 0.4, epsilon = 1e-12);
    let back = transform_box(&w, &p.inverse());
    for (x, y) in back.params().iter().zip(b.params()) {
        assert_abs_diff_eq!(*x, y, epsilon = 1e-12);
    }
}

#[test]
fn points_counted_in_rotated_box() {
    let b = Box7::new([5.0, 5.0, 1.0], [4.0, 2.0, 2.0], FRAC_PI_2);
    let pts = [
        [5.0, 6.9, 1.0],
        [6.9, 5.0, 1.0],
        [5.0, 5.0, 2.5],
        [5.2, 4.0, 0.1],
    ];
    assert_eq!(points_in_box(&b, &pts), 2);
}
