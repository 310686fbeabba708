mod common;

use std::time::Instant;

use common::{close, random_walk, rng};
use liarwalk::augment::{phase_shift, reflect_vertical};
use liarwalk::gait::gait_feature_vector;
use liarwalk::pose::PoseSequence;
use liarwalk::synthetic::{generate_walk, WalkParams};
use nalgebra::{Rotation3, Vector3};
use rand::Rng;

fn map_points(seq: &PoseSequence, f: impl Fn([f64; 3]) -> [f64; 3]) -> PoseSequence {
    let mut out = seq.clone();
    out.frames.iter_mut().flatten().for_each(|p| *p = f(*p));
    out
}

fn features(seq: &PoseSequence) -> [f64; 29] {
    gait_feature_vector(seq, 30.0).unwrap().0
}

#[test]
fn reflection_swaps_left_and_right_features() {
    let start = Instant::now();
    for seed in 0..20 {
        let seq = random_walk(seed, 90 + seed as usize);
        let direct = features(&reflect_vertical(&seq));
        let mirrored = gait_feature_vector(&seq, 30.0).unwrap().mirrored().0;
        for (a, b) in direct.iter().zip(&mirrored) {
            assert!(close(*a, *b, 1e-9), "seed {seed}: {a} vs {b}");
        }
    }
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn double_reflection_is_identity() {
    for seed in 0..10 {
        let seq = random_walk(seed, 60);
        assert_eq!(reflect_vertical(&reflect_vertical(&seq)), seq);
    }
}

#[test]
fn phase_shift_keeps_posture_means_on_periodic_walks() {
    for period in [20usize, 24, 30, 40] {
        let p = WalkParams {
            period_frames: period,
            frames: 4 * period,
            head_yaw_amplitude: 0.2,
            ..WalkParams::default()
        };
        let seq = generate_walk(&p, "w", "s", 1).unwrap();
        let base = features(&seq);
        for k in [period / 4, period / 2, 3 * period / 4, period + 1] {
            let shifted = features(&phase_shift(&seq, k).unwrap());
            for i in 0..13 {
                assert!(close(shifted[i], base[i], 1e-12), "p {period} k {k} component {i}");
            }
        }
    }
}

#[test]
fn scaling_is_homogeneous() {
    let mut r = rng(11);
    for seed in 0..20 {
        let seq = random_walk(seed, 80);
        let s: f64 = r.random_range(0.2..5.0);
        let a = features(&seq);
        let b = features(&map_points(&seq, |p| p.map(|v| v * s)));
        assert!(close(b[0], a[0] * s.powi(3), 1e-9));
        for i in 1..=5 {
            assert!(close(b[i], a[i], 1e-9));
        }
        for i in [6, 7, 8, 9, 10] {
            assert!(close(b[i], a[i] * s, 1e-9));
        }
        for i in [11, 12] {
            assert!(close(b[i], a[i] * s * s, 1e-9));
        }
        for i in 13..28 {
            assert!(close(b[i], a[i] * s, 1e-9));
        }
    }
}

#[test]
fn rigid_motion_leaves_angles_distances_and_areas() {
    let mut r = rng(12);
    for seed in 0..20 {
        let seq = random_walk(seed, 80);
        let t = [r.random_range(-5.0..5.0), r.random_range(-5.0..5.0), r.random_range(-5.0..5.0)];
        let axis = Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        let any = Rotation3::from_scaled_axis(axis.normalize() * r.random_range(-3.0..3.0));
        let yaw = Rotation3::from_axis_angle(&Vector3::y_axis(), r.random_range(-3.0..3.0));
        let a = features(&seq);
        let moved = |rot: Rotation3<f64>| {
            features(&map_points(&seq, |p| {
                let q = rot * Vector3::from(p);
                [q[0] + t[0], q[1] + t[1], q[2] + t[2]]
            }))
        };
        // The vertical reference is fixed, so that one angle is only
        // invariant under turns about the vertical.
        let b = moved(any);
        for i in [1, 2, 3, 5, 6, 7, 8, 9, 10, 11, 12] {
            assert!(close(b[i], a[i], 1e-9), "component {i}");
        }
        for i in 13..28 {
            assert!(close(b[i], a[i], 1e-9), "component {i}");
        }
        assert!(close(moved(yaw)[4], a[4], 1e-9));
    }
}

#[test]
fn time_reversal_keeps_motion_magnitudes() {
    for seed in 0..10 {
        let seq = random_walk(seed, 70);
        let mut rev = seq.clone();
        rev.frames.reverse();
        let (a, b) = (features(&seq), features(&rev));
        for i in 13..28 {
            assert!(close(a[i], b[i], 1e-9));
        }
    }
}
