//! Shared fixtures and a brute-force gait feature oracle.
#![allow(dead_code)]

use liarwalk::pose::{Pose, PoseSequence};
use liarwalk::synthetic::{generate_walk, WalkParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Every joint uniform in a box, independently per frame.
pub fn random_cloud(seed: u64, tau: usize) -> PoseSequence {
    let mut r = rng(seed);
    let frames = (0..tau)
        .map(|_| {
            let mut pose: Pose = [[0.0; 3]; 16];
            for p in pose.iter_mut() {
                *p = [r.random_range(-1.0..1.0), r.random_range(0.0..2.0), r.random_range(-1.0..1.0)];
            }
            pose
        })
        .collect();
    PoseSequence::new(format!("cloud{seed}"), "s", 1, 30.0, frames).unwrap()
}

/// A noise-free synthetic walk with random parameters, a fixed random
/// offset per joint (so no three joints stay collinear) and a random turn
/// about the vertical axis. Foot heights keep their flat ground contacts.
pub fn random_walk(seed: u64, tau: usize) -> PoseSequence {
    let mut r = rng(seed);
    let period = r.random_range(8..=40usize.min(tau));
    let p = WalkParams {
        period_frames: period,
        frames: tau,
        forward_speed: r.random_range(0.5..2.0),
        arm_swing_amplitude: r.random_range(0.0..0.5),
        hand_height_offset: r.random_range(-0.1..0.1),
        head_yaw_amplitude: r.random_range(0.0..0.4),
        step_height: r.random_range(0.05..0.2),
        phase_offset: r.random_range(0..period),
        ..WalkParams::default()
    };
    let mut seq = generate_walk(&p, &format!("walk{seed}"), "s", 1).unwrap();
    let offsets: Vec<[f64; 3]> = (0..16)
        .map(|_| [r.random_range(-0.02..0.02), r.random_range(-0.02..0.02), r.random_range(-0.02..0.02)])
        .collect();
    let (s, c) = r.random_range(-3.0f64..3.0).sin_cos();
    for frame in &mut seq.frames {
        for (q, o) in frame.iter_mut().zip(&offsets) {
            let v = [q[0] + o[0], q[1] + o[1], q[2] + o[2]];
            *q = [c * v[0] + s * v[2], v[1], -s * v[0] + c * v[2]];
        }
    }
    seq
}

/// Half random clouds, half structured walks; tau in [20, 300].
pub fn oracle_case(seed: u64) -> PoseSequence {
    let tau = rng(seed ^ 0xA5A5).random_range(20..=300);
    if seed.is_multiple_of(2) {
        random_walk(seed, tau)
    } else {
        random_cloud(seed, tau)
    }
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

// ---------------------------------------------------------------------------
// Oracle. Written from the feature definitions only.

const ROOT: usize = 0;
const SPINE: usize = 1;
const NECK: usize = 2;
const HEAD: usize = 3;
const LSHOULDER: usize = 4;
const LHAND: usize = 6;
const RSHOULDER: usize = 7;
const RHAND: usize = 9;
const LFOOT: usize = 12;
const RFOOT: usize = 15;

fn minus(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn length(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn angle_at(u: [f64; 3], v: [f64; 3]) -> f64 {
    let (lu, lv) = (length(u), length(v));
    if lu < 1e-12 || lv < 1e-12 {
        return 0.0;
    }
    let c = (u[0] * v[0] + u[1] * v[1] + u[2] * v[2]) / (lu * lv);
    c.clamp(-1.0, 1.0).acos()
}

fn area(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    let (u, v) = (minus(b, a), minus(c, a));
    let x = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    length(x) / 2.0
}

/// Derivative of a scalar series: central inside, one-sided at the ends.
fn deriv(x: &[f64], dt: f64) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let lo = k.saturating_sub(1);
            let hi = (k + 1).min(n - 1);
            (x[hi] - x[lo]) / ((hi - lo) as f64 * dt)
        })
        .collect()
}

/// Norm series of the `order`-th derivative of joint `j`.
fn motion(seq: &PoseSequence, j: usize, order: usize, dt: f64) -> Vec<f64> {
    let mut axes: Vec<Vec<f64>> = (0..3).map(|a| seq.frames.iter().map(|f| f[j][a]).collect()).collect();
    for _ in 0..order {
        axes = axes.iter().map(|s| deriv(s, dt)).collect();
    }
    (0..seq.tau())
        .map(|k| (axes[0][k] * axes[0][k] + axes[1][k] * axes[1][k] + axes[2][k] * axes[2][k]).sqrt())
        .collect()
}

fn strikes(height: &[f64], speed: &[f64], threshold: f64, gap: usize) -> Vec<usize> {
    let n = height.len();
    let mut found = Vec::new();
    let mut a = 0;
    while a < n {
        let mut b = a;
        while b + 1 < n && height[b + 1] == height[a] {
            b += 1;
        }
        let is_min = a > 0 && b + 1 < n && height[a - 1] > height[a] && height[b + 1] > height[a];
        if is_min {
            if let Some(k) = (a..=b).find(|&k| speed[k] < threshold) {
                found.push(k);
            }
        }
        a = b + 1;
    }
    let mut merged: Vec<usize> = Vec::new();
    for k in found {
        if let Some(&last) = merged.last() {
            if k - last < gap {
                if height[k] < height[last] {
                    *merged.last_mut().unwrap() = k;
                }
                continue;
            }
        }
        merged.push(k);
    }
    merged
}

pub fn oracle_gait(seq: &PoseSequence, fps: f64) -> [f64; 29] {
    let n = seq.tau() as f64;
    let dt = 1.0 / fps;
    let mut out = [0.0; 29];
    let mean = |f: &dyn Fn(&Pose) -> f64| seq.frames.iter().map(f).sum::<f64>() / n;

    out[0] = mean(&|f| {
        (0..3)
            .map(|a| {
                let mut v: Vec<f64> = f.iter().map(|p| p[a]).collect();
                v.sort_by(f64::total_cmp);
                v[15] - v[0]
            })
            .product()
    });
    out[1] = mean(&|f| angle_at(minus(f[LSHOULDER], f[NECK]), minus(f[RSHOULDER], f[NECK])));
    out[2] = mean(&|f| angle_at(minus(f[NECK], f[RSHOULDER]), minus(f[LSHOULDER], f[RSHOULDER])));
    out[3] = mean(&|f| angle_at(minus(f[NECK], f[LSHOULDER]), minus(f[RSHOULDER], f[LSHOULDER])));
    out[4] = mean(&|f| angle_at([0.0, 1.0, 0.0], minus(f[SPINE], f[NECK])));
    out[5] = mean(&|f| angle_at(minus(f[HEAD], f[NECK]), minus(f[SPINE], f[NECK])));
    out[6] = mean(&|f| length(minus(f[RHAND], f[ROOT])));
    out[7] = mean(&|f| length(minus(f[LHAND], f[ROOT])));
    out[8] = mean(&|f| length(minus(f[RFOOT], f[ROOT])));
    out[9] = mean(&|f| length(minus(f[LFOOT], f[ROOT])));
    out[10] = seq.frames.iter().map(|f| length(minus(f[LFOOT], f[RFOOT]))).fold(0.0, f64::max);
    out[11] = mean(&|f| area(f[LHAND], f[RHAND], f[NECK]));
    out[12] = mean(&|f| area(f[LFOOT], f[RFOOT], f[ROOT]));
    for (i, j) in [LHAND, RHAND, HEAD, LFOOT, RFOOT].into_iter().enumerate() {
        for order in 1..=3 {
            out[13 + 3 * i + order - 1] = motion(seq, j, order, dt).iter().sum::<f64>() / n;
        }
    }

    let gap = (0.25 * fps).ceil() as usize;
    let mut intervals = Vec::new();
    for j in [LFOOT, RFOOT] {
        let h: Vec<f64> = seq.frames.iter().map(|f| f[j][1]).collect();
        let s = strikes(&h, &motion(seq, j, 1, dt), 0.05, gap);
        intervals.extend(s.windows(2).map(|w| w[1] - w[0]));
    }
    out[28] = if intervals.is_empty() {
        n / fps
    } else {
        intervals.iter().sum::<usize>() as f64 / intervals.len() as f64 / fps
    };
    out
}
