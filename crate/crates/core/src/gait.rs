//! Handcrafted gait features: 13 posture and 16 movement quantities per walk.
//!
//! Layout of the 29-dim vector (see [`GAIT_FEATURE_NAMES`]):
//!
//! ```text
//!  0      bounding-box volume
//!  1..=5  angles: neck by shoulders, right shoulder by neck & left shoulder,
//!         left shoulder by neck & right shoulder, neck by vertical & back,
//!         neck by head & back
//!  6..=9  distances to root: right hand, left hand, right foot, left foot
//!  10     stride length
//!  11,12  triangle areas: hands-neck, feet-root
//!  13..27 speed/accel/jerk for left hand, right hand, head, left foot, right foot
//!  28     gait cycle time (s)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{JointIndex as J, Pose, PoseSequence};

pub const GAIT_DIM: usize = 29;

pub const GAIT_FEATURE_NAMES: [&str; GAIT_DIM] = [
    "volume",
    "angle_neck_shoulders",
    "angle_rshoulder_neck_lshoulder",
    "angle_lshoulder_neck_rshoulder",
    "angle_neck_vertical_back",
    "angle_neck_head_back",
    "dist_rhand_root",
    "dist_lhand_root",
    "dist_rfoot_root",
    "dist_lfoot_root",
    "stride_length",
    "area_hands_neck",
    "area_feet_root",
    "lhand_speed",
    "lhand_accel",
    "lhand_jerk",
    "rhand_speed",
    "rhand_accel",
    "rhand_jerk",
    "head_speed",
    "head_accel",
    "head_jerk",
    "lfoot_speed",
    "lfoot_accel",
    "lfoot_jerk",
    "rfoot_speed",
    "rfoot_accel",
    "rfoot_jerk",
    "gait_cycle_time",
];

/// Where each component lands after a left/right reflection of the walk.
pub const GAIT_MIRROR: [usize; GAIT_DIM] = [
    0, 1, 3, 2, 4, 5, 7, 6, 9, 8, 10, 11, 12, 16, 17, 18, 13, 14, 15, 19, 20, 21, 25, 26, 27, 22,
    23, 24, 28,
];

/// Joints whose motion feeds the movement features, in vector order.
pub const MOVEMENT_JOINTS: [J; 5] = [J::LeftHand, J::RightHand, J::Head, J::LeftFoot, J::RightFoot];

type V3 = [f64; 3];

#[inline]
fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn norm(a: V3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
fn cross(a: V3, b: V3) -> V3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Angle between two rays, or `None` when either has zero length.
fn ray_angle(u: V3, v: V3) -> Option<f64> {
    let (nu, nv) = (norm(u), norm(v));
    if nu < 1e-12 || nv < 1e-12 {
        return None;
    }
    Some((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0).acos())
}

fn triangle_area(a: V3, b: V3, c: V3) -> f64 {
    0.5 * norm(cross(sub(a, c), sub(b, c)))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PostureFrameFeatures {
    pub volume: f64,
    pub angles: [f64; 5],
    /// Set where an angle had a zero-length ray and was reported as 0.
    pub degenerate: [bool; 5],
    pub distances: [f64; 4],
    pub areas: [f64; 2],
}

pub fn posture_frame(pose: &Pose) -> PostureFrameFeatures {
    let p = |j: J| pose[j.idx()];
    let mut volume = 1.0;
    for axis in 0..3 {
        let (lo, hi) = pose
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), q| (lo.min(q[axis]), hi.max(q[axis])));
        volume *= hi - lo;
    }

    let (neck, ls, rs) = (p(J::Neck), p(J::LeftShoulder), p(J::RightShoulder));
    let rays = [
        (sub(ls, neck), sub(rs, neck)),
        (sub(neck, rs), sub(ls, rs)),
        (sub(neck, ls), sub(rs, ls)),
        ([0.0, 1.0, 0.0], sub(p(J::Spine), neck)),
        (sub(p(J::Head), neck), sub(p(J::Spine), neck)),
    ];
    let mut angles = [0.0; 5];
    let mut degenerate = [false; 5];
    for (i, (u, v)) in rays.into_iter().enumerate() {
        match ray_angle(u, v) {
            Some(a) => angles[i] = a,
            None => degenerate[i] = true,
        }
    }

    let root = p(J::Root);
    let distances = [
        norm(sub(p(J::RightHand), root)),
        norm(sub(p(J::LeftHand), root)),
        norm(sub(p(J::RightFoot), root)),
        norm(sub(p(J::LeftFoot), root)),
    ];
    let areas = [
        triangle_area(p(J::LeftHand), p(J::RightHand), neck),
        triangle_area(p(J::LeftFoot), p(J::RightFoot), root),
    ];
    PostureFrameFeatures {
        volume,
        angles,
        degenerate,
        distances,
        areas,
    }
}

/// Largest left-foot to right-foot distance over the walk.
pub fn stride_length(seq: &PoseSequence) -> f64 {
    seq.frames
        .iter()
        .map(|f| norm(sub(f[J::LeftFoot.idx()], f[J::RightFoot.idx()])))
        .fold(0.0, f64::max)
}

/// Central differences inside, one-sided at both ends; output keeps length.
pub fn finite_difference(track: &[V3], dt: f64) -> Vec<V3> {
    let n = track.len();
    let mut out = vec![[0.0; 3]; n];
    if n < 2 {
        return out;
    }
    for k in 0..n {
        let (a, b, span) = match k {
            0 => (track[1], track[0], dt),
            k if k == n - 1 => (track[n - 1], track[n - 2], dt),
            k => (track[k + 1], track[k - 1], 2.0 * dt),
        };
        out[k] = sub(a, b).map(|d| d / span);
    }
    out
}

/// Per-frame norms of the `order`-th finite derivative (1 = speed,
/// 2 = acceleration, 3 = jerk).
pub fn derivative_magnitudes(track: &[V3], fps: f64, order: usize) -> Result<Vec<f64>> {
    if !(1..=3).contains(&order) {
        return Err(Error::invalid(format!("derivative order {order} not in 1..=3")));
    }
    if !(fps > 0.0) {
        return Err(Error::invalid(format!("fps must be positive, got {fps}")));
    }
    let needed = order + 1;
    if track.len() < needed {
        return Err(Error::TooFewFrames {
            order,
            needed,
            got: track.len(),
        });
    }
    let dt = 1.0 / fps;
    let mut d = track.to_vec();
    for _ in 0..order {
        d = finite_difference(&d, dt);
    }
    Ok(d.into_iter().map(norm).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeMagnitudes {
    pub speed: Vec<f64>,
    pub accel: Vec<f64>,
    pub jerk: Vec<f64>,
}

pub fn finite_derivative_magnitudes(track: &[V3], fps: f64) -> Result<DerivativeMagnitudes> {
    Ok(DerivativeMagnitudes {
        jerk: derivative_magnitudes(track, fps, 3)?,
        accel: derivative_magnitudes(track, fps, 2)?,
        speed: derivative_magnitudes(track, fps, 1)?,
    })
}

/// Foot-strike detector settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrikeConfig {
    /// Foot speed (units/s) below which a height minimum counts as contact.
    pub speed_threshold: f64,
    /// Minima closer than `ceil(min_gap_seconds * fps)` frames are merged.
    pub min_gap_seconds: f64,
}

impl Default for StrikeConfig {
    fn default() -> Self {
        StrikeConfig {
            speed_threshold: 0.05,
            min_gap_seconds: 0.25,
        }
    }
}

impl StrikeConfig {
    pub fn gap_frames(&self, fps: f64) -> usize {
        (self.min_gap_seconds * fps).ceil() as usize
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FootStrikes {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
}

/// Strike frames of one foot from its height and speed series.
///
/// A minimum is a run of equal heights strictly below both neighbouring
/// runs; a single frame is the usual strict minimum, a longer run is a flat
/// ground contact. The strike is the first frame in the run whose speed is
/// under the threshold. Strikes closer than `gap` frames are merged, keeping
/// the lower one (earlier on ties).
pub fn strikes_from_height(height: &[f64], speed: &[f64], speed_threshold: f64, gap: usize) -> Vec<usize> {
    let n = height.len();
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for k in 1..=n {
        if k == n || height[k] != height[start] {
            runs.push((start, k - 1));
            start = k;
        }
    }
    let mut candidates = Vec::new();
    for w in runs.windows(3) {
        let (prev, cur, next) = (w[0], w[1], w[2]);
        let h = height[cur.0];
        if h < height[prev.0] && h < height[next.0] {
            if let Some(k) = (cur.0..=cur.1).find(|&k| speed[k] < speed_threshold) {
                candidates.push(k);
            }
        }
    }
    let mut kept: Vec<usize> = Vec::new();
    for k in candidates {
        match kept.last_mut() {
            Some(last) if k - *last < gap => {
                if height[k] < height[*last] {
                    *last = k;
                }
            }
            _ => kept.push(k),
        }
    }
    kept
}

pub fn detect_foot_strikes(seq: &PoseSequence, fps: f64, cfg: &StrikeConfig) -> FootStrikes {
    if seq.tau() < 3 || !(fps > 0.0) {
        return FootStrikes::default();
    }
    let gap = cfg.gap_frames(fps);
    let foot = |j: J| {
        let track = seq.joint_track(j);
        let height: Vec<f64> = track.iter().map(|p| p[1]).collect();
        let speed = derivative_magnitudes(&track, fps, 1).expect("tau >= 3");
        strikes_from_height(&height, &speed, cfg.speed_threshold, gap)
    };
    FootStrikes {
        left: foot(J::LeftFoot),
        right: foot(J::RightFoot),
    }
}

/// Mean interval between consecutive same-foot strikes, pooled over both
/// feet, in seconds. Falls back to the whole duration `tau / fps`.
pub fn cycle_time_from_strikes(strikes: &FootStrikes, tau: usize, fps: f64) -> f64 {
    let mut total = 0usize;
    let mut count = 0usize;
    for foot in [&strikes.left, &strikes.right] {
        for w in foot.windows(2) {
            total += w[1] - w[0];
            count += 1;
        }
    }
    if count == 0 {
        tau as f64 / fps
    } else {
        total as f64 / count as f64 / fps
    }
}

pub fn gait_cycle_time(seq: &PoseSequence, fps: f64, cfg: &StrikeConfig) -> f64 {
    cycle_time_from_strikes(&detect_foot_strikes(seq, fps, cfg), seq.tau(), fps)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaitFeatureVector(pub [f64; GAIT_DIM]);

impl GaitFeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Components rearranged as they would be for the mirrored walk.
    pub fn mirrored(&self) -> GaitFeatureVector {
        let mut out = [0.0; GAIT_DIM];
        for (i, &j) in GAIT_MIRROR.iter().enumerate() {
            out[j] = self.0[i];
        }
        GaitFeatureVector(out)
    }
}

pub fn gait_feature_vector(seq: &PoseSequence, fps: f64) -> Result<GaitFeatureVector> {
    gait_feature_vector_with(seq, fps, &StrikeConfig::default())
}

pub fn gait_feature_vector_with(
    seq: &PoseSequence,
    fps: f64,
    cfg: &StrikeConfig,
) -> Result<GaitFeatureVector> {
    let tau = seq.tau();
    if tau < 4 {
        return Err(Error::TooFewFrames {
            order: 3,
            needed: 4,
            got: tau,
        });
    }
    let mut acc = [0.0; 12];
    for frame in &seq.frames {
        let f = posture_frame(frame);
        let values = std::iter::once(f.volume)
            .chain(f.angles)
            .chain(f.distances)
            .chain(f.areas);
        for (a, v) in acc.iter_mut().zip(values) {
            *a += v;
        }
    }
    let n = tau as f64;
    let mut out = [0.0; GAIT_DIM];
    out[..10].iter_mut().zip(&acc[..10]).for_each(|(o, a)| *o = a / n);
    out[10] = stride_length(seq);
    out[11] = acc[10] / n;
    out[12] = acc[11] / n;

    for (i, joint) in MOVEMENT_JOINTS.into_iter().enumerate() {
        let mags = finite_derivative_magnitudes(&seq.joint_track(joint), fps)?;
        for (o, series) in [&mags.speed, &mags.accel, &mags.jerk].into_iter().enumerate() {
            out[13 + 3 * i + o] = series.iter().sum::<f64>() / n;
        }
    }
    out[28] = gait_cycle_time(seq, fps, cfg);
    Ok(GaitFeatureVector(out))
}
