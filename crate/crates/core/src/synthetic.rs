//! Seeded kinematic walk generator for end-to-end runs without the study
//! data. World frame: `y` up, walking along `+z`, the subject's left on `+x`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gesture::GestureAnnotation;
use crate::pose::{DataPoint, Dataset, JointIndex as J, Pose, PoseSequence, NUM_JOINTS};

const PELVIS_HEIGHT: f64 = 0.95;
const HIP_HALF_WIDTH: f64 = 0.1;
const SHOULDER_HALF_WIDTH: f64 = 0.19;
const SHOULDER_HEIGHT: f64 = 1.45;
const UPPER_ARM: f64 = 0.29;
const FOREARM: f64 = 0.27;
const FOOT_GROUND: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkParams {
    pub period_frames: usize,
    pub fps: f64,
    pub frames: usize,
    /// Metres per second along `+z`.
    pub forward_speed: f64,
    /// Peak arm swing angle in radians.
    pub arm_swing_amplitude: f64,
    /// Added to both hand heights, metres.
    pub hand_height_offset: f64,
    /// Peak head yaw in radians.
    pub head_yaw_amplitude: f64,
    pub step_height: f64,
    pub noise_std: f64,
    /// Frames into the gait cycle at which the walk starts.
    pub phase_offset: usize,
    pub class_label: u8,
    pub seed: u64,
}

impl Default for WalkParams {
    fn default() -> Self {
        WalkParams {
            period_frames: 30,
            fps: 30.0,
            frames: 120,
            forward_speed: 1.2,
            arm_swing_amplitude: 0.25,
            hand_height_offset: 0.0,
            head_yaw_amplitude: 0.1,
            step_height: 0.12,
            noise_std: 0.0,
            phase_offset: 0,
            class_label: 0,
            seed: 0,
        }
    }
}

impl WalkParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("walk params: {m}")));
        if self.period_frames < 4 {
            return bad("period_frames must be at least 4");
        }
        if self.frames < self.period_frames {
            return bad("frames must be at least period_frames");
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad("fps must be positive");
        }
        if !(self.forward_speed > 0.0 && self.forward_speed.is_finite()) {
            return bad("forward_speed must be positive");
        }
        let amps = [
            self.arm_swing_amplitude,
            self.head_yaw_amplitude,
            self.step_height,
            self.noise_std,
        ];
        if amps.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return bad("amplitudes and noise_std must be non-negative");
        }
        if !self.hand_height_offset.is_finite() {
            return bad("hand_height_offset must be finite");
        }
        if self.class_label > 1 {
            return bad("class_label must be 0 or 1");
        }
        Ok(())
    }
}

fn rot_x(v: [f64; 3], a: f64) -> [f64; 3] {
    let (s, c) = a.sin_cos();
    [v[0], c * v[1] - s * v[2], s * v[1] + c * v[2]]
}

fn rot_y(v: [f64; 3], a: f64) -> [f64; 3] {
    let (s, c) = a.sin_cos();
    [c * v[0] + s * v[2], v[1], -s * v[0] + c * v[2]]
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// World position of a foot at foot-time `u` (frames). Swing occupies
/// `0 < u mod p < p/2`; the rest of the cycle is flat ground contact.
fn foot(p: &WalkParams, x: f64, u: usize, stride: f64) -> [f64; 3] {
    let period = p.period_frames;
    let (n, m) = (u / period, u % period);
    let base = stride * n as f64;
    if m > 0 && 2 * m < period {
        let s = 2.0 * m as f64 / period as f64;
        let phase = 2.0 * std::f64::consts::PI * m as f64 / period as f64;
        let lift = (p.step_height * phase.sin()).max(0.0);
        [x, FOOT_GROUND + lift, base + stride * (1.0 - (std::f64::consts::PI * s).cos()) / 2.0]
    } else {
        let landed = if m == 0 { base } else { base + stride };
        [x, FOOT_GROUND, landed]
    }
}

/// Deterministic walk for the given parameters and seed.
pub fn generate_walk(p: &WalkParams, id: &str, subject_id: &str, walk_index: u8) -> Result<PoseSequence> {
    p.validate()?;
    let period = p.period_frames;
    let stride = p.forward_speed * period as f64 / p.fps;
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut frames = Vec::with_capacity(p.frames);
    for k in 0..p.frames {
        let t = k + p.phase_offset;
        let root_z = p.forward_speed * t as f64 / p.fps;
        let root = [0.0, PELVIS_HEIGHT, root_z];
        let phase = two_pi * (t % period) as f64 / period as f64;
        let mut pose: Pose = [[0.0; 3]; NUM_JOINTS];
        pose[J::Root.idx()] = root;
        pose[J::Spine.idx()] = add(root, [0.0, 0.27, 0.0]);
        let neck = add(root, [0.0, 0.55, 0.0]);
        pose[J::Neck.idx()] = neck;
        let yaw = p.head_yaw_amplitude * (phase + std::f64::consts::FRAC_PI_3).sin();
        pose[J::Head.idx()] = add(neck, rot_y([0.0, 0.16, 0.07], yaw));

        // The right foot runs half a period ahead of the left; each arm swings
        // against the leg on its own side.
        let half = period / 2;
        let lag = stride * half as f64 / period as f64;
        let mut lf = foot(p, HIP_HALF_WIDTH, t, stride);
        let mut rf = foot(p, -HIP_HALF_WIDTH, t + half, stride);
        lf[2] -= 0.25 * stride;
        rf[2] -= 0.25 * stride + lag;
        for (hip_j, knee_j, foot_j, x, f) in [
            (J::LeftHip, J::LeftKnee, J::LeftFoot, HIP_HALF_WIDTH, lf),
            (J::RightHip, J::RightKnee, J::RightFoot, -HIP_HALF_WIDTH, rf),
        ] {
            let hip = add(root, [x, -0.02, 0.0]);
            pose[hip_j.idx()] = hip;
            pose[knee_j.idx()] = [x, (hip[1] + f[1]) / 2.0, (hip[2] + f[2]) / 2.0 + 0.06];
            pose[foot_j.idx()] = f;
        }
        for (sh_j, el_j, hand_j, x, swing) in [
            (J::LeftShoulder, J::LeftElbow, J::LeftHand, SHOULDER_HALF_WIDTH, phase.sin()),
            (J::RightShoulder, J::RightElbow, J::RightHand, -SHOULDER_HALF_WIDTH, -phase.sin()),
        ] {
            let shoulder = add(root, [x, SHOULDER_HEIGHT - PELVIS_HEIGHT, 0.0]);
            let angle = p.arm_swing_amplitude * swing;
            let elbow = add(shoulder, rot_x([0.0, -UPPER_ARM, 0.0], angle));
            let hand = add(elbow, rot_x([0.0, -FOREARM, 0.03], angle));
            pose[sh_j.idx()] = shoulder;
            pose[el_j.idx()] = elbow;
            pose[hand_j.idx()] = add(hand, [0.0, p.hand_height_offset, 0.0]);
        }
        frames.push(pose);
    }
    if p.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        let normal = Normal::new(0.0, p.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
        for v in frames.iter_mut().flatten().flatten() {
            *v += normal.sample(&mut rng);
        }
    }
    PoseSequence::new(id, subject_id, walk_index, p.fps, frames)
}

/// Per-class gesture probabilities. `hands_in_pockets` holds the
/// probabilities of zero, one and two hands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GestureProbs {
    pub hands_in_pockets: [f64; 3],
    pub looking_around: f64,
    pub touching_face: f64,
    pub touching_shirt: f64,
    pub touching_hair: f64,
    pub hands_folded: f64,
    pub looking_at_phone: f64,
}

impl GestureProbs {
    /// Rates for natural walks.
    pub fn natural() -> Self {
        GestureProbs {
            hands_in_pockets: [0.80, 0.12, 0.08],
            looking_around: 0.15,
            touching_face: 0.10,
            touching_shirt: 0.12,
            touching_hair: 0.08,
            hands_folded: 0.06,
            looking_at_phone: 0.06,
        }
    }

    /// Rates for deceptive walks: more pockets, looking around, face
    /// touching and phone checks; hair and folded hands unchanged.
    pub fn deceptive() -> Self {
        GestureProbs {
            hands_in_pockets: [0.58, 0.24, 0.18],
            looking_around: 0.42,
            touching_face: 0.20,
            touching_shirt: 0.14,
            touching_hair: 0.08,
            hands_folded: 0.06,
            looking_at_phone: 0.14,
        }
    }

    pub fn never() -> Self {
        GestureProbs {
            hands_in_pockets: [1.0, 0.0, 0.0],
            looking_around: 0.0,
            touching_face: 0.0,
            touching_shirt: 0.0,
            touching_hair: 0.0,
            hands_folded: 0.0,
            looking_at_phone: 0.0,
        }
    }

    fn flags(&self) -> [f64; 6] {
        [
            self.looking_around,
            self.touching_face,
            self.touching_shirt,
            self.touching_hair,
            self.hands_folded,
            self.looking_at_phone,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |p: f64| (0.0..=1.0).contains(&p);
        if !self.hands_in_pockets.iter().chain(&self.flags()).all(|&p| in_unit(p)) {
            return Err(Error::invalid("gesture probabilities must lie in [0, 1]"));
        }
        if (self.hands_in_pockets.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("hands_in_pockets probabilities must sum to 1"));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> GestureAnnotation {
        let u: f64 = rng.random();
        let [p0, p1, _] = self.hands_in_pockets;
        let pockets = if u < p0 {
            0
        } else if u < p0 + p1 {
            1
        } else {
            2
        };
        let mut values = [pockets, 0, 0, 0, 0, 0, 0];
        for (v, p) in values[1..].iter_mut().zip(self.flags()) {
            *v = i64::from(rng.random::<f64>() < p);
        }
        GestureAnnotation::from_values(values).expect("sampled values are in domain")
    }
}

/// Class template; everything except fps, label, phase and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkTemplate {
    pub period_frames: usize,
    pub frames: usize,
    pub forward_speed: f64,
    pub arm_swing_amplitude: f64,
    pub hand_height_offset: f64,
    pub head_yaw_amplitude: f64,
    pub step_height: f64,
    pub noise_std: f64,
}

impl Default for WalkTemplate {
    fn default() -> Self {
        let p = WalkParams::default();
        WalkTemplate {
            period_frames: p.period_frames,
            frames: p.frames,
            forward_speed: p.forward_speed,
            arm_swing_amplitude: p.arm_swing_amplitude,
            hand_height_offset: p.hand_height_offset,
            head_yaw_amplitude: p.head_yaw_amplitude,
            step_height: p.step_height,
            noise_std: 0.002,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassTemplate {
    #[serde(default)]
    pub walk: WalkTemplate,
    pub gestures: GestureProbs,
}

/// Per-point random perturbation of the class template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Jitter {
    /// Period varies uniformly by up to this many frames either way.
    pub period_frames: usize,
    /// Length varies uniformly by up to this many frames either way.
    pub frames: usize,
    /// Speed, amplitudes and step height scale by `1 + U(-r, r)`.
    pub relative: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        Jitter {
            period_frames: 3,
            frames: 20,
            relative: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub fps: f64,
    /// Points generated for labels 0 and 1.
    pub count_per_class: [usize; 2],
    /// Consecutive points of a class share a subject id.
    pub walks_per_subject: usize,
    pub jitter: Jitter,
    pub classes: [ClassTemplate; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            fps: 30.0,
            count_per_class: [500, 500],
            walks_per_subject: 4,
            jitter: Jitter::default(),
            classes: [
                ClassTemplate {
                    walk: WalkTemplate {
                        arm_swing_amplitude: 0.25,
                        head_yaw_amplitude: 0.05,
                        ..WalkTemplate::default()
                    },
                    gestures: GestureProbs::natural(),
                },
                ClassTemplate {
                    walk: WalkTemplate {
                        arm_swing_amplitude: 0.05,
                        head_yaw_amplitude: 0.35,
                        ..WalkTemplate::default()
                    },
                    gestures: GestureProbs::deceptive(),
                },
            ],
        }
    }
}

impl SynthConfig {
    /// Both classes share the natural template.
    pub fn null() -> Self {
        let base = SynthConfig::default();
        let same = base.classes[0].clone();
        SynthConfig {
            classes: [same.clone(), same],
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count_per_class.contains(&0) {
            return Err(Error::invalid("count_per_class entries must be at least 1"));
        }
        if self.walks_per_subject == 0 {
            return Err(Error::invalid("walks_per_subject must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.jitter.relative) {
            return Err(Error::invalid("jitter.relative must lie in [0, 1)"));
        }
        for c in &self.classes {
            c.gestures.validate()?;
            if c.walk.period_frames < 4 + self.jitter.period_frames {
                return Err(Error::invalid("period_frames minus jitter must stay at least 4"));
            }
            if c.walk.frames < self.jitter.frames + c.walk.period_frames + self.jitter.period_frames {
                return Err(Error::invalid("frames minus jitter must cover one full period"));
            }
        }
        Ok(())
    }
}

/// splitmix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the point at global `index`: `splitmix64(master ^ splitmix64(index))`.
pub fn point_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

fn jittered(rng: &mut ChaCha8Rng, base: f64, r: f64) -> f64 {
    if r == 0.0 {
        base
    } else {
        base * (1.0 + rng.random_range(-r..=r))
    }
}

fn jittered_int(rng: &mut ChaCha8Rng, base: usize, j: usize) -> usize {
    if j == 0 {
        base
    } else {
        base + rng.random_range(0..=2 * j) - j
    }
}

/// Walk parameters of the point at `index` within class `label`.
pub fn point_params(cfg: &SynthConfig, label: u8, seed: u64) -> (WalkParams, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = &cfg.classes[label as usize].walk;
    let r = cfg.jitter.relative;
    let period_frames = jittered_int(&mut rng, t.period_frames, cfg.jitter.period_frames);
    let frames = jittered_int(&mut rng, t.frames, cfg.jitter.frames).max(period_frames);
    let params = WalkParams {
        period_frames,
        fps: cfg.fps,
        frames,
        forward_speed: jittered(&mut rng, t.forward_speed, r),
        arm_swing_amplitude: jittered(&mut rng, t.arm_swing_amplitude, r),
        hand_height_offset: t.hand_height_offset,
        head_yaw_amplitude: jittered(&mut rng, t.head_yaw_amplitude, r),
        step_height: jittered(&mut rng, t.step_height, r),
        noise_std: t.noise_std,
        phase_offset: rng.random_range(0..period_frames),
        class_label: label,
        seed: rng.random(),
    };
    (params, rng)
}

/// Label-0 points first, then label-1 points. Point `i` of class `c` has id
/// `c{c}-{i:05}`, subject `c{c}-s{i / walks_per_subject}` and walk index
/// `i % 4 + 1`.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut jobs = Vec::new();
    for label in 0..2u8 {
        for i in 0..cfg.count_per_class[label as usize] {
            jobs.push((label, i));
        }
    }
    let points = jobs
        .iter()
        .enumerate()
        .map(|(global, &(label, i))| {
            let seed = point_seed(cfg.seed, global as u64);
            let (params, mut rng) = point_params(cfg, label, seed);
            let gestures = cfg.classes[label as usize].gestures.sample(&mut rng);
            let sequence = generate_walk(
                &params,
                &format!("c{label}-{i:05}"),
                &format!("c{label}-s{}", i / cfg.walks_per_subject),
                (i % 4 + 1) as u8,
            )?;
            Ok(DataPoint {
                sequence,
                gestures,
                label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gait::{derivative_magnitudes, gait_cycle_time, StrikeConfig};
    use crate::pose::similarity_normalize;

    fn clean(p: usize) -> WalkParams {
        WalkParams {
            period_frames: p,
            frames: 6 * p,
            ..WalkParams::default()
        }
    }

    #[test]
    fn same_seed_same_walk() {
        let p = WalkParams {
            noise_std: 0.01,
            seed: 9,
            ..WalkParams::default()
        };
        let a = generate_walk(&p, "a", "s", 1).unwrap();
        let b = generate_walk(&p, "a", "s", 1).unwrap();
        assert_eq!(a, b);
        let c = generate_walk(&WalkParams { seed: 10, ..p }, "a", "s", 1).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noise_free_walks_are_periodic_up_to_translation() {
        for p in [20, 25, 30] {
            for offset in [0, 7] {
                let params = WalkParams {
                    phase_offset: offset,
                    ..clean(p)
                };
                let seq = generate_walk(&params, "a", "s", 1).unwrap();
                let shift = params.forward_speed * p as f64 / params.fps;
                for k in p..seq.tau() - p {
                    for j in 0..NUM_JOINTS {
                        let (a, b) = (seq.frames[k + p][j], seq.frames[k][j]);
                        assert!((a[0] - b[0]).abs() < 1e-12);
                        assert!((a[1] - b[1]).abs() < 1e-12);
                        assert!((a[2] - b[2] - shift).abs() < 1e-9, "p {p} k {k} joint {j}");
                    }
                }
            }
        }
    }

    #[test]
    fn feet_alternate_and_touch_ground() {
        let seq = generate_walk(&clean(30), "a", "s", 1).unwrap();
        let lf = seq.joint_track(J::LeftFoot);
        let rf = seq.joint_track(J::RightFoot);
        for (l, r) in lf.iter().zip(&rf) {
            assert!(l[1] >= FOOT_GROUND && r[1] >= FOOT_GROUND);
            assert!(l[1] == FOOT_GROUND || r[1] == FOOT_GROUND, "one foot always on the ground");
        }
        // Feet never move backwards.
        for w in lf.windows(2).chain(rf.windows(2)) {
            assert!(w[1][2] >= w[0][2] - 1e-12);
        }
    }

    #[test]
    fn cycle_time_recovered() {
        for p in [20, 24, 30, 40] {
            let seq = generate_walk(&clean(p), "a", "s", 1).unwrap();
            let t = gait_cycle_time(&seq, 30.0, &StrikeConfig::default());
            assert!((t - p as f64 / 30.0).abs() <= 1.5 / 30.0, "p {p}: {t}");
        }
    }

    #[test]
    fn still_arms_ride_the_body() {
        let params = WalkParams {
            arm_swing_amplitude: 0.0,
            ..clean(30)
        };
        let seq = generate_walk(&params, "a", "s", 1).unwrap();
        for hand in [J::LeftHand, J::RightHand] {
            let speed = derivative_magnitudes(&seq.joint_track(hand), params.fps, 1).unwrap();
            let mean = speed.iter().sum::<f64>() / speed.len() as f64;
            assert!((mean - params.forward_speed).abs() <= 0.05 * params.forward_speed);
        }
    }

    #[test]
    fn generated_walks_normalize() {
        let ds = generate_dataset(&SynthConfig {
            count_per_class: [5, 5],
            ..SynthConfig::default()
        })
        .unwrap();
        for p in &ds.points {
            p.sequence.validate().unwrap();
            similarity_normalize(&p.sequence).unwrap();
        }
    }

    #[test]
    fn dataset_counts_ids_and_determinism() {
        let cfg = SynthConfig {
            count_per_class: [6, 4],
            seed: 5,
            ..SynthConfig::default()
        };
        let a = generate_dataset(&cfg).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a.points.iter().filter(|p| p.label == 1).count(), 4);
        assert_eq!(a.points[0].sequence.id, "c0-00000");
        assert_eq!(a.points[5].sequence.subject_id, "c0-s1");
        assert_eq!(a.points[5].sequence.walk_index, 2);
        assert_eq!(a, generate_dataset(&cfg).unwrap());
    }

    #[test]
    fn pocket_rates_match_configuration() {
        let cfg = SynthConfig {
            count_per_class: [400, 400],
            seed: 11,
            ..SynthConfig::default()
        };
        let ds = generate_dataset(&cfg).unwrap();
        for label in 0..2u8 {
            let pts: Vec<_> = ds.points.iter().filter(|p| p.label == label).collect();
            let n = pts.len() as f64;
            let probs = &cfg.classes[label as usize].gestures;
            let expected = 1.0 - probs.hands_in_pockets[0];
            let rate = pts.iter().filter(|p| p.gestures.hands_in_pockets > 0).count() as f64 / n;
            let sigma = (expected * (1.0 - expected) / n).sqrt();
            assert!((rate - expected).abs() <= 3.0 * sigma, "label {label}: {rate} vs {expected}");
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(generate_walk(&WalkParams { period_frames: 3, ..WalkParams::default() }, "a", "s", 1).is_err());
        assert!(generate_walk(&WalkParams { frames: 10, ..WalkParams::default() }, "a", "s", 1).is_err());
        assert!(generate_walk(&WalkParams { noise_std: -1.0, ..WalkParams::default() }, "a", "s", 1).is_err());
        let mut cfg = SynthConfig::default();
        cfg.classes[1].gestures.looking_around = 1.5;
        assert!(generate_dataset(&cfg).is_err());
        let mut cfg = SynthConfig::default();
        cfg.count_per_class = [0, 3];
        assert!(generate_dataset(&cfg).is_err());
    }

    #[test]
    fn seeds_are_mixed() {
        assert_ne!(point_seed(1, 0), point_seed(1, 1));
        assert_ne!(point_seed(1, 0), point_seed(2, 0));
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
    }
}
