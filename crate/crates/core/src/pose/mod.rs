//! Skeletal pose sequences, datasets, and the preprocessing that turns raw
//! poses into classifier input.

mod io;
mod scaling;
mod similarity;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gesture::GestureAnnotation;

pub use io::{parse_dataset, parse_dataset_str, write_dataset, write_dataset_string};
pub use scaling::{condition_length, minmax_apply, minmax_fit, NormStats};
pub use similarity::{
    similarity_normalize, similarity_normalize_with_transform, umeyama, Similarity,
};

pub const NUM_JOINTS: usize = 16;
pub const POSE_DIM: usize = NUM_JOINTS * 3;

/// One frame: 16 joints, each an (x, y, z) position.
pub type Pose = [[f64; 3]; NUM_JOINTS];

/// Fixed joint layout. `y` is up in normalized space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(usize)]
pub enum JointIndex {
    Root = 0,
    Spine = 1,
    Neck = 2,
    Head = 3,
    LeftShoulder = 4,
    LeftElbow = 5,
    LeftHand = 6,
    RightShoulder = 7,
    RightElbow = 8,
    RightHand = 9,
    LeftHip = 10,
    LeftKnee = 11,
    LeftFoot = 12,
    RightHip = 13,
    RightKnee = 14,
    RightFoot = 15,
}

impl JointIndex {
    pub const ALL: [JointIndex; NUM_JOINTS] = [
        JointIndex::Root,
        JointIndex::Spine,
        JointIndex::Neck,
        JointIndex::Head,
        JointIndex::LeftShoulder,
        JointIndex::LeftElbow,
        JointIndex::LeftHand,
        JointIndex::RightShoulder,
        JointIndex::RightElbow,
        JointIndex::RightHand,
        JointIndex::LeftHip,
        JointIndex::LeftKnee,
        JointIndex::LeftFoot,
        JointIndex::RightHip,
        JointIndex::RightKnee,
        JointIndex::RightFoot,
    ];

    /// Left/right mirror pairs; joints 0-3 mirror onto themselves.
    pub const MIRROR_PAIRS: [(JointIndex, JointIndex); 6] = [
        (JointIndex::LeftShoulder, JointIndex::RightShoulder),
        (JointIndex::LeftElbow, JointIndex::RightElbow),
        (JointIndex::LeftHand, JointIndex::RightHand),
        (JointIndex::LeftHip, JointIndex::RightHip),
        (JointIndex::LeftKnee, JointIndex::RightKnee),
        (JointIndex::LeftFoot, JointIndex::RightFoot),
    ];

    #[inline]
    pub fn idx(self) -> usize {
        self as usize
    }

    pub fn mirror(self) -> JointIndex {
        for (l, r) in Self::MIRROR_PAIRS {
            if self == l {
                return r;
            }
            if self == r {
                return l;
            }
        }
        self
    }
}

/// A single walk: `tau` frames of 16 joints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSequence {
    pub id: String,
    pub subject_id: String,
    pub walk_index: u8,
    pub fps: f64,
    pub frames: Vec<Pose>,
}

impl PoseSequence {
    pub fn new(
        id: impl Into<String>,
        subject_id: impl Into<String>,
        walk_index: u8,
        fps: f64,
        frames: Vec<Pose>,
    ) -> Result<Self> {
        let seq = PoseSequence {
            id: id.into(),
            subject_id: subject_id.into(),
            walk_index,
            fps,
            frames,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn tau(&self) -> usize {
        self.frames.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidSequence {
            id: self.id.clone(),
            reason,
        };
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(bad(format!("fps must be positive, got {}", self.fps)));
        }
        if self.frames.len() < 2 {
            return Err(bad(format!("need at least 2 frames, got {}", self.frames.len())));
        }
        for (k, frame) in self.frames.iter().enumerate() {
            if frame.iter().flatten().any(|c| !c.is_finite()) {
                return Err(bad(format!("non-finite coordinate in frame {k}")));
            }
        }
        Ok(())
    }

    /// Trajectory of one joint across all frames.
    pub fn joint_track(&self, joint: JointIndex) -> Vec<[f64; 3]> {
        self.frames.iter().map(|f| f[joint.idx()]).collect()
    }

    /// Identifier with augmentation suffixes (`#refl`, `#ps<k>`) removed.
    pub fn base_id(&self) -> &str {
        base_id(&self.id)
    }
}

pub fn base_id(id: &str) -> &str {
    id.split('#').next().unwrap_or(id)
}

/// Flattens a pose joint-major: joint 0 x,y,z, joint 1 x,y,z, ...
pub fn flatten_pose(pose: &Pose) -> [f64; POSE_DIM] {
    let mut out = [0.0; POSE_DIM];
    for (j, p) in pose.iter().enumerate() {
        out[3 * j..3 * j + 3].copy_from_slice(p);
    }
    out
}

pub fn unflatten_pose(flat: &[f64]) -> Pose {
    debug_assert_eq!(flat.len(), POSE_DIM);
    let mut pose = [[0.0; 3]; NUM_JOINTS];
    for (j, p) in pose.iter_mut().enumerate() {
        p.copy_from_slice(&flat[3 * j..3 * j + 3]);
    }
    pose
}

/// A labeled walk with its gesture annotation. Label 0 is natural, 1 deceptive.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint {
    pub sequence: PoseSequence,
    pub gestures: GestureAnnotation,
    pub label: u8,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub points: Vec<DataPoint>,
    pub norm_stats: Option<NormStats>,
}

impl Dataset {
    pub fn new(points: Vec<DataPoint>) -> Result<Self> {
        let ds = Dataset {
            points,
            norm_stats: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::with_capacity(self.points.len());
        for p in &self.points {
            if p.label > 1 {
                return Err(Error::invalid(format!(
                    "label {} of `{}` out of domain",
                    p.label, p.sequence.id
                )));
            }
            if !seen.insert(p.sequence.id.as_str()) {
                return Err(Error::DuplicateId(p.sequence.id.clone()));
            }
            p.sequence.validate()?;
            p.gestures.validate()?;
        }
        Ok(())
    }

    /// Subset by index, preserving order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            points: indices.iter().map(|&i| self.points[i].clone()).collect(),
            norm_stats: self.norm_stats.clone(),
        }
    }
}
