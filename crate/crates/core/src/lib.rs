//! Gait, gesture and deep-feature pipeline for telling natural walks from
//! deceptive ones.
//!
//! The crate starts from extracted 3D skeletal sequences (16 joints per
//! frame) plus gesture annotations and covers everything after that:
//! canonicalizing the poses, handcrafted gait and gesture features, a small
//! reverse-mode tensor engine, the stacked-LSTM + conv classifier, its
//! training loop and ablations, a synthetic walk generator and PCA export.

pub mod analysis;
pub mod augment;
pub mod error;
pub mod gait;
pub mod gesture;
pub mod network;
pub mod pipeline;
pub mod pose;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use error::{Error, ErrorKind, Result};
pub use gesture::{GestureAnnotation, GestureVector};
pub use pose::{DataPoint, Dataset, JointIndex, NormStats, Pose, PoseSequence};
