use serde::{Deserialize, Serialize};

use super::{flatten_pose, unflatten_pose, PoseSequence, POSE_DIM};
use crate::error::{Error, Result};

/// Per-channel (joint-major x,y,z) extremes over a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormStats {
    pub fn is_constant(&self, channel: usize) -> bool {
        self.min[channel] == self.max[channel]
    }

    pub fn constant_channels(&self) -> Vec<usize> {
        (0..POSE_DIM).filter(|&c| self.is_constant(c)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.min.len() != POSE_DIM || self.max.len() != POSE_DIM {
            return Err(Error::Shape(format!(
                "norm stats need {POSE_DIM} channels, got {}/{}",
                self.min.len(),
                self.max.len()
            )));
        }
        if self.min.iter().zip(&self.max).any(|(lo, hi)| !(lo <= hi)) {
            return Err(Error::invalid("norm stats have min > max"));
        }
        Ok(())
    }

    /// Maps one flattened frame into [0, 1]; constant channels go to 0.5.
    pub fn apply_flat(&self, flat: &[f64]) -> [f64; POSE_DIM] {
        let mut out = [0.0; POSE_DIM];
        for c in 0..POSE_DIM {
            let (lo, hi) = (self.min[c], self.max[c]);
            out[c] = if lo == hi {
                0.5
            } else {
                ((flat[c] - lo) / (hi - lo)).clamp(0.0, 1.0)
            };
        }
        out
    }
}

pub fn minmax_fit<'a, I>(train: I) -> Result<NormStats>
where
    I: IntoIterator<Item = &'a PoseSequence>,
{
    let mut min = vec![f64::INFINITY; POSE_DIM];
    let mut max = vec![f64::NEG_INFINITY; POSE_DIM];
    let mut any = false;
    for seq in train {
        for frame in &seq.frames {
            any = true;
            for (c, v) in flatten_pose(frame).into_iter().enumerate() {
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
        }
    }
    if !any {
        return Err(Error::invalid("minmax_fit needs at least one training frame"));
    }
    Ok(NormStats { min, max })
}

pub fn minmax_apply(seq: &PoseSequence, stats: &NormStats) -> Result<PoseSequence> {
    stats.validate()?;
    let mut out = seq.clone();
    for frame in &mut out.frames {
        *frame = unflatten_pose(&stats.apply_flat(&flatten_pose(frame)));
    }
    Ok(out)
}

/// Frame indices selected when bringing `tau` frames to exactly `t`.
pub fn conditioned_indices(tau: usize, t: usize) -> Vec<usize> {
    if tau <= t {
        (0..t).map(|i| i.min(tau - 1)).collect()
    } else {
        // round(i * (tau-1) / (t-1)), half away from zero, in integers.
        let (num, den) = (tau - 1, t - 1);
        (0..t).map(|i| (2 * i * num + den) / (2 * den)).collect()
    }
}

/// Pads by repeating the last frame or uniformly subsamples to exactly `t`
/// frames.
pub fn condition_length(seq: &PoseSequence, t: usize) -> Result<PoseSequence> {
    if t < 2 {
        return Err(Error::invalid(format!("fixed length must be >= 2, got {t}")));
    }
    let mut out = seq.clone();
    out.frames = conditioned_indices(seq.tau(), t)
        .into_iter()
        .map(|i| seq.frames[i])
        .collect();
    Ok(out)
}
