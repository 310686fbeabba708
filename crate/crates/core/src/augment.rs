//! Label-preserving augmentations: mirror about the vertical axis and
//! cyclic temporal phase shifts.

use log::warn;

use crate::error::{Error, Result};
use crate::pose::{DataPoint, Dataset, JointIndex, PoseSequence};

const REFLECT_SUFFIX: &str = "#refl";

/// Negates x for every joint, then swaps left/right joint slots.
/// Applying it twice returns the original sequence, id included.
pub fn reflect_vertical(seq: &PoseSequence) -> PoseSequence {
    let mut out = seq.clone();
    for frame in &mut out.frames {
        for p in frame.iter_mut() {
            p[0] = -p[0];
        }
        for (l, r) in JointIndex::MIRROR_PAIRS {
            frame.swap(l.idx(), r.idx());
        }
    }
    out.id = match seq.id.strip_suffix(REFLECT_SUFFIX) {
        Some(base) => base.to_string(),
        None => format!("{}{REFLECT_SUFFIX}", seq.id),
    };
    out
}

/// Output frame `i` is input frame `(i + k) mod tau`.
pub fn phase_shift(seq: &PoseSequence, k: usize) -> Result<PoseSequence> {
    let tau = seq.tau();
    if k >= tau {
        return Err(Error::invalid(format!(
            "phase shift {k} out of range for `{}` with {tau} frames",
            seq.id
        )));
    }
    let mut out = seq.clone();
    out.frames.rotate_left(k);
    out.id = format!("{}#ps{k}", seq.id);
    Ok(out)
}

/// Which shift offsets to apply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Shifts {
    /// The same offsets for every sequence.
    Fixed(Vec<usize>),
    /// `tau/4, tau/2, 3*tau/4` (rounded down) of each sequence.
    Quarters,
}

impl Shifts {
    fn for_tau(&self, tau: usize) -> Vec<usize> {
        match self {
            Shifts::Fixed(v) => v.clone(),
            Shifts::Quarters => vec![tau / 4, tau / 2, 3 * tau / 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentConfig {
    pub reflect: bool,
    pub shifts: Shifts,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            reflect: true,
            shifts: Shifts::Quarters,
        }
    }
}

/// A requested variant that could not be produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedVariant {
    pub source_id: String,
    pub shift: usize,
    pub reason: String,
}

/// Originals followed, per source point, by its reflection and every
/// (original | reflection) x shift combination. Labels, gestures and subject
/// ids are copied from the source.
pub fn augment_dataset(ds: &Dataset, cfg: &AugmentConfig) -> Result<(Dataset, Vec<SkippedVariant>)> {
    let mut points = Vec::with_capacity(ds.len() * 4);
    let mut skipped = Vec::new();
    for src in &ds.points {
        let mut bases = vec![src.sequence.clone()];
        if cfg.reflect {
            bases.push(reflect_vertical(&src.sequence));
        }
        let mut variants = bases.clone();
        for k in cfg.shifts.for_tau(src.sequence.tau()) {
            for base in &bases {
                match phase_shift(base, k) {
                    Ok(v) => variants.push(v),
                    Err(e) => {
                        warn!("skipping shift {k} of `{}`: {e}", base.id);
                        skipped.push(SkippedVariant {
                            source_id: base.id.clone(),
                            shift: k,
                            reason: e.to_string(),
                        });
                    }
                }
            }
        }
        points.extend(variants.into_iter().map(|sequence| DataPoint {
            sequence,
            gestures: src.gestures,
            label: src.label,
        }));
    }
    let out = Dataset::new(points)?;
    Ok((out, skipped))
}
