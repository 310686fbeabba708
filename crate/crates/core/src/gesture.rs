//! Gesture annotations, their 7-dim encoding, and per-class presence rates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::Dataset;

pub const NUM_GESTURES: usize = 7;

/// Gesture keys in encoding order.
pub const GESTURE_NAMES: [&str; NUM_GESTURES] = [
    "hands_in_pockets",
    "looking_around",
    "touching_face",
    "touching_shirt",
    "touching_hair",
    "hands_folded",
    "looking_at_phone",
];

/// Annotated gestures for one walk. `hands_in_pockets` counts hands (0-2);
/// every other field is a presence flag.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GestureAnnotation {
    pub hands_in_pockets: u8,
    pub looking_around: u8,
    pub touching_face: u8,
    pub touching_shirt: u8,
    pub touching_hair: u8,
    pub hands_folded: u8,
    pub looking_at_phone: u8,
}

impl GestureAnnotation {
    pub fn values(&self) -> [u8; NUM_GESTURES] {
        [
            self.hands_in_pockets,
            self.looking_around,
            self.touching_face,
            self.touching_shirt,
            self.touching_hair,
            self.hands_folded,
            self.looking_at_phone,
        ]
    }

    /// Builds an annotation from values in [`GESTURE_NAMES`] order, checking domains.
    pub fn from_values(values: [i64; NUM_GESTURES]) -> Result<Self> {
        for (i, &v) in values.iter().enumerate() {
            let max = if i == 0 { 2 } else { 1 };
            if !(0..=max).contains(&v) {
                return Err(Error::GestureDomain {
                    gesture: GESTURE_NAMES[i],
                    value: v,
                });
            }
        }
        Ok(GestureAnnotation {
            hands_in_pockets: values[0] as u8,
            looking_around: values[1] as u8,
            touching_face: values[2] as u8,
            touching_shirt: values[3] as u8,
            touching_hair: values[4] as u8,
            hands_folded: values[5] as u8,
            looking_at_phone: values[6] as u8,
        })
    }

    pub fn validate(&self) -> Result<()> {
        Self::from_values(self.values().map(i64::from)).map(|_| ())
    }
}

/// Numeric gesture feature in [`GESTURE_NAMES`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GestureVector(pub [f64; NUM_GESTURES]);

impl GestureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Reads the components back into an annotation.
    pub fn decode(&self) -> Result<GestureAnnotation> {
        let mut values = [0i64; NUM_GESTURES];
        for (v, &x) in values.iter_mut().zip(&self.0) {
            if x.fract() != 0.0 {
                return Err(Error::invalid(format!("gesture component {x} is not integral")));
            }
            *v = x as i64;
        }
        GestureAnnotation::from_values(values)
    }
}

pub fn encode_gestures(ann: &GestureAnnotation) -> Result<GestureVector> {
    ann.validate()?;
    Ok(GestureVector(ann.values().map(f64::from)))
}

/// Presence rates of each gesture within one label class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassGestureStats {
    pub label: u8,
    pub class_size: usize,
    pub counts: [usize; NUM_GESTURES],
    pub percentages: [f64; NUM_GESTURES],
}

/// Percentage of points per label showing each gesture. Labels with no
/// points are omitted; `hands_in_pockets` counts when at least one hand is in.
pub fn gesture_class_stats(ds: &Dataset) -> Vec<ClassGestureStats> {
    let mut out = Vec::new();
    for label in 0..=1u8 {
        let mut counts = [0usize; NUM_GESTURES];
        let mut size = 0usize;
        for p in ds.points.iter().filter(|p| p.label == label) {
            size += 1;
            for (c, v) in counts.iter_mut().zip(p.gestures.values()) {
                if v >= 1 {
                    *c += 1;
                }
            }
        }
        if size == 0 {
            continue;
        }
        let percentages = counts.map(|c| 100.0 * c as f64 / size as f64);
        out.push(ClassGestureStats {
            label,
            class_size: size,
            counts,
            percentages,
        });
    }
    out
}
