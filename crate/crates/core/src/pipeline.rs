//! Glue from raw data points to classifier inputs.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gait::{gait_feature_vector, GaitFeatureVector};
use crate::gesture::{encode_gestures, GestureVector};
use crate::network::{Model, ModelInput};
use crate::pose::{base_id, minmax_fit, similarity_normalize, DataPoint, Dataset, NormStats, PoseSequence};

/// A data point after similarity normalization and feature extraction.
/// Handcrafted features come from the full-length normalized walk, before
/// any length conditioning.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPoint {
    pub label: u8,
    pub normalized: PoseSequence,
    pub gait: GaitFeatureVector,
    pub gesture: GestureVector,
}

impl PreparedPoint {
    pub fn id(&self) -> &str {
        &self.normalized.id
    }

    pub fn base_id(&self) -> &str {
        base_id(&self.normalized.id)
    }

    pub fn subject_id(&self) -> &str {
        &self.normalized.subject_id
    }
}

pub fn prepare_point(point: &DataPoint) -> Result<PreparedPoint> {
    let normalized = similarity_normalize(&point.sequence)?;
    let gait = gait_feature_vector(&normalized, normalized.fps)?;
    let gesture = encode_gestures(&point.gestures)?;
    Ok(PreparedPoint {
        label: point.label,
        normalized,
        gait,
        gesture,
    })
}

/// Prepares every point, in parallel; output order follows the dataset.
pub fn prepare_dataset(ds: &Dataset) -> Result<Vec<PreparedPoint>> {
    ds.points.par_iter().map(prepare_point).collect()
}

/// Min-max statistics over every frame of the given (training) points.
pub fn fit_norm_stats(points: &[PreparedPoint]) -> Result<NormStats> {
    if points.is_empty() {
        return Err(Error::invalid("cannot fit normalization on an empty split"));
    }
    minmax_fit(points.iter().map(|p| &p.normalized))
}

pub fn model_inputs(model: &Model, points: &[PreparedPoint]) -> Result<Vec<ModelInput>> {
    points
        .par_iter()
        .map(|p| model.prepare_input(&p.normalized, &p.gait, &p.gesture))
        .collect()
}

pub fn labels(points: &[PreparedPoint]) -> Vec<u8> {
    points.iter().map(|p| p.label).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{ModelConfig, HANDCRAFTED_DIM};
    use crate::synthetic::{generate_dataset, SynthConfig};
    use crate::tensor::Graph;

    #[test]
    fn padding_does_not_touch_handcrafted_half() {
        let ds = generate_dataset(&SynthConfig {
            count_per_class: [2, 2],
            ..SynthConfig::default()
        })
        .unwrap();
        let pts = prepare_dataset(&ds).unwrap();
        let longest = pts.iter().map(|p| p.normalized.tau()).max().unwrap();
        let mut model = Model::new(ModelConfig {
            t_frames: longest + 30,
            ..ModelConfig::default()
        })
        .unwrap();
        model.norm_stats = Some(fit_norm_stats(&pts).unwrap());
        let inputs = model_inputs(&model, &pts).unwrap();

        let mut permuted = inputs.clone();
        for (inp, p) in permuted.iter_mut().zip(&pts) {
            let tau = p.normalized.tau();
            let frames = &mut inp.frames;
            let pad: Vec<f64> = frames[tau * 48..].to_vec();
            let mut rows: Vec<&[f64]> = pad.chunks(48).collect();
            rows.reverse();
            let flat: Vec<f64> = rows.concat();
            frames[tau * 48..].copy_from_slice(&flat);
        }
        let hand = |inputs: &[ModelInput]| {
            let mut g = Graph::new();
            let vars = model.bind_frozen(&mut g);
            let tr = model.forward(&mut g, &vars, inputs).unwrap();
            let c = g.value(tr.concat).data().to_vec();
            c.chunks(model.config.concat_dim())
                .map(|r| r[model.config.deep_dim()..].to_vec())
                .collect::<Vec<_>>()
        };
        let a = hand(&inputs);
        assert_eq!(a, hand(&permuted));
        assert_eq!(a[0].len(), HANDCRAFTED_DIM);
    }

    #[test]
    fn minmax_outputs_stay_in_unit_range_on_training_data() {
        let ds = generate_dataset(&SynthConfig {
            count_per_class: [3, 3],
            ..SynthConfig::default()
        })
        .unwrap();
        let pts = prepare_dataset(&ds).unwrap();
        let mut model = Model::new(ModelConfig {
            t_frames: 50,
            ..ModelConfig::default()
        })
        .unwrap();
        model.norm_stats = Some(fit_norm_stats(&pts).unwrap());
        for inp in model_inputs(&model, &pts).unwrap() {
            assert!(inp.frames.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!(fit_norm_stats(&[]).is_err());
    }
}
