//! JSON-Lines dataset format: one walk per line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataPoint, Dataset, PoseSequence, Pose, POSE_DIM, unflatten_pose, flatten_pose};
use crate::error::{Error, Result};
use crate::gesture::{GestureAnnotation, GESTURE_NAMES, NUM_GESTURES};

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    subject: String,
    walk: i64,
    fps: f64,
    label: i64,
    gestures: BTreeMap<String, i64>,
    frames: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct OutGestures {
    hands_in_pockets: u8,
    looking_around: u8,
    touching_face: u8,
    touching_shirt: u8,
    touching_hair: u8,
    hands_folded: u8,
    looking_at_phone: u8,
}

#[derive(Serialize)]
struct OutRecord<'a> {
    id: &'a str,
    subject: &'a str,
    walk: u8,
    fps: f64,
    label: u8,
    gestures: OutGestures,
    frames: Vec<&'a [f64]>,
}

pub fn parse_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset_str(&text)
}

/// Parses JSONL content. Blank lines are skipped; line numbers are 1-based.
pub fn parse_dataset_str(text: &str) -> Result<Dataset> {
    let mut points = Vec::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        if raw_line.trim().is_empty() {
            continue;
        }
        points.push(parse_line(raw_line, line)?);
    }
    let ds = Dataset {
        points,
        norm_stats: None,
    };
    ds.validate()?;
    Ok(ds)
}

fn parse_line(text: &str, line: usize) -> Result<DataPoint> {
    let raw: RawRecord = serde_json::from_str(text).map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })?;
    if !(0..=1).contains(&raw.label) {
        return Err(Error::LabelOutOfDomain {
            line,
            label: raw.label,
        });
    }
    if !(1..=4).contains(&raw.walk) {
        return Err(Error::Parse {
            line,
            message: format!("walk index {} outside 1-4", raw.walk),
        });
    }

    let mut values = [0i64; NUM_GESTURES];
    let mut seen = [false; NUM_GESTURES];
    for (key, value) in &raw.gestures {
        let Some(slot) = GESTURE_NAMES.iter().position(|n| n == key) else {
            return Err(Error::UnknownGesture {
                line,
                key: key.clone(),
            });
        };
        values[slot] = *value;
        seen[slot] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Parse {
            line,
            message: format!("missing gesture `{}`", GESTURE_NAMES[missing]),
        });
    }
    let gestures = GestureAnnotation::from_values(values).map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })?;

    let mut frames: Vec<Pose> = Vec::with_capacity(raw.frames.len());
    for (k, f) in raw.frames.iter().enumerate() {
        if f.len() != POSE_DIM {
            return Err(Error::FrameArity {
                line,
                frame: k,
                got: f.len(),
            });
        }
        if f.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite { line, frame: k });
        }
        frames.push(unflatten_pose(f));
    }
    let sequence = PoseSequence::new(raw.id, raw.subject, raw.walk as u8, raw.fps, frames)
        .map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
    Ok(DataPoint {
        sequence,
        gestures,
        label: raw.label as u8,
    })
}

pub fn write_dataset_string(ds: &Dataset) -> Result<String> {
    let mut out = String::new();
    for p in &ds.points {
        let flat: Vec<[f64; POSE_DIM]> = p.sequence.frames.iter().map(flatten_pose).collect();
        let g = &p.gestures;
        let rec = OutRecord {
            id: &p.sequence.id,
            subject: &p.sequence.subject_id,
            walk: p.sequence.walk_index,
            fps: p.sequence.fps,
            label: p.label,
            gestures: OutGestures {
                hands_in_pockets: g.hands_in_pockets,
                looking_around: g.looking_around,
                touching_face: g.touching_face,
                touching_shirt: g.touching_shirt,
                touching_hair: g.touching_hair,
                hands_folded: g.hands_folded,
                looking_at_phone: g.looking_at_phone,
            },
            frames: flat.iter().map(|f| f.as_slice()).collect(),
        };
        let _ = writeln!(out, "{}", serde_json::to_string(&rec)?);
    }
    Ok(out)
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = write_dataset_string(ds)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str, label: i64, frame_len: usize) -> String {
        let frame: Vec<String> = (0..frame_len).map(|i| format!("{}.5", i)).collect();
        let frame = format!("[{}]", frame.join(","));
        format!(
            r#"{{"id":"{id}","subject":"p1","walk":2,"fps":30.0,"label":{label},"gestures":{{"hands_in_pockets":2,"looking_around":1,"touching_face":0,"touching_shirt":0,"touching_hair":0,"hands_folded":0,"looking_at_phone":0}},"frames":[{frame},{frame}]}}"#
        )
    }

    #[test]
    fn two_valid_lines() {
        let text = format!("{}\n{}\n", line("a", 0, 48), line("b", 1, 48));
        let ds = parse_dataset_str(&text).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.points[0].sequence.id, "a");
        assert_eq!(ds.points[1].sequence.id, "b");
        assert_eq!(ds.points[1].label, 1);
        assert_eq!(ds.points[0].gestures.hands_in_pockets, 2);
        assert_eq!(ds.points[0].sequence.frames[0][1], [3.5, 4.5, 5.5]);
    }

    #[test]
    fn short_frame_names_line_and_frame() {
        let text = format!("{}\n{}\n", line("a", 0, 48), line("b", 0, 47));
        let err = parse_dataset_str(&text).unwrap_err();
        assert!(matches!(err, Error::FrameArity { line: 2, frame: 0, got: 47 }), "{err}");
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn label_two_is_out_of_domain() {
        let err = parse_dataset_str(&line("a", 2, 48)).unwrap_err();
        assert!(err.to_string().contains("label out of domain"), "{err}");
    }

    #[test]
    fn unknown_gesture_key() {
        let text = line("a", 0, 48).replace("touching_hair", "touching_nose");
        assert!(matches!(
            parse_dataset_str(&text),
            Err(Error::UnknownGesture { line: 1, .. })
        ));
    }

    #[test]
    fn malformed_json_reports_line() {
        let text = format!("{}\n{{not json\n", line("a", 0, 48));
        assert!(matches!(parse_dataset_str(&text), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = format!("{}\n{}\n", line("a", 0, 48), line("a", 1, 48));
        assert!(matches!(parse_dataset_str(&text), Err(Error::DuplicateId(_))));
    }

    #[test]
    fn missing_file() {
        assert!(matches!(parse_dataset("/nonexistent/x.jsonl"), Err(Error::Io { .. })));
    }

    #[test]
    fn write_then_parse_is_identity() {
        let text = format!("{}\n{}\n", line("a", 0, 48), line("b", 1, 48));
        let ds = parse_dataset_str(&text).unwrap();
        let again = parse_dataset_str(&write_dataset_string(&ds).unwrap()).unwrap();
        assert_eq!(ds, again);
    }
}
