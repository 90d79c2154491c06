//! Driver behaviour and decision dialogue pipeline: gaze boxes, first-person
//! rewriting, dialogue assembly, paraphrase augmentation and record files.

pub mod augment;
pub mod dialogue;
pub mod gaze;
pub mod person;

use std::path::Path;

use thiserror::Error;

use crate::jsonl::{read_jsonl, write_jsonl, JsonlError, ReadOutcome};

pub use augment::{augment, offline_paraphrase, Augmented};
pub use dialogue::{assemble_dialogue, Assembled, DialogueRecord, DialogueSource, DialogueTurn, PartKind, QaPart};
pub use gaze::{gaze_to_bbox, import_gaze_csv, BBox, GazeTrace, GazeWindow, WINDOW_FRAMES};
pub use person::{to_first_person, to_first_person_checked};

#[derive(Debug, Error)]
pub enum HbdError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error(transparent)]
    Records(#[from] JsonlError),
}

/// Reads dialogue records, validating each one.
pub fn read_records(path: impl AsRef<Path>, strict: bool) -> Result<ReadOutcome<DialogueRecord>, HbdError> {
    Ok(read_jsonl(path, strict, DialogueRecord::validate)?)
}

pub fn write_records(path: impl AsRef<Path>, records: &[DialogueRecord]) -> Result<(), HbdError> {
    Ok(write_jsonl(path, records)?)
}
