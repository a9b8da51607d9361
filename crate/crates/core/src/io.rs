//! File formats shared by the command line and the plotting scripts.

/// Serialize non-finite floats as JSON `null` and read `null` back as `+inf`.
pub mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

use crate::isotopy::{IsotopyTrace, SceneItem};
use crate::surgery::SurgeryHistory;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

/// Version written into every structured document.
pub const FORMAT_VERSION: u32 = 1;

/// Header of the tabular frame files.
pub const FRAME_HEADER: &str = "t,x,r,component_id,stage";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot read or write {path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error("malformed {kind} document: {message}")]
    Malformed { kind: String, message: String },
    #[error("expected a {expected} document, found {found}")]
    WrongKind { expected: String, found: String },
    #[error("unsupported format version {0}")]
    Version(u32),
}

#[derive(Serialize, Deserialize)]
struct Document<T> {
    version: u32,
    kind: String,
    data: T,
}

/// Structured JSON document with an explicit version and kind tag.
pub fn to_document<T: Serialize>(kind: &str, data: &T) -> String {
    let doc = Document { version: FORMAT_VERSION, kind: kind.to_string(), data };
    let mut s = serde_json::to_string_pretty(&doc).expect("document types serialize");
    s.push('\n');
    s
}

pub fn from_document<T: DeserializeOwned>(kind: &str, text: &str) -> Result<T, IoError> {
    let malformed = |e: serde_json::Error| IoError::Malformed { kind: kind.to_string(), message: e.to_string() };
    let head: Document<serde_json::Value> = serde_json::from_str(text).map_err(malformed)?;
    if head.version != FORMAT_VERSION {
        return Err(IoError::Version(head.version));
    }
    if head.kind != kind {
        return Err(IoError::WrongKind { expected: kind.to_string(), found: head.kind });
    }
    serde_json::from_value(head.data).map_err(malformed)
}

pub fn read_document<T: DeserializeOwned>(kind: &str, path: &std::path::Path) -> Result<T, IoError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| IoError::File { path: path.display().to_string(), source })?;
    from_document(kind, &text)
}

fn push_row(out: &mut String, t: f64, x: f64, r: f64, id: u64, stage: &str) {
    writeln!(out, "{t:.16e},{x:.16e},{r:.16e},{id},{stage}").expect("writing to a String");
}

/// One row per meridian point of every recorded flow frame.
pub fn history_frames_csv(history: &SurgeryHistory) -> String {
    let mut out = format!("{FRAME_HEADER}\n");
    for f in &history.frames {
        for (x, r) in f.surface.meridian() {
            push_row(&mut out, f.t, x, r, f.component_id, "flow");
        }
    }
    out
}

/// One row per meridian point of every profile in the trace. The `t` column
/// holds the frame index and `component_id` the position of the item in its
/// scene.
pub fn trace_frames_csv(trace: &IsotopyTrace) -> String {
    let mut out = format!("{FRAME_HEADER}\n");
    for (k, frame) in trace.frames.iter().enumerate() {
        for (i, item) in frame.items.iter().enumerate() {
            if let SceneItem::Profile(s) = item {
                for (x, r) in s.meridian() {
                    push_row(&mut out, k as f64, x, r, i as u64, frame.stage.as_str());
                }
            }
        }
    }
    out
}
