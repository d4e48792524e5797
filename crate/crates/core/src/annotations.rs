//! Scene-record annotation files: parsing, validation, serialization.
//!
//! The canonical annotation document is a UTF-8 JSON array of scene objects:
//!
//! ```json
//! [
//!   {
//!     "scene_id": "LC08_L1TP_032027_20180528_20180605_01_T1",
//!     "width": 7871,
//!     "height": 7971,
//!     "is_night": false,
//!     "polygons": [[[120.5, 300.0], [130.0, 420.5], [141.25, 310.0]]],
//!     "waypoints": [{"row": 125.0, "col": 350.0, "flight": "a1b2"}]
//!   }
//! ]
//! ```
//!
//! Polygon vertices and waypoints are `(row, col)` pairs in image pixel
//! space. Vertices may lie outside the image frame; rasterization clips.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A contrail outline: at least three `(row, col)` vertices, finite coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polygon {
    pub vertices: Vec<[f64; 2]>,
}

impl Polygon {
    pub fn new(vertices: Vec<[f64; 2]>) -> Self {
        Self { vertices }
    }
}

/// One deidentified advected flight waypoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub row: f64,
    pub col: f64,
    #[serde(rename = "flight")]
    pub flight_tag: String,
}

/// A labelled Landsat-8 scene.
///
/// `polygons` may be empty (a scene without contrails); filtering such
/// scenes out of training sets happens in the harness, not here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: String,
    pub width: u32,
    pub height: u32,
    pub is_night: bool,
    pub polygons: Vec<Polygon>,
    pub waypoints: Vec<Waypoint>,
}

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("malformed JSON at byte {offset} (line {line}, column {column}): {message}")]
    Json {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("record {record} ({scene_id}): field `{field}`: {message}")]
    Validation {
        record: usize,
        scene_id: String,
        field: &'static str,
        message: String,
    },
}

/// Parse an annotation document into validated scene records.
///
/// Record order is preserved and records with zero polygons are retained.
/// Malformed JSON reports the byte offset of the failure; a record that
/// parses but violates an invariant reports the record index and field.
pub fn parse_scene_records(document: &[u8]) -> Result<Vec<SceneRecord>, AnnotationError> {
    let records: Vec<SceneRecord> =
        serde_json::from_slice(document).map_err(|e| AnnotationError::Json {
            offset: byte_offset(document, e.line(), e.column()),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
    for (index, record) in records.iter().enumerate() {
        validate_record(index, record)?;
    }
    Ok(records)
}

/// Serialize records to the canonical JSON document.
///
/// Inverse of [`parse_scene_records`]: `parse(serialize(r)) == r` for any
/// valid record list (f64 coordinates survive the round trip exactly).
pub fn serialize_scene_records(records: &[SceneRecord]) -> Vec<u8> {
    serde_json::to_vec_pretty(records).expect("scene records are always serializable")
}

/// Translate serde_json's 1-based line/column into a byte offset.
fn byte_offset(document: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut remaining = line - 1;
    let mut offset = 0;
    for (i, &b) in document.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if b == b'\n' {
            remaining -= 1;
            offset = i + 1;
        }
    }
    (offset + column.saturating_sub(1)).min(document.len())
}

fn validate_record(index: usize, record: &SceneRecord) -> Result<(), AnnotationError> {
    let err = |field: &'static str, message: String| AnnotationError::Validation {
        record: index,
        scene_id: record.scene_id.clone(),
        field,
        message,
    };
    if record.scene_id.is_empty() {
        return Err(err("scene_id", "must be nonempty".into()));
    }
    if record.width == 0 || record.height == 0 {
        return Err(err(
            "width/height",
            format!("must be positive, got {}x{}", record.width, record.height),
        ));
    }
    for (pi, poly) in record.polygons.iter().enumerate() {
        if poly.vertices.len() < 3 {
            return Err(err(
                "polygons",
                format!("polygon {pi} has {} vertices, need at least 3", poly.vertices.len()),
            ));
        }
        for (vi, v) in poly.vertices.iter().enumerate() {
            if !v[0].is_finite() || !v[1].is_finite() {
                return Err(err(
                    "polygons",
                    format!("polygon {pi} vertex {vi} has non-finite coordinates"),
                ));
            }
        }
    }
    for (wi, wp) in record.waypoints.iter().enumerate() {
        if !wp.row.is_finite() || !wp.col.is_finite() {
            return Err(err("waypoints", format!("waypoint {wi} has non-finite coordinates")));
        }
    }
    Ok(())
}
