//! Dataset serialization.
//!
//! A dataset is a single UTF-8 JSON document with an explicit schema
//! version. Floats round-trip exactly (shortest-representation decimal),
//! so `load(save(x)) == x` field for field. Masks are stored as 0/1
//! integer arrays.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{GaussianPrimitive, SceneConfig, ViewRecord};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema: {0}")]
    Schema(String),
}

/// On-disk layout of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub schema_version: u32,
    pub config: SceneConfig,
    pub primitives: Vec<GaussianPrimitive>,
    pub views: Vec<ViewRecord>,
}

pub fn save_dataset(path: &Path, file: &DatasetFile) -> Result<(), IoError> {
    let text = serde_json::to_string(file).map_err(|e| IoError::Schema(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<DatasetFile, IoError> {
    let text = fs::read_to_string(path)?;
    let file: DatasetFile =
        serde_json::from_str(&text).map_err(|e| IoError::Schema(e.to_string()))?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(IoError::Schema(format!(
            "unsupported schema_version {} (expected {})",
            file.schema_version, SCHEMA_VERSION
        )));
    }
    Ok(file)
}

/// Serializes `Option<Vec<bool>>` as an optional array of 0/1 integers.
pub(crate) mod mask_as_ints {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<bool>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(mask) => {
                let ints: Vec<u8> = mask.iter().map(|&b| b as u8).collect();
                s.serialize_some(&ints)
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<bool>>, D::Error> {
        let ints: Option<Vec<u8>> = Option::deserialize(d)?;
        match ints {
            None => Ok(None),
            Some(ints) => ints
                .into_iter()
                .map(|i| match i {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(serde::de::Error::custom(format!(
                        "mask entries must be 0 or 1, got {other}"
                    ))),
                })
                .collect::<Result<Vec<bool>, _>>()
                .map(Some),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::CameraPose;

    fn tiny_file() -> DatasetFile {
        DatasetFile {
            schema_version: SCHEMA_VERSION,
            config: SceneConfig::default(),
            primitives: vec![GaussianPrimitive {
                position: [0.123456789012345, -2.5],
                scale: [0.07, 0.011],
                rotation: 1.0471975511965976,
                opacity_logit: -0.3,
                color: [0.25, 0.5, 0.75],
            }],
            views: vec![ViewRecord {
                camera: CameraPose { position: [0.5, 0.1], heading: 1.57, focal: 64.0, width: 8 },
                image: vec![[0.1, 0.2, 0.3]; 8],
                gt_mask: Some(vec![false, true, false, false, true, true, false, false]),
                image_id: 0,
            }],
        }
    }

    #[test]
    fn empty_scene_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.json");
        let file = DatasetFile {
            schema_version: SCHEMA_VERSION,
            config: SceneConfig::default(),
            primitives: vec![],
            views: vec![],
        };
        save_dataset(&path, &file).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), file);
    }

    #[test]
    fn dataset_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        let file = tiny_file();
        save_dataset(&path, &file).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), file);
    }

    #[test]
    fn truncated_file_is_a_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        let file = tiny_file();
        save_dataset(&path, &file).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        match load_dataset(&path) {
            Err(IoError::Schema(_)) => {}
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.json");
        let mut file = tiny_file();
        file.schema_version = 999;
        let text = serde_json::to_string(&file).unwrap();
        std::fs::write(&path, text).unwrap();
        match load_dataset(&path) {
            Err(IoError::Schema(msg)) => assert!(msg.contains("schema_version")),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn masks_serialize_as_ints() {
        let text = serde_json::to_string(&tiny_file()).unwrap();
        assert!(text.contains("\"gt_mask\":[0,1,0,0,1,1,0,0]"));
    }
}
