//! Trained-model persistence.
//!
//! Bundles serialize as pretty-printed JSON: nested tree structure stays
//! human-readable, floats round-trip exactly, and identical bundles
//! serialize to identical bytes. The format version is checked before the
//! rest of the file is parsed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csvio::{write_atomic, CsvError};
use crate::features::{FeatureSchema, PerModality};
use crate::forest::Forest;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// The three trained forests plus everything needed to apply them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format_version: u32,
    /// Seed the forests were trained with.
    pub master_seed: u64,
    /// Hash of the run configuration at training time.
    pub config_hash: String,
    pub schemas: PerModality<FeatureSchema>,
    pub forests: PerModality<Forest>,
}

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: unsupported model format version {got} (this build reads version {supported})")]
    UnsupportedVersion {
        path: PathBuf,
        got: u32,
        supported: u32,
    },
    #[error("{path}: forest for {modality} disagrees with its schema ({forest} vs {schema} features)")]
    SchemaMismatch {
        path: PathBuf,
        modality: crate::domain::Modality,
        forest: usize,
        schema: usize,
    },
    #[error(transparent)]
    Write(#[from] CsvError),
}

impl ModelBundle {
    pub fn new(
        master_seed: u64,
        config_hash: String,
        schemas: PerModality<FeatureSchema>,
        forests: PerModality<Forest>,
    ) -> ModelBundle {
        ModelBundle {
            format_version: MODEL_FORMAT_VERSION,
            master_seed,
            config_hash,
            schemas,
            forests,
        }
    }
}

pub fn save_model(bundle: &ModelBundle, path: &Path) -> Result<(), PersistError> {
    let json = serde_json::to_string_pretty(bundle).map_err(|source| PersistError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    write_atomic(path, json.as_bytes())?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelBundle, PersistError> {
    let bytes = fs::read(path).map_err(|source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    })?;

    #[derive(Deserialize)]
    struct VersionProbe {
        format_version: u32,
    }
    let probe: VersionProbe =
        serde_json::from_slice(&bytes).map_err(|source| PersistError::Json {
            path: path.to_path_buf(),
            source,
        })?;
    if probe.format_version != MODEL_FORMAT_VERSION {
        return Err(PersistError::UnsupportedVersion {
            path: path.to_path_buf(),
            got: probe.format_version,
            supported: MODEL_FORMAT_VERSION,
        });
    }

    let bundle: ModelBundle =
        serde_json::from_slice(&bytes).map_err(|source| PersistError::Json {
            path: path.to_path_buf(),
            source,
        })?;
    for (modality, forest) in bundle.forests.iter() {
        let schema_len = bundle.schemas.get(modality).feature_count();
        if forest.n_features() != schema_len {
            return Err(PersistError::SchemaMismatch {
                path: path.to_path_buf(),
                modality,
                forest: forest.n_features(),
                schema: schema_len,
            });
        }
    }
    Ok(bundle)
}
