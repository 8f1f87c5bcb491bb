use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Matrix, ParamStore};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedParam {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

/// Text key → array document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub params: Vec<NamedParam>,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("unsupported checkpoint format version {0}")]
    Version(u32),
    #[error("parameter `{name}`: {message}")]
    Mismatch { name: String, message: String },
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            params: store
                .ids()
                .map(|id| {
                    let m = store.value(id);
                    NamedParam {
                        name: store.name(id).to_string(),
                        rows: m.rows(),
                        cols: m.cols(),
                        values: m.data().to_vec(),
                    }
                })
                .collect(),
        }
    }

    /// Writes values into `store`; names and shapes must match exactly.
    pub fn apply(&self, store: &mut ParamStore) -> Result<(), CheckpointError> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(CheckpointError::Version(self.format_version));
        }
        if self.params.len() != store.len() {
            return Err(CheckpointError::Mismatch {
                name: "*".into(),
                message: format!("checkpoint has {} parameters, model has {}", self.params.len(), store.len()),
            });
        }
        for p in &self.params {
            let id = store.id(&p.name).ok_or_else(|| CheckpointError::Mismatch {
                name: p.name.clone(),
                message: "not present in model".into(),
            })?;
            let shape = store.value(id).shape();
            if shape != (p.rows, p.cols) || p.values.len() != p.rows * p.cols {
                return Err(CheckpointError::Mismatch {
                    name: p.name.clone(),
                    message: format!("shape {:?} in checkpoint, {:?} in model", (p.rows, p.cols), shape),
                });
            }
            *store.value_mut(id) = Matrix::from_vec(p.rows, p.cols, p.values.clone());
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut text = serde_json::to_string(self).expect("checkpoint serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| CheckpointError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(CheckpointError::Version(ck.format_version));
        }
        Ok(ck)
    }
}
