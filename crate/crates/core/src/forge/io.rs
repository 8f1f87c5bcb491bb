//! Line-delimited problem files and the manifest document.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{Dataset, Problem, SplitManifest, MANIFEST_FORMAT_VERSION};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: invalid manifest: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("split `{split}`: manifest declares {declared} problems, file has {found}")]
    CountMismatch {
        split: String,
        declared: usize,
        found: usize,
    },
    #[error("split `{split}`: checksum mismatch (manifest {declared}, file {found})")]
    ChecksumMismatch {
        split: String,
        declared: String,
        found: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes one JSON record per line; returns the file's SHA-256.
pub fn write_problems(path: &Path, problems: &[Problem]) -> Result<String, IoError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    let mut hasher = Sha256::new();
    for p in problems {
        let mut line = serde_json::to_string(p).expect("problem serializes");
        line.push('\n');
        hasher.update(line.as_bytes());
        out.write_all(line.as_bytes()).map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))?;
    Ok(hex::encode(hasher.finalize()))
}

/// Reads a problem file; returns the problems and the file's SHA-256.
pub fn read_problems(path: &Path) -> Result<(Vec<Problem>, String), IoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);
    let mut hasher = Sha256::new();
    let mut problems = Vec::new();
    let mut line = String::new();
    let mut lineno = 0;
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        lineno += 1;
        hasher.update(line.as_bytes());
        if !line.ends_with('\n') {
            return Err(IoError::Malformed {
                path: path.to_path_buf(),
                line: lineno,
                message: "truncated record (missing newline)".into(),
            });
        }
        let p: Problem = serde_json::from_str(line.trim_end()).map_err(|e| IoError::Malformed {
            path: path.to_path_buf(),
            line: lineno,
            message: e.to_string(),
        })?;
        problems.push(p);
    }
    Ok((problems, hex::encode(hasher.finalize())))
}

/// Writes every split plus `manifest.json` into `dir` and returns the
/// manifest with checksums filled in.
pub fn serialize_dataset(dataset: &Dataset, dir: &Path) -> Result<SplitManifest, IoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut manifest = dataset.manifest.clone();
    for (name, entry) in manifest.splits.iter_mut() {
        let problems = dataset.problems.get(name).map(Vec::as_slice).unwrap_or(&[]);
        entry.count = problems.len();
        entry.sha256 = write_problems(&dir.join(&entry.path), problems)?;
    }
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<SplitManifest, IoError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: SplitManifest = serde_json::from_str(&text).map_err(|e| IoError::Manifest {
        path: path.clone(),
        message: e.to_string(),
    })?;
    if manifest.format_version != MANIFEST_FORMAT_VERSION {
        return Err(IoError::Manifest {
            path,
            message: format!("unsupported format version {}", manifest.format_version),
        });
    }
    Ok(manifest)
}

/// Loads a dataset directory, checking counts and checksums against the
/// manifest.
pub fn load_dataset(dir: &Path) -> Result<Dataset, IoError> {
    let manifest = load_manifest(dir)?;
    let mut problems = BTreeMap::new();
    for (name, entry) in &manifest.splits {
        let (ps, sha) = read_problems(&dir.join(&entry.path))?;
        if ps.len() != entry.count {
            return Err(IoError::CountMismatch {
                split: name.clone(),
                declared: entry.count,
                found: ps.len(),
            });
        }
        if !entry.sha256.is_empty() && entry.sha256 != sha {
            return Err(IoError::ChecksumMismatch {
                split: name.clone(),
                declared: entry.sha256.clone(),
                found: sha,
            });
        }
        problems.insert(name.clone(), ps);
    }
    Ok(Dataset { manifest, problems })
}
