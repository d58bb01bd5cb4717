//! Versioned JSON Lines files with atomic replacement.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: missing header line")]
    MissingHeader { path: String },
    #[error("{path}: expected format {expected:?} version {FORMAT_VERSION}, found {format:?} version {version}")]
    Version {
        path: String,
        expected: String,
        format: String,
        version: u32,
    },
    #[error("{path}:{line}: {message}")]
    Malformed { path: String, line: usize, message: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

/// Writes `bytes` next to `path` and renames over it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StorageError> {
    let io = |source| StorageError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    fs::rename(&tmp, path).map_err(io)
}

/// Header line followed by one JSON document per item.
pub fn render_jsonl<T: Serialize>(format: &str, items: impl IntoIterator<Item = T>) -> String {
    let header = Header {
        format: format.to_string(),
        version: FORMAT_VERSION,
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for item in items {
        out.push_str(&serde_json::to_string(&item).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_jsonl<T: DeserializeOwned>(path: &str, format: &str, text: &str) -> Result<Vec<T>, StorageError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| StorageError::MissingHeader { path: path.into() })?;
    let header: Header = serde_json::from_str(first).map_err(|e| StorageError::Malformed {
        path: path.into(),
        line: 1,
        message: e.to_string(),
    })?;
    if header.format != format || header.version != FORMAT_VERSION {
        return Err(StorageError::Version {
            path: path.into(),
            expected: format.into(),
            format: header.format,
            version: header.version,
        });
    }
    lines
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| StorageError::Malformed {
                path: path.into(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Reads a file, treating a missing file as `None`.
pub fn read_optional(path: &Path) -> Result<Option<String>, StorageError> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(Some(s)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(StorageError::Io {
            path: path.display().to_string(),
            source,
        }),
    }
}
