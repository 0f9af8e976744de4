//! File formats: V2GF feature files, JSON Lines video metadata, and the
//! on-disk dataset directory (`meta.jsonl` + `features/<id>.v2gf`).

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::types::{FeatureMatrix, TypeError, VideoRecord};

pub const FEATURE_MAGIC: &[u8; 4] = b"V2GF";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

pub const META_FILE: &str = "meta.jsonl";
pub const FEATURE_DIR: &str = "features";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: bad magic {found:?}, expected \"V2GF\"")]
    MagicMismatch { path: PathBuf, found: [u8; 4] },
    #[error("{path}: unsupported feature file version {version}")]
    UnsupportedVersion { path: PathBuf, version: u32 },
    #[error("{path}: truncated file ({actual} bytes, header implies {expected})")]
    TruncatedFile {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("{path}: non-finite value at row {row}, column {col}")]
    NonFiniteValue { path: PathBuf, row: usize, col: usize },
    #[error("{path}: {source}")]
    InvalidData { path: PathBuf, source: TypeError },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    IoFailure { path: PathBuf, source: io::Error },
}

impl IoError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        IoError::IoFailure {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Decode a feature matrix from raw V2GF bytes.
pub fn decode_features(bytes: &[u8], path: &Path) -> Result<FeatureMatrix, IoError> {
    let truncated = |expected| IoError::TruncatedFile {
        path: path.to_path_buf(),
        expected,
        actual: bytes.len(),
    };
    if bytes.len() < 4 || &bytes[..4] != FEATURE_MAGIC {
        let mut found = [0u8; 4];
        let n = bytes.len().min(4);
        found[..n].copy_from_slice(&bytes[..n]);
        return Err(IoError::MagicMismatch {
            path: path.to_path_buf(),
            found,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(truncated(HEADER_LEN));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != FEATURE_VERSION {
        return Err(IoError::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let rows = word(8) as usize;
    let cols = word(12) as usize;
    let expected = HEADER_LEN + rows * cols * 4;
    if bytes.len() < expected {
        return Err(truncated(expected));
    }
    let values: Vec<f32> = bytes[HEADER_LEN..expected]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureMatrix::new(rows, cols, values).map_err(|e| match e {
        TypeError::NonFinite { row, col } => IoError::NonFiniteValue {
            path: path.to_path_buf(),
            row,
            col,
        },
        other => IoError::InvalidData {
            path: path.to_path_buf(),
            source: other,
        },
    })
}

pub fn encode_features(matrix: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + matrix.values().len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(matrix.num_segments() as u32).to_le_bytes());
    out.extend_from_slice(&(matrix.dim() as u32).to_le_bytes());
    for v in matrix.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix, IoError> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| IoError::io(path, e))?;
    decode_features(&bytes, path)
}

pub fn write_features(matrix: &FeatureMatrix, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    fs::write(path, encode_features(matrix)).map_err(|e| IoError::io(path, e))
}

/// Read one JSON object per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, IoError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| IoError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| IoError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(items: &[T], path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_jsonl_to(items, &mut w).map_err(|e| IoError::io(path, e))?;
    w.flush().map_err(|e| IoError::io(path, e))
}

pub fn write_jsonl_to<T: Serialize, W: Write>(items: &[T], w: &mut W) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut *w, item)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Read and validate a metadata file.
pub fn read_meta(path: impl AsRef<Path>) -> Result<Vec<VideoRecord>, IoError> {
    let path = path.as_ref();
    let videos: Vec<VideoRecord> = read_jsonl(path)?;
    for v in &videos {
        v.validate().map_err(|source| IoError::InvalidData {
            path: path.to_path_buf(),
            source,
        })?;
    }
    Ok(videos)
}

/// Videos paired with their segment features.
pub type Dataset = Vec<(VideoRecord, FeatureMatrix)>;

pub fn feature_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(FEATURE_DIR).join(format!("{id}.v2gf"))
}

/// Load a dataset directory. Every video in `meta.jsonl` must have a feature
/// file with one row per segment.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset, IoError> {
    let dir = dir.as_ref();
    let videos = read_meta(dir.join(META_FILE))?;
    let mut out = Vec::with_capacity(videos.len());
    for video in videos {
        let path = feature_path(dir, &video.id);
        let features = read_features(&path)?;
        if features.num_segments() != video.num_segments() {
            return Err(IoError::InvalidData {
                path,
                source: TypeError::InvalidVideo {
                    id: video.id.clone(),
                    reason: format!(
                        "{} feature rows for {} segments",
                        features.num_segments(),
                        video.num_segments()
                    ),
                },
            });
        }
        out.push((video, features));
    }
    Ok(out)
}

pub fn save_dataset(dataset: &[(VideoRecord, FeatureMatrix)], dir: impl AsRef<Path>) -> Result<(), IoError> {
    let dir = dir.as_ref();
    let feat_dir = dir.join(FEATURE_DIR);
    fs::create_dir_all(&feat_dir).map_err(|e| IoError::io(&feat_dir, e))?;
    let videos: Vec<&VideoRecord> = dataset.iter().map(|(v, _)| v).collect();
    write_jsonl(&videos, dir.join(META_FILE))?;
    for (video, features) in dataset {
        write_features(features, feature_path(dir, &video.id))?;
    }
    Ok(())
}
