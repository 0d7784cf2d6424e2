//! File formats and path helpers.

mod binary;
mod tsv;

use std::path::Path;

pub use binary::{
    read_backend, read_embeddings, read_features, write_backend, write_embeddings, write_features, EmbeddingTable,
    BACKEND_MAGIC, EMBEDDING_MAGIC, FEATURE_MAGIC, VERSION,
};
pub use tsv::{
    format_boxes, format_calibration, format_det, format_detections, format_key, format_pairs, format_score,
    format_scores, format_trials, parse_boxes, parse_calibration, parse_detections, parse_key, parse_pairs,
    parse_scores, parse_trials, BoxRecord, DetectionRecord,
};

use crate::error::{Error, Result};

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    let bytes = read_bytes(path)?;
    String::from_utf8(bytes).map_err(|_| Error::Format(format!("{}: not valid UTF-8", path.display())))
}

/// Writes via a temporary sibling and rename, creating parent directories.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

fn source_name(path: &Path) -> String {
    path.display().to_string()
}

pub fn load_trials(path: &Path) -> Result<crate::trials::TrialList> {
    parse_trials(&read_text(path)?, &source_name(path))
}

pub fn load_key(path: &Path) -> Result<crate::trials::TrialKey> {
    parse_key(&read_text(path)?, &source_name(path))
}

/// Loads a score file; the system id defaults to the file stem.
pub fn load_scores<T: crate::scalar::Real>(path: &Path, system_id: Option<&str>) -> Result<crate::trials::ScoreSet<T>> {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_scores(&read_text(path)?, &source_name(path), system_id.unwrap_or(&stem))
}

pub fn load_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    parse_pairs(&read_text(path)?, &source_name(path))
}

pub fn load_embeddings<T: crate::scalar::Real>(path: &Path) -> Result<EmbeddingTable<T>> {
    read_embeddings(&read_bytes(path)?).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn load_detections<T: crate::scalar::Real>(path: &Path) -> Result<Vec<DetectionRecord<T>>> {
    parse_detections(&read_text(path)?, &source_name(path))
}

pub fn load_boxes<T: crate::scalar::Real>(path: &Path) -> Result<Vec<BoxRecord<T>>> {
    parse_boxes(&read_text(path)?, &source_name(path))
}
