//! On-disk formats: binary PGM images, the tensor checkpoint container, and
//! small CSV helpers. Everything is written deterministically so repeated
//! runs produce identical bytes.

mod checkpoint;
mod pgm;

pub use checkpoint::{
    decode_tensors, encode_tensors, load_checkpoint, read_tensors, save_checkpoint, write_tensors, Tensor,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use pgm::{decode_pgm, encode_pgm, read_pgm, write_pgm};

use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes UTF-8 text, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_file(path, text.as_bytes())
}

pub fn read_file_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Formats a float for CSV output with round-trip precision.
pub fn csv_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:?}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Renders rows under a header as comma-separated text.
pub fn csv_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    write_file(path, csv_table(header, rows).as_bytes())
}
