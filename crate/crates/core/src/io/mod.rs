//! File formats: checkpoints, run configuration, CSV tables and SVG plots.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::Result;

pub mod checkpoint;
pub mod config;
pub mod csv;
pub mod svg;

/// Writes to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
