use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use tempfile::NamedTempFile;

use crate::CliError;

/// Temp file in the destination's directory, so the final rename stays on one
/// file system.
pub fn temp_beside(path: &Path) -> Result<NamedTempFile, CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(CliError::io(format!("creating {}", dir.display())))?;
    NamedTempFile::new_in(dir).map_err(CliError::io(format!("creating temp file in {}", dir.display())))
}

pub fn persist(tmp: NamedTempFile, path: &Path) -> Result<(), CliError> {
    tmp.persist(path)
        .map(drop)
        .map_err(|e| CliError::io(format!("renaming into {}", path.display()))(e.error))
}

/// Writes `path` via a temporary file and rename.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> Result<(), CliError>,
{
    let tmp = temp_beside(path)?;
    let mut w = BufWriter::new(tmp);
    fill(&mut w)?;
    let tmp = w
        .into_inner()
        .map_err(|e| CliError::io(format!("writing {}", path.display()))(e.into_error()))?;
    persist(tmp, path)
}
