//! Registry snapshot files: the canonical record of a replica's state,
//! replaced atomically so a crash never leaves a torn file behind.

use std::io::Write;
use std::path::Path;

use fogreg_core::codec::CodecError;
use fogreg_core::RegistryState;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("corrupt snapshot: {0}")]
    Corrupt(#[from] CodecError),
}

pub fn save(path: &Path, state: &RegistryState) -> Result<(), SnapshotError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&state.snapshot_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// `Ok(None)` when no snapshot exists yet.
pub fn load(path: &Path) -> Result<Option<RegistryState>, SnapshotError> {
    match std::fs::read(path) {
        Ok(bytes) => Ok(Some(RegistryState::from_snapshot(&bytes)?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}
