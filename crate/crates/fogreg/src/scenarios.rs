//! Scenario lookup: a built-in name or a path to a scenario file holding the
//! canonical record of a `Scenario`.

use std::path::Path;

use fogreg_core::bench::{builtin, builtin_scenarios, Scenario};
use fogreg_core::codec::{from_record, to_canonical, CodecError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("no built-in scenario or file named {0:?} (built-ins: {1})")]
    Unknown(String, String),
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: String, source: CodecError },
}

pub fn load(name_or_path: &str) -> Result<Scenario, LoadError> {
    if let Some(s) = builtin(name_or_path) {
        return Ok(s);
    }
    let path = Path::new(name_or_path);
    if !path.exists() {
        let names: Vec<String> = builtin_scenarios().into_iter().map(|s| s.name).collect();
        return Err(LoadError::Unknown(name_or_path.to_string(), names.join(", ")));
    }
    let bytes = std::fs::read(path).map_err(|source| LoadError::Io {
        path: name_or_path.to_string(),
        source,
    })?;
    from_record(&bytes).map_err(|source| LoadError::Parse {
        path: name_or_path.to_string(),
        source,
    })
}

/// Canonical record of a scenario, newline-terminated, as accepted by
/// [`load`].
pub fn render(scenario: &Scenario) -> Vec<u8> {
    let mut bytes = to_canonical(scenario).expect("scenarios always encode");
    bytes.push(b'\n');
    bytes
}
