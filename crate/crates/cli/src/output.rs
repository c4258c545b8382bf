//! Output directories and atomic file writes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::args::OUT_ENV;
use crate::error::{CliError, Result};

/// `--out` if given, else `$DETAILNET_OUT/<command>`, else `runs/<command>`.
pub fn resolve_out(explicit: Option<&Path>, command: &str) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    match std::env::var_os(OUT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(command),
        _ => PathBuf::from("runs").join(command),
    }
}

/// Writes to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn write_json_atomic<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    write_atomic(path, (text + "\n").as_bytes())
}

/// Records what was run; deliberately free of timestamps so reruns compare equal.
pub fn write_manifest<T: Serialize>(dir: &Path, command: &str, argv: &[String], args: &T) -> Result<()> {
    #[derive(Serialize)]
    struct Manifest<'a, T> {
        command: &'a str,
        version: &'a str,
        argv: &'a [String],
        args: &'a T,
    }
    write_json_atomic(
        &dir.join("run_manifest.json"),
        &Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            argv,
            args,
        },
    )
}
