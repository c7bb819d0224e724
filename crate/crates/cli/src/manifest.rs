use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::{CliError, CliResult, MANIFEST_FILE};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `config_sha256 <hex>` followed by `<hex>  <path>` for every file, paths
/// relative to `run_dir`.
pub fn write_manifest(run_dir: &Path, config_text: &str, files: &[PathBuf]) -> CliResult<PathBuf> {
    let mut s = String::new();
    let _ = writeln!(s, "config_sha256 {}", sha256_hex(config_text.as_bytes()));
    for f in files {
        let p = run_dir.join(f);
        let bytes = fs::read(&p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        let _ = writeln!(s, "{}  {}", sha256_hex(&bytes), f.display());
    }
    let path = run_dir.join(MANIFEST_FILE);
    fs::write(&path, s).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}
