//! Atomic file emission.

use std::io::Write;
use std::path::Path;

use crate::error::{CliError, CliResult};

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

/// Text file whose first line records the config hash.
pub fn write_report(path: &Path, config_hash: &str, body: &str) -> CliResult<()> {
    write_atomic(path, format!("# config_hash={config_hash}\n{body}").as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replaces_and_prefixes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/r.tsv");
        write_report(&p, "abc", "x\t1\n").unwrap();
        write_report(&p, "abc", "y\t2\n").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "# config_hash=abc\ny\t2\n");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
