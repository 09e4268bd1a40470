//! Crash-safe file writes: data lands under a temporary name in the target
//! directory and is renamed into place, so an interrupted run never leaves a
//! half-written artifact at the destination path.

use std::fs;
use std::path::Path;

use mdgc_core::{Error, Result};

/// Writes `bytes` to `path` atomically (same-directory temp file + rename).
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{}: not a file path", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// `create_dir_all` with the crate's error type.
pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_creates_the_file_and_removes_the_temp() {
        let dir = std::env::temp_dir().join(format!("fsio-test-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let target = dir.join("out.bin");
        atomic_write(&target, b"hello").unwrap();
        assert_eq!(fs::read(&target).unwrap(), b"hello");
        assert!(!dir.join("out.bin.tmp").exists());
        atomic_write(&target, b"replaced").unwrap();
        assert_eq!(fs::read(&target).unwrap(), b"replaced");
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn bare_root_path_is_rejected() {
        assert!(atomic_write(Path::new("/"), b"x").is_err());
    }
}
