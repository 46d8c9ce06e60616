//! Content addressing of artifacts.
//!
//! Every artifact `x` has a sibling `x.stamp` holding the SHA-256 of the
//! config sections that produced it, chained with the stamps of its inputs.
//! A consumer recomputes the expected stamp from the current config and
//! refuses an input whose stamp differs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};

pub fn digest(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}

pub fn stamp_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().expect("artifact has a file name").to_os_string();
    name.push(".stamp");
    artifact.with_file_name(name)
}

pub fn read_stamp(artifact: &Path) -> Option<String> {
    fs::read_to_string(stamp_path(artifact)).ok().map(|s| s.trim().to_string())
}

pub fn write_stamp(artifact: &Path, stamp: &str) -> Result<()> {
    let p = stamp_path(artifact);
    fs::write(&p, format!("{stamp}\n")).with_context(|| format!("writing {}", p.display()))
}

/// True when the artifact exists with exactly this stamp.
pub fn is_current(artifact: &Path, stamp: &str) -> bool {
    artifact.exists() && read_stamp(artifact).as_deref() == Some(stamp)
}

/// Checks an input artifact against the stamp the current config expects.
pub fn check_input(artifact: &Path, expected: &str, producer: &str, force: bool) -> Result<()> {
    if !artifact.exists() {
        bail!("missing {}; run `sigred {producer}` first", artifact.display());
    }
    match read_stamp(artifact) {
        Some(s) if s == expected => Ok(()),
        found => {
            let why = match found {
                Some(_) => "was produced from a different configuration",
                None => "has no stamp",
            };
            if force {
                log::warn!("{} {why}; continuing because of --force", artifact.display());
                Ok(())
            } else {
                bail!(
                    "{} {why}; rerun `sigred {producer}` or pass --force to use it anyway",
                    artifact.display()
                )
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_separates_parts() {
        assert_ne!(digest(&["ab", "c"]), digest(&["a", "bc"]));
        assert_eq!(digest(&["x"]), digest(&["x"]));
        assert_eq!(digest(&[]).len(), 64);
    }

    #[test]
    fn stale_inputs_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("system.txt");
        assert!(check_input(&a, "s", "build", false).unwrap_err().to_string().contains("sigred build"));
        fs::write(&a, "x").unwrap();
        assert!(check_input(&a, "s", "build", false).is_err());
        write_stamp(&a, "s").unwrap();
        assert!(is_current(&a, "s"));
        check_input(&a, "s", "build", false).unwrap();
        let e = check_input(&a, "t", "build", false).unwrap_err().to_string();
        assert!(e.contains("different configuration"), "{e}");
        check_input(&a, "t", "build", true).unwrap();
    }
}
