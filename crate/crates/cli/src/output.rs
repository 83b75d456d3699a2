use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

/// `#` comment lines identifying the tool, the config and every effective
/// option.
pub struct Provenance {
    lines: Vec<String>,
}

impl Provenance {
    pub fn new(command: &str, config_bytes: &[u8]) -> Self {
        let hash = Sha256::digest(config_bytes);
        Provenance {
            lines: vec![
                format!("nsfold {}", env!("CARGO_PKG_VERSION")),
                format!("command: {command}"),
                format!("config-sha256: {hash:x}"),
            ],
        }
    }

    pub fn option<T: Serialize>(&mut self, name: &str, value: &T) -> &mut Self {
        let json = serde_json::to_string(value).expect("options serialize");
        self.lines.push(format!("{name}: {json}"));
        self
    }

    pub fn note(&mut self, line: impl Into<String>) -> &mut Self {
        self.lines.push(line.into());
        self
    }

    pub fn header(&self) -> String {
        self.lines.iter().map(|l| format!("# {l}\n")).collect()
    }

    pub fn as_json(&self) -> Vec<String> {
        self.lines.clone()
    }
}

/// Writes through a temporary file in the target directory, so a failed
/// run never leaves a partial file behind.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        let mode = std::fs::metadata(path).map_or(0o644, |m| m.permissions().mode());
        tmp.as_file()
            .set_permissions(std::fs::Permissions::from_mode(mode))?;
    }
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// `path` with its extension replaced.
pub fn sibling(path: &Path, extension: &str) -> PathBuf {
    path.with_extension(extension)
}
