//! Flat `key = value` files: run configuration input and the per-run manifest.
//!
//! A manifest block records the command, every effective setting, and SHA-256
//! checksums of inputs and outputs. It doubles as a config file: loading it keeps
//! the settings of its last block and skips the bookkeeping keys.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Keys a manifest carries that are not settings.
const BOOKKEEPING_KEYS: [&str; 3] = ["command", "version", "config_sha256"];
const BOOKKEEPING_PREFIXES: [&str; 3] = ["input.", "output.", "result."];

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str, source: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::format(source, format!("line {}: expected key = value", i + 1))
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::format(source, format!("line {}: empty key", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Settings for `command` from a config file or manifest, in file order. A plain
/// config file is used whole; a manifest contributes its last block for `command`.
pub fn read_config_file(path: &Path, command: &str) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let entries = parse_key_values(&text, path)?;
    let starts: Vec<usize> = entries
        .iter()
        .enumerate()
        .filter(|(_, (k, _))| k == "command")
        .map(|(i, _)| i)
        .collect();
    let block = if starts.is_empty() {
        &entries[..]
    } else {
        let start = starts
            .iter()
            .rev()
            .copied()
            .find(|&i| entries[i].1 == command)
            .ok_or_else(|| {
                Error::Config(format!("{} has no '{command}' run", path.display()))
            })?;
        let end = starts
            .iter()
            .copied()
            .find(|&i| i > start)
            .unwrap_or(entries.len());
        &entries[start..end]
    };
    Ok(block
        .iter()
        .filter(|(k, _)| {
            !BOOKKEEPING_KEYS.contains(&k.as_str())
                && !BOOKKEEPING_PREFIXES.iter().any(|p| k.starts_with(p))
        })
        .cloned()
        .collect())
}

/// One run's manifest block.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<(String, String)>,
}

impl Manifest {
    /// Starts a block for `command` with its effective settings. The config hash
    /// covers exactly these settings.
    pub fn new(command: &str, settings: &[(String, String)]) -> Self {
        let canonical: String = settings
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        let mut entries = vec![
            ("command".to_string(), command.to_string()),
            ("version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            (
                "config_sha256".to_string(),
                sha256_hex(canonical.as_bytes()),
            ),
        ];
        entries.extend(settings.iter().cloned());
        Self { entries }
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.push((key.into(), value.into()));
    }

    /// Records a value computed by the run. Skipped when the manifest is read as config.
    pub fn push_result(&mut self, key: &str, value: impl Into<String>) {
        self.push(format!("result.{key}"), value);
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let sum = sha256_file(path)?;
        self.push(format!("input.{}", path.display()), sum);
        Ok(())
    }

    /// Records an output by its name relative to the output directory.
    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        let sum = sha256_file(path)?;
        let name = path.file_name().map_or_else(
            || path.display().to_string(),
            |f| f.to_string_lossy().into_owned(),
        );
        self.push(format!("output.{name}"), sum);
        Ok(())
    }

    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Appends this block to `path`, separated from earlier blocks by a blank line.
    pub fn append_to(&self, path: &Path) -> Result<()> {
        let existing = path.exists()
            && std::fs::metadata(path)
                .map(|m| m.len() > 0)
                .unwrap_or(false);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut text = String::new();
        if existing {
            text.push('\n');
        }
        text.push_str(&self.render());
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_abc() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let kv = parse_key_values("# c\n\nseed = 7\nout= x \n", Path::new("c")).unwrap();
        assert_eq!(
            kv,
            [("seed".into(), "7".into()), ("out".into(), "x".into())]
        );
        assert!(parse_key_values("novalue\n", Path::new("c")).is_err());
    }

    #[test]
    fn manifest_reads_back_as_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.txt");
        let settings = vec![("seed".to_string(), "1".to_string())];
        Manifest::new("simulate", &settings)
            .append_to(&path)
            .unwrap();
        let mut second = Manifest::new("simulate", &[("seed".to_string(), "2".to_string())]);
        second.push("output.dataset.csv", "00");
        second.push_result("selected_dataset", "imp_1.csv");
        second.append_to(&path).unwrap();
        Manifest::new("summarize", &[("fit".to_string(), "f".to_string())])
            .append_to(&path)
            .unwrap();
        assert_eq!(
            read_config_file(&path, "simulate").unwrap(),
            [("seed".to_string(), "2".to_string())]
        );
        assert_eq!(
            read_config_file(&path, "summarize").unwrap(),
            [("fit".to_string(), "f".to_string())]
        );
        assert!(read_config_file(&path, "fit").is_err());
    }

    #[test]
    fn plain_config_is_used_whole() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "seed = 3\nk = 2\n").unwrap();
        assert_eq!(read_config_file(&path, "fit").unwrap().len(), 2);
    }

    #[test]
    fn config_hash_depends_on_settings_only() {
        let a = Manifest::new("fit", &[("seed".into(), "1".into())]);
        let b = Manifest::new("fit", &[("seed".into(), "1".into())]);
        let c = Manifest::new("fit", &[("seed".into(), "2".into())]);
        assert_eq!(a.entries[2], b.entries[2]);
        assert_ne!(a.entries[2], c.entries[2]);
    }
}
