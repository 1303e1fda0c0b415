//! Run manifests: plain `key=value` text, one entry per line.
//!
//! `arg.<flag>` entries hold every resolved command-line flag, so a manifest
//! can be turned back into an invocation. `output.<name>` entries name the
//! written files and `output.<name>.sha256` their digests.

use std::fs;
use std::path::{Path, PathBuf};

use crate::checkpoint::digest_bytes;
use crate::error::{Error, Result};

pub const HEADER: &str = "# gsgn run manifest";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunManifest {
    pub entries: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        let mut m = Self::default();
        m.set("command", command);
        m.set("version", env!("CARGO_PKG_VERSION"));
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        assert!(!key.contains('=') && !key.contains('\n') && !value.contains('\n'));
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn command(&self) -> Result<&str> {
        self.get("command")
            .ok_or_else(|| Error::Manifest("missing command entry".into()))
    }

    pub fn args(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("arg.").map(|flag| (flag, v.as_str())))
    }

    pub fn set_arg(&mut self, flag: &str, value: impl ToString) {
        self.set(&format!("arg.{flag}"), value);
    }

    /// Records an output file and its SHA-256.
    pub fn record_output(&mut self, name: &str, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.set(&format!("output.{name}"), path.display());
        self.set(&format!("output.{name}.sha256"), digest_bytes(&bytes));
        Ok(())
    }

    /// `(name, path, sha256)` of every recorded output.
    pub fn outputs(&self) -> Vec<(String, PathBuf, String)> {
        self.entries
            .iter()
            .filter_map(|(k, v)| {
                let name = k.strip_prefix("output.")?;
                if name.ends_with(".sha256") {
                    return None;
                }
                let digest = self.get(&format!("{k}.sha256"))?;
                Some((name.to_string(), PathBuf::from(v), digest.to_string()))
            })
            .collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Self::default();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Manifest(format!("line {}: expected key=value", i + 1)))?;
            m.entries.push((k.to_string(), v.to_string()));
        }
        m.command()?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
