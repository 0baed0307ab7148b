//! Resolved run manifest: every option that shaped a run, written as sorted
//! `key=value` lines so identical configurations produce byte-identical
//! files and any output directory can be reproduced from its manifest alone.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;

use trajeval_core::{Error, Result};

pub(crate) struct Manifest {
    entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    /// Record one resolved option. Later writes to the same key win.
    pub fn put(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    /// Record an optional value, spelling absence out explicitly.
    pub fn put_opt(&mut self, key: &str, value: Option<impl Display>) {
        match value {
            Some(v) => self.put(key, v),
            None => self.put(key, "none"),
        }
    }

    /// Record a list as a comma-joined value (`none` when empty).
    pub fn put_list(&mut self, key: &str, values: impl IntoIterator<Item = impl Display>) {
        let joined: Vec<String> = values.into_iter().map(|v| v.to_string()).collect();
        if joined.is_empty() {
            self.put(key, "none");
        } else {
            self.put(key, joined.join(","));
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    /// Write `manifest.txt` into the output directory.
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        let path = out_dir.join("manifest.txt");
        std::fs::write(&path, self.render()).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })
    }
}
