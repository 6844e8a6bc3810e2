use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sdploc::io::{to_json_sig9, write_atomic};
use serde::Serialize;

/// Everything needed to rerun a command: the full argument vector plus the
/// resolved seeds and solver configuration, and what was written.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub formulation: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub status: Option<String>,
    pub outputs: Vec<PathBuf>,
    pub elapsed_seconds: f64,
    #[serde(skip)]
    started: Option<Instant>,
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        Self {
            tool: "sdploc",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            argv: std::env::args().collect(),
            seeds: BTreeMap::new(),
            formulation: None,
            variant: None,
            mode: None,
            status: None,
            outputs: Vec::new(),
            elapsed_seconds: 0.0,
            started: Some(Instant::now()),
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    /// Writes `contents` atomically and records the path.
    pub fn emit(&mut self, path: &Path, contents: &str) -> sdploc::Result<()> {
        write_atomic(path, contents.as_bytes())?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    pub fn finish(mut self, path: &Path) -> sdploc::Result<()> {
        self.elapsed_seconds = self.started.map_or(0.0, |t| t.elapsed().as_secs_f64());
        write_atomic(path, to_json_sig9(&self)?.as_bytes())
    }
}

/// `<file>.manifest.json` next to a single-file output.
pub fn sibling(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}
