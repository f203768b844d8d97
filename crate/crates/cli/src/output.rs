use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hicorr_core::{Error, Result};
use serde::Serialize;
use serde_json::{json, Value};

/// Collects result tables and the metadata for one command's JSON sidecar.
pub struct Run {
    dir: PathBuf,
    command: &'static str,
    config: Value,
    started: Instant,
    timings: BTreeMap<String, f64>,
    warnings: Vec<String>,
    files: Vec<String>,
}

impl Run {
    pub fn new(dir: &Path, command: &'static str, config: Value) -> Result<Run> {
        fs::create_dir_all(dir)?;
        Ok(Run {
            dir: dir.to_path_buf(),
            command,
            config,
            started: Instant::now(),
            timings: BTreeMap::new(),
            warnings: Vec::new(),
            files: Vec::new(),
        })
    }

    /// Runs `f` and records its wall time under `label`.
    pub fn time<T>(&mut self, label: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.timings
            .insert(label.to_string(), t.elapsed().as_secs_f64() * 1e3);
        out
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        fs::write(self.dir.join(name), contents)?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Writes `<command>.json` with the run metadata and `result`.
    pub fn finish(mut self, result: impl Serialize) -> Result<()> {
        self.timings
            .insert("total".into(), self.started.elapsed().as_secs_f64() * 1e3);
        let doc = json!({
            "tool": "hicorr",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config": self.config,
            "files": self.files,
            "timings_ms": self.timings,
            "warnings": self.warnings,
            "result": result,
        });
        let text = serde_json::to_string_pretty(&doc)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        fs::write(self.dir.join(format!("{}.json", self.command)), text + "\n")?;
        Ok(())
    }
}
