//! Run manifests: a `key = value` record of what a command read, wrote and
//! how long it took.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use efps_core::io::write_atomic;

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: Option<PathBuf>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub version: String,
    /// Extra recorded values, e.g. dataset parameters.
    pub values: BTreeMap<String, String>,
    pub timings: Vec<(String, f64)>,
    started: Instant,
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            config: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed: None,
            version: env!("CARGO_PKG_VERSION").to_string(),
            values: BTreeMap::new(),
            timings: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn value(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    /// Records the time since the previous mark (or the start) under `stage`.
    pub fn mark(&mut self, stage: &str) {
        let total: f64 = self.timings.iter().map(|t| t.1).sum();
        let now = self.started.elapsed().as_secs_f64();
        self.timings.push((stage.to_string(), now - total));
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: &str| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(v);
            s.push('\n');
        };
        line("command", &self.command);
        line("args", &self.args.join(" "));
        line("version", &self.version);
        if let Some(seed) = self.seed {
            line("seed", &seed.to_string());
        }
        if let Some(c) = &self.config {
            line("config", &c.display().to_string());
        }
        for p in &self.inputs {
            line("input", &p.display().to_string());
        }
        for p in &self.outputs {
            line("output", &p.display().to_string());
        }
        for (k, v) in &self.values {
            line(&format!("value.{k}"), v);
        }
        for (k, v) in &self.timings {
            line(&format!("time.{k}"), &format!("{v:.3}"));
        }
        line("time.total", &format!("{:.3}", self.started.elapsed().as_secs_f64()));
        s
    }

    /// Writes the manifest atomically to `path`.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes()).with_context(|| format!("writing {}", path.display()))
    }
}

/// Manifest location for a file output: `<file>.manifest`.
pub fn manifest_for(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest");
    PathBuf::from(name)
}

/// Reads the `value.*` entries of a manifest.
pub fn read_values(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once(" = ")
            .ok_or_else(|| anyhow!("{}:{}: expected `key = value`", path.display(), no + 1))?;
        if let Some(key) = k.strip_prefix("value.") {
            out.insert(key.to_string(), v.to_string());
        }
    }
    Ok(out)
}
