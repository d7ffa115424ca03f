use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use ncs_core::linalg::Matrix;

/// Ordered `key = value` lines.
#[derive(Default)]
pub struct Report {
    lines: Vec<(String, String)>,
}

impl Report {
    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.lines.push((key.into(), value.to_string()));
    }

    pub fn extend(&mut self, prefix: &str, kv: Vec<(String, String)>) {
        for (k, v) in kv {
            self.lines.push((format!("{prefix}{k}"), v));
        }
    }

    pub fn matrix(&mut self, key: &str, m: &Matrix) {
        self.push(key, row_major(m));
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.lines {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }
}

/// `[a, b; c, d]`, rows separated by `;`.
pub fn row_major(m: &Matrix) -> String {
    let rows: Vec<String> = m
        .row_iter()
        .map(|r| {
            r.iter()
                .map(|v| format!("{v}"))
                .collect::<Vec<_>>()
                .join(", ")
        })
        .collect();
    format!("[{}]", rows.join("; "))
}

/// Per-stage wall-clock timings.
#[derive(Default)]
pub struct Timings {
    stages: Vec<(String, Duration)>,
}

impl Timings {
    pub fn record(&mut self, stage: &str, d: Duration) {
        self.stages.push((stage.to_string(), d));
    }
}

pub struct Manifest<'a> {
    pub command: &'a str,
    pub seed: u64,
    pub deterministic: bool,
    pub config_toml: &'a str,
    pub outputs: Vec<String>,
    pub timings: &'a Timings,
}

impl Manifest<'_> {
    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "[run]").unwrap();
        writeln!(out, "command = \"{}\"", self.command).unwrap();
        writeln!(out, "seed = {}", self.seed).unwrap();
        writeln!(out, "deterministic = {}", self.deterministic).unwrap();
        writeln!(out, "version = \"{}\"", env!("CARGO_PKG_VERSION")).unwrap();
        let outputs: Vec<String> = self.outputs.iter().map(|o| format!("\"{o}\"")).collect();
        writeln!(out, "outputs = [{}]", outputs.join(", ")).unwrap();
        writeln!(out, "\n[timings]").unwrap();
        for (stage, d) in &self.timings.stages {
            writeln!(out, "{stage}_seconds = {}", d.as_secs_f64()).unwrap();
        }
        writeln!(
            out,
            "\n# Configuration used for this run (also in config.toml)."
        )
        .unwrap();
        for line in self.config_toml.lines() {
            if let Some(rest) = line.strip_prefix('[') {
                writeln!(out, "[config.{rest}").unwrap();
            } else {
                writeln!(out, "{line}").unwrap();
            }
        }
        out
    }
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> std::io::Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, text)?;
    Ok(path)
}
