//! Artifact writing: one output directory per run, filtered by `run.emit`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::Emit;
use crate::svg::LineChart;
use crate::CliError;

pub struct OutputDir {
    dir: PathBuf,
    emit: Vec<Emit>,
    written: Vec<String>,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io { path: path.to_path_buf(), source: e }
}

/// Pretty JSON with a trailing newline.
pub fn json_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output types always serialize");
    s.push('\n');
    s
}

impl OutputDir {
    pub fn create(dir: &Path, emit: &[Emit]) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        Ok(OutputDir { dir: dir.to_path_buf(), emit: emit.to_vec(), written: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    /// Files written so far, in order.
    pub fn written(&self) -> &[String] {
        &self.written
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let mut f = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        f.write_all(bytes).map_err(|e| io_err(&path, e))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn csv(&mut self, name: &str, fill: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<(), CliError> {
        if !self.emit.contains(&Emit::Csv) {
            return Ok(());
        }
        let mut buf = Vec::new();
        fill(&mut buf).map_err(|e| io_err(&self.dir.join(name), e))?;
        self.put(name, &buf)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        if !self.emit.contains(&Emit::Json) {
            return Ok(());
        }
        self.put(name, json_string(value).as_bytes())
    }

    /// Written whatever `run.emit` says (metadata, checks, resolved config).
    pub fn always(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        self.put(name, text.as_bytes())
    }

    pub fn svg(&mut self, name: &str, chart: &LineChart) -> Result<(), CliError> {
        if !self.emit.contains(&Emit::Svg) {
            return Ok(());
        }
        self.put(name, chart.render().as_bytes())
    }
}
