//! Run directories and manifests.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use spatial_aft::{Error, Result};

/// Directory receiving every output file of one run.
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    /// `out` when given, otherwise `runs/<timestamp>-seed<seed>`.
    pub fn create(out: Option<&Path>, seed: u64) -> Result<Self> {
        let path = match out {
            Some(p) => p.to_path_buf(),
            None => PathBuf::from("runs").join(format!("{}-seed{seed}", chrono::Local::now().format("%Y%m%dT%H%M%S"))),
        };
        std::fs::create_dir_all(&path).map_err(|e| io(&path, e))?;
        Ok(Self { path })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn writer(&self, name: &str) -> Result<BufWriter<File>> {
        let p = self.file(name);
        Ok(BufWriter::new(File::create(&p).map_err(|e| io(&p, e))?))
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let p = self.file(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(&p, text).map_err(|e| io(&p, e))?;
        Ok(p)
    }

    pub fn subdir(&self, name: &str) -> Result<RunDir> {
        let path = self.file(name);
        std::fs::create_dir_all(&path).map_err(|e| io(&path, e))?;
        Ok(RunDir { path })
    }
}

pub fn io(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Everything needed to re-execute a run: the argument vector, the parsed
/// configuration and any values resolved from presets or defaults.
#[derive(Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub argv: &'a [String],
    pub threads: usize,
    pub config: &'a C,
    pub resolved: Value,
}

impl<'a, C: Serialize> Manifest<'a, C> {
    pub fn new(argv: &'a [String], threads: usize, config: &'a C, resolved: Value) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            argv,
            threads,
            config,
            resolved,
        }
    }
}
