//! Output files, each written to a temporary file in the target directory and
//! renamed into place so an interrupted run never leaves a truncated file.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

use crate::error::CliError;

pub struct OutputDir {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    /// Files written so far, in order.
    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    /// Atomically writes `name` with the bytes produced by `fill`.
    pub fn write<F>(&mut self, name: &str, fill: F) -> Result<PathBuf, CliError>
    where
        F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
    {
        let target = self.dir.join(name);
        let tmp = NamedTempFile::new_in(&self.dir).map_err(|e| CliError::io(&self.dir, e))?;
        let mut w = BufWriter::new(tmp);
        fill(&mut w).map_err(|e| CliError::io(&target, e))?;
        let tmp = w.into_inner().map_err(|e| CliError::io(&target, e.into_error()))?;
        tmp.as_file().sync_all().map_err(|e| CliError::io(&target, e))?;
        tmp.persist(&target).map_err(|e| CliError::io(&target, e.error))?;
        self.written.push(target.clone());
        Ok(target)
    }

    /// Writes a CSV through a `csv::Writer`-based callback.
    pub fn write_csv<F>(&mut self, name: &str, fill: F) -> Result<PathBuf, CliError>
    where
        F: FnOnce(&mut dyn Write) -> Result<(), csv::Error>,
    {
        self.write(name, |w| fill(w).map_err(csv_to_io))
    }

    /// Writes `key = value` lines.
    pub fn write_summary(&mut self, name: &str, pairs: &[(String, String)]) -> Result<PathBuf, CliError> {
        self.write(name, |w| comag::simulation::write_summary(w, pairs))
    }
}

fn csv_to_io(e: csv::Error) -> std::io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io,
        other => std::io::Error::other(format!("{other:?}")),
    }
}
