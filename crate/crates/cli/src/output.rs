use std::fs;
use std::path::{Path, PathBuf};

use infbsde::grid::fmt_f64;

use crate::CliError;

/// Output directory for a run.
pub struct OutDir(PathBuf);

impl OutDir {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(path).map_err(|e| CliError::Io(format!("creating {}: {e}", path.display())))?;
        Ok(OutDir(path.to_path_buf()))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<(), CliError> {
        let p = self.path(name);
        fs::write(&p, contents).map_err(|e| CliError::Io(format!("writing {}: {e}", p.display())))
    }

    pub fn csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let p = self.path(name);
        let io = |e: csv::Error| CliError::Io(format!("writing {}: {e}", p.display()));
        let mut w = csv::Writer::from_path(&p).map_err(io)?;
        w.write_record(header).map_err(io)?;
        for row in rows {
            w.write_record(row).map_err(io)?;
        }
        w.flush().map_err(|e| CliError::Io(format!("writing {}: {e}", p.display())))
    }
}

pub fn num(v: f64) -> String {
    fmt_f64(v)
}

pub fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}
