use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;

/// Shortest round-trip representation, `NaN`/`inf` spelled out.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        serde_json::to_string(&x).expect("finite floats serialize")
    } else {
        format!("{x}")
    }
}

/// Collects the files a command writes into its output directory.
pub struct OutputDir {
    dir: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Output {
            path: dir.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    fn fail(&self, name: &str, e: impl ToString) -> CliError {
        CliError::Output {
            path: self.dir.join(name),
            message: e.to_string(),
        }
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| self.fail(name, e))?;
        w.write_record(header).map_err(|e| self.fail(name, e))?;
        for row in rows {
            w.write_record(row).map_err(|e| self.fail(name, e))?;
        }
        w.flush().map_err(|e| self.fail(name, e))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| self.fail(name, e))?;
        text.push('\n');
        std::fs::write(self.dir.join(name), text).map_err(|e| self.fail(name, e))?;
        self.written.push(name.to_string());
        Ok(())
    }
}
