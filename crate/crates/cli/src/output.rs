//! CSV and JSON-lines emission.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::Failure;

/// Floats with 17 significant digits, enough to round-trip any `f64`.
pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn row(out: &mut dyn Write, fields: &[f64]) -> io::Result<()> {
    let line: Vec<String> = fields.iter().map(|&x| float(x)).collect();
    writeln!(out, "{}", line.join(","))
}

/// Where a subcommand's main artifact goes: `<out_dir>/<name>` when an
/// output directory is configured, stdout otherwise.
pub struct Sink {
    path: Option<PathBuf>,
}

impl Sink {
    pub fn new(out_dir: Option<&Path>, name: &str) -> Result<Self, Failure> {
        let path = match out_dir {
            None => None,
            Some(dir) => {
                std::fs::create_dir_all(dir)
                    .map_err(|e| Failure::Usage(format!("cannot create output directory {}: {e}", dir.display())))?;
                Some(dir.join(name))
            }
        };
        Ok(Self { path })
    }

    pub fn open(&self) -> Result<Box<dyn Write>, Failure> {
        match &self.path {
            None => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
            Some(p) => create(p),
        }
    }
}

pub fn create(path: &Path) -> Result<Box<dyn Write>, Failure> {
    let file = File::create(path).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))?;
    Ok(Box::new(BufWriter::new(file)))
}

pub fn io_failure(e: io::Error) -> Failure {
    Failure::Runtime(format!("write failed: {e}"))
}
