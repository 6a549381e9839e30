//! Tab-separated `step name value` metrics log.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::losses::LossReport;

pub const HEADER: &str = "step\tname\tvalue";

/// Appends one row per loss term and step. Values use Rust's shortest
/// round-trip float formatting, so identical runs produce identical bytes.
pub struct MetricsLog {
    sink: Option<(PathBuf, BufWriter<File>)>,
}

impl MetricsLog {
    /// Drops every record.
    pub fn discard() -> Self {
        Self { sink: None }
    }

    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        writeln!(w, "{HEADER}").map_err(|e| Error::io(path, e))?;
        Ok(Self {
            sink: Some((path.to_path_buf(), w)),
        })
    }

    /// Opens an existing log for appending, e.g. when resuming.
    pub fn append(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Self::create(path);
        }
        let f = File::options().append(true).open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            sink: Some((path.to_path_buf(), BufWriter::new(f))),
        })
    }

    pub fn write(&mut self, step: u64, name: &str, value: f64) -> Result<()> {
        if let Some((path, w)) = &mut self.sink {
            writeln!(w, "{step}\t{name}\t{value}").map_err(|e| Error::io(path.as_path(), e))?;
        }
        Ok(())
    }

    pub fn record(&mut self, step: u64, report: &LossReport) -> Result<()> {
        for (name, value) in report.rows() {
            self.write(step, name, value)?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some((path, w)) = &mut self.sink {
            w.flush().map_err(|e| Error::io(path.as_path(), e))?;
        }
        Ok(())
    }
}

impl Drop for MetricsLog {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

/// Parses a metrics log back into `(step, name, value)` rows.
pub fn read_metrics(path: &Path) -> Result<Vec<(u64, String, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let bad = |msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: msg.to_string(),
        };
        let mut cols = line.split('\t');
        let (Some(s), Some(n), Some(v), None) = (cols.next(), cols.next(), cols.next(), cols.next()) else {
            return Err(bad("expected 3 tab-separated columns"));
        };
        rows.push((
            s.parse().map_err(|_| bad("bad step"))?,
            n.to_string(),
            v.parse().map_err(|_| bad("bad value"))?,
        ));
    }
    Ok(rows)
}
