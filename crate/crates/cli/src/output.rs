//! Result files. CSV: `,` separator, `.` decimal, 17 significant digits, a
//! `# schema_version` comment line. JSON: finite numbers only.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::SCHEMA_VERSION;

pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Non-finite values become `null` rather than invalid JSON.
pub fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(columns: &[String]) -> Self {
        let mut text = format!("# schema_version: {SCHEMA_VERSION}\n");
        text.push_str(&columns.join(","));
        text.push('\n');
        Self { text }
    }

    pub fn row(&mut self, cells: &[String]) {
        let _ = writeln!(self.text, "{}", cells.join(","));
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn write_csv(&self, name: &str, csv: Csv) -> Result<PathBuf> {
        let path = self.root.join(name);
        fs::write(&path, csv.into_string())
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.root.join(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(num(0.1), "1.0000000000000001e-1");
        assert_eq!(num(-2.0), "-2.0000000000000000e0");
        let x = 1.0 / 3.0;
        assert_eq!(num(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn csv_header() {
        let mut c = Csv::new(&["h".into(), "I".into()]);
        c.row(&[num(0.5), num(0.0)]);
        let s = c.into_string();
        assert!(s.starts_with("# schema_version: 1\nh,I\n"));
    }
}
