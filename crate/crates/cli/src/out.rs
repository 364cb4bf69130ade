//! Output files and the human summary.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

pub struct Out {
    root: PathBuf,
    summary: Vec<String>,
}

impl Out {
    pub fn new(root: &Path) -> Self {
        Out {
            root: root.to_path_buf(),
            summary: Vec::new(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// `<root>/<dir>/<name>`, creating the directory.
    pub fn path(&self, dir: &str, name: &str) -> anyhow::Result<PathBuf> {
        let d = self.root.join(dir);
        fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
        Ok(d.join(name))
    }

    pub fn csv(&self, dir: &str, name: &str, header: &[&str], rows: &[Vec<String>]) -> anyhow::Result<()> {
        let path = self.path(dir, name)?;
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn json<T: Serialize + ?Sized>(&self, dir: &str, name: &str, value: &T) -> anyhow::Result<()> {
        let path = self.path(dir, name)?;
        let text = serde_json::to_string_pretty(value)? + "\n";
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn jsonl<T: Serialize>(&self, dir: &str, name: &str, items: &[T]) -> anyhow::Result<()> {
        let path = self.path(dir, name)?;
        reviewq::store::save_jsonl(items, &path)?;
        Ok(())
    }

    /// Prints one summary line to stdout and keeps it for the report.
    pub fn say(&mut self, line: impl Into<String>) {
        let line = line.into();
        println!("{line}");
        self.summary.push(line);
    }

    pub fn summary(&self) -> &[String] {
        &self.summary
    }
}

pub fn f4(x: f64) -> String {
    format!("{x:.4}")
}

pub fn opt4(x: Option<f64>) -> String {
    x.map(f4).unwrap_or_default()
}
