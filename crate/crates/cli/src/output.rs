//! CSV and metadata files, built in memory and written in one go.

use anyhow::{Context, Result};
use std::fmt::Display;
use std::path::Path;

pub struct Artifact {
    pub name: &'static str,
    pub body: Vec<u8>,
}

impl Artifact {
    pub fn csv(name: &'static str, header: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        Ok(Self { name, body: w.into_inner().context("flushing csv")? })
    }

    pub fn text(name: &'static str, body: String) -> Self {
        Self { name, body: body.into_bytes() }
    }
}

/// Shortest representation that round-trips.
pub fn fmt_num(v: f64) -> String {
    format!("{v:?}")
}

/// `key = value` lines.
#[derive(Default)]
pub struct Meta {
    lines: Vec<String>,
}

impl Meta {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: &str, value: impl Display) {
        self.lines.push(format!("{key} = {value}"));
    }

    pub fn num(&mut self, key: &str, value: f64) {
        self.lines.push(format!("{key} = {}", fmt_num(value)));
    }

    pub fn opt(&mut self, key: &str, value: Option<f64>) {
        self.lines.push(format!("{key} = {}", value.map(fmt_num).unwrap_or_else(|| "none".into())));
    }

    pub fn render(&self) -> String {
        let mut s = self.lines.join("\n");
        s.push('\n');
        s
    }
}

pub fn write_all(dir: &Path, artifacts: &[Artifact]) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for a in artifacts {
        let p = dir.join(a.name);
        std::fs::write(&p, &a.body).with_context(|| format!("writing {}", p.display()))?;
        log::info!("wrote {}", p.display());
    }
    Ok(())
}
