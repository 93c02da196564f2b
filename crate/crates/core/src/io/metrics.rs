//! Per-step training metrics as append-only CSV.
//!
//! ```text
//! # schema=pwae-metrics/1 config_hash=<hex>
//! step,total,recon,div,fidelity,wall_clock
//! 0,1.25,0.5,0.5,0.25,0.013
//! ...
//! # checkpoint sha256=<hex>
//! ```
//!
//! Floats use Rust's shortest round-trip formatting, so two identical runs
//! produce identical lines apart from `wall_clock`.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::train::StepMetrics;

pub const SCHEMA: &str = "pwae-metrics/1";
pub const COLUMNS: [&str; 6] = ["step", "total", "recon", "div", "fidelity", "wall_clock"];

pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    /// Creates (truncating) `path` and writes the header.
    pub fn create(path: impl AsRef<Path>, config_hash: &str) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "# schema={SCHEMA} config_hash={config_hash}")?;
        writeln!(out, "{}", COLUMNS.join(","))?;
        out.flush()?;
        Ok(Self { out })
    }

    pub fn append(&mut self, m: &StepMetrics) -> Result<()> {
        let l = &m.loss;
        writeln!(self.out, "{},{},{},{},{},{:.6}", m.step, l.total, l.recon, l.div, l.fidelity, m.wall_clock)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Appends the trailer naming the checkpoint the run produced.
pub fn append_checkpoint_hash(path: impl AsRef<Path>, sha256: &str) -> Result<()> {
    let mut f = OpenOptions::new().append(true).open(path)?;
    writeln!(f, "# checkpoint sha256={sha256}")?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub total: f64,
    pub recon: f64,
    pub div: f64,
    pub fidelity: f64,
    pub wall_clock: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsFile {
    pub config_hash: String,
    pub rows: Vec<MetricsRow>,
    pub checkpoint_sha256: Option<String>,
}

fn corrupt(line: usize, what: &str) -> Error {
    Error::Corrupt(format!("metrics line {line}: {what}"))
}

pub fn parse_metrics(text: &str) -> Result<MetricsFile> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| corrupt(1, "empty file"))?;
    let mut config_hash = None;
    for field in first.strip_prefix("# ").ok_or_else(|| corrupt(1, "missing header"))?.split_whitespace() {
        match field.split_once('=') {
            Some(("schema", s)) if s != SCHEMA => return Err(corrupt(1, &format!("unknown schema `{s}`"))),
            Some(("config_hash", h)) => config_hash = Some(h.to_string()),
            _ => {}
        }
    }
    let config_hash = config_hash.ok_or_else(|| corrupt(1, "no config_hash"))?;
    match lines.next() {
        Some((_, cols)) if cols == COLUMNS.join(",") => {}
        _ => return Err(corrupt(2, "unexpected column header")),
    }
    let mut rows = Vec::new();
    let mut checkpoint_sha256 = None;
    for (i, line) in lines {
        if let Some(h) = line.strip_prefix("# checkpoint sha256=") {
            checkpoint_sha256 = Some(h.to_string());
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != COLUMNS.len() {
            return Err(corrupt(i + 1, "wrong field count"));
        }
        let num = |k: usize| f[k].parse::<f64>().map_err(|_| corrupt(i + 1, COLUMNS[k]));
        rows.push(MetricsRow {
            step: f[0].parse().map_err(|_| corrupt(i + 1, "step"))?,
            total: num(1)?,
            recon: num(2)?,
            div: num(3)?,
            fidelity: num(4)?,
            wall_clock: num(5)?,
        });
    }
    Ok(MetricsFile { config_hash, rows, checkpoint_sha256 })
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<MetricsFile> {
    parse_metrics(&fs::read_to_string(path)?)
}

/// The file text with the `wall_clock` column removed, for comparing runs.
pub fn without_wall_clock(text: &str) -> String {
    text.lines()
        .map(|l| if l.starts_with('#') { l } else { l.rsplit_once(',').map_or(l, |(head, _)| head) })
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::LossBreakdown;

    fn step(step: usize, wall_clock: f64) -> StepMetrics {
        StepMetrics {
            step,
            loss: LossBreakdown {
                total: 1.0 / (step + 3) as f64,
                recon: 0.1,
                div: 0.2,
                fidelity: 0.3,
                converged: true,
            },
            wall_clock,
        }
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let mut w = MetricsWriter::create(&p, "abc").unwrap();
        for s in 0..3 {
            w.append(&step(s, s as f64 * 0.5)).unwrap();
        }
        w.finish().unwrap();
        append_checkpoint_hash(&p, "ff00").unwrap();
        let m = read_metrics(&p).unwrap();
        assert_eq!(m.config_hash, "abc");
        assert_eq!(m.rows.len(), 3);
        assert_eq!(m.rows[2].total, 1.0 / 5.0);
        assert_eq!(m.checkpoint_sha256.as_deref(), Some("ff00"));
    }

    #[test]
    fn wall_clock_is_ignored_for_comparison() {
        let a = "# schema=pwae-metrics/1 config_hash=x\nstep,total,recon,div,fidelity,wall_clock\n0,1,2,3,4,0.1";
        let b = a.replace("0.1", "9.9");
        assert_ne!(a, b);
        assert_eq!(without_wall_clock(a), without_wall_clock(&b));
    }

    #[test]
    fn rejects_other_schemas() {
        let text = "# schema=other/2 config_hash=x\nstep,total,recon,div,fidelity,wall_clock\n";
        assert_eq!(parse_metrics(text).unwrap_err().kind(), "corrupt");
    }
}
