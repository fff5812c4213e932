//! CSV and JSON writers shared by the subcommands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::Outcome;

/// Fixed 17-significant-digit rendering; empty for `None`.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn csv_writer(dir: &Path, name: &str) -> Outcome<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(dir.join(name))?)))
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Outcome<()> {
    let mut f = BufWriter::new(File::create(dir.join(name))?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

/// Run metadata written next to the results as `run.json`.
pub struct Meta {
    command: &'static str,
    config: serde_json::Value,
    threads: usize,
    started: Instant,
}

#[derive(Serialize)]
struct MetaRecord<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    threads: usize,
    wall_time_s: f64,
    config: &'a serde_json::Value,
    details: T,
}

impl Meta {
    pub fn start(command: &'static str, config_text: &str, threads: usize) -> Self {
        Self {
            command,
            config: serde_json::from_str(config_text).unwrap_or(serde_json::Value::Null),
            threads,
            started: Instant::now(),
        }
    }

    /// Writes `run.json` with grid sizes, tolerances and the wall time.
    pub fn finish<T: Serialize>(self, dir: &Path, details: T) -> Outcome<()> {
        let rec = MetaRecord {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            threads: self.threads,
            wall_time_s: self.started.elapsed().as_secs_f64(),
            config: &self.config,
            details,
        };
        write_json(dir, "run.json", &rec)
    }
}
