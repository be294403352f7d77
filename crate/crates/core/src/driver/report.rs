use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    unix_now, HostInfo, Provenance, SampleRecord, SweepReport, SweepStatus, SCHEMA_VERSION,
};
use crate::config::{Configuration, ObjectiveSample};
use crate::error::{Error, Result};
use crate::pareto::front_build;

/// Columns written to `samples.csv`. Inputs may carry extra columns (the
/// counter CSV layout does); only these four are required.
pub const SAMPLE_CSV_HEADER: [&str; 4] = ["g", "t", "time_s", "dynamic_energy_j"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
    Plotdata,
    All,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "plotdata" => Ok(ReportFormat::Plotdata),
            "all" => Ok(ReportFormat::All),
            _ => Err(Error::invalid(format!(
                "unknown format `{s}` (expected json, csv, plotdata or all)"
            ))),
        }
    }
}

/// Write the report into directory `dir` and return the files created:
/// `report.json`, `samples.csv`, and `front.dat` plus `samples.dat`
/// (`time energy` per line) for plotting.
pub fn emit_report(report: &SweepReport, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    if report.samples.is_empty() {
        return Err(Error::InsufficientData(
            "the report has no samples to write".into(),
        ));
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let wants = |f: ReportFormat| format == f || format == ReportFormat::All;

    if wants(ReportFormat::Json) {
        let path = dir.join("report.json");
        let mut out = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut out, report)?;
        out.write_all(b"\n")?;
        out.flush()?;
        written.push(path);
    }
    if wants(ReportFormat::Csv) {
        let path = dir.join("samples.csv");
        let front = report.front.configurations();
        let mut out = BufWriter::new(File::create(&path)?);
        writeln!(out, "{},on_front", SAMPLE_CSV_HEADER.join(","))?;
        for r in &report.samples {
            let s = &r.sample;
            writeln!(
                out,
                "{},{},{},{},{}",
                s.config.groups,
                s.config.threads_per_group,
                s.time_s,
                s.dynamic_energy_j,
                front.contains(&s.config)
            )?;
        }
        out.flush()?;
        written.push(path);
    }
    if wants(ReportFormat::Plotdata) {
        let (front, samples) = plotdata_lines(report);
        for (name, lines) in [("front.dat", front), ("samples.dat", samples)] {
            let path = dir.join(name);
            fs::write(&path, lines)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// `(front.dat, samples.dat)` contents. Values use the shortest decimal
/// that round-trips, so equal reports give byte-identical files.
pub fn plotdata_lines(report: &SweepReport) -> (String, String) {
    let mut front = String::new();
    for e in report.front.entries() {
        front.push_str(&format!("{} {}\n", e.time_s(), e.dynamic_energy_j()));
    }
    let mut samples = String::new();
    for r in &report.samples {
        samples.push_str(&format!(
            "{} {}\n",
            r.sample.time_s, r.sample.dynamic_energy_j
        ));
    }
    (front, samples)
}

/// Load objective samples from a CSV with at least the columns
/// `g,t,time_s,dynamic_energy_j`, in any order.
pub fn load_samples_csv(path: &Path) -> Result<Vec<ObjectiveSample>> {
    read_samples_csv(File::open(path)?, path)
}

fn read_samples_csv<R: Read>(reader: R, label: &Path) -> Result<Vec<ObjectiveSample>> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: label.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let mut columns = [0usize; 4];
    for (slot, name) in columns.iter_mut().zip(SAMPLE_CSV_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(1, format!("missing column `{name}`")))?;
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record
            .map_err(|e| parse_err(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| record.get(columns[i]).unwrap_or("");
        let int = |i: usize| {
            field(i)
                .parse::<usize>()
                .map_err(|_| parse_err(line, format!("`{}` is not a positive integer", field(i))))
        };
        let float = |i: usize| {
            field(i)
                .parse::<f64>()
                .map_err(|_| parse_err(line, format!("`{}` is not a number", field(i))))
        };
        let config =
            Configuration::new(int(0)?, int(1)?).map_err(|e| parse_err(line, e.to_string()))?;
        let sample = ObjectiveSample::new(config, float(2)?, float(3)?)
            .map_err(|e| parse_err(line, e.to_string()))?;
        out.push(sample);
    }
    Ok(out)
}

/// Report over previously collected samples, with no statistics attached.
pub fn pareto_report(samples: &[ObjectiveSample], input: Option<&Path>) -> SweepReport {
    let now = unix_now();
    SweepReport {
        schema_version: SCHEMA_VERSION,
        status: SweepStatus::Complete,
        samples: samples.iter().copied().map(SampleRecord::bare).collect(),
        skipped: Vec::new(),
        front: front_build(samples),
        provenance: Provenance {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix_s: now,
            finished_unix_s: now,
            host: HostInfo::detect(),
            energy_source: "input".to_string(),
            spec: None,
            input: input.map(Path::to_path_buf),
        },
    }
}
