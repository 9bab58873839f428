// SPDX-License-Identifier: MIT OR Apache-2.0

//! File formats: series (CSV / NDJSON), truth sets, detections, anomaly
//! scores and run-length posterior matrices. Every writer goes through a
//! temporary file in the target directory and an atomic rename.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{Detection, RunLengthPosterior};
use crate::error::{Error, Result};
use crate::evaluation::ChangepointSet;
use crate::predictive::AnomalyScore;
use crate::preprocess::Observation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesFormat {
    #[default]
    Csv,
    Ndjson,
}

impl FromStr for SeriesFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "ndjson" => Ok(Self::Ndjson),
            other => Err(Error::Config(format!("unknown series format {other:?}"))),
        }
    }
}

impl SeriesFormat {
    /// Guess from the file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("ndjson" | "jsonl") => Self::Ndjson,
            _ => Self::Csv,
        }
    }
}

/// Shortest decimal text that parses back to the same `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Write `contents` to `path` via a temporary sibling and rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[derive(Deserialize, Serialize)]
struct NdjsonRecord {
    t: i64,
    z: Vec<f64>,
}

pub fn read_series(path: &Path, format: SeriesFormat) -> Result<Vec<Observation>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let rows = match format {
        SeriesFormat::Csv => read_csv_rows(path, file)?,
        SeriesFormat::Ndjson => read_ndjson_rows(path, file)?,
    };
    let mut out: Vec<Observation> = Vec::with_capacity(rows.len());
    for (line, obs) in rows {
        if let Some(prev) = out.last() {
            if obs.t <= prev.t {
                return Err(Error::parse(
                    path,
                    line,
                    format!("time index {} does not increase (previous {})", obs.t, prev.t),
                ));
            }
            if obs.dim() != prev.dim() {
                return Err(Error::parse(
                    path,
                    line,
                    format!("expected {} values, found {}", prev.dim(), obs.dim()),
                ));
            }
        }
        if obs.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(path, line, "non-finite value"));
        }
        out.push(obs);
    }
    Ok(out)
}

fn read_csv_rows(path: &Path, file: fs::File) -> Result<Vec<(u64, Observation)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .clone();
    if headers.get(0) != Some("t") || headers.len() < 2 {
        return Err(Error::parse(path, 1, "header must be t,dim_0,...,dim_{d-1}"));
    }
    for (i, h) in headers.iter().skip(1).enumerate() {
        if h != format!("dim_{i}") {
            return Err(Error::parse(path, 1, format!("expected column dim_{i}, found {h:?}")));
        }
    }
    let d = headers.len() - 1;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::parse(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != d + 1 {
            return Err(Error::parse(
                path,
                line,
                format!("expected {} values, found {}", d, record.len().saturating_sub(1)),
            ));
        }
        let t: i64 = record[0]
            .parse()
            .map_err(|_| Error::parse(path, line, format!("bad time index {:?}", &record[0])))?;
        let values = record
            .iter()
            .skip(1)
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::parse(path, line, format!("bad value {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((line, Observation::new(t, values)));
    }
    Ok(rows)
}

fn read_ndjson_rows(path: &Path, file: fs::File) -> Result<Vec<(u64, Observation)>> {
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: NdjsonRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, line_no, e.to_string()))?;
        if rec.z.is_empty() {
            return Err(Error::parse(path, line_no, "empty value vector"));
        }
        rows.push((line_no, Observation::new(rec.t, rec.z)));
    }
    Ok(rows)
}

pub fn series_to_string(stream: &[Observation], format: SeriesFormat) -> String {
    let mut s = String::new();
    match format {
        SeriesFormat::Csv => {
            let d = stream.first().map_or(0, Observation::dim);
            s.push('t');
            for i in 0..d {
                let _ = write!(s, ",dim_{i}");
            }
            s.push('\n');
            for obs in stream {
                let _ = write!(s, "{}", obs.t);
                for v in &obs.values {
                    s.push(',');
                    s.push_str(&format_f64(*v));
                }
                s.push('\n');
            }
        }
        SeriesFormat::Ndjson => {
            for obs in stream {
                let _ = write!(s, "{{\"t\":{},\"z\":[", obs.t);
                for (i, v) in obs.values.iter().enumerate() {
                    if i > 0 {
                        s.push(',');
                    }
                    s.push_str(&format_f64(*v));
                }
                s.push_str("]}\n");
            }
        }
    }
    s
}

pub fn write_series(path: &Path, stream: &[Observation], format: SeriesFormat) -> Result<()> {
    write_atomic(path, series_to_string(stream, format).as_bytes())
}

/// Truth sets are a one-column CSV with header `t`.
pub fn write_truth(path: &Path, truth: &ChangepointSet) -> Result<()> {
    let mut s = String::from("t\n");
    for t in truth.times() {
        let _ = writeln!(s, "{t}");
    }
    write_atomic(path, s.as_bytes())
}

pub fn read_truth(path: &Path) -> Result<ChangepointSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut times = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if (i == 0 && line == "t") || line.is_empty() {
            continue;
        }
        let t = line
            .parse()
            .map_err(|_| Error::parse(path, i as u64 + 1, format!("bad changepoint {line:?}")))?;
        times.push(t);
    }
    ChangepointSet::new(times).map_err(|e| Error::parse(path, 0, e.to_string()))
}

pub fn detections_to_string(detections: &[Detection]) -> String {
    let mut s = String::new();
    for d in detections {
        s.push_str(&serde_json::to_string(d).expect("detection serializes"));
        s.push('\n');
    }
    s
}

pub fn write_detections(path: &Path, detections: &[Detection]) -> Result<()> {
    write_atomic(path, detections_to_string(detections).as_bytes())
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(path, i as u64 + 1, e.to_string()))?);
    }
    Ok(out)
}

/// Dense `t,r_0,...` matrix of linear-domain probabilities, zero-padded.
pub fn posterior_matrix_to_string(history: &[RunLengthPosterior]) -> String {
    let width = history.iter().map(RunLengthPosterior::len).max().unwrap_or(0);
    let mut s = String::from("t");
    for r in 0..width {
        let _ = write!(s, ",r_{r}");
    }
    s.push('\n');
    for post in history {
        let _ = write!(s, "{}", post.t);
        for r in 0..width {
            s.push(',');
            s.push_str(&format_f64(post.prob(r)));
        }
        s.push('\n');
    }
    s
}

pub fn write_posterior_matrix(path: &Path, history: &[RunLengthPosterior]) -> Result<()> {
    for w in history.windows(2) {
        if w[1].t != w[0].t + 1 && w[0].t != 0 {
            return Err(Error::Domain(format!(
                "posterior history is not contiguous ({} then {})",
                w[0].t, w[1].t
            )));
        }
    }
    write_atomic(path, posterior_matrix_to_string(history).as_bytes())
}

pub fn write_scores(path: &Path, scores: &[AnomalyScore]) -> Result<()> {
    let mut s = String::from("t,score\n");
    for a in scores {
        let _ = writeln!(s, "{},{}", a.at_t, format_f64(a.value));
    }
    write_atomic(path, s.as_bytes())
}
