//! File formats: observation and trace CSVs, plot-ready CSVs and JSON.
//!
//! Floats are written with Rust's shortest round-trip formatting so that
//! reading a file back reproduces the values bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::diagnostics::{AcfResult, HistogramBin};
use crate::error::DataError;
use crate::model::TimeSeries;
use crate::pmmh::ChainOutput;

fn read(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| DataError::Read {
        path: path.display().to_string(),
        source,
    })
}

fn write(path: &Path, contents: &str) -> Result<(), DataError> {
    fs::write(path, contents).map_err(|source| DataError::Write {
        path: path.display().to_string(),
        source,
    })
}

/// One observation per line; an optional first line `y` is a header.
/// Blank lines are skipped.
pub fn load_observations(path: &Path) -> Result<TimeSeries, DataError> {
    let text = read(path)?;
    let name = path.display().to_string();
    let mut values = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || (i == 0 && line == "y") {
            continue;
        }
        let v: f64 = line.parse().map_err(|_| DataError::Parse {
            path: name.clone(),
            line: i + 1,
            text: line.to_string(),
        })?;
        if !v.is_finite() {
            return Err(DataError::NonFinite {
                path: name.clone(),
                line: i + 1,
                text: line.to_string(),
            });
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err(DataError::Empty(name));
    }
    Ok(TimeSeries::new(values).expect("values checked finite and non-empty"))
}

/// Single-column CSV with a header line.
pub fn write_series(path: &Path, header: &str, values: &[f64]) -> Result<(), DataError> {
    let mut s = String::with_capacity(values.len() * 20);
    s.push_str(header);
    s.push('\n');
    for v in values {
        writeln!(s, "{v}").unwrap();
    }
    write(path, &s)
}

/// `iter,<params>,loglik,accept`; row 0 is the initial state with accept 0.
pub fn write_trace(path: &Path, out: &ChainOutput) -> Result<(), DataError> {
    let mut s = format!("iter,{},loglik,accept\n", out.param_names.join(","));
    for (i, (theta, ll)) in out.theta_trace.iter().zip(&out.loglik_trace).enumerate() {
        write!(s, "{i}").unwrap();
        for v in theta {
            write!(s, ",{v}").unwrap();
        }
        let accept = i > 0 && out.accept_flags[i - 1];
        writeln!(s, ",{ll},{}", accept as u8).unwrap();
    }
    write(path, &s)
}

/// A trace read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub param_names: Vec<String>,
    pub theta_trace: Vec<Vec<f64>>,
    pub loglik_trace: Vec<f64>,
    /// One flag per iteration after the initial row.
    pub accept_flags: Vec<bool>,
}

pub fn read_trace(path: &Path) -> Result<Trace, DataError> {
    let text = read(path)?;
    let name = path.display().to_string();
    let format_err = |reason: String| DataError::Format {
        path: name.clone(),
        reason,
    };
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| DataError::Empty(name.clone()))?.split(',').collect();
    let k = header.len();
    if k < 4 || header[0] != "iter" || header[k - 2] != "loglik" || header[k - 1] != "accept" {
        return Err(format_err(format!("unexpected header {header:?}")));
    }
    let param_names: Vec<String> = header[1..k - 2].iter().map(|s| s.to_string()).collect();
    let mut trace = Trace {
        param_names,
        theta_trace: Vec::new(),
        loglik_trace: Vec::new(),
        accept_flags: Vec::new(),
    };
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != k {
            return Err(format_err(format!("line {line_no}: expected {k} columns, got {}", cells.len())));
        }
        let num = |c: &str| -> Result<f64, DataError> {
            c.parse().map_err(|_| DataError::Parse {
                path: name.clone(),
                line: line_no,
                text: c.to_string(),
            })
        };
        if cells[0] != i.to_string() {
            return Err(format_err(format!("line {line_no}: expected iteration {i}, got {}", cells[0])));
        }
        trace
            .theta_trace
            .push(cells[1..k - 2].iter().map(|c| num(c)).collect::<Result<_, _>>()?);
        trace.loglik_trace.push(num(cells[k - 2])?);
        let flag = match cells[k - 1] {
            "0" => false,
            "1" => true,
            other => return Err(format_err(format!("line {line_no}: accept flag {other:?} is not 0 or 1"))),
        };
        if i > 0 {
            trace.accept_flags.push(flag);
        }
    }
    if trace.theta_trace.is_empty() {
        return Err(DataError::Empty(name));
    }
    Ok(trace)
}

/// Long format `iter,t,x` with `t` starting at 1.
pub fn write_trajectories(path: &Path, trajectories: &[(usize, TimeSeries)]) -> Result<(), DataError> {
    let mut s = String::from("iter,t,x\n");
    for (iter, path) in trajectories {
        for (t, x) in path.iter().enumerate() {
            writeln!(s, "{iter},{},{x}", t + 1).unwrap();
        }
    }
    write(path, &s)
}

/// `lag,<params>`. Series may have different lengths; missing cells are empty.
pub fn write_acf(path: &Path, names: &[String], acfs: &[Option<AcfResult>]) -> Result<(), DataError> {
    let mut s = format!("lag,{}\n", names.join(","));
    let max = acfs.iter().flatten().map(|a| a.values.len()).max().unwrap_or(0);
    for lag in 0..max {
        write!(s, "{lag}").unwrap();
        for a in acfs {
            match a.as_ref().and_then(|a| a.values.get(lag)) {
                Some(v) => write!(s, ",{v}").unwrap(),
                None => s.push(','),
            }
        }
        s.push('\n');
    }
    write(path, &s)
}

/// `param,lo,hi,count`.
pub fn write_histograms(path: &Path, hists: &[(String, Vec<HistogramBin>)]) -> Result<(), DataError> {
    let mut s = String::from("param,lo,hi,count\n");
    for (name, bins) in hists {
        for b in bins {
            writeln!(s, "{name},{},{},{}", b.lo, b.hi, b.count).unwrap();
        }
    }
    write(path, &s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DataError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| DataError::Format {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    s.push('\n');
    write(path, &s)
}
