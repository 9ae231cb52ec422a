//! CSV ingestion and export of observation records.
//!
//! Schema (header required):
//!
//! ```text
//! y,x1,...,xP,trunc_lo,trunc_hi,cens_lo,cens_hi,status
//! ```
//!
//! `status` is `exact` or `censored`. Empty numeric cells mean an unbounded
//! endpoint (`-inf` for lower, `+inf` for upper); `y` must be empty exactly
//! when the row is censored. Writing uses the shortest round-trip float
//! representation, so export followed by ingest reproduces records
//! bit for bit.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;

use crate::censtrun::{CensoringScheme, ObservationRecord, Outcome};
use crate::error::{Error, Result};
use crate::interval::Interval;

fn fmt_opt(v: f64, unbounded: f64) -> String {
    if v == unbounded || v.is_infinite() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn parse_cell(cell: &str, row: usize, col: &str) -> Result<Option<f64>> {
    let t = cell.trim();
    if t.is_empty() {
        return Ok(None);
    }
    t.parse::<f64>().map(Some).map_err(|_| Error::InvalidData {
        row: Some(row),
        message: format!("column `{col}`: cannot parse `{t}` as a number"),
    })
}

/// Write records to CSV.
pub fn write_records<W: Write>(mut w: W, records: &[ObservationRecord]) -> Result<()> {
    let p = records.first().map(|r| r.x.len()).unwrap_or(0);
    let mut header = vec!["y".to_string()];
    for j in 1..=p {
        header.push(format!("x{j}"));
    }
    header.extend(
        ["trunc_lo", "trunc_hi", "cens_lo", "cens_hi", "status"]
            .iter()
            .map(|s| s.to_string()),
    );
    writeln!(w, "{}", header.join(",")).map_err(io_err)?;

    for (i, rec) in records.iter().enumerate() {
        if rec.scheme.censor_intervals.len() > 1 {
            return Err(Error::InvalidRecord {
                index: i,
                message: "CSV schema carries at most one censoring interval per row".into(),
            });
        }
        let mut cells: Vec<String> = Vec::with_capacity(p + 6);
        let (y_cell, status, cens) = match rec.outcome {
            Outcome::Exact(y) => (
                format!("{y}"),
                "exact",
                rec.scheme.censor_intervals.first().copied(),
            ),
            Outcome::CensoredIn(m) => (
                String::new(),
                "censored",
                Some(rec.scheme.censor_intervals[m]),
            ),
        };
        cells.push(y_cell);
        for j in 0..p {
            cells.push(format!("{}", rec.x[j]));
        }
        cells.push(fmt_opt(rec.scheme.truncation.lo, f64::NEG_INFINITY));
        cells.push(fmt_opt(rec.scheme.truncation.hi, f64::INFINITY));
        match cens {
            Some(c) => {
                cells.push(fmt_opt(c.lo, f64::NEG_INFINITY));
                cells.push(fmt_opt(c.hi, f64::INFINITY));
            }
            None => {
                cells.push(String::new());
                cells.push(String::new());
            }
        }
        cells.push(status.to_string());
        writeln!(w, "{}", cells.join(",")).map_err(io_err)?;
    }
    Ok(())
}

pub fn write_records_path(path: &Path, records: &[ObservationRecord]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(io_err)?;
    write_records(std::io::BufWriter::new(f), records)
}

fn io_err(e: std::io::Error) -> Error {
    Error::InvalidData {
        row: None,
        message: format!("io error: {e}"),
    }
}

/// Read records from CSV, validating each row.
pub fn read_records<R: Read>(r: R) -> Result<Vec<ObservationRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(r);
    let headers = reader
        .headers()
        .map_err(|e| Error::InvalidData {
            row: Some(1),
            message: format!("cannot read header: {e}"),
        })?
        .clone();

    let mut x_cols = Vec::new();
    let mut col_idx = std::collections::HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        let name = h.trim().to_lowercase();
        if name.starts_with('x') && name[1..].chars().all(|c| c.is_ascii_digit()) {
            x_cols.push((name[1..].parse::<usize>().unwrap_or(0), i));
        } else {
            col_idx.insert(name, i);
        }
    }
    x_cols.sort();
    for required in ["y", "trunc_lo", "trunc_hi", "cens_lo", "cens_hi", "status"] {
        if !col_idx.contains_key(required) {
            return Err(Error::InvalidData {
                row: Some(1),
                message: format!("missing column `{required}`"),
            });
        }
    }
    if x_cols.is_empty() {
        return Err(Error::InvalidData {
            row: Some(1),
            message: "no covariate columns x1..xP found".into(),
        });
    }

    let mut records = Vec::new();
    for (rec_idx, row) in reader.records().enumerate() {
        let row_no = rec_idx + 2; // header is line 1
        let row = row.map_err(|e| Error::InvalidData {
            row: Some(row_no),
            message: format!("cannot parse row: {e}"),
        })?;
        let get = |name: &str| -> &str { row.get(col_idx[name]).unwrap_or("") };

        let y = parse_cell(get("y"), row_no, "y")?;
        let mut x = DVector::zeros(x_cols.len());
        for (slot, &(_, ci)) in x_cols.iter().enumerate() {
            x[slot] = parse_cell(row.get(ci).unwrap_or(""), row_no, "x")?.ok_or_else(|| {
                Error::InvalidData {
                    row: Some(row_no),
                    message: "covariate cell is empty".into(),
                }
            })?;
        }
        let trunc = Interval::new(
            parse_cell(get("trunc_lo"), row_no, "trunc_lo")?.unwrap_or(f64::NEG_INFINITY),
            parse_cell(get("trunc_hi"), row_no, "trunc_hi")?.unwrap_or(f64::INFINITY),
        );
        let cens_lo = parse_cell(get("cens_lo"), row_no, "cens_lo")?;
        let cens_hi = parse_cell(get("cens_hi"), row_no, "cens_hi")?;
        let status = get("status").to_lowercase();

        let cens = match (cens_lo, cens_hi) {
            (None, None) => None,
            (lo, hi) => Some(Interval::new(
                lo.unwrap_or(f64::NEG_INFINITY),
                hi.unwrap_or(f64::INFINITY),
            )),
        };

        let record = match status.as_str() {
            "exact" => {
                let y = y.ok_or_else(|| Error::InvalidData {
                    row: Some(row_no),
                    message: "exact row with empty response".into(),
                })?;
                if !trunc.contains(y) {
                    return Err(Error::InvalidData {
                        row: Some(row_no),
                        message: format!(
                            "response {y} outside the truncation interval {trunc}"
                        ),
                    });
                }
                let scheme = CensoringScheme {
                    truncation: trunc,
                    censor_intervals: cens.into_iter().collect(),
                };
                ObservationRecord::exact(x, scheme, y)
            }
            "censored" => {
                if y.is_some() {
                    return Err(Error::InvalidData {
                        row: Some(row_no),
                        message: "censored row must leave the response empty".into(),
                    });
                }
                let cens = cens.ok_or_else(|| Error::InvalidData {
                    row: Some(row_no),
                    message: "censored row without a censoring interval".into(),
                })?;
                if !cens.subset_of(&trunc) {
                    return Err(Error::InvalidData {
                        row: Some(row_no),
                        message: format!(
                            "censoring interval {cens} escapes the truncation interval {trunc}"
                        ),
                    });
                }
                let scheme = CensoringScheme {
                    truncation: trunc,
                    censor_intervals: vec![cens],
                };
                ObservationRecord::censored(x, scheme, 0)
            }
            other => {
                return Err(Error::InvalidData {
                    row: Some(row_no),
                    message: format!("unknown status `{other}` (expected exact|censored)"),
                })
            }
        };
        record.validate(rec_idx).map_err(|e| Error::InvalidData {
            row: Some(row_no),
            message: e.to_string(),
        })?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::InvalidData {
            row: None,
            message: "no data rows".into(),
        });
    }
    Ok(records)
}

pub fn read_records_path(path: &Path) -> Result<Vec<ObservationRecord>> {
    let f = std::fs::File::open(path).map_err(io_err)?;
    read_records(std::io::BufReader::new(f))
}

/// Apply the log transform to responses and all interval endpoints
/// (positive data only).
pub fn log_transform(records: &mut [ObservationRecord]) -> Result<()> {
    let map = |v: f64, row: usize| -> Result<f64> {
        if v == f64::NEG_INFINITY || v <= 0.0 {
            // lower endpoints at or below zero open up to -inf on log scale
            if v.is_finite() && v > 0.0 {
                Ok(v.ln())
            } else if v <= 0.0 {
                Ok(f64::NEG_INFINITY)
            } else {
                Err(Error::InvalidData {
                    row: Some(row),
                    message: "cannot log-transform a non-positive bound".into(),
                })
            }
        } else if v == f64::INFINITY {
            Ok(f64::INFINITY)
        } else {
            Ok(v.ln())
        }
    };
    for (i, rec) in records.iter_mut().enumerate() {
        rec.scheme.truncation = Interval::new(
            map(rec.scheme.truncation.lo, i)?,
            map(rec.scheme.truncation.hi, i)?,
        );
        for c in rec.scheme.censor_intervals.iter_mut() {
            *c = Interval::new(map(c.lo, i)?, map(c.hi, i)?);
        }
        if let Outcome::Exact(y) = rec.outcome {
            if y <= 0.0 {
                return Err(Error::InvalidData {
                    row: Some(i),
                    message: format!("cannot log-transform non-positive response {y}"),
                });
            }
            rec.outcome = Outcome::Exact(y.ln());
        }
    }
    Ok(())
}
