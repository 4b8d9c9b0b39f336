use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use super::{MtsSample, MISSING};
use crate::error::{Error, Result};

const LONG_HEADER: [&str; 4] = ["sample_id", "time", "variable", "value"];

struct Entry {
    time: f64,
    var: usize,
    value: Option<f64>,
}

fn parse_field<T: std::str::FromStr>(raw: &str, what: &str, line: usize) -> Result<T> {
    raw.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {what} `{raw}`"),
    })
}

/// Parses a cell value; empty cells and NaN mean "not observed".
fn parse_value(raw: &str, line: usize) -> Result<Option<f64>> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    let v: f64 = parse_field(raw, "value", line)?;
    Ok(v.is_finite().then_some(v))
}

fn assemble(order: Vec<String>, mut groups: HashMap<String, Vec<Entry>>, d: usize) -> Result<Vec<MtsSample>> {
    order
        .into_iter()
        .map(|id| {
            let entries = groups.remove(&id).unwrap_or_default();
            let mut times: Vec<f64> = entries.iter().map(|e| e.time).collect();
            times.sort_by(f64::total_cmp);
            times.dedup();
            let w = times.len();
            let mut values = vec![MISSING; d * w];
            let mut mask = vec![false; d * w];
            for e in entries {
                let t = times.partition_point(|&x| x < e.time);
                if let Some(v) = e.value {
                    values[e.var * w + t] = v;
                    mask[e.var * w + t] = true;
                }
            }
            MtsSample::new(id, d, w, values, mask, times)
        })
        .collect()
}

/// Reads long-format CSV with header `sample_id,time,variable,value`.
///
/// The number of variables is one more than the largest variable index in
/// the file, shared by all samples.
pub fn read_long_csv<R: Read>(reader: R) -> Result<Vec<MtsSample>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if header.iter().map(str::trim).ne(LONG_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", LONG_HEADER.join(",")),
        });
    }

    let mut order = Vec::new();
    let mut groups: HashMap<String, Vec<Entry>> = HashMap::new();
    let mut seen: HashSet<(String, u64, usize)> = HashSet::new();
    let mut d = 0;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 4 {
            return Err(Error::Parse {
                line,
                message: format!("expected 4 fields, found {}", rec.len()),
            });
        }
        let id = rec[0].trim().to_string();
        let time: f64 = parse_field(&rec[1], "time", line)?;
        if !time.is_finite() {
            return Err(Error::Parse {
                line,
                message: format!("non-finite time `{}`", &rec[1]),
            });
        }
        let var: usize = parse_field(&rec[2], "variable index", line)?;
        let value = parse_value(&rec[3], line)?;
        if !seen.insert((id.clone(), time.to_bits(), var)) {
            return Err(Error::DuplicateKey {
                line,
                sample: id,
                time,
                variable: var,
            });
        }
        d = d.max(var + 1);
        groups
            .entry(id.clone())
            .or_insert_with(|| {
                order.push(id.clone());
                Vec::new()
            })
            .push(Entry { time, var, value });
    }
    if order.is_empty() {
        return Err(Error::EmptyDataset);
    }
    assemble(order, groups, d)
}

pub fn load_long_csv(path: impl AsRef<Path>) -> Result<Vec<MtsSample>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_long_csv(f)
}

/// Reads wide CSV: `sample_id,time,<one column per variable>`, with empty or
/// NaN cells marking missing entries.
pub fn read_wide_csv<R: Read>(reader: R) -> Result<Vec<MtsSample>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if header.len() < 3 || header[0].trim() != "sample_id" || header[1].trim() != "time" {
        return Err(Error::Parse {
            line: 1,
            message: "expected header `sample_id,time,<variables...>`".into(),
        });
    }
    let d = header.len() - 2;
    let mut order = Vec::new();
    let mut groups: HashMap<String, Vec<Entry>> = HashMap::new();
    let mut seen: HashSet<(String, u64)> = HashSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let id = rec[0].trim().to_string();
        let time: f64 = parse_field(&rec[1], "time", line)?;
        if !seen.insert((id.clone(), time.to_bits())) {
            return Err(Error::DuplicateKey {
                line,
                sample: id,
                time,
                variable: 0,
            });
        }
        let group = groups.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Vec::new()
        });
        for var in 0..d {
            let value = parse_value(&rec[var + 2], line)?;
            group.push(Entry { time, var, value });
        }
    }
    if order.is_empty() {
        return Err(Error::EmptyDataset);
    }
    assemble(order, groups, d)
}

pub fn load_wide_csv(path: impl AsRef<Path>) -> Result<Vec<MtsSample>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_wide_csv(f)
}

/// Writes observed entries in long format, ordered by sample, time and
/// variable.
pub fn write_long_csv<W: Write>(writer: W, samples: &[MtsSample]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(LONG_HEADER)?;
    for s in samples {
        for t in 0..s.len() {
            for var in 0..s.dims() {
                if let Some(v) = s.value(var, t) {
                    wtr.write_record([
                        s.id().to_string(),
                        s.ref_times()[t].to_string(),
                        var.to_string(),
                        v.to_string(),
                    ])?;
                }
            }
        }
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
