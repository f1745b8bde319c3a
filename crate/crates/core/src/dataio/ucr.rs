use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{Dataset, Role, TimeSeries};
use crate::{Error, Result};

fn parse_label(token: &str, line: usize) -> Result<i64> {
    if let Ok(v) = token.parse::<i64>() {
        return Ok(v);
    }
    // Some archive files write labels as floats ("1.0000000e+00").
    match token.parse::<f64>() {
        Ok(v) if v.is_finite() && v.fract() == 0.0 => Ok(v as i64),
        _ => Err(Error::Parse {
            line,
            token: token.to_string(),
        }),
    }
}

/// Parses UCR text: one record per line, integer label first, then values.
///
/// Labels are remapped to `0..c` in ascending order of their original value.
pub fn parse_ucr(text: &str, delimiter: char, name: &str) -> Result<Dataset> {
    let mut raw: Vec<(i64, Vec<f64>)> = Vec::new();
    let mut width: Option<usize> = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut tokens = line.split(delimiter).map(str::trim);
        let label_tok = tokens.next().unwrap_or_default();
        let label = parse_label(label_tok, lineno)?;
        let values = tokens
            .map(|t| {
                t.parse::<f64>().map_err(|_| Error::Parse {
                    line: lineno,
                    token: t.to_string(),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(Error::Format {
                line: lineno,
                msg: "record has a label but no values".into(),
            });
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::Format {
                    line: lineno,
                    msg: format!("record has {} values, expected {w}", values.len()),
                })
            }
            _ => {}
        }
        raw.push((label, values));
    }
    if raw.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut remap = BTreeMap::new();
    for (label, _) in &raw {
        remap.insert(*label, 0usize);
    }
    for (idx, v) in remap.values_mut().enumerate() {
        *v = idx;
    }
    let class_count = remap.len();
    let series = raw
        .into_iter()
        .map(|(label, values)| TimeSeries {
            values,
            label: remap[&label],
        })
        .collect();
    Dataset::new(name, Role::Target, series, class_count)
}

pub fn load_ucr(path: impl AsRef<Path>, delimiter: char) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "ucr".into());
    parse_ucr(&text, delimiter, &name)
}

/// Writes `dataset` in UCR text form. Values use the shortest round-trip
/// representation, so reloading is lossless.
pub fn write_ucr(dataset: &Dataset, path: impl AsRef<Path>, delimiter: char) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for s in dataset.series() {
        write!(out, "{}", s.label).unwrap();
        for v in &s.values {
            write!(out, "{delimiter}{v:?}").unwrap();
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
