//! File formats: CSV tables and JSON documents with 9-significant-digit
//! floats, written atomically.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::bounds::{DistanceBounds, RangeMeasurement};
use crate::error::{Error, Result};
use crate::geometry::{NodeId, Point2};

/// Formats like C's `%.9g`.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{v:.8e}");
    let (mant, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let mant = trim_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mant}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Rounds every non-integer number in `value` to 9 significant digits.
pub fn round_json(value: &mut Value) {
    match value {
        Value::Number(n) if n.is_f64() => {
            let v = n.as_f64().expect("f64");
            let r: f64 = format_sig9(v).parse().expect("round trip");
            if let Some(num) = serde_json::Number::from_f64(r) {
                *n = num;
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_json),
        Value::Object(o) => o.values_mut().for_each(round_json),
        _ => {}
    }
}

/// Pretty JSON with floats rounded to 9 significant digits.
pub fn to_json_sig9<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    round_json(&mut v);
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

/// Writes to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = fs::write(&tmp, contents).and_then(|_| fs::rename(&tmp, path));
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

fn csv_string(write: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<()>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    write(&mut w)?;
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, name: &str, line: usize) -> Result<T> {
    let raw = rec.get(idx).ok_or_else(|| Error::Parse {
        line,
        msg: format!("missing column '{name}'"),
    })?;
    raw.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad value '{raw}' in column '{name}'"),
    })
}

fn header_index(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes())
}

pub fn measurements_to_csv(ms: &[RangeMeasurement]) -> Result<String> {
    csv_string(|w| {
        w.write_record(["i", "j", "distance", "kind", "weight"])?;
        for m in ms {
            w.write_record([
                m.i.to_string(),
                m.j.to_string(),
                format_sig9(m.distance),
                m.kind.as_str().to_string(),
                format_sig9(m.weight),
            ])?;
        }
        Ok(())
    })
}

/// Columns `i, j, distance[, kind][, weight]`.
pub fn measurements_from_csv(text: &str) -> Result<Vec<RangeMeasurement>> {
    let mut rdr = reader(text);
    let headers = rdr.headers()?.clone();
    let col = |n: &str| {
        header_index(&headers, n).ok_or_else(|| Error::Parse {
            line: 1,
            msg: format!("missing column '{n}'"),
        })
    };
    let (ci, cj, cd) = (col("i")?, col("j")?, col("distance")?);
    let (ck, cw) = (header_index(&headers, "kind"), header_index(&headers, "weight"));
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let mut m = RangeMeasurement::new(
            parse_field(&rec, ci, "i", line)?,
            parse_field(&rec, cj, "j", line)?,
            parse_field(&rec, cd, "distance", line)?,
        );
        if let Some(c) = ck {
            m.kind = parse_field(&rec, c, "kind", line)?;
        }
        if let Some(c) = cw {
            m.weight = parse_field(&rec, c, "weight", line)?;
        }
        m.validate().map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        out.push(m);
    }
    Ok(out)
}

pub fn bounds_to_csv(bs: &[DistanceBounds]) -> Result<String> {
    csv_string(|w| {
        w.write_record(["i", "j", "lower", "upper", "consistent"])?;
        for b in bs {
            w.write_record([
                b.i.to_string(),
                b.j.to_string(),
                format_sig9(b.lower),
                format_sig9(b.upper),
                b.consistent.to_string(),
            ])?;
        }
        Ok(())
    })
}

/// Columns `i, j, lower, upper[, consistent][, weight]`.
pub fn bounds_from_csv(text: &str) -> Result<Vec<DistanceBounds>> {
    let mut rdr = reader(text);
    let headers = rdr.headers()?.clone();
    let col = |n: &str| {
        header_index(&headers, n).ok_or_else(|| Error::Parse {
            line: 1,
            msg: format!("missing column '{n}'"),
        })
    };
    let (ci, cj, cl, cu) = (col("i")?, col("j")?, col("lower")?, col("upper")?);
    let (cc, cw) = (header_index(&headers, "consistent"), header_index(&headers, "weight"));
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let mut b = DistanceBounds::new(
            parse_field(&rec, ci, "i", line)?,
            parse_field(&rec, cj, "j", line)?,
            parse_field(&rec, cl, "lower", line)?,
            parse_field(&rec, cu, "upper", line)?,
        );
        if let Some(c) = cc {
            b.consistent = parse_field(&rec, c, "consistent", line)?;
        }
        if let Some(c) = cw {
            b.weight = parse_field(&rec, c, "weight", line)?;
        }
        b.validate().map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        out.push(b);
    }
    Ok(out)
}

/// Columns `id, x, y`, plus `true_x, true_y, sq_error` when truth is given.
pub fn positions_to_csv(
    positions: &BTreeMap<NodeId, Point2>,
    truth: Option<&BTreeMap<NodeId, Point2>>,
) -> Result<String> {
    csv_string(|w| {
        if truth.is_some() {
            w.write_record(["id", "x", "y", "true_x", "true_y", "sq_error"])?;
        } else {
            w.write_record(["id", "x", "y"])?;
        }
        for (id, p) in positions {
            let mut row = vec![id.to_string(), format_sig9(p.x), format_sig9(p.y)];
            if let Some(t) = truth.and_then(|t| t.get(id)) {
                row.push(format_sig9(t.x));
                row.push(format_sig9(t.y));
                row.push(format_sig9((*p - *t).norm_sq()));
            } else if truth.is_some() {
                row.extend(["".into(), "".into(), "".into()]);
            }
            w.write_record(&row)?;
        }
        Ok(())
    })
}

pub fn positions_from_csv(text: &str) -> Result<BTreeMap<NodeId, Point2>> {
    let mut rdr = reader(text);
    let headers = rdr.headers()?.clone();
    let col = |n: &str| {
        header_index(&headers, n).ok_or_else(|| Error::Parse {
            line: 1,
            msg: format!("missing column '{n}'"),
        })
    };
    let (ci, cx, cy) = (col("id")?, col("x")?, col("y")?);
    let mut out = BTreeMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let id: usize = parse_field(&rec, ci, "id", line)?;
        let p = Point2::try_new(parse_field(&rec, cx, "x", line)?, parse_field(&rec, cy, "y", line)?)
            .map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        out.insert(NodeId(id), p);
    }
    Ok(out)
}

/// Reads a whole file or standard input (`-`).
pub fn read_text(path: &Path) -> Result<String> {
    if path.as_os_str() == "-" {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s)?;
        Ok(s)
    } else {
        Ok(fs::read_to_string(path)?)
    }
}
