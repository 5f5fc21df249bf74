//! Text serialization helpers: 17-significant-digit floats, column CSVs,
//! and atomic file writes.

use std::io::Write;
use std::path::Path;

use serde::Serializer;
use serde_json::value::RawValue;

use crate::error::{Error, Result};

/// Formats a float with 17 significant digits (round-trip exact).
pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// followed by a rename, so readers never observe a partial file.
pub fn write_atomic<P: AsRef<Path>>(path: P, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Renders equal-length float columns as CSV text.
pub fn columns_to_csv(header: &[&str], columns: &[&[f64]]) -> Result<Vec<u8>> {
    let rows = columns.first().map_or(0, |c| c.len());
    if columns.len() != header.len() || columns.iter().any(|c| c.len() != rows) {
        return Err(Error::ShapeMismatch("CSV columns must have equal length".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in 0..rows {
        w.write_record(columns.iter().map(|c| fmt17(c[r])))?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn write_columns<P: AsRef<Path>>(path: P, header: &[&str], columns: &[&[f64]]) -> Result<()> {
    write_atomic(path, &columns_to_csv(header, columns)?)
}

/// Reads the named float columns from a CSV with a header row.
pub fn read_columns<P: AsRef<Path>>(path: P, names: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = r.headers()?.clone();
    let idx: Vec<usize> = names
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| Error::Parse(format!("missing CSV column `{name}`")))
        })
        .collect::<Result<_>>()?;
    let mut cols = vec![Vec::new(); names.len()];
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        for (c, &i) in idx.iter().enumerate() {
            let field = rec.get(i).unwrap_or("");
            let v: f64 = field.parse().map_err(|_| {
                Error::Parse(format!("row {}: `{field}` is not a number", line + 2))
            })?;
            cols[c].push(v);
        }
    }
    Ok(cols)
}

/// Serializes a float as a JSON number with 17 significant digits;
/// non-finite values become `null`.
pub fn ser_f64<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if x.is_finite() {
        let raw = RawValue::from_string(fmt17(*x)).map_err(serde::ser::Error::custom)?;
        s.serialize_some(&raw)
    } else {
        s.serialize_none()
    }
}

pub fn ser_opt_f64<S: Serializer>(x: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match x {
        Some(v) => ser_f64(v, s),
        None => s.serialize_none(),
    }
}

pub fn ser_vec_f64<S: Serializer>(xs: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    struct F(f64);
    impl serde::Serialize for F {
        fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
            ser_f64(&self.0, s)
        }
    }
    let mut seq = s.serialize_seq(Some(xs.len()))?;
    for x in xs {
        seq.serialize_element(&F(*x))?;
    }
    seq.end()
}
