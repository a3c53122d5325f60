//! CSV and `ddvm` encodings of [`Dataset`].
//!
//! `ddvm` layout (all integers little-endian):
//!
//! | bytes        | content                                   |
//! |--------------|-------------------------------------------|
//! | 4            | magic `DDVM`                              |
//! | 4 × u32      | version (=1), n, d, C                     |
//! | 8·n·d        | features, IEEE-754 f64, row-major         |
//! | 4·n          | labels, u32                               |
//!
//! CSV carries a header `f0,...,f{d-1},label` and writes features in
//! scientific notation with 17 significant digits, which round-trips every
//! finite `f64` exactly.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DDVM";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Ddvm,
}

impl Format {
    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(Format::Csv),
            "ddvm" => Some(Format::Ddvm),
            _ => None,
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "ddvm" => Ok(Format::Ddvm),
            other => Err(Error::InvalidArgument(format!("unknown format {other:?}"))),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Ddvm => "ddvm",
        })
    }
}

/// Loads a dataset. For CSV, whose files do not record the class count,
/// `C` is inferred as `max(label) + 1` (at least 2); use
/// [`load_dataset_with_classes`] to pin it.
pub fn load_dataset(path: impl AsRef<Path>, format: Format) -> Result<Dataset> {
    load_dataset_with_classes(path, format, None)
}

/// Loads a dataset, overriding the class count for CSV input. For `ddvm`
/// the stored `C` must agree with `num_classes` when one is given.
pub fn load_dataset_with_classes(
    path: impl AsRef<Path>,
    format: Format,
    num_classes: Option<usize>,
) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let ds = match format {
        Format::Csv => read_csv(reader, num_classes),
        Format::Ddvm => read_ddvm(reader),
    }
    .map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })?;
    if let (Format::Ddvm, Some(c)) = (format, num_classes) {
        if c != ds.num_classes() {
            return Err(Error::InvalidDataset(format!(
                "{} stores C={}, caller expected C={c}",
                path.display(),
                ds.num_classes()
            )));
        }
    }
    Ok(ds)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>, format: Format) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    match format {
        Format::Csv => write_csv(dataset, &mut writer),
        Format::Ddvm => write_ddvm(dataset, &mut writer),
    }
    .and_then(|()| writer.flush().map_err(|e| Error::io(path, e)))
    .map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn write_ddvm<W: Write>(dataset: &Dataset, mut w: W) -> Result<()> {
    let io = |e| Error::io("<ddvm stream>", e);
    let header_u32 = |v: usize| -> Result<[u8; 4]> {
        u32::try_from(v)
            .map(u32::to_le_bytes)
            .map_err(|_| Error::InvalidArgument(format!("{v} does not fit in u32")))
    };
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&header_u32(dataset.len())?).map_err(io)?;
    w.write_all(&header_u32(dataset.dim())?).map_err(io)?;
    w.write_all(&header_u32(dataset.num_classes())?).map_err(io)?;
    for v in dataset.features().iter() {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    for &l in dataset.labels() {
        w.write_all(&header_u32(l)?).map_err(io)?;
    }
    Ok(())
}

pub fn read_ddvm<R: Read>(mut r: R) -> Result<Dataset> {
    let mut word = [0u8; 4];
    let mut read_word = |r: &mut R, what: &str| -> Result<u32> {
        r.read_exact(&mut word)
            .map_err(|_| Error::Format(format!("ddvm: truncated while reading {what}")))?;
        Ok(u32::from_le_bytes(word))
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("ddvm: missing magic bytes".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("ddvm: bad magic {magic:?}")));
    }
    let version = read_word(&mut r, "version")?;
    if version != VERSION {
        return Err(Error::Format(format!("ddvm: unsupported version {version}")));
    }
    let n = read_word(&mut r, "n")? as usize;
    let d = read_word(&mut r, "d")? as usize;
    let c = read_word(&mut r, "C")? as usize;
    if n == 0 {
        return Err(Error::InvalidDataset("dataset has no rows".into()));
    }

    let mut buf = [0u8; 8];
    let mut features = Vec::with_capacity(n.saturating_mul(d).min(1 << 24));
    for idx in 0..n * d {
        r.read_exact(&mut buf).map_err(|_| {
            Error::Format(format!(
                "ddvm: truncated feature block at row {}, col {}",
                idx / d.max(1),
                idx % d.max(1)
            ))
        })?;
        features.push(f64::from_le_bytes(buf));
    }
    let mut labels = Vec::with_capacity(n.min(1 << 24));
    for row in 0..n {
        let l = read_word(&mut r, &format!("label at row {row}"))?;
        labels.push(l as usize);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io("<ddvm stream>", e))? != 0 {
        return Err(Error::Format("ddvm: trailing bytes after label block".into()));
    }
    let features = Array2::from_shape_vec((n, d), features)
        .map_err(|e| Error::Format(format!("ddvm: {e}")))?;
    Dataset::new(features, labels, c)
}

fn write_csv<W: Write>(dataset: &Dataset, w: W) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Format(format!("csv: {e}"));
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (0..dataset.dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    out.write_record(&header).map_err(csv_err)?;
    for (row, &label) in dataset.features().outer_iter().zip(dataset.labels()) {
        let mut record: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        record.push(label.to_string());
        out.write_record(&record).map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::io("<csv stream>", e))
}

fn read_csv<R: Read>(r: R, num_classes: Option<usize>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(r);
    let header = reader
        .headers()
        .map_err(|e| Error::Format(format!("malformed header: {e}")))?
        .clone();
    let ncols = header.len();
    if ncols < 2 || &header[ncols - 1] != "label" {
        return Err(Error::Format(
            "malformed header: expected f0,...,f{d-1},label".into(),
        ));
    }
    for (j, name) in header.iter().take(ncols - 1).enumerate() {
        if name != format!("f{j}") {
            return Err(Error::Format(format!(
                "malformed header: column {j} is {name:?}, expected \"f{j}\""
            )));
        }
    }
    let d = ncols - 1;

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("row {row}: {e}")))?;
        if record.len() != ncols {
            return Err(Error::Format(format!(
                "row {row}: expected {ncols} fields, found {}",
                record.len()
            )));
        }
        for col in 0..d {
            let v: f64 = record[col].parse().map_err(|_| {
                Error::Format(format!(
                    "cannot parse {:?} as a number at row {row}, col {col}",
                    &record[col]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row, col });
            }
            features.push(v);
        }
        let label: i64 = record[d].parse().map_err(|_| {
            Error::Format(format!(
                "cannot parse label {:?} at row {row}, col {d}",
                &record[d]
            ))
        })?;
        if label < 0 || num_classes.is_some_and(|c| label as usize >= c) {
            return Err(Error::LabelOutOfRange {
                row,
                label,
                num_classes: num_classes.unwrap_or(0),
            });
        }
        labels.push(label as usize);
    }
    if labels.is_empty() {
        return Err(Error::InvalidDataset("dataset has no rows".into()));
    }
    let c = num_classes.unwrap_or_else(|| (labels.iter().max().unwrap() + 1).max(2));
    let features = Array2::from_shape_vec((labels.len(), d), features)
        .map_err(|e| Error::Format(format!("csv: {e}")))?;
    Dataset::new(features, labels, c)
}
