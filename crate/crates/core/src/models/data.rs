use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Synthetic { family: String, seed: u64 },
    File { path: String },
    InMemory,
}

/// Immutable `n × width` table of finite records, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Vec<f64>,
    width: usize,
    provenance: Provenance,
}

impl Dataset {
    pub fn from_rows(rows: Vec<Vec<f64>>, provenance: Provenance) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * width);
        for (i, r) in rows.into_iter().enumerate() {
            if r.len() != width {
                return Err(Error::dim(format!(
                    "record {i} has {} values, expected {width}",
                    r.len()
                )));
            }
            values.extend(r);
        }
        Self::from_flat(values, width, provenance)
    }

    pub fn from_flat(values: Vec<f64>, width: usize, provenance: Provenance) -> Result<Self> {
        if width == 0 || values.is_empty() {
            return Err(Error::Data("dataset is empty".into()));
        }
        if values.len() % width != 0 {
            return Err(Error::dim(format!(
                "{} values do not divide into records of width {width}",
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "record {} column {} is not finite",
                k / width,
                k % width
            )));
        }
        Ok(Self { values, width, provenance })
    }

    pub fn n(&self) -> usize {
        self.values.len() / self.width
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn record(&self, i: usize) -> &[f64] {
        &self.values[i * self.width..(i + 1) * self.width]
    }

    pub fn records(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.width)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// SHA-256 over the width and the little-endian bytes of every value.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.width as u64).to_le_bytes());
        for v in &self.values {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

/// Column roles. Records are assembled as `[1 if intercept] ++ covariates ++ [response]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    #[serde(default = "default_true")]
    pub header: bool,
    pub covariates: Vec<ColumnRef>,
    #[serde(default)]
    pub response: Option<ColumnRef>,
    #[serde(default)]
    pub intercept: bool,
}

fn default_true() -> bool {
    true
}

impl CsvSchema {
    fn resolve(&self, header: Option<&csv::StringRecord>, path: &str) -> Result<Vec<usize>> {
        let lookup = |c: &ColumnRef| -> Result<usize> {
            match c {
                ColumnRef::Index(i) => Ok(*i),
                ColumnRef::Name(name) => header
                    .and_then(|h| h.iter().position(|f| f.trim() == name))
                    .ok_or_else(|| Error::Ingest {
                        path: path.to_string(),
                        row: 0,
                        col: 0,
                        message: format!("missing column '{name}'"),
                    }),
            }
        };
        let mut cols = self.covariates.iter().map(lookup).collect::<Result<Vec<_>>>()?;
        if let Some(r) = &self.response {
            cols.push(lookup(r)?);
        }
        if cols.is_empty() {
            return Err(Error::config("CSV schema selects no columns"));
        }
        Ok(cols)
    }
}

/// Rows are reported 1-based counting the header line; columns are 1-based.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let pstr = path.display().to_string();
    let ingest = |row: usize, col: usize, message: String| Error::Ingest {
        path: pstr.clone(),
        row,
        col,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(schema.header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            k => ingest(0, 0, format!("{k:?}")),
        })?;
    let header = if schema.header {
        Some(rdr.headers().map_err(|e| ingest(1, 0, e.to_string()))?.clone())
    } else {
        None
    };
    let cols = schema.resolve(header.as_ref(), &pstr)?;
    let offset = usize::from(schema.header);
    let width = cols.len() + usize::from(schema.intercept);
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1 + offset;
        let rec = rec.map_err(|e| ingest(row, 0, e.to_string()))?;
        if schema.intercept {
            values.push(1.0);
        }
        for &c in &cols {
            let cell = rec
                .get(c)
                .ok_or_else(|| ingest(row, c + 1, format!("missing column {}", c + 1)))?;
            let v: f64 = cell
                .parse()
                .map_err(|_| ingest(row, c + 1, format!("non-numeric cell '{cell}'")))?;
            if !v.is_finite() {
                return Err(ingest(row, c + 1, format!("non-finite value '{cell}'")));
            }
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(ingest(offset, 0, "file has no data rows".into()));
    }
    Dataset::from_flat(values, width, Provenance::File { path: pstr.clone() })
}

/// Writes records with 17 significant digits, which round-trips every finite `f64`.
pub fn write_csv(path: impl AsRef<Path>, data: &Dataset, header: Option<&[&str]>) -> Result<()> {
    let mut out = String::new();
    if let Some(h) = header {
        if h.len() != data.width() {
            return Err(Error::dim("header length differs from record width"));
        }
        out.push_str(&h.join(","));
        out.push('\n');
    }
    for r in data.records() {
        for (j, v) in r.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v:.16e}").expect("write to String");
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
