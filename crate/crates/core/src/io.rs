//! Long-format CSV datasets and the JSON form of fitted models.
//!
//! A dataset file has the header `sample,row,col,value` with 1-based
//! indices; every sample must list each of its `n × p` cells exactly once.
//! A label file has the header `sample,label`.
//!
//! Matrices in JSON are objects `{"rows", "cols", "data"}` with `data` in
//! row-major order. Floats are written with 17 significant digits, so
//! reading and rewriting a file reproduces it byte for byte.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::ecme::{FitConfig, FitTrace};
use crate::error::{MvstError, Result};
use crate::linalg::Matrix;
use crate::mixture::{classify, FitResult, MixtureParams, Responsibilities};
use crate::model::{Dataset, MvstParams, Variant};

pub const DATASET_HEADER: [&str; 4] = ["sample", "row", "col", "value"];
pub const LABELS_HEADER: [&str; 2] = ["sample", "label"];

fn bad(line: u64, message: impl Into<String>) -> MvstError {
    MvstError::Dataset { line: line as usize, message: message.into() }
}

fn parse_index(field: &str, what: &str, line: u64) -> Result<usize> {
    match field.trim().parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        _ => Err(bad(line, format!("{what} must be a positive integer, got '{field}'"))),
    }
}

fn check_header(record: &csv::StringRecord, want: &[&str]) -> Result<()> {
    let got: Vec<&str> = record.iter().map(str::trim).collect();
    if got != want {
        return Err(bad(1, format!("expected header '{}', got '{}'", want.join(","), got.join(","))));
    }
    Ok(())
}

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(input)
}

struct Cell {
    row: usize,
    col: usize,
    value: f64,
    line: u64,
}

/// Parses a long-format dataset.
pub fn parse_dataset<R: Read>(input: R) -> Result<Dataset> {
    let mut reader = csv_reader(input);
    check_header(reader.headers()?, &DATASET_HEADER)?;
    let mut by_sample: BTreeMap<usize, Vec<Cell>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 4 {
            return Err(bad(line, format!("expected 4 fields, found {}", record.len())));
        }
        let sample = parse_index(&record[0], "sample", line)?;
        let row = parse_index(&record[1], "row", line)?;
        let col = parse_index(&record[2], "col", line)?;
        let value: f64 =
            record[3].trim().parse().map_err(|_| bad(line, format!("value '{}' is not a number", &record[3])))?;
        if !value.is_finite() {
            return Err(bad(line, format!("value '{}' is not finite", &record[3])));
        }
        by_sample.entry(sample).or_default().push(Cell { row, col, value, line });
    }
    if by_sample.is_empty() {
        return Err(bad(1, "no records"));
    }
    let shape_of = |cells: &[Cell]| {
        (cells.iter().map(|c| c.row).max().unwrap_or(0), cells.iter().map(|c| c.col).max().unwrap_or(0))
    };
    let (n, p) = shape_of(by_sample.values().next().expect("non-empty"));
    let mut samples = Vec::with_capacity(by_sample.len());
    for (expected, (&id, cells)) in (1..).zip(&by_sample) {
        let first_line = cells.iter().map(|c| c.line).min().unwrap_or(0);
        if id != expected {
            return Err(bad(first_line, format!("sample ids must be contiguous from 1; sample {expected} is missing")));
        }
        if let Some(c) = cells.iter().find(|c| c.row > n || c.col > p) {
            return Err(bad(c.line, format!("sample {id} has cell ({}, {}) outside the {n}x{p} shape", c.row, c.col)));
        }
        let mut m = Matrix::zeros(n, p);
        let mut seen = vec![false; n * p];
        for c in cells {
            let slot = (c.row - 1) * p + (c.col - 1);
            if std::mem::replace(&mut seen[slot], true) {
                return Err(bad(c.line, format!("duplicate cell (sample {id}, row {}, col {})", c.row, c.col)));
            }
            m[(c.row - 1, c.col - 1)] = c.value;
        }
        if let Some(slot) = seen.iter().position(|&s| !s) {
            let last_line = cells.iter().map(|c| c.line).max().unwrap_or(0);
            return Err(bad(
                last_line,
                format!("sample {id} is missing cell (row {}, col {})", slot / p + 1, slot % p + 1),
            ));
        }
        samples.push(m);
    }
    Dataset::new(samples)
}

/// Parses a label file against a dataset of `count` samples.
pub fn parse_labels<R: Read>(input: R, count: usize) -> Result<Vec<usize>> {
    let mut reader = csv_reader(input);
    check_header(reader.headers()?, &LABELS_HEADER)?;
    let mut labels: Vec<Option<usize>> = vec![None; count];
    let mut last_line = 1;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        last_line = line;
        if record.len() != 2 {
            return Err(bad(line, format!("expected 2 fields, found {}", record.len())));
        }
        let sample = parse_index(&record[0], "sample", line)?;
        let label = parse_index(&record[1], "label", line)?;
        if sample > count {
            return Err(bad(line, format!("sample {sample} is beyond the {count} samples of the dataset")));
        }
        if labels[sample - 1].replace(label).is_some() {
            return Err(bad(line, format!("duplicate label for sample {sample}")));
        }
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| bad(last_line, format!("no label for sample {}", i + 1))))
        .collect()
}

/// Reads a dataset and, optionally, its labels.
pub fn read_dataset(path: &Path, label_path: Option<&Path>) -> Result<(Dataset, Option<Vec<usize>>)> {
    let data = parse_dataset(BufReader::new(File::open(path)?))?;
    let labels = match label_path {
        Some(lp) => Some(parse_labels(BufReader::new(File::open(lp)?), data.len())?),
        None => None,
    };
    Ok((data, labels))
}

/// Writes a dataset in long format, sample-major then row-major.
pub fn write_dataset_to<W: Write>(data: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DATASET_HEADER)?;
    for (s, y) in data.iter().enumerate() {
        for r in 0..y.nrows() {
            for c in 0..y.ncols() {
                w.write_record([
                    (s + 1).to_string(),
                    (r + 1).to_string(),
                    (c + 1).to_string(),
                    format!("{:?}", y[(r, c)]),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset(data: &Dataset, path: &Path) -> Result<()> {
    write_dataset_to(data, io::BufWriter::new(File::create(path)?))
}

pub fn write_labels_to<W: Write>(labels: &[usize], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LABELS_HEADER)?;
    for (i, l) in labels.iter().enumerate() {
        w.write_record([(i + 1).to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_labels(labels: &[usize], path: &Path) -> Result<()> {
    write_labels_to(labels, io::BufWriter::new(File::create(path)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&Matrix> for MatrixJson {
    fn from(m: &Matrix) -> Self {
        let data = m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }
}

impl MatrixJson {
    pub fn to_matrix(&self) -> Result<Matrix> {
        if self.data.len() != self.rows * self.cols {
            return Err(MvstError::LengthMismatch { expected: self.rows * self.cols, found: self.data.len() });
        }
        Ok(Matrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentJson {
    pub m: MatrixJson,
    pub sigma: MatrixJson,
    pub psi: MatrixJson,
    pub lambda: MatrixJson,
    /// `null` for variants without ν.
    pub nu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureJson {
    pub variant: Variant,
    pub n: usize,
    pub p: usize,
    pub groups: usize,
    pub weights: Vec<f64>,
    pub components: Vec<ComponentJson>,
}

impl From<&MixtureParams> for MixtureJson {
    fn from(theta: &MixtureParams) -> Self {
        Self {
            variant: theta.variant(),
            n: theta.rows(),
            p: theta.cols(),
            groups: theta.groups(),
            weights: theta.weights().to_vec(),
            components: theta
                .components()
                .iter()
                .map(|c| ComponentJson {
                    m: c.m().into(),
                    sigma: c.sigma().into(),
                    psi: c.psi().into(),
                    lambda: c.lambda().into(),
                    nu: c.variant().has_nu().then_some(c.nu()),
                })
                .collect(),
        }
    }
}

impl MixtureJson {
    pub fn to_params(&self) -> Result<MixtureParams> {
        if self.components.len() != self.groups || self.weights.len() != self.groups {
            return Err(MvstError::LengthMismatch { expected: self.groups, found: self.components.len() });
        }
        let components = self
            .components
            .iter()
            .map(|c| {
                let m = c.m.to_matrix()?;
                if m.shape() != (self.n, self.p) {
                    return Err(MvstError::DimensionMismatch {
                        expected: format!("{}x{}", self.n, self.p),
                        found: format!("{}x{}", m.nrows(), m.ncols()),
                    });
                }
                let nu = match (self.variant.has_nu(), c.nu) {
                    (true, Some(nu)) => nu,
                    (true, None) => {
                        return Err(MvstError::InvalidArgument(format!("variant {} needs nu", self.variant)))
                    }
                    (false, _) => f64::INFINITY,
                };
                MvstParams::new(m, c.sigma.to_matrix()?, c.psi.to_matrix()?, c.lambda.to_matrix()?, nu, self.variant)
            })
            .collect::<Result<Vec<_>>>()?;
        MixtureParams::new(self.weights.clone(), components)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResultJson {
    pub config: FitConfig,
    pub params: MixtureJson,
    pub loglik: f64,
    pub bic: f64,
    pub n_params: usize,
    pub trace: FitTrace,
    pub labels: Vec<usize>,
    pub responsibilities: MatrixJson,
}

impl From<&FitResult> for FitResultJson {
    fn from(fit: &FitResult) -> Self {
        Self {
            config: fit.config.clone(),
            params: (&fit.params).into(),
            loglik: fit.loglik,
            bic: fit.bic,
            n_params: fit.n_params,
            trace: fit.trace.clone(),
            labels: fit.labels.clone(),
            responsibilities: fit.responsibilities.matrix().into(),
        }
    }
}

impl FitResultJson {
    pub fn to_fit_result(&self) -> Result<FitResult> {
        let responsibilities = Responsibilities::new(self.responsibilities.to_matrix()?)?;
        let labels = classify(&responsibilities);
        if labels != self.labels {
            return Err(MvstError::InvalidArgument("labels do not match the responsibilities".into()));
        }
        Ok(FitResult {
            params: self.params.to_params()?,
            trace: self.trace.clone(),
            responsibilities,
            labels,
            loglik: self.loglik,
            bic: self.bic,
            n_params: self.n_params,
            config: self.config.clone(),
        })
    }
}

/// Pretty JSON with every float written as `d.dddddddddddddddde±x`.
struct DigitsFormatter(PrettyFormatter<'static>);

impl Formatter for DigitsFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serializes any value as pretty JSON with 17-significant-digit floats
/// and a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, DigitsFormatter(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("JSON is UTF-8"))
}

pub fn fit_result_to_json(fit: &FitResult) -> Result<String> {
    to_json_string(&FitResultJson::from(fit))
}

pub fn fit_result_from_json(text: &str) -> Result<FitResult> {
    serde_json::from_str::<FitResultJson>(text)?.to_fit_result()
}

pub fn params_to_json(theta: &MixtureParams) -> Result<String> {
    to_json_string(&MixtureJson::from(theta))
}

/// Mixture parameters from either a bare parameter file or a fit result.
pub fn params_from_json(text: &str) -> Result<MixtureParams> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let params = match value.get("params") {
        Some(inner) => inner.clone(),
        None => value,
    };
    serde_json::from_value::<MixtureJson>(params)?.to_params()
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}
