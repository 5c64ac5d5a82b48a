//! Raw input–state data dictionaries and their CSV representation.
//!
//! The CSV layout is a header row followed by one row per sample:
//! `k,u1..u{n_u},x1..x{n_x}`, with rows in time order and `k` contiguous.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Sampled input–state sequence `{(u_k, x_k)}` of an unknown plant.
#[derive(Debug, Clone, PartialEq)]
pub struct NlDataDictionary {
    n_x: usize,
    n_u: usize,
    /// Informational sample time in seconds.
    pub sample_time: Option<f64>,
    /// Index of the first sample (usually 1).
    pub first_index: i64,
    inputs: Vec<DVector<f64>>,
    states: Vec<DVector<f64>>,
}

impl NlDataDictionary {
    pub fn new(inputs: Vec<DVector<f64>>, states: Vec<DVector<f64>>) -> Result<Self> {
        if inputs.len() != states.len() {
            return Err(Error::dim("dictionary length", states.len(), inputs.len()));
        }
        if states.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "a data dictionary needs at least 2 samples, got {}",
                states.len()
            )));
        }
        let n_x = states[0].len();
        let n_u = inputs[0].len();
        for (k, (u, x)) in inputs.iter().zip(&states).enumerate() {
            if x.len() != n_x {
                return Err(Error::dim(format!("state sample {k}"), n_x, x.len()));
            }
            if u.len() != n_u {
                return Err(Error::dim(format!("input sample {k}"), n_u, u.len()));
            }
            if !x.iter().chain(u.iter()).all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("sample {k}")));
            }
        }
        Ok(Self {
            n_x,
            n_u,
            sample_time: None,
            first_index: 1,
            inputs,
            states,
        })
    }

    pub fn with_sample_time(mut self, ts: f64) -> Self {
        self.sample_time = Some(ts);
        self
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    /// Number of samples, `N + 1` in the usual indexing.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn inputs(&self) -> &[DVector<f64>] {
        &self.inputs
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    /// Keep only the first `n` samples.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        let mut d = Self::new(self.inputs[..n.min(self.len())].to_vec(), self.states[..n.min(self.len())].to_vec())?;
        d.sample_time = self.sample_time;
        d.first_index = self.first_index;
        Ok(d)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["k".to_string()];
        header.extend((1..=self.n_u).map(|i| format!("u{i}")));
        header.extend((1..=self.n_x).map(|i| format!("x{i}")));
        wr.write_record(&header)?;
        for (j, (u, x)) in self.inputs.iter().zip(&self.states).enumerate() {
            let mut rec = vec![(self.first_index + j as i64).to_string()];
            rec.extend(u.iter().map(|v| format_float(*v)));
            rec.extend(x.iter().map(|v| format_float(*v)));
            wr.write_record(&rec)?;
        }
        wr.flush().map_err(|e| Error::Io {
            path: "<csv writer>".into(),
            source: e,
        })?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Shortest round-trip representation, so saved dictionaries reload bit-exactly.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

/// Names of the CSV columns holding the time index, inputs and states.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    pub index: String,
    pub inputs: Vec<String>,
    pub states: Vec<String>,
}

impl ColumnMap {
    /// The default `k,u1..,x1..` naming.
    pub fn standard(n_u: usize, n_x: usize) -> Self {
        Self {
            index: "k".into(),
            inputs: (1..=n_u).map(|i| format!("u{i}")).collect(),
            states: (1..=n_x).map(|i| format!("x{i}")).collect(),
        }
    }
}

pub fn load_dictionary(path: &Path, schema: &ColumnMap) -> Result<NlDataDictionary> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    read_dictionary(f, schema)
}

pub fn read_dictionary<R: Read>(reader: R, schema: &ColumnMap) -> Result<NlDataDictionary> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rd.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let k_col = find(&schema.index)?;
    let u_cols = schema.inputs.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;
    let x_cols = schema.states.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;

    let parse = |rec: &csv::StringRecord, col: usize, row: usize| -> Result<f64> {
        let field = rec.get(col).unwrap_or("");
        field
            .parse::<f64>()
            .map_err(|_| Error::Schema(format!("row {row}: non-numeric value `{field}` in column `{}`", &headers[col])))
    };

    let mut inputs = Vec::new();
    let mut states = Vec::new();
    let mut first_index = None;
    for (row, rec) in rd.records().enumerate() {
        let rec = rec?;
        let k_raw = parse(&rec, k_col, row)?;
        if k_raw.fract() != 0.0 {
            return Err(Error::Schema(format!("row {row}: index `{k_raw}` is not an integer")));
        }
        let k = k_raw as i64;
        match first_index {
            None => first_index = Some(k),
            Some(k0) => {
                let expected = k0 + states.len() as i64;
                if k != expected {
                    return Err(Error::Gap { expected, found: k });
                }
            }
        }
        inputs.push(DVector::from_iterator(
            u_cols.len(),
            u_cols.iter().map(|&c| parse(&rec, c, row)).collect::<Result<Vec<_>>>()?,
        ));
        states.push(DVector::from_iterator(
            x_cols.len(),
            x_cols.iter().map(|&c| parse(&rec, c, row)).collect::<Result<Vec<_>>>()?,
        ));
    }
    let mut d = NlDataDictionary::new(inputs, states)?;
    d.first_index = first_index.unwrap_or(1);
    Ok(d)
}

/// `Δs_k = s_k − s_{k-1}` for consecutive samples.
pub fn increments(seq: &[DVector<f64>]) -> Vec<DVector<f64>> {
    seq.windows(2).map(|w| &w[1] - &w[0]).collect()
}

/// Inverse of [`increments`] given the first sample.
pub fn accumulate(first: &DVector<f64>, incs: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(incs.len() + 1);
    out.push(first.clone());
    for d in incs {
        let next = out.last().unwrap() + d;
        out.push(next);
    }
    out
}
