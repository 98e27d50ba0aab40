//! The windows-by-features matrix shared by the spectral, connectivity,
//! ranking, and classification stages.
//!
//! Column order is a pure function of (channel list, band list): band-power
//! columns first (channel-major, then band), then PDC columns ordered
//! (source, sink, band). Serialization is a CSV of values whose header row
//! holds the descriptor strings, plus a JSON sidecar with the row labels.

use std::fmt;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What one feature column measures.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureDesc {
    /// Band power of one channel: `bp:<channel>:<band>`.
    #[serde(rename = "bandpower")]
    BandPower { channel: String, band: String },
    /// Directed coherence source -> sink: `pdc:<source>-><sink>:<band>`.
    Pdc { source: String, sink: String, band: String },
}

impl fmt::Display for FeatureDesc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureDesc::BandPower { channel, band } => write!(f, "bp:{channel}:{band}"),
            FeatureDesc::Pdc { source, sink, band } => write!(f, "pdc:{source}->{sink}:{band}"),
        }
    }
}

impl FeatureDesc {
    /// Parse the `Display` form back; used when reading features.csv.
    pub fn parse(s: &str) -> Result<FeatureDesc> {
        let bad = || Error::data(format!("unparseable feature descriptor {s:?}"));
        if let Some(rest) = s.strip_prefix("bp:") {
            let (channel, band) = rest.rsplit_once(':').ok_or_else(bad)?;
            return Ok(FeatureDesc::BandPower { channel: channel.into(), band: band.into() });
        }
        if let Some(rest) = s.strip_prefix("pdc:") {
            let (pair, band) = rest.rsplit_once(':').ok_or_else(bad)?;
            let (source, sink) = pair.split_once("->").ok_or_else(bad)?;
            return Ok(FeatureDesc::Pdc {
                source: source.into(),
                sink: sink.into(),
                band: band.into(),
            });
        }
        Err(bad())
    }
}

/// Labels attached to one window row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowLabel {
    pub subject: String,
    pub condition: String,
    pub task: String,
    pub start_s: f64,
}

/// Windows x features with per-row labels and per-column descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Array2<f64>,
    pub descriptors: Vec<FeatureDesc>,
    pub rows: Vec<RowLabel>,
}

impl FeatureMatrix {
    pub fn new(
        values: Array2<f64>,
        descriptors: Vec<FeatureDesc>,
        rows: Vec<RowLabel>,
    ) -> Result<Self> {
        if values.ncols() != descriptors.len() {
            return Err(Error::data(format!(
                "{} columns but {} descriptors",
                values.ncols(),
                descriptors.len()
            )));
        }
        if values.nrows() != rows.len() {
            return Err(Error::data(format!(
                "{} value rows but {} row labels",
                values.nrows(),
                rows.len()
            )));
        }
        Ok(FeatureMatrix { values, descriptors, rows })
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    /// Unique subjects in first-appearance order.
    pub fn subjects(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.subject) {
                out.push(r.subject.clone());
            }
        }
        out
    }

    /// Unique condition labels in first-appearance order.
    pub fn conditions(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.condition) {
                out.push(r.condition.clone());
            }
        }
        out
    }

    /// Unique task labels in first-appearance order.
    pub fn tasks(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.task) {
                out.push(r.task.clone());
            }
        }
        out
    }

    /// Column-wise concatenation; the row labels must agree.
    pub fn hstack(&self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        if self.rows != other.rows {
            return Err(Error::data("hstack: row labels differ".to_string()));
        }
        let mut values = Array2::zeros((self.n_rows(), self.n_features() + other.n_features()));
        values
            .slice_mut(ndarray::s![.., ..self.n_features()])
            .assign(&self.values);
        values
            .slice_mut(ndarray::s![.., self.n_features()..])
            .assign(&other.values);
        let mut descriptors = self.descriptors.clone();
        descriptors.extend(other.descriptors.iter().cloned());
        FeatureMatrix::new(values, descriptors, self.rows.clone())
    }

    /// Row-wise concatenation; the descriptors must agree.
    pub fn vstack(&self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        if self.descriptors != other.descriptors {
            return Err(Error::data("vstack: descriptors differ".to_string()));
        }
        let mut values = Array2::zeros((self.n_rows() + other.n_rows(), self.n_features()));
        values
            .slice_mut(ndarray::s![..self.n_rows(), ..])
            .assign(&self.values);
        values
            .slice_mut(ndarray::s![self.n_rows().., ..])
            .assign(&other.values);
        let mut rows = self.rows.clone();
        rows.extend(other.rows.iter().cloned());
        FeatureMatrix::new(values, self.descriptors.clone(), rows)
    }

    pub fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        let values = ndarray::Array2::from_shape_fn((idx.len(), self.n_features()), |(i, j)| {
            self.values[[idx[i], j]]
        });
        let rows = idx.iter().map(|&i| self.rows[i].clone()).collect();
        FeatureMatrix { values, descriptors: self.descriptors.clone(), rows }
    }

    pub fn select_columns(&self, idx: &[usize]) -> FeatureMatrix {
        let values = ndarray::Array2::from_shape_fn((self.n_rows(), idx.len()), |(i, j)| {
            self.values[[i, idx[j]]]
        });
        let descriptors = idx.iter().map(|&j| self.descriptors[j].clone()).collect();
        FeatureMatrix { values, descriptors, rows: self.rows.clone() }
    }

    /// Write values as CSV (header = descriptor strings) plus a label sidecar.
    pub fn write_csv(&self, values_path: &Path, labels_path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(values_path)
            .map_err(|e| Error::data(format!("open {}: {e}", values_path.display())))?;
        let header: Vec<String> = self.descriptors.iter().map(|d| d.to_string()).collect();
        w.write_record(&header)
            .map_err(|e| Error::data(format!("csv write: {e}")))?;
        for row in self.values.rows() {
            // `{}` on f64 is the shortest round-trip form
            let rec: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            w.write_record(&rec)
                .map_err(|e| Error::data(format!("csv write: {e}")))?;
        }
        w.flush().map_err(Error::Io)?;
        let json = serde_json::to_string_pretty(&self.rows)
            .map_err(|e| Error::data(format!("labels encode: {e}")))?;
        std::fs::write(labels_path, json)?;
        Ok(())
    }

    pub fn read_csv(values_path: &Path, labels_path: &Path) -> Result<FeatureMatrix> {
        let mut r = csv::Reader::from_path(values_path)
            .map_err(|e| Error::data(format!("open {}: {e}", values_path.display())))?;
        let descriptors: Vec<FeatureDesc> = r
            .headers()
            .map_err(|e| Error::data(format!("csv header: {e}")))?
            .iter()
            .map(FeatureDesc::parse)
            .collect::<Result<_>>()?;
        let mut data: Vec<f64> = Vec::new();
        let mut n_rows = 0;
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::data(format!("csv row: {e}")))?;
            if rec.len() != descriptors.len() {
                return Err(Error::data(format!(
                    "csv row {} has {} fields, expected {}",
                    n_rows,
                    rec.len(),
                    descriptors.len()
                )));
            }
            for field in rec.iter() {
                data.push(
                    field
                        .parse::<f64>()
                        .map_err(|e| Error::data(format!("csv value {field:?}: {e}")))?,
                );
            }
            n_rows += 1;
        }
        let values = Array2::from_shape_vec((n_rows, descriptors.len()), data)
            .map_err(|e| Error::data(format!("csv shape: {e}")))?;
        let labels_text = std::fs::read_to_string(labels_path)?;
        let rows: Vec<RowLabel> = serde_json::from_str(&labels_text)
            .map_err(|e| Error::data(format!("labels parse: {e}")))?;
        FeatureMatrix::new(values, descriptors, rows)
    }
}
