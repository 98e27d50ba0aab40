//! Recording and montage types, the on-disk dataset format, and windowing.
//!
//! A recording on disk is a JSON manifest next to a raw little-endian f32
//! binary, sample-major (`[s0c0, s0c1, ..., s1c0, ...]`). The manifest schema
//! is versioned (`format_version: 1`); see the repository README for the
//! field-by-field description.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Role of one channel within a recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelRole {
    Scalp,
    Eog,
    Other,
}

/// A labeled time segment. `condition`/`task` drive windowing and class labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub start_s: f64,
    pub end_s: f64,
    pub condition: String,
    pub task: String,
}

/// A multichannel recording, samples in volts, shape `[n_samples x n_channels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub samples: Array2<f64>,
    pub fs: f64,
    pub channel_names: Vec<String>,
    pub channel_roles: Vec<ChannelRole>,
    pub subject_id: String,
    pub annotations: Vec<Annotation>,
}

impl Recording {
    /// Validate the type invariants; every constructor and loader calls this.
    pub fn validate(&self) -> Result<()> {
        if !(self.fs > 0.0) {
            return Err(Error::data(format!("fs must be positive, got {}", self.fs)));
        }
        let n_ch = self.samples.ncols();
        if self.channel_names.len() != n_ch || self.channel_roles.len() != n_ch {
            return Err(Error::data(format!(
                "channel metadata mismatch: {} samples columns, {} names, {} roles",
                n_ch,
                self.channel_names.len(),
                self.channel_roles.len()
            )));
        }
        let mut seen = HashMap::new();
        for (i, name) in self.channel_names.iter().enumerate() {
            if let Some(j) = seen.insert(name.clone(), i) {
                return Err(Error::data(format!(
                    "duplicate channel name {name:?} at indices {j} and {i}"
                )));
            }
        }
        if self.samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("recording contains non-finite samples".to_string()));
        }
        let dur = self.duration_s();
        for a in &self.annotations {
            if !(a.start_s >= 0.0 && a.end_s > a.start_s && a.end_s <= dur + 1e-9) {
                return Err(Error::data(format!(
                    "annotation [{}, {}] outside recording of {dur} s",
                    a.start_s, a.end_s
                )));
            }
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.samples.ncols()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.nrows() as f64 / self.fs
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channel_names.iter().position(|n| n == name)
    }

    pub fn indices_with_role(&self, role: ChannelRole) -> Vec<usize> {
        self.channel_roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == role)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn scalp_indices(&self) -> Vec<usize> {
        self.indices_with_role(ChannelRole::Scalp)
    }

    pub fn eog_indices(&self) -> Vec<usize> {
        self.indices_with_role(ChannelRole::Eog)
    }
}

/// Named electrode positions on the unit sphere.
#[derive(Debug, Clone)]
pub struct Montage {
    pub name: String,
    names: Vec<String>,
    positions: Vec<[f64; 3]>,
    index: HashMap<String, usize>,
}

#[derive(Deserialize, Serialize)]
struct MontageFile {
    name: String,
    channels: Vec<MontageChannel>,
}

#[derive(Deserialize, Serialize)]
struct MontageChannel {
    name: String,
    position: [f64; 3],
}

impl Montage {
    pub fn new(name: impl Into<String>, channels: Vec<(String, [f64; 3])>) -> Result<Self> {
        let mut names = Vec::with_capacity(channels.len());
        let mut positions = Vec::with_capacity(channels.len());
        let mut index = HashMap::new();
        for (i, (ch, pos)) in channels.into_iter().enumerate() {
            let norm = (pos[0] * pos[0] + pos[1] * pos[1] + pos[2] * pos[2]).sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::data(format!(
                    "montage position for {ch:?} has norm {norm}, expected 1"
                )));
            }
            if index.insert(ch.clone(), i).is_some() {
                return Err(Error::data(format!("duplicate montage channel {ch:?}")));
            }
            names.push(ch);
            positions.push(pos);
        }
        Ok(Montage { name: name.into(), names, positions, index })
    }

    fn from_json(text: &str) -> Result<Self> {
        let file: MontageFile = serde_json::from_str(text)
            .map_err(|e| Error::data(format!("montage parse: {e}")))?;
        Montage::new(file.name, file.channels.into_iter().map(|c| (c.name, c.position)).collect())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        Montage::from_json(&fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn position(&self, name: &str) -> Option<[f64; 3]> {
        self.index.get(name).map(|&i| self.positions[i])
    }

    /// Error unless every scalp channel of `rec` has a montage position.
    pub fn check_covers(&self, rec: &Recording) -> Result<()> {
        for i in rec.scalp_indices() {
            let name = &rec.channel_names[i];
            if !self.index.contains_key(name) {
                return Err(Error::data(format!(
                    "montage {:?} has no position for scalp channel {name:?}",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// Bundled montage layouts, shipped as data files.
pub fn standard_montage(id: &str) -> Result<Montage> {
    match id {
        "standard57" => Montage::from_json(include_str!("../data/standard57.json")),
        other => Err(Error::config(format!("unknown montage id {other:?}"))),
    }
}

/// One analysis window cut from an annotated segment.
#[derive(Debug, Clone)]
pub struct Window {
    pub subject_id: String,
    pub condition: String,
    pub task: String,
    pub start_s: f64,
    pub data: Array2<f64>,
}

/// Slide a `window_s` window by `hop_s` through every annotated segment,
/// covering at most the first `span_s` seconds of each segment.
///
/// Window count per segment is `floor((min(span, seg_len) - window)/hop) + 1`.
pub fn segment_windows(
    rec: &Recording,
    window_s: f64,
    hop_s: f64,
    span_s: f64,
) -> Result<Vec<Window>> {
    if !(window_s > 0.0 && hop_s > 0.0) {
        return Err(Error::config(format!(
            "window_s and hop_s must be positive (got {window_s}, {hop_s})"
        )));
    }
    if window_s > span_s {
        return Err(Error::config(format!(
            "window_s {window_s} exceeds span_s {span_s}"
        )));
    }
    let win_samples = (window_s * rec.fs).round() as usize;
    let mut out = Vec::new();
    for a in &rec.annotations {
        let seg_len = a.end_s - a.start_s;
        if seg_len + 1e-9 < window_s {
            return Err(Error::data(format!(
                "segment [{}, {}] ({} s) shorter than window {window_s} s",
                a.start_s, a.end_s, seg_len
            )));
        }
        let span = span_s.min(seg_len);
        let count = (((span - window_s) / hop_s) + 1e-9).floor() as usize + 1;
        for k in 0..count {
            let t0 = a.start_s + k as f64 * hop_s;
            let i0 = (t0 * rec.fs).round() as usize;
            let i1 = i0 + win_samples;
            if i1 > rec.n_samples() {
                return Err(Error::data(format!(
                    "window at {t0} s runs past the recording end"
                )));
            }
            out.push(Window {
                subject_id: rec.subject_id.clone(),
                condition: a.condition.clone(),
                task: a.task.clone(),
                start_s: t0,
                data: rec.samples.slice(ndarray::s![i0..i1, ..]).to_owned(),
            });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// On-disk format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    subject_id: String,
    fs: f64,
    n_samples: usize,
    n_channels: usize,
    /// Multiplier applied to the raw f32 values on load; volts = raw * scale.
    scale: f64,
    channel_names: Vec<String>,
    channel_roles: Vec<ChannelRole>,
    annotations: Vec<Annotation>,
    data_file: String,
}

/// Load a recording from its JSON manifest.
pub fn load_recording(manifest_path: &Path) -> Result<Recording> {
    let text = fs::read_to_string(manifest_path)
        .map_err(|e| Error::data(format!("read {}: {e}", manifest_path.display())))?;
    let m: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::data(format!("manifest parse: {e}")))?;
    if m.format_version != 1 {
        return Err(Error::data(format!(
            "unsupported manifest format_version {}",
            m.format_version
        )));
    }
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let data_path = dir.join(&m.data_file);
    let bytes = fs::read(&data_path)
        .map_err(|e| Error::data(format!("read {}: {e}", data_path.display())))?;
    let expected = 4 * m.n_samples * m.n_channels;
    if bytes.len() != expected {
        return Err(Error::data(format!(
            "{}: expected {expected} bytes for {} x {}, found {}",
            data_path.display(),
            m.n_samples,
            m.n_channels,
            bytes.len()
        )));
    }
    let mut samples = Array2::zeros((m.n_samples, m.n_channels));
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64 * m.scale;
        samples[[i / m.n_channels, i % m.n_channels]] = v;
    }
    let rec = Recording {
        samples,
        fs: m.fs,
        channel_names: m.channel_names,
        channel_roles: m.channel_roles,
        subject_id: m.subject_id,
        annotations: m.annotations,
    };
    rec.validate()?;
    Ok(rec)
}

/// Save a recording into `dir` as `<subject_id>.json` + `<subject_id>.f32`.
///
/// Samples are stored as little-endian f32 with scale 1.0; a recording whose
/// values are f32-representable (anything that came through `load_recording`
/// or out of the synthetic generator) round-trips bit-exactly.
pub fn save_recording(rec: &Recording, dir: &Path) -> Result<PathBuf> {
    rec.validate()?;
    fs::create_dir_all(dir)?;
    let data_file = format!("{}.f32", rec.subject_id);
    let manifest = Manifest {
        format_version: 1,
        subject_id: rec.subject_id.clone(),
        fs: rec.fs,
        n_samples: rec.n_samples(),
        n_channels: rec.n_channels(),
        scale: 1.0,
        channel_names: rec.channel_names.clone(),
        channel_roles: rec.channel_roles.clone(),
        annotations: rec.annotations.clone(),
        data_file: data_file.clone(),
    };
    let mut bytes = Vec::with_capacity(4 * rec.samples.len());
    for row in rec.samples.rows() {
        for &v in row {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(dir.join(&data_file), bytes)?;
    let manifest_path = dir.join(format!("{}.json", rec.subject_id));
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::data(format!("manifest encode: {e}")))?;
    fs::write(&manifest_path, json)?;
    Ok(manifest_path)
}
