//! Capacity-factor binning and windowed model inputs.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{AlignedSample, Hour};

/// Discretization of the capacity factor into `n_bins` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    edges: Vec<f64>,
    uniform: bool,
}

/// Equal-width bins over [0, 1]: `e_i = i / n`.
pub fn make_bins(n: usize) -> Result<BinSpec> {
    if n < 2 {
        return Err(Error::InvalidBins(format!("need at least 2 bins, got {n}")));
    }
    let edges = (0..=n).map(|i| i as f64 / n as f64).collect();
    Ok(BinSpec {
        edges,
        uniform: true,
    })
}

impl BinSpec {
    /// Arbitrary edges; must start at 0, end at 1 and increase strictly.
    pub fn from_edges(edges: Vec<f64>) -> Result<BinSpec> {
        if edges.len() < 3 {
            return Err(Error::InvalidBins("need at least 3 edges".into()));
        }
        if edges[0] != 0.0 || *edges.last().unwrap() != 1.0 {
            return Err(Error::InvalidBins("edges must span [0, 1]".into()));
        }
        if edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidBins("edges must increase strictly".into()));
        }
        Ok(BinSpec {
            edges,
            uniform: false,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Class of a capacity factor; the top edge belongs to the last bin.
    pub fn assign_bin(&self, v: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::ValueOutOfRange(v));
        }
        let n = self.n_bins();
        let label = if self.uniform {
            (v * n as f64).floor() as usize
        } else {
            self.edges[1..n].partition_point(|&e| e <= v)
        };
        Ok(label.min(n - 1))
    }
}

pub fn assign_bin(v: f64, spec: &BinSpec) -> Result<usize> {
    spec.assign_bin(v)
}

/// Per-bin sample counts.
pub fn histogram(samples: &[AlignedSample], spec: &BinSpec) -> Result<Vec<usize>> {
    let mut counts = vec![0; spec.n_bins()];
    for s in samples {
        counts[spec.assign_bin(s.capacity_factor)?] += 1;
    }
    Ok(counts)
}

/// `bin_low,bin_high,count` rows.
pub fn write_histogram_csv(path: &Path, spec: &BinSpec, counts: &[usize]) -> Result<()> {
    let mut out = String::from("bin_low,bin_high,count\n");
    for (i, c) in counts.iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", spec.edges[i], spec.edges[i + 1], c));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowRef {
    /// First row of the window in the dataset's row store.
    pub start: usize,
    /// Timestamp of the final (labelled) hour.
    pub end_time: Hour,
    pub label: usize,
}

/// Sliding `W`-hour windows over the selected feature columns. Rows are
/// stored once and shared between windows (and between the two halves of a
/// chronological split).
#[derive(Debug, Clone)]
pub struct WindowedDataset {
    rows: Arc<[f64]>,
    n_features: usize,
    window_len: usize,
    windows: Vec<WindowRef>,
    feature_indices: Vec<usize>,
    bin_spec: BinSpec,
    domain_tag: String,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.bin_spec.n_bins()
    }

    pub fn feature_indices(&self) -> &[usize] {
        &self.feature_indices
    }

    pub fn bin_spec(&self) -> &BinSpec {
        &self.bin_spec
    }

    pub fn domain_tag(&self) -> &str {
        &self.domain_tag
    }

    pub fn windows(&self) -> &[WindowRef] {
        &self.windows
    }

    /// The `W x F` row-major input matrix of window `i`.
    pub fn x(&self, i: usize) -> &[f64] {
        let start = self.windows[i].start * self.n_features;
        &self.rows[start..start + self.window_len * self.n_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.windows[i].label
    }

    pub fn labels(&self) -> Vec<usize> {
        self.windows.iter().map(|w| w.label).collect()
    }

    pub fn start_time(&self, i: usize) -> Hour {
        Hour(self.windows[i].end_time.0 - self.window_len as i64 + 1)
    }

    fn subset(&self, windows: Vec<WindowRef>) -> WindowedDataset {
        WindowedDataset {
            rows: Arc::clone(&self.rows),
            windows,
            feature_indices: self.feature_indices.clone(),
            bin_spec: self.bin_spec.clone(),
            domain_tag: self.domain_tag.clone(),
            ..*self
        }
    }
}

/// Builds stride-1 windows inside every hour-contiguous run of `samples`
/// (which must be sorted by timestamp). A run of length `L` contributes
/// `max(0, L - W + 1)` windows, each labelled with the bin of its final hour.
pub fn window(
    samples: &[AlignedSample],
    window_len: usize,
    feature_indices: &[usize],
    spec: &BinSpec,
    domain_tag: &str,
) -> Result<WindowedDataset> {
    if window_len == 0 {
        return Err(Error::InvalidConfig("window length must be positive".into()));
    }
    if feature_indices.is_empty() {
        return Err(Error::InvalidConfig("no features selected".into()));
    }
    let total = samples.first().map_or(0, |s| s.features.len());
    if let Some(&bad) = feature_indices.iter().find(|&&i| i >= total) {
        return Err(Error::InvalidConfig(format!(
            "feature index {bad} out of range for {total} features"
        )));
    }

    let nf = feature_indices.len();
    let mut rows = Vec::with_capacity(samples.len() * nf);
    let mut windows = Vec::new();
    let mut run_start = 0;
    for (i, s) in samples.iter().enumerate() {
        if s.features.len() != total {
            return Err(Error::ShapeMismatch(format!(
                "sample at {} has {} features, expected {total}",
                s.timestamp,
                s.features.len()
            )));
        }
        if i > 0 && s.timestamp != samples[i - 1].timestamp.next() {
            run_start = i;
        }
        rows.extend(feature_indices.iter().map(|&j| s.features[j]));
        if i + 1 - run_start >= window_len {
            windows.push(WindowRef {
                start: i + 1 - window_len,
                end_time: s.timestamp,
                label: spec.assign_bin(s.capacity_factor)?,
            });
        }
    }
    if windows.is_empty() {
        return Err(Error::NoRunLongEnough { window: window_len });
    }
    Ok(WindowedDataset {
        rows: rows.into(),
        n_features: nf,
        window_len,
        windows,
        feature_indices: feature_indices.to_vec(),
        bin_spec: spec.clone(),
        domain_tag: domain_tag.to_string(),
    })
}

/// Earliest `floor(train_frac * n)` windows go to train. Test windows whose
/// first hour is not after the final train window's last hour are dropped, so
/// no hour appears on both sides.
pub fn split_chronological(
    ds: &WindowedDataset,
    train_frac: f64,
) -> Result<(WindowedDataset, WindowedDataset)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train fraction {train_frac} outside (0, 1)"
        )));
    }
    let n_train = (train_frac * ds.len() as f64).floor() as usize;
    if n_train == 0 {
        return Err(Error::EmptySide("train"));
    }
    let boundary = ds.windows[n_train - 1].end_time;
    let w = ds.window_len as i64;
    let test: Vec<WindowRef> = ds.windows[n_train..]
        .iter()
        .filter(|r| r.end_time.0 - w + 1 > boundary.0)
        .copied()
        .collect();
    if test.is_empty() {
        return Err(Error::EmptySide("test"));
    }
    Ok((ds.subset(ds.windows[..n_train].to_vec()), ds.subset(test)))
}
