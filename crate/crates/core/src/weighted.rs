//! Entanglement-weighted graphs: realization edge weights averaged with an
//! entanglement measure as statistical weight.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ensembles::RealizationWeights;
use crate::error::{Error, Result};

/// Smooth raw 0/1 bond openness over neighbouring edges.
///
/// A horizontal edge is averaged with the mean of the two vertical edges that
/// leave its endpoints; a vertical edge with the mean of the two horizontal
/// edges meeting its upper endpoint. Vertical edges of the last row have no
/// upper layer and are kept as they are. Neighbours outside a non-periodic
/// window are left out of the inner mean.
pub fn convolve(raw: &RealizationWeights) -> RealizationWeights {
    let (rows, cols) = (raw.layers, raw.sites);
    let mut out = RealizationWeights::zeros(rows, cols, raw.periodic);
    if cols == 0 {
        return out;
    }
    let right = |c: usize| -> Option<usize> {
        if c + 1 < cols {
            Some(c + 1)
        } else if raw.periodic {
            Some(0)
        } else {
            None
        }
    };
    let left = |c: usize| -> Option<usize> {
        if c > 0 {
            Some(c - 1)
        } else if raw.periodic {
            Some(cols - 1)
        } else {
            None
        }
    };
    let mean = |a: f64, b: Option<f64>| b.map_or(a, |b| 0.5 * (a + b));
    for t in 0..rows {
        for c in 0..cols {
            let i = raw.idx(t, c);
            let verts = mean(raw.vertical[i], right(c).map(|r| raw.vertical[raw.idx(t, r)]));
            out.horizontal[i] = 0.5 * (raw.horizontal[i] + verts);
            out.vertical[i] = if t + 1 < rows {
                let here = raw.horizontal[raw.idx(t + 1, c)];
                let horiz = mean(here, left(c).map(|l| raw.horizontal[raw.idx(t + 1, l)]));
                0.5 * (raw.vertical[i] + horiz)
            } else {
                raw.vertical[i]
            };
        }
    }
    out
}

/// Measure-weighted sums of edge weights over realizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedGraphAccumulator {
    pub layers: usize,
    pub sites: usize,
    pub periodic: bool,
    pub sum_horizontal: Vec<f64>,
    pub sum_vertical: Vec<f64>,
    pub sum_measure: f64,
    pub count: u64,
}

impl WeightedGraphAccumulator {
    pub fn new(layers: usize, sites: usize, periodic: bool) -> Self {
        Self {
            layers,
            sites,
            periodic,
            sum_horizontal: vec![0.0; layers * sites],
            sum_vertical: vec![0.0; layers * sites],
            sum_measure: 0.0,
            count: 0,
        }
    }

    fn check_shape(&self, layers: usize, sites: usize) -> Result<()> {
        if (layers, sites) != (self.layers, self.sites) {
            return Err(Error::KeyMismatch(format!("window {}x{} vs {}x{}", self.layers, self.sites, layers, sites)));
        }
        Ok(())
    }

    pub fn accumulate(&mut self, weights: &RealizationWeights, measure: f64) -> Result<()> {
        self.check_shape(weights.layers, weights.sites)?;
        debug_assert!(measure >= 0.0);
        self.count += 1;
        if measure == 0.0 {
            return Ok(());
        }
        for (s, w) in self.sum_horizontal.iter_mut().zip(&weights.horizontal) {
            *s += measure * w;
        }
        for (s, w) in self.sum_vertical.iter_mut().zip(&weights.vertical) {
            *s += measure * w;
        }
        self.sum_measure += measure;
        Ok(())
    }

    /// A realization that contributes nothing but still counts.
    pub fn skip(&mut self) {
        self.count += 1;
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        self.check_shape(other.layers, other.sites)?;
        for (a, b) in self.sum_horizontal.iter_mut().zip(&other.sum_horizontal) {
            *a += b;
        }
        for (a, b) in self.sum_vertical.iter_mut().zip(&other.sum_vertical) {
            *a += b;
        }
        self.sum_measure += other.sum_measure;
        self.count += other.count;
        Ok(())
    }

    /// Conditional average `sum_weights / sum_measure`.
    pub fn finalize(&self) -> Result<RealizationWeights> {
        if self.sum_measure <= 0.0 {
            return Err(Error::NoHits);
        }
        let inv = 1.0 / self.sum_measure;
        Ok(RealizationWeights {
            layers: self.layers,
            sites: self.sites,
            periodic: self.periodic,
            horizontal: self.sum_horizontal.iter().map(|s| s * inv).collect(),
            vertical: self.sum_vertical.iter().map(|s| s * inv).collect(),
        })
    }
}

/// Writes `<prefix>_horizontal.csv` and `<prefix>_vertical.csv`, one row per
/// layer and one column per site.
pub fn write_graph_csv(graph: &RealizationWeights, dir: &Path, prefix: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, data) in [("horizontal", &graph.horizontal), ("vertical", &graph.vertical)] {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(dir.join(format!("{prefix}_{name}.csv")))?;
        for row in data.chunks(graph.sites.max(1)) {
            w.write_record(row.iter().map(|v| format!("{v:.6}")))?;
        }
        w.flush()?;
    }
    Ok(())
}
