use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::harness::write_ppm;
use crate::primitives::GaussianSet;

/// Counts of temporal durations over `[0, T]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DurationHistogram {
    pub num_frames: usize,
    /// `bins + 1` ascending edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub rigid: usize,
    pub transient: usize,
}

impl DurationHistogram {
    pub fn occupied(&self) -> Vec<usize> {
        (0..self.counts.len()).filter(|&b| self.counts[b] > 0).collect()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Bar chart, one column block per bin, tallest bar at full height.
    pub fn plot(&self, width: usize, height: usize) -> Grid {
        let mut img = Grid::filled(width, height, 3, 1.0);
        let peak = self.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
        let bins = self.counts.len();
        for x in 0..width {
            let b = (x * bins / width).min(bins - 1);
            let bar = (self.counts[b] as f64 / peak * (height as f64 - 1.0)).round() as usize;
            for y in height - bar.min(height)..height {
                img.pixel_mut(x, y).copy_from_slice(&[0.2, 0.35, 0.7]);
            }
        }
        img
    }

    /// Writes the counts as JSON and the bar chart as a PPM next to it.
    pub fn save(&self, json_path: &Path) -> Result<()> {
        let text = serde_json::to_vec_pretty(self).map_err(|e| Error::json(json_path, e))?;
        write_atomic(json_path, &text)?;
        write_ppm(&json_path.with_extension("ppm"), &self.plot(320, 160))
    }
}

/// Histogram of `β` over rigid and transient Gaussians. Durations above `T`
/// land in the last bin.
pub fn duration_histogram(set: &GaussianSet, bins: usize) -> Result<DurationHistogram> {
    if bins < 2 {
        return Err(Error::Invalid(format!("need at least 2 bins, got {bins}")));
    }
    let t = set.num_frames();
    let top = t.max(1) as f64;
    let edges: Vec<f64> = (0..=bins).map(|b| top * b as f64 / bins as f64).collect();
    let mut counts = vec![0; bins];
    let betas = set.rigids.iter().map(|g| g.beta).chain(set.transients.iter().map(|g| g.beta));
    for beta in betas {
        let b = ((beta / top * bins as f64).floor().max(0.0) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok(DurationHistogram { num_frames: t, edges, counts, rigid: set.rigids.len(), transient: set.transients.len() })
}
