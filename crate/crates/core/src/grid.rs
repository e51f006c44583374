//! The counting grid: a normalized word distribution at every torus cell, and
//! the window-averaged histograms documents are drawn from.

use crate::bag::Bag;
use crate::error::{Error, Result};
use crate::geometry::{GridField, GridGeometry};
use crate::window::{window_sum, Direction};

/// Lower bound on every entry of the grid and its histograms.
pub const PROB_FLOOR: f64 = 1e-10;

/// Row-sum tolerance accepted when validating a grid.
pub const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct CountingGrid {
    pi: GridField,
}

impl CountingGrid {
    /// Wrap a field of per-cell distributions, checking the floor and row sums.
    pub fn new(pi: GridField) -> Result<Self> {
        for cell in 0..pi.geometry().cells() {
            let row = pi.row(cell);
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::InvalidArgument(format!(
                    "cell {cell}: distribution sums to {sum}"
                )));
            }
            if let Some(z) = row.iter().position(|&p| p < PROB_FLOOR) {
                return Err(Error::InvalidArgument(format!(
                    "cell {cell}: entry {z} is {} (below the floor)",
                    row[z]
                )));
            }
        }
        Ok(Self { pi })
    }

    /// Normalize every row of non-negative weights, then apply the floor.
    pub fn from_weights(mut weights: GridField) -> Self {
        for cell in 0..weights.geometry().cells() {
            normalize_row(weights.row_mut(cell));
        }
        Self { pi: weights }
    }

    pub fn uniform(geometry: GridGeometry, vocab_size: usize) -> Self {
        let len = geometry.cells() * vocab_size;
        let pi = GridField::from_values(geometry, vocab_size, vec![1.0 / vocab_size as f64; len])
            .expect("consistent dimensions");
        Self { pi }
    }

    pub fn geometry(&self) -> &GridGeometry {
        self.pi.geometry()
    }

    pub fn vocab_size(&self) -> usize {
        self.pi.channels()
    }

    pub fn pi(&self) -> &GridField {
        &self.pi
    }

    pub fn into_field(self) -> GridField {
        self.pi
    }

    /// Translate the grid on the torus by `offset`.
    pub fn shifted(&self, offset: &[isize]) -> Self {
        Self {
            pi: self.pi.shifted(offset),
        }
    }
}

/// Normalize a row of non-negative weights to a distribution whose entries are
/// all at least [`PROB_FLOOR`]. A row with no mass becomes uniform.
pub(crate) fn normalize_row(row: &mut [f64]) {
    let sum: f64 = row.iter().sum();
    if !(sum.is_finite() && sum > 0.0) {
        let uniform = 1.0 / row.len() as f64;
        row.iter_mut().for_each(|v| *v = uniform);
        return;
    }
    row.iter_mut().for_each(|v| *v /= sum);
    if row.iter().all(|&v| v >= PROB_FLOOR) {
        return;
    }

    // Pin low entries at the floor and rescale the rest to keep the total at one.
    // Rescaling can push another entry under the floor, hence the loop.
    let mut pinned = vec![false; row.len()];
    loop {
        let mut newly = false;
        for (v, p) in row.iter_mut().zip(pinned.iter_mut()) {
            if !*p && *v < PROB_FLOOR {
                *p = true;
                newly = true;
            }
        }
        if !newly {
            break;
        }
        let n_pinned = pinned.iter().filter(|&&p| p).count();
        let free: f64 = row
            .iter()
            .zip(&pinned)
            .filter(|(_, &p)| !p)
            .map(|(v, _)| v)
            .sum();
        let scale = (1.0 - n_pinned as f64 * PROB_FLOOR) / free;
        for (v, &p) in row.iter_mut().zip(&pinned) {
            *v = if p { PROB_FLOOR } else { *v * scale };
        }
    }
}

/// Window-averaged word distributions `h[k, z]` for every anchor `k`.
pub fn compute_histograms(grid: &CountingGrid) -> GridField {
    let mut h = window_sum(grid.pi(), Direction::Forward);
    let volume = grid.geometry().window_volume() as f64;
    h.values_mut()
        .iter_mut()
        .for_each(|v| *v = (*v / volume).max(PROB_FLOOR));
    h
}

/// `sum_z c_z log h[k, z]` over the bag's entries.
pub fn bag_log_likelihood(bag: &Bag, histograms: &GridField, anchor: usize) -> Result<f64> {
    bag.check_vocab(histograms.channels())?;
    let row = histograms.row(anchor);
    Ok(bag
        .entries()
        .iter()
        .filter(|&&(_, c)| c > 0.0)
        .map(|&(z, c)| c * row[z].ln())
        .sum())
}

/// Histograms together with their logarithms, shared by the E and M steps.
#[derive(Debug, Clone)]
pub struct Histograms {
    h: GridField,
    log_h: Vec<f64>,
}

impl Histograms {
    pub fn new(grid: &CountingGrid) -> Self {
        Self::from_field(compute_histograms(grid))
    }

    pub fn from_field(h: GridField) -> Self {
        let log_h = h.values().iter().map(|v| v.ln()).collect();
        Self { h, log_h }
    }

    pub fn field(&self) -> &GridField {
        &self.h
    }

    pub fn geometry(&self) -> &GridGeometry {
        self.h.geometry()
    }

    pub fn vocab_size(&self) -> usize {
        self.h.channels()
    }

    pub(crate) fn log_row(&self, anchor: usize) -> &[f64] {
        let z = self.h.channels();
        &self.log_h[anchor * z..(anchor + 1) * z]
    }

    /// Log-likelihood of the bag at every anchor.
    pub fn scores(&self, bag: &Bag) -> Result<Vec<f64>> {
        bag.check_vocab(self.vocab_size())?;
        let entries: Vec<(usize, f64)> = bag
            .entries()
            .iter()
            .copied()
            .filter(|&(_, c)| c > 0.0)
            .collect();
        Ok((0..self.geometry().cells())
            .map(|k| {
                let row = self.log_row(k);
                entries.iter().map(|&(z, c)| c * row[z]).sum()
            })
            .collect())
    }
}
