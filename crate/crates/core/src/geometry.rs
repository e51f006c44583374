//! Torus geometry and dense per-cell fields.
//!
//! Cells are addressed by a linear index in row-major order over the
//! dimensions (the last dimension varies fastest). A [`GridField`] stores
//! `channels` values per cell, channel index fastest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Extents and window size of a D-dimensional toroidal grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridGeometry {
    extents: Vec<usize>,
    window: Vec<usize>,
}

impl GridGeometry {
    pub fn new(extents: Vec<usize>, window: Vec<usize>) -> Result<Self> {
        if extents.is_empty() {
            return Err(Error::Geometry("at least one dimension is required".into()));
        }
        if extents.len() != window.len() {
            return Err(Error::Geometry(format!(
                "extent has {} dimensions but window has {}",
                extents.len(),
                window.len()
            )));
        }
        for (d, (&e, &w)) in extents.iter().zip(&window).enumerate() {
            if e == 0 {
                return Err(Error::Geometry(format!("extent is zero in dim {}", d + 1)));
            }
            if w == 0 {
                return Err(Error::Geometry(format!("window is zero in dim {}", d + 1)));
            }
            if w > e {
                return Err(Error::WindowExceedsExtent { dim: d + 1 });
            }
        }
        // The padded cumulative-sum buffer has prod(E + W) entries, which bounds
        // every other allocation.
        let padded = extents
            .iter()
            .zip(&window)
            .try_fold(1usize, |acc, (&e, &w)| acc.checked_mul(e + w));
        if padded.is_none() {
            return Err(Error::Geometry(
                "grid size exceeds the addressable range".into(),
            ));
        }
        Ok(Self { extents, window })
    }

    pub fn dims(&self) -> usize {
        self.extents.len()
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn window(&self) -> &[usize] {
        &self.window
    }

    /// Number of cells, `prod(E)`.
    pub fn cells(&self) -> usize {
        self.extents.iter().product()
    }

    /// Number of cells in one window, `prod(W)`.
    pub fn window_volume(&self) -> usize {
        self.window.iter().product()
    }

    /// Capacity: how many non-overlapping windows fit on the grid.
    pub fn capacity(&self) -> f64 {
        self.cells() as f64 / self.window_volume() as f64
    }

    /// Row-major strides, last dimension contiguous.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.dims()];
        for d in (0..self.dims().saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * self.extents[d + 1];
        }
        strides
    }

    pub fn coords(&self, mut cell: usize) -> Vec<usize> {
        let mut coords = vec![0; self.dims()];
        for d in (0..self.dims()).rev() {
            coords[d] = cell % self.extents[d];
            cell /= self.extents[d];
        }
        coords
    }

    /// Linear index of a coordinate tuple; coordinates are reduced modulo the extents.
    pub fn index(&self, coords: &[usize]) -> usize {
        coords
            .iter()
            .zip(&self.extents)
            .fold(0, |acc, (&c, &e)| acc * e + c % e)
    }

    /// The cell reached from `cell` by moving `offset` along each dimension, wrapping around.
    pub fn shift(&self, cell: usize, offset: &[isize]) -> usize {
        let coords = self.coords(cell);
        let shifted: Vec<usize> = coords
            .iter()
            .zip(offset)
            .zip(&self.extents)
            .map(|((&c, &o), &e)| (c as isize + o).rem_euclid(e as isize) as usize)
            .collect();
        self.index(&shifted)
    }

    /// Cells of the window anchored at `anchor`, in row-major order of the offsets.
    pub fn window_cells(&self, anchor: usize) -> Vec<usize> {
        let base = self.coords(anchor);
        let mut out = Vec::with_capacity(self.window_volume());
        let mut offset = vec![0usize; self.dims()];
        loop {
            let coords: Vec<usize> = base.iter().zip(&offset).map(|(&b, &o)| b + o).collect();
            out.push(self.index(&coords));
            if !advance(&mut offset, &self.window) {
                break;
            }
        }
        out
    }

    /// Offset that maps a reverse window sum onto a forward one: `-(W - 1)`.
    pub fn reverse_offset(&self) -> Vec<isize> {
        self.window.iter().map(|&w| -(w as isize - 1)).collect()
    }
}

/// Odometer increment of `counter` within `limits`; false once it wraps to all zeros.
pub(crate) fn advance(counter: &mut [usize], limits: &[usize]) -> bool {
    for d in (0..counter.len()).rev() {
        counter[d] += 1;
        if counter[d] < limits[d] {
            return true;
        }
        counter[d] = 0;
    }
    false
}

/// A dense field with `channels` values at every grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    geometry: GridGeometry,
    channels: usize,
    values: Vec<f64>,
}

impl GridField {
    pub fn zeros(geometry: GridGeometry, channels: usize) -> Self {
        let len = geometry.cells() * channels;
        Self {
            geometry,
            channels,
            values: vec![0.0; len],
        }
    }

    pub fn from_values(geometry: GridGeometry, channels: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::DimensionMismatch(
                "field needs at least one channel".into(),
            ));
        }
        let expected = geometry.cells() * channels;
        if values.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "field has {} values, geometry and {} channels need {}",
                values.len(),
                channels,
                expected
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite field value at position {pos}"
            )));
        }
        Ok(Self {
            geometry,
            channels,
            values,
        })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, cell: usize, channel: usize) -> f64 {
        self.values[cell * self.channels + channel]
    }

    /// The channel values of one cell.
    pub fn row(&self, cell: usize) -> &[f64] {
        &self.values[cell * self.channels..(cell + 1) * self.channels]
    }

    pub fn row_mut(&mut self, cell: usize) -> &mut [f64] {
        &mut self.values[cell * self.channels..(cell + 1) * self.channels]
    }

    /// Translate the field on the torus: `out[shift(i, offset)] = self[i]`.
    pub fn shifted(&self, offset: &[isize]) -> Self {
        let mut out = vec![0.0; self.values.len()];
        let ch = self.channels;
        for cell in 0..self.geometry.cells() {
            let dst = self.geometry.shift(cell, offset);
            out[dst * ch..(dst + 1) * ch].copy_from_slice(self.row(cell));
        }
        Self {
            geometry: self.geometry.clone(),
            channels: ch,
            values: out,
        }
    }
}
