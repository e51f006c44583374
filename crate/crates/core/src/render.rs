//! Export of per-cell fields as CSV tables and PNG heatmaps.
//!
//! CSV has one row per cell: the cell coordinates followed by one column per
//! channel. PNG renders a single channel through a sequential colormap, or,
//! for class distributions, the winning class colored from a fixed palette.
//! 2D grids give one image, 3D grids one image per index along the third
//! dimension, and 1D grids a one-cell-high strip.

use std::io::Write;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::geometry::GridGeometry;

/// Pixels per cell edge in PNG output.
pub const CELL_PIXELS: u32 = 8;

/// A field to export: `channels` values per cell, cell-major.
pub struct FieldView<'a> {
    pub geometry: &'a GridGeometry,
    pub channels: usize,
    pub values: &'a [f64],
    pub channel_names: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shading {
    /// One channel through the sequential colormap, scaled to its min..max.
    Scalar(usize),
    /// Argmax channel in a categorical palette, brightness from its value.
    Categorical,
}

pub fn write_csv(out: &mut impl Write, view: &FieldView<'_>) -> std::io::Result<()> {
    let dims = view.geometry.dims();
    let mut header: Vec<String> = (1..=dims).map(|d| format!("i{d}")).collect();
    header.extend(view.channel_names.iter().cloned());
    writeln!(out, "{}", header.join(","))?;
    for cell in 0..view.geometry.cells() {
        let mut row: Vec<String> = view
            .geometry
            .coords(cell)
            .iter()
            .map(|c| c.to_string())
            .collect();
        row.extend(
            view.values[cell * view.channels..(cell + 1) * view.channels]
                .iter()
                .map(|v| v.to_string()),
        );
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

const STOPS: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

const PALETTE: [[u8; 3]; 10] = [
    [228, 26, 28],
    [55, 126, 184],
    [77, 175, 74],
    [152, 78, 163],
    [255, 127, 0],
    [255, 255, 51],
    [166, 86, 40],
    [247, 129, 191],
    [153, 153, 153],
    [0, 0, 0],
];

/// Sequential colormap on `t` in [0, 1].
pub fn colormap(t: f64) -> Rgb<u8> {
    let t = if t.is_finite() {
        t.clamp(0.0, 1.0)
    } else {
        0.0
    };
    let pos = t * (STOPS.len() - 1) as f64;
    let i = (pos.floor() as usize).min(STOPS.len() - 2);
    let f = pos - i as f64;
    let mut px = [0u8; 3];
    for c in 0..3 {
        px[c] = (STOPS[i][c] + f * (STOPS[i + 1][c] - STOPS[i][c])).round() as u8;
    }
    Rgb(px)
}

fn shade(view: &FieldView<'_>, shading: Shading, cell: usize, range: (f64, f64)) -> Rgb<u8> {
    let row = &view.values[cell * view.channels..(cell + 1) * view.channels];
    match shading {
        Shading::Scalar(ch) => {
            let (lo, hi) = range;
            let t = if hi > lo {
                (row[ch] - lo) / (hi - lo)
            } else {
                0.5
            };
            colormap(t)
        }
        Shading::Categorical => {
            let mut best = 0;
            for (l, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = l;
                }
            }
            let base = PALETTE[best % PALETTE.len()];
            let w = row[best].clamp(0.0, 1.0);
            Rgb(base.map(|c| (255.0 - w * (255.0 - c as f64)).round() as u8))
        }
    }
}

/// Render the field to one or more PNG files derived from `path`; returns the files written.
pub fn write_png(path: &Path, view: &FieldView<'_>, shading: Shading) -> Result<Vec<PathBuf>> {
    if let Shading::Scalar(ch) = shading {
        if ch >= view.channels {
            return Err(Error::InvalidArgument(format!(
                "channel {ch} out of range for {} channels",
                view.channels
            )));
        }
    }
    let g = view.geometry;
    let range = match shading {
        Shading::Scalar(ch) => {
            (0..g.cells()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
                let v = view.values[c * view.channels + ch];
                (lo.min(v), hi.max(v))
            })
        }
        Shading::Categorical => (0.0, 1.0),
    };

    let e = g.extents();
    let (rows, cols, depth) = match g.dims() {
        1 => (1, e[0], 1),
        2 => (e[0], e[1], 1),
        3 => (e[0], e[1], e[2]),
        d => {
            return Err(Error::InvalidArgument(format!(
                "heatmaps support 1 to 3 dimensions, grid has {d}"
            )))
        }
    };

    let mut written = Vec::new();
    for layer in 0..depth {
        let mut img = RgbImage::new(cols as u32 * CELL_PIXELS, rows as u32 * CELL_PIXELS);
        for r in 0..rows {
            for c in 0..cols {
                let coords: Vec<usize> = match g.dims() {
                    1 => vec![c],
                    2 => vec![r, c],
                    _ => vec![r, c, layer],
                };
                let px = shade(view, shading, g.index(&coords), range);
                for dy in 0..CELL_PIXELS {
                    for dx in 0..CELL_PIXELS {
                        img.put_pixel(c as u32 * CELL_PIXELS + dx, r as u32 * CELL_PIXELS + dy, px);
                    }
                }
            }
        }
        let file = if depth == 1 {
            path.to_path_buf()
        } else {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("heatmap");
            path.with_file_name(format!("{stem}_z{layer}.png"))
        };
        img.save(&file)
            .map_err(|e| Error::Image(format!("{}: {e}", file.display())))?;
        written.push(file);
    }
    Ok(written)
}
