//! Sampling corpora from a known counting grid.

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::bag::{Bag, Target};
use crate::error::{Error, Result};
use crate::geometry::{GridField, GridGeometry};
use crate::grid::{compute_histograms, CountingGrid};

#[derive(Debug, Clone)]
pub enum PlantedGrid {
    Explicit(CountingGrid),
    /// Tile the torus with non-overlapping windows, each holding one sparse
    /// random distribution `∝ exp(sharpness * u_z)`.
    Blocky {
        sharpness: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WordsPerDoc {
    Fixed(usize),
    /// Uniform over the inclusive range.
    Range(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Labeler {
    /// Index of the planted block holding the window's center cell.
    PlantedWindow,
    /// Explicit label for every anchor.
    ByAnchor(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub geometry: GridGeometry,
    pub vocab_size: usize,
    pub planted: PlantedGrid,
    pub docs: usize,
    pub words: WordsPerDoc,
    pub seed: u64,
    pub labeler: Option<Labeler>,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub bags: Vec<Bag>,
    /// True anchor of every document.
    pub anchors: Vec<usize>,
    pub labels: Option<Vec<usize>>,
    pub grid: CountingGrid,
}

fn check_tiling(geometry: &GridGeometry) -> Result<()> {
    for (d, (&e, &w)) in geometry.extents().iter().zip(geometry.window()).enumerate() {
        if e % w != 0 {
            return Err(Error::InvalidArgument(format!(
                "blocky grid needs the window to tile the extent; dim {} has extent {e} and window {w}",
                d + 1
            )));
        }
    }
    Ok(())
}

/// Number of non-overlapping windows in a tiling of the torus.
pub fn block_count(geometry: &GridGeometry) -> usize {
    geometry
        .extents()
        .iter()
        .zip(geometry.window())
        .map(|(&e, &w)| e / w)
        .product()
}

/// Tiling block containing `cell`.
pub fn block_of(geometry: &GridGeometry, cell: usize) -> usize {
    geometry
        .coords(cell)
        .iter()
        .zip(geometry.extents().iter().zip(geometry.window()))
        .fold(0, |acc, (&c, (&e, &w))| acc * (e / w) + c / w)
}

/// Block holding the center cell `k + floor(W/2)` of the window anchored at `anchor`.
pub fn planted_window_label(geometry: &GridGeometry, anchor: usize) -> usize {
    let half: Vec<isize> = geometry
        .window()
        .iter()
        .map(|&w| (w / 2) as isize)
        .collect();
    block_of(geometry, geometry.shift(anchor, &half))
}

pub fn blocky_grid(
    geometry: &GridGeometry,
    vocab_size: usize,
    sharpness: f64,
    seed: u64,
) -> Result<CountingGrid> {
    check_tiling(geometry)?;
    if !sharpness.is_finite() || sharpness < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "sharpness must be non-negative, got {sharpness}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks: Vec<Vec<f64>> = (0..block_count(geometry))
        .map(|_| {
            (0..vocab_size)
                .map(|_| (sharpness * rng.gen::<f64>()).exp())
                .collect()
        })
        .collect();
    let mut values = Vec::with_capacity(geometry.cells() * vocab_size);
    for cell in 0..geometry.cells() {
        values.extend_from_slice(&blocks[block_of(geometry, cell)]);
    }
    Ok(CountingGrid::from_weights(GridField::from_values(
        geometry.clone(),
        vocab_size,
        values,
    )?))
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.docs == 0 {
            return Err(Error::InvalidArgument(
                "at least one document is required".into(),
            ));
        }
        if self.vocab_size == 0 {
            return Err(Error::InvalidArgument(
                "vocabulary must be non-empty".into(),
            ));
        }
        match self.words {
            WordsPerDoc::Fixed(0) => {
                return Err(Error::InvalidArgument(
                    "documents need at least one word".into(),
                ))
            }
            WordsPerDoc::Range(lo, hi) if lo == 0 || lo > hi => {
                return Err(Error::InvalidArgument(format!(
                    "bad words-per-document range {lo}..={hi}"
                )))
            }
            _ => {}
        }
        if let PlantedGrid::Explicit(grid) = &self.planted {
            if grid.geometry() != &self.geometry || grid.vocab_size() != self.vocab_size {
                return Err(Error::DimensionMismatch(
                    "planted grid does not match the requested geometry and vocabulary".into(),
                ));
            }
        }
        match &self.labeler {
            Some(Labeler::PlantedWindow) => check_tiling(&self.geometry)?,
            Some(Labeler::ByAnchor(map)) if map.len() != self.geometry.cells() => {
                return Err(Error::DimensionMismatch(format!(
                    "labeler covers {} anchors, grid has {}",
                    map.len(),
                    self.geometry.cells()
                )))
            }
            _ => {}
        }
        Ok(())
    }
}

/// Draw a corpus: each document picks a uniform anchor and samples its words
/// independently from that anchor's window histogram.
pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let grid = match &spec.planted {
        PlantedGrid::Explicit(grid) => grid.clone(),
        PlantedGrid::Blocky { sharpness } => {
            blocky_grid(&spec.geometry, spec.vocab_size, *sharpness, spec.seed)?
        }
    };
    let h = compute_histograms(&grid);
    let cells = spec.geometry.cells();

    let mut bags = Vec::with_capacity(spec.docs);
    let mut anchors = Vec::with_capacity(spec.docs);
    let mut labels = spec.labeler.as_ref().map(|_| Vec::with_capacity(spec.docs));
    for t in 0..spec.docs {
        // Stream 0 seeds the planted grid; document t draws from stream t + 1.
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(t as u64 + 1);

        let anchor = rng.gen_range(0..cells);
        let n = match spec.words {
            WordsPerDoc::Fixed(n) => n,
            WordsPerDoc::Range(lo, hi) => rng.gen_range(lo..=hi),
        };
        let dist =
            WeightedIndex::new(h.row(anchor)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut bag = Bag::from_words(t, (0..n).map(|_| dist.sample(&mut rng)));

        if let (Some(labeler), Some(labels)) = (&spec.labeler, labels.as_mut()) {
            let label = match labeler {
                Labeler::PlantedWindow => planted_window_label(&spec.geometry, anchor),
                Labeler::ByAnchor(map) => map[anchor],
            };
            labels.push(label);
            bag = bag.with_target(Target::Label(label));
        }
        anchors.push(anchor);
        bags.push(bag);
    }
    Ok(SynthCorpus {
        bags,
        anchors,
        labels,
        grid,
    })
}
