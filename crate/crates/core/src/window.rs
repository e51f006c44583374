//! Toroidal window sums in time linear in the grid size.
//!
//! The field is replicate-padded by `W_d - 1` slices along every dimension so
//! that wrapped windows become plain hypercubes, accumulated into a
//! D-dimensional cumulative-sum tensor with a leading zero slice, and every
//! window sum is read off the `2^D` corners by inclusion-exclusion.
//!
//! The cumulative tensor is streamed along the first dimension: only the last
//! `W_0 + 1` slabs are alive at any time, so the scratch memory is independent
//! of `E_0` and stays cache-resident for long grids.
//!
//! The cumulative sums are carried in double-double precision. Corner values
//! grow with the grid volume while a single window may be small, and plain
//! `f64` prefix sums lose the small windows to cancellation.

use crate::geometry::{advance, GridField, GridGeometry};

/// Channels processed together; a slab holds `prod_{d>0}(E_d + W_d) * BLOCK` double-doubles.
const CHANNEL_BLOCK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `out[k] = sum of field over the window anchored at k`.
    Forward,
    /// `out[i] = sum of field[k] over every anchor k whose window contains i`.
    Reverse,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn fast_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn dd_add(ah: f64, al: f64, bh: f64, bl: f64) -> (f64, f64) {
    let (s, e) = two_sum(ah, bh);
    fast_two_sum(s, e + (al + bl))
}

/// Windowed sum of every channel of `field` on its torus.
pub fn window_sum(field: &GridField, direction: Direction) -> GridField {
    let geometry = field.geometry();
    let channels = field.channels();
    let mut out = GridField::zeros(geometry.clone(), channels);
    let kernel = Kernel::new(geometry, direction);

    let mut start = 0;
    while start < channels {
        let block = CHANNEL_BLOCK.min(channels - start);
        kernel.run(
            field,
            Pass {
                start,
                block,
                channels,
            },
            out.values_mut(),
        );
        start += block;
    }
    out
}

/// The channel range handled by one pass of the kernel.
#[derive(Clone, Copy)]
struct Pass {
    start: usize,
    block: usize,
    channels: usize,
}

/// Index plans for one geometry. "Inner" means dimensions `1..D`; a slab is the
/// inner cumulative tensor for one position along dimension 0.
struct Kernel {
    extent0: usize,
    window0: usize,
    /// Cells per slice of the grid along dimension 0.
    inner_cells: usize,
    slab_len: usize,
    /// `(source inner cell, slab slot)` for every padded inner position.
    fill: Vec<(usize, usize)>,
    /// Slab slots of the lower inner corner of each output cell's window, in
    /// row-major order of the inner output cells.
    anchors: Vec<usize>,
    /// Inner corner offsets with their inclusion-exclusion signs.
    corners: Vec<(usize, bool)>,
    slab_extents: Vec<usize>,
    slab_strides: Vec<usize>,
    direction: Direction,
}

impl Kernel {
    fn new(geometry: &GridGeometry, direction: Direction) -> Self {
        let extents = &geometry.extents()[1..];
        let window = &geometry.window()[1..];
        let inner = extents.len();

        let slab_extents: Vec<usize> = extents.iter().zip(window).map(|(&e, &w)| e + w).collect();
        let mut slab_strides = vec![1; inner];
        for d in (0..inner.saturating_sub(1)).rev() {
            slab_strides[d] = slab_strides[d + 1] * slab_extents[d + 1];
        }
        let slab_len = slab_extents.iter().product();
        let inner_cells = extents.iter().product();

        // Padded position p holds the cell p mod E and is stored at p + 1.
        let padded: Vec<usize> = extents
            .iter()
            .zip(window)
            .map(|(&e, &w)| e + w - 1)
            .collect();
        let mut fill = Vec::with_capacity(padded.iter().product());
        let mut pos = vec![0usize; inner];
        loop {
            let mut src = 0;
            let mut dst = 0;
            for d in 0..inner {
                src = src * extents[d] + pos[d] % extents[d];
                dst += (pos[d] + 1) * slab_strides[d];
            }
            fill.push((src, dst));
            if !advance(&mut pos, &padded) {
                break;
            }
        }

        // A reverse sum at cell i is the forward sum anchored at i - (W - 1).
        let mut anchors = Vec::with_capacity(inner_cells);
        let mut cell = vec![0usize; inner];
        loop {
            let mut base = 0;
            for d in 0..inner {
                let anchor = match direction {
                    Direction::Forward => cell[d],
                    Direction::Reverse => (cell[d] + extents[d] - (window[d] - 1)) % extents[d],
                };
                base += anchor * slab_strides[d];
            }
            anchors.push(base);
            if !advance(&mut cell, extents) {
                break;
            }
        }

        let corners = (0..1usize << inner)
            .map(|mask| {
                let mut offset = 0;
                let mut upper = 0;
                for d in 0..inner {
                    if mask >> d & 1 == 1 {
                        offset += window[d] * slab_strides[d];
                        upper += 1;
                    }
                }
                (offset, (inner - upper).is_multiple_of(2))
            })
            .collect();

        Self {
            extent0: geometry.extents()[0],
            window0: geometry.window()[0],
            inner_cells,
            slab_len,
            fill,
            anchors,
            corners,
            slab_extents,
            slab_strides,
            direction,
        }
    }

    /// Window sums of channels `start..start + block`, written into `out`.
    fn run(&self, field: &GridField, pass: Pass, out: &mut [f64]) {
        let Pass {
            start,
            block,
            channels,
        } = pass;
        let values = field.values();
        let stride = self.slab_len * block;
        // Cumulative slab r lives in ring slot r % (W_0 + 1); slab 0 is the zero slice.
        let ring = self.window0 + 1;
        let mut cum_hi = vec![0.0; ring * stride];
        let mut cum_lo = vec![0.0; ring * stride];
        let mut slab_hi = vec![0.0; stride];
        let mut slab_lo = vec![0.0; stride];

        for m in 0..self.extent0 + self.window0 - 1 {
            let row = (m % self.extent0) * self.inner_cells;
            for &(src, dst) in &self.fill {
                let at = (row + src) * channels + start;
                slab_hi[dst * block..(dst + 1) * block].copy_from_slice(&values[at..at + block]);
                slab_lo[dst * block..(dst + 1) * block].fill(0.0);
            }
            self.inner_prefix(&mut slab_hi, &mut slab_lo, block);

            let prev = (m % ring) * stride;
            let cur = ((m + 1) % ring) * stride;
            for j in 0..stride {
                let (h, l) = dd_add(cum_hi[prev + j], cum_lo[prev + j], slab_hi[j], slab_lo[j]);
                cum_hi[cur + j] = h;
                cum_lo[cur + j] = l;
            }

            if m + 1 >= self.window0 {
                let anchor0 = m + 1 - self.window0;
                let lower = (anchor0 % ring) * stride;
                let cell0 = match self.direction {
                    Direction::Forward => anchor0,
                    Direction::Reverse => (anchor0 + self.window0 - 1) % self.extent0,
                };
                let first = cell0 * self.inner_cells;
                self.emit(
                    &cum_hi,
                    &cum_lo,
                    cur,
                    lower,
                    pass,
                    &mut out[first * channels..],
                );
            }
        }
    }

    /// In-place prefix sums of one slab along every inner dimension.
    fn inner_prefix(&self, hi: &mut [f64], lo: &mut [f64], block: usize) {
        for d in 0..self.slab_extents.len() {
            let stride = self.slab_strides[d] * block;
            let span = self.slab_extents[d] * stride;
            for base in (0..self.slab_len * block).step_by(span) {
                for m in 1..self.slab_extents[d] {
                    let row = base + m * stride;
                    for j in row..row + stride {
                        let (h, l) = dd_add(hi[j], lo[j], hi[j - stride], lo[j - stride]);
                        hi[j] = h;
                        lo[j] = l;
                    }
                }
            }
        }
    }

    /// Inclusion-exclusion for one slice of output cells along dimension 0:
    /// the upper slab minus the lower slab, then the inner corners.
    fn emit(
        &self,
        hi: &[f64],
        lo: &[f64],
        upper: usize,
        lower: usize,
        pass: Pass,
        out: &mut [f64],
    ) {
        let Pass {
            start,
            block,
            channels,
        } = pass;
        let mut acc_hi = [0.0; CHANNEL_BLOCK];
        let mut acc_lo = [0.0; CHANNEL_BLOCK];
        for (cell, &base) in self.anchors.iter().enumerate() {
            acc_hi[..block].fill(0.0);
            acc_lo[..block].fill(0.0);
            for &(offset, positive) in &self.corners {
                let at = (base + offset) * block;
                for c in 0..block {
                    let (u, l) = (upper + at + c, lower + at + c);
                    let (mut dh, mut dl) = dd_add(hi[u], lo[u], -hi[l], -lo[l]);
                    if !positive {
                        dh = -dh;
                        dl = -dl;
                    }
                    let (sh, sl) = dd_add(acc_hi[c], acc_lo[c], dh, dl);
                    acc_hi[c] = sh;
                    acc_lo[c] = sl;
                }
            }
            let dst = cell * channels + start;
            for c in 0..block {
                out[dst + c] = acc_hi[c] + acc_lo[c];
            }
        }
    }
}
