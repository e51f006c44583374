//! Independent reference implementations shared by the integration tests and
//! the acceptance suite. Nothing here calls the library's numerical kernels.

#![allow(dead_code)]

use gridcount::{Bag, CountingGrid, GridField, GridGeometry, PROB_FLOOR};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Direct toroidal loop over every anchor and every window offset.
///
/// Forward: `out[k] = sum_{o < W} f[k + o]`. Reverse: `out[i] = sum_{o < W} f[i - o]`.
pub fn brute_window_sum(field: &GridField, reverse: bool) -> Vec<f64> {
    let g = field.geometry();
    let ch = field.channels();
    let e = g.extents();
    let w = g.window();
    let volume: usize = w.iter().product();
    let mut out = vec![0.0; g.cells() * ch];
    for cell in 0..g.cells() {
        let base = g.coords(cell);
        for flat in 0..volume {
            let mut rest = flat;
            let mut coords = vec![0; g.dims()];
            for d in (0..g.dims()).rev() {
                let o = rest % w[d];
                rest /= w[d];
                coords[d] = if reverse {
                    (base[d] + e[d] - o) % e[d]
                } else {
                    (base[d] + o) % e[d]
                };
            }
            let src = g.index(&coords);
            for c in 0..ch {
                out[cell * ch + c] += field.get(src, c);
            }
        }
    }
    out
}

pub fn random_geometry(rng: &mut impl Rng, dims: usize, max_extent: usize) -> GridGeometry {
    let extents: Vec<usize> = (0..dims).map(|_| rng.gen_range(1..=max_extent)).collect();
    let window: Vec<usize> = extents.iter().map(|&e| rng.gen_range(1..=e)).collect();
    GridGeometry::new(extents, window).unwrap()
}

/// Field with entries uniform on (0, 1].
pub fn random_field(rng: &mut impl Rng, geometry: &GridGeometry, channels: usize) -> GridField {
    let values = (0..geometry.cells() * channels)
        .map(|_| 1.0 - rng.gen::<f64>())
        .collect();
    GridField::from_values(geometry.clone(), channels, values).unwrap()
}

/// Random grid with entries well above the floor.
pub fn random_grid(rng: &mut impl Rng, geometry: &GridGeometry, vocab: usize) -> CountingGrid {
    let mut values: Vec<f64> = (0..geometry.cells() * vocab)
        .map(|_| 0.05 + rng.gen::<f64>())
        .collect();
    for row in values.chunks_mut(vocab) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    CountingGrid::new(GridField::from_values(geometry.clone(), vocab, values).unwrap()).unwrap()
}

/// Bags of random words; every bag has at least one word.
pub fn random_bags(rng: &mut impl Rng, docs: usize, vocab: usize, max_words: usize) -> Vec<Bag> {
    (0..docs)
        .map(|t| {
            let n = rng.gen_range(1..=max_words);
            Bag::from_words(t, (0..n).map(|_| rng.gen_range(0..vocab)))
        })
        .collect()
}

/// Window-averaged histograms by direct enumeration of the window cells.
pub fn brute_histograms(grid: &CountingGrid) -> Vec<f64> {
    let g = grid.geometry();
    let z = grid.vocab_size();
    let volume = g.window_volume() as f64;
    let mut out = vec![0.0; g.cells() * z];
    for k in 0..g.cells() {
        for i in g.window_cells(k) {
            for w in 0..z {
                out[k * z + w] += grid.pi().get(i, w) / volume;
            }
        }
    }
    out
}

/// Normalize a row and hold every entry at or above the floor, rescaling the
/// unpinned entries so the row still sums to one.
pub fn floor_normalize(row: &mut [f64]) {
    let s: f64 = row.iter().sum();
    row.iter_mut().for_each(|v| *v /= s);
    let mut pinned: Vec<bool> = vec![false; row.len()];
    while row.iter().zip(&pinned).any(|(&v, &p)| !p && v < PROB_FLOOR) {
        for (v, p) in row.iter().zip(pinned.iter_mut()) {
            *p |= *v < PROB_FLOOR;
        }
        let n = pinned.iter().filter(|&&p| p).count() as f64;
        let free: f64 = row
            .iter()
            .zip(&pinned)
            .filter(|(_, &p)| !p)
            .map(|(v, _)| v)
            .sum();
        for (v, &p) in row.iter_mut().zip(&pinned) {
            *v = if p {
                PROB_FLOOR
            } else {
                *v * (1.0 - n * PROB_FLOOR) / free
            };
        }
    }
}

/// One trajectory point of the reference mixture EM.
pub struct MixtureStep {
    pub pi: Vec<f64>,
    pub q: Vec<Vec<f64>>,
}

/// Plain multinomial-mixture EM: `q_t[k] ∝ prod_z pi[k,z]^c`,
/// `pi[k,z] ∝ sum_t q_t[k] c_z + lambda`. Returns `(pi, q)` at every iteration
/// before that iteration's M-step.
pub fn mixture_em(
    pi0: &[f64],
    components: usize,
    vocab: usize,
    bags: &[Bag],
    lambda: f64,
    iters: usize,
) -> Vec<MixtureStep> {
    let mut pi = pi0.to_vec();
    let mut steps = Vec::new();
    for _ in 0..iters {
        let q: Vec<Vec<f64>> = bags
            .iter()
            .map(|bag| {
                let logs: Vec<f64> = (0..components)
                    .map(|k| {
                        bag.entries()
                            .iter()
                            .map(|&(z, c)| c * pi[k * vocab + z].ln())
                            .sum()
                    })
                    .collect();
                let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(|v| v / s).collect()
            })
            .collect();
        let mut next = vec![lambda; components * vocab];
        for (bag, qt) in bags.iter().zip(&q) {
            for k in 0..components {
                for &(z, c) in bag.entries() {
                    next[k * vocab + z] += qt[k] * c;
                }
            }
        }
        for row in next.chunks_mut(vocab) {
            floor_normalize(row);
        }
        steps.push(MixtureStep { pi: pi.clone(), q });
        pi = next;
    }
    steps
}

/// Pooled word frequencies of a corpus.
pub fn pooled_distribution(bags: &[Bag], vocab: usize) -> Vec<f64> {
    let mut counts = vec![0.0; vocab];
    for bag in bags {
        for &(z, c) in bag.entries() {
            counts[z] += c;
        }
    }
    let total: f64 = counts.iter().sum();
    counts.into_iter().map(|c| c / total).collect()
}

/// `log p(bag)` under a uniform anchor prior, by direct summation over anchors.
pub fn brute_log_marginal(h: &[f64], cells: usize, vocab: usize, bag: &Bag) -> f64 {
    let logs: Vec<f64> = (0..cells)
        .map(|k| {
            bag.entries()
                .iter()
                .map(|&(z, c)| c * h[k * vocab + z].ln())
                .sum()
        })
        .collect();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln() - (cells as f64).ln()
}

pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
