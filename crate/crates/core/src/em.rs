//! Variational EM for counting grids.
//!
//! Each iteration computes the window histograms of the current grid, infers
//! the exact posterior over window anchors for every bag, records the bound,
//! and re-estimates the grid with the multiplicative update
//! `pi'[i,z] ∝ pi[i,z] * sum_t c_z^t * sum_{k: i in W_k} q_t[k] / h[k,z]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bag::Bag;
use crate::error::{Error, Result};
use crate::geometry::{GridField, GridGeometry};
use crate::grid::{normalize_row, CountingGrid, Histograms};
use crate::window::{window_sum, Direction};

/// Cells per parallel work item in the M-step accumulation.
const CELL_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_iters: usize,
    /// Stop once the relative change of the bound falls below this.
    pub rel_tol: f64,
    pub seed: u64,
    /// Amplitude of the uniform noise added to the flat initial grid.
    pub init_noise: f64,
    /// Added to every entry after the multiplicative update.
    pub pseudocount: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            rel_tol: 1e-6,
            seed: 0,
            init_noise: 0.1,
            pseudocount: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol.is_finite() && self.rel_tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "relative tolerance must be positive, got {}",
                self.rel_tol
            )));
        }
        if !(self.init_noise > 0.0 && self.init_noise <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "init noise must lie in (0, 1], got {}",
                self.init_noise
            )));
        }
        if !(self.pseudocount.is_finite() && self.pseudocount >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "pseudocount must be non-negative, got {}",
                self.pseudocount
            )));
        }
        Ok(())
    }
}

/// Posterior distribution of one bag over all window anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMap {
    geometry: GridGeometry,
    q: Vec<f64>,
    degenerate: bool,
}

impl PosteriorMap {
    pub fn new(geometry: GridGeometry, q: Vec<f64>) -> Result<Self> {
        if q.len() != geometry.cells() {
            return Err(Error::DimensionMismatch(format!(
                "posterior has {} entries, grid has {} cells",
                q.len(),
                geometry.cells()
            )));
        }
        if q.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
            return Err(Error::InvalidArgument(
                "posterior entries must be non-negative".into(),
            ));
        }
        let sum: f64 = q.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("posterior sums to {sum}")));
        }
        Ok(Self {
            geometry,
            q,
            degenerate: false,
        })
    }

    pub fn uniform(geometry: GridGeometry) -> Self {
        let n = geometry.cells();
        Self {
            geometry,
            q: vec![1.0 / n as f64; n],
            degenerate: false,
        }
    }

    /// All mass on one anchor.
    pub fn point_mass(geometry: GridGeometry, anchor: usize) -> Self {
        let mut q = vec![0.0; geometry.cells()];
        q[anchor] = 1.0;
        Self {
            geometry,
            q,
            degenerate: false,
        }
    }

    fn from_scores(geometry: GridGeometry, scores: &[f64]) -> Self {
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut q: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
        let sum: f64 = q.iter().sum();
        q.iter_mut().for_each(|v| *v /= sum);
        Self {
            geometry,
            q,
            degenerate: false,
        }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    /// Set when the bag had no positive counts and the posterior fell back to uniform.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Most probable anchor; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &v) in self.q.iter().enumerate() {
            if v > self.q[best] {
                best = k;
            }
        }
        best
    }

    /// Entropy in nats, with `0 log 0 = 0`.
    pub fn entropy(&self) -> f64 {
        -self
            .q
            .iter()
            .filter(|&&v| v > 0.0)
            .map(|&v| v * v.ln())
            .sum::<f64>()
    }

    pub fn shifted(&self, offset: &[isize]) -> Self {
        let mut q = vec![0.0; self.q.len()];
        for (k, &v) in self.q.iter().enumerate() {
            q[self.geometry.shift(k, offset)] = v;
        }
        Self {
            geometry: self.geometry.clone(),
            q,
            degenerate: self.degenerate,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub grid: CountingGrid,
    /// Posteriors under the final grid, one per bag.
    pub posteriors: Vec<PosteriorMap>,
    /// Bound at each iteration, evaluated after its E-step.
    pub bound_trace: Vec<f64>,
    /// Bound of the final grid with the final posteriors.
    pub final_bound: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// State handed to a fit observer after each E-step.
pub struct IterationState<'a> {
    pub iteration: usize,
    pub bound: f64,
    pub grid: &'a CountingGrid,
    pub posteriors: &'a [PosteriorMap],
}

/// Flat grid plus seeded uniform noise: `pi[i,z] ∝ 1 + noise * u`.
pub fn init_grid(
    geometry: GridGeometry,
    vocab_size: usize,
    seed: u64,
    init_noise: f64,
) -> CountingGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = geometry.cells() * vocab_size;
    let weights = (0..len)
        .map(|_| 1.0 + init_noise * rng.gen::<f64>())
        .collect();
    CountingGrid::from_weights(
        GridField::from_values(geometry, vocab_size, weights).expect("consistent dimensions"),
    )
}

/// Exact posterior over anchors for one bag.
pub fn e_step(histograms: &Histograms, bag: &Bag) -> Result<PosteriorMap> {
    Ok(posterior_and_bound(histograms, bag)?.0)
}

/// Posterior for the bag plus its contribution to the bound.
fn posterior_and_bound(histograms: &Histograms, bag: &Bag) -> Result<(PosteriorMap, f64)> {
    let geometry = histograms.geometry().clone();
    if bag.is_degenerate() {
        bag.check_vocab(histograms.vocab_size())?;
        let mut q = PosteriorMap::uniform(geometry);
        q.degenerate = true;
        let bound = q.entropy();
        return Ok((q, bound));
    }
    let scores = histograms.scores(bag)?;
    let q = PosteriorMap::from_scores(geometry, &scores);
    Ok((q.clone(), bag_bound(&q, &scores)))
}

fn bag_bound(q: &PosteriorMap, scores: &[f64]) -> f64 {
    let expected: f64 =
        q.q.iter()
            .zip(scores)
            .filter(|(&p, _)| p > 0.0)
            .map(|(&p, &s)| p * s)
            .sum();
    q.entropy() + expected
}

fn expectation(histograms: &Histograms, bags: &[Bag]) -> Result<(Vec<PosteriorMap>, f64)> {
    let results: Vec<(PosteriorMap, f64)> = bags
        .par_iter()
        .map(|bag| posterior_and_bound(histograms, bag))
        .collect::<Result<_>>()?;
    let bound = results.iter().map(|(_, b)| b).sum();
    Ok((results.into_iter().map(|(q, _)| q).collect(), bound))
}

/// Variational bound: posterior entropy plus expected log-likelihood, summed over bags.
pub fn variational_bound(
    histograms: &Histograms,
    bags: &[Bag],
    posteriors: &[PosteriorMap],
) -> Result<f64> {
    check_aligned(histograms.geometry(), bags, posteriors)?;
    let mut total = 0.0;
    for (bag, q) in bags.iter().zip(posteriors) {
        let scores = histograms.scores(bag)?;
        total += bag_bound(q, &scores);
    }
    Ok(total)
}

/// `log p(bag)` under a uniform prior over anchors.
pub fn log_marginal(histograms: &Histograms, bag: &Bag) -> Result<f64> {
    let scores = histograms.scores(bag)?;
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = scores.iter().map(|&s| (s - max).exp()).sum();
    Ok(max + sum.ln() - (scores.len() as f64).ln())
}

fn check_aligned(geometry: &GridGeometry, bags: &[Bag], posteriors: &[PosteriorMap]) -> Result<()> {
    if bags.len() != posteriors.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} bags but {} posteriors",
            bags.len(),
            posteriors.len()
        )));
    }
    if let Some(q) = posteriors.iter().find(|q| q.geometry() != geometry) {
        return Err(Error::DimensionMismatch(format!(
            "posterior geometry {:?} does not match grid {:?}",
            q.geometry(),
            geometry
        )));
    }
    Ok(())
}

/// Re-estimate the grid from the posteriors. `histograms` must belong to `grid`.
pub fn m_step(
    grid: &CountingGrid,
    histograms: &Histograms,
    bags: &[Bag],
    posteriors: &[PosteriorMap],
    pseudocount: f64,
) -> Result<CountingGrid> {
    let geometry = grid.geometry();
    let vocab = grid.vocab_size();
    check_aligned(geometry, bags, posteriors)?;
    for bag in bags {
        bag.check_vocab(vocab)?;
    }

    // phi[k,z] = sum_t c_z^t q_t[k] / h[k,z]; parallel over cells so the
    // summation order over bags is fixed.
    let h = histograms.field().values();
    let mut phi = vec![0.0; geometry.cells() * vocab];
    phi.par_chunks_mut(CELL_CHUNK * vocab)
        .enumerate()
        .for_each(|(chunk, out)| {
            let first = chunk * CELL_CHUNK;
            for (bag, q) in bags.iter().zip(posteriors) {
                for (local, row) in out.chunks_mut(vocab).enumerate() {
                    let qk = q.q[first + local];
                    if qk == 0.0 {
                        continue;
                    }
                    for &(z, c) in bag.entries() {
                        row[z] += c * qk;
                    }
                }
            }
            let h = &h[first * vocab..first * vocab + out.len()];
            out.iter_mut().zip(h).for_each(|(v, &hv)| *v /= hv);
        });

    let phi = GridField::from_values(geometry.clone(), vocab, phi)?;
    let mut weights = window_sum(&phi, Direction::Reverse);
    weights
        .values_mut()
        .iter_mut()
        .zip(grid.pi().values())
        .for_each(|(u, &p)| *u = p * *u + pseudocount);
    for cell in 0..geometry.cells() {
        normalize_row(weights.row_mut(cell));
    }
    CountingGrid::new(weights)
}

fn check_training_bags(bags: &[Bag], vocab: usize) -> Result<()> {
    if bags.is_empty() {
        return Err(Error::InvalidArgument("no bags to train on".into()));
    }
    for (index, bag) in bags.iter().enumerate() {
        bag.check_vocab(vocab)?;
        if bag.is_degenerate() {
            return Err(Error::EmptyBag { index });
        }
    }
    Ok(())
}

/// Train a grid from a seeded noisy initialization.
pub fn fit(
    bags: &[Bag],
    geometry: GridGeometry,
    vocab_size: usize,
    config: &TrainConfig,
) -> Result<FitResult> {
    config.validate()?;
    let grid = init_grid(geometry, vocab_size, config.seed, config.init_noise);
    fit_from(bags, grid, config)
}

/// Train starting from the given grid.
pub fn fit_from(bags: &[Bag], grid: CountingGrid, config: &TrainConfig) -> Result<FitResult> {
    fit_with_observer(bags, grid, config, |_| {})
}

/// Train starting from the given grid, calling `observer` after every E-step.
pub fn fit_with_observer<F>(
    bags: &[Bag],
    mut grid: CountingGrid,
    config: &TrainConfig,
    mut observer: F,
) -> Result<FitResult>
where
    F: FnMut(&IterationState<'_>),
{
    config.validate()?;
    check_training_bags(bags, grid.vocab_size())?;

    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iters {
        let histograms = Histograms::new(&grid);
        let (posteriors, bound) = expectation(&histograms, bags)?;
        observer(&IterationState {
            iteration: iterations,
            bound,
            grid: &grid,
            posteriors: &posteriors,
        });
        grid = m_step(&grid, &histograms, bags, &posteriors, config.pseudocount)?;
        iterations += 1;
        if let Some(&previous) = trace.last() {
            let change = (bound - previous).abs() / previous.abs().max(f64::MIN_POSITIVE);
            trace.push(bound);
            if change < config.rel_tol {
                converged = true;
                break;
            }
        } else {
            trace.push(bound);
        }
    }

    let histograms = Histograms::new(&grid);
    let (posteriors, final_bound) = expectation(&histograms, bags)?;
    Ok(FitResult {
        grid,
        posteriors,
        bound_trace: trace,
        final_bound,
        iterations,
        converged,
    })
}

/// Check that a bound trace never drops by more than `rel_slack * |B|`.
pub fn check_bound_trace(trace: &[f64], rel_slack: f64) -> Result<()> {
    for (i, pair) in trace.windows(2).enumerate() {
        let (previous, current) = (pair[0], pair[1]);
        if current < previous - rel_slack * previous.abs() {
            return Err(Error::BoundDecreased {
                iteration: i + 1,
                previous,
                current,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::compute_histograms;

    fn geom(e: &[usize], w: &[usize]) -> GridGeometry {
        GridGeometry::new(e.to_vec(), w.to_vec()).unwrap()
    }

    fn toy_bags() -> Vec<Bag> {
        vec![
            Bag::new(0, [(0, 3.0), (1, 1.0)]).unwrap(),
            Bag::new(1, [(1, 2.0), (2, 2.0)]).unwrap(),
            Bag::new(2, [(2, 4.0)]).unwrap(),
            Bag::new(3, [(0, 1.0), (2, 1.0)]).unwrap(),
        ]
    }

    #[test]
    fn init_is_deterministic_and_seeded() {
        let g = geom(&[4, 4], &[2, 2]);
        let a = init_grid(g.clone(), 5, 7, 0.1);
        let b = init_grid(g.clone(), 5, 7, 0.1);
        let c = init_grid(g.clone(), 5, 8, 0.1);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let flat = init_grid(g, 5, 7, 0.0);
        assert!(flat.pi().values().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn uniform_histograms_give_uniform_posterior() {
        let g = geom(&[3, 2], &[2, 1]);
        let h = Histograms::new(&CountingGrid::uniform(g, 4));
        let q = e_step(&h, &Bag::new(0, [(1, 3.0)]).unwrap()).unwrap();
        assert!(q.q().iter().all(|&v| (v - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn two_anchor_posterior() {
        let g = geom(&[2], &[1]);
        let h = GridField::from_values(g, 2, vec![0.9, 0.1, 0.1, 0.9]).unwrap();
        let q = e_step(
            &Histograms::from_field(h),
            &Bag::new(0, [(0, 1.0)]).unwrap(),
        )
        .unwrap();
        assert!((q.q()[0] - 0.9).abs() < 1e-15);
        assert!((q.q()[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn scaling_counts_sharpens() {
        let grid = init_grid(geom(&[4, 3], &[2, 2]), 3, 1, 0.5);
        let h = Histograms::new(&grid);
        let bag = Bag::new(0, [(0, 2.0), (2, 1.0)]).unwrap();
        let q1 = e_step(&h, &bag).unwrap();
        let q10 = e_step(&h, &bag.scaled(10.0)).unwrap();
        assert_eq!(q1.argmax(), q10.argmax());
        assert!(q10.entropy() < q1.entropy());
    }

    #[test]
    fn degenerate_bag_is_flagged_uniform() {
        let h = Histograms::new(&CountingGrid::uniform(geom(&[2, 2], &[1, 1]), 3));
        let q = e_step(&h, &Bag::new(0, [(1, 0.0)]).unwrap()).unwrap();
        assert!(q.is_degenerate());
        assert!(q.q().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn bound_of_point_mass_is_log_likelihood() {
        let grid = init_grid(geom(&[3, 3], &[2, 2]), 3, 2, 0.5);
        let h = Histograms::new(&grid);
        let bag = Bag::new(0, [(0, 2.0), (1, 1.0)]).unwrap();
        let k = 4;
        let q = PosteriorMap::point_mass(grid.geometry().clone(), k);
        let b = variational_bound(&h, std::slice::from_ref(&bag), &[q]).unwrap();
        let ll = crate::grid::bag_log_likelihood(&bag, h.field(), k).unwrap();
        assert!((b - ll).abs() < 1e-12);
    }

    #[test]
    fn bound_after_e_step_is_log_sum_exp() {
        let grid = init_grid(geom(&[4, 4], &[2, 3]), 4, 9, 1.0);
        let h = Histograms::new(&grid);
        let bags = toy_bags();
        let posts: Vec<_> = bags.iter().map(|b| e_step(&h, b).unwrap()).collect();
        let bound = variational_bound(&h, &bags, &posts).unwrap();
        // Independent route: log-sum-exp of per-anchor log-likelihoods.
        let mut direct = 0.0;
        for bag in &bags {
            let s: Vec<f64> = (0..16)
                .map(|k| crate::grid::bag_log_likelihood(bag, h.field(), k).unwrap())
                .collect();
            let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            direct += m + s.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        }
        assert!((bound - direct).abs() < 1e-9, "{bound} vs {direct}");
    }

    #[test]
    fn uniform_histogram_bound() {
        let g = geom(&[2, 2], &[1, 2]);
        let h = Histograms::new(&CountingGrid::uniform(g.clone(), 4));
        let bag = Bag::new(0, [(0, 2.0), (3, 1.0)]).unwrap();
        let q = PosteriorMap::new(g.clone(), vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let b =
            variational_bound(&h, std::slice::from_ref(&bag), std::slice::from_ref(&q)).unwrap();
        assert!((b - (q.entropy() + 3.0 * 0.25f64.ln())).abs() < 1e-12);
        let bu = variational_bound(&h, &[bag], &[PosteriorMap::uniform(g)]).unwrap();
        assert!(bu > b);
    }

    #[test]
    fn m_step_keeps_rows_normalized() {
        let grid = init_grid(geom(&[3, 4], &[2, 2]), 3, 3, 0.3);
        let h = Histograms::new(&grid);
        let bags = toy_bags();
        let posts: Vec<_> = bags.iter().map(|b| e_step(&h, b).unwrap()).collect();
        let next = m_step(&grid, &h, &bags, &posts, 0.0).unwrap();
        for c in 0..12 {
            assert!((next.pi().row(c).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(m_step(&grid, &h, &bags[..2], &posts, 0.0).is_err());
    }

    #[test]
    fn m_step_floor_with_unreached_cells() {
        // Point mass at anchor 0 with a unit window leaves other cells unreached.
        let g = geom(&[3], &[1]);
        let mut w = vec![1.0; 9];
        w[0] = 1e-12;
        let grid = CountingGrid::from_weights(GridField::from_values(g.clone(), 3, w).unwrap());
        let h = Histograms::new(&grid);
        let bags = vec![Bag::new(0, [(1, 2.0)]).unwrap()];
        let posts = vec![PosteriorMap::point_mass(g, 0)];
        let next = m_step(&grid, &h, &bags, &posts, 0.0).unwrap();
        for c in 0..3 {
            let row = next.pi().row(c);
            assert!(row.iter().all(|&v| v >= crate::grid::PROB_FLOOR));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_window_m_step_is_mixture_update() {
        let g = geom(&[2, 2], &[1, 1]);
        let grid = init_grid(g, 3, 4, 0.8);
        let h = Histograms::new(&grid);
        let bags = toy_bags();
        let posts: Vec<_> = bags.iter().map(|b| e_step(&h, b).unwrap()).collect();
        let next = m_step(&grid, &h, &bags, &posts, 0.0).unwrap();
        for k in 0..4 {
            let mut row = [0.0; 3];
            for (bag, q) in bags.iter().zip(&posts) {
                for &(z, c) in bag.entries() {
                    row[z] += q.q()[k] * c;
                }
            }
            let s: f64 = row.iter().sum();
            for (z, r) in row.iter().enumerate() {
                assert!((next.pi().get(k, z) - r / s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_iterations_returns_initial_grid() {
        let g = geom(&[3, 3], &[2, 2]);
        let cfg = TrainConfig {
            max_iters: 0,
            ..TrainConfig::default()
        };
        let res = fit(&toy_bags(), g.clone(), 3, &cfg).unwrap();
        let init = init_grid(g, 3, cfg.seed, cfg.init_noise);
        assert_eq!(res.grid, init);
        assert!(res.bound_trace.is_empty());
        let h = Histograms::new(&init);
        assert_eq!(res.posteriors[1], e_step(&h, &toy_bags()[1]).unwrap());
    }

    #[test]
    fn fit_rejects_bad_input() {
        let g = geom(&[3], &[1]);
        let cfg = TrainConfig::default();
        assert!(fit(&[], g.clone(), 3, &cfg).is_err());
        let empty = vec![Bag::new(0, []).unwrap()];
        assert!(matches!(
            fit(&empty, g.clone(), 3, &cfg),
            Err(Error::EmptyBag { index: 0 })
        ));
        assert!(fit(&toy_bags(), g.clone(), 2, &cfg).is_err());
        let bad = TrainConfig {
            init_noise: 0.0,
            ..cfg
        };
        assert!(fit(&toy_bags(), g, 3, &bad).is_err());
    }

    #[test]
    fn histograms_of_fitted_grid_are_distributions() {
        let res = fit(&toy_bags(), geom(&[4], &[2]), 3, &TrainConfig::default()).unwrap();
        let h = compute_histograms(&res.grid);
        for k in 0..4 {
            assert!((h.row(k).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        check_bound_trace(&res.bound_trace, 1e-6).unwrap();
    }

    #[test]
    fn trace_check_reports_drop() {
        assert!(check_bound_trace(&[-10.0, -9.0, -9.0], 1e-9).is_ok());
        let err = check_bound_trace(&[-10.0, -9.0, -9.5], 1e-9).unwrap_err();
        assert!(matches!(err, Error::BoundDecreased { iteration: 2, .. }));
    }
}
