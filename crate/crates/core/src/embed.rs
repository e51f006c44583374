//! Label embedding on a trained grid and nearest-region readout.
//!
//! Targets are spread over the grid with the same reverse window sum the
//! M-step uses for word counts: cell `i` collects the posterior mass of every
//! anchor whose window covers it, weighted by the bag's target.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bag::Bag;
use crate::em::{e_step, PosteriorMap};
use crate::error::{Error, Result};
use crate::geometry::{GridField, GridGeometry};
use crate::grid::{CountingGrid, Histograms};
use crate::window::{window_sum, Direction};

/// Smoothing weight of the global prior in zero-mass cells.
pub const DEFAULT_ALPHA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelKind {
    Discrete { classes: usize },
    Continuous,
}

impl LabelKind {
    fn channels(self) -> usize {
        match self {
            LabelKind::Discrete { classes } => classes,
            LabelKind::Continuous => 1,
        }
    }
}

/// One target per bag.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Discrete { labels: Vec<usize>, classes: usize },
    Continuous(Vec<f64>),
}

impl Targets {
    /// Discrete targets with the class count taken from the largest label.
    pub fn discrete(labels: Vec<usize>) -> Self {
        let classes = labels.iter().max().map_or(0, |&m| m + 1);
        Targets::Discrete { labels, classes }
    }

    pub fn len(&self) -> usize {
        match self {
            Targets::Discrete { labels, .. } => labels.len(),
            Targets::Continuous(values) => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> LabelKind {
        match self {
            Targets::Discrete { classes, .. } => LabelKind::Discrete { classes: *classes },
            Targets::Continuous(_) => LabelKind::Continuous,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Targets::Discrete { labels, classes } => {
                if let Some(&label) = labels.iter().find(|&&l| l >= *classes) {
                    return Err(Error::LabelOutOfRange {
                        label,
                        classes: *classes,
                    });
                }
            }
            Targets::Continuous(values) => {
                if let Some(v) = values.iter().find(|v| !v.is_finite()) {
                    return Err(Error::InvalidArgument(format!("non-finite target {v}")));
                }
            }
        }
        Ok(())
    }
}

/// Per-cell label distribution (discrete) or expected target (continuous).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelEmbedding {
    geometry: GridGeometry,
    kind: LabelKind,
    gamma: Vec<f64>,
    mass: Vec<f64>,
}

impl LabelEmbedding {
    pub fn from_parts(
        geometry: GridGeometry,
        kind: LabelKind,
        gamma: Vec<f64>,
        mass: Vec<f64>,
    ) -> Result<Self> {
        let cells = geometry.cells();
        if kind.channels() == 0 {
            return Err(Error::InvalidArgument(
                "discrete embedding needs at least one class".into(),
            ));
        }
        if gamma.len() != cells * kind.channels() || mass.len() != cells {
            return Err(Error::DimensionMismatch(format!(
                "embedding arrays have {} and {} entries for {} cells",
                gamma.len(),
                mass.len(),
                cells
            )));
        }
        Ok(Self {
            geometry,
            kind,
            gamma,
            mass,
        })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn kind(&self) -> LabelKind {
        self.kind
    }

    /// `cells x L` for discrete embeddings, `cells` for continuous ones.
    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn gamma_at(&self, cell: usize) -> &[f64] {
        let ch = self.kind.channels();
        &self.gamma[cell * ch..(cell + 1) * ch]
    }
}

/// Anchor-domain sums of posteriors, before spreading them over windows.
#[derive(Debug, Clone)]
struct Accumulator {
    geometry: GridGeometry,
    kind: LabelKind,
    /// `cells x (channels + 1)`: weighted sums per channel, then the plain posterior sum.
    sums: Vec<f64>,
    prior: Vec<f64>,
    count: f64,
}

impl Accumulator {
    fn new(geometry: GridGeometry, kind: LabelKind) -> Self {
        let ch = kind.channels() + 1;
        Self {
            sums: vec![0.0; geometry.cells() * ch],
            prior: vec![0.0; kind.channels()],
            count: 0.0,
            geometry,
            kind,
        }
    }

    fn add(&mut self, q: &PosteriorMap, targets: &Targets, t: usize, sign: f64) {
        let ch = self.kind.channels() + 1;
        let (channel, weight) = match targets {
            Targets::Discrete { labels, .. } => (labels[t], 1.0),
            Targets::Continuous(values) => (0, values[t]),
        };
        for (k, &qk) in q.q().iter().enumerate() {
            if qk != 0.0 {
                self.sums[k * ch + channel] += sign * weight * qk;
                self.sums[k * ch + ch - 1] += sign * qk;
            }
        }
        self.prior[channel] += sign * weight;
        self.count += sign;
    }

    fn finish(&self, alpha: f64) -> LabelEmbedding {
        let ch = self.kind.channels();
        let field = GridField::from_values(self.geometry.clone(), ch + 1, self.sums.clone())
            .expect("consistent dimensions");
        let spread = window_sum(&field, Direction::Reverse);
        let prior: Vec<f64> = self.prior.iter().map(|&p| p / self.count).collect();

        let cells = self.geometry.cells();
        let mut gamma = vec![0.0; cells * ch];
        let mut mass = vec![0.0; cells];
        for i in 0..cells {
            let row = spread.row(i);
            let m = row[ch];
            mass[i] = m;
            for l in 0..ch {
                gamma[i * ch + l] = (row[l] + alpha * prior[l]) / (m + alpha);
            }
        }
        LabelEmbedding {
            geometry: self.geometry.clone(),
            kind: self.kind,
            gamma,
            mass,
        }
    }
}

fn accumulate(posteriors: &[PosteriorMap], targets: &Targets) -> Result<Accumulator> {
    if posteriors.is_empty() {
        return Err(Error::InvalidArgument("no posteriors to embed".into()));
    }
    if posteriors.len() != targets.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} posteriors but {} targets",
            posteriors.len(),
            targets.len()
        )));
    }
    targets.validate()?;
    let kind = targets.kind();
    if kind.channels() == 0 {
        return Err(Error::InvalidArgument(
            "discrete targets need at least one class".into(),
        ));
    }
    let geometry = posteriors[0].geometry().clone();
    let mut acc = Accumulator::new(geometry.clone(), kind);
    for (t, q) in posteriors.iter().enumerate() {
        if q.geometry() != &geometry {
            return Err(Error::DimensionMismatch(
                "posteriors on different grids".into(),
            ));
        }
        acc.add(q, targets, t, 1.0);
    }
    Ok(acc)
}

/// Embed targets on the grid from training posteriors, smoothing toward the
/// global label frequency (or mean) with weight `alpha`.
pub fn embed(posteriors: &[PosteriorMap], targets: &Targets, alpha: f64) -> Result<LabelEmbedding> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    Ok(accumulate(posteriors, targets)?.finish(alpha))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    /// Winning class and the score of every class.
    Label {
        label: usize,
        scores: Vec<f64>,
    },
    Value(f64),
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prediction::Label { label, .. } => write!(f, "{label}"),
            Prediction::Value(v) => write!(f, "{v}"),
        }
    }
}

/// Probability of each cell being covered by the bag's window: `(1/|W|) sum_{k: i in W_k} q[k]`.
pub fn cell_occupancy(q: &PosteriorMap) -> Vec<f64> {
    let field = GridField::from_values(q.geometry().clone(), 1, q.q().to_vec())
        .expect("consistent dimensions");
    let volume = q.geometry().window_volume() as f64;
    window_sum(&field, Direction::Reverse)
        .into_values()
        .into_iter()
        .map(|v| v / volume)
        .collect()
}

/// Read the embedding out under the cell occupancy of `q`.
pub fn predict_from_posterior(embedding: &LabelEmbedding, q: &PosteriorMap) -> Result<Prediction> {
    if q.geometry() != embedding.geometry() {
        return Err(Error::DimensionMismatch(
            "posterior and embedding grids differ".into(),
        ));
    }
    let p = cell_occupancy(q);
    Ok(readout(embedding, &p))
}

fn readout(embedding: &LabelEmbedding, p: &[f64]) -> Prediction {
    let ch = embedding.kind.channels();
    let mut scores = vec![0.0; ch];
    for (i, &pi) in p.iter().enumerate() {
        if pi != 0.0 {
            for (s, &g) in scores.iter_mut().zip(embedding.gamma_at(i)) {
                *s += pi * g;
            }
        }
    }
    match embedding.kind {
        LabelKind::Continuous => Prediction::Value(scores[0]),
        LabelKind::Discrete { .. } => {
            let mut label = 0;
            for (l, &s) in scores.iter().enumerate() {
                if s > scores[label] {
                    label = l;
                }
            }
            Prediction::Label { label, scores }
        }
    }
}

/// Infer the bag's posterior under `histograms` and read out the embedding.
pub fn predict_with(
    histograms: &Histograms,
    embedding: &LabelEmbedding,
    bag: &Bag,
) -> Result<Prediction> {
    if histograms.geometry() != embedding.geometry() {
        return Err(Error::DimensionMismatch(
            "grid and embedding geometries differ".into(),
        ));
    }
    let q = e_step(histograms, bag)?;
    predict_from_posterior(embedding, &q)
}

pub fn predict(grid: &CountingGrid, embedding: &LabelEmbedding, bag: &Bag) -> Result<Prediction> {
    predict_with(&Histograms::new(grid), embedding, bag)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Accuracy,
    Pearson,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Pearson => "pearson_rho",
        }
    }
}

/// Outcome of a leave-one-out run. `value` is `None` when the metric is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: Metric,
    pub value: Option<f64>,
    pub folds: usize,
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "metric={}", self.metric.name())?;
        match self.value {
            Some(v) => writeln!(f, "value={v}")?,
            None => writeln!(f, "value=undefined")?,
        }
        writeln!(f, "folds={}", self.folds)
    }
}

impl FromStr for MetricReport {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: String| Error::InvalidArgument(format!("metric report: {msg}"));
        let (mut metric, mut value, mut folds) = (None, None, None);
        for line in s.lines().filter(|l| !l.trim().is_empty()) {
            let (key, val) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got {line:?}")))?;
            match key {
                "metric" => {
                    metric = Some(match val {
                        "accuracy" => Metric::Accuracy,
                        "pearson_rho" => Metric::Pearson,
                        other => return Err(bad(format!("unknown metric {other:?}"))),
                    })
                }
                "value" => {
                    value = Some(if val == "undefined" {
                        None
                    } else {
                        Some(val.parse::<f64>().map_err(|e| bad(e.to_string()))?)
                    })
                }
                "folds" => folds = Some(val.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        Ok(MetricReport {
            metric: metric.ok_or_else(|| bad("missing metric".into()))?,
            value: value.ok_or_else(|| bad("missing value".into()))?,
            folds: folds.ok_or_else(|| bad("missing folds".into()))?,
        })
    }
}

/// Leave-one-out evaluation with predictions kept for inspection.
#[derive(Debug, Clone)]
pub struct LooOutcome {
    pub report: MetricReport,
    pub predictions: Vec<Prediction>,
}

/// For every bag, embed the targets of all other bags and predict the held-out
/// bag from its existing posterior. The grid itself is not refit.
pub fn loo_evaluate(
    grid: &CountingGrid,
    posteriors: &[PosteriorMap],
    targets: &Targets,
    alpha: f64,
) -> Result<LooOutcome> {
    if posteriors.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "leave-one-out needs at least 2 bags, got {}",
            posteriors.len()
        )));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if posteriors[0].geometry() != grid.geometry() {
        return Err(Error::DimensionMismatch(
            "posteriors do not belong to the grid".into(),
        ));
    }
    let full = accumulate(posteriors, targets)?;

    let predictions: Vec<Prediction> = (0..posteriors.len())
        .into_par_iter()
        .map(|t| {
            let mut acc = full.clone();
            acc.add(&posteriors[t], targets, t, -1.0);
            let embedding = acc.finish(alpha);
            readout(&embedding, &cell_occupancy(&posteriors[t]))
        })
        .collect();

    let folds = predictions.len();
    let report = match targets {
        Targets::Discrete { labels, .. } => {
            let hits = predictions
                .iter()
                .zip(labels)
                .filter(|(p, &y)| matches!(p, Prediction::Label { label, .. } if *label == y))
                .count();
            MetricReport {
                metric: Metric::Accuracy,
                value: Some(hits as f64 / folds as f64),
                folds,
            }
        }
        Targets::Continuous(values) => {
            let predicted: Vec<f64> = predictions
                .iter()
                .map(|p| match p {
                    Prediction::Value(v) => *v,
                    Prediction::Label { .. } => unreachable!("continuous embedding"),
                })
                .collect();
            MetricReport {
                metric: Metric::Pearson,
                value: pearson(&predicted, values),
                folds,
            }
        }
    };
    Ok(LooOutcome {
        report,
        predictions,
    })
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
