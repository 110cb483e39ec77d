//! Per-tuple sample weights: uniform, softmax over anchor similarities and
//! renormalized sigmoid scores, plus a grid search over the temperature.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decompose::{decompose_sparse, DecomposeConfig, Decomposition};
use crate::error::{Error, Result};
use crate::eval::{czsl_evaluate, group_evaluate, BiasGrid, ClassifierBank};
use crate::linalg::RowMatrix;
use crate::manifold::Geometry;
use crate::space::{CompositionSpace, LabeledEmbeddingSet};

pub const DEFAULT_SIGMOID_BIAS: f64 = -16.5;

pub const DEFAULT_TEMPERATURE_GRID: [f64; 9] = [0.005, 0.01, 0.02, 0.04, 0.07, 0.1, 0.2, 0.5, 1.0];

/// Per-tuple sums must be within this of one.
pub const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    Uniform,
    Softmax,
    Sigmoid,
}

impl NoiseMode {
    pub fn name(self) -> &'static str {
        match self {
            NoiseMode::Uniform => "uniform",
            NoiseMode::Softmax => "softmax",
            NoiseMode::Sigmoid => "sigmoid",
        }
    }
}

impl fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(NoiseMode::Uniform),
            "softmax" => Ok(NoiseMode::Softmax),
            "sigmoid" => Ok(NoiseMode::Sigmoid),
            other => Err(Error::Config(format!("unknown noise mode {other:?}"))),
        }
    }
}

/// Probability of each row of a labeled set, aligned with its rows.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel {
    pub scores: Vec<f64>,
    pub mode: NoiseMode,
    pub temperature: Option<f64>,
    pub bias: Option<f64>,
}

impl NoiseModel {
    /// `1 / k_z` for every row of tuple `z`.
    pub fn uniform(set: &LabeledEmbeddingSet) -> Self {
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for &l in set.labels() {
            *counts.entry(l).or_default() += 1;
        }
        Self {
            scores: set.labels().iter().map(|l| 1.0 / counts[l] as f64).collect(),
            mode: NoiseMode::Uniform,
            temperature: None,
            bias: None,
        }
    }

    /// Sum of scores per labeled tuple.
    pub fn tuple_sums(&self, set: &LabeledEmbeddingSet) -> HashMap<usize, f64> {
        let mut s: HashMap<usize, f64> = HashMap::new();
        for (&l, &p) in set.labels().iter().zip(&self.scores) {
            *s.entry(l).or_default() += p;
        }
        s
    }

    pub fn is_normalized(&self, set: &LabeledEmbeddingSet) -> bool {
        self.scores.len() == set.len()
            && self.scores.iter().all(|&p| p >= 0.0)
            && self
                .tuple_sums(set)
                .values()
                .all(|s| (s - 1.0).abs() <= NORMALIZATION_TOL)
    }
}

pub fn uniform_scores(set: &LabeledEmbeddingSet) -> NoiseModel {
    NoiseModel::uniform(set)
}

/// Reference embedding per tuple, keyed by primitive names so anchors built
/// against one space can serve a set labeled in another.
#[derive(Clone, Debug)]
pub struct Anchors {
    geometry: Geometry,
    index: HashMap<Vec<String>, usize>,
    rows: RowMatrix,
}

impl Anchors {
    pub fn new(geometry: Geometry) -> Self {
        Self {
            geometry,
            index: HashMap::new(),
            rows: RowMatrix::new(geometry.coord_len()),
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn insert(&mut self, names: Vec<String>, coords: &[f64]) -> Result<()> {
        self.geometry.check_point(coords)?;
        if self.index.contains_key(&names) {
            return Err(Error::Structure {
                message: format!("duplicate anchor for ({})", names.join(", ")),
                hint: "anchor files need exactly one row per tuple".into(),
            });
        }
        self.index.insert(names, self.rows.len());
        self.rows.push(coords)
    }

    /// One anchor per row of a labeled set.
    pub fn from_set(set: &LabeledEmbeddingSet) -> Result<Self> {
        let mut a = Self::new(set.geometry);
        for (i, &l) in set.labels().iter().enumerate() {
            a.insert(set.space.tuple_names(l), set.rows().row(i))?;
        }
        Ok(a)
    }

    /// Composed embeddings of every tuple of a decomposition's space.
    pub fn from_decomposition(dec: &Decomposition) -> Result<Self> {
        let all: Vec<usize> = (0..dec.space.len()).collect();
        let rows = dec.compose_all(&all)?;
        let mut a = Self::new(dec.geometry);
        for (t, r) in all.iter().zip(rows.iter()) {
            a.insert(dec.space.tuple_names(*t), r)?;
        }
        Ok(a)
    }

    pub fn get(&self, names: &[String]) -> Option<&[f64]> {
        self.index.get(names).map(|&i| self.rows.row(i))
    }

    pub fn for_tuple(&self, space: &CompositionSpace, tuple: usize) -> Result<&[f64]> {
        self.get(&space.tuple_names(tuple)).ok_or_else(|| Error::MissingAnchor {
            tuple: space.tuple_label(tuple),
        })
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Config(format!("temperature must be positive and finite, got {t}")));
    }
    Ok(())
}

/// Log-domain scores per row, normalized by a per-tuple softmax.
fn normalize_log_scores(
    set: &LabeledEmbeddingSet,
    anchors: &Anchors,
    log_score: impl Fn(f64) -> f64 + Sync,
) -> Result<Vec<f64>> {
    if anchors.geometry.coord_len() != set.geometry.coord_len() {
        return Err(Error::Dimension {
            expected: set.geometry.coord_len(),
            actual: anchors.geometry.coord_len(),
        });
    }
    let groups: Vec<(usize, Vec<usize>)> = set.groups().into_iter().collect();
    let per_tuple: Vec<Vec<(usize, f64)>> = groups
        .par_iter()
        .map(|(t, rows)| {
            let a = anchors.for_tuple(&set.space, *t)?;
            let logs: Vec<f64> = rows
                .iter()
                .map(|&r| log_score(set.geometry.similarity(set.rows().row(r), a)))
                .collect();
            let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
            let s: f64 = e.iter().sum();
            Ok(rows.iter().zip(e).map(|(&r, x)| (r, x / s)).collect())
        })
        .collect::<Result<_>>()?;
    let mut scores = vec![0.0; set.len()];
    for (r, p) in per_tuple.into_iter().flatten() {
        scores[r] = p;
    }
    Ok(scores)
}

/// `exp(sim / t)` normalized within each tuple.
pub fn softmax_scores(set: &LabeledEmbeddingSet, anchors: &Anchors, t: f64) -> Result<NoiseModel> {
    check_temperature(t)?;
    let scores = normalize_log_scores(set, anchors, |s| s / t)?;
    Ok(NoiseModel {
        scores,
        mode: NoiseMode::Softmax,
        temperature: Some(t),
        bias: None,
    })
}

/// `log sigmoid(x)` without overflow.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// `sigmoid(sim / t + b)` renormalized within each tuple.
pub fn sigmoid_scores(set: &LabeledEmbeddingSet, anchors: &Anchors, t: f64, b: f64) -> Result<NoiseModel> {
    check_temperature(t)?;
    if !b.is_finite() {
        return Err(Error::Config(format!("sigmoid bias must be finite, got {b}")));
    }
    let scores = normalize_log_scores(set, anchors, |s| log_sigmoid(s / t + b))?;
    Ok(NoiseModel {
        scores,
        mode: NoiseMode::Sigmoid,
        temperature: Some(t),
        bias: Some(b),
    })
}

/// Scores of the given mode; `t` and `b` are ignored where unused.
pub fn noise_for(mode: NoiseMode, set: &LabeledEmbeddingSet, anchors: Option<&Anchors>, t: f64, b: f64) -> Result<NoiseModel> {
    let need = || Error::Config(format!("{mode} noise requires anchors"));
    match mode {
        NoiseMode::Uniform => Ok(NoiseModel::uniform(set)),
        NoiseMode::Softmax => softmax_scores(set, anchors.ok_or_else(need)?, t),
        NoiseMode::Sigmoid => sigmoid_scores(set, anchors.ok_or_else(need)?, t, b),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TuneObjective {
    /// Seen/unseen AUC on the validation set. `None` scores against every
    /// tuple of the space.
    Auc { candidates: Option<Vec<usize>> },
    /// Worst-group accuracy of last-factor predictions; one optional group
    /// name per validation row.
    WorstGroup { groups: Vec<Option<String>> },
}

impl TuneObjective {
    pub fn name(&self) -> &'static str {
        match self {
            TuneObjective::Auc { .. } => "auc",
            TuneObjective::WorstGroup { .. } => "worst-group",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneConfig {
    pub mode: NoiseMode,
    pub bias: f64,
    pub decompose: DecomposeConfig,
    /// Also score uniform noise as a reference.
    pub uniform_baseline: bool,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            mode: NoiseMode::Softmax,
            bias: DEFAULT_SIGMOID_BIAS,
            decompose: DecomposeConfig::default(),
            uniform_baseline: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneEntry {
    pub temperature: f64,
    pub score: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best_t: f64,
    pub best_score: f64,
    pub objective: String,
    pub mode: NoiseMode,
    pub table: Vec<TuneEntry>,
    pub uniform_score: Option<f64>,
}

/// Decomposes `train` with the given noise and scores it on `val`.
pub fn evaluate_objective(
    train: &LabeledEmbeddingSet,
    val: &LabeledEmbeddingSet,
    noise: &NoiseModel,
    objective: &TuneObjective,
    cfg: &DecomposeConfig,
) -> Result<f64> {
    let dec = decompose_sparse(train, noise, cfg)?;
    let score = match objective {
        TuneObjective::Auc { candidates } => {
            let all: Vec<usize>;
            let cands = match candidates {
                Some(c) => c.as_slice(),
                None => {
                    all = (0..dec.space.len()).collect();
                    &all
                }
            };
            let bank = ClassifierBank::from_decomposition(&dec, cands)?;
            let report = czsl_evaluate(&bank, &dec.space, val.rows(), val.labels(), &dec.seen, &BiasGrid::Exact)?;
            report.auc
        }
        TuneObjective::WorstGroup { groups } => {
            let f = dec.space.num_factors() - 1;
            let bank = ClassifierBank::primitives_from_decomposition(&dec, f)?;
            let truth: Vec<usize> = val.labels().iter().map(|&t| dec.space.component(t, f)).collect();
            group_evaluate(&bank, val.rows(), &truth, groups)?.worst_group
        }
    };
    if score.is_nan() {
        return Err(Error::Tuning("objective is undefined on this validation set".into()));
    }
    Ok(score)
}

/// Grid search over the temperature. Failed grid points are kept in the
/// table and skipped; ties go to the smaller temperature.
pub fn tune_temperature(
    train: &LabeledEmbeddingSet,
    val: &LabeledEmbeddingSet,
    anchors: &Anchors,
    grid: &[f64],
    objective: &TuneObjective,
    cfg: &TuneConfig,
) -> Result<TuneResult> {
    if grid.is_empty() {
        return Err(Error::Config("temperature grid is empty".into()));
    }
    if cfg.mode == NoiseMode::Uniform {
        return Err(Error::Config("temperature tuning needs softmax or sigmoid noise".into()));
    }
    if val.space != train.space {
        return Err(Error::Config("train and validation sets use different composition spaces".into()));
    }
    if let TuneObjective::WorstGroup { groups } = objective {
        if groups.len() != val.len() {
            return Err(Error::Alignment {
                labels: groups.len(),
                rows: val.len(),
            });
        }
    }

    let table: Vec<TuneEntry> = grid
        .par_iter()
        .map(|&t| {
            let r = noise_for(cfg.mode, train, Some(anchors), t, cfg.bias)
                .and_then(|noise| evaluate_objective(train, val, &noise, objective, &cfg.decompose));
            match r {
                Ok(s) => TuneEntry {
                    temperature: t,
                    score: Some(s),
                    error: None,
                },
                Err(e) => TuneEntry {
                    temperature: t,
                    score: None,
                    error: Some(format!("{}: {e}", e.code())),
                },
            }
        })
        .collect();

    let mut best: Option<(f64, f64)> = None;
    for e in &table {
        if let Some(s) = e.score {
            best = match best {
                Some((bt, bs)) if bs > s || (bs == s && bt <= e.temperature) => Some((bt, bs)),
                _ => Some((e.temperature, s)),
            };
        }
    }
    let (best_t, best_score) = best.ok_or_else(|| {
        Error::Tuning(format!(
            "all {} grid points failed; first error: {}",
            table.len(),
            table[0].error.clone().unwrap_or_default()
        ))
    })?;

    let uniform_score = if cfg.uniform_baseline {
        evaluate_objective(train, val, &NoiseModel::uniform(train), objective, &cfg.decompose).ok()
    } else {
        None
    };

    Ok(TuneResult {
        best_t,
        best_score,
        objective: objective.name().to_string(),
        mode: cfg.mode,
        table,
        uniform_score,
    })
}
