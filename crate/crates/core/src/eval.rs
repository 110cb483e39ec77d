//! Nearest-anchor classification, the seen/unseen bias sweep, group accuracy
//! metrics and tangent-space PCA.

use std::collections::{BTreeMap, HashSet};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decompose::Decomposition;
use crate::error::{Error, Result};
use crate::linalg::{norm, RowMatrix, CHUNK_ROWS};
use crate::manifold::{Geometry, ManifoldPoint, TangentVector};
use crate::noise::Anchors;
use crate::space::{CompositionSpace, PrimitiveId};

pub const UNIFORM_GRID_POINTS: usize = 201;

/// Candidate labels with one anchor embedding each, kept sorted by label
/// names so that the first maximum is the lexicographically smallest.
#[derive(Clone, Debug)]
pub struct ClassifierBank {
    geometry: Geometry,
    keys: Vec<usize>,
    names: Vec<Vec<String>>,
    anchors: RowMatrix,
}

impl ClassifierBank {
    /// `entries` holds `(key, label names, anchor)`.
    pub fn new(geometry: Geometry, mut entries: Vec<(usize, Vec<String>, Vec<f64>)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyInput("classifier bank has no candidates".into()));
        }
        entries.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)));
        let mut anchors = RowMatrix::with_capacity(entries.len(), geometry.coord_len());
        let mut keys = Vec::with_capacity(entries.len());
        let mut names = Vec::with_capacity(entries.len());
        let mut seen = HashSet::new();
        for (k, n, a) in entries {
            if !seen.insert(k) {
                return Err(Error::Config(format!("candidate {k} listed twice")));
            }
            geometry.check_point(&a)?;
            anchors.push(&a)?;
            keys.push(k);
            names.push(n);
        }
        Ok(Self {
            geometry,
            keys,
            names,
            anchors,
        })
    }

    /// Composed embeddings of the candidate tuples.
    pub fn from_decomposition(dec: &Decomposition, candidates: &[usize]) -> Result<Self> {
        let rows = dec.compose_all(candidates)?;
        let entries = candidates
            .iter()
            .zip(rows.iter())
            .map(|(&t, r)| (t, dec.space.tuple_names(t), r.to_vec()))
            .collect();
        Self::new(dec.geometry, entries)
    }

    /// `Exp_mu(v_p)` for every primitive of one factor; keys are the
    /// primitive indices.
    pub fn primitives_from_decomposition(dec: &Decomposition, factor: usize) -> Result<Self> {
        if factor >= dec.space.num_factors() {
            return Err(Error::Config(format!("no factor {factor}")));
        }
        let entries = (0..dec.space.factor_size(factor))
            .map(|index| {
                let p = PrimitiveId { factor, index };
                let u = dec.compose_scaled(&[(p, 1.0)])?;
                Ok((index, vec![dec.space.primitive_name(p).to_string()], u.coords))
            })
            .collect::<Result<_>>()?;
        Self::new(dec.geometry, entries)
    }

    pub fn from_anchors(anchors: &Anchors, space: &CompositionSpace, candidates: &[usize]) -> Result<Self> {
        let entries = candidates
            .iter()
            .map(|&t| Ok((t, space.tuple_names(t), anchors.for_tuple(space, t)?.to_vec())))
            .collect::<Result<_>>()?;
        Self::new(*anchors.geometry(), entries)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Candidate keys in bank order.
    pub fn keys(&self) -> &[usize] {
        &self.keys
    }

    pub fn names(&self) -> &[Vec<String>] {
        &self.names
    }

    pub fn anchor(&self, i: usize) -> ManifoldPoint {
        ManifoldPoint {
            coords: self.anchors.row(i).to_vec(),
            geometry: self.geometry,
        }
    }

    /// Query-by-candidate score matrix, columns in bank order.
    pub fn scores(&self, queries: &RowMatrix) -> Result<RowMatrix> {
        if queries.width() != self.geometry.coord_len() {
            return Err(Error::Dimension {
                expected: self.geometry.coord_len(),
                actual: queries.width(),
            });
        }
        let c = self.len();
        let w = queries.width();
        let mut out = RowMatrix::zeros(queries.len(), c);
        let g = &self.geometry;
        let anchors = &self.anchors;
        out.as_mut_slice()
            .par_chunks_mut(CHUNK_ROWS * c)
            .zip(queries.as_slice().par_chunks(CHUNK_ROWS * w))
            .for_each(|(dst, src)| {
                for (drow, q) in dst.chunks_exact_mut(c).zip(src.chunks_exact(w)) {
                    for (j, a) in anchors.iter().enumerate() {
                        drow[j] = g.similarity(q, a);
                    }
                }
            });
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Predicted candidate key per query.
    pub labels: Vec<usize>,
    /// Position of the prediction within the bank.
    pub positions: Vec<usize>,
    /// Raw scores without the unseen bias.
    pub scores: RowMatrix,
}

/// Best seen and best unseen candidate of one query.
#[derive(Clone, Copy, Debug)]
struct BestPair {
    seen: Option<(usize, f64)>,
    unseen: Option<(usize, f64)>,
}

fn best_pair(row: &[f64], unseen: &[bool]) -> BestPair {
    let mut seen_best: Option<(usize, f64)> = None;
    let mut unseen_best: Option<(usize, f64)> = None;
    for (j, (&s, &u)) in row.iter().zip(unseen).enumerate() {
        let slot = if u { &mut unseen_best } else { &mut seen_best };
        match slot {
            Some((_, b)) if *b >= s => {}
            _ => *slot = Some((j, s)),
        }
    }
    BestPair {
        seen: seen_best,
        unseen: unseen_best,
    }
}

/// Winner at a given unseen bias. Bank order breaks exact ties. Infinite
/// biases restrict the choice to one side when that side is nonempty.
fn pick(p: &BestPair, bias: f64) -> usize {
    match (p.seen, p.unseen) {
        (Some((js, _)), None) => js,
        (None, Some((ju, _))) => ju,
        (Some((js, ss)), Some((ju, su))) => {
            if bias == f64::INFINITY {
                return ju;
            }
            if bias == f64::NEG_INFINITY {
                return js;
            }
            let biased = su + bias;
            if biased > ss || (biased == ss && ju < js) {
                ju
            } else {
                js
            }
        }
        (None, None) => unreachable!("bank is nonempty"),
    }
}

fn unseen_mask(bank: &ClassifierBank, seen: &[usize]) -> Vec<bool> {
    let s: HashSet<usize> = seen.iter().copied().collect();
    bank.keys.iter().map(|k| !s.contains(k)).collect()
}

fn best_pairs(scores: &RowMatrix, mask: &[bool]) -> Vec<BestPair> {
    (0..scores.len())
        .into_par_iter()
        .map(|i| best_pair(scores.row(i), mask))
        .collect()
}

/// Argmax of `score + unseen_bias * [candidate not in seen]`.
pub fn predict(bank: &ClassifierBank, queries: &RowMatrix, unseen_bias: f64, seen: &[usize]) -> Result<Prediction> {
    if bank.is_empty() {
        return Err(Error::EmptyInput("classifier bank has no candidates".into()));
    }
    let scores = bank.scores(queries)?;
    let mask = unseen_mask(bank, seen);
    let positions: Vec<usize> = best_pairs(&scores, &mask).iter().map(|p| pick(p, unseen_bias)).collect();
    Ok(Prediction {
        labels: positions.iter().map(|&j| bank.keys[j]).collect(),
        positions,
        scores,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum BiasGrid {
    /// Every distinct best-seen minus best-unseen gap of the queries, the
    /// midpoints between consecutive gaps and both infinities.
    Exact,
    /// Evenly spaced over the observed gap range, plus both infinities.
    Uniform(usize),
    Explicit(Vec<f64>),
}

impl BiasGrid {
    pub fn uniform() -> Self {
        BiasGrid::Uniform(UNIFORM_GRID_POINTS)
    }
}

fn gaps(pairs: &[BestPair]) -> Vec<f64> {
    let mut d: Vec<f64> = pairs
        .iter()
        .filter_map(|p| match (p.seen, p.unseen) {
            (Some((_, s)), Some((_, u))) => Some(s - u),
            _ => None,
        })
        .collect();
    d.sort_by(f64::total_cmp);
    d.dedup();
    d
}

fn resolve_grid(grid: &BiasGrid, pairs: &[BestPair]) -> Result<Vec<f64>> {
    let mut b = match grid {
        BiasGrid::Explicit(v) => {
            if v.is_empty() {
                return Err(Error::Config("bias grid is empty".into()));
            }
            if v.iter().any(|x| x.is_nan()) {
                return Err(Error::Config("bias grid contains NaN".into()));
            }
            v.clone()
        }
        BiasGrid::Exact => {
            let d = gaps(pairs);
            let mut b = Vec::with_capacity(2 * d.len() + 2);
            b.push(f64::NEG_INFINITY);
            for (i, &x) in d.iter().enumerate() {
                if i > 0 {
                    b.push(0.5 * (d[i - 1] + x));
                }
                b.push(x);
            }
            b.push(f64::INFINITY);
            b
        }
        BiasGrid::Uniform(n) => {
            if *n < 2 {
                return Err(Error::Config("uniform bias grid needs at least two points".into()));
            }
            let d = gaps(pairs);
            let mut b = vec![f64::NEG_INFINITY, f64::INFINITY];
            if let (Some(&lo), Some(&hi)) = (d.first(), d.last()) {
                for i in 0..*n {
                    b.push(lo + (hi - lo) * i as f64 / (*n - 1) as f64);
                }
            }
            b
        }
    };
    b.sort_by(f64::total_cmp);
    b.dedup();
    Ok(b)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub bias: f64,
    pub seen_acc: f64,
    pub unseen_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CzslReport {
    pub attr_acc: f64,
    pub obj_acc: f64,
    /// Accuracy over all queries at zero bias.
    pub accuracy: f64,
    pub best_seen: f64,
    pub best_unseen: f64,
    pub best_hm: f64,
    pub auc: f64,
    pub num_seen_queries: usize,
    pub num_unseen_queries: usize,
    pub curve: Vec<CurvePoint>,
    pub diagnostics: Vec<String>,
}

fn harmonic(s: f64, u: f64) -> f64 {
    if s + u == 0.0 {
        0.0
    } else {
        2.0 * s * u / (s + u)
    }
}

/// Area under the seen-unseen staircase: the Pareto-optimal curve points,
/// ordered by unseen accuracy, extended to zero unseen accuracy at the
/// highest seen accuracy, integrated with the trapezoid rule.
pub fn curve_auc(curve: &[CurvePoint]) -> f64 {
    let mut pts: Vec<(f64, f64)> = curve.iter().map(|c| (c.unseen_acc, c.seen_acc)).collect();
    if pts.is_empty() || pts.iter().any(|(u, s)| u.is_nan() || s.is_nan()) {
        return f64::NAN;
    }
    // descending unseen, then descending seen; keep points whose seen beats
    // everything with larger unseen accuracy
    pts.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)));
    let mut front: Vec<(f64, f64)> = Vec::new();
    for (u, s) in pts {
        if front.last().map_or(true, |&(_, fs)| s > fs) {
            front.push((u, s));
        }
    }
    front.reverse();
    if front[0].0 > 0.0 {
        front.insert(0, (0.0, front[0].1));
    }
    front
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1))
        .sum()
}

/// Seen/unseen evaluation over a bias sweep. Keys of `bank` are tuple
/// indices of `space`; `truth` holds the true tuple per query.
pub fn czsl_evaluate(
    bank: &ClassifierBank,
    space: &CompositionSpace,
    queries: &RowMatrix,
    truth: &[usize],
    seen: &[usize],
    grid: &BiasGrid,
) -> Result<CzslReport> {
    if truth.len() != queries.len() {
        return Err(Error::Alignment {
            labels: truth.len(),
            rows: queries.len(),
        });
    }
    if queries.is_empty() {
        return Err(Error::EmptyInput("no test queries".into()));
    }
    if let Some(&t) = truth.iter().find(|&&t| t >= space.len()) {
        return Err(Error::Config(format!("true label {t} outside the space")));
    }
    let scores = bank.scores(queries)?;
    let mask = unseen_mask(bank, seen);
    let pairs = best_pairs(&scores, &mask);
    let biases = resolve_grid(grid, &pairs)?;

    let seen_set: HashSet<usize> = seen.iter().copied().collect();
    let is_seen_query: Vec<bool> = truth.iter().map(|t| seen_set.contains(t)).collect();
    let n_seen = is_seen_query.iter().filter(|&&s| s).count();
    let n_unseen = truth.len() - n_seen;
    let mut diagnostics = Vec::new();
    if n_unseen == 0 {
        diagnostics.push("no test queries with an unseen label; unseen metrics are undefined".to_string());
    }
    if n_seen == 0 {
        diagnostics.push("no test queries with a seen label; seen metrics are undefined".to_string());
    }
    if !mask.iter().any(|&u| u) {
        diagnostics.push("no unseen candidates; the bias has no effect".to_string());
    }

    let frac = |hits: usize, n: usize| if n == 0 { f64::NAN } else { hits as f64 / n as f64 };
    let curve: Vec<CurvePoint> = biases
        .par_iter()
        .map(|&b| {
            let (mut hs, mut hu) = (0usize, 0usize);
            for (i, p) in pairs.iter().enumerate() {
                if bank.keys[pick(p, b)] == truth[i] {
                    if is_seen_query[i] {
                        hs += 1;
                    } else {
                        hu += 1;
                    }
                }
            }
            CurvePoint {
                bias: b,
                seen_acc: frac(hs, n_seen),
                unseen_acc: frac(hu, n_unseen),
            }
        })
        .collect();

    let last = space.num_factors() - 1;
    let (mut ha, mut ho, mut hall) = (0usize, 0usize, 0usize);
    for (i, p) in pairs.iter().enumerate() {
        let pred = bank.keys[pick(p, 0.0)];
        if pred == truth[i] {
            hall += 1;
        }
        if space.component(pred, 0) == space.component(truth[i], 0) {
            ha += 1;
        }
        if space.component(pred, last) == space.component(truth[i], last) {
            ho += 1;
        }
    }
    let n = truth.len() as f64;

    let max_of = |f: &dyn Fn(&CurvePoint) -> f64| curve.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let (best_seen, best_unseen, best_hm) = (
        if n_seen == 0 { f64::NAN } else { max_of(&|c| c.seen_acc) },
        if n_unseen == 0 { f64::NAN } else { max_of(&|c| c.unseen_acc) },
        if n_seen == 0 || n_unseen == 0 {
            f64::NAN
        } else {
            max_of(&|c| harmonic(c.seen_acc, c.unseen_acc))
        },
    );

    Ok(CzslReport {
        attr_acc: ha as f64 / n,
        obj_acc: ho as f64 / n,
        accuracy: hall as f64 / n,
        best_seen,
        best_unseen,
        best_hm,
        auc: curve_auc(&curve),
        num_seen_queries: n_seen,
        num_unseen_queries: n_unseen,
        curve,
        diagnostics,
    })
}

/// `100 * auc / baseline`.
pub fn auc_ratio(auc: f64, baseline_auc: f64) -> Result<f64> {
    if baseline_auc == 0.0 {
        return Err(Error::DivisionByZero("baseline AUC is zero".into()));
    }
    Ok(100.0 * auc / baseline_auc)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub worst_group: f64,
    /// Unweighted mean of the per-group accuracies.
    pub avg: f64,
    pub gap: f64,
    /// Accuracy over all grouped queries.
    pub sample_avg: f64,
    pub per_group: BTreeMap<String, f64>,
    pub group_sizes: BTreeMap<String, usize>,
    pub diagnostics: Vec<String>,
}

impl GroupReport {
    /// Builds a report from per-group `(correct, total)` counts.
    pub fn from_counts(counts: &BTreeMap<String, (usize, usize)>) -> Result<Self> {
        let mut per_group = BTreeMap::new();
        let mut group_sizes = BTreeMap::new();
        let mut diagnostics = Vec::new();
        let (mut hits, mut total) = (0usize, 0usize);
        for (g, &(h, n)) in counts {
            if n == 0 {
                diagnostics.push(format!("group {g:?} has no queries and is excluded"));
                continue;
            }
            per_group.insert(g.clone(), h as f64 / n as f64);
            group_sizes.insert(g.clone(), n);
            hits += h;
            total += n;
        }
        if per_group.is_empty() {
            return Err(Error::EmptyInput("no nonempty groups".into()));
        }
        let worst_group = per_group.values().cloned().fold(f64::INFINITY, f64::min);
        let avg = per_group.values().sum::<f64>() / per_group.len() as f64;
        Ok(Self {
            worst_group,
            avg,
            gap: avg - worst_group,
            sample_avg: hits as f64 / total as f64,
            per_group,
            group_sizes,
            diagnostics,
        })
    }
}

/// Per-group accuracy of bank predictions. Queries without a group are
/// skipped and counted in the diagnostics.
pub fn group_evaluate(
    bank: &ClassifierBank,
    queries: &RowMatrix,
    truth: &[usize],
    groups: &[Option<String>],
) -> Result<GroupReport> {
    if truth.len() != queries.len() || groups.len() != queries.len() {
        return Err(Error::Alignment {
            labels: truth.len().min(groups.len()),
            rows: queries.len(),
        });
    }
    let all: Vec<usize> = bank.keys.clone();
    let pred = predict(bank, queries, 0.0, &all)?;
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut ungrouped = 0usize;
    for (i, g) in groups.iter().enumerate() {
        let Some(g) = g else {
            ungrouped += 1;
            continue;
        };
        let e = counts.entry(g.clone()).or_default();
        e.1 += 1;
        if pred.labels[i] == truth[i] {
            e.0 += 1;
        }
    }
    let mut report = GroupReport::from_counts(&counts)?;
    if ungrouped > 0 {
        report
            .diagnostics
            .push(format!("{ungrouped} queries without a group were skipped"));
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaProjection {
    /// One row of `out_dim` coordinates per input vector.
    pub coords: RowMatrix,
    pub explained_variance: Vec<f64>,
    pub explained_ratio: Vec<f64>,
    pub rank: usize,
    pub diagnostics: Vec<String>,
}

/// Projects centered vectors onto their top `out_dim` principal axes. Axes
/// beyond the numerical rank are reported as zero columns.
pub fn pca_rows(vectors: &RowMatrix, out_dim: usize) -> Result<PcaProjection> {
    if out_dim == 0 {
        return Err(Error::Config("output dimension must be positive".into()));
    }
    if vectors.len() < out_dim + 1 {
        return Err(Error::EmptyInput(format!(
            "need at least {} vectors for a {out_dim}-dimensional projection, got {}",
            out_dim + 1,
            vectors.len()
        )));
    }
    let (n, w) = (vectors.len(), vectors.width());
    let mut mean = vec![0.0; w];
    for r in vectors.iter() {
        crate::linalg::axpy(1.0 / n as f64, r, &mut mean);
    }
    let x = DMatrix::from_fn(n, w, |i, j| vectors.row(i)[j] - mean[j]);
    let svd = x.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let smax = order.first().map_or(0.0, |&i| svd.singular_values[i]);
    // relative to the raw data as well, so rounding left by centering a
    // constant set does not count as variance
    let scale = smax.max(norm(vectors.as_slice()));
    let tol = scale * 1e-12 * (n.max(w) as f64);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol && s > 0.0).count();
    let total_var: f64 = svd.singular_values.iter().map(|s| s * s).sum::<f64>() / (n - 1) as f64;

    let mut coords = RowMatrix::zeros(n, out_dim);
    let mut explained_variance = Vec::with_capacity(out_dim);
    for (k, &idx) in order.iter().take(out_dim).enumerate() {
        let s = svd.singular_values[idx];
        if k >= rank {
            explained_variance.push(0.0);
            continue;
        }
        let mut axis: Vec<f64> = v_t.row(idx).iter().cloned().collect();
        let lead = axis
            .iter()
            .cloned()
            .fold(0.0f64, |m, a| if a.abs() > m.abs() { a } else { m });
        if lead < 0.0 {
            axis.iter_mut().for_each(|a| *a = -*a);
        }
        for i in 0..n {
            coords.row_mut(i)[k] = x.row(i).iter().zip(&axis).map(|(a, b)| a * b).sum();
        }
        explained_variance.push(s * s / (n - 1) as f64);
    }
    while explained_variance.len() < out_dim {
        explained_variance.push(0.0);
    }
    let explained_ratio = explained_variance
        .iter()
        .map(|v| if total_var > 0.0 { v / total_var } else { 0.0 })
        .collect();
    let mut diagnostics = Vec::new();
    if rank < out_dim {
        diagnostics.push(format!(
            "numerical rank {rank} is below the requested {out_dim} dimensions; extra axes are zero"
        ));
    }
    Ok(PcaProjection {
        coords,
        explained_variance,
        explained_ratio,
        rank,
        diagnostics,
    })
}

/// PCA of tangent vectors that share one base point.
pub fn pca_project(vectors: &[TangentVector], out_dim: usize) -> Result<PcaProjection> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::EmptyInput("no tangent vectors".into()))?;
    if vectors.iter().any(|v| v.base.coords != first.base.coords) {
        return Err(Error::Config("tangent vectors have different base points".into()));
    }
    let rows = RowMatrix::from_rows(&vectors.iter().map(|v| v.coords.as_slice()).collect::<Vec<_>>())?;
    pca_rows(&rows, out_dim)
}
