//! Closed-form decomposable approximations of labeled embedding sets.
//!
//! All three estimators share one path: a weighted intrinsic mean `mu`, one
//! denoised tangent vector per observed tuple (the noise-weighted sum of the
//! tuple's log maps) and one direction per primitive (the mean of the denoised
//! vectors of the observed tuples that contain it).

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::karcher::{intrinsic_mean, MeanConfig, MeanSummary};
use crate::linalg::{axpy, scale, RowMatrix};
use crate::manifold::{Geometry, ManifoldPoint, TangentVector};
use crate::noise::{NoiseMode, NoiseModel};
use crate::space::{CompositionSpace, LabeledEmbeddingSet, PrimitiveId};

/// Per-factor centering residuals must stay below this times the factor size.
pub const CENTERING_TOL: f64 = 1e-6;

/// Relative cutoff on singular values used by [`Decomposition::subspace_rank`].
pub const RANK_TOL: f64 = 1e-8;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecomposeConfig {
    pub mean: MeanConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Karcher iteration summary; absent for constructed decompositions.
    pub mean: Option<MeanSummary>,
    /// `|sum_{z_i} v_{z_i}|` for each factor.
    pub centering_residuals: Vec<f64>,
    /// Primitives whose direction comes from a single observed tuple.
    pub low_support: Vec<String>,
    pub num_rows: usize,
    pub num_seen: usize,
    pub dense: bool,
}

#[derive(Clone, Debug)]
pub struct Decomposition {
    pub geometry: Geometry,
    pub space: CompositionSpace,
    pub mu: ManifoldPoint,
    /// One row per primitive, ordered by factor then primitive index.
    pub directions: RowMatrix,
    /// Observed tuples, sorted.
    pub seen: Vec<usize>,
    /// Denoised tangent vector of each tuple in `seen`.
    pub denoised: RowMatrix,
    pub noise_mode: NoiseMode,
    pub temperature: Option<f64>,
    pub diagnostics: Diagnostics,
}

/// Per-tuple and total noise-weighted squared geodesic residuals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub per_tuple: BTreeMap<usize, f64>,
    pub weighted_total: f64,
}

/// Tuples of the set grouped with their rows and normalized noise scores.
struct Groups {
    tuples: Vec<usize>,
    rows: Vec<Vec<usize>>,
}

fn group_rows(set: &LabeledEmbeddingSet) -> Groups {
    let g = set.groups();
    let mut tuples = Vec::with_capacity(g.len());
    let mut rows = Vec::with_capacity(g.len());
    for (t, r) in g {
        tuples.push(t);
        rows.push(r);
    }
    Groups { tuples, rows }
}

/// Scores renormalized to sum to one within each tuple.
fn tuple_normalized_scores(set: &LabeledEmbeddingSet, noise: &NoiseModel, groups: &Groups) -> Result<Vec<f64>> {
    if noise.scores.len() != set.len() {
        return Err(Error::InvalidNoise(format!(
            "{} scores for {} rows",
            noise.scores.len(),
            set.len()
        )));
    }
    if let Some(i) = noise.scores.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::InvalidNoise(format!("score of row {i} is {}", noise.scores[i])));
    }
    let mut p = noise.scores.clone();
    for (t, rows) in groups.tuples.iter().zip(&groups.rows) {
        let s: f64 = rows.iter().map(|&r| p[r]).sum();
        if s <= 0.0 {
            return Err(Error::DegenerateNoise {
                tuple: set.space.tuple_label(*t),
            });
        }
        for &r in rows {
            p[r] /= s;
        }
    }
    Ok(p)
}

fn check_coverage(space: &CompositionSpace, seen: &[usize]) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; space.num_primitives()];
    for &t in seen {
        for p in space.tuple_primitives(t) {
            counts[space.primitive_row(p)] += 1;
        }
    }
    let missing: Vec<String> = space
        .primitives()
        .filter(|&p| counts[space.primitive_row(p)] == 0)
        .map(|p| space.qualified_name(p))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Coverage { primitives: missing });
    }
    Ok(counts)
}

/// Decomposition of a set with exactly one row for every tuple of the space.
pub fn decompose_simple(set: &LabeledEmbeddingSet, cfg: &DecomposeConfig) -> Result<Decomposition> {
    let groups = group_rows(set);
    if groups.tuples.len() != set.space.len() {
        return Err(Error::Structure {
            message: format!(
                "{} of {} tuples have rows",
                groups.tuples.len(),
                set.space.len()
            ),
            hint: "use decompose_sparse for sets with missing tuples".into(),
        });
    }
    if let Some((t, r)) = groups.tuples.iter().zip(&groups.rows).find(|(_, r)| r.len() != 1) {
        return Err(Error::Structure {
            message: format!("tuple {} has {} rows", set.space.tuple_label(*t), r.len()),
            hint: "use decompose_weighted or decompose_sparse for repeated samples".into(),
        });
    }
    let noise = NoiseModel::uniform(set);
    run(set, &noise, groups, cfg)
}

/// Noise-weighted decomposition of a set covering every tuple of the space.
pub fn decompose_weighted(set: &LabeledEmbeddingSet, noise: &NoiseModel, cfg: &DecomposeConfig) -> Result<Decomposition> {
    let groups = group_rows(set);
    if groups.tuples.len() != set.space.len() {
        return Err(Error::Structure {
            message: format!(
                "{} of {} tuples have rows",
                groups.tuples.len(),
                set.space.len()
            ),
            hint: "use decompose_sparse for sets with missing tuples".into(),
        });
    }
    run(set, noise, groups, cfg)
}

/// Decomposition from the observed tuples only. Every primitive must occur in
/// at least one observed tuple; directions are then defined for all of them.
pub fn decompose_sparse(set: &LabeledEmbeddingSet, noise: &NoiseModel, cfg: &DecomposeConfig) -> Result<Decomposition> {
    let groups = group_rows(set);
    run(set, noise, groups, cfg)
}

fn run(set: &LabeledEmbeddingSet, noise: &NoiseModel, groups: Groups, cfg: &DecomposeConfig) -> Result<Decomposition> {
    if set.is_empty() {
        return Err(Error::EmptyInput("labeled embedding set has no rows".into()));
    }
    let g = set.geometry;
    let space = &set.space;
    let counts = check_coverage(space, &groups.tuples)?;
    let p = tuple_normalized_scores(set, noise, &groups)?;

    let total: f64 = p.iter().sum();
    let w: Vec<f64> = p.iter().map(|x| x / total).collect();
    let mean = intrinsic_mean(&g, set.rows(), &w, &cfg.mean)?;
    let mu = mean.mean.coords.clone();
    let width = g.coord_len();

    let denoised_rows: Vec<Vec<f64>> = groups
        .rows
        .par_iter()
        .map(|rows| {
            let mut acc = vec![0.0; width];
            let mut buf = vec![0.0; width];
            for &r in rows {
                g.log_into(&mu, set.rows().row(r), &mut buf)?;
                axpy(p[r], &buf, &mut acc);
            }
            g.project_tangent_in_place(&mu, &mut acc);
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut denoised = RowMatrix::with_capacity(denoised_rows.len(), width);
    for v in &denoised_rows {
        denoised.push(v)?;
    }

    let mut directions = RowMatrix::zeros(space.num_primitives(), width);
    for (i, &t) in groups.tuples.iter().enumerate() {
        let v = denoised.row(i);
        for prim in space.tuple_primitives(t) {
            axpy(1.0, v, directions.row_mut(space.primitive_row(prim)));
        }
    }
    for (row, &c) in counts.iter().enumerate() {
        scale(1.0 / c as f64, directions.row_mut(row));
        g.project_tangent_in_place(&mu, directions.row_mut(row));
    }
    if groups.tuples.len() == space.len() {
        // an inexact mean leaves its gradient in every slice mean
        let mut drift = vec![0.0; width];
        for v in denoised.iter() {
            axpy(1.0 / space.len() as f64, v, &mut drift);
        }
        for row in 0..directions.len() {
            axpy(-1.0, &drift, directions.row_mut(row));
        }
    }

    let low_support = space
        .primitives()
        .filter(|&prim| {
            let slice = space.len() / space.factor_size(prim.factor);
            counts[space.primitive_row(prim)] == 1 && slice > 1
        })
        .map(|prim| space.qualified_name(prim))
        .collect();

    let mut dec = Decomposition {
        geometry: g,
        space: space.clone(),
        mu: mean.mean.clone(),
        directions,
        seen: groups.tuples,
        denoised,
        noise_mode: noise.mode,
        temperature: noise.temperature,
        diagnostics: Diagnostics {
            mean: Some(MeanSummary::from(&mean)),
            centering_residuals: Vec::new(),
            low_support,
            num_rows: set.len(),
            num_seen: 0,
            dense: false,
        },
    };
    dec.diagnostics.num_seen = dec.seen.len();
    dec.diagnostics.dense = dec.seen.len() == space.len();
    dec.diagnostics.centering_residuals = dec.centering_residuals();
    Ok(dec)
}

impl Decomposition {
    /// Builds a decomposition from given parts. `denoised` is filled with the
    /// direction sums of `seen`.
    pub fn from_parts(
        geometry: Geometry,
        space: CompositionSpace,
        mu: ManifoldPoint,
        directions: RowMatrix,
        seen: Vec<usize>,
    ) -> Result<Self> {
        geometry.check_point(&mu.coords)?;
        if directions.len() != space.num_primitives() || directions.width() != geometry.coord_len() {
            return Err(Error::Dimension {
                expected: space.num_primitives() * geometry.coord_len(),
                actual: directions.len() * directions.width(),
            });
        }
        let mut seen = seen;
        seen.sort_unstable();
        seen.dedup();
        if seen.last().is_some_and(|&t| t >= space.len()) {
            return Err(Error::Config("seen tuple outside the space".into()));
        }
        let mut dec = Self {
            geometry,
            space,
            mu,
            directions,
            denoised: RowMatrix::new(geometry.coord_len()),
            seen,
            noise_mode: NoiseMode::Uniform,
            temperature: None,
            diagnostics: Diagnostics {
                mean: None,
                centering_residuals: Vec::new(),
                low_support: Vec::new(),
                num_rows: 0,
                num_seen: 0,
                dense: false,
            },
        };
        let mut denoised = RowMatrix::with_capacity(dec.seen.len(), geometry.coord_len());
        for &t in &dec.seen {
            denoised.push(&dec.direction_sum(t))?;
        }
        dec.denoised = denoised;
        dec.diagnostics.num_seen = dec.seen.len();
        dec.diagnostics.dense = dec.seen.len() == dec.space.len();
        dec.diagnostics.centering_residuals = dec.centering_residuals();
        Ok(dec)
    }

    pub fn direction(&self, p: PrimitiveId) -> &[f64] {
        self.directions.row(self.space.primitive_row(p))
    }

    pub fn direction_vector(&self, p: PrimitiveId) -> TangentVector {
        TangentVector {
            coords: self.direction(p).to_vec(),
            base: self.mu.clone(),
        }
    }

    /// Sum of the directions of a tuple's primitives.
    pub fn direction_sum(&self, tuple: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.geometry.coord_len()];
        for p in self.space.tuple_primitives(tuple) {
            axpy(1.0, self.direction(p), &mut v);
        }
        v
    }

    /// `Exp_mu` of the tuple's direction sum. Defined for unseen tuples too.
    pub fn compose(&self, tuple: usize) -> Result<ManifoldPoint> {
        if tuple >= self.space.len() {
            return Err(Error::Config(format!(
                "tuple index {tuple} outside a space of {} tuples",
                self.space.len()
            )));
        }
        Ok(self.exp(&self.direction_sum(tuple)))
    }

    pub fn compose_names<S: AsRef<str>>(&self, names: &[S]) -> Result<ManifoldPoint> {
        let t = self.space.resolve(names)?;
        self.compose(t)
    }

    /// `Exp_mu(sum_p alpha_p v_p)`. Primitives not listed get coefficient zero.
    pub fn compose_scaled(&self, coefficients: &[(PrimitiveId, f64)]) -> Result<ManifoldPoint> {
        let mut v = vec![0.0; self.geometry.coord_len()];
        for &(p, a) in coefficients {
            if p.factor >= self.space.num_factors() || p.index >= self.space.factor_size(p.factor) {
                return Err(Error::UnknownPrimitive {
                    factor: format!("#{}", p.factor),
                    name: format!("#{}", p.index),
                    line: None,
                });
            }
            axpy(a, self.direction(p), &mut v);
        }
        Ok(self.exp(&v))
    }

    /// Like [`compose_scaled`](Self::compose_scaled) with `(factor, primitive)`
    /// names.
    pub fn compose_scaled_names(&self, coefficients: &[(&str, &str, f64)]) -> Result<ManifoldPoint> {
        let mut resolved = Vec::with_capacity(coefficients.len());
        for &(factor, name, a) in coefficients {
            let f = self.space.find_factor(factor).ok_or_else(|| Error::UnknownPrimitive {
                factor: factor.to_string(),
                name: name.to_string(),
                line: None,
            })?;
            resolved.push((self.space.lookup(f, name)?, a));
        }
        self.compose_scaled(&resolved)
    }

    fn exp(&self, v: &[f64]) -> ManifoldPoint {
        let mut out = vec![0.0; v.len()];
        self.geometry.exp_into(&self.mu.coords, v, &mut out);
        ManifoldPoint {
            coords: out,
            geometry: self.geometry,
        }
    }

    /// Composed embeddings of the listed tuples, one row each.
    pub fn compose_all(&self, tuples: &[usize]) -> Result<RowMatrix> {
        let rows: Vec<Vec<f64>> = tuples
            .par_iter()
            .map(|&t| self.compose(t).map(|p| p.coords))
            .collect::<Result<_>>()?;
        let mut m = RowMatrix::with_capacity(rows.len(), self.geometry.coord_len());
        for r in &rows {
            m.push(r)?;
        }
        Ok(m)
    }

    /// `|sum_{z_i in Z_i} v_{z_i}|` per factor.
    pub fn centering_residuals(&self) -> Vec<f64> {
        (0..self.space.num_factors())
            .map(|f| {
                let mut s = vec![0.0; self.geometry.coord_len()];
                for index in 0..self.space.factor_size(f) {
                    axpy(1.0, self.direction(PrimitiveId { factor: f, index }), &mut s);
                }
                self.geometry.tangent_norm(&s)
            })
            .collect()
    }

    /// Whether every factor satisfies the centering bound.
    pub fn check_centering(&self) -> bool {
        self.centering_residuals()
            .iter()
            .enumerate()
            .all(|(f, &r)| r <= CENTERING_TOL * self.space.factor_size(f) as f64)
    }

    /// Numerical rank of the stacked direction matrix.
    pub fn subspace_rank(&self) -> usize {
        let m = DMatrix::from_row_slice(self.directions.len(), self.directions.width(), self.directions.as_slice());
        let sv = m.singular_values();
        let max = sv.iter().cloned().fold(0.0, f64::max);
        if max == 0.0 {
            return 0;
        }
        sv.iter().filter(|&&s| s > RANK_TOL * max).count()
    }

    /// Upper bound `sum_i (|Z_i| - 1)` on [`subspace_rank`](Self::subspace_rank).
    pub fn rank_bound(&self) -> usize {
        (0..self.space.num_factors())
            .map(|f| self.space.factor_size(f) - 1)
            .sum()
    }

    /// Noise-weighted squared geodesic residuals against a labeled set.
    pub fn residuals(&self, set: &LabeledEmbeddingSet, noise: &NoiseModel) -> Result<Residuals> {
        self.check_compatible(set)?;
        let groups = group_rows(set);
        let p = tuple_normalized_scores(set, noise, &groups)?;
        let per: Vec<(usize, f64)> = groups
            .tuples
            .par_iter()
            .zip(groups.rows.par_iter())
            .map(|(&t, rows)| {
                let c = self.compose(t)?;
                let r: f64 = rows
                    .iter()
                    .map(|&r| {
                        let d = self.geometry.distance_raw(set.rows().row(r), &c.coords);
                        p[r] * d * d
                    })
                    .sum();
                Ok((t, r))
            })
            .collect::<Result<_>>()?;
        let weighted_total = per.iter().map(|(_, r)| r).sum();
        Ok(Residuals {
            per_tuple: per.into_iter().collect(),
            weighted_total,
        })
    }

    /// Linearized objective `1/2 sum p |Log_mu(u) - sum_i v_{z_i}|^2` over the
    /// rows of `set`, at this decomposition's base point.
    pub fn tangent_objective(&self, set: &LabeledEmbeddingSet, noise: &NoiseModel) -> Result<f64> {
        self.check_compatible(set)?;
        let groups = group_rows(set);
        let p = tuple_normalized_scores(set, noise, &groups)?;
        tangent_objective_with(&self.geometry, &self.mu.coords, set, &p, |t| self.direction_sum(t))
    }

    fn check_compatible(&self, set: &LabeledEmbeddingSet) -> Result<()> {
        if set.space != self.space {
            return Err(Error::Config("labeled set uses a different composition space".into()));
        }
        if set.geometry.kind != self.geometry.kind || set.geometry.coord_len() != self.geometry.coord_len() {
            return Err(Error::Config("labeled set uses a different geometry".into()));
        }
        Ok(())
    }

    /// Tangent vectors `v_{z_i}` of all primitives, based at `mu`.
    pub fn direction_vectors(&self) -> Vec<TangentVector> {
        self.space.primitives().map(|p| self.direction_vector(p)).collect()
    }
}

/// Linearized objective for arbitrary per-tuple direction sums, with scores
/// already normalized within tuples.
pub(crate) fn tangent_objective_with(
    g: &Geometry,
    mu: &[f64],
    set: &LabeledEmbeddingSet,
    p: &[f64],
    sum_for: impl Fn(usize) -> Vec<f64> + Sync,
) -> Result<f64> {
    let width = g.coord_len();
    let terms: Vec<f64> = (0..set.len())
        .into_par_iter()
        .map(|r| {
            let mut buf = vec![0.0; width];
            g.log_into(mu, set.rows().row(r), &mut buf)?;
            axpy(-1.0, &sum_for(set.labels()[r]), &mut buf);
            Ok(0.5 * p[r] * g.inner(&buf, &buf))
        })
        .collect::<Result<_>>()?;
    Ok(terms.iter().sum())
}

/// Scores after per-tuple renormalization, as used by every estimator.
pub fn normalized_scores(set: &LabeledEmbeddingSet, noise: &NoiseModel) -> Result<Vec<f64>> {
    let groups = group_rows(set);
    tuple_normalized_scores(set, noise, &groups)
}
