//! Weighted intrinsic (Karcher) mean by Riemannian gradient descent.
//!
//! Each iteration moves the iterate along `eta * sum_i w_i Log_mu(u_i)`, the
//! negative gradient of `f(mu) = 1/2 sum_i w_i d(mu, u_i)^2`, and stops once
//! the step norm falls below the tolerance.

use std::borrow::Cow;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, RowMatrix, CHUNK_ROWS};
use crate::manifold::{closeness_report, ClosenessReport, Geometry, GeometryKind, ManifoldPoint};

/// Weight sums further than this from 1 are rejected rather than renormalized.
pub const WEIGHT_SUM_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanConfig {
    pub learning_rate: f64,
    pub tolerance: f64,
    pub max_iters: usize,
    /// Estimate the mean from a random subset of this many points.
    pub subsample: Option<usize>,
    pub seed: u64,
}

impl Default for MeanConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            tolerance: 1e-5,
            max_iters: 1000,
            subsample: None,
            seed: 0,
        }
    }
}

impl MeanConfig {
    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tolerance = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if self.subsample == Some(0) {
            return Err(Error::Config("subsample size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeanResult {
    pub mean: ManifoldPoint,
    pub iterations: usize,
    pub final_step_norm: f64,
    pub converged: bool,
    /// Distances of the inputs from the initial guess.
    pub closeness: ClosenessReport,
    pub warning: Option<String>,
}

/// Serializable summary of a [`MeanResult`] without the point itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSummary {
    pub iterations: usize,
    pub final_step_norm: f64,
    pub converged: bool,
    pub closeness: ClosenessReport,
    pub warning: Option<String>,
}

impl From<&MeanResult> for MeanSummary {
    fn from(r: &MeanResult) -> Self {
        Self {
            iterations: r.iterations,
            final_step_norm: r.final_step_norm,
            converged: r.converged,
            closeness: r.closeness.clone(),
            warning: r.warning.clone(),
        }
    }
}

/// Validates weights against the simplex and renormalizes small rounding drift.
pub fn normalize_weights(weights: &[f64], n: usize) -> Result<Vec<f64>> {
    if weights.len() != n {
        return Err(Error::InvalidWeights(format!(
            "{} weights for {n} points",
            weights.len()
        )));
    }
    if n == 0 {
        return Err(Error::EmptyInput("no points".into()));
    }
    if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidWeights(format!(
            "weight {i} is {} (must be finite and nonnegative)",
            weights[i]
        )));
    }
    let s: f64 = weights.iter().sum();
    if (s - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::InvalidWeights(format!("weights sum to {s}, expected 1")));
    }
    Ok(weights.iter().map(|w| w / s).collect())
}

pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn check_rows(g: &Geometry, rows: &RowMatrix) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("no points".into()));
    }
    if rows.width() != g.coord_len() {
        return Err(Error::Dimension {
            expected: g.coord_len(),
            actual: rows.width(),
        });
    }
    for r in rows.iter() {
        g.check_point(r)?;
    }
    Ok(())
}

/// Initial guess: the normalized weighted arithmetic mean on the sphere, the
/// weighted mean in Euclidean space, and the re-lifted spatial part of the
/// weighted ambient mean on the hyperboloid.
pub fn init_guess(g: &Geometry, rows: &RowMatrix, weights: &[f64]) -> Result<ManifoldPoint> {
    check_rows(g, rows)?;
    let w = normalize_weights(weights, rows.len())?;
    init_unchecked(g, rows, &w)
}

fn init_unchecked(g: &Geometry, rows: &RowMatrix, w: &[f64]) -> Result<ManifoldPoint> {
    let mut m = vec![0.0; rows.width()];
    for (r, &wi) in rows.iter().zip(w) {
        axpy(wi, r, &mut m);
    }
    match g.kind {
        GeometryKind::Sphere => {
            if crate::linalg::norm(&m) < 1e-12 {
                return Err(Error::DegenerateInput(
                    "weighted arithmetic mean of sphere points is zero".into(),
                ));
            }
            g.project_to_manifold(&m)
        }
        GeometryKind::Euclidean => g.point(m),
        GeometryKind::Lorentz => g.project_to_manifold(&m[1..]),
    }
}

/// `sum_i w_i Log_mu(u_i)`: the negative Riemannian gradient of the weighted
/// mean objective. Computed in fixed-size chunks whose partial sums are added
/// in order, so the result does not depend on the thread count.
pub fn weighted_log_sum(g: &Geometry, mu: &[f64], rows: &RowMatrix, weights: &[f64]) -> Result<Vec<f64>> {
    let width = rows.width();
    let partials: Vec<Result<Vec<f64>>> = rows
        .as_slice()
        .par_chunks(CHUNK_ROWS * width)
        .zip(weights.par_chunks(CHUNK_ROWS))
        .map(|(block, wblock)| {
            let mut acc = vec![0.0; width];
            let mut buf = vec![0.0; width];
            for (u, &w) in block.chunks_exact(width).zip(wblock) {
                if w == 0.0 {
                    continue;
                }
                g.log_into(mu, u, &mut buf)?;
                axpy(w, &buf, &mut acc);
            }
            Ok(acc)
        })
        .collect();
    let mut total = vec![0.0; width];
    for p in partials {
        axpy(1.0, &p?, &mut total);
    }
    Ok(total)
}

/// Weighted mean objective `1/2 sum_i w_i d(mu, u_i)^2`.
pub fn mean_objective(g: &Geometry, mu: &[f64], rows: &RowMatrix, weights: &[f64]) -> f64 {
    0.5 * rows
        .iter()
        .zip(weights)
        .map(|(u, w)| {
            let d = g.distance_raw(mu, u);
            w * d * d
        })
        .sum::<f64>()
}

/// Weighted intrinsic mean. Non-convergence within `max_iters` is reported
/// through `converged = false`, not as an error.
pub fn intrinsic_mean(g: &Geometry, rows: &RowMatrix, weights: &[f64], cfg: &MeanConfig) -> Result<MeanResult> {
    cfg.validate()?;
    check_rows(g, rows)?;
    let w = normalize_weights(weights, rows.len())?;

    let (rows, w) = match cfg.subsample {
        Some(m) if m < rows.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut idx = sample(&mut rng, rows.len(), m).into_vec();
            idx.sort_unstable();
            let sub_w: Vec<f64> = idx.iter().map(|&i| w[i]).collect();
            let s: f64 = sub_w.iter().sum();
            if s <= 0.0 {
                return Err(Error::InvalidWeights("subsample carries zero weight".into()));
            }
            (
                Cow::Owned(rows.select(&idx)),
                sub_w.into_iter().map(|x| x / s).collect(),
            )
        }
        _ => (Cow::Borrowed(rows), w),
    };
    let rows: &RowMatrix = &rows;

    let mu0 = init_unchecked(g, rows, &w)?;
    let closeness = closeness_report(g, rows, &mu0.coords)?;
    let warning = (!closeness.within_radius).then(|| {
        format!(
            "max distance {:.4} from the initial guess is not below {:.4}; the mean may not be unique",
            closeness.max, closeness.radius
        )
    });

    let mut mu = mu0.coords;
    let mut next = vec![0.0; mu.len()];
    let mut step_norm = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        iterations += 1;
        let mut delta = weighted_log_sum(g, &mu, rows, &w)?;
        crate::linalg::scale(cfg.learning_rate, &mut delta);
        g.project_tangent_in_place(&mu, &mut delta);
        step_norm = g.tangent_norm(&delta);
        g.exp_into(&mu, &delta, &mut next);
        std::mem::swap(&mut mu, &mut next);
        if step_norm < cfg.tolerance {
            converged = true;
            break;
        }
    }

    Ok(MeanResult {
        mean: ManifoldPoint {
            coords: mu,
            geometry: *g,
        },
        iterations,
        final_step_norm: step_norm,
        converged,
        closeness,
        warning,
    })
}

/// Typed convenience: mean of a slice of points.
pub fn intrinsic_mean_of_points(points: &[ManifoldPoint], weights: &[f64], cfg: &MeanConfig) -> Result<MeanResult> {
    let first = points
        .first()
        .ok_or_else(|| Error::EmptyInput("no points".into()))?;
    let rows = RowMatrix::from_rows(&points.iter().map(|p| p.coords.as_slice()).collect::<Vec<_>>())?;
    intrinsic_mean(&first.geometry, &rows, weights, cfg)
}
