//! Geometry of the embedding spaces: the unit hypersphere, the Lorentz
//! hyperboloid and flat Euclidean space.
//!
//! Every operation has a slice-level form (`*_into`, `distance_raw`, ...) used
//! by the bulk routines, and a typed form working on [`ManifoldPoint`] and
//! [`TangentVector`] that validates its inputs.
//!
//! Lorentz points are stored with the time coordinate first, so a Lorentz
//! geometry of dimension `d` has rows of length `d + 1`:
//! `<x, y>_L = -x0 y0 + sum_i xi yi` and points satisfy `<x, x>_L = -1/c`, `x0 > 0`.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, RowMatrix};

/// Manifold membership tolerance.
pub const MEMBERSHIP_TOL: f64 = 1e-9;
/// Sphere points with `1 + <u, mu>` below this are treated as antipodal.
pub const CUT_LOCUS_RADIUS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryKind {
    Sphere,
    Lorentz,
    Euclidean,
}

impl GeometryKind {
    pub fn as_byte(self) -> u8 {
        match self {
            GeometryKind::Sphere => 0,
            GeometryKind::Lorentz => 1,
            GeometryKind::Euclidean => 2,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(GeometryKind::Sphere),
            1 => Some(GeometryKind::Lorentz),
            2 => Some(GeometryKind::Euclidean),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GeometryKind::Sphere => "sphere",
            GeometryKind::Lorentz => "lorentz",
            GeometryKind::Euclidean => "euclidean",
        }
    }
}

impl fmt::Display for GeometryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GeometryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sphere" => Ok(GeometryKind::Sphere),
            "lorentz" | "hyperboloid" => Ok(GeometryKind::Lorentz),
            "euclidean" => Ok(GeometryKind::Euclidean),
            other => Err(Error::Config(format!("unknown geometry {other:?}"))),
        }
    }
}

/// A concrete manifold: kind, intrinsic dimension parameter `d` and, for the
/// hyperboloid, the curvature parameter `c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub kind: GeometryKind,
    /// Ambient dimension for the sphere and Euclidean space; number of spatial
    /// coordinates for the hyperboloid.
    pub dim: usize,
    /// Curvature parameter (hyperboloid only; 1.0 otherwise).
    pub curvature: f64,
    /// Radius used by the closeness diagnostic (pi/2 on the sphere).
    #[serde(deserialize_with = "null_as_infinity")]
    pub closeness_radius: f64,
}

impl Geometry {
    pub fn sphere(dim: usize) -> Self {
        Self {
            kind: GeometryKind::Sphere,
            dim,
            curvature: 1.0,
            closeness_radius: FRAC_PI_2,
        }
    }

    pub fn euclidean(dim: usize) -> Self {
        Self {
            kind: GeometryKind::Euclidean,
            dim,
            curvature: 1.0,
            closeness_radius: f64::INFINITY,
        }
    }

    /// Hyperboloid with curvature parameter `c > 0`. Means are unique on any
    /// finite point set in negative curvature, so the closeness radius
    /// defaults to infinity; see [`Geometry::with_closeness_radius`].
    pub fn lorentz(dim: usize, curvature: f64) -> Result<Self> {
        if !(curvature > 0.0 && curvature.is_finite()) {
            return Err(Error::Config(format!(
                "curvature must be positive and finite, got {curvature}"
            )));
        }
        Ok(Self {
            kind: GeometryKind::Lorentz,
            dim,
            curvature,
            closeness_radius: f64::INFINITY,
        })
    }

    pub fn new(kind: GeometryKind, dim: usize, curvature: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        match kind {
            GeometryKind::Sphere => Ok(Self::sphere(dim)),
            GeometryKind::Euclidean => Ok(Self::euclidean(dim)),
            GeometryKind::Lorentz => Self::lorentz(dim, curvature),
        }
    }

    pub fn with_closeness_radius(mut self, radius: f64) -> Self {
        self.closeness_radius = radius;
        self
    }

    /// Length of a stored coordinate row.
    #[inline]
    pub fn coord_len(&self) -> usize {
        match self.kind {
            GeometryKind::Lorentz => self.dim + 1,
            _ => self.dim,
        }
    }

    /// Length of the raw vectors accepted by [`Geometry::project_to_manifold`].
    #[inline]
    pub fn raw_len(&self) -> usize {
        self.dim
    }

    /// Supremum of tangent norms for which `exp_map` is injective.
    pub fn injectivity_radius(&self) -> f64 {
        match self.kind {
            GeometryKind::Sphere => std::f64::consts::PI,
            _ => f64::INFINITY,
        }
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.coord_len() {
            return Err(Error::Dimension {
                expected: self.coord_len(),
                actual: v.len(),
            });
        }
        Ok(())
    }

    /// Riemannian inner product of two ambient vectors (Minkowski form on the
    /// hyperboloid).
    #[inline]
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.kind {
            GeometryKind::Lorentz => -a[0] * b[0] + dot(&a[1..], &b[1..]),
            _ => dot(a, b),
        }
    }

    /// Norm of a tangent vector.
    #[inline]
    pub fn tangent_norm(&self, v: &[f64]) -> f64 {
        match self.kind {
            GeometryKind::Lorentz => self.inner(v, v).max(0.0).sqrt(),
            _ => norm(v),
        }
    }

    /// Similarity used for scoring: the inner product on the sphere and in
    /// Euclidean space, negative geodesic distance on the hyperboloid.
    #[inline]
    pub fn similarity(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.kind {
            GeometryKind::Lorentz => -self.distance_raw(a, b),
            _ => dot(a, b),
        }
    }

    /// Membership check for a coordinate row.
    pub fn check_point(&self, u: &[f64]) -> Result<()> {
        self.check_len(u)?;
        if let Some(i) = u.iter().position(|x| !x.is_finite()) {
            return Err(Error::ManifoldViolation(format!(
                "non-finite coordinate at index {i}"
            )));
        }
        match self.kind {
            GeometryKind::Sphere => {
                let n = norm(u);
                if (n - 1.0).abs() > MEMBERSHIP_TOL {
                    return Err(Error::ManifoldViolation(format!(
                        "sphere point has norm {n}"
                    )));
                }
            }
            GeometryKind::Lorentz => {
                let q = self.inner(u, u);
                let target = -1.0 / self.curvature;
                // rounding in <u,u>_L grows with the magnitude of the time coordinate
                let tol = MEMBERSHIP_TOL * (self.curvature * u[0] * u[0]).max(1.0);
                if u[0] <= 0.0 || (q - target).abs() * self.curvature > tol {
                    return Err(Error::ManifoldViolation(format!(
                        "hyperboloid point has <u,u>_L = {q}, x0 = {}",
                        u[0]
                    )));
                }
            }
            GeometryKind::Euclidean => {}
        }
        Ok(())
    }

    /// Snap a coordinate row that is already close to the manifold back onto
    /// it. Sphere: renormalize; hyperboloid: recompute the time coordinate from
    /// the spatial part; Euclidean: nothing.
    #[inline]
    pub fn reproject_in_place(&self, u: &mut [f64]) {
        match self.kind {
            GeometryKind::Sphere => {
                let n = norm(u);
                if n > 0.0 {
                    for x in u.iter_mut() {
                        *x /= n;
                    }
                }
            }
            GeometryKind::Lorentz => {
                let s = dot(&u[1..], &u[1..]);
                u[0] = (1.0 / self.curvature + s).sqrt();
            }
            GeometryKind::Euclidean => {}
        }
    }

    /// Geodesic distance between two rows assumed to be on the manifold.
    pub fn distance_raw(&self, u: &[f64], w: &[f64]) -> f64 {
        match self.kind {
            GeometryKind::Sphere => {
                // atan2(|u - (u.w) w|, u.w): equal to arccos(u.w) but accurate
                // for nearly coincident and nearly antipodal pairs.
                let c = dot(u, w).clamp(-1.0, 1.0);
                let s = u
                    .iter()
                    .zip(w)
                    .map(|(a, b)| {
                        let r = a - c * b;
                        r * r
                    })
                    .sum::<f64>()
                    .sqrt();
                s.atan2(c)
            }
            GeometryKind::Euclidean => crate::linalg::dist_euclid(u, w),
            GeometryKind::Lorentz => {
                // arccosh(alpha) = 2 asinh(sqrt((alpha-1)/2)) with
                // alpha - 1 = c |u-w|_L^2 / 2, avoiding cancellation near alpha = 1.
                let sc = self.curvature.sqrt();
                let q = lorentz_sq_diff(u, w).max(0.0);
                2.0 * (sc * q.sqrt() / 2.0).asinh() / sc
            }
        }
    }

    /// Exponential map on raw slices; writes the result into `out` and
    /// re-projects it onto the manifold.
    pub fn exp_into(&self, mu: &[f64], v: &[f64], out: &mut [f64]) {
        match self.kind {
            GeometryKind::Euclidean => {
                for ((o, m), t) in out.iter_mut().zip(mu).zip(v) {
                    *o = m + t;
                }
            }
            GeometryKind::Sphere => {
                let n = norm(v);
                if n == 0.0 {
                    out.copy_from_slice(mu);
                    return;
                }
                let (s, c) = n.sin_cos();
                let k = s / n;
                for ((o, m), t) in out.iter_mut().zip(mu).zip(v) {
                    *o = c * m + k * t;
                }
                self.reproject_in_place(out);
            }
            GeometryKind::Lorentz => {
                let n = self.tangent_norm(v);
                if n == 0.0 {
                    out.copy_from_slice(mu);
                    return;
                }
                let r = self.curvature.sqrt() * n;
                let c = r.cosh();
                let k = r.sinh() / r;
                for ((o, m), t) in out.iter_mut().zip(mu).zip(v) {
                    *o = c * m + k * t;
                }
                self.reproject_in_place(out);
            }
        }
    }

    /// Logarithmic map on raw slices. Fails with [`Error::CutLocus`] for
    /// (nearly) antipodal pairs on the sphere.
    pub fn log_into(&self, mu: &[f64], u: &[f64], out: &mut [f64]) -> Result<()> {
        match self.kind {
            GeometryKind::Euclidean => {
                for ((o, a), m) in out.iter_mut().zip(u).zip(mu) {
                    *o = a - m;
                }
            }
            GeometryKind::Sphere => {
                let c = dot(u, mu);
                if 1.0 + c < CUT_LOCUS_RADIUS {
                    return Err(Error::CutLocus {
                        radius: CUT_LOCUS_RADIUS,
                    });
                }
                // (I - mu mu^T)(u - mu) == u - (mu^T u) mu
                for ((o, a), m) in out.iter_mut().zip(u).zip(mu) {
                    *o = a - c * m;
                }
                let s = norm(out);
                if s == 0.0 {
                    return Ok(());
                }
                let theta = s.atan2(c.clamp(-1.0, 1.0));
                let k = theta / s;
                for o in out.iter_mut() {
                    *o *= k;
                }
            }
            GeometryKind::Lorentz => {
                let cv = self.curvature;
                let q = lorentz_sq_diff(u, mu).max(0.0);
                if q == 0.0 {
                    out.iter_mut().for_each(|o| *o = 0.0);
                    return Ok(());
                }
                // w = u - alpha mu with alpha = -c <mu,u>_L = 1 + c q / 2
                let am1 = cv * q / 2.0;
                for ((o, a), m) in out.iter_mut().zip(u).zip(mu) {
                    *o = (a - m) - am1 * m;
                }
                let wn = (am1 * (am1 + 2.0) / cv).sqrt();
                let d = self.distance_raw(mu, u);
                let k = d / wn;
                for o in out.iter_mut() {
                    *o *= k;
                }
                self.project_tangent_in_place(mu, out);
            }
        }
        Ok(())
    }

    /// Removes the normal component of `w` at `mu`, in place.
    #[inline]
    pub fn project_tangent_in_place(&self, mu: &[f64], w: &mut [f64]) {
        match self.kind {
            GeometryKind::Sphere => {
                let a = dot(mu, w);
                axpy(-a, mu, w);
            }
            GeometryKind::Lorentz => {
                let a = self.curvature * self.inner(mu, w);
                axpy(a, mu, w);
            }
            GeometryKind::Euclidean => {}
        }
    }

    /// Lifts a raw vector onto the manifold. Sphere: `x / |x|`; Euclidean:
    /// unchanged; hyperboloid: `x` is the spatial part and the time coordinate
    /// is solved from `<u,u>_L = -1/c`.
    pub fn project_to_manifold(&self, x: &[f64]) -> Result<ManifoldPoint> {
        Ok(ManifoldPoint {
            coords: self.project_raw(x)?,
            geometry: *self,
        })
    }

    pub(crate) fn project_raw(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.raw_len() {
            return Err(Error::Dimension {
                expected: self.raw_len(),
                actual: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateInput("non-finite coordinate".into()));
        }
        match self.kind {
            GeometryKind::Sphere => {
                let n = norm(x);
                if n == 0.0 {
                    return Err(Error::DegenerateInput(
                        "zero vector cannot be normalized onto the sphere".into(),
                    ));
                }
                Ok(x.iter().map(|v| v / n).collect())
            }
            GeometryKind::Euclidean => Ok(x.to_vec()),
            GeometryKind::Lorentz => {
                let mut u = Vec::with_capacity(x.len() + 1);
                u.push(0.0);
                u.extend_from_slice(x);
                self.reproject_in_place(&mut u);
                Ok(u)
            }
        }
    }

    /// Wraps validated coordinates as a point.
    pub fn point(&self, coords: Vec<f64>) -> Result<ManifoldPoint> {
        self.check_point(&coords)?;
        Ok(ManifoldPoint {
            coords,
            geometry: *self,
        })
    }

    fn check_same(&self, p: &ManifoldPoint) -> Result<()> {
        if p.geometry.kind != self.kind || p.geometry.dim != self.dim {
            return Err(Error::ManifoldViolation(format!(
                "point belongs to {} of dimension {}, expected {} of dimension {}",
                p.geometry.kind, p.geometry.dim, self.kind, self.dim
            )));
        }
        Ok(())
    }

    pub fn distance(&self, u: &ManifoldPoint, w: &ManifoldPoint) -> Result<f64> {
        self.check_same(u)?;
        self.check_same(w)?;
        self.check_point(&u.coords)?;
        self.check_point(&w.coords)?;
        Ok(self.distance_raw(&u.coords, &w.coords))
    }

    pub fn exp_map(&self, mu: &ManifoldPoint, v: &TangentVector) -> Result<ManifoldPoint> {
        self.check_same(mu)?;
        self.check_len(&v.coords)?;
        let mut out = vec![0.0; self.coord_len()];
        self.exp_into(&mu.coords, &v.coords, &mut out);
        Ok(ManifoldPoint {
            coords: out,
            geometry: *self,
        })
    }

    pub fn log_map(&self, mu: &ManifoldPoint, u: &ManifoldPoint) -> Result<TangentVector> {
        self.check_same(mu)?;
        self.check_same(u)?;
        self.check_point(&mu.coords)?;
        self.check_point(&u.coords)?;
        let mut out = vec![0.0; self.coord_len()];
        self.log_into(&mu.coords, &u.coords, &mut out)?;
        Ok(TangentVector {
            coords: out,
            base: mu.clone(),
        })
    }

    pub fn project_to_tangent(&self, mu: &ManifoldPoint, w: &[f64]) -> Result<TangentVector> {
        self.check_same(mu)?;
        self.check_len(w)?;
        let mut out = w.to_vec();
        self.project_tangent_in_place(&mu.coords, &mut out);
        Ok(TangentVector {
            coords: out,
            base: mu.clone(),
        })
    }

    /// Zero tangent vector at `mu`.
    pub fn zero_tangent(&self, mu: &ManifoldPoint) -> TangentVector {
        TangentVector {
            coords: vec![0.0; self.coord_len()],
            base: mu.clone(),
        }
    }
}

#[inline]
fn lorentz_sq_diff(u: &[f64], w: &[f64]) -> f64 {
    let d0 = u[0] - w[0];
    let s: f64 = u[1..]
        .iter()
        .zip(&w[1..])
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    s - d0 * d0
}

/// A point on a geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldPoint {
    pub coords: Vec<f64>,
    pub geometry: Geometry,
}

impl ManifoldPoint {
    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }
}

/// A tangent vector together with its base point.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    pub coords: Vec<f64>,
    pub base: ManifoldPoint,
}

impl TangentVector {
    pub fn norm(&self) -> f64 {
        self.base.geometry.tangent_norm(&self.coords)
    }

    /// Checks that the vector is orthogonal (in the Riemannian metric) to its base.
    pub fn check(&self) -> Result<()> {
        let g = self.base.geometry;
        g.check_len(&self.coords)?;
        let tol = MEMBERSHIP_TOL * norm(&self.coords).max(1.0) * norm(&self.base.coords).max(1.0);
        let ip = match g.kind {
            GeometryKind::Euclidean => 0.0,
            _ => g.inner(&self.base.coords, &self.coords),
        };
        if ip.abs() > tol {
            return Err(Error::ManifoldViolation(format!(
                "vector is not tangent at its base (inner product {ip})"
            )));
        }
        Ok(())
    }
}

/// Distance statistics of a point set around a center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosenessReport {
    pub avg: f64,
    pub max: f64,
    /// `max < radius`; on the sphere the radius is pi/2.
    pub within_radius: bool,
    #[serde(deserialize_with = "null_as_infinity")]
    pub radius: f64,
}

/// JSON has no infinity; radii written as `null` read back as infinite.
fn null_as_infinity<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

/// Average and maximum geodesic distance of `rows` from `center`.
pub fn closeness_report(g: &Geometry, rows: &RowMatrix, center: &[f64]) -> Result<ClosenessReport> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("closeness report over no points".into()));
    }
    g.check_len(center)?;
    g.check_len(rows.row(0))?;
    let mut sum = 0.0;
    let mut max: f64 = 0.0;
    for r in rows.iter() {
        let d = g.distance_raw(center, r);
        sum += d;
        max = max.max(d);
    }
    Ok(ClosenessReport {
        avg: sum / rows.len() as f64,
        max,
        within_radius: max < g.closeness_radius,
        radius: g.closeness_radius,
    })
}

/// Typed convenience over [`closeness_report`].
pub fn closeness_of_points(points: &[ManifoldPoint], center: &ManifoldPoint) -> Result<ClosenessReport> {
    let g = center.geometry;
    if points.is_empty() {
        return Err(Error::EmptyInput("closeness report over no points".into()));
    }
    let mut rows = RowMatrix::with_capacity(points.len(), g.coord_len());
    for p in points {
        g.check_same(p)?;
        rows.push(&p.coords)?;
    }
    closeness_report(&g, &rows, &center.coords)
}
