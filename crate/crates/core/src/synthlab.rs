//! Synthetic ground truth: exactly decomposable sets, tangent Gaussian noise,
//! tuple dropping and a gradient-descent reference solver for the linearized
//! objective.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::decompose::{normalized_scores, tangent_objective_with, DecomposeConfig, Decomposition};
use crate::error::{Error, Result};
use crate::karcher::{intrinsic_mean, MeanSummary};
use crate::linalg::{axpy, norm, scale, RowMatrix};
use crate::manifold::{Geometry, GeometryKind, ManifoldPoint};
use crate::noise::NoiseModel;
use crate::space::{CompositionSpace, Factor, LabeledEmbeddingSet};

fn default_scale() -> f64 {
    0.3
}
fn default_k() -> usize {
    1
}
fn default_keep() -> f64 {
    1.0
}
fn default_curvature() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub factors: Vec<Factor>,
    pub geometry: GeometryKind,
    pub dim: usize,
    #[serde(default = "default_curvature")]
    pub curvature: f64,
    /// Largest tangent norm of any single direction.
    #[serde(default = "default_scale")]
    pub direction_scale: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default = "default_k")]
    pub samples_per_tuple: usize,
    #[serde(default = "default_keep")]
    pub keep_fraction: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl SynthSpec {
    pub fn new(factors: Vec<Factor>, geometry: GeometryKind, dim: usize) -> Self {
        Self {
            factors,
            geometry,
            dim,
            curvature: 1.0,
            direction_scale: default_scale(),
            noise_sigma: 0.0,
            samples_per_tuple: 1,
            keep_fraction: 1.0,
            seed: None,
        }
    }

    pub fn space(&self) -> Result<CompositionSpace> {
        CompositionSpace::new(self.factors.clone())
    }

    pub fn geometry(&self) -> Result<Geometry> {
        Geometry::new(self.geometry, self.dim, self.curvature)
    }

    pub fn validate(&self) -> Result<()> {
        self.space()?;
        self.geometry()?;
        if !(self.direction_scale > 0.0 && self.direction_scale.is_finite()) {
            return Err(Error::Config("direction_scale must be positive".into()));
        }
        if self.geometry == GeometryKind::Sphere
            && self.direction_scale * self.factors.len() as f64 >= std::f64::consts::FRAC_PI_2
        {
            return Err(Error::Config(format!(
                "direction_scale {} times {} factors must stay below pi/2 on the sphere",
                self.direction_scale,
                self.factors.len()
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be nonnegative".into()));
        }
        if self.samples_per_tuple == 0 {
            return Err(Error::Config("samples_per_tuple must be at least 1".into()));
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(Error::Config("keep_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// A generated set and the decomposition it was built from.
#[derive(Clone, Debug)]
pub struct SynthInstance {
    pub set: LabeledEmbeddingSet,
    pub truth: Decomposition,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Random point near the origin of the model (the hyperboloid apex for
/// Lorentz).
fn random_base(g: &Geometry, rng: &mut ChaCha8Rng) -> Result<ManifoldPoint> {
    match g.kind {
        GeometryKind::Sphere => loop {
            let x = gaussian(rng, g.dim);
            if norm(&x) > 1e-6 {
                return g.project_to_manifold(&x);
            }
        },
        GeometryKind::Euclidean => g.point(gaussian(rng, g.dim)),
        GeometryKind::Lorentz => {
            let mut x = gaussian(rng, g.dim);
            scale(0.5 / (g.dim as f64).sqrt(), &mut x);
            g.project_to_manifold(&x)
        }
    }
}

/// One random tangent vector at `mu`.
fn random_tangent(g: &Geometry, mu: &[f64], rng: &mut ChaCha8Rng, sigma: f64) -> Vec<f64> {
    let mut v = gaussian(rng, g.coord_len());
    scale(sigma, &mut v);
    g.project_tangent_in_place(mu, &mut v);
    v
}

/// Exactly decomposable set with one row per tuple. Directions are centered
/// per factor and scaled so the longest one has norm `direction_scale`.
pub fn gen_decomposable(spec: &SynthSpec, seed: u64) -> Result<SynthInstance> {
    spec.validate()?;
    let g = spec.geometry()?;
    let space = spec.space()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mu, directions) = sample_truth(spec, &g, &space, &mut rng)?;
    let truth = Decomposition::from_parts(g, space.clone(), mu, directions, (0..space.len()).collect())?;
    let rows = truth.compose_all(&(0..space.len()).collect::<Vec<_>>())?;
    let set = LabeledEmbeddingSet::new(
        g,
        space.clone(),
        rows,
        (0..space.len()).collect(),
        (0..space.len()).map(|t| format!("z{t}")).collect(),
    )?;
    Ok(SynthInstance { set, truth })
}

fn sample_truth(
    spec: &SynthSpec,
    g: &Geometry,
    space: &CompositionSpace,
    rng: &mut ChaCha8Rng,
) -> Result<(ManifoldPoint, RowMatrix)> {
    let g = *g;
    let mu = random_base(&g, rng)?;
    let width = g.coord_len();

    let mut directions = RowMatrix::zeros(space.num_primitives(), width);
    let mut row = 0;
    for f in 0..space.num_factors() {
        let n = space.factor_size(f);
        let mut vs: Vec<Vec<f64>> = (0..n).map(|_| random_tangent(&g, &mu.coords, rng, 1.0)).collect();
        let mut mean = vec![0.0; width];
        for v in &vs {
            axpy(1.0 / n as f64, v, &mut mean);
        }
        for v in &mut vs {
            axpy(-1.0, &mean, v);
        }
        let longest = vs.iter().map(|v| g.tangent_norm(v)).fold(0.0, f64::max);
        for v in &mut vs {
            if longest > 0.0 {
                scale(spec.direction_scale / longest, v);
            } else {
                v.iter_mut().for_each(|x| *x = 0.0);
            }
            directions.row_mut(row).copy_from_slice(v);
            row += 1;
        }
    }
    Ok((mu, directions))
}

/// `k` samples `Exp_u(eps)` per row with `eps` a tangent Gaussian of
/// componentwise standard deviation `sigma`.
pub fn add_noise(set: &LabeledEmbeddingSet, sigma: f64, k: usize, seed: u64) -> Result<LabeledEmbeddingSet> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config("noise sigma must be nonnegative".into()));
    }
    if k == 0 {
        return Err(Error::Config("need at least one sample per row".into()));
    }
    let g = set.geometry;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = RowMatrix::with_capacity(set.len() * k, g.coord_len());
    let mut labels = Vec::with_capacity(set.len() * k);
    let mut ids = Vec::with_capacity(set.len() * k);
    let mut out = vec![0.0; g.coord_len()];
    for (i, u) in set.rows().iter().enumerate() {
        for e in 0..k {
            if sigma == 0.0 {
                rows.push(u)?;
            } else {
                let eps = random_tangent(&g, u, &mut rng, sigma);
                g.exp_into(u, &eps, &mut out);
                rows.push(&out)?;
            }
            labels.push(set.labels()[i]);
            ids.push(format!("{}_{e}", set.sample_ids()[i]));
        }
    }
    LabeledEmbeddingSet::new(g, set.space.clone(), rows, labels, ids)
}

fn covers_all(space: &CompositionSpace, tuples: &[usize]) -> bool {
    let mut hit = vec![false; space.num_primitives()];
    for &t in tuples {
        for p in space.tuple_primitives(t) {
            hit[space.primitive_row(p)] = true;
        }
    }
    hit.into_iter().all(|h| h)
}

pub const SPARSIFY_ATTEMPTS: u64 = 100;

/// Keeps a uniformly random subset of `round(keep_fraction * |Z'|)` observed
/// tuples (at least one) that still covers every primitive.
pub fn sparsify(set: &LabeledEmbeddingSet, keep_fraction: f64, seed: u64) -> Result<LabeledEmbeddingSet> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::Config("keep_fraction must lie in (0, 1]".into()));
    }
    let tuples = set.seen_tuples();
    let target = ((keep_fraction * tuples.len() as f64).round() as usize).clamp(1, tuples.len());
    if target == tuples.len() {
        return Ok(set.clone());
    }
    let space = &set.space;
    let widest = (0..space.num_factors()).map(|f| space.factor_size(f)).max().unwrap_or(1);
    if target < widest || !covers_all(space, &tuples) {
        return Err(Error::Config(format!(
            "keeping {target} of {} tuples cannot cover every primitive",
            tuples.len()
        )));
    }
    for attempt in 0..SPARSIFY_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
        let mut keep: Vec<usize> = tuples.choose_multiple(&mut rng, target).copied().collect();
        keep.sort_unstable();
        if covers_all(space, &keep) {
            let rows: Vec<usize> = (0..set.len())
                .filter(|&i| keep.binary_search(&set.labels()[i]).is_ok())
                .collect();
            return set.select(&rows);
        }
    }
    Err(Error::Config(format!(
        "no covering subset of {target} tuples found in {SPARSIFY_ATTEMPTS} attempts"
    )))
}

/// Full pipeline: decomposable rows, then noise, then tuple dropping.
pub fn generate(spec: &SynthSpec, seed: u64) -> Result<SynthInstance> {
    let seed = spec.seed.unwrap_or(seed);
    let inst = gen_decomposable(spec, seed)?;
    let mut set = inst.set;
    if spec.noise_sigma > 0.0 || spec.samples_per_tuple > 1 {
        set = add_noise(&set, spec.noise_sigma, spec.samples_per_tuple, seed.wrapping_add(1))?;
    }
    if spec.keep_fraction < 1.0 {
        set = sparsify(&set, spec.keep_fraction, seed.wrapping_add(2))?;
    }
    Ok(SynthInstance { set, truth: inst.truth })
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleConfig {
    pub iters: usize,
    pub step: f64,
    /// Consecutive objective increases tolerated before giving up.
    pub patience: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            iters: 5000,
            step: 0.1,
            patience: 10,
        }
    }
}

/// Plain gradient descent on `1/2 sum p |Log_mu(u) - sum_i v_{z_i}|^2` over all
/// directions at once, recentering each factor after every step. Uses the
/// same weighted intrinsic mean as the closed form.
pub fn oracle_decompose(
    set: &LabeledEmbeddingSet,
    noise: &NoiseModel,
    cfg: &OracleConfig,
    dcfg: &DecomposeConfig,
) -> Result<Decomposition> {
    if set.is_empty() {
        return Err(Error::EmptyInput("labeled embedding set has no rows".into()));
    }
    let g = set.geometry;
    let space = &set.space;
    let p = normalized_scores(set, noise)?;
    let total: f64 = p.iter().sum();
    let w: Vec<f64> = p.iter().map(|x| x / total).collect();
    let mean = intrinsic_mean(&g, set.rows(), &w, &dcfg.mean)?;
    let mu = mean.mean.coords.clone();
    let width = g.coord_len();

    // the objective only sees each tuple through its weighted log sum
    let seen = set.seen_tuples();
    let mut target = RowMatrix::zeros(space.len(), width);
    let mut buf = vec![0.0; width];
    for (r, u) in set.rows().iter().enumerate() {
        g.log_into(&mu, u, &mut buf)?;
        axpy(p[r], &buf, target.row_mut(set.labels()[r]));
    }
    let mut covered = vec![false; space.num_primitives()];
    for &t in &seen {
        for prim in space.tuple_primitives(t) {
            covered[space.primitive_row(prim)] = true;
        }
    }
    if let Some(row) = covered.iter().position(|c| !c) {
        return Err(Error::Coverage {
            primitives: vec![space.qualified_name(space.primitive_at_row(row))],
        });
    }

    let tuple_sum = |dirs: &RowMatrix, t: usize| {
        let mut s = vec![0.0; width];
        for prim in space.tuple_primitives(t) {
            axpy(1.0, dirs.row(space.primitive_row(prim)), &mut s);
        }
        s
    };
    // 1/2 sum p |L|^2 is constant; track the rest
    let partial = |dirs: &RowMatrix| -> f64 {
        seen.iter()
            .map(|&t| {
                let s = tuple_sum(dirs, t);
                let tgt = target.row(t);
                0.5 * g.inner(&s, &s) - g.inner(&s, tgt)
            })
            .sum()
    };

    let mut dirs = RowMatrix::zeros(space.num_primitives(), width);
    let mut grad = RowMatrix::zeros(space.num_primitives(), width);
    let mut prev = partial(&dirs);
    let mut rising = 0usize;
    for iter in 0..cfg.iters {
        grad.as_mut_slice().iter_mut().for_each(|x| *x = 0.0);
        for &t in &seen {
            let mut r = tuple_sum(&dirs, t);
            axpy(-1.0, target.row(t), &mut r);
            for prim in space.tuple_primitives(t) {
                axpy(1.0, &r, grad.row_mut(space.primitive_row(prim)));
            }
        }
        axpy(-cfg.step, grad.as_slice(), dirs.as_mut_slice());
        let mut start = 0;
        for f in 0..space.num_factors() {
            let n = space.factor_size(f);
            let mut m = vec![0.0; width];
            for i in start..start + n {
                axpy(1.0 / n as f64, dirs.row(i), &mut m);
            }
            for i in start..start + n {
                axpy(-1.0, &m, dirs.row_mut(i));
                g.project_tangent_in_place(&mu, dirs.row_mut(i));
            }
            start += n;
        }
        let obj = partial(&dirs);
        if !obj.is_finite() {
            return Err(Error::OracleDivergence { iteration: iter + 1 });
        }
        if obj > prev {
            rising += 1;
            if rising >= cfg.patience {
                return Err(Error::OracleDivergence { iteration: iter + 1 });
            }
        } else {
            rising = 0;
        }
        prev = obj;
    }

    let mut dec = Decomposition::from_parts(g, space.clone(), mean.mean.clone(), dirs, seen)?;
    dec.diagnostics.mean = Some(MeanSummary::from(&mean));
    dec.diagnostics.num_rows = set.len();
    Ok(dec)
}

/// Linearized objective for the decomposition's directions using the
/// set's own noise scores.
pub fn tangent_objective(dec: &Decomposition, set: &LabeledEmbeddingSet, noise: &NoiseModel) -> Result<f64> {
    let p = normalized_scores(set, noise)?;
    tangent_objective_with(&dec.geometry, &dec.mu.coords, set, &p, |t| dec.direction_sum(t))
}

/// Large sparse workload: `tuples` distinct tuples drawn from an
/// `n_attr x n_obj` space, `rows` samples in total with every chosen tuple
/// sampled at least once, tangent noise `sigma`.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadSpec {
    pub n_attr: usize,
    pub n_obj: usize,
    pub tuples: usize,
    pub rows: usize,
    pub dim: usize,
    pub sigma: f64,
}

pub fn gen_workload(spec: &WorkloadSpec, seed: u64) -> Result<LabeledEmbeddingSet> {
    let factors = vec![
        Factor::new("attr", (0..spec.n_attr).map(|i| format!("a{i}"))),
        Factor::new("obj", (0..spec.n_obj).map(|i| format!("o{i}"))),
    ];
    let space = CompositionSpace::new(factors.clone())?;
    if spec.tuples > space.len() || spec.tuples < spec.n_attr.max(spec.n_obj) || spec.rows < spec.tuples {
        return Err(Error::Config("inconsistent workload sizes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Geometry::sphere(spec.dim);
    let mut synth = SynthSpec::new(factors, GeometryKind::Sphere, spec.dim);
    synth.direction_scale = 0.25;
    let (mu, directions) = sample_truth(&synth, &g, &space, &mut rng)?;
    let truth = Decomposition::from_parts(g, space.clone(), mu, directions, Vec::new())?;

    // diagonal-ish cover first so every primitive appears, then random fill
    let mut chosen: Vec<usize> = (0..spec.n_attr.max(spec.n_obj))
        .map(|i| space.tuple_index(&[i % spec.n_attr, i % spec.n_obj]))
        .collect::<Result<_>>()?;
    chosen.sort_unstable();
    chosen.dedup();
    let mut rest: Vec<usize> = (0..space.len()).filter(|t| chosen.binary_search(t).is_err()).collect();
    rest.shuffle(&mut rng);
    chosen.extend(rest.into_iter().take(spec.tuples - chosen.len()));
    chosen.sort_unstable();

    let mut labels: Vec<usize> = chosen.clone();
    for _ in spec.tuples..spec.rows {
        labels.push(chosen[rng.gen_range(0..chosen.len())]);
    }
    labels.sort_unstable();

    let mut rows = RowMatrix::with_capacity(spec.rows, g.coord_len());
    let mut out = vec![0.0; g.coord_len()];
    for &t in &labels {
        let mut v = truth.direction_sum(t);
        let eps = random_tangent(&g, &truth.mu.coords, &mut rng, spec.sigma);
        axpy(1.0, &eps, &mut v);
        g.exp_into(&truth.mu.coords, &v, &mut out);
        rows.push(&out)?;
    }
    LabeledEmbeddingSet::with_default_ids(g, space, rows, labels)
}
