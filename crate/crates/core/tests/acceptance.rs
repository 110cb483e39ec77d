//! Acceptance suite. Runs every criterion, prints one PASS/FAIL/SKIP line
//! each and exits nonzero when any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use geodecomp::dataio::{read_embeddings, read_label_table, read_split};
use geodecomp::eval::{czsl_evaluate, group_evaluate, BiasGrid, ClassifierBank, GroupReport};
use geodecomp::karcher::intrinsic_mean;
use geodecomp::noise::uniform_scores;
use geodecomp::synthlab::{add_noise, gen_decomposable, gen_workload, oracle_decompose, OracleConfig, SynthSpec, WorkloadSpec};
use geodecomp::{
    decompose_simple, decompose_sparse, decompose_weighted, CompositionSpace, DecomposeConfig, Decomposition, Factor,
    Geometry, GeometryKind, LabeledEmbeddingSet, MeanConfig, RowMatrix,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

enum Verdict {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    verdict: Verdict,
    detail: String,
}

fn judge(ok: bool, detail: String) -> Outcome {
    Outcome {
        verdict: if ok { Verdict::Pass } else { Verdict::Fail },
        detail,
    }
}

fn gauss(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn minkowski(a: &[f64], b: &[f64]) -> f64 {
    -a[0] * b[0] + dot(&a[1..], &b[1..])
}

/// Angle between two ambient vectors, accurate near zero.
fn angle(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x / na - y / nb).powi(2)).sum::<f64>().sqrt();
    2.0 * (0.5 * d).min(1.0).asin()
}

// Independent sphere formulas for the oracles.
fn sphere_dist(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b).clamp(-1.0, 1.0).acos()
}

fn sphere_log(mu: &[f64], u: &[f64]) -> Vec<f64> {
    let c = dot(mu, u).clamp(-1.0, 1.0);
    let theta = c.acos();
    let w: Vec<f64> = u.iter().zip(mu).map(|(x, m)| x - c * m).collect();
    let n = norm(&w);
    if n < 1e-300 {
        return vec![0.0; mu.len()];
    }
    w.iter().map(|x| x * theta / n).collect()
}

fn random_point(g: &Geometry, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match g.kind {
        GeometryKind::Sphere => {
            let x = gauss(rng, g.dim);
            let n = norm(&x);
            x.iter().map(|v| v / n).collect()
        }
        GeometryKind::Euclidean => gauss(rng, g.dim),
        GeometryKind::Lorentz => {
            let s: Vec<f64> = gauss(rng, g.dim).iter().map(|v| v / (g.dim as f64).sqrt()).collect();
            let mut u = vec![(1.0 / g.curvature + dot(&s, &s)).sqrt()];
            u.extend(s);
            u
        }
    }
}

/// Random tangent vector at `mu` with the given norm.
fn random_tangent(g: &Geometry, mu: &[f64], len: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v = gauss(rng, g.coord_len());
    g.project_tangent_in_place(mu, &mut v);
    let n = match g.kind {
        GeometryKind::Lorentz => minkowski(&v, &v).max(0.0).sqrt(),
        _ => norm(&v),
    };
    v.iter().map(|x| x * len / n).collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_trip, mut worst_iso) = (0.0f64, 0.0f64);
    let mut trials = 0usize;
    for kind in [GeometryKind::Sphere, GeometryKind::Lorentz, GeometryKind::Euclidean] {
        for d in [3usize, 16, 512] {
            let g = match kind {
                GeometryKind::Lorentz => Geometry::lorentz(d, 1.0).unwrap(),
                _ => Geometry::new(kind, d, 1.0).unwrap(),
            };
            let max_len = match kind {
                GeometryKind::Sphere => 3.0,
                GeometryKind::Lorentz => 3.0,
                GeometryKind::Euclidean => 10.0,
            };
            let w = g.coord_len();
            let mut out = vec![0.0; w];
            let mut back = vec![0.0; w];
            for _ in 0..10_000 {
                let mu = random_point(&g, &mut rng);
                let len = max_len * rng.gen::<f64>();
                let v = random_tangent(&g, &mu, len, &mut rng);
                g.exp_into(&mu, &v, &mut out);
                g.log_into(&mu, &out, &mut back).unwrap();
                worst_trip = worst_trip.max(diff_norm(&back, &v));
                worst_iso = worst_iso.max((g.distance_raw(&mu, &out) - len).abs());
                trials += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    judge(
        worst_trip <= 1e-8 && worst_iso <= 1e-10 && secs < 5.0,
        format!("{trials} pairs, max round trip {worst_trip:.2e}, max isometry defect {worst_iso:.2e}, {secs:.2} s"),
    )
}

/// Point cloud of `n` samples within `radius` of a random center.
fn sphere_cloud(d: usize, n: usize, radius: f64, rng: &mut ChaCha8Rng) -> (RowMatrix, Vec<f64>) {
    let g = Geometry::sphere(d);
    let c = random_point(&g, rng);
    let mut rows = RowMatrix::new(d);
    let mut out = vec![0.0; d];
    for _ in 0..n {
        let v = random_tangent(&g, &c, radius * rng.gen::<f64>(), rng);
        g.exp_into(&c, &v, &mut out);
        rows.push(&out).unwrap();
    }
    let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 0.05).collect();
    let s: f64 = raw.iter().sum();
    (rows, raw.iter().map(|x| x / s).collect())
}

fn frechet(rows: &RowMatrix, w: &[f64], x: &[f64]) -> f64 {
    rows.iter().zip(w).map(|(u, wi)| wi * sphere_dist(x, u).powi(2)).sum()
}

/// Multi-resolution grid search for the weighted Frechet mean on S^2.
fn grid_mean_s2(rows: &RowMatrix, w: &[f64]) -> Vec<f64> {
    let at = |theta: f64, phi: f64| vec![theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()];
    let mut best = (f64::INFINITY, vec![0.0; 3]);
    let (nt, np) = (90, 180);
    for i in 0..=nt {
        for j in 0..np {
            let x = at(std::f64::consts::PI * i as f64 / nt as f64, 2.0 * std::f64::consts::PI * j as f64 / np as f64);
            let f = frechet(rows, w, &x);
            if f < best.0 {
                best = (f, x);
            }
        }
    }
    let mut h = 2.0f64.to_radians();
    while h > 1e-6 {
        let c = best.1.clone();
        // orthonormal tangent basis at c
        let a = if c[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let mut e1: Vec<f64> = (0..3).map(|k| a[k] - dot(&a, &c) * c[k]).collect();
        let n1 = norm(&e1);
        e1.iter_mut().for_each(|x| *x /= n1);
        let e2 = vec![c[1] * e1[2] - c[2] * e1[1], c[2] * e1[0] - c[0] * e1[2], c[0] * e1[1] - c[1] * e1[0]];
        let steps = 20;
        for i in -steps..=steps {
            for j in -steps..=steps {
                let (s, t) = (h * i as f64 / steps as f64, h * j as f64 / steps as f64);
                let mut x: Vec<f64> = (0..3).map(|k| c[k] + s * e1[k] + t * e2[k]).collect();
                let n = norm(&x);
                x.iter_mut().for_each(|v| *v /= n);
                let f = frechet(rows, w, &x);
                if f < best.0 {
                    best = (f, x);
                }
            }
        }
        h *= 0.25;
    }
    best.1
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = MeanConfig::default();
    let (mut worst_res, mut worst_grid) = (0.0f64, 0.0f64);
    let mut all_converged = true;
    for i in 0..100 {
        let d = [3usize, 8, 32][i % 3];
        let (rows, w) = sphere_cloud(d, 10 + i % 31, std::f64::consts::FRAC_PI_4 * 0.999, &mut rng);
        let r = intrinsic_mean(&Geometry::sphere(d), &rows, &w, &cfg).unwrap();
        all_converged &= r.converged;
        let mut grad = vec![0.0; d];
        for (u, wi) in rows.iter().zip(&w) {
            for (gk, lk) in grad.iter_mut().zip(sphere_log(&r.mean.coords, u)) {
                *gk += wi * lk;
            }
        }
        worst_res = worst_res.max(norm(&grad));
    }
    for _ in 0..100 {
        let (rows, w) = sphere_cloud(3, 25, std::f64::consts::FRAC_PI_4 * 0.999, &mut rng);
        let r = intrinsic_mean(&Geometry::sphere(3), &rows, &w, &cfg).unwrap();
        worst_grid = worst_grid.max(sphere_dist(&r.mean.coords, &grid_mean_s2(&rows, &w)));
    }
    let mut worst_euclid = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(1..40);
        let d = rng.gen_range(1..20);
        let mut rows = RowMatrix::new(d);
        for _ in 0..n {
            rows.push(&gauss(&mut rng, d).iter().map(|x| 5.0 * x).collect::<Vec<_>>()).unwrap();
        }
        let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 0.01).collect();
        let s: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|x| x / s).collect();
        let r = intrinsic_mean(&Geometry::euclidean(d), &rows, &w, &cfg).unwrap();
        for k in 0..d {
            let m: f64 = rows.iter().zip(&w).map(|(u, wi)| wi * u[k]).sum();
            worst_euclid = worst_euclid.max((m - r.mean.coords[k]).abs());
        }
    }
    judge(
        all_converged && worst_res < 1e-5 && worst_grid <= 2e-3 && worst_euclid <= 1e-12,
        format!(
            "max residual {worst_res:.2e}, max grid gap {worst_grid:.2e}, Euclidean max deviation {worst_euclid:.2e}, all converged {all_converged}"
        ),
    )
}

/// The 50 seeded instances shared by criteria 3, 4 and 6.
fn instances() -> Vec<(SynthSpec, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    (0..50)
        .map(|i| {
            let kind = [GeometryKind::Sphere, GeometryKind::Lorentz, GeometryKind::Euclidean][i % 3];
            let s = 1 + (i / 3) % 3;
            let factors = (0..s)
                .map(|f| Factor::new(format!("f{f}"), (0..rng.gen_range(1..=4)).map(|k| format!("p{k}"))))
                .collect();
            let dim = rng.gen_range(2..=64);
            (SynthSpec::new(factors, kind, dim), 1000 + i as u64)
        })
        .collect()
}

fn tight() -> DecomposeConfig {
    DecomposeConfig {
        mean: MeanConfig::default().with_tolerance(1e-12),
    }
}

fn direction_errors(found: &Decomposition, truth: &Decomposition) -> (f64, f64) {
    let (mut worst_angle, mut worst_zero) = (0.0f64, 0.0f64);
    for (a, b) in found.directions.iter().zip(truth.directions.iter()) {
        if norm(b) > 1e-12 {
            worst_angle = worst_angle.max(angle(a, b));
        } else {
            worst_zero = worst_zero.max(norm(a));
        }
    }
    (worst_angle, worst_zero)
}

fn criterion_3(produced: &mut Vec<Decomposition>) -> Outcome {
    let start = Instant::now();
    let (mut worst_angle, mut worst_zero, mut worst_res) = (0.0f64, 0.0f64, 0.0f64);
    for (spec, seed) in instances() {
        let inst = gen_decomposable(&spec, seed).unwrap();
        let dec = decompose_simple(&inst.set, &tight()).unwrap();
        let (a, z) = direction_errors(&dec, &inst.truth);
        worst_angle = worst_angle.max(a);
        worst_zero = worst_zero.max(z);
        let res = dec.residuals(&inst.set, &uniform_scores(&inst.set)).unwrap();
        worst_res = worst_res.max(res.weighted_total);
        produced.push(dec);
    }
    let secs = start.elapsed().as_secs_f64();
    judge(
        worst_angle <= 1e-6 && worst_zero <= 1e-6 && worst_res <= 1e-10 && secs < 30.0,
        format!(
            "max angular error {worst_angle:.2e} rad, max spurious norm {worst_zero:.2e}, max residual {worst_res:.2e}, {secs:.2} s"
        ),
    )
}

fn criterion_4(produced: &mut Vec<Decomposition>) -> Outcome {
    let mut worst_gap = f64::NEG_INFINITY;
    let mut count = 0;
    let cfg = DecomposeConfig::default();
    for (spec, seed) in instances() {
        let inst = gen_decomposable(&spec, seed).unwrap();
        let noisy = add_noise(&inst.set, 0.1, 5, seed + 7).unwrap();
        for set in [&inst.set, &noisy] {
            let noise = uniform_scores(set);
            let closed = decompose_weighted(set, &noise, &cfg).unwrap();
            let oracle = match oracle_decompose(set, &noise, &OracleConfig::default(), &cfg) {
                Ok(o) => o,
                Err(e) => return judge(false, format!("oracle failed on seed {seed}: {e}")),
            };
            let a = closed.tangent_objective(set, &noise).unwrap();
            let b = oracle.tangent_objective(set, &noise).unwrap();
            worst_gap = worst_gap.max(a - b);
            count += 1;
            produced.push(closed);
        }
    }
    judge(
        worst_gap <= 1e-6,
        format!("{count} sets, max (closed form - oracle) objective {worst_gap:.2e}"),
    )
}

fn criterion_5() -> Outcome {
    // zero-noise 2x3 instances with one tuple hidden
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for kind in [GeometryKind::Sphere, GeometryKind::Lorentz, GeometryKind::Euclidean] {
        let factors = vec![Factor::new("a", ["a1", "a2"]), Factor::new("o", ["o1", "o2", "o3"])];
        let inst = gen_decomposable(&SynthSpec::new(factors, kind, 8), rng.gen()).unwrap();
        for hidden in 0..inst.set.space.len() {
            let keep: Vec<usize> = (0..inst.set.len()).filter(|&r| inst.set.labels()[r] != hidden).collect();
            let sparse = inst.set.select(&keep).unwrap();
            let dec = decompose_sparse(&sparse, &uniform_scores(&sparse), &tight()).unwrap();
            let got = dec.compose(hidden).unwrap();
            let want = inst.truth.compose(hidden).unwrap();
            worst = worst.max(inst.set.geometry.distance_raw(&got.coords, &want.coords));
        }
    }

    // Euclidean hand-worked case
    let space = CompositionSpace::new(vec![Factor::new("attr", ["a1", "a2"]), Factor::new("obj", ["o1", "o2"])]).unwrap();
    let rows = RowMatrix::from_rows(&[[0.0, 0.0], [0.0, 2.0], [2.0, 0.0]]).unwrap();
    let set = LabeledEmbeddingSet::with_default_ids(Geometry::euclidean(2), space, rows, vec![0, 1, 2]).unwrap();
    let dec = decompose_sparse(&set, &uniform_scores(&set), &DecomposeConfig::default()).unwrap();
    let third = 1.0 / 3.0;
    let pid = |factor, index| geodecomp::PrimitiveId { factor, index };
    let expect: [(&[f64], [f64; 2]); 5] = [
        (&dec.mu.coords, [2.0 * third, 2.0 * third]),
        (dec.direction(pid(0, 0)), [-2.0 * third, third]),
        (dec.direction(pid(0, 1)), [4.0 * third, -2.0 * third]),
        (dec.direction(pid(1, 0)), [third, -2.0 * third]),
        (dec.direction(pid(1, 1)), [-2.0 * third, 4.0 * third]),
    ];
    let mut hand = 0.0f64;
    for (got, want) in &expect {
        hand = hand.max(diff_norm(got, want));
    }
    hand = hand.max(diff_norm(&dec.compose(3).unwrap().coords, &[4.0 * third, 4.0 * third]));
    hand = hand.max(diff_norm(&dec.compose(0).unwrap().coords, &[third, third]));

    judge(
        worst <= 1e-6 && hand <= 1e-12,
        format!("max unseen reconstruction error {worst:.3e} (bound 1e-6), hand-worked case deviation {hand:.1e}"),
    )
}

fn criterion_6(produced: &[Decomposition]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_shift = 0.0f64;
    let mut worst_perm = 0.0f64;
    for (spec, seed) in instances().into_iter().take(30) {
        let inst = gen_decomposable(&spec, seed).unwrap();
        let g = inst.set.geometry;
        let space = &inst.set.space;
        let mu = &inst.truth.mu.coords;
        let s = space.num_factors();
        // per-factor shifts summing to zero leave every tuple unchanged
        let mut shifts: Vec<Vec<f64>> = (0..s).map(|_| random_tangent(&g, mu, 0.1, &mut rng)).collect();
        let mut total = vec![0.0; g.coord_len()];
        for c in &shifts {
            total.iter_mut().zip(c).for_each(|(t, x)| *t += x);
        }
        for c in shifts.iter_mut() {
            c.iter_mut().zip(&total).for_each(|(x, t)| *x -= t / s as f64);
        }
        let mut rows = RowMatrix::new(g.coord_len());
        let mut out = vec![0.0; g.coord_len()];
        for t in 0..space.len() {
            let mut v = vec![0.0; g.coord_len()];
            for (f, c) in space.components(t).iter().zip(0..s) {
                let d = inst.truth.direction(geodecomp::PrimitiveId { factor: c, index: *f });
                v.iter_mut().zip(d.iter().zip(&shifts[c])).for_each(|(x, (a, b))| *x += a + b);
            }
            g.exp_into(mu, &v, &mut out);
            rows.push(&out).unwrap();
        }
        let shifted = LabeledEmbeddingSet::with_default_ids(g, space.clone(), rows, (0..space.len()).collect()).unwrap();
        let a = decompose_simple(&inst.set, &tight()).unwrap();
        let b = decompose_simple(&shifted, &tight()).unwrap();
        for (x, y) in a.directions.iter().zip(b.directions.iter()) {
            worst_shift = worst_shift.max(diff_norm(x, y));
        }
        if s > 1 {
            let order: Vec<usize> = (0..s).rev().collect();
            let p = decompose_simple(&inst.set.permute_factors(&order).unwrap(), &tight()).unwrap();
            for prim in space.primitives() {
                let q = geodecomp::PrimitiveId {
                    factor: s - 1 - prim.factor,
                    index: prim.index,
                };
                worst_perm = worst_perm.max(diff_norm(a.direction(prim), p.direction(q)));
            }
        }
    }

    let eps = MeanConfig::default().tolerance;
    let mut worst_mean = 0.0f64;
    let mut worst_center = 0.0f64;
    let mut dense = 0;
    for dec in produced.iter().filter(|d| d.diagnostics.dense) {
        dense += 1;
        let g = dec.geometry;
        let mut rows = RowMatrix::new(g.coord_len());
        let mut out = vec![0.0; g.coord_len()];
        for v in dec.denoised.iter() {
            g.exp_into(&dec.mu.coords, v, &mut out);
            rows.push(&out).unwrap();
        }
        let w = vec![1.0 / rows.len() as f64; rows.len()];
        let m = intrinsic_mean(&g, &rows, &w, &MeanConfig::default()).unwrap();
        worst_mean = worst_mean.max(g.distance_raw(&m.mean.coords, &dec.mu.coords));
        for (f, r) in dec.centering_residuals().iter().enumerate() {
            worst_center = worst_center.max(r / (1e-6 * dec.space.factor_size(f) as f64));
        }
    }
    judge(
        worst_shift <= 1e-6 && worst_perm <= 1e-6 && worst_mean <= eps && worst_center <= 1.0,
        format!(
            "shift invariance {worst_shift:.2e}, factor permutation {worst_perm:.2e}, denoised mean offset {worst_mean:.2e} (eps {eps:.0e}), centering residual at {worst_center:.3} of bound over {dense} decompositions"
        ),
    )
}

/// Exhaustive bias enumeration for one toy instance; returns
/// (best_seen, best_unseen, best_hm, auc, attr_acc, obj_acc).
fn brute_force_czsl(
    space: &CompositionSpace,
    bank: &[(usize, Vec<f64>)],
    queries: &RowMatrix,
    truth: &[usize],
    seen: &[usize],
) -> (f64, f64, f64, f64, f64, f64) {
    let is_seen = |t: usize| seen.contains(&t);
    let scores: Vec<Vec<f64>> = queries.iter().map(|q| bank.iter().map(|(_, a)| dot(q, a)).collect()).collect();
    let mut biases = vec![f64::NEG_INFINITY, f64::INFINITY, 0.0];
    let mut crit = Vec::new();
    for s in &scores {
        for (j, (tj, _)) in bank.iter().enumerate() {
            for (k, (tk, _)) in bank.iter().enumerate() {
                if is_seen(*tj) && !is_seen(*tk) {
                    crit.push(s[j] - s[k]);
                }
            }
        }
    }
    crit.sort_by(f64::total_cmp);
    crit.dedup();
    for (i, &c) in crit.iter().enumerate() {
        biases.push(c);
        if i > 0 {
            biases.push(0.5 * (crit[i - 1] + c));
        }
    }
    if let (Some(lo), Some(hi)) = (crit.first(), crit.last()) {
        biases.push(lo - 1.0);
        biases.push(hi + 1.0);
    }
    let predict = |b: f64| -> Vec<usize> {
        scores
            .iter()
            .map(|s| {
                let mut best: Option<(usize, f64)> = None;
                for (j, (t, _)) in bank.iter().enumerate() {
                    let allowed = match b {
                        x if x == f64::INFINITY => !is_seen(*t),
                        x if x == f64::NEG_INFINITY => is_seen(*t),
                        _ => true,
                    };
                    if !allowed {
                        continue;
                    }
                    let v = if b.is_finite() && !is_seen(*t) { s[j] + b } else { s[j] };
                    if best.map_or(true, |(_, bv)| v > bv) {
                        best = Some((j, v));
                    }
                }
                bank[best.unwrap().0].0
            })
            .collect()
    };
    let acc = |pred: &[usize], want_seen: bool| {
        let idx: Vec<usize> = (0..truth.len()).filter(|&i| is_seen(truth[i]) == want_seen).collect();
        idx.iter().filter(|&&i| pred[i] == truth[i]).count() as f64 / idx.len() as f64
    };
    let mut pts: Vec<(f64, f64)> = biases.iter().map(|&b| {
        let p = predict(b);
        (acc(&p, false), acc(&p, true))
    }).collect();
    let best_seen = pts.iter().map(|p| p.1).fold(0.0, f64::max);
    let best_unseen = pts.iter().map(|p| p.0).fold(0.0, f64::max);
    let best_hm = pts
        .iter()
        .map(|&(u, s)| if u + s == 0.0 { 0.0 } else { 2.0 * s * u / (s + u) })
        .fold(0.0, f64::max);
    // Pareto frontier by unseen accuracy, with the seen-only end at u = 0
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    pts.dedup();
    let frontier: Vec<(f64, f64)> = pts
        .iter()
        .filter(|&&(u, s)| !pts.iter().any(|&(u2, s2)| u2 >= u && s2 >= s && (u2 > u || s2 > s)))
        .copied()
        .collect();
    let mut curve = vec![(0.0, frontier[0].1)];
    curve.extend(frontier);
    let mut auc = 0.0;
    for w in curve.windows(2) {
        auc += (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0;
    }
    let p0 = predict(0.0);
    let comp = |f: usize| {
        (0..truth.len()).filter(|&i| space.component(p0[i], f) == space.component(truth[i], f)).count() as f64
            / truth.len() as f64
    };
    (best_seen, best_unseen, best_hm, auc, comp(0), comp(space.num_factors() - 1))
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let g = Geometry::sphere(4);
    let mut mismatches = Vec::new();
    for inst in 0..20 {
        let space = CompositionSpace::new(vec![Factor::new("a", ["x", "y"]), Factor::new("o", ["p", "q", "r"])]).unwrap();
        let n_cand = rng.gen_range(2..=6);
        let mut tuples: Vec<usize> = (0..6).collect();
        rand::seq::SliceRandom::shuffle(tuples.as_mut_slice(), &mut rng);
        let mut cands = tuples[..n_cand].to_vec();
        cands.sort_unstable();
        let n_seen = rng.gen_range(1..n_cand);
        let seen: Vec<usize> = cands[..n_seen].to_vec();
        let mut anchors: Vec<Vec<f64>> = cands.iter().map(|_| random_point(&g, &mut rng)).collect();
        if inst % 4 == 0 && anchors.len() > 1 {
            anchors[1] = anchors[0].clone();
        }
        let entries: Vec<(usize, Vec<String>, Vec<f64>)> =
            cands.iter().zip(&anchors).map(|(&t, a)| (t, space.tuple_names(t), a.clone())).collect();
        let bank = ClassifierBank::new(g, entries).unwrap();
        let n_q = rng.gen_range(2..=40);
        let mut queries = RowMatrix::new(4);
        let mut truth = Vec::new();
        for q in 0..n_q {
            // at least one seen and one unseen query
            let j = match q {
                0 => 0,
                1 => n_cand - 1,
                _ => rng.gen_range(0..n_cand),
            };
            let noise: Vec<f64> = gauss(&mut rng, 4).iter().map(|x| 0.6 * x).collect();
            let mut x: Vec<f64> = anchors[j].iter().zip(&noise).map(|(a, e)| a + e).collect();
            if q % 7 == 3 {
                x = anchors[j].clone();
            }
            let n = norm(&x);
            x.iter_mut().for_each(|v| *v /= n);
            queries.push(&x).unwrap();
            truth.push(cands[j]);
        }
        // oracle sees candidates in the bank's order
        let ordered: Vec<(usize, Vec<f64>)> =
            bank.keys().iter().enumerate().map(|(i, &k)| (k, bank.anchor(i).coords.clone())).collect();
        let oracle = brute_force_czsl(&space, &ordered, &queries, &truth, &seen);
        let r = czsl_evaluate(&bank, &space, &queries, &truth, &seen, &BiasGrid::Exact).unwrap();
        let got = (r.best_seen, r.best_unseen, r.best_hm, r.auc, r.attr_acc, r.obj_acc);
        if got != oracle {
            mismatches.push(format!("instance {inst}: {got:?} vs {oracle:?}"));
        }
    }

    // group report identities on fuzzed counts
    let mut group_failures = 0;
    for _ in 0..500 {
        let mut counts = BTreeMap::new();
        for k in 0..rng.gen_range(1..8) {
            let n = rng.gen_range(1..50);
            counts.insert(format!("g{k}"), (rng.gen_range(0..=n), n));
        }
        let r = GroupReport::from_counts(&counts).unwrap();
        let accs: Vec<f64> = counts.values().map(|&(h, n)| h as f64 / n as f64).collect();
        let worst = accs.iter().cloned().fold(f64::INFINITY, f64::min);
        let best = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let avg = accs.iter().sum::<f64>() / accs.len() as f64;
        let hits: usize = counts.values().map(|c| c.0).sum();
        let total: usize = counts.values().map(|c| c.1).sum();
        let ok = r.worst_group == worst
            && (r.avg - avg).abs() <= 1e-15
            && r.gap == r.avg - r.worst_group
            && r.gap >= 0.0
            && r.sample_avg == hits as f64 / total as f64
            && r.worst_group <= r.sample_avg
            && r.sample_avg <= best;
        if !ok {
            group_failures += 1;
        }
    }
    // the same identities through prediction on random banks
    for _ in 0..50 {
        let entries: Vec<(usize, Vec<String>, Vec<f64>)> =
            (0..3).map(|k| (k, vec![format!("c{k}")], random_point(&g, &mut rng))).collect();
        let bank = ClassifierBank::new(g, entries).unwrap();
        let mut queries = RowMatrix::new(4);
        let mut truth = Vec::new();
        let mut groups = Vec::new();
        for _ in 0..30 {
            queries.push(&random_point(&g, &mut rng)).unwrap();
            truth.push(rng.gen_range(0..3));
            groups.push(Some(format!("g{}", rng.gen_range(0..4))));
        }
        let r = group_evaluate(&bank, &queries, &truth, &groups).unwrap();
        if r.gap != r.avg - r.worst_group || r.per_group.values().any(|&a| a < r.worst_group) {
            group_failures += 1;
        }
    }
    judge(
        mismatches.is_empty() && group_failures == 0,
        if mismatches.is_empty() {
            format!("20 instances match exhaustive enumeration, {group_failures} group identity failures")
        } else {
            format!("{} mismatches, first: {}", mismatches.len(), mismatches[0])
        },
    )
}

fn criterion_8() -> Outcome {
    let mut err = [0.0f64; 2];
    for seed in 0..20u64 {
        let factors = vec![Factor::new("a", ["a0", "a1", "a2"]), Factor::new("o", ["o0", "o1", "o2"])];
        let inst = gen_decomposable(&SynthSpec::new(factors, GeometryKind::Sphere, 16), 800 + seed).unwrap();
        for (slot, k) in [1usize, 30].into_iter().enumerate() {
            let noisy = add_noise(&inst.set, 0.1, k, 900 + seed).unwrap();
            let dec = decompose_weighted(&noisy, &uniform_scores(&noisy), &DecomposeConfig::default()).unwrap();
            let e: f64 = dec
                .directions
                .iter()
                .zip(inst.truth.directions.iter())
                .map(|(a, b)| diff_norm(a, b))
                .sum::<f64>()
                / dec.directions.len() as f64;
            err[slot] += e / 20.0;
        }
    }
    let ratio = err[1] / err[0];
    judge(
        ratio < 0.4,
        format!("mean direction error k=1 {:.4}, k=30 {:.4}, ratio {ratio:.3}", err[0], err[1]),
    )
}

fn timed_decompose(set: &LabeledEmbeddingSet) -> f64 {
    let noise = uniform_scores(set);
    let mut best = f64::INFINITY;
    for _ in 0..2 {
        let t = Instant::now();
        let dec = decompose_sparse(set, &noise, &DecomposeConfig::default()).unwrap();
        best = best.min(t.elapsed().as_secs_f64());
        std::hint::black_box(dec);
    }
    best
}

fn criterion_9() -> Outcome {
    let base = WorkloadSpec {
        n_attr: 180,
        n_obj: 170,
        tuples: 28_000,
        rows: 30_000,
        dim: 768,
        sigma: 0.01,
    };
    let t1 = {
        let set = gen_workload(&base, 9).unwrap();
        timed_decompose(&set)
    };
    let doubled = WorkloadSpec {
        n_attr: 250,
        n_obj: 240,
        tuples: 56_000,
        rows: 60_000,
        ..base
    };
    let t2 = {
        let set = gen_workload(&doubled, 9).unwrap();
        timed_decompose(&set)
    };
    let ratio = t2 / t1;
    judge(
        t1 <= 5.0 && ratio <= 2.5,
        format!(
            "N=30000 M=28000 d=768: {t1:.3} s; N=60000 M=56000: {t2:.3} s; ratio {ratio:.2} on {} threads",
            rayon::current_num_threads()
        ),
    )
}

fn load(dir: &Path, stem: &str, space: Option<&CompositionSpace>) -> LabeledEmbeddingSet {
    let m = read_embeddings(&dir.join(format!("{stem}.bin"))).unwrap();
    let table = read_label_table(&dir.join(format!("{stem}.tsv"))).unwrap();
    let space = space.cloned().unwrap_or_else(|| table.derive_space().unwrap());
    let labels = table.resolve(&space).unwrap();
    let g = m.geometry(1.0).unwrap();
    LabeledEmbeddingSet::new(g, space, m.to_points(&g).unwrap(), labels, table.sample_ids).unwrap()
}

fn criterion_10() -> Outcome {
    let Some(root) = std::env::var_os("GEODECOMP_REPRO_DIR") else {
        return Outcome {
            verdict: Verdict::Skip,
            detail: "GEODECOMP_REPRO_DIR not set".into(),
        };
    };
    let root = Path::new(&root);
    let mut parts = Vec::new();
    let mut ok = true;
    let mut ran = false;

    let zappos = root.join("ut-zappos");
    if zappos.is_dir() {
        ran = true;
        let train = load(&zappos, "train", None);
        let test = load(&zappos, "test", Some(&train.space));
        let split = read_split(&zappos.join("split.json"), &train.space).unwrap();
        let dec = decompose_sparse(&train, &uniform_scores(&train), &DecomposeConfig::default()).unwrap();
        let mut cands = split.candidates(&train.space);
        cands.extend(&split.seen);
        cands.sort_unstable();
        cands.dedup();
        let bank = ClassifierBank::from_decomposition(&dec, &cands).unwrap();
        let r = czsl_evaluate(&bank, &dec.space, test.rows(), test.labels(), &split.seen, &BiasGrid::Exact).unwrap();
        let auc = 100.0 * r.auc;
        ok &= (auc - 13.9).abs() <= 0.3;
        parts.push(format!("UT-Zappos AUC {auc:.2} (target 13.9 +- 0.3)"));
    }

    let birds = root.join("waterbirds");
    if birds.is_dir() {
        ran = true;
        let train = load(&birds, "train", None);
        let test = load(&birds, "test", Some(&train.space));
        let split = read_split(&birds.join("split.json"), &train.space).unwrap();
        let dec = decompose_sparse(&train, &uniform_scores(&train), &DecomposeConfig::default()).unwrap();
        let f = dec.space.num_factors() - 1;
        let bank = ClassifierBank::primitives_from_decomposition(&dec, f).unwrap();
        let truth: Vec<usize> = test.labels().iter().map(|&t| dec.space.component(t, f)).collect();
        let groups: Vec<Option<String>> = match &split.groups {
            Some(_) => split.group_of(test.sample_ids()),
            None => test.labels().iter().map(|&t| Some(dec.space.tuple_label(t))).collect(),
        };
        let r = group_evaluate(&bank, test.rows(), &truth, &groups).unwrap();
        let (wg, gap) = (100.0 * r.worst_group, 100.0 * r.gap);
        ok &= (wg - 86.4).abs() <= 1.0 && (gap - 5.0).abs() <= 1.0;
        parts.push(format!("Waterbirds WG {wg:.2} (86.4 +- 1.0), GAP {gap:.2} (5.0 +- 1.0)"));
    }

    if !ran {
        return Outcome {
            verdict: Verdict::Skip,
            detail: format!("no ut-zappos/ or waterbirds/ under {}", root.display()),
        };
    }
    judge(ok, parts.join("; "))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Outcome {
                verdict: Verdict::Fail,
                detail: format!("panicked: {msg}"),
            }
        }
    }
}

fn main() {
    // libtest flags such as --list are not supported; listing prints nothing.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut produced = Vec::new();
    let results = vec![
        ("geometry suite", guarded(criterion_1)),
        ("intrinsic mean suite", guarded(criterion_2)),
        ("decomposition recovery", guarded(|| criterion_3(&mut produced))),
        ("closed form vs oracle", guarded(|| criterion_4(&mut produced))),
        ("sparse reconstruction", guarded(criterion_5)),
        ("uniqueness, mean and centering", guarded(|| criterion_6(&produced))),
        ("metric oracle", guarded(criterion_7)),
        ("denoising regression", guarded(criterion_8)),
        ("performance", guarded(criterion_9)),
        ("reproduction track", guarded(criterion_10)),
    ];
    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        let tag = match o.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => {
                failed += 1;
                "FAIL"
            }
            Verdict::Skip => "SKIP",
        };
        println!("criterion {:>2} {name}: {tag} ({})", i + 1, o.detail);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
