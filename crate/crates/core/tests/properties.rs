use std::collections::BTreeMap;

use geodecomp::eval::GroupReport;
use geodecomp::noise::{sigmoid_scores, softmax_scores};
use geodecomp::synthlab::{add_noise, gen_decomposable, SynthSpec};
use geodecomp::{
    decompose_weighted, intrinsic_mean, Anchors, DecomposeConfig, Factor, Geometry, GeometryKind, LabeledEmbeddingSet,
    MeanConfig, NoiseModel, RowMatrix,
};
use proptest::prelude::*;

fn geometry(kind: u8, dim: usize) -> Geometry {
    match kind % 3 {
        0 => Geometry::sphere(dim),
        1 => Geometry::lorentz(dim, 1.0).unwrap(),
        _ => Geometry::euclidean(dim),
    }
}

fn lift(g: &Geometry, raw: &[f64]) -> Vec<f64> {
    let x: Vec<f64> = raw.iter().take(g.raw_len()).copied().collect();
    g.project_to_manifold(&x).unwrap().coords
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn exp_then_log_is_identity(
        kind in 0u8..3,
        dim in 2usize..10,
        base in prop::collection::vec(-2.0f64..2.0, 11),
        dir in prop::collection::vec(-1.0f64..1.0, 11),
        len in 0.0f64..2.5,
    ) {
        let g = geometry(kind, dim);
        prop_assume!(base.iter().take(g.raw_len()).any(|x| x.abs() > 1e-3));
        let mu = lift(&g, &base);
        let mut v: Vec<f64> = dir[..g.coord_len()].to_vec();
        g.project_tangent_in_place(&mu, &mut v);
        let n = g.tangent_norm(&v);
        prop_assume!(n > 1e-6);
        v.iter_mut().for_each(|x| *x *= len / n);
        let mut u = vec![0.0; g.coord_len()];
        let mut back = vec![0.0; g.coord_len()];
        g.exp_into(&mu, &v, &mut u);
        g.log_into(&mu, &u, &mut back).unwrap();
        for (a, b) in back.iter().zip(&v) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        prop_assert!((g.distance_raw(&mu, &u) - len).abs() < 1e-9);
    }

    #[test]
    fn distance_is_symmetric(
        kind in 0u8..3,
        a in prop::collection::vec(-2.0f64..2.0, 6),
        b in prop::collection::vec(-2.0f64..2.0, 6),
    ) {
        let g = geometry(kind, 5);
        prop_assume!(a.iter().take(g.raw_len()).any(|x| x.abs() > 1e-3));
        prop_assume!(b.iter().take(g.raw_len()).any(|x| x.abs() > 1e-3));
        let (x, y) = (lift(&g, &a), lift(&g, &b));
        prop_assert!((g.distance_raw(&x, &y) - g.distance_raw(&y, &x)).abs() < 1e-12);
        prop_assert!(g.distance_raw(&x, &x) < 1e-7);
    }

    #[test]
    fn mean_ignores_row_order(seed in 0u64..1000, shift in 1usize..20) {
        let factors = vec![Factor::new("a", ["x", "y"]), Factor::new("o", ["p", "q", "r"])];
        let inst = gen_decomposable(&SynthSpec::new(factors, GeometryKind::Sphere, 6), seed).unwrap();
        let set = add_noise(&inst.set, 0.05, 4, seed).unwrap();
        let n = set.len();
        let order: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let shuffled = set.select(&order).unwrap();
        let cfg = DecomposeConfig::default();
        let a = decompose_weighted(&set, &NoiseModel::uniform(&set), &cfg).unwrap();
        let b = decompose_weighted(&shuffled, &NoiseModel::uniform(&shuffled), &cfg).unwrap();
        for (x, y) in a.directions.iter().zip(b.directions.iter()) {
            for (p, q) in x.iter().zip(y) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn softmax_scores_are_tuple_distributions(seed in 0u64..500, t in 0.01f64..2.0) {
        let (set, anchors) = noisy_with_anchors(seed);
        let m = softmax_scores(&set, &anchors, t).unwrap();
        prop_assert!(m.is_normalized(&set));
        prop_assert!(m.scores.iter().all(|&p| p > 0.0 && p <= 1.0));
        // closer rows never score lower within a tuple
        for rows in set.groups().values() {
            for &i in rows {
                for &j in rows {
                    let z = set.labels()[i];
                    let a = anchors.for_tuple(&set.space, z).unwrap();
                    let (si, sj) = (set.geometry.similarity(set.rows().row(i), a), set.geometry.similarity(set.rows().row(j), a));
                    if si > sj {
                        prop_assert!(m.scores[i] >= m.scores[j]);
                    }
                }
            }
        }
        let s = sigmoid_scores(&set, &anchors, t, -1.0).unwrap();
        prop_assert!(s.is_normalized(&set));
    }

    #[test]
    fn group_report_identities(counts in prop::collection::btree_map("[a-e]", (0usize..30, 1usize..30), 1..6)) {
        let counts: BTreeMap<String, (usize, usize)> = counts
            .into_iter()
            .map(|(k, (h, n))| (k, (h.min(n), n)))
            .collect();
        let r = GroupReport::from_counts(&counts).unwrap();
        prop_assert_eq!(r.gap, r.avg - r.worst_group);
        prop_assert!(r.gap >= 0.0);
        prop_assert!(r.per_group.values().all(|&a| a >= r.worst_group));
        prop_assert!(r.worst_group <= r.sample_avg + 1e-15);
        let total: usize = counts.values().map(|c| c.1).sum();
        prop_assert_eq!(r.group_sizes.values().sum::<usize>(), total);
    }
}

fn noisy_with_anchors(seed: u64) -> (LabeledEmbeddingSet, Anchors) {
    let factors = vec![Factor::new("a", ["x", "y"]), Factor::new("o", ["p", "q"])];
    let inst = gen_decomposable(&SynthSpec::new(factors, GeometryKind::Sphere, 5), seed).unwrap();
    let set = add_noise(&inst.set, 0.2, 5, seed + 1).unwrap();
    (set, Anchors::from_set(&inst.set).unwrap())
}

#[test]
fn uniform_weights_in_flat_space_give_the_centroid() {
    let rows = RowMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]]).unwrap();
    let w = [0.5, 0.25, 0.25];
    let r = intrinsic_mean(&Geometry::euclidean(2), &rows, &w, &MeanConfig::default()).unwrap();
    assert!((r.mean.coords[0] - 1.0).abs() < 1e-12);
    assert!((r.mean.coords[1] - 0.75).abs() < 1e-12);
}
