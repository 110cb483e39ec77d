//! Shared workloads for the benchmarks.

use geodecomp::synthlab::{gen_workload, WorkloadSpec};
use geodecomp::LabeledEmbeddingSet;

/// Sphere workload with `rows` samples in dimension `dim` over roughly
/// `0.93 * rows` distinct attribute-object tuples.
pub fn workload(rows: usize, dim: usize, seed: u64) -> LabeledEmbeddingSet {
    let tuples = (rows as f64 * 0.93).round() as usize;
    let side = ((tuples as f64).sqrt() * 1.1).ceil() as usize;
    let spec = WorkloadSpec {
        n_attr: side,
        n_obj: side,
        tuples,
        rows,
        dim,
        sigma: 0.01,
    };
    gen_workload(&spec, seed).expect("valid workload")
}
