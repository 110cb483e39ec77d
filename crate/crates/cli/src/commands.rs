use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use geodecomp::dataio::{
    self, read_decomposition, read_embeddings, read_label_table, read_split, write_atomic, FileKind, Split,
};
use geodecomp::eval::{self, BiasGrid, ClassifierBank};
use geodecomp::karcher::{self, MeanSummary};
use geodecomp::noise::{self, TuneConfig, TuneObjective};
use geodecomp::synthlab::{self, SynthSpec};
use geodecomp::{
    Anchors, CompositionSpace, DecomposeConfig, Decomposition, Error, Geometry, LabeledEmbeddingSet, MeanConfig,
    NoiseMode, Result, RowMatrix,
};
use serde_json::{json, Value};

use crate::{
    AnchorArgs, ClassifyArgs, DecomposeArgs, GeometryArgs, MeanArgs, Method, Objective, ProjectArgs, ProjectWhat,
    RobustnessArgs, SynthArgs, Timer, TuneArgs, World,
};

fn geometry_for(m: &dataio::EmbeddingMatrix, args: &GeometryArgs) -> Result<Geometry> {
    Geometry::new(args.geometry.unwrap_or(m.kind), m.dim(), args.curvature)
}

fn read_space(path: &Path) -> Result<CompositionSpace> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Labeled set from an embedding file and a label file. The space comes from
/// `space` when given, otherwise from the labels themselves.
fn load_set(
    embeddings: &Path,
    labels: &Path,
    space: Option<&CompositionSpace>,
    geometry: &GeometryArgs,
) -> Result<LabeledEmbeddingSet> {
    let m = read_embeddings(embeddings)?;
    let g = geometry_for(&m, geometry)?;
    load_with(&m, labels, space, &g)
}

fn load_with(
    m: &dataio::EmbeddingMatrix,
    labels: &Path,
    space: Option<&CompositionSpace>,
    g: &Geometry,
) -> Result<LabeledEmbeddingSet> {
    let table = read_label_table(labels)?;
    if table.len() != m.rows.len() {
        return Err(Error::Alignment {
            labels: table.len(),
            rows: m.rows.len(),
        });
    }
    let space = match space {
        Some(s) => s.clone(),
        None => table.derive_space()?,
    };
    let tuples = table.resolve(&space)?;
    let rows = m.to_points(g)?;
    LabeledEmbeddingSet::new(*g, space, rows, tuples, table.sample_ids)
}

/// Test rows in the geometry of a stored decomposition.
fn load_queries(dec: &Decomposition, embeddings: &Path, labels: &Path) -> Result<LabeledEmbeddingSet> {
    let m = read_embeddings(embeddings)?;
    if m.kind != dec.geometry.kind {
        return Err(Error::Config(format!(
            "test embeddings are {} but the decomposition is {}",
            m.kind, dec.geometry.kind
        )));
    }
    load_with(&m, labels, Some(&dec.space), &dec.geometry)
}

fn load_anchors(args: &AnchorArgs, space: &CompositionSpace, g: &Geometry) -> Result<Option<Anchors>> {
    let Some(path) = &args.anchors else {
        return Ok(None);
    };
    let anchors = match dataio::sniff(path)? {
        FileKind::Json => Anchors::from_decomposition(&read_decomposition(path)?)?,
        FileKind::Embeddings => {
            let labels = args.anchor_labels.as_deref().ok_or_else(|| {
                Error::Config("anchor embedding files need --anchor-labels".into())
            })?;
            let m = read_embeddings(path)?;
            if m.kind != g.kind {
                return Err(Error::Config(format!("anchors are {} but the data is {}", m.kind, g.kind)));
            }
            Anchors::from_set(&load_with(&m, labels, Some(space), g)?)?
        }
        FileKind::Unknown => {
            return Err(Error::Format(format!(
                "{} is neither an embedding file nor a decomposition file",
                path.display()
            )))
        }
    };
    let ag = anchors.geometry();
    if (ag.kind, ag.dim, ag.curvature) != (g.kind, g.dim, g.curvature) {
        return Err(Error::Config("anchor geometry differs from the data geometry".into()));
    }
    Ok(Some(anchors))
}

fn parse_weights(spec: &str, n: usize) -> Result<Vec<f64>> {
    if spec == "uniform" {
        return Ok(karcher::uniform_weights(n));
    }
    let text = fs::read_to_string(spec)?;
    let w = text
        .split_whitespace()
        .enumerate()
        .map(|(i, s)| {
            s.parse::<f64>().map_err(|_| Error::Data {
                row: i,
                message: format!("weight {s:?} is not a number"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if w.len() != n {
        return Err(Error::Alignment { labels: w.len(), rows: n });
    }
    Ok(w)
}

pub fn mean(a: &MeanArgs, seed: u64, timer: &mut Timer) -> Result<Value> {
    let m = read_embeddings(&a.input)?;
    let g = geometry_for(&m, &a.geometry)?;
    let rows = m.to_points(&g)?;
    let weights = parse_weights(&a.weights, rows.len())?;
    timer.lap("load");
    let cfg = MeanConfig {
        learning_rate: a.learning_rate,
        tolerance: a.tol,
        max_iters: a.max_iters,
        subsample: a.subsample,
        seed,
    };
    let r = karcher::intrinsic_mean(&g, &rows, &weights, &cfg)?;
    timer.lap("mean");
    let mut v = serde_json::to_value(MeanSummary::from(&r))?;
    v["mean"] = json!(r.mean.coords);
    v["geometry"] = serde_json::to_value(g)?;
    v["num_points"] = json!(rows.len());
    Ok(v)
}

pub fn decompose(a: &DecomposeArgs, seed: u64, timer: &mut Timer) -> Result<Value> {
    let space = a.space.as_deref().map(read_space).transpose()?;
    let set = load_set(&a.embeddings, &a.labels, space.as_ref(), &a.geometry)?;
    let anchors = load_anchors(&a.anchors, &set.space, &set.geometry)?;
    timer.lap("load");
    let t = a.temperature.unwrap_or(1.0);
    let noise = noise::noise_for(a.noise, &set, anchors.as_ref(), t, a.bias)?;
    let cfg = DecomposeConfig {
        mean: MeanConfig {
            tolerance: a.mean_tol,
            seed,
            ..MeanConfig::default()
        },
    };
    let dec = match a.method {
        Method::Simple => geodecomp::decompose_simple(&set, &cfg)?,
        Method::Weighted => geodecomp::decompose_weighted(&set, &noise, &cfg)?,
        Method::Sparse => geodecomp::decompose_sparse(&set, &noise, &cfg)?,
    };
    timer.lap("decompose");
    let res = dec.residuals(&set, &noise)?;
    dataio::write_decomposition(&dec, &a.out)?;
    timer.lap("write");
    Ok(json!({
        "out": a.out.display().to_string(),
        "geometry": dec.geometry.kind,
        "noise_mode": dec.noise_mode,
        "temperature": dec.temperature,
        "num_primitives": dec.space.num_primitives(),
        "num_tuples": dec.space.len(),
        "weighted_residual": res.weighted_total,
        "subspace_rank": dec.subspace_rank(),
        "rank_bound": dec.rank_bound(),
        "centered": dec.check_centering(),
        "diagnostics": serde_json::to_value(&dec.diagnostics)?,
    }))
}

fn parse_grid(s: &str) -> Result<BiasGrid> {
    match s {
        "exact" => Ok(BiasGrid::Exact),
        "uniform" => Ok(BiasGrid::uniform()),
        list => list
            .split(',')
            .map(|x| {
                let x = x.trim();
                match x {
                    "inf" | "+inf" => Ok(f64::INFINITY),
                    "-inf" => Ok(f64::NEG_INFINITY),
                    _ => x
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad bias value {x:?}"))),
                }
            })
            .collect::<Result<Vec<_>>>()
            .map(BiasGrid::Explicit),
    }
}

/// Seen tuples and classification candidates for the chosen world.
fn seen_and_candidates(dec: &Decomposition, split: Option<&Split>, world: World) -> Result<(Vec<usize>, Vec<usize>)> {
    let seen = split.map(|s| s.seen.clone()).unwrap_or_else(|| dec.seen.clone());
    let candidates = match world {
        World::Open => (0..dec.space.len()).collect(),
        World::Closed => {
            let test = split.and_then(|s| s.test.as_ref()).ok_or_else(|| {
                Error::Config("the closed world needs a split file with test_pairs".into())
            })?;
            let all: BTreeSet<usize> = seen.iter().chain(test).copied().collect();
            all.into_iter().collect()
        }
    };
    Ok((seen, candidates))
}

pub fn classify(a: &ClassifyArgs, timer: &mut Timer) -> Result<Value> {
    let grid = parse_grid(&a.bias_grid)?;
    let dec = read_decomposition(&a.decomposition)?;
    let split = a.seen.as_deref().map(|p| read_split(p, &dec.space)).transpose()?;
    let queries = load_queries(&dec, &a.test_embeddings, &a.test_labels)?;
    timer.lap("load");
    let (seen, candidates) = seen_and_candidates(&dec, split.as_ref(), a.world)?;
    let bank = ClassifierBank::from_decomposition(&dec, &candidates)?;
    let report = eval::czsl_evaluate(&bank, &dec.space, queries.rows(), queries.labels(), &seen, &grid)?;
    timer.lap("evaluate");
    let mut v = serde_json::to_value(&report)?;
    v["world"] = json!(match a.world {
        World::Closed => "closed",
        World::Open => "open",
    });
    v["num_candidates"] = json!(candidates.len());
    Ok(v)
}

fn groups_for(set: &LabeledEmbeddingSet, split: Option<&Split>) -> Vec<Option<String>> {
    match split.filter(|s| s.groups.is_some()) {
        Some(s) => s.group_of(set.sample_ids()),
        None => set.labels().iter().map(|&t| Some(set.space.tuple_label(t))).collect(),
    }
}

pub fn robustness(a: &RobustnessArgs, timer: &mut Timer) -> Result<Value> {
    let dec = read_decomposition(&a.decomposition)?;
    let split = a.split.as_deref().map(|p| read_split(p, &dec.space)).transpose()?;
    let queries = load_queries(&dec, &a.test_embeddings, &a.test_labels)?;
    timer.lap("load");
    let f = match &a.factor {
        Some(name) => dec
            .space
            .find_factor(name)
            .ok_or_else(|| Error::Config(format!("unknown factor {name:?}")))?,
        None => dec.space.num_factors() - 1,
    };
    let bank = ClassifierBank::primitives_from_decomposition(&dec, f)?;
    let truth: Vec<usize> = queries.labels().iter().map(|&t| dec.space.component(t, f)).collect();
    let groups = groups_for(&queries, split.as_ref());
    let report = eval::group_evaluate(&bank, queries.rows(), &truth, &groups)?;
    timer.lap("evaluate");
    let mut v = serde_json::to_value(&report)?;
    v["factor"] = json!(dec.space.factors()[f].name);
    Ok(v)
}

pub fn tune(a: &TuneArgs, seed: u64, timer: &mut Timer) -> Result<Value> {
    let space = a.space.as_deref().map(read_space).transpose()?;
    let train = load_set(&a.train, &a.train_labels, space.as_ref(), &a.geometry)?;
    let val = load_set(&a.val, &a.val_labels, Some(&train.space), &a.geometry)?;
    if val.geometry != train.geometry {
        return Err(Error::Config("train and validation geometries differ".into()));
    }
    let anchors = load_anchors(&a.anchors, &train.space, &train.geometry)?
        .ok_or_else(|| Error::Config("tune-temp needs --anchors".into()))?;
    let split = a.split.as_deref().map(|p| read_split(p, &train.space)).transpose()?;
    timer.lap("load");
    let objective = match a.objective {
        Objective::Auc => TuneObjective::Auc {
            candidates: match a.world {
                World::Open => None,
                World::Closed => {
                    let s = split
                        .as_ref()
                        .and_then(|s| s.test.as_ref().map(|t| (s, t)))
                        .ok_or_else(|| Error::Config("the closed world needs a split file with test_pairs".into()))?;
                    let all: BTreeSet<usize> = s.0.seen.iter().chain(s.1).copied().collect();
                    Some(all.into_iter().collect())
                }
            },
        },
        Objective::WorstGroup => TuneObjective::WorstGroup {
            groups: groups_for(&val, split.as_ref()),
        },
    };
    let grid: Vec<f64> = a
        .grid
        .clone()
        .unwrap_or_else(|| noise::DEFAULT_TEMPERATURE_GRID.to_vec());
    let cfg = TuneConfig {
        mode: a.noise,
        bias: a.bias,
        decompose: DecomposeConfig {
            mean: MeanConfig {
                seed,
                ..MeanConfig::default()
            },
        },
        uniform_baseline: true,
    };
    let r = noise::tune_temperature(&train, &val, &anchors, &grid, &objective, &cfg)?;
    timer.lap("tune");
    Ok(serde_json::to_value(&r)?)
}

pub fn synth(a: &SynthArgs, seed: u64, timer: &mut Timer) -> Result<Value> {
    let spec: SynthSpec = serde_json::from_str(&fs::read_to_string(&a.spec)?)?;
    let seed = spec.seed.unwrap_or(seed);
    let inst = synthlab::generate(&spec, seed)?;
    timer.lap("generate");
    dataio::write_labeled_set(&inst.set, &a.out_embeddings, &a.out_labels)?;
    if let Some(p) = &a.out_truth {
        dataio::write_decomposition(&inst.truth, p)?;
    }
    let seen = inst.set.seen_tuples();
    if let Some(p) = &a.out_split {
        let hidden: Vec<usize> = (0..inst.set.space.len()).filter(|t| !seen.contains(t)).collect();
        let split = Split {
            seen: seen.clone(),
            test: Some(hidden),
            groups: None,
        };
        dataio::write_split(p, &split, &inst.set.space)?;
    }
    timer.lap("write");
    Ok(json!({
        "seed": seed,
        "geometry": inst.set.geometry.kind,
        "dim": inst.set.geometry.dim,
        "num_rows": inst.set.len(),
        "num_tuples": inst.set.space.len(),
        "num_seen": seen.len(),
        "space": serde_json::to_value(&inst.set.space)?,
    }))
}

pub fn project(a: &ProjectArgs, timer: &mut Timer) -> Result<Value> {
    let dec = read_decomposition(&a.decomposition)?;
    timer.lap("load");
    let w = dec.geometry.coord_len();
    let mut rows = RowMatrix::new(w);
    let mut ids = Vec::new();
    if a.what != ProjectWhat::Tuples {
        for (i, r) in dec.directions.iter().enumerate() {
            ids.push(dec.space.qualified_name(dec.space.primitive_at_row(i)));
            rows.push(r)?;
        }
    }
    if a.what != ProjectWhat::Directions {
        for (&t, r) in dec.seen.iter().zip(dec.denoised.iter()) {
            ids.push(dec.space.tuple_label(t));
            rows.push(r)?;
        }
    }
    let p = eval::pca_rows(&rows, a.dim as usize)?;
    timer.lap("project");
    write_atomic(&a.out, dataio::format_coords_csv(&ids, &p.coords).as_bytes())?;
    Ok(json!({
        "out": a.out.display().to_string(),
        "num_rows": ids.len(),
        "dim": a.dim,
        "rank": p.rank,
        "explained_variance": p.explained_variance,
        "explained_ratio": p.explained_ratio,
        "diagnostics": p.diagnostics,
    }))
}

/// Flag combinations that clap cannot express, checked before any I/O.
pub fn usage_problem(c: &crate::Command) -> Option<String> {
    use crate::Command::*;
    match c {
        Decompose(a) => {
            if a.noise != NoiseMode::Uniform {
                if a.anchors.anchors.is_none() {
                    return Some(format!("--noise {} requires --anchors", a.noise));
                }
                if a.temperature.is_none() {
                    return Some(format!("--noise {} requires --temperature", a.noise));
                }
            }
            if a.method == Method::Simple && a.noise != NoiseMode::Uniform {
                return Some("--method simple only supports --noise uniform".into());
            }
            None
        }
        TuneTemp(a) => {
            if a.noise == NoiseMode::Uniform {
                return Some("tune-temp needs --noise softmax or sigmoid".into());
            }
            if a.anchors.anchors.is_none() {
                return Some("tune-temp requires --anchors".into());
            }
            if a.objective == Objective::WorstGroup && a.world == World::Closed {
                return Some("--world applies to the auc objective only".into());
            }
            None
        }
        Classify(a) => (a.world == World::Closed && a.seen.is_none())
            .then(|| "--world closed requires --seen <split file>".to_string()),
        _ => None,
    }
}
