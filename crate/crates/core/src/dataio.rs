//! On-disk formats: binary embedding files, TSV label files, JSON split and
//! decomposition files, and canonical JSON reports.
//!
//! Byte layouts are documented in `docs/formats.md`. Every writer goes
//! through a temporary file in the destination directory followed by a
//! rename, so readers never observe partial output.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::decompose::{Decomposition, Diagnostics};
use crate::error::{Error, Result};
use crate::linalg::RowMatrix;
use crate::manifold::{Geometry, GeometryKind, ManifoldPoint};
use crate::noise::NoiseMode;
use crate::space::{CompositionSpace, LabeledEmbeddingSet};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"GDE1";
pub const EMBEDDING_HEADER_LEN: usize = 13;
pub const DECOMPOSITION_FORMAT: &str = "geodecomp-decomposition";
pub const DECOMPOSITION_VERSION: u32 = 1;

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Raw rows of an embedding file promoted to `f64`. Lorentz files hold the
/// spatial coordinates only.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    pub kind: GeometryKind,
    pub rows: RowMatrix,
}

impl EmbeddingMatrix {
    /// Raw rows of manifold points; drops the time coordinate on the
    /// hyperboloid.
    pub fn from_points(g: &Geometry, points: &RowMatrix) -> Result<Self> {
        if points.width() != g.coord_len() {
            return Err(Error::Dimension {
                expected: g.coord_len(),
                actual: points.width(),
            });
        }
        let rows = match g.kind {
            GeometryKind::Lorentz => {
                let mut m = RowMatrix::with_capacity(points.len(), g.dim);
                for r in points.iter() {
                    m.push(&r[1..])?;
                }
                m
            }
            _ => points.clone(),
        };
        Ok(Self { kind: g.kind, rows })
    }

    pub fn dim(&self) -> usize {
        self.rows.width()
    }

    /// Geometry of the stored kind with this dimension; `curvature` applies
    /// to the hyperboloid only.
    pub fn geometry(&self, curvature: f64) -> Result<Geometry> {
        Geometry::new(self.kind, self.dim(), curvature)
    }

    /// Rows projected onto `g` (sphere rows are renormalized, Lorentz rows get
    /// their time coordinate).
    pub fn to_points(&self, g: &Geometry) -> Result<RowMatrix> {
        if self.rows.width() != g.raw_len() {
            return Err(Error::Dimension {
                expected: g.raw_len(),
                actual: self.rows.width(),
            });
        }
        let mut m = RowMatrix::with_capacity(self.rows.len(), g.coord_len());
        for (i, r) in self.rows.iter().enumerate() {
            let p = g.project_raw(r).map_err(|e| Error::Data {
                row: i,
                message: e.to_string(),
            })?;
            m.push(&p)?;
        }
        Ok(m)
    }
}

pub fn encode_embeddings(m: &EmbeddingMatrix) -> Result<Vec<u8>> {
    let n = u32::try_from(m.rows.len()).map_err(|_| Error::Format("too many rows".into()))?;
    let d = u32::try_from(m.rows.width()).map_err(|_| Error::Format("rows too wide".into()))?;
    let mut out = Vec::with_capacity(EMBEDDING_HEADER_LEN + 4 * m.rows.as_slice().len());
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.push(m.kind.as_byte());
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    for (i, r) in m.rows.iter().enumerate() {
        for &x in r {
            let f = x as f32;
            if !f.is_finite() {
                return Err(Error::Data {
                    row: i,
                    message: format!("value {x} is not representable as a finite float32"),
                });
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    if bytes.len() < EMBEDDING_HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != EMBEDDING_MAGIC {
            return Err(Error::Format("bad magic; not an embedding file".into()));
        }
        return Err(Error::Truncation {
            expected: EMBEDDING_HEADER_LEN,
            actual: bytes.len(),
        });
    }
    if &bytes[..4] != EMBEDDING_MAGIC {
        return Err(Error::Format("bad magic; not an embedding file".into()));
    }
    let kind = GeometryKind::from_byte(bytes[4])
        .ok_or_else(|| Error::Format(format!("unknown geometry byte {}", bytes[4])))?;
    let n = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let expected = n
        .checked_mul(d)
        .and_then(|x| x.checked_mul(4))
        .and_then(|x| x.checked_add(EMBEDDING_HEADER_LEN))
        .ok_or_else(|| Error::Format("header sizes overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::Truncation {
            expected,
            actual: bytes.len(),
        });
    }
    if n == 0 {
        return Err(Error::EmptyInput("embedding file has no rows".into()));
    }
    if d == 0 {
        return Err(Error::Format("embedding dimension is zero".into()));
    }
    let mut data = Vec::with_capacity(n * d);
    for (k, c) in bytes[EMBEDDING_HEADER_LEN..].chunks_exact(4).enumerate() {
        let f = f32::from_le_bytes(c.try_into().unwrap());
        if !f.is_finite() {
            return Err(Error::Data {
                row: k / d,
                message: format!("non-finite value at column {}", k % d),
            });
        }
        data.push(f as f64);
    }
    Ok(EmbeddingMatrix {
        kind,
        rows: RowMatrix::from_vec(data, d)?,
    })
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    decode_embeddings(&fs::read(path)?)
}

pub fn write_embeddings(m: &EmbeddingMatrix, path: &Path) -> Result<()> {
    write_atomic(path, &encode_embeddings(m)?)
}

/// Parsed label file before resolution against a space.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelTable {
    pub factor_names: Vec<String>,
    pub sample_ids: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl LabelTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Space with the primitives seen in this table, in order of first use.
    pub fn derive_space(&self) -> Result<CompositionSpace> {
        CompositionSpace::from_observed(&self.factor_names, &self.rows)
    }

    /// Tuple index of every row. Errors carry the 1-based file line.
    pub fn resolve(&self, space: &CompositionSpace) -> Result<Vec<usize>> {
        let names: Vec<&str> = space.factors().iter().map(|f| f.name.as_str()).collect();
        if names != self.factor_names {
            return Err(Error::Format(format!(
                "label columns {:?} do not match the factors {:?}",
                self.factor_names, names
            )));
        }
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut comps = Vec::with_capacity(r.len());
                for (f, name) in r.iter().enumerate() {
                    match space.lookup(f, name) {
                        Ok(p) => comps.push(p.index),
                        Err(Error::UnknownPrimitive { factor, name, .. }) => {
                            return Err(Error::UnknownPrimitive {
                                factor,
                                name,
                                line: Some(i + 2),
                            })
                        }
                        Err(e) => return Err(e),
                    }
                }
                space.tuple_index(&comps)
            })
            .collect()
    }
}

pub fn parse_labels(text: &str) -> Result<LabelTable> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Format("label file is empty".into()))?;
    let cols: Vec<&str> = header.trim_end_matches('\r').split('\t').collect();
    if cols.len() < 2 || cols[0] != "sample_id" {
        return Err(Error::Format(
            "label header must be `sample_id` followed by one column per factor".into(),
        ));
    }
    let factor_names: Vec<String> = cols[1..].iter().map(|s| s.to_string()).collect();
    if let Some(f) = factor_names.iter().find(|f| f.is_empty()) {
        return Err(Error::Format(format!("empty factor name {f:?} in header")));
    }
    let mut sample_ids = Vec::new();
    let mut rows = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        if fields.len() != cols.len() {
            return Err(Error::Data {
                row: sample_ids.len(),
                message: format!("line {} has {} fields, expected {}", i + 1, fields.len(), cols.len()),
            });
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Data {
                row: sample_ids.len(),
                message: format!("line {} has an empty field", i + 1),
            });
        }
        sample_ids.push(fields[0].to_string());
        rows.push(fields[1..].iter().map(|s| s.to_string()).collect());
    }
    Ok(LabelTable {
        factor_names,
        sample_ids,
        rows,
    })
}

pub fn read_label_table(path: &Path) -> Result<LabelTable> {
    parse_labels(&fs::read_to_string(path)?)
}

/// Sample ids and tuple indices of a label file resolved against `space`.
pub fn read_labels(path: &Path, space: &CompositionSpace) -> Result<(Vec<String>, Vec<usize>)> {
    let t = read_label_table(path)?;
    let labels = t.resolve(space)?;
    Ok((t.sample_ids, labels))
}

pub fn format_labels(space: &CompositionSpace, sample_ids: &[String], labels: &[usize]) -> String {
    let mut s = String::from("sample_id");
    for f in space.factors() {
        s.push('\t');
        s.push_str(&f.name);
    }
    s.push('\n');
    for (id, &t) in sample_ids.iter().zip(labels) {
        s.push_str(id);
        for n in space.tuple_names(t) {
            s.push('\t');
            s.push_str(&n);
        }
        s.push('\n');
    }
    s
}

pub fn write_labels(path: &Path, space: &CompositionSpace, sample_ids: &[String], labels: &[usize]) -> Result<()> {
    write_atomic(path, format_labels(space, sample_ids, labels).as_bytes())
}

/// Labeled set from an embedding file and its label file.
pub fn read_labeled_set(
    embeddings: &Path,
    labels: &Path,
    space: &CompositionSpace,
    geometry: &Geometry,
) -> Result<LabeledEmbeddingSet> {
    let m = read_embeddings(embeddings)?;
    let (ids, tuples) = read_labels(labels, space)?;
    if ids.len() != m.rows.len() {
        return Err(Error::Alignment {
            labels: ids.len(),
            rows: m.rows.len(),
        });
    }
    let rows = m.to_points(geometry)?;
    LabeledEmbeddingSet::new(*geometry, space.clone(), rows, tuples, ids)
}

pub fn write_labeled_set(set: &LabeledEmbeddingSet, embeddings: &Path, labels: &Path) -> Result<()> {
    write_embeddings(&EmbeddingMatrix::from_points(&set.geometry, set.rows())?, embeddings)?;
    write_labels(labels, &set.space, set.sample_ids(), set.labels())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct SplitRepr {
    seen_pairs: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    test_pairs: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    open_world: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    groups: Option<BTreeMap<String, String>>,
}

/// Seen tuples, test candidates and optional per-sample groups.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub seen: Vec<usize>,
    /// `None` in the open world, where every tuple is a candidate.
    pub test: Option<Vec<usize>>,
    pub groups: Option<BTreeMap<String, String>>,
}

impl Split {
    pub fn candidates(&self, space: &CompositionSpace) -> Vec<usize> {
        match &self.test {
            Some(t) => t.clone(),
            None => (0..space.len()).collect(),
        }
    }

    pub fn group_of(&self, sample_ids: &[String]) -> Vec<Option<String>> {
        sample_ids
            .iter()
            .map(|id| self.groups.as_ref().and_then(|g| g.get(id).cloned()))
            .collect()
    }
}

fn resolve_tuples(space: &CompositionSpace, tuples: &[Vec<String>]) -> Result<Vec<usize>> {
    let mut v = tuples.iter().map(|t| space.resolve(t)).collect::<Result<Vec<_>>>()?;
    v.sort_unstable();
    v.dedup();
    Ok(v)
}

pub fn parse_split(text: &str, space: &CompositionSpace) -> Result<Split> {
    let r: SplitRepr = serde_json::from_str(text)?;
    let seen = resolve_tuples(space, &r.seen_pairs)?;
    let test = match (r.open_world, r.test_pairs) {
        (true, _) => None,
        (false, Some(t)) => Some(resolve_tuples(space, &t)?),
        (false, None) => {
            return Err(Error::Format(
                "split needs `test_pairs` or `\"open_world\": true`".into(),
            ))
        }
    };
    Ok(Split {
        seen,
        test,
        groups: r.groups,
    })
}

pub fn read_split(path: &Path, space: &CompositionSpace) -> Result<Split> {
    parse_split(&fs::read_to_string(path)?, space)
}

pub fn format_split(split: &Split, space: &CompositionSpace) -> Result<String> {
    let names = |v: &[usize]| v.iter().map(|&t| space.tuple_names(t)).collect::<Vec<_>>();
    let r = SplitRepr {
        seen_pairs: names(&split.seen),
        test_pairs: split.test.as_deref().map(names),
        open_world: split.test.is_none(),
        groups: split.groups.clone(),
    };
    data_json(&serde_json::to_value(r)?)
}

pub fn write_split(path: &Path, split: &Split, space: &CompositionSpace) -> Result<()> {
    write_atomic(path, format_split(split, space)?.as_bytes())
}

fn encode_f32_block(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    B64.encode(bytes)
}

fn decode_f32_block(s: &str, expected: usize, what: &str) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(s)
        .map_err(|e| Error::Format(format!("{what}: invalid base64 ({e})")))?;
    if bytes.len() != 4 * expected {
        return Err(Error::Truncation {
            expected: 4 * expected,
            actual: bytes.len(),
        });
    }
    let v: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Format(format!("{what}: non-finite value")));
    }
    Ok(v)
}

#[derive(Serialize, Deserialize)]
struct GeometryRepr {
    kind: GeometryKind,
    dim: usize,
    curvature: f64,
    /// Absent when infinite.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    closeness_radius: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct DecompositionRepr {
    format: String,
    version: u32,
    geometry: GeometryRepr,
    space: CompositionSpace,
    seen: Vec<Vec<String>>,
    noise_mode: NoiseMode,
    #[serde(default)]
    temperature: Option<f64>,
    diagnostics: Value,
    mu: String,
    directions: String,
    denoised: String,
}

pub fn encode_decomposition(dec: &Decomposition) -> Result<String> {
    let g = dec.geometry;
    let repr = DecompositionRepr {
        format: DECOMPOSITION_FORMAT.into(),
        version: DECOMPOSITION_VERSION,
        geometry: GeometryRepr {
            kind: g.kind,
            dim: g.dim,
            curvature: g.curvature,
            closeness_radius: g.closeness_radius.is_finite().then_some(g.closeness_radius),
        },
        space: dec.space.clone(),
        seen: dec.seen.iter().map(|&t| dec.space.tuple_names(t)).collect(),
        noise_mode: dec.noise_mode,
        temperature: dec.temperature,
        diagnostics: serde_json::to_value(&dec.diagnostics)?,
        mu: encode_f32_block(&dec.mu.coords),
        directions: encode_f32_block(dec.directions.as_slice()),
        denoised: encode_f32_block(dec.denoised.as_slice()),
    };
    data_json(&serde_json::to_value(repr)?)
}

/// Parses a decomposition file. The base point is re-projected and the
/// directions are projected onto its tangent space after float32 rounding.
pub fn decode_decomposition(text: &str) -> Result<Decomposition> {
    let r: DecompositionRepr = serde_json::from_str(text)?;
    if r.format != DECOMPOSITION_FORMAT {
        return Err(Error::Format(format!("unexpected format tag {:?}", r.format)));
    }
    if r.version != DECOMPOSITION_VERSION {
        return Err(Error::Format(format!("unsupported version {}", r.version)));
    }
    let mut g = Geometry::new(r.geometry.kind, r.geometry.dim, r.geometry.curvature)?;
    g.closeness_radius = r.geometry.closeness_radius.unwrap_or(f64::INFINITY);
    let w = g.coord_len();
    let space = r.space;
    let mut mu = decode_f32_block(&r.mu, w, "mu")?;
    g.reproject_in_place(&mut mu);
    g.check_point(&mu)?;
    let p = space.num_primitives();
    let mut directions = RowMatrix::from_vec(decode_f32_block(&r.directions, p * w, "directions")?, w)?;
    for i in 0..p {
        g.project_tangent_in_place(&mu, directions.row_mut(i));
    }
    let seen = resolve_tuples(&space, &r.seen)?;
    // stored in tuple order; resolve_tuples sorts the same way
    let denoised = RowMatrix::from_vec(decode_f32_block(&r.denoised, seen.len() * w, "denoised")?, w)?;
    let diagnostics: Diagnostics = serde_json::from_value(r.diagnostics)?;
    Ok(Decomposition {
        geometry: g,
        space,
        mu: ManifoldPoint { coords: mu, geometry: g },
        directions,
        seen,
        denoised,
        noise_mode: r.noise_mode,
        temperature: r.temperature,
        diagnostics,
    })
}

pub fn write_decomposition(dec: &Decomposition, path: &Path) -> Result<()> {
    write_atomic(path, encode_decomposition(dec)?.as_bytes())
}

pub fn read_decomposition(path: &Path) -> Result<Decomposition> {
    decode_decomposition(&fs::read_to_string(path)?)
}

/// Which kind of anchor source a file holds, judged by its first bytes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FileKind {
    Embeddings,
    Json,
    Unknown,
}

pub fn sniff(path: &Path) -> Result<FileKind> {
    use std::io::Read;
    let mut f = fs::File::open(path)?;
    let mut buf = [0u8; 4];
    let mut n = 0;
    while n < 4 {
        let k = f.read(&mut buf[n..])?;
        if k == 0 {
            break;
        }
        n += k;
    }
    if n == 4 && &buf == EMBEDDING_MAGIC {
        return Ok(FileKind::Embeddings);
    }
    match buf[..n].iter().find(|b| !b.is_ascii_whitespace()) {
        Some(b'{') => Ok(FileKind::Json),
        _ => Ok(FileKind::Unknown),
    }
}

fn write_json_string(out: &mut String, s: &str) {
    // serde_json's escaping of a plain string cannot fail
    out.push_str(&serde_json::to_string(s).expect("string serialization"));
}

fn write_value(out: &mut String, v: &Value, pretty: bool, depth: usize) {
    let indent = |out: &mut String, d: usize| {
        if pretty {
            out.push('\n');
            for _ in 0..d {
                out.push_str("  ");
            }
        }
    };
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                let _ = write!(out, "{i}");
            } else if let Some(u) = n.as_u64() {
                let _ = write!(out, "{u}");
            } else {
                let f = n.as_f64().unwrap_or(f64::NAN);
                if f.is_finite() {
                    let s = format!("{f:.6}");
                    // avoid "-0.000000"
                    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
                        out.push_str("0.000000");
                    } else {
                        out.push_str(&s);
                    }
                } else {
                    out.push_str("null");
                }
            }
        }
        Value::String(s) => write_json_string(out, s),
        Value::Array(a) => {
            if a.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push('[');
            for (i, x) in a.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                    if !pretty {
                        out.push(' ');
                    }
                }
                indent(out, depth + 1);
                write_value(out, x, pretty, depth + 1);
            }
            indent(out, depth);
            out.push(']');
        }
        Value::Object(m) => {
            if m.is_empty() {
                out.push_str("{}");
                return;
            }
            let sorted: BTreeMap<&String, &Value> = m.iter().collect();
            out.push('{');
            for (i, (k, x)) in sorted.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                    if !pretty {
                        out.push(' ');
                    }
                }
                indent(out, depth + 1);
                write_json_string(out, k);
                out.push_str(": ");
                write_value(out, x, pretty, depth + 1);
            }
            indent(out, depth);
            out.push('}');
        }
    }
}

/// Sorted keys with floats at full round-trip precision, for files that are
/// read back.
pub fn data_json(v: &Value) -> Result<String> {
    let mut s = serde_json::to_string(v)?;
    s.push('\n');
    Ok(s)
}

/// Sorted keys, floats with six decimals, non-finite floats as `null`.
pub fn canonical_json(v: &Value, pretty: bool) -> Result<String> {
    let mut s = String::new();
    write_value(&mut s, v, pretty, 0);
    s.push('\n');
    Ok(s)
}

/// Canonical JSON of any serializable report.
pub fn report_json<T: Serialize>(report: &T, pretty: bool) -> Result<String> {
    canonical_json(&serde_json::to_value(report)?, pretty)
}

pub fn write_report<T: Serialize>(report: &T, path: &Path) -> Result<()> {
    write_atomic(path, report_json(report, false)?.as_bytes())
}

/// Projected coordinates as CSV with an `id` column.
pub fn format_coords_csv(ids: &[String], coords: &RowMatrix) -> String {
    let mut s = String::from("id");
    for k in 0..coords.width() {
        let _ = write!(s, ",pc{}", k + 1);
    }
    s.push('\n');
    for (id, r) in ids.iter().zip(coords.iter()) {
        if id.contains([',', '"', '\n']) {
            let _ = write!(s, "\"{}\"", id.replace('"', "\"\""));
        } else {
            s.push_str(id);
        }
        for x in r {
            let _ = write!(s, ",{x:.9}");
        }
        s.push('\n');
    }
    s
}

/// Map from sample id to row index.
pub fn id_index(ids: &[String]) -> HashMap<&str, usize> {
    ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
}
