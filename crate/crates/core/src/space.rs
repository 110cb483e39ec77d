//! Composite label spaces `Z = Z_1 x ... x Z_s` and labeled embedding sets.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::RowMatrix;
use crate::manifold::Geometry;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    pub primitives: Vec<String>,
}

impl Factor {
    pub fn new<S: Into<String>, P: Into<String>>(name: S, primitives: impl IntoIterator<Item = P>) -> Self {
        Self {
            name: name.into(),
            primitives: primitives.into_iter().map(Into::into).collect(),
        }
    }
}

/// Reference to one primitive: factor index plus index within the factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PrimitiveId {
    pub factor: usize,
    pub index: usize,
}

/// Cartesian product of named factors. Tuples are addressed by a flat
/// mixed-radix index with the last factor varying fastest.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "SpaceRepr", into = "SpaceRepr")]
pub struct CompositionSpace {
    factors: Vec<Factor>,
    lookup: Vec<HashMap<String, usize>>,
    offsets: Vec<usize>,
    strides: Vec<usize>,
    size: usize,
}

#[derive(Serialize, Deserialize)]
struct SpaceRepr {
    factors: Vec<Factor>,
}

impl TryFrom<SpaceRepr> for CompositionSpace {
    type Error = Error;
    fn try_from(r: SpaceRepr) -> Result<Self> {
        CompositionSpace::new(r.factors)
    }
}

impl From<CompositionSpace> for SpaceRepr {
    fn from(s: CompositionSpace) -> Self {
        SpaceRepr { factors: s.factors }
    }
}

impl PartialEq for CompositionSpace {
    fn eq(&self, other: &Self) -> bool {
        self.factors == other.factors
    }
}

impl CompositionSpace {
    pub fn new(factors: Vec<Factor>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Config("composition space needs at least one factor".into()));
        }
        let mut lookup = Vec::with_capacity(factors.len());
        let mut offsets = Vec::with_capacity(factors.len());
        let mut off = 0;
        for f in &factors {
            if f.primitives.is_empty() {
                return Err(Error::Config(format!("factor {:?} has no primitives", f.name)));
            }
            let mut m = HashMap::with_capacity(f.primitives.len());
            for (i, p) in f.primitives.iter().enumerate() {
                if p.is_empty() {
                    return Err(Error::Config(format!("empty primitive name in factor {:?}", f.name)));
                }
                if m.insert(p.clone(), i).is_some() {
                    return Err(Error::Config(format!(
                        "primitive {p:?} appears twice in factor {:?}",
                        f.name
                    )));
                }
            }
            lookup.push(m);
            offsets.push(off);
            off += f.primitives.len();
        }
        let mut strides = vec![1usize; factors.len()];
        let mut size: usize = 1;
        for i in (0..factors.len()).rev() {
            strides[i] = size;
            size = size
                .checked_mul(factors[i].primitives.len())
                .ok_or_else(|| Error::Config("composition space too large".into()))?;
        }
        Ok(Self {
            factors,
            lookup,
            offsets,
            strides,
            size,
        })
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn factor_size(&self, i: usize) -> usize {
        self.factors[i].primitives.len()
    }

    /// `|Z|`.
    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Total number of primitives over all factors.
    pub fn num_primitives(&self) -> usize {
        self.factors.iter().map(|f| f.primitives.len()).sum()
    }

    /// Row of a primitive in a stacked direction matrix.
    #[inline]
    pub fn primitive_row(&self, p: PrimitiveId) -> usize {
        self.offsets[p.factor] + p.index
    }

    pub fn primitive_at_row(&self, row: usize) -> PrimitiveId {
        let factor = self.offsets.iter().rposition(|&o| o <= row).unwrap_or(0);
        PrimitiveId {
            factor,
            index: row - self.offsets[factor],
        }
    }

    pub fn primitives(&self) -> impl Iterator<Item = PrimitiveId> + '_ {
        self.factors.iter().enumerate().flat_map(|(f, fac)| {
            (0..fac.primitives.len()).map(move |index| PrimitiveId { factor: f, index })
        })
    }

    pub fn primitive_name(&self, p: PrimitiveId) -> &str {
        &self.factors[p.factor].primitives[p.index]
    }

    /// `factor:primitive`, used in messages.
    pub fn qualified_name(&self, p: PrimitiveId) -> String {
        format!("{}:{}", self.factors[p.factor].name, self.primitive_name(p))
    }

    pub fn lookup(&self, factor: usize, name: &str) -> Result<PrimitiveId> {
        self.lookup
            .get(factor)
            .and_then(|m| m.get(name))
            .map(|&index| PrimitiveId { factor, index })
            .ok_or_else(|| Error::UnknownPrimitive {
                factor: self
                    .factors
                    .get(factor)
                    .map(|f| f.name.clone())
                    .unwrap_or_else(|| format!("#{factor}")),
                name: name.to_string(),
                line: None,
            })
    }

    pub fn find_factor(&self, name: &str) -> Option<usize> {
        self.factors.iter().position(|f| f.name == name)
    }

    pub fn tuple_index(&self, components: &[usize]) -> Result<usize> {
        if components.len() != self.factors.len() {
            return Err(Error::Dimension {
                expected: self.factors.len(),
                actual: components.len(),
            });
        }
        let mut flat = 0;
        for (i, &c) in components.iter().enumerate() {
            if c >= self.factor_size(i) {
                return Err(Error::UnknownPrimitive {
                    factor: self.factors[i].name.clone(),
                    name: format!("#{c}"),
                    line: None,
                });
            }
            flat += c * self.strides[i];
        }
        Ok(flat)
    }

    /// Component indices of a flat tuple index.
    pub fn components(&self, tuple: usize) -> Vec<usize> {
        (0..self.factors.len())
            .map(|i| (tuple / self.strides[i]) % self.factor_size(i))
            .collect()
    }

    #[inline]
    pub fn component(&self, tuple: usize, factor: usize) -> usize {
        (tuple / self.strides[factor]) % self.factor_size(factor)
    }

    pub fn tuple_primitives(&self, tuple: usize) -> impl Iterator<Item = PrimitiveId> + '_ {
        (0..self.factors.len()).map(move |f| PrimitiveId {
            factor: f,
            index: self.component(tuple, f),
        })
    }

    pub fn resolve<S: AsRef<str>>(&self, names: &[S]) -> Result<usize> {
        if names.len() != self.factors.len() {
            return Err(Error::Dimension {
                expected: self.factors.len(),
                actual: names.len(),
            });
        }
        let mut comps = Vec::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            comps.push(self.lookup(i, n.as_ref())?.index);
        }
        self.tuple_index(&comps)
    }

    pub fn tuple_names(&self, tuple: usize) -> Vec<String> {
        self.tuple_primitives(tuple)
            .map(|p| self.primitive_name(p).to_string())
            .collect()
    }

    /// Human-readable tuple label, e.g. `(red, car)`.
    pub fn tuple_label(&self, tuple: usize) -> String {
        format!("({})", self.tuple_names(tuple).join(", "))
    }

    /// Space whose factors hold the primitives observed in `rows`, in order of
    /// first appearance.
    pub fn from_observed<S: AsRef<str>>(factor_names: &[S], rows: &[Vec<String>]) -> Result<Self> {
        let mut factors: Vec<Factor> = factor_names
            .iter()
            .map(|n| Factor::new(n.as_ref(), Vec::<String>::new()))
            .collect();
        let mut seen: Vec<HashMap<&str, ()>> = vec![HashMap::new(); factors.len()];
        for r in rows {
            if r.len() != factors.len() {
                return Err(Error::Dimension {
                    expected: factors.len(),
                    actual: r.len(),
                });
            }
            for (i, p) in r.iter().enumerate() {
                if seen[i].insert(p.as_str(), ()).is_none() {
                    factors[i].primitives.push(p.clone());
                }
            }
        }
        Self::new(factors)
    }

    /// The same space with factors listed in `order`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        Self::new(order.iter().map(|&i| self.factors[i].clone()).collect())
    }
}

/// Embeddings with one composite label and one sample identifier per row.
#[derive(Clone, Debug)]
pub struct LabeledEmbeddingSet {
    pub geometry: Geometry,
    pub space: CompositionSpace,
    rows: RowMatrix,
    labels: Vec<usize>,
    sample_ids: Vec<String>,
}

impl LabeledEmbeddingSet {
    pub fn new(
        geometry: Geometry,
        space: CompositionSpace,
        rows: RowMatrix,
        labels: Vec<usize>,
        sample_ids: Vec<String>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("labeled embedding set has no rows".into()));
        }
        if rows.width() != geometry.coord_len() {
            return Err(Error::Dimension {
                expected: geometry.coord_len(),
                actual: rows.width(),
            });
        }
        if labels.len() != rows.len() {
            return Err(Error::Alignment {
                labels: labels.len(),
                rows: rows.len(),
            });
        }
        if sample_ids.len() != rows.len() {
            return Err(Error::Alignment {
                labels: sample_ids.len(),
                rows: rows.len(),
            });
        }
        for (i, r) in rows.iter().enumerate() {
            geometry.check_point(r).map_err(|e| Error::Data {
                row: i,
                message: e.to_string(),
            })?;
        }
        if let Some(i) = labels.iter().position(|&l| l >= space.len()) {
            return Err(Error::Data {
                row: i,
                message: format!("label index {} outside a space of {} tuples", labels[i], space.len()),
            });
        }
        Ok(Self {
            geometry,
            space,
            rows,
            labels,
            sample_ids,
        })
    }

    /// Sample ids default to the row index.
    pub fn with_default_ids(geometry: Geometry, space: CompositionSpace, rows: RowMatrix, labels: Vec<usize>) -> Result<Self> {
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        Self::new(geometry, space, rows, labels, ids)
    }

    pub fn rows(&self) -> &RowMatrix {
        &self.rows
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row indices of each labeled tuple, tuples in increasing order and rows
    /// in file order.
    pub fn groups(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut g: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in self.labels.iter().enumerate() {
            g.entry(l).or_default().push(i);
        }
        g
    }

    /// Sorted tuples with at least one row (`Z'`).
    pub fn seen_tuples(&self) -> Vec<usize> {
        self.groups().into_keys().collect()
    }

    /// Subset with the listed rows.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(
            self.geometry,
            self.space.clone(),
            self.rows.select(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            indices.iter().map(|&i| self.sample_ids[i].clone()).collect(),
        )
    }

    /// Same rows re-labeled in a permuted factor order.
    pub fn permute_factors(&self, order: &[usize]) -> Result<Self> {
        let space = self.space.permuted(order)?;
        let labels = self
            .labels
            .iter()
            .map(|&t| {
                let c = self.space.components(t);
                space.tuple_index(&order.iter().map(|&i| c[i]).collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.geometry, space, self.rows.clone(), labels, self.sample_ids.clone())
    }
}
