//! Dense row-major storage and the handful of vector kernels the geometry code needs.

use crate::error::{Error, Result};

/// Rows processed per parallel work item. Partial sums are always combined in
/// chunk order so reductions are bitwise reproducible for any thread count.
pub(crate) const CHUNK_ROWS: usize = 512;

/// Row-major matrix of `f64` with a fixed row width.
#[derive(Clone, Debug, PartialEq)]
pub struct RowMatrix {
    data: Vec<f64>,
    width: usize,
}

impl RowMatrix {
    pub fn new(width: usize) -> Self {
        Self {
            data: Vec::new(),
            width,
        }
    }

    pub fn zeros(rows: usize, width: usize) -> Self {
        Self {
            data: vec![0.0; rows * width],
            width,
        }
    }

    pub fn with_capacity(rows: usize, width: usize) -> Self {
        Self {
            data: Vec::with_capacity(rows * width),
            width,
        }
    }

    pub fn from_vec(data: Vec<f64>, width: usize) -> Result<Self> {
        if width == 0 {
            return Err(Error::Config("row width must be positive".into()));
        }
        if data.len() % width != 0 {
            return Err(Error::Dimension {
                expected: width * (data.len() / width + 1),
                actual: data.len(),
            });
        }
        Ok(Self { data, width })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let width = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| Error::EmptyInput("no rows".into()))?;
        let mut m = Self::with_capacity(rows.len(), width);
        for r in rows {
            m.push(r.as_ref())?;
        }
        Ok(m)
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.width {
            return Err(Error::Dimension {
                expected: self.width,
                actual: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        if self.width == 0 {
            0
        } else {
            self.data.len() / self.width
        }
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.width)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// New matrix holding the listed rows, in the listed order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut m = Self::with_capacity(indices.len(), self.width);
        for &i in indices {
            m.data.extend_from_slice(self.row(i));
        }
        m
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn scale(alpha: f64, x: &mut [f64]) {
    for xi in x {
        *xi *= alpha;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn dist_euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Angle in radians between two vectors; zero when either is the zero vector.
pub fn angle_between(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let c = dot(a, b) / (na * nb);
    let perp: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let r = x / na - c * y / nb;
            r * r
        })
        .sum::<f64>()
        .sqrt();
    perp.atan2(c)
}
