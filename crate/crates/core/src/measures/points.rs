use crate::error::{Error, Result};

/// A list of points in ℝ^d stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    pub fn from_flat(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("point dimension must be positive".into()));
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(Error::Dimension {
                expected: dim,
                got: coords.len() % dim,
            });
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidMeasure("non-finite coordinate".into()));
        }
        Ok(PointSet { dim, coords })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(1, Vec::len);
        let mut coords = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: r.len(),
                });
            }
            coords.extend_from_slice(r);
        }
        PointSet::from_flat(dim, coords)
    }

    /// Points on the real line.
    pub fn line(xs: &[f64]) -> Self {
        PointSet::from_flat(1, xs.to_vec()).expect("finite 1-d coordinates")
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter().map(<[f64]>::to_vec).collect()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn radius(&self) -> f64 {
        self.iter().map(norm).fold(0.0, f64::max)
    }

    pub fn diameter(&self) -> f64 {
        let n = self.len();
        let mut best: f64 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                best = best.max(euclidean(self.point(i), self.point(j)));
            }
        }
        best
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn euclidean(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}
