//! Source and target measures.
//!
//! Targets are finitely supported [`DiscreteMeasure`]s carrying an extra
//! strictly positive reference vector σ used by the entropic transforms.
//! Sources are represented by a [`SourceQuadrature`] (nodes and weights).
//! The [`transport`] submodule holds the exact discrete solvers used as
//! ground truth.

mod points;
mod quadrature;
pub mod transport;

pub use points::{euclidean, norm, PointSet};
pub use quadrature::{
    gauss_legendre, sample_source, Distribution, QuadratureKind, Scheme, SourceQuadrature,
    SourceSpec,
};
pub use transport::{w1_discrete, wp_1d, wp_discrete, wp_value, TransportResult};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finitely supported probability measure with a reference measure σ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureRepr", into = "MeasureRepr")]
pub struct DiscreteMeasure {
    points: PointSet,
    weights: Vec<f64>,
    sigma: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MeasureRepr {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma: Option<Vec<f64>>,
}

impl TryFrom<MeasureRepr> for DiscreteMeasure {
    type Error = Error;

    fn try_from(r: MeasureRepr) -> Result<Self> {
        let points = PointSet::from_rows(&r.points)?;
        make_discrete(points, &r.weights, r.sigma.as_deref())
    }
}

impl From<DiscreteMeasure> for MeasureRepr {
    fn from(m: DiscreteMeasure) -> Self {
        MeasureRepr {
            points: m.points.to_rows(),
            weights: m.weights,
            sigma: Some(m.sigma),
        }
    }
}

impl DiscreteMeasure {
    pub fn points(&self) -> &PointSet {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.points.point(i)
    }

    /// Radius of the smallest origin-centred ball containing the support.
    pub fn radius(&self) -> f64 {
        self.points.radius()
    }

    /// Diameter of the support.
    pub fn diameter(&self) -> f64 {
        self.points.diameter()
    }

    /// Same atoms and weights, reference measure replaced by `sigma`.
    pub fn with_sigma(&self, sigma: &[f64]) -> Result<Self> {
        make_discrete(self.points.clone(), &self.weights, Some(sigma))
    }

    /// Same atoms and weights, reference measure equal to the weights.
    ///
    /// Requires strictly positive weights.
    pub fn with_self_reference(&self) -> Result<Self> {
        let w = self.weights.clone();
        self.with_sigma(&w)
    }
}

fn normalize(values: &[f64], what: &str) -> Result<Vec<f64>> {
    if let Some((i, v)) = values
        .iter()
        .enumerate()
        .find(|(_, v)| !v.is_finite() || **v < 0.0)
    {
        return Err(Error::InvalidMeasure(format!(
            "{what}[{i}] = {v} is negative or not finite"
        )));
    }
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidMeasure(format!("{what} are all zero")));
    }
    if (total - 1.0).abs() <= 1e-12 {
        return Ok(values.to_vec());
    }
    Ok(values.iter().map(|v| v / total).collect())
}

/// Builds a discrete measure, renormalizing weights to the simplex.
///
/// σ defaults to the uniform vector and must be strictly positive.
pub fn make_discrete(
    points: PointSet,
    weights: &[f64],
    sigma: Option<&[f64]>,
) -> Result<DiscreteMeasure> {
    if points.is_empty() {
        return Err(Error::InvalidMeasure("empty point list".into()));
    }
    if weights.len() != points.len() {
        return Err(Error::InvalidMeasure(format!(
            "{} points but {} weights",
            points.len(),
            weights.len()
        )));
    }
    let weights = normalize(weights, "weights")?;
    let n = points.len();
    let sigma = match sigma {
        None => vec![1.0 / n as f64; n],
        Some(s) => {
            if s.len() != n {
                return Err(Error::InvalidMeasure(format!(
                    "{} points but {} reference weights",
                    n,
                    s.len()
                )));
            }
            let s = normalize(s, "sigma")?;
            if let Some(i) = s.iter().position(|v| *v <= 0.0) {
                return Err(Error::InvalidMeasure(format!(
                    "sigma[{i}] must be strictly positive"
                )));
            }
            s
        }
    };
    Ok(DiscreteMeasure {
        points,
        weights,
        sigma,
    })
}

/// Relative entropy Σ μ_i log(μ_i / σ_i) with 0·log 0 = 0.
pub fn rel_entropy(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(Error::Dimension {
            expected: mu.len(),
            got: sigma.len(),
        });
    }
    let mut acc = 0.0;
    for (i, (&m, &s)) in mu.iter().zip(sigma).enumerate() {
        if m <= 0.0 {
            continue;
        }
        if s <= 0.0 {
            return Err(Error::Support { index: i, mass: m });
        }
        acc += m * (m / s).ln();
    }
    Ok(acc)
}

/// One cell of a partition of the target space: a closed axis-aligned box
/// with a representative point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxCell {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub rep: Vec<f64>,
}

impl BoxCell {
    fn contains(&self, x: &[f64]) -> bool {
        const SLACK: f64 = 1e-12;
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *v >= l - SLACK && *v <= h + SLACK)
    }

    fn diameter(&self) -> f64 {
        euclidean(&self.lo, &self.hi)
    }
}

/// Finite partition of the target space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Partition {
    /// Tensor grid of `cells_per_axis^d` equal boxes covering `[lo, hi]`;
    /// representatives are cell centres.
    UniformGrid {
        lo: Vec<f64>,
        hi: Vec<f64>,
        cells_per_axis: usize,
    },
    /// Explicit list of boxes; a point belongs to the first box containing it.
    Cells { cells: Vec<BoxCell> },
}

impl Partition {
    pub fn cells(&self) -> Result<Vec<BoxCell>> {
        match self {
            Partition::Cells { cells } => {
                if cells.is_empty() {
                    return Err(Error::Config("partition has no cells".into()));
                }
                Ok(cells.clone())
            }
            Partition::UniformGrid {
                lo,
                hi,
                cells_per_axis,
            } => {
                let d = lo.len();
                if d == 0 || hi.len() != d || *cells_per_axis == 0 {
                    return Err(Error::Config("malformed uniform grid partition".into()));
                }
                let k = *cells_per_axis;
                let total = k.pow(d as u32);
                let mut cells = Vec::with_capacity(total);
                for flat in 0..total {
                    let mut rem = flat;
                    let mut c_lo = vec![0.0; d];
                    let mut c_hi = vec![0.0; d];
                    let mut rep = vec![0.0; d];
                    for a in 0..d {
                        let idx = rem % k;
                        rem /= k;
                        let h = (hi[a] - lo[a]) / k as f64;
                        c_lo[a] = lo[a] + h * idx as f64;
                        c_hi[a] = lo[a] + h * (idx + 1) as f64;
                        rep[a] = 0.5 * (c_lo[a] + c_hi[a]);
                    }
                    cells.push(BoxCell {
                        lo: c_lo,
                        hi: c_hi,
                        rep,
                    });
                }
                Ok(cells)
            }
        }
    }
}

/// Result of [`discretize_target`]: the discretized measure and the
/// quantities entering the W₁ approximation bound.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub measure: DiscreteMeasure,
    /// Largest cell diameter.
    pub max_cell_diam: f64,
    /// Diameter of the region covered by the partition.
    pub region_diam: f64,
}

impl Discretization {
    /// `max_cell_diam + region_diam / n`.
    pub fn w1_bound(&self) -> f64 {
        self.max_cell_diam + self.region_diam / self.measure.len() as f64
    }
}

/// Pushes `mu` onto the cell representatives of `partition` with the mass
/// floor `(1 - 1/n) μ(cell) + 1/n²`, so every atom of the result is charged.
pub fn discretize_target(mu: &DiscreteMeasure, partition: &Partition) -> Result<Discretization> {
    let cells = partition.cells()?;
    let n = cells.len();
    let d = mu.dim();
    if cells.iter().any(|c| c.lo.len() != d) {
        return Err(Error::Dimension {
            expected: d,
            got: cells[0].lo.len(),
        });
    }
    let mut mass = vec![0.0; n];
    for i in 0..mu.len() {
        let x = mu.point(i);
        let cell = cells
            .iter()
            .position(|c| c.contains(x))
            .ok_or(Error::Partition { index: i })?;
        mass[cell] += mu.weights()[i];
    }
    let nf = n as f64;
    let weights: Vec<f64> = mass
        .iter()
        .map(|m| (1.0 - 1.0 / nf) * m + 1.0 / (nf * nf))
        .collect();
    let reps: Vec<Vec<f64>> = cells.iter().map(|c| c.rep.clone()).collect();
    let max_cell_diam = cells.iter().map(BoxCell::diameter).fold(0.0, f64::max);
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for c in &cells {
        for a in 0..d {
            lo[a] = lo[a].min(c.lo[a]);
            hi[a] = hi[a].max(c.hi[a]);
        }
    }
    let measure = make_discrete(PointSet::from_rows(&reps)?, &weights, None)?;
    Ok(Discretization {
        measure,
        max_cell_diam,
        region_diam: euclidean(&lo, &hi),
    })
}
