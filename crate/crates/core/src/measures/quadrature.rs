use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};

use super::points::{euclidean, norm, PointSet};
use crate::error::{Error, Result};

/// Source probability law on a bounded convex set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Distribution {
    UniformBox {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    UniformBall {
        center: Vec<f64>,
        radius: f64,
    },
    /// Product Gaussian restricted to the box `[lo, hi]`.
    TruncatedGaussian {
        mean: Vec<f64>,
        std: Vec<f64>,
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Gauss–Legendre rule with `m` nodes (d = 1 only).
    Grid1d,
    /// Tensor Gauss–Legendre rule with `m` nodes per axis.
    GridTensor,
    /// `m` i.i.d. samples with uniform weights.
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub distribution: Distribution,
    pub scheme: Scheme,
    pub m: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureKind {
    Grid1d,
    GridTensor,
    MonteCarlo,
}

/// Quadrature representation of the source measure ρ.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceQuadrature {
    nodes: PointSet,
    weights: Vec<f64>,
    density_values: Option<Vec<f64>>,
    r_x: f64,
    diam: f64,
    kind: QuadratureKind,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct QuadratureRepr {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    density: Option<Vec<f64>>,
    kind: QuadratureKind,
    seed: u64,
    r_x: f64,
    diam: f64,
}

impl Serialize for SourceQuadrature {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        QuadratureRepr {
            points: self.nodes.to_rows(),
            weights: self.weights.clone(),
            density: self.density_values.clone(),
            kind: self.kind,
            seed: self.seed,
            r_x: self.r_x,
            diam: self.diam,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SourceQuadrature {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = QuadratureRepr::deserialize(d)?;
        let nodes = PointSet::from_rows(&r.points).map_err(serde::de::Error::custom)?;
        SourceQuadrature::new(nodes, r.weights, r.density, r.r_x, r.diam, r.kind, r.seed)
            .map_err(serde::de::Error::custom)
    }
}

impl SourceQuadrature {
    /// Validates and normalizes a quadrature.
    pub fn new(
        nodes: PointSet,
        weights: Vec<f64>,
        density_values: Option<Vec<f64>>,
        r_x: f64,
        diam: f64,
        kind: QuadratureKind,
        seed: u64,
    ) -> Result<Self> {
        if nodes.is_empty() || nodes.len() != weights.len() {
            return Err(Error::InvalidMeasure(format!(
                "{} nodes but {} weights",
                nodes.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidMeasure("negative quadrature weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidMeasure(
                "quadrature weights are all zero".into(),
            ));
        }
        let weights = if (total - 1.0).abs() <= 1e-12 {
            weights
        } else {
            weights.iter().map(|w| w / total).collect()
        };
        if let Some(dv) = &density_values {
            if dv.len() != nodes.len() || dv.iter().any(|v| *v <= 0.0) {
                return Err(Error::InvalidMeasure("bad density values".into()));
            }
        }
        if nodes.radius() > r_x * (1.0 + 1e-12) + 1e-12 {
            return Err(Error::InvalidMeasure(format!(
                "node outside the declared radius {r_x}"
            )));
        }
        if diam > 2.0 * r_x * (1.0 + 1e-12) {
            return Err(Error::InvalidMeasure("diameter exceeds 2 R_X".into()));
        }
        Ok(SourceQuadrature {
            nodes,
            weights,
            density_values,
            r_x,
            diam,
            kind,
            seed,
        })
    }

    /// Equal-weight quadrature on the given nodes; radius and diameter are
    /// taken from the nodes themselves.
    pub fn from_points(nodes: PointSet, weights: Vec<f64>) -> Result<Self> {
        let r = nodes.radius();
        let diam = nodes.diameter();
        SourceQuadrature::new(nodes, weights, None, r, diam, QuadratureKind::GridTensor, 0)
    }

    pub fn nodes(&self) -> &PointSet {
        &self.nodes
    }

    pub fn node(&self, j: usize) -> &[f64] {
        self.nodes.point(j)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn density_values(&self) -> Option<&[f64]> {
        self.density_values.as_deref()
    }

    pub fn r_x(&self) -> f64 {
        self.r_x
    }

    pub fn diam(&self) -> f64 {
        self.diam
    }

    pub fn kind(&self) -> QuadratureKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.nodes.dim()
    }

    /// Same nodes, new (renormalized) weights.
    pub fn reweighted(&self, weights: Vec<f64>) -> Result<Self> {
        SourceQuadrature::new(
            self.nodes.clone(),
            weights,
            None,
            self.r_x,
            self.diam,
            self.kind,
            self.seed,
        )
    }
}

/// Gauss–Legendre nodes and weights on `[a, b]`; weights sum to `b - a`.
pub fn gauss_legendre(m: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mf = m as f64;
    for i in 0..m.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (mf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=m {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = mf * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = mid - half * z;
        nodes[m - 1 - i] = mid + half * z;
        weights[i] = half * w;
        weights[m - 1 - i] = half * w;
    }
    (nodes, weights)
}

impl Distribution {
    pub fn dim(&self) -> usize {
        match self {
            Distribution::UniformBox { lo, .. } => lo.len(),
            Distribution::UniformBall { center, .. } => center.len(),
            Distribution::TruncatedGaussian { lo, .. } => lo.len(),
        }
    }

    fn validate(&self) -> Result<()> {
        let check_box = |lo: &[f64], hi: &[f64]| {
            if lo.is_empty() || lo.len() != hi.len() || lo.iter().zip(hi).any(|(l, h)| l >= h) {
                Err(Error::Config(
                    "box needs lo < hi in every coordinate".into(),
                ))
            } else {
                Ok(())
            }
        };
        match self {
            Distribution::UniformBox { lo, hi } => check_box(lo, hi),
            Distribution::UniformBall { center, radius } => {
                if center.is_empty() || *radius <= 0.0 {
                    Err(Error::Config(
                        "ball needs a centre and a positive radius".into(),
                    ))
                } else {
                    Ok(())
                }
            }
            Distribution::TruncatedGaussian { mean, std, lo, hi } => {
                check_box(lo, hi)?;
                if mean.len() != lo.len() || std.len() != lo.len() || std.iter().any(|s| *s <= 0.0)
                {
                    Err(Error::Config(
                        "gaussian needs matching mean/std, std > 0".into(),
                    ))
                } else {
                    Ok(())
                }
            }
        }
    }

    fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Distribution::UniformBox { lo, hi }
            | Distribution::TruncatedGaussian { lo, hi, .. } => (lo.clone(), hi.clone()),
            Distribution::UniformBall { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
        }
    }

    /// Radius of the smallest origin-centred ball containing the support.
    pub fn support_radius(&self) -> f64 {
        match self {
            Distribution::UniformBall { center, radius } => norm(center) + radius,
            _ => {
                let (lo, hi) = self.bounding_box();
                lo.iter()
                    .zip(&hi)
                    .map(|(l, h)| l.abs().max(h.abs()).powi(2))
                    .sum::<f64>()
                    .sqrt()
            }
        }
    }

    pub fn support_diameter(&self) -> f64 {
        match self {
            Distribution::UniformBall { radius, .. } => 2.0 * radius,
            _ => {
                let (lo, hi) = self.bounding_box();
                euclidean(&lo, &hi)
            }
        }
    }

    fn contains(&self, x: &[f64]) -> bool {
        match self {
            Distribution::UniformBall { center, radius } => euclidean(x, center) <= *radius,
            _ => {
                let (lo, hi) = self.bounding_box();
                x.iter()
                    .zip(lo.iter().zip(&hi))
                    .all(|(v, (l, h))| v >= l && v <= h)
            }
        }
    }

    /// Unnormalized density at a point of the support.
    fn unnormalized_density(&self, x: &[f64]) -> f64 {
        match self {
            Distribution::TruncatedGaussian { mean, std, .. } => {
                let q: f64 = x
                    .iter()
                    .zip(mean.iter().zip(std))
                    .map(|(v, (m, s))| ((v - m) / s).powi(2))
                    .sum();
                (-0.5 * q).exp()
            }
            _ => 1.0,
        }
    }
}

/// Builds a deterministic quadrature of the source law.
///
/// Monte-carlo nodes are drawn from a ChaCha stream keyed by `seed`, so the
/// same `(spec, seed)` always yields the same nodes.
pub fn sample_source(spec: &SourceSpec, seed: u64) -> Result<SourceQuadrature> {
    let dist = &spec.distribution;
    dist.validate()?;
    if spec.m == 0 {
        return Err(Error::Config("quadrature needs m >= 1".into()));
    }
    let d = dist.dim();
    let r_x = dist.support_radius();
    let diam = dist.support_diameter();
    let (lo, hi) = dist.bounding_box();

    let (kind, nodes, weights) = match spec.scheme {
        Scheme::Grid1d | Scheme::GridTensor => {
            if spec.scheme == Scheme::Grid1d && d != 1 {
                return Err(Error::Config(format!("grid-1d needs d = 1, got d = {d}")));
            }
            if spec.m.checked_pow(d as u32).is_none_or(|t| t > 4_000_000) {
                return Err(Error::Config("tensor grid too large".into()));
            }
            let rules: Vec<_> = (0..d)
                .map(|a| gauss_legendre(spec.m, lo[a], hi[a]))
                .collect();
            let total = spec.m.pow(d as u32);
            let mut coords = Vec::with_capacity(total * d);
            let mut weights = Vec::with_capacity(total);
            let mut x = vec![0.0; d];
            for flat in 0..total {
                let mut rem = flat;
                let mut w = 1.0;
                for a in 0..d {
                    let k = rem % spec.m;
                    rem /= spec.m;
                    x[a] = rules[a].0[k];
                    w *= rules[a].1[k];
                }
                if !dist.contains(&x) {
                    continue;
                }
                coords.extend_from_slice(&x);
                weights.push(w * dist.unnormalized_density(&x));
            }
            if weights.is_empty() {
                return Err(Error::Config("grid misses the support entirely".into()));
            }
            let kind = if spec.scheme == Scheme::Grid1d {
                QuadratureKind::Grid1d
            } else {
                QuadratureKind::GridTensor
            };
            (kind, coords, weights)
        }
        Scheme::MonteCarlo => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut coords = Vec::with_capacity(spec.m * d);
            let mut x = vec![0.0; d];
            let mut accepted = 0;
            let mut attempts = 0usize;
            while accepted < spec.m {
                attempts += 1;
                if attempts > 1000 * spec.m + 10_000 {
                    return Err(Error::Config("rejection sampling stalled".into()));
                }
                match dist {
                    Distribution::TruncatedGaussian { mean, std, .. } => {
                        for a in 0..d {
                            let n = Normal::new(mean[a], std[a])
                                .map_err(|e| Error::Config(e.to_string()))?;
                            x[a] = n.sample(&mut rng);
                        }
                    }
                    _ => {
                        for a in 0..d {
                            x[a] = rng.random_range(lo[a]..=hi[a]);
                        }
                    }
                }
                if dist.contains(&x) {
                    coords.extend_from_slice(&x);
                    accepted += 1;
                }
            }
            (QuadratureKind::MonteCarlo, coords, vec![1.0; spec.m])
        }
    };
    let nodes = PointSet::from_flat(d, nodes)?;

    let density_values = match dist {
        Distribution::UniformBox { lo, hi } => {
            let vol: f64 = lo.iter().zip(hi).map(|(l, h)| h - l).product();
            Some(vec![1.0 / vol; nodes.len()])
        }
        Distribution::UniformBall { radius, .. } => {
            let vol = unit_ball_volume(d) * radius.powi(d as i32);
            Some(vec![1.0 / vol; nodes.len()])
        }
        Distribution::TruncatedGaussian { lo, hi, .. } => {
            // Normalizer from a fine product rule on the box.
            let z = gaussian_box_mass(dist, lo, hi);
            Some(
                nodes
                    .iter()
                    .map(|x| dist.unnormalized_density(x) / z)
                    .collect(),
            )
        }
    };
    SourceQuadrature::new(nodes, weights, density_values, r_x, diam, kind, seed)
}

fn unit_ball_volume(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => std::f64::consts::PI,
        3 => 4.0 / 3.0 * std::f64::consts::PI,
        _ => {
            // V_d = π^{d/2} / Γ(d/2 + 1) via the recursion V_d = 2π/d V_{d-2}.
            2.0 * std::f64::consts::PI / d as f64 * unit_ball_volume(d - 2)
        }
    }
}

fn gaussian_box_mass(dist: &Distribution, lo: &[f64], hi: &[f64]) -> f64 {
    let Distribution::TruncatedGaussian { mean, std, .. } = dist else {
        return 1.0;
    };
    lo.iter()
        .zip(hi)
        .zip(mean.iter().zip(std))
        .map(|((l, h), (m, s))| {
            let (xs, ws) = gauss_legendre(64, *l, *h);
            xs.iter()
                .zip(&ws)
                .map(|(x, w)| w * (-0.5 * ((x - m) / s).powi(2)).exp())
                .sum::<f64>()
        })
        .product()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box(scheme: Scheme, m: usize) -> SourceSpec {
        SourceSpec {
            distribution: Distribution::UniformBox {
                lo: vec![0.0],
                hi: vec![1.0],
            },
            scheme,
            m,
        }
    }

    #[test]
    fn two_point_rule() {
        let q = sample_source(&unit_box(Scheme::Grid1d, 2), 0).unwrap();
        let s = 0.5 / 3f64.sqrt();
        assert!((q.node(0)[0] - (0.5 - s)).abs() < 1e-15);
        assert!((q.node(1)[0] - (0.5 + s)).abs() < 1e-15);
        assert!((q.weights()[0] - 0.5).abs() < 1e-15);
        assert!((q.weights()[1] - 0.5).abs() < 1e-15);
        assert_eq!(q.r_x(), 1.0);
        assert_eq!(q.diam(), 1.0);
    }

    #[test]
    fn legendre_rule_integrates_polynomials() {
        let (x, w) = gauss_legendre(7, -1.0, 2.0);
        let exact = (2f64.powi(14) - 1.0) / 14.0;
        let approx: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(13)).sum();
        assert!((approx - exact).abs() < 1e-10 * exact);
        let (_, w1) = gauss_legendre(1, 0.0, 3.0);
        assert_eq!(w1, vec![3.0]);
    }

    #[test]
    fn monte_carlo_is_reproducible() {
        let spec = SourceSpec {
            distribution: Distribution::UniformBall {
                center: vec![0.0, 0.5],
                radius: 0.5,
            },
            scheme: Scheme::MonteCarlo,
            m: 300,
        };
        let a = sample_source(&spec, 9).unwrap();
        let b = sample_source(&spec, 9).unwrap();
        let c = sample_source(&spec, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.nodes(), c.nodes());
        assert!(a.nodes().iter().all(|x| euclidean(x, &[0.0, 0.5]) <= 0.5));
        assert_eq!(a.r_x(), 1.0);
    }

    #[test]
    fn truncated_gaussian_weights_normalized() {
        for scheme in [Scheme::Grid1d, Scheme::MonteCarlo] {
            let spec = SourceSpec {
                distribution: Distribution::TruncatedGaussian {
                    mean: vec![0.3],
                    std: vec![0.2],
                    lo: vec![0.0],
                    hi: vec![1.0],
                },
                scheme,
                m: 50,
            };
            let q = sample_source(&spec, 1).unwrap();
            assert!((q.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // density integrates to one against Lebesgue on the box
            let (x, w) = gauss_legendre(80, 0.0, 1.0);
            let z: f64 = x
                .iter()
                .zip(&w)
                .map(|(x, w)| w * (-0.5 * ((x - 0.3) / 0.2f64).powi(2)).exp())
                .sum();
            let dv = q.density_values().unwrap();
            let x0 = q.node(0)[0];
            let expect = (-0.5 * ((x0 - 0.3) / 0.2f64).powi(2)).exp() / z;
            assert!((dv[0] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_1d_rejects_higher_dimension() {
        let spec = SourceSpec {
            distribution: Distribution::UniformBox {
                lo: vec![0.0, 0.0],
                hi: vec![1.0, 1.0],
            },
            scheme: Scheme::Grid1d,
            m: 4,
        };
        assert!(matches!(sample_source(&spec, 0), Err(Error::Config(_))));
        let bad: std::result::Result<SourceSpec, _> = serde_json::from_str(
            r#"{"distribution": {"kind": "uniform-torus"}, "scheme": "grid-1d", "m": 4}"#,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn quadrature_json_has_provenance_fields() {
        let q = sample_source(&unit_box(Scheme::Grid1d, 3), 5).unwrap();
        let v: serde_json::Value = serde_json::to_value(&q).unwrap();
        for key in ["points", "weights", "kind", "seed", "r_x", "diam"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let back: SourceQuadrature = serde_json::from_value(v).unwrap();
        assert_eq!(back, q);
    }
}
