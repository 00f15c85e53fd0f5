//! The p-power cost family and its variants.
//!
//! | variant      | c(x, y)                                                   |
//! |--------------|-----------------------------------------------------------|
//! | `power`      | s·|x − y|^p                                                |
//! | `linear_ell` | −⟨x, y⟩                                                    |
//! | `shifted`    | s·|x − y|^p − (γ/2)|x|²                                     |
//! | `boundary`   | s·min(|x − y|^p, d(x, Ωᶜ)^p + d(y, Ωᶜ)^p), Ω an axis box |
//!
//! where `s` is `1/p` (`one_over_p`, the default) or `1` (`unit`).
//!
//! The curvature constant γ(p) for 1 < p < 2 bounds
//! `p⟨(a−z)^{(p−1)} − (b−z)^{(p−1)}, a − b⟩ ≤ γ|a − b|^p`. The closed form
//! used here combines the two elementary bounds on
//! `||a|^{p−2}a − |b|^{p−2}b|²`, namely `|a−b|^{2(p−1)}` for the radial part
//! and `2·2^{3−2p}|a−b|^{2p−2}` for the angular part, which gives
//! `γ(p) = p·sqrt(1 + 2^{4−2p})`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::norm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    OneOverP,
    Unit,
}

/// Closed axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() || lo.iter().zip(&hi).any(|(l, h)| l >= h) {
            return Err(Error::Config(
                "box needs lo < hi in every coordinate".into(),
            ));
        }
        Ok(BoxDomain { lo, hi })
    }

    pub fn unit(d: usize) -> Self {
        BoxDomain {
            lo: vec![0.0; d],
            hi: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Distance to the complement; zero outside the box.
    pub fn dist_to_complement(&self, x: &[f64]) -> f64 {
        let mut best = f64::INFINITY;
        for ((v, l), h) in x.iter().zip(&self.lo).zip(&self.hi) {
            best = best.min(v - l).min(h - v);
        }
        best.max(0.0)
    }

    /// Gradient of [`Self::dist_to_complement`] inside the box (the unit
    /// normal of the nearest face, lowest axis on ties).
    fn dist_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        if self.dist_to_complement(x) <= 0.0 {
            return g;
        }
        let mut best = f64::INFINITY;
        let mut arg = (0, 1.0);
        for (a, ((v, l), h)) in x.iter().zip(&self.lo).zip(&self.hi).enumerate() {
            if v - l < best {
                best = v - l;
                arg = (a, 1.0);
            }
            if h - v < best {
                best = h - v;
                arg = (a, -1.0);
            }
        }
        g[arg.0] = arg.1;
        g
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| rng.random_range(*l..=*h))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Variant {
    Power,
    LinearEll,
    Shifted { gamma: f64 },
    Boundary { omega: BoxDomain },
}

/// Cost family descriptor. `q = p/(p−1)` is cached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CostRepr", into = "CostRepr")]
pub struct CostSpec {
    p: f64,
    q: f64,
    scale: Scale,
    variant: Variant,
}

#[derive(Serialize, Deserialize)]
struct CostRepr {
    p: f64,
    #[serde(default)]
    scale: Scale,
    #[serde(default = "default_variant")]
    variant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    omega: Option<BoxDomain>,
}

fn default_variant() -> String {
    "power".into()
}

impl TryFrom<CostRepr> for CostSpec {
    type Error = Error;

    fn try_from(r: CostRepr) -> Result<Self> {
        let variant = match r.variant.as_str() {
            "power" => Variant::Power,
            "linear_ell" => Variant::LinearEll,
            "shifted" => Variant::Shifted {
                gamma: r
                    .gamma
                    .ok_or_else(|| Error::Config("shifted cost needs \"gamma\"".into()))?,
            },
            "boundary" => {
                let omega = r
                    .omega
                    .ok_or_else(|| Error::Config("boundary cost needs \"omega\"".into()))?;
                Variant::Boundary {
                    omega: BoxDomain::new(omega.lo, omega.hi)?,
                }
            }
            other => return Err(Error::Config(format!("unknown cost variant {other:?}"))),
        };
        CostSpec::new(r.p, r.scale, variant)
    }
}

impl From<CostSpec> for CostRepr {
    fn from(c: CostSpec) -> Self {
        let (variant, gamma, omega) = match c.variant {
            Variant::Power => ("power", None, None),
            Variant::LinearEll => ("linear_ell", None, None),
            Variant::Shifted { gamma } => ("shifted", Some(gamma), None),
            Variant::Boundary { omega } => ("boundary", None, Some(omega)),
        };
        CostRepr {
            p: c.p,
            scale: c.scale,
            variant: variant.into(),
            gamma,
            omega,
        }
    }
}

/// `|v|^{α−1} v`, with `0 ↦ 0`.
pub fn vector_power(v: &[f64], alpha: f64) -> Vec<f64> {
    let n = norm(v);
    if n == 0.0 {
        return vec![0.0; v.len()];
    }
    let f = n.powf(alpha - 1.0);
    v.iter().map(|x| x * f).collect()
}

impl CostSpec {
    pub fn new(p: f64, scale: Scale, variant: Variant) -> Result<Self> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(Error::Config(format!(
                "cost exponent must satisfy p > 1, got {p}"
            )));
        }
        if let Variant::Shifted { gamma } = &variant {
            if !gamma.is_finite() || *gamma < 0.0 {
                return Err(Error::Config("shift gamma must be finite and >= 0".into()));
            }
        }
        Ok(CostSpec {
            p,
            q: p / (p - 1.0),
            scale,
            variant,
        })
    }

    pub fn power(p: f64) -> Result<Self> {
        CostSpec::new(p, Scale::OneOverP, Variant::Power)
    }

    pub fn power_unit(p: f64) -> Result<Self> {
        CostSpec::new(p, Scale::Unit, Variant::Power)
    }

    pub fn linear_ell() -> Self {
        CostSpec::new(2.0, Scale::OneOverP, Variant::LinearEll).expect("p = 2 is valid")
    }

    /// Power cost shifted by `(γ/2)|x|²` with the γ that makes it concave in
    /// `x` on `B(0, R_X) × B(0, R_Y)`; needs `p ≥ 2`.
    pub fn shifted_power(p: f64, scale: Scale, r_x: f64, r_y: f64) -> Result<Self> {
        let gamma = shift_gamma(p, r_x, r_y)? * scale_factor_for(p, scale) * p;
        CostSpec::new(p, scale, Variant::Shifted { gamma })
    }

    pub fn boundary(p: f64, scale: Scale, omega: BoxDomain) -> Result<Self> {
        CostSpec::new(p, scale, Variant::Boundary { omega })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn scale(&self) -> Scale {
        self.scale
    }

    pub fn variant(&self) -> &Variant {
        &self.variant
    }

    /// Multiplier `s` in front of `|x − y|^p`.
    pub fn scale_factor(&self) -> f64 {
        scale_factor_for(self.p, self.scale)
    }

    /// True for the plain p-power cost, where the Brenier-type map formula
    /// applies.
    pub fn is_power(&self) -> bool {
        matches!(self.variant, Variant::Power)
    }

    /// Cost value; the caller guarantees equal dimensions.
    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), y.len());
        let s = self.scale_factor();
        match &self.variant {
            Variant::Power => s * dist_pow(x, y, self.p),
            Variant::LinearEll => -x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>(),
            Variant::Shifted { gamma } => {
                s * dist_pow(x, y, self.p) - 0.5 * gamma * x.iter().map(|v| v * v).sum::<f64>()
            }
            Variant::Boundary { omega } => {
                let direct = dist_pow(x, y, self.p);
                let via = omega.dist_to_complement(x).powf(self.p)
                    + omega.dist_to_complement(y).powf(self.p);
                s * direct.min(via)
            }
        }
    }

    /// `∇_x c(x, y)`; zero at `x = y` for the power part.
    pub fn grad_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let sp = self.scale_factor() * self.p;
        let power_grad = || {
            let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
            let mut g = vector_power(&diff, self.p - 1.0);
            g.iter_mut().for_each(|v| *v *= sp);
            g
        };
        match &self.variant {
            Variant::Power => power_grad(),
            Variant::LinearEll => y.iter().map(|v| -v).collect(),
            Variant::Shifted { gamma } => {
                let mut g = power_grad();
                g.iter_mut().zip(x).for_each(|(g, x)| *g -= gamma * x);
                g
            }
            Variant::Boundary { omega } => {
                let direct = dist_pow(x, y, self.p);
                let dx = omega.dist_to_complement(x);
                let via = dx.powf(self.p) + omega.dist_to_complement(y).powf(self.p);
                if direct <= via {
                    power_grad()
                } else {
                    let f = sp * dx.powf(self.p - 1.0);
                    omega.dist_gradient(x).iter().map(|v| v * f).collect()
                }
            }
        }
    }
}

fn scale_factor_for(p: f64, scale: Scale) -> f64 {
    match scale {
        Scale::OneOverP => 1.0 / p,
        Scale::Unit => 1.0,
    }
}

#[inline]
fn dist_pow(x: &[f64], y: &[f64], p: f64) -> f64 {
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    if p == 2.0 {
        sq
    } else {
        sq.powf(0.5 * p)
    }
}

/// Checked cost evaluation.
pub fn cost_eval(spec: &CostSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    check_dims(x, y)?;
    if let Variant::Boundary { omega } = spec.variant() {
        if omega.dim() != x.len() {
            return Err(Error::Dimension {
                expected: omega.dim(),
                got: x.len(),
            });
        }
    }
    Ok(spec.eval(x, y))
}

pub fn cost_grad_x(spec: &CostSpec, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    check_dims(x, y)?;
    Ok(spec.grad_x(x, y))
}

fn check_dims(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(())
}

/// `(p − 1)(R_X + R_Y)^{p−2}`: bound on the x-Hessian of `(1/p)|x − y|^p`
/// over `B(0, R_X) × B(0, R_Y)`.
pub fn shift_gamma(p: f64, r_x: f64, r_y: f64) -> Result<f64> {
    if !(p >= 2.0) {
        return Err(Error::NotApplicable("quadratic shift", p));
    }
    if p == 2.0 {
        return Ok(1.0);
    }
    Ok((p - 1.0) * (r_x + r_y).powf(p - 2.0))
}

/// γ(p) for 1 < p < 2; see the module docs.
pub fn gamma_analytic(p: f64) -> Result<f64> {
    if !(p > 1.0 && p < 2.0) {
        return Err(Error::NotApplicable("curvature constant", p));
    }
    Ok(p * (1.0 + 2f64.powf(4.0 - 2.0 * p)).sqrt())
}

/// `p⟨(a−z)^{(p−1)} − (b−z)^{(p−1)}, a − b⟩`.
pub fn curvature_lhs(p: f64, a: &[f64], b: &[f64], z: &[f64]) -> f64 {
    let az: Vec<f64> = a.iter().zip(z).map(|(a, z)| a - z).collect();
    let bz: Vec<f64> = b.iter().zip(z).map(|(b, z)| b - z).collect();
    let ga = vector_power(&az, p - 1.0);
    let gb = vector_power(&bz, p - 1.0);
    p * ga
        .iter()
        .zip(&gb)
        .zip(a.iter().zip(b))
        .map(|((ga, gb), (a, b))| (ga - gb) * (a - b))
        .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureCertificate {
    pub p: f64,
    pub gamma_analytic: f64,
    pub gamma_empirical: f64,
    pub trials: usize,
    /// Largest `LHS − γ|a − b|^p` seen, evaluated at the tested γ.
    pub max_violation: f64,
}

/// Random search for the curvature constant, checked against the analytic
/// value.
pub fn curvature_gamma(p: f64, trials: usize, seed: u64) -> Result<CurvatureCertificate> {
    let gamma = gamma_analytic(p)?;
    curvature_certificate_with(p, gamma, trials, seed)
}

/// As [`curvature_gamma`] but testing an arbitrary candidate γ.
pub fn curvature_certificate_with(
    p: f64,
    gamma: f64,
    trials: usize,
    seed: u64,
) -> Result<CurvatureCertificate> {
    if !(p > 1.0 && p < 2.0) {
        return Err(Error::NotApplicable("curvature constant", p));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sup: f64 = 0.0;
    let mut worst = f64::NEG_INFINITY;
    for k in 0..trials {
        let d = 1 + k % 3;
        let z: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = if k % 2 == 0 {
            // near-antipodal around z, where the ratio peaks
            let s = rng.random_range(0.2..5.0);
            a.iter()
                .zip(&z)
                .map(|(a, z)| z - s * (a - z) + 0.05 * rng.random_range(-1.0..1.0))
                .collect()
        } else {
            (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        let h: Vec<f64> = a.iter().zip(&b).map(|(a, b)| a - b).collect();
        let hp = norm(&h).powf(p);
        if hp == 0.0 {
            continue;
        }
        let lhs = curvature_lhs(p, &a, &b, &z);
        sup = sup.max(lhs / hp);
        worst = worst.max(lhs - gamma * hp);
    }
    Ok(CurvatureCertificate {
        p,
        gamma_analytic: gamma,
        gamma_empirical: sup,
        trials,
        max_violation: worst,
    })
}

/// `|x_t|^p − (1−t)|x0|^p − t|x1|^p + γ t(1−t)|x0 − x1|^p`; nonnegative
/// whenever γ ≥ γ(p).
pub fn semiconcavity_check(p: f64, gamma: f64, x0: &[f64], x1: &[f64], t: f64) -> f64 {
    let xt: Vec<f64> = x0
        .iter()
        .zip(x1)
        .map(|(a, b)| (1.0 - t) * a + t * b)
        .collect();
    let diff: Vec<f64> = x0.iter().zip(x1).map(|(a, b)| a - b).collect();
    norm(&xt).powf(p) - (1.0 - t) * norm(x0).powf(p) - t * norm(x1).powf(p)
        + gamma * t * (1.0 - t) * norm(&diff).powf(p)
}

/// Largest violation of the (p, γ)-curvature condition
/// `c(x_t, y) ≥ (1−t)c(x0, y) + t c(x1, y) − γ t(1−t)|x0 − x1|^p`
/// over random samples with `x0, x1 ∈ x_box`, `y ∈ y_box`.
pub fn curvature_condition_check(
    spec: &CostSpec,
    exponent: f64,
    gamma: f64,
    x_box: &BoxDomain,
    y_box: &BoxDomain,
    samples: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..samples {
        let x0 = x_box.sample(&mut rng);
        let x1 = x_box.sample(&mut rng);
        let y = y_box.sample(&mut rng);
        let t: f64 = rng.random_range(0.0..=1.0);
        let xt: Vec<f64> = x0
            .iter()
            .zip(&x1)
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect();
        let diff: Vec<f64> = x0.iter().zip(&x1).map(|(a, b)| a - b).collect();
        let v = (1.0 - t) * spec.eval(&x0, &y) + t * spec.eval(&x1, &y)
            - gamma * t * (1.0 - t) * norm(&diff).powf(exponent)
            - spec.eval(&xt, &y);
        worst = worst.max(v);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn vector_power_cases() {
        assert_eq!(vector_power(&[0.0, 0.0], 0.5), vec![0.0, 0.0]);
        assert_eq!(vector_power(&[3.0, 4.0], 2.0), vec![15.0, 20.0]);
        assert_eq!(vector_power(&[-2.0, 7.0], 1.0), vec![-2.0, 7.0]);
    }

    #[test]
    fn cost_values() {
        let c = CostSpec::power(2.0).unwrap();
        assert_eq!(cost_eval(&c, &[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(CostSpec::power_unit(1.5).unwrap().eval(&[0.0], &[1.0]), 1.0);
        assert_relative_eq!(
            CostSpec::power(1.5).unwrap().eval(&[0.0], &[1.0]),
            2.0 / 3.0,
            epsilon = 1e-15
        );
        assert!(matches!(
            cost_eval(&c, &[0.0], &[1.0, 1.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn boundary_cost_takes_cheaper_branch() {
        let unit = CostSpec::boundary(2.0, Scale::Unit, BoxDomain::unit(2)).unwrap();
        let v = unit.eval(&[0.05, 0.5], &[0.95, 0.5]);
        assert_relative_eq!(v, 0.005, epsilon = 1e-15);
        let half = CostSpec::boundary(2.0, Scale::OneOverP, BoxDomain::unit(2)).unwrap();
        assert_relative_eq!(
            half.eval(&[0.05, 0.5], &[0.95, 0.5]),
            0.0025,
            epsilon = 1e-15
        );
        // interior pair keeps the direct branch
        assert_relative_eq!(unit.eval(&[0.4, 0.5], &[0.5, 0.5]), 0.01, epsilon = 1e-15);
    }

    #[test]
    fn gradient_special_cases() {
        let c = CostSpec::power(1.5).unwrap();
        assert_eq!(cost_grad_x(&c, &[0.3], &[0.3]).unwrap(), vec![0.0]);
        let c2 = CostSpec::power(2.0).unwrap();
        assert_eq!(c2.grad_x(&[1.0, 2.0], &[0.5, -1.0]), vec![0.5, 3.0]);
    }

    fn central_diff(c: &CostSpec, x: &[f64], y: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|k| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[k] += h;
                xm[k] -= h;
                (c.eval(&xp, y) - c.eval(&xm, y)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences_p3() {
        let c = CostSpec::power(3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = c.grad_x(&x, &y);
            let fd = central_diff(&c, &x, &y, 1e-5);
            let err = norm(&g.iter().zip(&fd).map(|(a, b)| a - b).collect::<Vec<_>>());
            assert!(
                err <= 1e-6 * norm(&g).max(1e-300),
                "rel err {}",
                err / norm(&g)
            );
        }
    }

    #[test]
    fn shift_gamma_values() {
        assert_eq!(shift_gamma(2.0, 3.0, 7.0).unwrap(), 1.0);
        assert_relative_eq!(shift_gamma(3.0, 1.0, 1.0).unwrap(), 4.0);
        assert!(matches!(
            shift_gamma(1.5, 1.0, 1.0),
            Err(Error::NotApplicable(_, _))
        ));
    }

    #[test]
    fn curvature_ratio_at_antipodes() {
        let r = curvature_lhs(1.5, &[1.0], &[-1.0], &[0.0]) / 2f64.powf(1.5);
        assert_relative_eq!(r, 6.0 / 2f64.powf(1.5), epsilon = 1e-14);
        assert_relative_eq!(r, 2.121320343559643, epsilon = 1e-12);
        // the sharp one-dimensional constant is p 2^{2-p}
        for p in [1.1, 1.2, 1.5, 1.8, 1.95] {
            let r = curvature_lhs(p, &[1.0], &[-1.0], &[0.0]) / 2f64.powf(p);
            assert_relative_eq!(r, p * 2f64.powf(2.0 - p), epsilon = 1e-12);
            assert!(r <= gamma_analytic(p).unwrap());
        }
    }

    #[test]
    fn shorter_closed_form_fails_below_three_halves() {
        // p sqrt(1 + 2^{3-2p}) omits the factor 2 on the angular term and is
        // beaten by the antipodal pair once p < 3/2.
        let p = 1.2;
        let short = p * (1.0 + 2f64.powf(3.0 - 2.0 * p)).sqrt();
        let r = curvature_lhs(p, &[1.0], &[-1.0], &[0.0]) / 2f64.powf(p);
        assert!(r > short + 0.1);
    }

    #[test]
    fn curvature_at_p_two_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let a: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let z: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h: Vec<f64> = a.iter().zip(&b).map(|(a, b)| a - b).collect();
            let lhs = curvature_lhs(2.0, &a, &b, &z);
            assert_relative_eq!(lhs, 2.0 * norm(&h).powi(2), epsilon = 1e-13);
        }
    }

    #[test]
    fn certificate_holds_for_analytic_gamma() {
        for p in [1.2, 1.5, 1.8] {
            let cert = curvature_gamma(p, 20_000, 7).unwrap();
            assert!(cert.gamma_empirical <= cert.gamma_analytic + 1e-9);
            assert!(cert.max_violation <= 0.0);
            assert!(cert.gamma_empirical >= p * 2f64.powf(2.0 - p) * 0.9);
        }
        let half = 0.5 * gamma_analytic(1.5).unwrap();
        assert!(
            curvature_certificate_with(1.5, half, 5000, 7)
                .unwrap()
                .max_violation
                > 0.0
        );
        assert!(curvature_gamma(2.5, 10, 0).is_err());
    }

    #[test]
    fn semiconcavity_cases() {
        assert_eq!(semiconcavity_check(1.5, 2.0, &[0.3], &[0.9], 0.0), 0.0);
        let need = 1.0 / (0.25 * 2f64.powf(1.5));
        assert_relative_eq!(need, std::f64::consts::SQRT_2, epsilon = 1e-12);
        assert!(semiconcavity_check(1.5, need, &[1.0], &[-1.0], 0.5).abs() < 1e-14);
        assert!(semiconcavity_check(1.5, need * 0.99, &[1.0], &[-1.0], 0.5) < 0.0);
    }

    #[test]
    fn curvature_condition_for_cost_family() {
        let xb = BoxDomain::unit(2);
        let ell = CostSpec::linear_ell();
        assert!(curvature_condition_check(&ell, 2.0, 0.0, &xb, &xb, 2000, 1) <= 1e-15);
        for p in [1.2, 1.5, 1.8] {
            let g = gamma_analytic(p).unwrap();
            let pc = CostSpec::power_unit(p).unwrap();
            assert!(curvature_condition_check(&pc, p, g, &xb, &xb, 5000, 2) <= 1e-10);
            let bc = CostSpec::boundary(p, Scale::Unit, BoxDomain::unit(2)).unwrap();
            assert!(curvature_condition_check(&bc, p, g, &xb, &xb, 5000, 3) <= 1e-10);
        }
    }

    #[test]
    fn serde_shapes() {
        let c = CostSpec::power(1.5).unwrap();
        assert_eq!(
            serde_json::to_string(&c).unwrap(),
            r#"{"p":1.5,"scale":"one_over_p","variant":"power"}"#
        );
        let b: CostSpec = serde_json::from_str(
            r#"{"p":2,"scale":"unit","variant":"boundary","omega":{"lo":[0,0],"hi":[1,1]}}"#,
        )
        .unwrap();
        assert!(matches!(b.variant(), Variant::Boundary { .. }));
        assert!(serde_json::from_str::<CostSpec>(r#"{"p":0.5}"#).is_err());
        assert!(serde_json::from_str::<CostSpec>(r#"{"p":2,"variant":"cubic"}"#).is_err());
    }

    proptest! {
        #[test]
        fn quadratic_split(x in prop::collection::vec(-2.0f64..2.0, 3),
                           y in prop::collection::vec(-2.0f64..2.0, 3)) {
            let c = CostSpec::power(2.0).unwrap();
            let ell = CostSpec::linear_ell();
            let split = 0.5 * norm(&x).powi(2) + 0.5 * norm(&y).powi(2) + ell.eval(&x, &y);
            prop_assert!((c.eval(&x, &y) - split).abs() <= 1e-14 * (1.0 + split.abs()));
        }

        #[test]
        fn gradient_finite_differences(p in 1.2f64..4.0,
                                       x in prop::collection::vec(-1.0f64..1.0, 2),
                                       y in prop::collection::vec(-1.0f64..1.0, 2)) {
            let dist = norm(&x.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>());
            prop_assume!(dist > 1e-2);
            let c = CostSpec::power(p).unwrap();
            let g = c.grad_x(&x, &y);
            let fd = central_diff(&c, &x, &y, 1e-6);
            let err = norm(&g.iter().zip(&fd).map(|(a, b)| a - b).collect::<Vec<_>>());
            prop_assert!(err <= 1e-5 * norm(&g));
        }

        #[test]
        fn shifted_cost_is_concave_in_x(p in 2.0f64..4.0, t in 0.0f64..1.0,
                                        x0 in prop::collection::vec(-0.7f64..0.7, 2),
                                        x1 in prop::collection::vec(-0.7f64..0.7, 2),
                                        y in prop::collection::vec(-0.7f64..0.7, 2)) {
            // every coordinate in [-0.7, 0.7]² lies in the unit ball
            let c = CostSpec::shifted_power(p, Scale::OneOverP, 1.0, 1.0).unwrap();
            let xt: Vec<f64> = x0.iter().zip(&x1).map(|(a, b)| (1.0 - t) * a + t * b).collect();
            let lhs = c.eval(&xt, &y);
            let rhs = (1.0 - t) * c.eval(&x0, &y) + t * c.eval(&x1, &y);
            prop_assert!(lhs >= rhs - 1e-10);
        }

        #[test]
        fn semiconcavity_holds_at_analytic_gamma(p in 1.05f64..1.95, t in 0.0f64..1.0,
                                                 x0 in prop::collection::vec(-1.0f64..1.0, 2),
                                                 x1 in prop::collection::vec(-1.0f64..1.0, 2)) {
            let g = gamma_analytic(p).unwrap();
            prop_assert!(semiconcavity_check(p, g, &x0, &x1, t) >= -1e-12);
        }
    }
}
