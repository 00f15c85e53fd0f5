//! Exponents and constants of the stability bounds, the β trade-off, and
//! log-log exponent fits.

use serde::{Deserialize, Serialize};

use crate::costs::{CostSpec, Variant};
use crate::error::{Error, Result};

fn check_p(p: f64) -> Result<()> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::Config(format!(
            "exponent must satisfy p > 1, got {p}"
        )));
    }
    Ok(())
}

/// Exponent of `W₁` in the potential bound: `1 − 1/p` below 2, `½` above.
pub fn theta_potentials(p: f64) -> Result<f64> {
    check_p(p)?;
    Ok(if p < 2.0 { 1.0 - 1.0 / p } else { 0.5 })
}

/// Exponent of `W₁` in the map bound. For `p < 2` the admissible range is
/// the open interval `(0, (p−1)²/(p(p+1)))`; `margin ∈ (0, 1)` picks
/// `(1 − margin)` times its right end.
pub fn theta_maps(p: f64, margin: f64) -> Result<f64> {
    check_p(p)?;
    if p >= 2.0 {
        return Ok(1.0 / (6.0 * (p - 1.0)));
    }
    if !(margin > 0.0 && margin < 1.0) {
        return Err(Error::Config(format!(
            "margin must lie in (0, 1), got {margin}"
        )));
    }
    Ok((1.0 - margin) * (p - 1.0).powi(2) / (p * (p + 1.0)))
}

/// Right end of the map exponent range for `p < 2`.
pub fn theta_maps_limit(p: f64) -> f64 {
    (p - 1.0).powi(2) / (p * (p + 1.0))
}

/// Oscillation bound `M = 2 p s R_X (R_X + R_Y)^{p−1}` for potentials of the
/// scaled p-cost (`s` the scale factor).
pub fn oscillation_bound(spec: &CostSpec, r_x: f64, r_y: f64) -> f64 {
    match spec.variant() {
        Variant::LinearEll => 2.0 * r_x * r_y,
        _ => {
            let p = spec.p();
            2.0 * p * spec.scale_factor() * r_x * (r_x + r_y).powf(p - 1.0)
        }
    }
}

/// Constant `C` in `Var_ρ(φ₀ − φ₁) ≤ C ⟨μ₀ − μ₁ | ψ₀ − ψ₁⟩` for `p ≥ 2`.
/// At `p = 2` this is `2M`; above, `4p · (s p) R_X (R_X + R_Y)^{p−1}`, which
/// reads `4p R_X (R_X + R_Y)^{p−1}` for the `|x − y|^p / p` cost.
pub fn pairing_constant(spec: &CostSpec, r_x: f64, r_y: f64) -> Result<f64> {
    let p = spec.p();
    if p < 2.0 || !spec.is_power() {
        return Err(Error::NotApplicable("explicit pairing constant", p));
    }
    if p == 2.0 {
        return Ok(2.0 * oscillation_bound(spec, r_x, r_y));
    }
    Ok(4.0 * p * spec.scale_factor() * p * r_x * (r_x + r_y).powf(p - 1.0))
}

/// `h(β) = β e^{−αβ} − C e^{α′β} β^p`.
pub fn h_beta(beta: f64, alpha: f64, alpha_p: f64, c: f64, p: f64) -> f64 {
    beta * (-alpha * beta).exp() - c * (alpha_p * beta).exp() * beta.powf(p)
}

/// Maximizer of [`h_beta`] over `β > 0`: scan of a logarithmic grid on
/// `[beta_lo, beta_hi]` refined by golden section. Returns `(0, 0)` when
/// `h ≤ 0` on the whole grid.
pub fn h_beta_sup(
    alpha: f64,
    alpha_p: f64,
    c: f64,
    p: f64,
    grid: (f64, f64, usize),
) -> Result<(f64, f64)> {
    if alpha < 0.0 || alpha_p < 0.0 || c < 0.0 || !(p > 1.0 && p < 2.0) {
        return Err(Error::Config(
            "h(β) needs α, α′, C ≥ 0 and 1 < p < 2".into(),
        ));
    }
    let (lo, hi, k) = grid;
    if !(lo > 0.0 && hi > lo && k >= 3) {
        return Err(Error::Config("bad β grid".into()));
    }
    let h = |b: f64| h_beta(b, alpha, alpha_p, c, p);
    let betas: Vec<f64> = (0..k)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (k - 1) as f64).exp())
        .collect();
    let (best, _) = betas
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, b)| {
            let v = h(*b);
            if v > acc.1 {
                (i, v)
            } else {
                acc
            }
        });
    if h(betas[best]) <= 0.0 {
        return Ok((0.0, 0.0));
    }
    let mut a = betas[best.saturating_sub(1)];
    let mut b = betas[(best + 1).min(k - 1)];
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (h(x1), h(x2));
    for _ in 0..200 {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = h(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = h(x1);
        }
        if b - a <= 1e-15 * b {
            break;
        }
    }
    let beta = 0.5 * (a + b);
    Ok((beta, h(beta)))
}

/// The unconstrained balance point
/// `β = ‖Δφ‖^{(2−p)/(p−1)} / (γ (2 C_ρ)^p)^{1/(p−1)}`.
pub fn beta_seed(dphi_norm: f64, gamma: f64, c_rho: f64, p: f64) -> f64 {
    dphi_norm.powf((2.0 - p) / (p - 1.0)) / (gamma * (2.0 * c_rho).powf(p)).powf(1.0 / (p - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub theta: f64,
    pub stderr: f64,
    pub constant: f64,
    pub points: usize,
}

/// Least-squares fit of `log y = θ log x + log C` over the pairs with
/// `x, y > 0`. Needs at least four such pairs.
pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Result<ExponentFit> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let n = pts.len();
    if n < 4 {
        return Err(Error::Fit { needed: 4, got: n });
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::Fit { needed: 2, got: 1 });
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let theta = sxy / sxx;
    let intercept = my - theta * mx;
    let ssr: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - theta * p.0).powi(2))
        .sum();
    Ok(ExponentFit {
        theta,
        stderr: (ssr / (nf - 2.0) / sxx).sqrt(),
        constant: intercept.exp(),
        points: n,
    })
}
