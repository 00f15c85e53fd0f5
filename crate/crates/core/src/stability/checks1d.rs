//! One-dimensional functional inequalities on grids: displacement
//! interpolation densities, W₂ against L² of densities, a reverse Poincaré
//! inequality for convex functions, fractional seminorms and an
//! interpolation inequality with a calibrated constant.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid on `[a, b]` with its trapezoid weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1d {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
}

impl Grid1d {
    pub fn uniform(a: f64, b: f64, n: usize) -> Result<Self> {
        if n < 2 || !(b > a) {
            return Err(Error::Config(format!(
                "grid needs n ≥ 2 and a < b, got n = {n}"
            )));
        }
        let h = (b - a) / (n - 1) as f64;
        let x: Vec<f64> = (0..n).map(|i| a + h * i as f64).collect();
        Ok(Grid1d {
            w: trapezoid_weights(&x),
            x,
        })
    }

    pub fn from_nodes(x: Vec<f64>) -> Result<Self> {
        if x.len() < 2 || x.windows(2).any(|p| !(p[1] > p[0])) {
            return Err(Error::Config(
                "grid nodes must be strictly increasing".into(),
            ));
        }
        Ok(Grid1d {
            w: trapezoid_weights(&x),
            x,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.w).map(|(v, w)| v * w).sum()
    }

    pub fn eval<F: Fn(f64) -> f64>(&self, f: F) -> Vec<f64> {
        self.x.iter().map(|&x| f(x)).collect()
    }

    /// Slopes of the piecewise-linear interpolant, one per cell.
    pub fn slopes(&self, f: &[f64]) -> Vec<f64> {
        self.x
            .windows(2)
            .zip(f.windows(2))
            .map(|(x, v)| (v[1] - v[0]) / (x[1] - x[0]))
            .collect()
    }

    /// Nodal derivative: one-sided at the ends, central inside.
    pub fn derivative(&self, f: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let (a, b) = if i == 0 {
                    (0, 1)
                } else if i == n - 1 {
                    (n - 2, n - 1)
                } else {
                    (i - 1, i + 1)
                };
                (f[b] - f[a]) / (self.x[b] - self.x[a])
            })
            .collect()
    }

    fn is_uniform(&self) -> bool {
        let n = self.len();
        let h = (self.x[n - 1] - self.x[0]) / (n - 1) as f64;
        self.x
            .windows(2)
            .all(|p| ((p[1] - p[0]) - h).abs() <= 1e-9 * h)
    }

    /// Fourth-order central differences away from the ends of a uniform
    /// grid; falls back to [`Grid1d::derivative`] otherwise.
    pub fn derivative4(&self, f: &[f64]) -> Vec<f64> {
        let mut d = self.derivative(f);
        let n = self.len();
        if n < 5 || !self.is_uniform() {
            return d;
        }
        let h = (self.x[n - 1] - self.x[0]) / (n - 1) as f64;
        for i in 2..n - 2 {
            d[i] = (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]) / (12.0 * h);
        }
        d
    }

    fn check(&self, f: &[f64], what: &str) -> Result<()> {
        if f.len() != self.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                got: f.len(),
            });
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("{what} has non-finite values")));
        }
        Ok(())
    }
}

fn trapezoid_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut w = vec![0.0; n];
    for i in 0..n - 1 {
        let h = x[i + 1] - x[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    w
}

/// Cumulative trapezoid integral of `f`, starting at 0.
fn cumulative(grid: &Grid1d, f: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    for i in 1..grid.len() {
        out[i] = out[i - 1] + 0.5 * (f[i] + f[i - 1]) * (grid.x[i] - grid.x[i - 1]);
    }
    out
}

/// Probability density `h ρ / ∫ h ρ` and its CDF.
fn density_and_cdf(grid: &Grid1d, h: &[f64], rho: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let f: Vec<f64> = h.iter().zip(rho).map(|(a, b)| a * b).collect();
    if f.iter().any(|v| *v < 0.0) {
        return Err(Error::Numerics("negative density value".into()));
    }
    let cdf = cumulative(grid, &f);
    let total = *cdf.last().unwrap_or(&0.0);
    if !(total > 0.0) {
        return Err(Error::Numerics("density has zero mass".into()));
    }
    if cdf.windows(2).any(|p| p[1] < p[0]) {
        return Err(Error::Numerics("CDF is not monotone".into()));
    }
    Ok((
        f.iter().map(|v| v / total).collect(),
        cdf.iter().map(|v| v / total).collect(),
    ))
}

/// Inverse of the piecewise-linear CDF through `(x_i, F_i)` at level `u`.
fn invert_cdf(x: &[f64], cdf: &[f64], u: f64) -> f64 {
    let n = x.len();
    if u <= cdf[0] {
        return x[0];
    }
    if u >= cdf[n - 1] {
        return x[n - 1];
    }
    let k = cdf.partition_point(|c| *c < u).clamp(1, n - 1);
    let (f0, f1) = (cdf[k - 1], cdf[k]);
    if f1 <= f0 {
        return x[k];
    }
    x[k - 1] + (x[k] - x[k - 1]) * (u - f0) / (f1 - f0)
}

/// Exact inverse of the CDF of the piecewise-linear density `dens` whose
/// nodal cumulative integrals are `cdf`.
fn invert_cdf_quadratic(x: &[f64], dens: &[f64], cdf: &[f64], u: f64) -> f64 {
    let n = x.len();
    if u <= cdf[0] {
        return x[0];
    }
    if u >= cdf[n - 1] {
        return x[n - 1];
    }
    let k = cdf.partition_point(|c| *c < u).clamp(1, n - 1);
    let h = x[k] - x[k - 1];
    let (a, b) = (dens[k - 1], dens[k]);
    let r = u - cdf[k - 1];
    // a s + (b − a) s² / (2h) = r, solved in the cancellation-free form
    let q = 0.5 * (b - a) / h;
    let disc = (a * a + 4.0 * q * r).max(0.0);
    let s = if a + disc.sqrt() > 0.0 {
        2.0 * r / (a + disc.sqrt())
    } else {
        0.0
    };
    x[k - 1] + s.clamp(0.0, h)
}

fn interpolate(x: &[f64], f: &[f64], t: f64) -> f64 {
    let n = x.len();
    if t <= x[0] {
        return f[0];
    }
    if t >= x[n - 1] {
        return f[n - 1];
    }
    let k = x.partition_point(|v| *v < t).clamp(1, n - 1);
    let s = (t - x[k - 1]) / (x[k] - x[k - 1]);
    f[k - 1] + s * (f[k] - f[k - 1])
}

/// Monotone map pushing `h₀ρ` onto `h₁ρ`, evaluated at the nodes.
pub fn monotone_map(grid: &Grid1d, h0: &[f64], h1: &[f64], rho: &[f64]) -> Result<Vec<f64>> {
    let (_, c0) = density_and_cdf(grid, h0, rho)?;
    let (_, c1) = density_and_cdf(grid, h1, rho)?;
    Ok(c0.iter().map(|&u| invert_cdf(&grid.x, &c1, u)).collect())
}

/// Largest excess of the displacement-interpolated density at `T_t(x)` over
/// `ρ₀(x)^{1−t} ρ₁(T(x))^t`, over the interior nodes.
pub fn displacement_bound_1d(
    grid: &Grid1d,
    h0: &[f64],
    h1: &[f64],
    rho: &[f64],
    p: f64,
    t: f64,
) -> Result<f64> {
    if !(p > 1.0) {
        return Err(Error::Config(format!("exponent must exceed 1, got {p}")));
    }
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::Config(format!("t must lie in (0, 1), got {t}")));
    }
    for (f, name) in [(h0, "h0"), (h1, "h1"), (rho, "rho")] {
        grid.check(f, name)?;
        if f.iter().any(|v| *v <= 0.0) {
            return Err(Error::Config(format!("{name} must be strictly positive")));
        }
    }
    let (r0, c0) = density_and_cdf(grid, h0, rho)?;
    let (r1, c1) = density_and_cdf(grid, h1, rho)?;
    let map: Vec<f64> = c0
        .iter()
        .map(|&u| invert_cdf_quadratic(&grid.x, &r1, &c1, u))
        .collect();
    if map.windows(2).any(|p| p[1] < p[0]) {
        return Err(Error::Numerics("transport map is not monotone".into()));
    }
    let dmap = grid.derivative4(&map);
    let mut worst = f64::NEG_INFINITY;
    for i in 1..grid.len() - 1 {
        let dt = (1.0 - t) + t * dmap[i];
        let lhs = r0[i] / dt;
        let rhs = r0[i].powf(1.0 - t) * interpolate(&grid.x, &r1, map[i]).powf(t);
        worst = worst.max(lhs - rhs);
    }
    Ok(worst)
}

/// `∫₀¹ |Q₀ − Q₁|²` for piecewise-linear quantile functions through
/// `(F_i, x_i)`, integrated exactly over the merged breakpoints.
fn w2_squared(x: &[f64], c0: &[f64], c1: &[f64]) -> f64 {
    let mut us: Vec<f64> = c0
        .iter()
        .chain(c1)
        .copied()
        .filter(|u| (0.0..=1.0).contains(u))
        .collect();
    us.push(0.0);
    us.push(1.0);
    us.sort_by(f64::total_cmp);
    us.dedup();
    let mut acc = 0.0;
    for pair in us.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b <= a {
            continue;
        }
        let da = invert_cdf(x, c0, a) - invert_cdf(x, c1, a);
        let db = invert_cdf(x, c0, b) - invert_cdf(x, c1, b);
        acc += (b - a) * (da * da + da * db + db * db) / 3.0;
    }
    acc
}

/// `W₂(h₀ρ, h₁ρ)² min h₁ / ‖h₁ − h₀‖²_{L²(ρ)}` with both densities
/// normalized against `ρ`; zero when the numerator vanishes.
pub fn peyre_check_1d(grid: &Grid1d, h0: &[f64], h1: &[f64], rho: &[f64]) -> Result<f64> {
    for (f, name) in [(h0, "h0"), (h1, "h1"), (rho, "rho")] {
        grid.check(f, name)?;
    }
    let z = |h: &[f64]| grid.integrate(&h.iter().zip(rho).map(|(a, b)| a * b).collect::<Vec<_>>());
    let (z0, z1) = (z(h0), z(h1));
    if !(z0 > 0.0 && z1 > 0.0) {
        return Err(Error::Config("densities must have positive mass".into()));
    }
    let n0: Vec<f64> = h0.iter().map(|v| v / z0).collect();
    let n1: Vec<f64> = h1.iter().map(|v| v / z1).collect();
    let hmin = n1.iter().copied().fold(f64::INFINITY, f64::min);
    if !(hmin > 0.0) {
        return Err(Error::Config("min h1 must be positive".into()));
    }
    let (_, c0) = density_and_cdf(grid, &n0, rho)?;
    let (_, c1) = density_and_cdf(grid, &n1, rho)?;
    let w2 = w2_squared(&grid.x, &c0, &c1);
    if w2 == 0.0 {
        return Ok(0.0);
    }
    let l2: f64 = grid.integrate(
        &n0.iter()
            .zip(&n1)
            .zip(rho)
            .map(|((a, b), r)| (a - b).powi(2) * r)
            .collect::<Vec<_>>(),
    );
    if l2 == 0.0 {
        return Ok(0.0);
    }
    Ok(w2 * hmin / l2)
}

fn check_convex(grid: &Grid1d, u: &[f64], what: &str) -> Result<()> {
    let s = grid.slopes(u);
    if s.windows(2).any(|p| p[1] - p[0] < -1e-10) {
        return Err(Error::Config(format!("{what} is not convex on the grid")));
    }
    Ok(())
}

/// `8 (Lip u + Lip v)^{4/3} (∫|u − v|²)^{1/3} − ∫|u′ − v′|²` for convex
/// grid functions.
pub fn reverse_poincare_1d(grid: &Grid1d, u: &[f64], v: &[f64]) -> Result<f64> {
    grid.check(u, "u")?;
    grid.check(v, "v")?;
    check_convex(grid, u, "u")?;
    check_convex(grid, v, "v")?;
    let (su, sv) = (grid.slopes(u), grid.slopes(v));
    let lip = |s: &[f64]| s.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let diff2: Vec<f64> = u.iter().zip(v).map(|(a, b)| (a - b).powi(2)).collect();
    let l2 = grid.integrate(&diff2);
    let h1: f64 = su
        .iter()
        .zip(&sv)
        .zip(grid.x.windows(2))
        .map(|((a, b), x)| (a - b).powi(2) * (x[1] - x[0]))
        .sum();
    Ok(8.0 * (lip(&su) + lip(&sv)).powf(4.0 / 3.0) * l2.cbrt() - h1)
}

/// `∫∫ |g(x) − g(y)| / |x − y|^{1+α}` as a cell-weighted double sum over
/// distinct nodes.
pub fn frac_seminorm_1d(grid: &Grid1d, g: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!(
            "order must lie in (0, 1), got {alpha}"
        )));
    }
    grid.check(g, "g")?;
    let n = grid.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in (i + 1)..n {
            let dx = grid.x[j] - grid.x[i];
            row += grid.w[j] * (g[j] - g[i]).abs() / dx.powf(1.0 + alpha);
        }
        acc += grid.w[i] * row;
    }
    Ok(2.0 * acc)
}

/// Norms entering the interpolation inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GnNorms {
    pub l2: f64,
    pub w1_inf: f64,
    pub wr_1: f64,
    pub h1: f64,
}

pub fn gn_norms(grid: &Grid1d, u: &[f64], r: f64) -> Result<GnNorms> {
    if !(r > 1.0 && r < 2.0) {
        return Err(Error::Config(format!("order must lie in (1, 2), got {r}")));
    }
    grid.check(u, "u")?;
    let du = grid.derivative(u);
    let sq = |f: &[f64]| grid.integrate(&f.iter().map(|v| v * v).collect::<Vec<_>>());
    let abs = |f: &[f64]| grid.integrate(&f.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let sup = |f: &[f64]| f.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    Ok(GnNorms {
        l2: sq(u).sqrt(),
        w1_inf: sup(u) + sup(&du),
        wr_1: abs(u) + abs(&du) + frac_seminorm_1d(grid, &du, r - 1.0)?,
        h1: (sq(u) + sq(&du)).sqrt(),
    })
}

/// `‖u‖₂^{1−2/(1+r)} ‖u‖_{W^{1,∞}}^{1/(1+r)} ‖u‖_{W^{r,1}}^{1/(1+r)}`.
pub fn gn_product(n: &GnNorms, r: f64) -> f64 {
    let a = 1.0 / (1.0 + r);
    n.l2.powf(1.0 - 2.0 * a) * n.w1_inf.powf(a) * n.wr_1.powf(a)
}

/// Twice the largest ratio `‖u‖_{H¹} / product` over a calibration family.
pub fn gn_calibrate(grid: &Grid1d, family: &[Vec<f64>], r: f64) -> Result<f64> {
    let mut best: f64 = 0.0;
    for u in family {
        let n = gn_norms(grid, u, r)?;
        let prod = gn_product(&n, r);
        if prod > 0.0 {
            best = best.max(n.h1 / prod);
        }
    }
    if best == 0.0 {
        return Err(Error::Fit { needed: 1, got: 0 });
    }
    Ok(2.0 * best)
}

/// `C · product − ‖u‖_{H¹}` with a frozen constant.
pub fn gn_interp_check_1d(grid: &Grid1d, u: &[f64], r: f64, c: f64) -> Result<f64> {
    let n = gn_norms(grid, u, r)?;
    Ok(c * gn_product(&n, r) - n.h1)
}

/// Random walk on the grid nodes smoothed by `passes` three-point averages.
pub fn smoothed_random_walk<R: Rng>(n: usize, passes: usize, rng: &mut R) -> Vec<f64> {
    let mut u = vec![0.0; n];
    for i in 1..n {
        u[i] = u[i - 1] + rng.random_range(-1.0..1.0) / (n as f64).sqrt();
    }
    for _ in 0..passes {
        let prev = u.clone();
        for i in 1..n.saturating_sub(1) {
            u[i] = (prev[i - 1] + prev[i] + prev[i + 1]) / 3.0;
        }
    }
    u
}

/// Maximum of `k` random affine functions with slopes in `[−1, 1]`.
pub fn random_convex<R: Rng>(grid: &Grid1d, k: usize, rng: &mut R) -> Vec<f64> {
    let planes: Vec<(f64, f64)> = (0..k.max(1))
        .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5)))
        .collect();
    grid.eval(|x| {
        planes
            .iter()
            .map(|(a, b)| a * x + b)
            .fold(f64::NEG_INFINITY, f64::max)
    })
}

/// Smooth positive density `1 + Σ a_k cos(kπx)` with `Σ|a_k| ≤ 0.6`.
pub fn random_density<R: Rng>(grid: &Grid1d, modes: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..modes).map(|_| rng.random_range(-1.0..1.0)).collect();
    let total: f64 = raw.iter().map(|a: &f64| a.abs()).sum::<f64>().max(1e-12);
    let amps: Vec<f64> = raw.iter().map(|a| 0.6 * a / total).collect();
    let (lo, hi) = (grid.x[0], grid.x[grid.len() - 1]);
    grid.eval(|x| {
        let s = (x - lo) / (hi - lo);
        1.0 + amps
            .iter()
            .enumerate()
            .map(|(k, a)| a * ((k + 1) as f64 * std::f64::consts::PI * s).cos())
            .sum::<f64>()
    })
}
