//! Invariant battery: derivative checks, log-concavity of the partition
//! functional, curvature certificates and the one-dimensional inequalities.
//!
//! Every suite reports its worst margin `measured − allowed`; a suite passes
//! when that margin is nonpositive.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::{
    curvature_certificate_with, curvature_condition_check, gamma_analytic, semiconcavity_check,
    BoxDomain, CostSpec, Scale,
};
use crate::entropic::{c_eps_transform, SemiDiscrete};
use crate::error::{Error, Result};
use crate::measures::{
    make_discrete, norm, sample_source, wp_value, DiscreteMeasure, Distribution, PointSet, Scheme,
    SourceQuadrature, SourceSpec,
};
use crate::stability::checks1d::{
    displacement_bound_1d, gn_calibrate, gn_interp_check_1d, random_convex, random_density,
    reverse_poincare_1d, smoothed_random_walk, Grid1d,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    LogConcavity,
    Curvature,
    Hessians,
    Displacement,
    ReversePoincare,
    GnInterp,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::LogConcavity,
        Suite::Curvature,
        Suite::Hessians,
        Suite::Displacement,
        Suite::ReversePoincare,
        Suite::GnInterp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::LogConcavity => "log-concavity",
            Suite::Curvature => "curvature",
            Suite::Hessians => "hessians",
            Suite::Displacement => "displacement",
            Suite::ReversePoincare => "reverse-poincare",
            Suite::GnInterp => "gn-interp",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown suite '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Multiplies the analytic curvature constant everywhere it is used.
    pub gamma_scale: f64,
    /// Random triples per configuration in the log-concavity suite.
    pub triples: usize,
    /// Samples for the curvature certificates.
    pub curvature_samples: usize,
    /// Random instances for the derivative checks.
    pub instances: usize,
    /// Nodes of the one-dimensional grids.
    pub grid: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 0,
            gamma_scale: 1.0,
            triples: 100,
            curvature_samples: 100_000,
            instances: 50,
            grid: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub allowed: f64,
}

impl Check {
    fn new(name: impl Into<String>, measured: f64, allowed: f64) -> Self {
        Check {
            name: name.into(),
            measured,
            allowed,
        }
    }

    pub fn margin(&self) -> f64 {
        if self.measured.is_nan() {
            f64::INFINITY
        } else {
            self.measured - self.allowed
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub suite: Suite,
    pub passed: bool,
    pub max_violation: f64,
    pub checks: Vec<Check>,
}

impl SuiteResult {
    fn from_checks(suite: Suite, checks: Vec<Check>) -> Self {
        let max_violation = checks
            .iter()
            .map(Check::margin)
            .fold(f64::NEG_INFINITY, f64::max);
        SuiteResult {
            suite,
            passed: max_violation <= 0.0,
            max_violation,
            checks,
        }
    }

    pub fn worst(&self) -> Option<&Check> {
        self.checks
            .iter()
            .max_by(|a, b| a.margin().total_cmp(&b.margin()))
    }
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> Result<SuiteResult> {
    if !(opts.gamma_scale > 0.0) {
        return Err(Error::Config("gamma_scale must be positive".into()));
    }
    let checks = match suite {
        Suite::LogConcavity => log_concavity(opts)?,
        Suite::Curvature => curvature(opts)?,
        Suite::Hessians => hessians(opts)?,
        Suite::Displacement => displacement(opts)?,
        Suite::ReversePoincare => reverse_poincare(opts)?,
        Suite::GnInterp => gn_interp(opts)?,
    };
    Ok(SuiteResult::from_checks(suite, checks))
}

/// Runs `suites` (all of them when empty) in order.
pub fn run_verify(suites: &[Suite], opts: &VerifyOptions) -> Result<Vec<SuiteResult>> {
    let list: Vec<Suite> = if suites.is_empty() {
        Suite::ALL.to_vec()
    } else {
        suites.to_vec()
    };
    list.into_iter().map(|s| run_suite(s, opts)).collect()
}

fn uniform_box(lo: f64, hi: f64, d: usize, scheme: Scheme, m: usize) -> Result<SourceQuadrature> {
    sample_source(
        &SourceSpec {
            distribution: Distribution::UniformBox {
                lo: vec![lo; d],
                hi: vec![hi; d],
            },
            scheme,
            m,
        },
        0,
    )
}

fn random_targets(rng: &mut ChaCha8Rng, n: usize, d: usize, r: f64) -> Result<DiscreteMeasure> {
    let c: Vec<f64> = (0..n * d).map(|_| rng.random_range(-r..r)).collect();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    make_discrete(PointSet::from_flat(d, c)?, &w, None)
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, s: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-s..s)).collect()
}

fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(x, y)| (1.0 - t) * x + t * y)
        .collect()
}

/// Largest midpoint deficit `(1−t) log I(ψ₀) + t log I(ψ₁) − log I(ψ_t)`
/// minus `allowance(ψ₀, ψ₁, t)`.
fn deficit_sweep<F>(
    sd: &SemiDiscrete,
    eps: f64,
    beta: f64,
    triples: usize,
    rng: &mut ChaCha8Rng,
    allowance: F,
) -> Result<f64>
where
    F: Fn(&[f64], &[f64], f64) -> Result<f64> + Sync,
{
    let n = sd.n();
    let draws: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..triples)
        .map(|_| {
            (
                rand_vec(rng, n, 1.0),
                rand_vec(rng, n, 1.0),
                rng.random_range(0.0..1.0),
            )
        })
        .collect();
    let worst = draws
        .par_iter()
        .map(|(a, b, t)| -> Result<f64> {
            let li = |p: &[f64]| sd.log_partition_i(p, eps, beta);
            let def = (1.0 - t) * li(a)? + t * li(b)? - li(&lerp(a, b, *t))?;
            Ok(def - allowance(a, b, *t)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(worst.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

fn log_concavity(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut checks = Vec::new();
    let line = uniform_box(-1.0, 1.0, 1, Scheme::Grid1d, 400)?;
    let square = uniform_box(-0.7, 0.7, 2, Scheme::GridTensor, 20)?;
    for (dim, quad) in [("1d", &line), ("2d", &square)] {
        let mu = random_targets(&mut rng, 6, quad.dim(), 0.7)?;
        let mut specs = vec![("linear-ell".to_string(), CostSpec::linear_ell())];
        for p in [2.0, 2.5, 3.0] {
            specs.push((
                format!("shifted-p{p}"),
                CostSpec::shifted_power(p, Scale::OneOverP, quad.r_x(), mu.radius())?,
            ));
        }
        for (name, spec) in specs {
            let sd = SemiDiscrete::new(quad, &mu, &spec)?;
            for eps in [1.0, 0.3, 0.1, 0.03] {
                let w = deficit_sweep(&sd, eps, 1.0, opts.triples, &mut rng, |_, _, _| Ok(0.0))?;
                checks.push(Check::new(format!("{dim} {name} eps={eps}"), w, 1e-10));
            }
        }
    }

    // modified log-concavity for 1 < p < 2 against exact transport costs
    let line = uniform_box(-1.0, 1.0, 1, Scheme::Grid1d, 200)?;
    let square = uniform_box(-0.7, 0.7, 2, Scheme::GridTensor, 10)?;
    for p in [1.2, 1.5, 1.8] {
        let gamma = opts.gamma_scale * gamma_analytic(p)?;
        let spec = CostSpec::power_unit(p)?;
        for (dim, quad, levels) in [
            ("1d", &line, &[0.3, 0.1, 0.03][..]),
            ("2d", &square, &[0.1][..]),
        ] {
            let mu = random_targets(&mut rng, 6, quad.dim(), 0.7)?;
            let sd = SemiDiscrete::new(quad, &mu, &spec)?;
            for &eps in levels {
                let beta = rng.random_range(0.5..2.0);
                let allowance = |a: &[f64], b: &[f64], t: f64| -> Result<f64> {
                    let r0 = sd.tilted_quadrature(a, eps, beta)?.as_measure()?;
                    let r1 = sd.tilted_quadrature(b, eps, beta)?.as_measure()?;
                    let w = wp_value(&r0, &r1, &spec)?;
                    Ok(beta * t * (1.0 - t) * spec.scale_factor() * gamma * w + 1e-8)
                };
                let w = deficit_sweep(&sd, eps, beta, opts.triples, &mut rng, allowance)?;
                checks.push(Check::new(
                    format!("{dim} modified p={p} eps={eps} beta={beta:.3}"),
                    w,
                    0.0,
                ));
            }
        }
    }
    Ok(checks)
}

fn curvature(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut checks = Vec::new();
    let unit = BoxDomain::unit(2);
    for p in [1.2, 1.5, 1.8] {
        let gamma = opts.gamma_scale * gamma_analytic(p)?;
        let cert = curvature_certificate_with(p, gamma, opts.curvature_samples, opts.seed)?;
        checks.push(Check::new(
            format!("empirical gamma p={p}"),
            cert.gamma_empirical,
            gamma,
        ));
        let mut slack = f64::INFINITY;
        for k in 0..opts.curvature_samples / 10 {
            let d = 1 + k % 3;
            let x0 = rand_vec(&mut rng, d, 1.0);
            let x1 = if k % 2 == 0 {
                x0.iter().map(|v| -v * rng.random_range(0.2..5.0)).collect()
            } else {
                rand_vec(&mut rng, d, 1.0)
            };
            let t = rng.random_range(0.0..=1.0);
            slack = slack.min(semiconcavity_check(p, gamma, &x0, &x1, t));
        }
        checks.push(Check::new(
            format!("semiconcavity min slack p={p} (negated)"),
            -slack,
            1e-12,
        ));
        let pc = CostSpec::power_unit(p)?;
        let v = curvature_condition_check(&pc, p, gamma, &unit, &unit, 5000, opts.seed + 1);
        checks.push(Check::new(
            format!("p-cost curvature condition p={p}"),
            v,
            1e-10,
        ));
        let bc = CostSpec::boundary(p, Scale::Unit, BoxDomain::unit(2))?;
        let v = curvature_condition_check(&bc, p, gamma, &unit, &unit, 5000, opts.seed + 2);
        checks.push(Check::new(
            format!("boundary curvature condition p={p}"),
            v,
            1e-10,
        ));
    }
    Ok(checks)
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-300)
}

fn axpy(a: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(y, x)| y + a * x).collect()
}

fn unit_vec(n: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[i] = 1.0;
    e
}

/// Worst relative errors of gradient, Hessian form, plan and log-partition
/// Hessian form against central differences on one random instance.
fn derivative_errors(seed: u64, k: usize) -> Result<[f64; 4]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let eps: f64 = [1.0, 0.1, 0.01][k % 3];
    let d = 1 + k % 3;
    let n = rng.random_range(2..=20);
    let m = rng.random_range(50..=500);
    let spec = match k % 4 {
        0 => CostSpec::power(1.5)?,
        1 => CostSpec::power(2.0)?,
        2 => CostSpec::power_unit(3.0)?,
        _ => CostSpec::linear_ell(),
    };
    let nodes = rand_vec(&mut rng, m * d, 1.0);
    let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
    let quad = SourceQuadrature::from_points(PointSet::from_flat(d, nodes)?, w)?;
    let ys = rand_vec(&mut rng, n * d, 1.0);
    let mu_w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let sigma: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let targets = make_discrete(PointSet::from_flat(d, ys)?, &mu_w, Some(&sigma))?;
    let sd = SemiDiscrete::new(&quad, &targets, &spec)?;
    let psi = rand_vec(&mut rng, n, 0.3);
    let v = rand_vec(&mut rng, n, 1.0);
    let h = 1e-6 * eps.sqrt().max(0.1);
    let beta = rng.random_range(0.5..2.0);

    let g = sd.grad_k(&psi, eps)?;
    let fd: Vec<f64> = (0..n)
        .map(|i| {
            let e = unit_vec(n, i);
            Ok((sd.kantorovich_k(&axpy(h, &e, &psi), eps)?
                - sd.kantorovich_k(&axpy(-h, &e, &psi), eps)?)
                / (2.0 * h))
        })
        .collect::<Result<_>>()?;
    let e_grad = rel_err(&g, &fd);

    let dir = |s: f64| -> Result<f64> {
        let g = sd.grad_k(&axpy(s, &v, &psi), eps)?;
        Ok(g.iter().zip(&v).map(|(a, b)| a * b).sum())
    };
    let fd2 = (dir(h)? - dir(-h)?) / (2.0 * h);
    let e_hess = rel_err(&[sd.hess_k_quadform(&psi, &v, eps)?], &[fd2]);

    let plan = sd.plan(&psi, eps)?;
    let mut e_plan: f64 = 0.0;
    for j in (0..m).step_by((m / 50).max(1)) {
        let x = quad.node(j);
        let fd: Vec<f64> = (0..n)
            .map(|i| {
                let e = unit_vec(n, i);
                let f = |s: f64| {
                    c_eps_transform(
                        &axpy(s, &e, &psi),
                        targets.points(),
                        targets.sigma(),
                        &spec,
                        eps,
                        x,
                    )
                };
                Ok(-(f(h)? - f(-h)?) / (2.0 * h))
            })
            .collect::<Result<_>>()?;
        e_plan = e_plan.max(rel_err(plan.row(j), &fd));
    }

    let dir = |s: f64| -> Result<f64> {
        let g = sd.grad_log_partition_i(&axpy(s, &v, &psi), eps, beta)?;
        Ok(g.iter().zip(&v).map(|(a, b)| a * b).sum())
    };
    let fd2 = (dir(h)? - dir(-h)?) / (2.0 * h);
    let e_logi = rel_err(&[sd.log_i_hess_quadform(&psi, &v, eps, beta)?], &[fd2]);
    Ok([e_grad, e_hess, e_plan, e_logi])
}

fn hessians(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let errs: Vec<[f64; 4]> = (0..opts.instances)
        .into_par_iter()
        .map(|k| derivative_errors(opts.seed, k))
        .collect::<Result<_>>()?;
    let names = [
        "grad_K",
        "hess_K quadratic form",
        "conditional plan",
        "log I hessian form",
    ];
    Ok(names
        .iter()
        .enumerate()
        .map(|(q, name)| {
            let worst = errs.iter().map(|e| e[q]).fold(0.0, f64::max);
            Check::new(format!("{name} relative error"), worst, 1e-5)
        })
        .collect())
}

fn displacement(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let grid = Grid1d::uniform(0.0, 1.0, opts.grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let rho = vec![1.0; grid.len()];
    let mut checks = Vec::new();
    for k in 0..20 {
        let h0 = random_density(&grid, 4, &mut rng);
        let h1 = random_density(&grid, 4, &mut rng);
        let t = rng.random_range(0.05..0.95);
        for p in [1.5, 2.0] {
            let v = displacement_bound_1d(&grid, &h0, &h1, &rho, p, t)?;
            checks.push(Check::new(format!("pair {k} p={p} t={t:.3}"), v, 1e-6));
        }
    }
    Ok(checks)
}

fn reverse_poincare(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let grid = Grid1d::uniform(0.0, 1.0, opts.grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut checks = Vec::new();
    for k in 0..100 {
        let pieces = rng.random_range(1..12);
        let u = random_convex(&grid, pieces, &mut rng);
        let v = random_convex(&grid, pieces, &mut rng);
        let slack = reverse_poincare_1d(&grid, &u, &v)?;
        checks.push(Check::new(
            format!("pair {k} (negated slack)"),
            -slack,
            1e-6,
        ));
    }
    Ok(checks)
}

fn gn_interp(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let grid = Grid1d::uniform(0.0, 1.0, opts.grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut checks = Vec::new();
    for r in [1.25, 1.5, 1.75] {
        let calib: Vec<Vec<f64>> = (0..8)
            .map(|_| smoothed_random_walk(grid.len(), 60, &mut rng))
            .collect();
        let c = gn_calibrate(&grid, &calib, r)?;
        let held: Vec<Vec<f64>> = (0..20)
            .map(|_| smoothed_random_walk(grid.len(), 60, &mut rng))
            .collect();
        let worst = held
            .par_iter()
            .map(|u| gn_interp_check_1d(&grid, u, r, c).map(|s| -s))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        checks.push(Check::new(
            format!("held-out r={r} (negated slack)"),
            worst,
            0.0,
        ));
    }
    Ok(checks)
}
