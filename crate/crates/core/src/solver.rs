//! Semi-discrete entropic dual solver.
//!
//! Maximizes `F(ψ) = ⟨μ, ψ⟩ − K^{c,ε}(ψ)` over potentials on the target
//! atoms. Newton steps use the dense Hessian of K with a small ridge and the
//! constant direction (the gauge degeneracy) lifted out of its kernel; large
//! targets fall back to gradient ascent. Both use Armijo backtracking.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::costs::{vector_power, CostSpec, Variant};
use crate::entropic::{dot, Gauge, PotentialOnTargets, SemiDiscrete};
use crate::error::{Error, Result};
use crate::measures::{
    euclidean, make_discrete, rel_entropy, wp_discrete, DiscreteMeasure, PointSet, SourceQuadrature,
};

/// Largest target size handled with dense Newton steps.
pub const DENSE_LIMIT: usize = 64;

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    GradientAscent,
    Newton,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LineSearch {
    Backtracking,
    None,
}

/// Geometric schedule `eps0, eps0·factor, ...` down to `eps_min`. Unset
/// endpoints default to `eps0 = ½·diam(Y)^p·s` and `eps_min = eps0 / 2⁸`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsSchedule {
    #[serde(default)]
    pub eps0: Option<f64>,
    #[serde(default = "default_factor")]
    pub factor: f64,
    #[serde(default)]
    pub eps_min: Option<f64>,
}

fn default_factor() -> f64 {
    0.5
}

impl Default for EpsSchedule {
    fn default() -> Self {
        EpsSchedule {
            eps0: None,
            factor: 0.5,
            eps_min: None,
        }
    }
}

impl EpsSchedule {
    /// Concrete levels for a given problem.
    pub fn levels(
        &self,
        targets: &DiscreteMeasure,
        quad: &SourceQuadrature,
        spec: &CostSpec,
    ) -> Result<Vec<f64>> {
        let eps0 = match self.eps0 {
            Some(e) => e,
            None => default_eps0(targets, quad, spec),
        };
        let eps_min = self.eps_min.unwrap_or(eps0 / 256.0);
        if !(eps0 > 0.0) || !(eps_min > 0.0) || !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::Config(format!(
                "bad schedule: eps0 {eps0}, factor {}, eps_min {eps_min}",
                self.factor
            )));
        }
        let mut out = vec![eps0];
        let mut e = eps0;
        while e * self.factor >= eps_min * (1.0 - 1e-12) {
            e *= self.factor;
            out.push(e);
        }
        Ok(out)
    }
}

impl EpsSchedule {
    /// The same schedule with both endpoints fixed for this problem, so it
    /// can be reused verbatim on perturbed targets.
    pub fn resolved(
        &self,
        targets: &DiscreteMeasure,
        quad: &SourceQuadrature,
        spec: &CostSpec,
    ) -> EpsSchedule {
        let eps0 = self
            .eps0
            .unwrap_or_else(|| default_eps0(targets, quad, spec));
        EpsSchedule {
            eps0: Some(eps0),
            factor: self.factor,
            eps_min: Some(self.eps_min.unwrap_or(eps0 / 256.0)),
        }
    }
}

fn default_eps0(targets: &DiscreteMeasure, quad: &SourceQuadrature, spec: &CostSpec) -> f64 {
    let mut diam = targets.diameter();
    if diam == 0.0 {
        diam = quad.diam();
    }
    if diam == 0.0 {
        diam = 1.0;
    }
    0.5 * diam.powf(spec.p()) * spec.scale_factor()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub method: Method,
    pub tol_marginal: f64,
    pub max_iters: usize,
    pub line_search: LineSearch,
    pub eps_schedule: EpsSchedule,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            method: Method::Newton,
            tol_marginal: 1e-10,
            max_iters: 500,
            line_search: LineSearch::Backtracking,
            eps_schedule: EpsSchedule::default(),
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_marginal > 0.0) {
            return Err(Error::Config("tol_marginal must be > 0".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        let s = &self.eps_schedule;
        if !(s.factor > 0.0 && s.factor < 1.0) {
            return Err(Error::Config("schedule factor must lie in (0, 1)".into()));
        }
        if s.eps_min.is_some_and(|e| !(e > 0.0)) || s.eps0.is_some_and(|e| !(e > 0.0)) {
            return Err(Error::Config("schedule endpoints must be > 0".into()));
        }
        Ok(())
    }
}

/// Gauge-fixed dual optimizer at one regularization level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub psi: Vec<f64>,
    pub phi: Vec<f64>,
    pub eps: f64,
    pub residual: f64,
    pub objective: f64,
    pub iters: usize,
}

impl DualSolution {
    pub fn potential(&self) -> PotentialOnTargets {
        PotentialOnTargets {
            values: self.psi.clone(),
            gauge: Gauge::ZeroRhoMeanPhi,
        }
    }
}

/// Objective values accepted along the iterations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveTrace {
    pub objectives: Vec<f64>,
}

fn check_targets(mu: &DiscreteMeasure) -> Result<()> {
    if let Some(i) = mu.weights().iter().position(|w| *w <= 0.0) {
        return Err(Error::Support {
            index: i,
            mass: mu.weights()[i],
        });
    }
    Ok(())
}

pub fn solve_dual(
    quad: &SourceQuadrature,
    mu: &DiscreteMeasure,
    spec: &CostSpec,
    eps: f64,
    opts: &SolverOptions,
) -> Result<DualSolution> {
    let sd = SemiDiscrete::new(quad, mu, spec)?;
    solve_dual_from(&sd, eps, opts, None, None)
}

/// Solves on a prepared problem, optionally warm-started and traced.
pub fn solve_dual_from(
    sd: &SemiDiscrete,
    eps: f64,
    opts: &SolverOptions,
    warm: Option<&[f64]>,
    mut trace: Option<&mut SolveTrace>,
) -> Result<DualSolution> {
    opts.validate()?;
    if !(eps > 0.0) {
        return Err(Error::Config(format!(
            "regularization must be > 0, got {eps}"
        )));
    }
    let mu = sd.targets();
    check_targets(mu)?;
    let n = sd.n();
    let mu_w = mu.weights();
    let mut psi = match warm {
        Some(w) if w.len() == n => w.to_vec(),
        Some(w) => {
            return Err(Error::Dimension {
                expected: n,
                got: w.len(),
            })
        }
        None => vec![0.0; n],
    };
    let objective = |k: f64, psi: &[f64]| dot(mu_w, psi) - k;
    let (mut k, mut grad, mut plan) = sd.k_with_grad(&psi, eps)?;
    let mut f = objective(k, &psi);
    // with one atom ∇K is the total source mass identically
    let mut residual = if n == 1 { 0.0 } else { l1_gap(&grad, mu_w) };
    if let Some(t) = trace.as_deref_mut() {
        t.objectives.push(f);
    }
    let newton = opts.method == Method::Newton && n <= DENSE_LIMIT;
    let mut ga_step = eps;
    let mut iters = 0;
    while residual > opts.tol_marginal {
        if iters == opts.max_iters {
            return Err(Error::NonConvergence { iters, residual });
        }
        iters += 1;
        let g: Vec<f64> = mu_w.iter().zip(&grad).map(|(m, k)| m - k).collect();
        let (dir, mut t) = if newton {
            match newton_direction(sd, &plan, eps, &g) {
                Some(d) => (d, 1.0),
                None => (g.clone(), ga_step),
            }
        } else {
            (g.clone(), 2.0 * ga_step)
        };
        let slope = dot(&g, &dir);
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = psi.iter().zip(&dir).map(|(p, d)| p + t * d).collect();
            let (k_t, grad_t, plan_t) = sd.k_with_grad(&trial, eps)?;
            let f_t = objective(k_t, &trial);
            let r_t = l1_gap(&grad_t, mu_w);
            let armijo = f_t >= f + ARMIJO * t * slope;
            // near the optimum F changes below rounding; accept a step that
            // keeps F within rounding and lowers the residual
            let flat = f_t >= f - 1e-14 * (1.0 + f.abs()) && r_t < residual;
            if opts.line_search == LineSearch::None || armijo || flat {
                accepted = Some((trial, k_t, grad_t, plan_t, f_t, r_t));
                break;
            }
            t *= 0.5;
        }
        let Some((trial, k_t, grad_t, plan_t, f_t, r_t)) = accepted else {
            return Err(Error::NonConvergence { iters, residual });
        };
        if !newton {
            ga_step = t;
        }
        psi = trial;
        k = k_t;
        grad = grad_t;
        plan = plan_t;
        f = f_t;
        residual = r_t;
        if let Some(tr) = trace.as_deref_mut() {
            tr.objectives.push(f);
        }
    }
    let _ = k;
    finish(sd, psi, eps, residual, iters)
}

fn finish(
    sd: &SemiDiscrete,
    psi: Vec<f64>,
    eps: f64,
    residual: f64,
    iters: usize,
) -> Result<DualSolution> {
    let mu = sd.targets();
    let psi = sd.gauge(&psi, eps)?;
    let phi = sd.phi(&psi, eps)?;
    let value = dot(mu.weights(), &psi) + dot(sd.quadrature().weights(), &phi);
    let objective = value - eps * rel_entropy(mu.weights(), mu.sigma())?;
    Ok(DualSolution {
        psi,
        phi,
        eps,
        residual,
        objective,
        iters,
    })
}

fn l1_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn newton_direction(
    sd: &SemiDiscrete,
    plan: &crate::entropic::ConditionalPlan,
    eps: f64,
    g: &[f64],
) -> Option<Vec<f64>> {
    let n = g.len();
    let mut h: DMatrix<f64> = sd.hess_k_dense_from_plan(plan, eps);
    let scale = (0..n).map(|i| h[(i, i)]).sum::<f64>() / n as f64;
    let lift = if scale > 0.0 { scale } else { 1.0 / eps };
    let ridge = 1e-10 / eps;
    for a in 0..n {
        h[(a, a)] += ridge;
        for b in 0..n {
            h[(a, b)] += lift / n as f64;
        }
    }
    let chol = h.cholesky()?;
    let d = chol.solve(&DVector::from_column_slice(g));
    let mean = d.iter().sum::<f64>() / n as f64;
    let d: Vec<f64> = d.iter().map(|v| v - mean).collect();
    d.iter().all(|v| v.is_finite()).then_some(d)
}

/// Result of an ε-schedule run. `failure` carries the error that stopped
/// the schedule early, if any; `solutions` holds every level reached.
#[derive(Debug, Clone)]
pub struct ScheduleOutcome {
    pub solutions: Vec<DualSolution>,
    /// Sup-norm changes of ψ between consecutive levels.
    pub increments: Vec<f64>,
    pub failure: Option<Error>,
}

impl ScheduleOutcome {
    pub fn last(&self) -> Option<&DualSolution> {
        self.solutions.last()
    }
}

pub fn solve_eps_schedule(
    quad: &SourceQuadrature,
    mu: &DiscreteMeasure,
    spec: &CostSpec,
    opts: &SolverOptions,
) -> Result<ScheduleOutcome> {
    let sd = SemiDiscrete::new(quad, mu, spec)?;
    solve_schedule_on(&sd, opts)
}

pub fn solve_schedule_on(sd: &SemiDiscrete, opts: &SolverOptions) -> Result<ScheduleOutcome> {
    opts.validate()?;
    check_targets(sd.targets())?;
    let levels = opts
        .eps_schedule
        .levels(sd.targets(), sd.quadrature(), sd.spec())?;
    let mut solutions: Vec<DualSolution> = Vec::with_capacity(levels.len());
    let mut increments = Vec::new();
    for eps in levels {
        let warm = solutions.last().map(|s| s.psi.clone());
        match solve_dual_from(sd, eps, opts, warm.as_deref(), None) {
            Ok(sol) => {
                if let Some(prev) = solutions.last() {
                    increments.push(sup_gap(&prev.psi, &sol.psi));
                }
                solutions.push(sol);
            }
            Err(e) => {
                return Ok(ScheduleOutcome {
                    solutions,
                    increments,
                    failure: Some(e),
                })
            }
        }
    }
    Ok(ScheduleOutcome {
        solutions,
        increments,
        failure: None,
    })
}

pub fn sup_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapMode {
    HardArgmin,
    EntropicSoft,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportMapEval {
    pub mode: MapMode,
    pub values: Vec<Vec<f64>>,
}

/// Transport map at the quadrature nodes. Hard mode picks the argmin atom
/// (lowest index on ties); soft mode inverts the cost gradient at `∇φ_ε`.
pub fn extract_map(
    sol: &DualSolution,
    sd: &SemiDiscrete,
    mode: MapMode,
) -> Result<TransportMapEval> {
    let targets = sd.targets();
    let values = match mode {
        MapMode::HardArgmin => {
            let plan = sd.plan(&sol.psi, 0.0)?;
            (0..sd.m())
                .map(|j| {
                    let i = plan.row(j).iter().position(|p| *p == 1.0).unwrap_or(0);
                    targets.point(i).to_vec()
                })
                .collect()
        }
        MapMode::EntropicSoft => {
            let grads = sd.soft_gradient(&sol.psi, sol.eps)?;
            let spec = sd.spec();
            match spec.variant() {
                Variant::Power => {
                    let sp = spec.scale_factor() * spec.p();
                    let expo = 1.0 / (spec.p() - 1.0);
                    grads
                        .iter()
                        .enumerate()
                        .map(|(j, g)| {
                            let scaled: Vec<f64> = g.iter().map(|v| v / sp).collect();
                            let disp = vector_power(&scaled, expo);
                            sd.quadrature()
                                .node(j)
                                .iter()
                                .zip(&disp)
                                .map(|(x, d)| x - d)
                                .collect()
                        })
                        .collect()
                }
                Variant::LinearEll => grads
                    .iter()
                    .map(|g| g.iter().map(|v| -v).collect())
                    .collect(),
                _ => {
                    return Err(Error::NotApplicable(
                        "soft map for this cost variant",
                        spec.p(),
                    ))
                }
            }
        }
    };
    Ok(TransportMapEval { mode, values })
}

/// Collapses a quadrature onto at most `atoms` atoms: contiguous equal-count
/// blocks of the sorted nodes on the line, nearest-centre clusters around
/// farthest-point seeds otherwise. Atoms are the mass-weighted centroids.
pub fn coarsen_source(quad: &SourceQuadrature, atoms: usize) -> Result<DiscreteMeasure> {
    if atoms == 0 {
        return Err(Error::Config("need at least one source atom".into()));
    }
    let m = quad.len();
    let w = quad.weights();
    if m <= atoms {
        return make_discrete(quad.nodes().clone(), w, None);
    }
    let d = quad.dim();
    let mut label = vec![0usize; m];
    if d == 1 {
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| quad.node(a)[0].total_cmp(&quad.node(b)[0]));
        for (rank, &j) in order.iter().enumerate() {
            label[j] = rank * atoms / m;
        }
    } else {
        let mut centres = vec![0usize];
        let mut near: Vec<f64> = (0..m)
            .map(|j| euclidean(quad.node(j), quad.node(0)))
            .collect();
        while centres.len() < atoms {
            let (far, _) = near
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (j, v)| {
                    if *v > acc.1 {
                        (j, *v)
                    } else {
                        acc
                    }
                });
            centres.push(far);
            for (j, d) in near.iter_mut().enumerate() {
                *d = d.min(euclidean(quad.node(j), quad.node(far)));
            }
        }
        for (j, lab) in label.iter_mut().enumerate() {
            let mut best = f64::INFINITY;
            for (k, &c) in centres.iter().enumerate() {
                let dist = euclidean(quad.node(j), quad.node(c));
                if dist < best {
                    best = dist;
                    *lab = k;
                }
            }
        }
    }
    let mut mass = vec![0.0; atoms];
    let mut sum = vec![0.0; atoms * d];
    for j in 0..m {
        let k = label[j];
        mass[k] += w[j];
        for a in 0..d {
            sum[k * d + a] += w[j] * quad.node(j)[a];
        }
    }
    let mut coords = Vec::new();
    let mut weights = Vec::new();
    for k in 0..atoms {
        if mass[k] > 0.0 {
            coords.extend((0..d).map(|a| sum[k * d + a] / mass[k]));
            weights.push(mass[k]);
        }
    }
    make_discrete(PointSet::from_flat(d, coords)?, &weights, None)
}

/// Unregularized dual potentials from the exact LP on a discretized source,
/// gauge-normalized against the hard transform on `quad`. `residual` is the
/// LP duality gap.
pub fn exact_dual_oracle(
    quad: &SourceQuadrature,
    mu: &DiscreteMeasure,
    spec: &CostSpec,
    atoms: usize,
) -> Result<DualSolution> {
    let source = coarsen_source(quad, atoms)?;
    let lp = wp_discrete(&source, mu, spec)?;
    let gap = (lp.value - lp.dual_value(source.weights(), mu.weights())).abs();
    let sd = SemiDiscrete::new(quad, mu, spec)?;
    let psi = sd.gauge(&lp.dual_tgt, 0.0)?;
    let phi = sd.phi(&psi, 0.0)?;
    Ok(DualSolution {
        psi,
        phi,
        eps: 0.0,
        residual: gap,
        objective: lp.value,
        iters: 0,
    })
}
