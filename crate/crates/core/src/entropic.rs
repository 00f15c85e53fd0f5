//! Hard and entropic c-transforms and the functionals built on them.
//!
//! For a potential ψ on the target atoms,
//!
//! ```text
//! ψ^c(x)    = min_i c(x, y_i) − ψ_i
//! ψ^{c,ε}(x) = −ε log Σ_i σ_i exp((ψ_i − c(x, y_i)) / ε)
//! K(ψ)      = −Σ_j w_j ψ^{c,ε}(x_j)
//! I_β(ψ)    = Σ_j w_j exp(β ψ^{c,ε}(x_j))
//! ```
//!
//! where `(x_j, w_j)` is the source quadrature. ε = 0 selects the hard
//! transform. Every exponential goes through a max-shifted log-sum-exp.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::CostSpec;
use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, PointSet, SourceQuadrature};

/// Below this many cost entries the row loops stay sequential.
const PAR_THRESHOLD: usize = 1 << 14;

pub fn c_transform(psi: &[f64], targets: &PointSet, spec: &CostSpec, x: &[f64]) -> f64 {
    hard_min(psi, targets.iter().map(|y| spec.eval(x, y))).0
}

fn hard_min(psi: &[f64], costs: impl Iterator<Item = f64>) -> (f64, usize) {
    let mut best = f64::INFINITY;
    let mut arg = 0;
    for (i, c) in costs.enumerate() {
        let v = c - psi[i];
        if v < best {
            best = v;
            arg = i;
        }
    }
    (best, arg)
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::Config(format!(
            "regularization must be >= 0, got {eps}"
        )));
    }
    Ok(())
}

fn check_positive_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Config(format!(
            "regularization must be > 0, got {eps}"
        )));
    }
    Ok(())
}

/// Entropic c-transform at a single point; ε = 0 gives [`c_transform`].
pub fn c_eps_transform(
    psi: &[f64],
    targets: &PointSet,
    sigma: &[f64],
    spec: &CostSpec,
    eps: f64,
    x: &[f64],
) -> Result<f64> {
    check_eps(eps)?;
    if psi.len() != targets.len() || sigma.len() != targets.len() {
        return Err(Error::Dimension {
            expected: targets.len(),
            got: psi.len().min(sigma.len()),
        });
    }
    let costs: Vec<f64> = targets.iter().map(|y| spec.eval(x, y)).collect();
    if eps == 0.0 {
        return Ok(hard_min(psi, costs.into_iter()).0);
    }
    Ok(soft_row(psi, &costs, sigma, eps, None))
}

/// `−ε log Σ σ_i exp((ψ_i − c_i)/ε)`; fills `probs` with the softmax if given.
#[inline]
fn soft_row(psi: &[f64], costs: &[f64], sigma: &[f64], eps: f64, probs: Option<&mut [f64]>) -> f64 {
    let mut amax = f64::NEG_INFINITY;
    for i in 0..costs.len() {
        let v = (psi[i] - costs[i]) / eps + sigma[i].ln();
        amax = amax.max(v);
    }
    let mut s = 0.0;
    match probs {
        Some(out) => {
            for i in 0..costs.len() {
                let e = ((psi[i] - costs[i]) / eps + sigma[i].ln() - amax).exp();
                out[i] = e;
                s += e;
            }
            out.iter_mut().for_each(|v| *v /= s);
        }
        None => {
            for i in 0..costs.len() {
                s += ((psi[i] - costs[i]) / eps + sigma[i].ln() - amax).exp();
            }
        }
    }
    -eps * (amax + s.ln())
}

/// Row-stochastic matrix `π(y_i | x_j)`, one row per source node.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalPlan {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ConditionalPlan {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.cols..(j + 1) * self.cols]
    }

    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.data[j * self.cols + i]
    }
}

/// Conditional plan at every node of `quad`.
pub fn conditional_plan(
    psi: &[f64],
    targets: &DiscreteMeasure,
    spec: &CostSpec,
    eps: f64,
    quad: &SourceQuadrature,
) -> Result<ConditionalPlan> {
    SemiDiscrete::new(quad, targets, spec)?.plan(psi, eps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gauge {
    Raw,
    ZeroRhoMeanPhi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialOnTargets {
    pub values: Vec<f64>,
    pub gauge: Gauge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub variance: f64,
    pub oscillation: f64,
}

/// Weighted mean, variance and oscillation (max − min).
pub fn stats(values: &[f64], weights: &[f64]) -> Stats {
    let mean: f64 = values.iter().zip(weights).map(|(v, w)| v * w).sum();
    let variance = values
        .iter()
        .zip(weights)
        .map(|(v, w)| w * (v - mean) * (v - mean))
        .sum();
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
            (l.min(*v), h.max(*v))
        });
    Stats {
        mean,
        variance,
        oscillation: if values.is_empty() { 0.0 } else { hi - lo },
    }
}

/// Source quadrature reweighted by `exp(β φ_ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltedQuadrature {
    pub quadrature: SourceQuadrature,
    pub beta: f64,
    /// `log I_β`.
    pub log_normalizer: f64,
}

impl TiltedQuadrature {
    pub fn weights(&self) -> &[f64] {
        self.quadrature.weights()
    }

    pub fn normalizer(&self) -> f64 {
        self.log_normalizer.exp()
    }

    /// The tilted quadrature as a discrete measure on its nodes.
    pub fn as_measure(&self) -> Result<DiscreteMeasure> {
        crate::measures::make_discrete(self.quadrature.nodes().clone(), self.weights(), None)
    }
}

/// A source quadrature, target atoms with reference weights, and a cost,
/// with the `m × n` cost matrix cached.
#[derive(Debug, Clone)]
pub struct SemiDiscrete {
    quad: SourceQuadrature,
    targets: DiscreteMeasure,
    spec: CostSpec,
    cost: Vec<f64>,
}

impl SemiDiscrete {
    pub fn new(
        quad: &SourceQuadrature,
        targets: &DiscreteMeasure,
        spec: &CostSpec,
    ) -> Result<Self> {
        if quad.dim() != targets.dim() {
            return Err(Error::Dimension {
                expected: quad.dim(),
                got: targets.dim(),
            });
        }
        let n = targets.len();
        let mut cost = vec![0.0; quad.len() * n];
        let fill = |(j, row): (usize, &mut [f64])| {
            let x = quad.node(j);
            for (i, c) in row.iter_mut().enumerate() {
                *c = spec.eval(x, targets.point(i));
            }
        };
        if cost.len() >= PAR_THRESHOLD {
            cost.par_chunks_mut(n).enumerate().for_each(fill);
        } else {
            cost.chunks_mut(n).enumerate().for_each(fill);
        }
        Ok(SemiDiscrete {
            quad: quad.clone(),
            targets: targets.clone(),
            spec: spec.clone(),
            cost,
        })
    }

    pub fn quadrature(&self) -> &SourceQuadrature {
        &self.quad
    }

    pub fn targets(&self) -> &DiscreteMeasure {
        &self.targets
    }

    pub fn spec(&self) -> &CostSpec {
        &self.spec
    }

    /// Number of target atoms.
    pub fn n(&self) -> usize {
        self.targets.len()
    }

    /// Number of quadrature nodes.
    pub fn m(&self) -> usize {
        self.quad.len()
    }

    pub fn cost(&self, j: usize, i: usize) -> f64 {
        self.cost[j * self.n() + i]
    }

    fn cost_row(&self, j: usize) -> &[f64] {
        let n = self.n();
        &self.cost[j * n..(j + 1) * n]
    }

    fn check_psi(&self, psi: &[f64]) -> Result<()> {
        if psi.len() != self.n() {
            return Err(Error::Dimension {
                expected: self.n(),
                got: psi.len(),
            });
        }
        if psi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerics("non-finite potential".into()));
        }
        Ok(())
    }

    fn map_rows<T: Send>(&self, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
        if self.cost.len() >= PAR_THRESHOLD {
            (0..self.m()).into_par_iter().map(f).collect()
        } else {
            (0..self.m()).map(f).collect()
        }
    }

    /// `φ_j = ψ^{c,ε}(x_j)` at every node.
    pub fn phi(&self, psi: &[f64], eps: f64) -> Result<Vec<f64>> {
        check_eps(eps)?;
        self.check_psi(psi)?;
        let sigma = self.targets.sigma();
        Ok(self.map_rows(|j| {
            let row = self.cost_row(j);
            if eps == 0.0 {
                hard_min(psi, row.iter().copied()).0
            } else {
                soft_row(psi, row, sigma, eps, None)
            }
        }))
    }

    /// φ values and the conditional plan in one pass. At ε = 0 the plan is
    /// the argmin indicator (lowest index on ties).
    pub fn phi_and_plan(&self, psi: &[f64], eps: f64) -> Result<(Vec<f64>, ConditionalPlan)> {
        check_eps(eps)?;
        self.check_psi(psi)?;
        let n = self.n();
        let sigma = self.targets.sigma();
        let rows: Vec<(f64, Vec<f64>)> = self.map_rows(|j| {
            let row = self.cost_row(j);
            let mut probs = vec![0.0; n];
            let v = if eps == 0.0 {
                let (v, i) = hard_min(psi, row.iter().copied());
                probs[i] = 1.0;
                v
            } else {
                soft_row(psi, row, sigma, eps, Some(&mut probs))
            };
            (v, probs)
        });
        let mut phi = Vec::with_capacity(self.m());
        let mut data = Vec::with_capacity(self.m() * n);
        for (v, p) in rows {
            phi.push(v);
            data.extend_from_slice(&p);
        }
        Ok((
            phi,
            ConditionalPlan {
                rows: self.m(),
                cols: n,
                data,
            },
        ))
    }

    pub fn plan(&self, psi: &[f64], eps: f64) -> Result<ConditionalPlan> {
        Ok(self.phi_and_plan(psi, eps)?.1)
    }

    /// `K(ψ) = −Σ_j w_j φ_j`.
    pub fn kantorovich_k(&self, psi: &[f64], eps: f64) -> Result<f64> {
        let phi = self.phi(psi, eps)?;
        Ok(-dot(self.quad.weights(), &phi))
    }

    /// `∇K_i = Σ_j w_j π(y_i | x_j)`.
    pub fn grad_k(&self, psi: &[f64], eps: f64) -> Result<Vec<f64>> {
        check_positive_eps(eps)?;
        let plan = self.plan(psi, eps)?;
        Ok(self.plan_marginal(&plan))
    }

    fn plan_marginal(&self, plan: &ConditionalPlan) -> Vec<f64> {
        let mut g = vec![0.0; self.n()];
        for (j, w) in self.quad.weights().iter().enumerate() {
            for (gi, p) in g.iter_mut().zip(plan.row(j)) {
                *gi += w * p;
            }
        }
        g
    }

    /// Value, gradient and plan of K at once.
    pub fn k_with_grad(&self, psi: &[f64], eps: f64) -> Result<(f64, Vec<f64>, ConditionalPlan)> {
        check_positive_eps(eps)?;
        let (phi, plan) = self.phi_and_plan(psi, eps)?;
        let g = self.plan_marginal(&plan);
        Ok((-dot(self.quad.weights(), &phi), g, plan))
    }

    /// `⟨v, ∇²K v⟩ = (1/ε) Σ_j w_j Var_{π(·|x_j)}(v)`.
    pub fn hess_k_quadform(&self, psi: &[f64], v: &[f64], eps: f64) -> Result<f64> {
        check_positive_eps(eps)?;
        self.check_psi(v)?;
        let plan = self.plan(psi, eps)?;
        let (_, vars) = row_moments(&plan, v);
        Ok(dot(self.quad.weights(), &vars) / eps)
    }

    /// Dense Hessian of K assembled from a plan.
    pub fn hess_k_dense_from_plan(&self, plan: &ConditionalPlan, eps: f64) -> DMatrix<f64> {
        let n = self.n();
        let mut h = DMatrix::zeros(n, n);
        for (j, w) in self.quad.weights().iter().enumerate() {
            let row = plan.row(j);
            for a in 0..n {
                let pa = w * row[a];
                if pa == 0.0 {
                    continue;
                }
                h[(a, a)] += pa;
                for b in 0..n {
                    h[(a, b)] -= pa * row[b];
                }
            }
        }
        h / eps
    }

    pub fn hess_k_dense(&self, psi: &[f64], eps: f64) -> Result<DMatrix<f64>> {
        check_positive_eps(eps)?;
        let plan = self.plan(psi, eps)?;
        Ok(self.hess_k_dense_from_plan(&plan, eps))
    }

    /// `log I_β(ψ)`.
    pub fn log_partition_i(&self, psi: &[f64], eps: f64, beta: f64) -> Result<f64> {
        check_beta(beta)?;
        let phi = self.phi(psi, eps)?;
        Ok(log_weighted_exp(self.quad.weights(), &phi, beta))
    }

    pub fn partition_i(&self, psi: &[f64], eps: f64, beta: f64) -> Result<f64> {
        Ok(self.log_partition_i(psi, eps, beta)?.exp())
    }

    /// The tilted quadrature with weights `w_j exp(β φ_j) / I_β`.
    pub fn tilted_quadrature(&self, psi: &[f64], eps: f64, beta: f64) -> Result<TiltedQuadrature> {
        check_beta(beta)?;
        let phi = self.phi(psi, eps)?;
        let (weights, log_i) = tilt(self.quad.weights(), &phi, beta);
        Ok(TiltedQuadrature {
            quadrature: self.quad.reweighted(weights)?,
            beta,
            log_normalizer: log_i,
        })
    }

    /// `∇ log I_β = −β Σ_j w̃_j π(·|x_j)`.
    pub fn grad_log_partition_i(&self, psi: &[f64], eps: f64, beta: f64) -> Result<Vec<f64>> {
        check_positive_eps(eps)?;
        check_beta(beta)?;
        let (phi, plan) = self.phi_and_plan(psi, eps)?;
        let (wt, _) = tilt(self.quad.weights(), &phi, beta);
        let mut g = vec![0.0; self.n()];
        for (j, w) in wt.iter().enumerate() {
            for (gi, p) in g.iter_mut().zip(plan.row(j)) {
                *gi -= beta * w * p;
            }
        }
        Ok(g)
    }

    /// `⟨v, ∇² log I_β v⟩ = −(β/ε) Σ w̃_j Var_{π_j}(v) + β² Var_{w̃}(m_j(v))`,
    /// `m_j(v)` the π(·|x_j)-mean of v and w̃ the tilted weights.
    pub fn log_i_hess_quadform(&self, psi: &[f64], v: &[f64], eps: f64, beta: f64) -> Result<f64> {
        check_positive_eps(eps)?;
        check_beta(beta)?;
        self.check_psi(v)?;
        let (phi, plan) = self.phi_and_plan(psi, eps)?;
        let (wt, _) = tilt(self.quad.weights(), &phi, beta);
        let (means, vars) = row_moments(&plan, v);
        let within = dot(&wt, &vars);
        let between = stats(&means, &wt).variance;
        Ok(-(beta / eps) * within + beta * beta * between)
    }

    /// `∇φ_ε(x_j) = Σ_i π(y_i | x_j) ∇_x c(x_j, y_i)` at every node.
    pub fn soft_gradient(&self, psi: &[f64], eps: f64) -> Result<Vec<Vec<f64>>> {
        let plan = self.plan(psi, eps)?;
        Ok(self.soft_gradient_from_plan(&plan))
    }

    pub fn soft_gradient_from_plan(&self, plan: &ConditionalPlan) -> Vec<Vec<f64>> {
        let d = self.quad.dim();
        self.map_rows(|j| {
            let x = self.quad.node(j);
            let mut g = vec![0.0; d];
            for (i, p) in plan.row(j).iter().enumerate() {
                if *p == 0.0 {
                    continue;
                }
                let gc = self.spec.grad_x(x, self.targets.point(i));
                g.iter_mut().zip(&gc).for_each(|(g, c)| *g += p * c);
            }
            g
        })
    }

    /// Shifts ψ so that φ_ε has zero ρ-mean.
    pub fn gauge(&self, psi: &[f64], eps: f64) -> Result<Vec<f64>> {
        let phi = self.phi(psi, eps)?;
        let lambda = dot(self.quad.weights(), &phi);
        Ok(psi.iter().map(|v| v + lambda).collect())
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::Config(format!("beta must be > 0, got {beta}")));
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-row mean and variance of `v` under the plan rows.
fn row_moments(plan: &ConditionalPlan, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (0..plan.rows())
        .map(|j| {
            let row = plan.row(j);
            let m = dot(row, v);
            let var: f64 = row.iter().zip(v).map(|(p, x)| p * (x - m) * (x - m)).sum();
            (m, var)
        })
        .unzip()
}

/// `log Σ w_j exp(β f_j)`.
pub fn log_weighted_exp(weights: &[f64], f: &[f64], beta: f64) -> f64 {
    let amax = f
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(v, _)| beta * v)
        .fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = f
        .iter()
        .zip(weights)
        .map(|(v, w)| w * (beta * v - amax).exp())
        .sum();
    amax + s.ln()
}

fn tilt(weights: &[f64], f: &[f64], beta: f64) -> (Vec<f64>, f64) {
    let log_i = log_weighted_exp(weights, f, beta);
    let wt = f
        .iter()
        .zip(weights)
        .map(|(v, w)| w * (beta * v - log_i).exp())
        .collect();
    (wt, log_i)
}
