//! Perturbation families, per-pair stability records and the reports that
//! summarize them.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::theory::{
    fit_power_law, oscillation_bound, pairing_constant, theta_maps, theta_potentials, ExponentFit,
};
use crate::costs::CostSpec;
use crate::entropic::{log_weighted_exp, stats, SemiDiscrete};
use crate::error::{Error, Result};
use crate::measures::{
    euclidean, make_discrete, w1_discrete, DiscreteMeasure, PointSet, SourceQuadrature,
};
use crate::solver::{exact_dual_oracle, extract_map, solve_schedule_on, MapMode, SolverOptions};

/// Tolerated negative pairing before a record is flagged.
pub const PAIRING_FLOOR: f64 = -1e-10;
/// Relative slack on the theorem-constant inequalities.
pub const BOUND_RTOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    /// One atom moves by `δ 2^{−k}` along the first axis.
    LocationShift,
    /// A fraction `δ 2^{−k}` of one atom's mass moves to another atom.
    MassTransfer,
    /// Every atom moves by `δ 2^{−k}` along a fixed random direction.
    Jitter,
}

impl FamilyKind {
    pub fn tag(self) -> &'static str {
        match self {
            FamilyKind::LocationShift => "shift",
            FamilyKind::MassTransfer => "mass",
            FamilyKind::Jitter => "jitter",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilySpec {
    pub kinds: Vec<FamilyKind>,
    pub delta: f64,
    pub levels: usize,
    /// Atom that is shifted, or that gives mass away.
    pub atom: usize,
    /// Atom receiving mass in transfers.
    pub partner: usize,
}

impl Default for FamilySpec {
    fn default() -> Self {
        FamilySpec {
            kinds: vec![
                FamilyKind::LocationShift,
                FamilyKind::MassTransfer,
                FamilyKind::Jitter,
            ],
            delta: 0.25,
            levels: 6,
            atom: 0,
            partner: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Perturbation {
    pub instance_id: String,
    pub family: FamilyKind,
    pub level: usize,
    pub target: DiscreteMeasure,
}

/// All perturbed copies of `base` described by `spec`, ordered by id.
pub fn perturbation_family(
    base: &DiscreteMeasure,
    spec: &FamilySpec,
    seed: u64,
) -> Result<Vec<Perturbation>> {
    if spec.kinds.is_empty() || spec.levels == 0 {
        return Err(Error::Config("empty perturbation family".into()));
    }
    if spec.levels < 4 {
        return Err(Error::Config(format!(
            "a family needs at least 4 levels for an exponent fit, got {}",
            spec.levels
        )));
    }
    if !(spec.delta > 0.0) || !spec.delta.is_finite() {
        return Err(Error::Config(format!(
            "delta must be positive, got {}",
            spec.delta
        )));
    }
    let n = base.len();
    let d = base.dim();
    if spec.atom >= n {
        return Err(Error::Config(format!(
            "atom {} out of range for {n} atoms",
            spec.atom
        )));
    }
    let mut out = Vec::new();
    for &kind in &spec.kinds {
        if kind == FamilyKind::MassTransfer {
            if n < 2 || spec.partner >= n || spec.partner == spec.atom {
                return Err(Error::Config(
                    "mass transfer needs two distinct atoms".into(),
                ));
            }
            if spec.delta >= 1.0 {
                return Err(Error::Config(
                    "mass transfer fraction must be below 1".into(),
                ));
            }
        }
        let dirs: Vec<f64> = {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n)
                .flat_map(|_| {
                    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let len = v
                        .iter()
                        .map(|x: &f64| x * x)
                        .sum::<f64>()
                        .sqrt()
                        .max(f64::MIN_POSITIVE);
                    v.into_iter().map(move |x| x / len)
                })
                .collect()
        };
        for k in 0..spec.levels {
            let step = spec.delta * 0.5f64.powi(k as i32);
            let mut coords = base.points().coords().to_vec();
            let mut weights = base.weights().to_vec();
            match kind {
                FamilyKind::LocationShift => coords[spec.atom * d] += step,
                FamilyKind::MassTransfer => {
                    let moved = step * weights[spec.atom];
                    weights[spec.atom] -= moved;
                    weights[spec.partner] += moved;
                }
                FamilyKind::Jitter => {
                    for (c, u) in coords.iter_mut().zip(&dirs) {
                        *c += step * u;
                    }
                }
            }
            out.push(Perturbation {
                instance_id: format!("{}-{k:02}", kind.tag()),
                family: kind,
                level: k,
                target: make_discrete(PointSet::from_flat(d, coords)?, &weights, None)?,
            });
        }
    }
    out.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilityOptions {
    pub solver: SolverOptions,
    /// Use exact LP potentials and hard maps instead of the smallest-ε
    /// entropic ones.
    pub oracle: bool,
    pub oracle_atoms: usize,
    /// Position inside the open exponent interval for maps when `p < 2`.
    pub map_margin: f64,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        StabilityOptions {
            solver: SolverOptions::default(),
            oracle: false,
            oracle_atoms: 200,
            map_margin: 0.1,
        }
    }
}

/// Potentials and map of one target.
#[derive(Debug, Clone)]
pub struct SolvedTarget {
    pub target: DiscreteMeasure,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub eps: f64,
    pub map: Vec<Vec<f64>>,
}

impl SolvedTarget {
    /// `ψ` extended to any point by the source-side transform of `φ`.
    pub fn psi_at(&self, quad: &SourceQuadrature, spec: &CostSpec, y: &[f64]) -> f64 {
        let f: Vec<f64> = (0..quad.len())
            .map(|j| self.phi[j] - spec.eval(quad.node(j), y))
            .collect();
        if self.eps == 0.0 {
            f.iter()
                .zip(quad.weights())
                .filter(|(_, w)| **w > 0.0)
                .map(|(v, _)| -v)
                .fold(f64::INFINITY, f64::min)
        } else {
            -self.eps * log_weighted_exp(quad.weights(), &f, 1.0 / self.eps)
        }
    }
}

/// Solves one target with reference measure equal to the target itself.
pub fn solve_target(
    quad: &SourceQuadrature,
    target: &DiscreteMeasure,
    spec: &CostSpec,
    opts: &StabilityOptions,
) -> Result<SolvedTarget> {
    let target = target.with_self_reference()?;
    let sd = SemiDiscrete::new(quad, &target, spec)?;
    let (sol, mode) = if opts.oracle {
        if quad.len() > opts.oracle_atoms {
            return Err(Error::Config(format!(
                "the exact oracle needs at most {} source atoms, got {}",
                opts.oracle_atoms,
                quad.len()
            )));
        }
        (
            exact_dual_oracle(quad, &target, spec, opts.oracle_atoms)?,
            MapMode::HardArgmin,
        )
    } else {
        let out = solve_schedule_on(&sd, &opts.solver)?;
        if let Some(e) = out.failure {
            return Err(e);
        }
        let sol = out
            .solutions
            .into_iter()
            .last()
            .ok_or_else(|| Error::Solver("empty schedule".into()))?;
        (sol, MapMode::EntropicSoft)
    };
    let map = extract_map(&sol, &sd, mode)?.values;
    Ok(SolvedTarget {
        target,
        phi: sol.phi,
        psi: sol.psi,
        eps: sol.eps,
        map,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRecord {
    pub instance_id: String,
    pub family: FamilyKind,
    pub level: usize,
    pub p: f64,
    pub eps_final: f64,
    pub w1_gap: f64,
    pub pot_l2_gap: f64,
    pub var_gap: f64,
    pub map_l2_gap: f64,
    pub pairing: f64,
    pub m_bound: f64,
    /// `2 Lip(ψ) W₁`, an upper bound for the pairing.
    pub kr_bound: f64,
    pub bound_ok: bool,
    pub error: Option<String>,
}

impl StabilityRecord {
    pub fn completed(&self) -> bool {
        self.error.is_none()
    }

    fn failed(p: &Perturbation, spec: &CostSpec, err: &Error) -> Self {
        StabilityRecord {
            instance_id: p.instance_id.clone(),
            family: p.family,
            level: p.level,
            p: spec.p(),
            eps_final: f64::NAN,
            w1_gap: f64::NAN,
            pot_l2_gap: f64::NAN,
            var_gap: f64::NAN,
            map_l2_gap: f64::NAN,
            pairing: f64::NAN,
            m_bound: f64::NAN,
            kr_bound: f64::NAN,
            bound_ok: false,
            error: Some(err.to_string()),
        }
    }
}

/// Gap quantities between the solutions for `μ₀` and `μ₁`.
pub fn compare(
    quad: &SourceQuadrature,
    spec: &CostSpec,
    s0: &SolvedTarget,
    s1: &SolvedTarget,
) -> Result<(f64, f64, f64, f64, f64)> {
    let w = quad.weights();
    let w1 = w1_discrete(&s0.target, &s1.target)?;
    let diff: Vec<f64> = s0.phi.iter().zip(&s1.phi).map(|(a, b)| a - b).collect();
    let var = stats(&diff, w).variance;
    let l2 = diff
        .iter()
        .zip(w)
        .map(|(d, w)| w * d * d)
        .sum::<f64>()
        .sqrt();
    let map = s0
        .map
        .iter()
        .zip(&s1.map)
        .zip(w)
        .map(|((a, b), w)| w * euclidean(a, b).powi(2))
        .sum::<f64>()
        .sqrt();
    let mut pairing = 0.0;
    for (mu, sign) in [(&s0.target, 1.0), (&s1.target, -1.0)] {
        for (i, y) in mu.points().iter().enumerate() {
            let gap = s0.psi_at(quad, spec, y) - s1.psi_at(quad, spec, y);
            pairing += sign * mu.weights()[i] * gap;
        }
    }
    Ok((w1, l2, var, map, pairing))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StabilityKind {
    Potentials,
    Maps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyFit {
    pub family: FamilyKind,
    pub fit: ExponentFit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub kind: StabilityKind,
    pub p: f64,
    pub records: Vec<StabilityRecord>,
    pub completed: usize,
    pub theta_theory: f64,
    /// Smallest per-family fitted exponent.
    pub theta_fit: Option<f64>,
    pub theta_stderr: Option<f64>,
    pub family_fits: Vec<FamilyFit>,
    /// Smallest `C` with `gap ≤ C W₁^θ` on every completed record.
    pub constant_fit: Option<f64>,
    /// Exponent `e` in `Var ≤ C pairing^e`.
    pub pairing_exponent: f64,
    /// Theorem constant where one is available.
    pub pairing_constant: Option<f64>,
    /// Smallest constant that works on the records.
    pub pairing_constant_fit: Option<f64>,
    pub bound_violations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

pub const CSV_HEADER: &str =
    "instance_id,p,eps_final,w1_gap,pot_l2_gap,var_gap,map_l2_gap,pairing,m_bound,bound_ok";

impl StabilityReport {
    pub fn completion_ratio(&self) -> f64 {
        if self.records.is_empty() {
            0.0
        } else {
            self.completed as f64 / self.records.len() as f64
        }
    }

    /// One row per record in scientific notation with 17 significant
    /// digits, LF line endings, and a trailing `#` provenance line.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(160 * (self.records.len() + 2));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                r.instance_id,
                r.p,
                r.eps_final,
                r.w1_gap,
                r.pot_l2_gap,
                r.var_gap,
                r.map_l2_gap,
                r.pairing,
                r.m_bound,
                r.bound_ok
            );
        }
        if let Some(prov) = &self.provenance {
            let _ = writeln!(out, "{}", prov.comment_line());
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s =
            serde_json::to_string_pretty(self).map_err(|e| Error::Numerics(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }
}

impl Provenance {
    pub fn comment_line(&self) -> String {
        format!(
            "# config_hash={} seed={} version={}",
            self.config_hash, self.seed, self.version
        )
    }
}

/// Solves `base` and every perturbation on the same ε levels and records
/// the gaps.
pub fn run_stability(
    quad: &SourceQuadrature,
    base: &DiscreteMeasure,
    family: &FamilySpec,
    spec: &CostSpec,
    opts: &StabilityOptions,
    kind: StabilityKind,
    seed: u64,
) -> Result<StabilityReport> {
    if !spec.is_power() {
        return Err(Error::Config("stability runs need a plain p-cost".into()));
    }
    if quad.dim() != base.dim() {
        return Err(Error::Dimension {
            expected: quad.dim(),
            got: base.dim(),
        });
    }
    let p = spec.p();
    let theta_theory = match kind {
        StabilityKind::Potentials => theta_potentials(p)?,
        StabilityKind::Maps => theta_maps(p, opts.map_margin)?,
    };
    let members = perturbation_family(base, family, seed)?;
    let mut opts = opts.clone();
    opts.solver.eps_schedule = opts.solver.eps_schedule.resolved(base, quad, spec);
    opts.solver.validate()?;
    let s0 = solve_target(quad, base, spec, &opts)?;
    let r_x = quad.r_x();

    let mut records: Vec<StabilityRecord> = members
        .par_iter()
        .map(|m| {
            let run = || -> Result<StabilityRecord> {
                let s1 = solve_target(quad, &m.target, spec, &opts)?;
                let (w1, l2, var, map, pairing) = compare(quad, spec, &s0, &s1)?;
                let r_y = base.radius().max(m.target.radius());
                let lip = spec.scale_factor() * p * (r_x + r_y).powf(p - 1.0);
                Ok(StabilityRecord {
                    instance_id: m.instance_id.clone(),
                    family: m.family,
                    level: m.level,
                    p,
                    eps_final: s1.eps,
                    w1_gap: w1,
                    pot_l2_gap: l2,
                    var_gap: var,
                    map_l2_gap: map,
                    pairing,
                    m_bound: oscillation_bound(spec, r_x, r_y),
                    kr_bound: 2.0 * lip * w1,
                    bound_ok: false,
                    error: None,
                })
            };
            run().unwrap_or_else(|e| StabilityRecord::failed(m, spec, &e))
        })
        .collect();
    records.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));

    let r_y = members
        .iter()
        .map(|m| m.target.radius())
        .fold(base.radius(), f64::max);
    let done: Vec<usize> = (0..records.len())
        .filter(|&i| records[i].completed())
        .collect();

    let pairing_exponent = if p >= 2.0 { 1.0 } else { 2.0 / (p / (p - 1.0)) };
    let theory_c = if kind == StabilityKind::Potentials && p >= 2.0 {
        Some(pairing_constant(spec, r_x, r_y)?)
    } else {
        None
    };
    let mut c_pair_fit: Option<f64> = None;
    for &i in &done {
        let r = &records[i];
        if r.var_gap > 0.0 && r.pairing > 0.0 {
            let c = r.var_gap / r.pairing.powf(pairing_exponent);
            c_pair_fit = Some(c_pair_fit.map_or(c, |v| v.max(c)));
        }
    }

    let gap_of = |r: &StabilityRecord| match kind {
        StabilityKind::Potentials => r.pot_l2_gap,
        StabilityKind::Maps => r.map_l2_gap,
    };
    let mut constant_fit: Option<f64> = None;
    for &i in &done {
        let r = &records[i];
        if r.w1_gap > 0.0 {
            let c = gap_of(r) / r.w1_gap.powf(theta_theory);
            constant_fit = Some(constant_fit.map_or(c, |v| v.max(c)));
        }
    }

    let mut violations = 0;
    for &i in &done {
        let r = &mut records[i];
        let pairing_ok = r.pairing >= PAIRING_FLOOR;
        r.bound_ok = match kind {
            StabilityKind::Potentials => match theory_c {
                Some(c) => {
                    let ok = pairing_ok
                        && r.var_gap <= c * r.pairing.max(0.0) * (1.0 + BOUND_RTOL) + 1e-12;
                    if !ok {
                        violations += 1;
                    }
                    ok
                }
                None => pairing_ok && (r.var_gap <= 1e-12 || r.pairing > 0.0),
            },
            StabilityKind::Maps => r.map_l2_gap.is_finite(),
        };
    }

    let mut family_fits = Vec::new();
    for kind_f in family.kinds.iter().copied() {
        let sel: Vec<&StabilityRecord> = done
            .iter()
            .map(|&i| &records[i])
            .filter(|r| r.family == kind_f)
            .collect();
        let xs: Vec<f64> = sel.iter().map(|r| r.w1_gap).collect();
        let ys: Vec<f64> = sel.iter().map(|r| gap_of(r)).collect();
        if let Ok(fit) = fit_power_law(&xs, &ys) {
            family_fits.push(FamilyFit {
                family: kind_f,
                fit,
            });
        }
    }
    let worst = family_fits
        .iter()
        .min_by(|a, b| a.fit.theta.total_cmp(&b.fit.theta));

    Ok(StabilityReport {
        kind,
        p,
        completed: done.len(),
        theta_theory,
        theta_fit: worst.map(|f| f.fit.theta),
        theta_stderr: worst.map(|f| f.fit.stderr),
        family_fits,
        constant_fit,
        pairing_exponent,
        pairing_constant: theory_c,
        pairing_constant_fit: c_pair_fit,
        bound_violations: theory_c.map(|_| violations),
        records,
        provenance: None,
    })
}

pub fn run_potential_stability(
    quad: &SourceQuadrature,
    base: &DiscreteMeasure,
    family: &FamilySpec,
    spec: &CostSpec,
    opts: &StabilityOptions,
    seed: u64,
) -> Result<StabilityReport> {
    run_stability(
        quad,
        base,
        family,
        spec,
        opts,
        StabilityKind::Potentials,
        seed,
    )
}

pub fn run_map_stability(
    quad: &SourceQuadrature,
    base: &DiscreteMeasure,
    family: &FamilySpec,
    spec: &CostSpec,
    opts: &StabilityOptions,
    seed: u64,
) -> Result<StabilityReport> {
    run_stability(quad, base, family, spec, opts, StabilityKind::Maps, seed)
}

/// Outcome of comparing two maps against the Lipschitz-type bound
/// `‖T_μ − T_ν‖ ≤ 2 Lip(T_μ) diam(X) W₁(μ, ν)^{1/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzMapVerdict {
    pub map_gap: f64,
    pub lip: f64,
    pub w1: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Largest difference quotient of `values` over distinct node pairs.
pub fn empirical_lipschitz(nodes: &PointSet, values: &[Vec<f64>]) -> f64 {
    let m = nodes.len();
    (0..m)
        .into_par_iter()
        .map(|a| {
            let mut best: f64 = 0.0;
            for b in (a + 1)..m {
                let dx = euclidean(nodes.point(a), nodes.point(b));
                let dt = euclidean(&values[a], &values[b]);
                if dx > 0.0 {
                    best = best.max(dt / dx);
                } else if dt > 0.0 {
                    return f64::INFINITY;
                }
            }
            best
        })
        .reduce(|| 0.0, f64::max)
}

pub fn ambrosio_gigli_check(
    quad: &SourceQuadrature,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    spec: &CostSpec,
    opts: &StabilityOptions,
) -> Result<LipschitzMapVerdict> {
    if spec.p() != 2.0 || !spec.is_power() {
        return Err(Error::NotApplicable("map Lipschitz bound", spec.p()));
    }
    let mut opts = opts.clone();
    opts.solver.eps_schedule = opts.solver.eps_schedule.resolved(mu, quad, spec);
    let s0 = solve_target(quad, mu, spec, &opts)?;
    let s1 = solve_target(quad, nu, spec, &opts)?;
    let (w1, _, _, map_gap, _) = compare(quad, spec, &s0, &s1)?;
    let lip = empirical_lipschitz(quad.nodes(), &s0.map);
    let bound = 2.0 * lip * quad.diam() * w1.sqrt();
    let holds = if bound.is_nan() {
        map_gap == 0.0
    } else {
        map_gap <= bound * (1.0 + BOUND_RTOL) + 1e-12
    };
    Ok(LipschitzMapVerdict {
        map_gap,
        lip,
        w1,
        bound,
        holds,
    })
}

/// Largest `⟨g(x) − g(x′), x − x′⟩ − λ|x − x′|^p` over node pairs.
pub fn p_lambda_concavity_check(nodes: &PointSet, grads: &[Vec<f64>], p: f64, lambda: f64) -> f64 {
    let m = nodes.len();
    (0..m)
        .into_par_iter()
        .map(|a| {
            let mut worst = f64::NEG_INFINITY;
            for b in 0..m {
                if a == b {
                    continue;
                }
                let (x, y) = (nodes.point(a), nodes.point(b));
                let ip: f64 = (0..x.len())
                    .map(|k| (grads[a][k] - grads[b][k]) * (x[k] - y[k]))
                    .sum();
                worst = worst.max(ip - lambda * euclidean(x, y).powf(p));
            }
            worst
        })
        .reduce(|| f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::gamma_analytic;
    use crate::entropic::SemiDiscrete;
    use crate::measures::{sample_source, Distribution, Scheme, SourceSpec};
    use crate::solver::solve_dual;

    fn unit_line(m: usize) -> SourceQuadrature {
        sample_source(
            &SourceSpec {
                distribution: Distribution::UniformBox {
                    lo: vec![0.0],
                    hi: vec![1.0],
                },
                scheme: Scheme::Grid1d,
                m,
            },
            0,
        )
        .unwrap()
    }

    fn base() -> DiscreteMeasure {
        make_discrete(
            PointSet::line(&[0.1, 0.35, 0.6, 0.9]),
            &[0.3, 0.2, 0.3, 0.2],
            None,
        )
        .unwrap()
    }

    #[test]
    fn family_shapes_and_errors() {
        let fam = perturbation_family(&base(), &FamilySpec::default(), 1).unwrap();
        assert_eq!(fam.len(), 18);
        assert!(fam.windows(2).all(|w| w[0].instance_id < w[1].instance_id));
        let shift = fam.iter().find(|p| p.instance_id == "shift-02").unwrap();
        assert!((shift.target.point(0)[0] - (0.1 + 0.0625)).abs() <= 1e-15);
        let mass = fam.iter().find(|p| p.instance_id == "mass-00").unwrap();
        assert!((mass.target.weights()[0] - 0.225).abs() <= 1e-15);
        assert!((mass.target.weights()[1] - 0.275).abs() <= 1e-15);

        let bad = |f: FamilySpec| perturbation_family(&base(), &f, 1).unwrap_err();
        assert!(matches!(
            bad(FamilySpec {
                kinds: vec![],
                ..Default::default()
            }),
            Error::Config(_)
        ));
        assert!(matches!(
            bad(FamilySpec {
                levels: 0,
                ..Default::default()
            }),
            Error::Config(_)
        ));
        assert!(matches!(
            bad(FamilySpec {
                levels: 3,
                ..Default::default()
            }),
            Error::Config(_)
        ));
        assert!(matches!(
            bad(FamilySpec {
                delta: 1.0,
                ..Default::default()
            }),
            Error::Config(_)
        ));
        assert!(matches!(
            bad(FamilySpec {
                atom: 9,
                ..Default::default()
            }),
            Error::Config(_)
        ));
    }

    #[test]
    fn identical_targets_have_zero_gaps() {
        let quad = unit_line(100);
        let spec = CostSpec::power(2.0).unwrap();
        for oracle in [false, true] {
            let opts = StabilityOptions {
                oracle,
                ..Default::default()
            };
            let s = solve_target(&quad, &base(), &spec, &opts).unwrap();
            let (w1, l2, var, map, pairing) = compare(&quad, &spec, &s, &s.clone()).unwrap();
            for v in [w1, l2, var, map, pairing] {
                assert!(v.abs() <= 1e-10, "{v}");
            }
        }
    }

    #[test]
    fn two_atom_shift_with_exact_potentials() {
        let quad = unit_line(200);
        let spec = CostSpec::power(2.0).unwrap();
        let mu0 = make_discrete(PointSet::line(&[0.2, 0.7]), &[0.5, 0.5], None).unwrap();
        let mu1 = make_discrete(PointSet::line(&[0.45, 0.7]), &[0.5, 0.5], None).unwrap();
        let opts = StabilityOptions {
            oracle: true,
            ..Default::default()
        };
        let s0 = solve_target(&quad, &mu0, &spec, &opts).unwrap();
        let s1 = solve_target(&quad, &mu1, &spec, &opts).unwrap();
        let (w1, _, var, _, pairing) = compare(&quad, &spec, &s0, &s1).unwrap();
        assert!((w1 - 0.125).abs() <= 1e-12);
        let c = pairing_constant(&spec, quad.r_x(), 0.7).unwrap();
        assert!(pairing > 0.0);
        assert!(var <= c * pairing, "{var} vs {}", c * pairing);
    }

    #[test]
    fn single_atom_maps_are_constant() {
        let quad = unit_line(50);
        let spec = CostSpec::power(1.5).unwrap();
        let a = make_discrete(PointSet::line(&[0.3]), &[1.0], None).unwrap();
        let b = make_discrete(PointSet::line(&[0.55]), &[1.0], None).unwrap();
        for oracle in [false, true] {
            let opts = StabilityOptions {
                oracle,
                ..Default::default()
            };
            let s0 = solve_target(&quad, &a, &spec, &opts).unwrap();
            let s1 = solve_target(&quad, &b, &spec, &opts).unwrap();
            let (w1, _, _, map, _) = compare(&quad, &spec, &s0, &s1).unwrap();
            assert!((w1 - 0.25).abs() <= 1e-15);
            assert!((map - 0.25).abs() <= 1e-9, "{map}");
        }
    }

    #[test]
    fn default_suite_invariants() {
        let quad = unit_line(200);
        for p in [1.5, 2.0, 3.0] {
            let spec = CostSpec::power(p).unwrap();
            let r = run_potential_stability(
                &quad,
                &base(),
                &FamilySpec::default(),
                &spec,
                &Default::default(),
                3,
            )
            .unwrap();
            assert_eq!(r.records.len(), 18);
            assert_eq!(r.completed, 18);
            for rec in &r.records {
                assert!(rec.var_gap <= rec.pot_l2_gap.powi(2) + 1e-12);
                assert!(rec.pairing >= PAIRING_FLOOR);
                assert!(rec.pairing <= rec.kr_bound + 1e-10);
                assert!(rec.bound_ok, "{rec:?}");
            }
            if p >= 2.0 {
                assert_eq!(r.bound_violations, Some(0));
            } else {
                assert!(r.pairing_constant_fit.unwrap().is_finite());
                assert!((r.pairing_exponent - 2.0 / 3.0).abs() <= 1e-15);
            }
            assert!(r.theta_fit.unwrap() >= r.theta_theory - 0.1);
            let m = run_map_stability(
                &quad,
                &base(),
                &FamilySpec::default(),
                &spec,
                &Default::default(),
                3,
            )
            .unwrap();
            assert!(m.theta_fit.unwrap() >= m.theta_theory - 0.1);
        }
    }

    #[test]
    fn quadratic_and_linear_costs_share_potentials() {
        let quad = unit_line(120);
        let mu = base();
        let sol_p = solve_dual(
            &quad,
            &mu,
            &CostSpec::power(2.0).unwrap(),
            0.01,
            &SolverOptions::default(),
        )
        .unwrap();
        let sol_l = solve_dual(
            &quad,
            &mu,
            &CostSpec::linear_ell(),
            0.01,
            &SolverOptions::default(),
        )
        .unwrap();
        let shift: Vec<f64> = (0..mu.len())
            .map(|i| sol_l.psi[i] - (sol_p.psi[i] - 0.5 * mu.point(i)[0].powi(2)))
            .collect();
        let mean = shift.iter().sum::<f64>() / shift.len() as f64;
        for s in shift {
            assert!((s - mean).abs() <= 1e-6);
        }
    }

    #[test]
    fn lipschitz_map_bound() {
        let quad = unit_line(120);
        let spec = CostSpec::power(2.0).unwrap();
        let opts = StabilityOptions::default();
        let same = ambrosio_gigli_check(&quad, &base(), &base(), &spec, &opts).unwrap();
        assert_eq!(same.map_gap, 0.0);
        assert!(same.holds);
        // discretized bumps centred at 0.45 and 0.5
        let xs: Vec<f64> = (0..40).map(|i| (i as f64 + 0.5) / 40.0).collect();
        let bump =
            |c: f64| -> Vec<f64> { xs.iter().map(|x| (-(x - c).powi(2) / 0.02).exp()).collect() };
        let mu = make_discrete(PointSet::line(&xs), &bump(0.45), None).unwrap();
        let nu = make_discrete(PointSet::line(&xs), &bump(0.5), None).unwrap();
        let v = ambrosio_gigli_check(&quad, &mu, &nu, &spec, &opts).unwrap();
        assert!(v.holds && v.lip.is_finite(), "{v:?}");
        let split = make_discrete(PointSet::line(&[0.1, 0.9]), &[0.5, 0.5], None).unwrap();
        let hard = StabilityOptions {
            oracle: true,
            ..Default::default()
        };
        let v = ambrosio_gigli_check(&quad, &split, &base(), &spec, &hard).unwrap();
        assert!(v.lip >= 50.0 && v.holds, "{v:?}");
        assert!(
            ambrosio_gigli_check(&quad, &mu, &nu, &CostSpec::power(3.0).unwrap(), &opts).is_err()
        );
    }

    #[test]
    fn p_lambda_concavity() {
        let quad = unit_line(60);
        let grads: Vec<Vec<f64>> = (0..60).map(|j| vec![-2.0 * quad.node(j)[0]]).collect();
        assert!(p_lambda_concavity_check(quad.nodes(), &grads, 2.0, 0.0) <= 0.0);

        let p = 1.5;
        let spec = CostSpec::power(p).unwrap();
        let sd = SemiDiscrete::new(&quad, &base(), &spec).unwrap();
        let out = solve_schedule_on(&sd, &SolverOptions::default()).unwrap();
        let sol = out.last().unwrap();
        let g = sd.soft_gradient(&sol.psi, sol.eps).unwrap();
        let lambda = 2.0 * gamma_analytic(p).unwrap() / (p * p);
        assert!(p_lambda_concavity_check(quad.nodes(), &g, p, lambda) <= 1e-6);

        let pow: Vec<Vec<f64>> = (0..60)
            .map(|j| {
                let x = quad.node(j)[0];
                vec![p * x.abs().powf(p - 1.0) * x.signum()]
            })
            .collect();
        assert!(p_lambda_concavity_check(quad.nodes(), &pow, p, lambda).is_finite());
    }
}
