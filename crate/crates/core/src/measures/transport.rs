//! Exact transport between discrete measures.
//!
//! The general solver is successive shortest paths on the complete
//! bipartite graph, with Dijkstra over reduced costs. Masses stay in `f64`;
//! every augmentation saturates a supply, a demand or a reverse arc exactly,
//! so the marginals are met to rounding. The final node potentials are the
//! dual variables.

use serde::{Deserialize, Serialize};

use super::points::euclidean;
use super::DiscreteMeasure;
use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::costs::CostSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportResult {
    pub value: f64,
    /// Sparse coupling as `(source atom, target atom, mass)`.
    pub plan: Vec<(usize, usize, f64)>,
    pub dual_src: Vec<f64>,
    pub dual_tgt: Vec<f64>,
}

impl TransportResult {
    /// `Σ a_i u_i + Σ b_j v_j`.
    pub fn dual_value(&self, a: &[f64], b: &[f64]) -> f64 {
        dot(a, &self.dual_src) + dot(b, &self.dual_tgt)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Exact optimal transport for a dense row-major `a.len() × b.len()` cost.
///
/// Both mass vectors must be nonnegative with equal totals (to rounding).
pub fn transport_lp(a: &[f64], b: &[f64], cost: &[f64]) -> Result<TransportResult> {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 || cost.len() != n * m {
        return Err(Error::Dimension {
            expected: n * m,
            got: cost.len(),
        });
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Solver("non-finite cost entry".into()));
    }
    let (ta, tb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if (ta - tb).abs() > 1e-9 * ta.max(tb) {
        return Err(Error::Solver(format!("unbalanced masses {ta} vs {tb}")));
    }
    let c = |i: usize, j: usize| cost[i * m + j];
    let dust = 1e-14 * ta.max(tb);
    let snap = |x: f64, d: f64| if x - d <= dust { 0.0 } else { x - d };

    let mut rem_a = a.to_vec();
    let mut rem_b = b.to_vec();
    let mut flow = vec![0.0; n * m];
    // node v < n is source atom v, node n + j is target atom j
    let mut pot = vec![0.0; n + m];
    for j in 0..m {
        pot[n + j] = (0..n).map(|i| c(i, j)).fold(f64::INFINITY, f64::min);
    }
    let nodes = n + m;
    let mut dist = vec![f64::INFINITY; nodes];
    let mut parent = vec![usize::MAX; nodes];
    let mut done = vec![false; nodes];

    let max_rounds = 4 * (n + m) * (n + m) + 16;
    let mut rounds = 0;
    loop {
        if rem_a.iter().all(|v| *v <= 0.0) || rem_b.iter().all(|v| *v <= 0.0) {
            break;
        }
        rounds += 1;
        if rounds > max_rounds {
            return Err(Error::Solver("augmenting path limit reached".into()));
        }
        dist.fill(f64::INFINITY);
        parent.fill(usize::MAX);
        done.fill(false);
        for i in 0..n {
            if rem_a[i] > 0.0 {
                dist[i] = 0.0;
            }
        }
        let mut heap: BinaryHeap<Reverse<(u64, usize)>> = (0..n)
            .filter(|&i| rem_a[i] > 0.0)
            .map(|i| Reverse((0, i)))
            .collect();
        let mut target = None;
        while let Some(Reverse((key, u))) = heap.pop() {
            // distances are nonnegative, so bit order is numeric order
            if done[u] || key != dist[u].to_bits() {
                continue;
            }
            done[u] = true;
            if u < n {
                for j in 0..m {
                    let v = n + j;
                    if done[v] {
                        continue;
                    }
                    let nd = dist[u] + (c(u, j) + pot[u] - pot[v]).max(0.0);
                    if nd < dist[v] {
                        dist[v] = nd;
                        parent[v] = u;
                        heap.push(Reverse((nd.to_bits(), v)));
                    }
                }
            } else {
                let j = u - n;
                if rem_b[j] > 0.0 {
                    target = Some(u);
                    break;
                }
                for i in 0..n {
                    if done[i] || flow[i * m + j] <= 0.0 {
                        continue;
                    }
                    let nd = dist[u] + (pot[u] - c(i, j) - pot[i]).max(0.0);
                    if nd < dist[i] {
                        dist[i] = nd;
                        parent[i] = u;
                        heap.push(Reverse((nd.to_bits(), i)));
                    }
                }
            }
        }
        let Some(t) = target else {
            return Err(Error::Solver(
                "no augmenting path for remaining mass".into(),
            ));
        };
        let reach = dist[t];
        for v in 0..nodes {
            pot[v] += dist[v].min(reach);
        }
        let mut delta = rem_b[t - n];
        let mut v = t;
        while parent[v] != usize::MAX {
            let u = parent[v];
            if u >= n {
                // reverse arc target u -> source v
                delta = delta.min(flow[v * m + (u - n)]);
            }
            v = u;
        }
        delta = delta.min(rem_a[v]);
        let mut v = t;
        while parent[v] != usize::MAX {
            let u = parent[v];
            if u < n {
                flow[u * m + (v - n)] += delta;
            } else {
                let k = v * m + (u - n);
                flow[k] = snap(flow[k], delta);
            }
            v = u;
        }
        rem_a[v] = snap(rem_a[v], delta);
        let tj = t - n;
        rem_b[tj] = snap(rem_b[tj], delta);
    }

    let mut plan = Vec::new();
    let mut value = 0.0;
    for i in 0..n {
        for j in 0..m {
            let f = flow[i * m + j];
            if f > 0.0 {
                plan.push((i, j, f));
                value += f * c(i, j);
            }
        }
    }
    let dual_src: Vec<f64> = pot[..n].iter().map(|p| -p).collect();
    let dual_tgt = pot[n..].to_vec();
    Ok(TransportResult {
        value,
        plan,
        dual_src,
        dual_tgt,
    })
}

fn check_dims(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<()> {
    if mu.dim() != nu.dim() {
        return Err(Error::Dimension {
            expected: mu.dim(),
            got: nu.dim(),
        });
    }
    Ok(())
}

/// Dense cost matrix `c(μ_i, ν_j)`.
pub fn cost_matrix(mu: &DiscreteMeasure, nu: &DiscreteMeasure, spec: &CostSpec) -> Vec<f64> {
    let mut out = Vec::with_capacity(mu.len() * nu.len());
    for x in mu.points().iter() {
        for y in nu.points().iter() {
            out.push(spec.eval(x, y));
        }
    }
    out
}

/// Exact optimal transport between two discrete measures for `spec`.
pub fn wp_discrete(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    spec: &CostSpec,
) -> Result<TransportResult> {
    check_dims(mu, nu)?;
    transport_lp(mu.weights(), nu.weights(), &cost_matrix(mu, nu, spec))
}

/// Exact optimal cost. On the line, power costs use the monotone coupling;
/// everything else goes through [`wp_discrete`].
pub fn wp_value(mu: &DiscreteMeasure, nu: &DiscreteMeasure, spec: &CostSpec) -> Result<f64> {
    check_dims(mu, nu)?;
    if mu.dim() == 1 && spec.is_power() {
        wp_1d(mu, nu, spec)
    } else {
        Ok(wp_discrete(mu, nu, spec)?.value)
    }
}

/// Exact W₁. On the line this is the L¹ distance between the CDFs.
pub fn w1_discrete(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    check_dims(mu, nu)?;
    if mu.dim() == 1 {
        return Ok(w1_line(
            mu.points().coords(),
            mu.weights(),
            nu.points().coords(),
            nu.weights(),
        ));
    }
    let mut cost = Vec::with_capacity(mu.len() * nu.len());
    for x in mu.points().iter() {
        for y in nu.points().iter() {
            cost.push(euclidean(x, y));
        }
    }
    Ok(transport_lp(mu.weights(), nu.weights(), &cost)?.value)
}

fn w1_line(xa: &[f64], wa: &[f64], xb: &[f64], wb: &[f64]) -> f64 {
    let mut events: Vec<(f64, f64)> = xa
        .iter()
        .zip(wa)
        .map(|(x, w)| (*x, *w))
        .chain(xb.iter().zip(wb).map(|(x, w)| (*x, -*w)))
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cdf_gap = 0.0;
    let mut acc = 0.0;
    for k in 0..events.len() {
        cdf_gap += events[k].1;
        if k + 1 < events.len() {
            acc += cdf_gap.abs() * (events[k + 1].0 - events[k].0);
        }
    }
    acc
}

/// Monotone (quantile) coupling of two weighted point sets on the line.
pub fn quantile_coupling(
    xa: &[f64],
    wa: &[f64],
    xb: &[f64],
    wb: &[f64],
) -> Vec<(usize, usize, f64)> {
    let mut ia: Vec<usize> = (0..xa.len()).collect();
    let mut ib: Vec<usize> = (0..xb.len()).collect();
    ia.sort_by(|&i, &j| xa[i].total_cmp(&xa[j]));
    ib.sort_by(|&i, &j| xb[i].total_cmp(&xb[j]));
    let mut plan = Vec::new();
    let (mut p, mut q) = (0, 0);
    let (mut ra, mut rb) = (
        ia.first().map_or(0.0, |&i| wa[i]),
        ib.first().map_or(0.0, |&j| wb[j]),
    );
    while p < ia.len() && q < ib.len() {
        let mass = ra.min(rb);
        if mass > 0.0 {
            plan.push((ia[p], ib[q], mass));
        }
        ra -= mass;
        rb -= mass;
        if ra <= 0.0 {
            p += 1;
            ra = ia.get(p).map_or(0.0, |&i| wa[i]);
        }
        if rb <= 0.0 {
            q += 1;
            rb = ib.get(q).map_or(0.0, |&j| wb[j]);
        }
    }
    plan
}

/// Optimal cost on the line via the monotone coupling; valid for costs that
/// are convex functions of `x − y`.
pub fn wp_1d(mu: &DiscreteMeasure, nu: &DiscreteMeasure, spec: &CostSpec) -> Result<f64> {
    check_dims(mu, nu)?;
    if mu.dim() != 1 {
        return Err(Error::Dimension {
            expected: 1,
            got: mu.dim(),
        });
    }
    let (xa, xb) = (mu.points().coords(), nu.points().coords());
    Ok(quantile_coupling(xa, mu.weights(), xb, nu.weights())
        .iter()
        .map(|&(i, j, w)| w * spec.eval(&[xa[i]], &[xb[j]]))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{make_discrete, PointSet};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(xs: &[f64], ws: &[f64]) -> DiscreteMeasure {
        make_discrete(PointSet::line(xs), ws, None).unwrap()
    }

    fn cloud(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DiscreteMeasure {
        let coords: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        make_discrete(PointSet::from_flat(d, coords).unwrap(), &w, None).unwrap()
    }

    fn check_certificate(mu: &DiscreteMeasure, nu: &DiscreteMeasure, spec: &CostSpec) {
        let r = wp_discrete(mu, nu, spec).unwrap();
        let cost = cost_matrix(mu, nu, spec);
        let m = nu.len();
        let mut row = vec![0.0; mu.len()];
        let mut col = vec![0.0; m];
        for &(i, j, f) in &r.plan {
            row[i] += f;
            col[j] += f;
            let slack = cost[i * m + j] - r.dual_src[i] - r.dual_tgt[j];
            assert!(slack.abs() <= 1e-7, "slack {slack} on support");
        }
        for (x, y) in row.iter().zip(mu.weights()) {
            assert!((x - y).abs() <= 1e-9);
        }
        for (x, y) in col.iter().zip(nu.weights()) {
            assert!((x - y).abs() <= 1e-9);
        }
        for i in 0..mu.len() {
            for j in 0..m {
                assert!(r.dual_src[i] + r.dual_tgt[j] <= cost[i * m + j] + 1e-7);
            }
        }
        let gap = r.value - r.dual_value(mu.weights(), nu.weights());
        assert!(gap.abs() <= 1e-8, "duality gap {gap}");
    }

    #[test]
    fn two_diracs() {
        let a = line(&[0.0], &[1.0]);
        let b = line(&[1.0], &[1.0]);
        assert_eq!(w1_discrete(&a, &b).unwrap(), 1.0);
        let r = wp_discrete(&a, &b, &CostSpec::power(2.0).unwrap()).unwrap();
        assert_eq!(r.value, 0.5);
    }

    #[test]
    fn split_mass_w1() {
        // every coupling of the 2x1 instance sends both halves to 1
        let a = line(&[0.0, 2.0], &[0.5, 0.5]);
        let b = line(&[1.0], &[1.0]);
        assert_eq!(w1_discrete(&a, &b).unwrap(), 1.0);
        let a2 = make_discrete(
            PointSet::from_rows(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap(),
            &[0.5, 0.5],
            None,
        )
        .unwrap();
        let b2 = make_discrete(
            PointSet::from_rows(&[vec![1.0, 0.0]]).unwrap(),
            &[1.0],
            None,
        )
        .unwrap();
        assert_relative_eq!(w1_discrete(&a2, &b2).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn identity_plan() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mu = cloud(&mut rng, 6, 2);
        let r = wp_discrete(&mu, &mu, &CostSpec::power(1.5).unwrap()).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.plan.len(), 6);
        assert!(r.plan.iter().all(|(i, j, _)| i == j));
        assert_eq!(w1_discrete(&mu, &mu).unwrap(), 0.0);
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 1 {
            return vec![vec![0]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for k in 0..n {
                let mut q = p.clone();
                q.insert(k, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn equal_weight_matches_permutation_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for p in [1.5, 2.0, 3.0] {
            let spec = CostSpec::power(p).unwrap();
            for d in [1, 2] {
                for _ in 0..5 {
                    let xs: Vec<f64> = (0..3 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let ys: Vec<f64> = (0..3 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let mu = make_discrete(PointSet::from_flat(d, xs).unwrap(), &[1.0; 3], None)
                        .unwrap();
                    let nu = make_discrete(PointSet::from_flat(d, ys).unwrap(), &[1.0; 3], None)
                        .unwrap();
                    let best = permutations(3)
                        .iter()
                        .map(|s| {
                            (0..3)
                                .map(|i| spec.eval(mu.point(i), nu.point(s[i])))
                                .sum::<f64>()
                                / 3.0
                        })
                        .fold(f64::INFINITY, f64::min);
                    let r = wp_discrete(&mu, &nu, &spec).unwrap();
                    assert!((r.value - best).abs() <= 1e-10);
                    if d == 1 {
                        assert!((wp_1d(&mu, &nu, &spec).unwrap() - best).abs() <= 1e-10);
                    }
                }
            }
        }
        assert_eq!(permutations(3).len(), 6);
    }

    #[test]
    fn certificates_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (n, m, d) in [(10, 7, 1), (25, 12, 2), (40, 40, 3), (1, 5, 2), (5, 1, 2)] {
            let mu = cloud(&mut rng, n, d);
            let nu = cloud(&mut rng, m, d);
            for p in [1.2, 2.0, 3.0] {
                check_certificate(&mu, &nu, &CostSpec::power(p).unwrap());
            }
        }
    }

    #[test]
    fn one_dimensional_paths_agree_with_flow() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let mu = cloud(&mut rng, 9, 1);
            let nu = cloud(&mut rng, 13, 1);
            let spec = CostSpec::power_unit(1.7).unwrap();
            let flow = wp_discrete(&mu, &nu, &spec).unwrap().value;
            assert!((wp_1d(&mu, &nu, &spec).unwrap() - flow).abs() <= 1e-10);
            let mut c = Vec::new();
            for x in mu.points().iter() {
                for y in nu.points().iter() {
                    c.push((x[0] - y[0]).abs());
                }
            }
            let lp = transport_lp(mu.weights(), nu.weights(), &c).unwrap().value;
            assert!((w1_discrete(&mu, &nu).unwrap() - lp).abs() <= 1e-10);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let a = line(&[0.0], &[1.0]);
        let b = make_discrete(
            PointSet::from_rows(&[vec![0.0, 1.0]]).unwrap(),
            &[1.0],
            None,
        )
        .unwrap();
        assert!(matches!(w1_discrete(&a, &b), Err(Error::Dimension { .. })));
        assert!(transport_lp(&[1.0], &[0.5], &[0.0]).is_err());
    }

    fn measure_strategy(d: usize) -> impl Strategy<Value = DiscreteMeasure> {
        (1usize..7).prop_flat_map(move |n| {
            (
                prop::collection::vec(-1.0f64..1.0, n * d),
                prop::collection::vec(0.01f64..1.0, n),
            )
                .prop_map(move |(c, w)| {
                    make_discrete(PointSet::from_flat(d, c).unwrap(), &w, None).unwrap()
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn w1_symmetric_and_triangle(a in measure_strategy(2), b in measure_strategy(2),
                                     c in measure_strategy(2)) {
            let ab = w1_discrete(&a, &b).unwrap();
            let ba = w1_discrete(&b, &a).unwrap();
            let bc = w1_discrete(&b, &c).unwrap();
            let ac = w1_discrete(&a, &c).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-9);
            prop_assert!(ac <= ab + bc + 1e-9);
        }

        #[test]
        fn w1_line_symmetric_and_triangle(a in measure_strategy(1), b in measure_strategy(1),
                                          c in measure_strategy(1)) {
            let ab = w1_discrete(&a, &b).unwrap();
            prop_assert!((ab - w1_discrete(&b, &a).unwrap()).abs() <= 1e-12);
            prop_assert!(w1_discrete(&a, &c).unwrap()
                <= ab + w1_discrete(&b, &c).unwrap() + 1e-9);
        }

        #[test]
        fn wp_monotone_in_p(a in measure_strategy(2), b in measure_strategy(2)) {
            // supports in [-1,1]^2 scaled to diameter at most 1
            let scale = |m: &DiscreteMeasure| {
                let c: Vec<f64> = m.points().coords().iter().map(|v| v / 8f64.sqrt()).collect();
                make_discrete(PointSet::from_flat(2, c).unwrap(), m.weights(), None).unwrap()
            };
            let (a, b) = (scale(&a), scale(&b));
            let mut prev = 0.0;
            for p in [1.2, 1.5, 2.0, 3.0] {
                let v = wp_discrete(&a, &b, &CostSpec::power_unit(p).unwrap()).unwrap().value;
                let w = v.powf(1.0 / p);
                prop_assert!(w + 1e-9 >= prev);
                prev = w;
            }
        }

        #[test]
        fn lp_certificate(a in measure_strategy(2), b in measure_strategy(2), p in 1.1f64..3.5) {
            let spec = CostSpec::power(p).unwrap();
            let r = wp_discrete(&a, &b, &spec).unwrap();
            let gap = r.value - r.dual_value(a.weights(), b.weights());
            prop_assert!(gap.abs() <= 1e-8);
            let cost = cost_matrix(&a, &b, &spec);
            for i in 0..a.len() {
                for j in 0..b.len() {
                    prop_assert!(r.dual_src[i] + r.dual_tgt[j] <= cost[i * b.len() + j] + 1e-7);
                }
            }
        }
    }
}
