//! Exact discrete optimal transport by successive shortest paths.
//!
//! The transportation problem is solved as a min-cost flow on the bipartite
//! graph rows → columns. Each round runs Dijkstra with reduced costs from all
//! rows that still have supply, augments along the cheapest path to a column
//! with unmet demand, and folds the distances into the node potentials, so the
//! final potentials are an optimal dual solution.

use super::measure::{cost_matrix, AtomicMeasure};
use crate::error::{Error, Result};

/// Largest number of atoms on either side accepted by the exact solver.
pub const MAX_EXACT_ATOMS: usize = 500;

const MASS_TOL: f64 = 1e-14;

/// Optimal plan and dual potentials of a transportation problem.
#[derive(Debug, Clone)]
pub struct TransportSolution {
    /// Optimal objective `Σ π_ij C_ij`.
    pub cost: f64,
    /// Nonzero entries `(i, j, π_ij)` of the plan.
    pub plan: Vec<(usize, usize, f64)>,
    /// Row potentials; `f_i + g_j ≤ C_ij` with equality on the plan's support.
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

/// Solve `min Σ π_ij C_ij` over couplings of `a` and `b` (both summing to one).
/// `cost` is row-major `a.len() × b.len()`.
pub fn solve_transport(a: &[f64], b: &[f64], cost: &[f64]) -> Result<TransportSolution> {
    let (n, m) = (a.len(), b.len());
    if n > MAX_EXACT_ATOMS || m > MAX_EXACT_ATOMS {
        return Err(Error::TooLarge { rows: n, cols: m });
    }
    assert_eq!(cost.len(), n * m, "cost matrix shape");
    let c = |i: usize, j: usize| cost[i * m + j];

    let mut supply = a.to_vec();
    let mut demand = b.to_vec();
    let mut flow = vec![0.0; n * m];
    let mut pot = vec![0.0; n + m];
    for j in 0..m {
        pot[n + j] = (0..n).map(|i| c(i, j)).fold(f64::INFINITY, f64::min);
    }

    let nodes = n + m;
    let mut dist = vec![f64::INFINITY; nodes];
    let mut done = vec![false; nodes];
    let mut parent = vec![usize::MAX; nodes];
    loop {
        if supply.iter().all(|&s| s <= MASS_TOL) {
            break;
        }
        dist.fill(f64::INFINITY);
        done.fill(false);
        parent.fill(usize::MAX);
        for i in 0..n {
            if supply[i] > MASS_TOL {
                dist[i] = 0.0;
            }
        }
        let mut target = None;
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for v in 0..nodes {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u >= n && demand[u - n] > MASS_TOL {
                target = Some(u);
                break;
            }
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
                    }
                }
            } else {
                let j = u - n;
                for i in 0..n {
                    if done[i] || flow[i * m + j] <= MASS_TOL {
                        continue;
                    }
                    let nd = dist[u] + (-c(i, j) + pot[u] - pot[i]).max(0.0);
                    if nd < dist[i] {
                        dist[i] = nd;
                        parent[i] = u;
                    }
                }
            }
        }
        let Some(t) = target else {
            // only rounding dust is left unrouted
            break;
        };
        let dt = dist[t];
        for v in 0..nodes {
            pot[v] += dist[v].min(dt);
        }

        let mut delta = demand[t - n];
        let mut v = t;
        while parent[v] != usize::MAX {
            let u = parent[v];
            if v < n {
                delta = delta.min(flow[v * m + (u - n)]);
            }
            v = u;
        }
        let source = v;
        delta = delta.min(supply[source]);

        let mut v = t;
        while parent[v] != usize::MAX {
            let u = parent[v];
            if v >= n {
                flow[u * m + (v - n)] += delta;
            } else {
                let e = &mut flow[v * m + (u - n)];
                *e -= delta;
                if *e <= MASS_TOL {
                    *e = 0.0;
                }
            }
            v = u;
        }
        supply[source] -= delta;
        if supply[source] <= MASS_TOL {
            supply[source] = 0.0;
        }
        demand[t - n] -= delta;
        if demand[t - n] <= MASS_TOL {
            demand[t - n] = 0.0;
        }
    }

    let mut plan = Vec::new();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..m {
            let x = flow[i * m + j];
            if x > 0.0 {
                total += x * c(i, j);
                plan.push((i, j, x));
            }
        }
    }
    Ok(TransportSolution {
        cost: total,
        plan,
        f: pot[..n].iter().map(|p| -p).collect(),
        g: pot[n..].to_vec(),
    })
}

/// Optimal squared-Euclidean transport between two measures.
pub fn transport(mu: &AtomicMeasure, nu: &AtomicMeasure) -> Result<TransportSolution> {
    if mu.dim() != nu.dim() {
        return Err(Error::InvalidData(format!(
            "measures live in dimensions {} and {}",
            mu.dim(),
            nu.dim()
        )));
    }
    if mu.len() > MAX_EXACT_ATOMS || nu.len() > MAX_EXACT_ATOMS {
        return Err(Error::TooLarge {
            rows: mu.len(),
            cols: nu.len(),
        });
    }
    solve_transport(mu.weights(), nu.weights(), &cost_matrix(mu, nu))
}

/// Wasserstein-2 distance from the transport linear program.
pub fn w2_exact(mu: &AtomicMeasure, nu: &AtomicMeasure) -> Result<f64> {
    Ok(transport(mu, nu)?.cost.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_diracs() {
        let a = AtomicMeasure::from_samples(&[0.0]).unwrap();
        let b = AtomicMeasure::from_samples(&[2.0]).unwrap();
        assert_eq!(w2_exact(&a, &b).unwrap(), 2.0);
        assert_eq!(w2_exact(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn uneven_masses_split() {
        // 1/2 at 0 and 1/2 at 1 against everything at 1: cost 1/2
        let a = AtomicMeasure::from_samples(&[0.0, 1.0]).unwrap();
        let b = AtomicMeasure::from_samples(&[1.0]).unwrap();
        let sol = transport(&a, &b).unwrap();
        assert!((sol.cost - 0.5).abs() < 1e-15);
        let mass: f64 = sol.plan.iter().map(|e| e.2).sum();
        assert!((mass - 1.0).abs() < 1e-14);
    }

    #[test]
    fn size_guard() {
        let big = AtomicMeasure::from_samples(&vec![0.0; MAX_EXACT_ATOMS + 1]).unwrap();
        let one = AtomicMeasure::from_samples(&[0.0]).unwrap();
        assert!(matches!(w2_exact(&big, &one), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn dimension_mismatch() {
        let a = AtomicMeasure::uniform(vec![0.0, 0.0], 2).unwrap();
        let b = AtomicMeasure::from_samples(&[0.0]).unwrap();
        assert!(w2_exact(&a, &b).is_err());
    }
}
