//! Fixed-support entropic Wasserstein barycenter by iterative Bregman
//! projections, carried out on log-scaled potentials so small regularization
//! does not underflow. The regularization is annealed from a coarse value down
//! to the requested one, warm-starting each stage.

use super::measure::{sq_dist, AtomicMeasure};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornOptions {
    /// Absolute regularization; when `None`, `epsilon_scale` times the median
    /// support-to-atom squared cost is used.
    pub epsilon: Option<f64>,
    pub epsilon_scale: f64,
    pub max_iters: usize,
    /// Stop when no support weight moves by more than this between iterations.
    pub tol: f64,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            epsilon: None,
            epsilon_scale: 0.01,
            max_iters: 10_000,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub epsilon: f64,
    /// Largest weight change in the last iteration.
    pub max_change: f64,
}

/// Pooled atoms of all measures with exact duplicates removed, row-major.
pub fn pooled_support(measures: &[AtomicMeasure]) -> Vec<f64> {
    let dim = measures[0].dim();
    let mut atoms: Vec<&[f64]> = measures.iter().flat_map(|m| (0..m.len()).map(move |i| m.atom(i))).collect();
    atoms.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    atoms.dedup();
    let mut out = Vec::with_capacity(atoms.len() * dim);
    for a in atoms {
        out.extend_from_slice(a);
    }
    out
}

struct Block {
    cost: Vec<f64>,
    log_b: Vec<f64>,
    n: usize,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Weights on `support` minimizing `Σ_k w_k W²_ε(a, μ_k)`.
pub fn barycenter_sinkhorn(
    measures: &[AtomicMeasure],
    weights: Option<&[f64]>,
    support: &[f64],
    opts: &SinkhornOptions,
) -> Result<(AtomicMeasure, SinkhornDiagnostics)> {
    if measures.is_empty() {
        return Err(Error::InvalidData("barycenter of zero measures".into()));
    }
    let dim = measures[0].dim();
    if measures.iter().any(|m| m.dim() != dim) || support.is_empty() || support.len() % dim != 0 {
        return Err(Error::InvalidData("support and measures disagree in dimension".into()));
    }
    let lambdas: Vec<f64> = match weights {
        Some(w) if w.len() == measures.len() && w.iter().all(|&x| x >= 0.0) && w.iter().sum::<f64>() > 0.0 => {
            let t: f64 = w.iter().sum();
            w.iter().map(|x| x / t).collect()
        }
        Some(_) => return Err(Error::InvalidData("barycentric weights must be nonnegative and match K".into())),
        None => vec![1.0 / measures.len() as f64; measures.len()],
    };
    let s = support.len() / dim;
    let point = |i: usize| &support[i * dim..(i + 1) * dim];

    let blocks: Vec<Block> = measures
        .iter()
        .map(|m| {
            let keep: Vec<usize> = (0..m.len()).filter(|&i| m.weights()[i] > 0.0).collect();
            let mut cost = Vec::with_capacity(s * keep.len());
            for si in 0..s {
                for &i in &keep {
                    cost.push(sq_dist(point(si), m.atom(i)));
                }
            }
            Block {
                log_b: keep.iter().map(|&i| m.weights()[i].ln()).collect(),
                n: keep.len(),
                cost,
            }
        })
        .collect();

    let all_costs = || blocks.iter().flat_map(|b| b.cost.iter().copied());
    let max_cost = all_costs().fold(0.0, f64::max);
    let epsilon = match opts.epsilon {
        Some(e) if e > 0.0 => e,
        Some(e) => return Err(Error::Domain(format!("epsilon must be positive, got {e}"))),
        None => {
            let mut c: Vec<f64> = all_costs().collect();
            let mid = c.len() / 2;
            let median = *c.select_nth_unstable_by(mid, f64::total_cmp).1;
            let base = if median > 0.0 { median } else { max_cost };
            opts.epsilon_scale * if base > 0.0 { base } else { 1.0 }
        }
    };

    let mut f: Vec<Vec<f64>> = vec![vec![0.0; s]; blocks.len()];
    let mut g: Vec<Vec<f64>> = blocks.iter().map(|b| vec![0.0; b.n]).collect();
    let mut lkv: Vec<Vec<f64>> = vec![vec![0.0; s]; blocks.len()];
    let mut a = vec![1.0 / s as f64; s];
    let mut log_a = vec![0.0; s];

    // anneal from a coarse regularization
    let mut stages = vec![epsilon];
    let mut e = epsilon;
    while e < max_cost && stages.len() < 40 {
        e *= 2.0;
        stages.push(e);
    }
    stages.reverse();

    let mut iterations = 0;
    let mut max_change = f64::INFINITY;
    let mut converged = false;
    for (stage, &eps) in stages.iter().enumerate() {
        let last = stage + 1 == stages.len();
        let (budget, tol) = if last { (opts.max_iters, opts.tol) } else { (200, opts.tol.max(1e-6)) };
        for _ in 0..budget {
            if last && iterations >= opts.max_iters {
                break;
            }
            for (k, b) in blocks.iter().enumerate() {
                let fk = &f[k];
                for i in 0..b.n {
                    let lse = log_sum_exp((0..s).map(|si| (fk[si] - b.cost[si * b.n + i]) / eps));
                    g[k][i] = eps * (b.log_b[i] - lse);
                }
                let gk = &g[k];
                for si in 0..s {
                    let row = &b.cost[si * b.n..(si + 1) * b.n];
                    lkv[k][si] = log_sum_exp(row.iter().zip(gk).map(|(c, gi)| (gi - c) / eps));
                }
            }
            for si in 0..s {
                log_a[si] = (0..blocks.len()).map(|k| lambdas[k] * (f[k][si] / eps + lkv[k][si])).sum();
            }
            // keep the iterate on the simplex
            let norm = log_sum_exp(log_a.iter().copied());
            max_change = 0.0;
            for si in 0..s {
                log_a[si] -= norm;
                let next = log_a[si].exp();
                max_change = f64::max(max_change, (next - a[si]).abs());
                a[si] = next;
            }
            for k in 0..blocks.len() {
                for si in 0..s {
                    f[k][si] = eps * (log_a[si] - lkv[k][si]);
                }
            }
            if last {
                iterations += 1;
            }
            if max_change < tol {
                converged = last;
                break;
            }
        }
    }
    let measure = AtomicMeasure::new(support.to_vec(), dim, a)?;
    Ok((
        measure,
        SinkhornDiagnostics {
            iterations,
            converged,
            epsilon,
            max_change,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dirac_midpoint_on_grid() {
        let m = [
            AtomicMeasure::from_samples(&[0.0]).unwrap(),
            AtomicMeasure::from_samples(&[2.0]).unwrap(),
        ];
        let opts = SinkhornOptions {
            epsilon: Some(0.05),
            ..SinkhornOptions::default()
        };
        let (bary, diag) = barycenter_sinkhorn(&m, None, &[0.0, 1.0, 2.0], &opts).unwrap();
        assert!(diag.converged);
        assert!(bary.weights()[1] >= 0.95, "{:?}", bary.weights());
    }

    #[test]
    fn pooled_support_drops_duplicates() {
        let m = [
            AtomicMeasure::from_samples(&[1.0, 0.0]).unwrap(),
            AtomicMeasure::from_samples(&[1.0, 2.0]).unwrap(),
        ];
        assert_eq!(pooled_support(&m), vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn rejects_bad_epsilon() {
        let m = [AtomicMeasure::from_samples(&[0.0]).unwrap()];
        let opts = SinkhornOptions {
            epsilon: Some(0.0),
            ..SinkhornOptions::default()
        };
        assert!(barycenter_sinkhorn(&m, None, &[0.0], &opts).is_err());
    }
}
