//! Wasserstein geometric median `argmin_Π Σ_k W2(Π, Π_k)` by Weiszfeld
//! reweighting of barycenters.

use super::exact::w2_exact;
use super::measure::AtomicMeasure;
use super::quantile::{w2_1d, weighted_barycenter_1d};
use super::sinkhorn::{barycenter_sinkhorn, pooled_support, SinkhornOptions};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MedianOptions {
    pub max_iters: usize,
    /// Stop when the objective changes by less than this fraction.
    pub rel_tol: f64,
    /// Solver for the inner barycenters of multivariate measures.
    pub sinkhorn: SinkhornOptions,
}

impl Default for MedianOptions {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            rel_tol: 1e-6,
            sinkhorn: SinkhornOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MedianDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    /// `Σ_k W2(median, Π_k)` at the returned measure.
    pub objective: f64,
    /// Final barycentric weights on the inputs.
    pub weights: Vec<f64>,
    /// Index of the input the iteration landed on, if it did.
    pub coincident: Option<usize>,
}

fn distance(a: &AtomicMeasure, b: &AtomicMeasure) -> Result<f64> {
    if a.dim() == 1 {
        Ok(w2_1d(a, b))
    } else {
        w2_exact(a, b)
    }
}

fn weighted_barycenter(measures: &[AtomicMeasure], weights: &[f64], opts: &MedianOptions) -> Result<AtomicMeasure> {
    if measures[0].dim() == 1 {
        let n_out = measures.iter().map(AtomicMeasure::len).max().unwrap_or(1);
        weighted_barycenter_1d(measures, weights, n_out)
    } else {
        let support = pooled_support(measures);
        Ok(barycenter_sinkhorn(measures, Some(weights), &support, &opts.sinkhorn)?.0)
    }
}

/// Geometric median of `measures` in W2. With two inputs every point of the
/// geodesic is a minimizer and the midpoint barycenter is returned.
pub fn geometric_median_w2(measures: &[AtomicMeasure], opts: &MedianOptions) -> Result<(AtomicMeasure, MedianDiagnostics)> {
    let k = measures.len();
    if k == 0 {
        return Err(Error::InvalidData("median of zero measures".into()));
    }
    if measures.iter().any(|m| m.dim() != measures[0].dim()) {
        return Err(Error::InvalidData("measures disagree in dimension".into()));
    }
    let objective = |m: &AtomicMeasure| -> Result<(Vec<f64>, f64)> {
        let d = measures.iter().map(|p| distance(m, p)).collect::<Result<Vec<_>>>()?;
        let total = d.iter().sum();
        Ok((d, total))
    };
    let mut weights = vec![1.0 / k as f64; k];
    let mut current = weighted_barycenter(measures, &weights, opts)?;
    if k <= 2 {
        let (_, obj) = objective(&current)?;
        return Ok((
            current,
            MedianDiagnostics {
                iterations: 0,
                converged: true,
                objective: obj,
                weights,
                coincident: None,
            },
        ));
    }

    let (mut d, mut obj) = objective(&current)?;
    let mut iterations = 0;
    let mut converged = false;
    let mut coincident = None;
    while iterations < opts.max_iters {
        let max_d = d.iter().copied().fold(0.0, f64::max);
        if let Some(j) = (0..k).find(|&j| d[j] <= 1e-10 * max_d) {
            current = measures[j].clone();
            obj = objective(&current)?.1;
            coincident = Some(j);
            converged = true;
            weights = (0..k).map(|i| f64::from(u8::from(i == j))).collect();
            break;
        }
        let inv: Vec<f64> = d.iter().map(|x| 1.0 / x).collect();
        let total: f64 = inv.iter().sum();
        weights = inv.iter().map(|x| x / total).collect();
        current = weighted_barycenter(measures, &weights, opts)?;
        iterations += 1;
        let (d_next, obj_next) = objective(&current)?;
        let change = (obj - obj_next).abs();
        d = d_next;
        let prev = obj;
        obj = obj_next;
        if change <= opts.rel_tol * prev.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    Ok((
        current,
        MedianDiagnostics {
            iterations,
            converged,
            objective: obj,
            weights,
            coincident,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(x: f64) -> AtomicMeasure {
        AtomicMeasure::from_samples(&[x - 0.5, x, x + 0.5]).unwrap()
    }

    #[test]
    fn identical_inputs() {
        let m = vec![pt(3.0); 4];
        let (med, diag) = geometric_median_w2(&m, &MedianOptions::default()).unwrap();
        assert_eq!(med, pt(3.0));
        assert_eq!(diag.objective, 0.0);
    }

    #[test]
    fn outlier_is_ignored() {
        let m = vec![pt(0.0), pt(0.0), pt(100.0)];
        let (med, _) = geometric_median_w2(&m, &MedianOptions::default()).unwrap();
        assert!(med.mean()[0].abs() < 0.5, "{}", med.mean()[0]);
    }

    #[test]
    fn two_inputs_give_midpoint() {
        let (med, _) = geometric_median_w2(&[pt(0.0), pt(4.0)], &MedianOptions::default()).unwrap();
        assert!((med.mean()[0] - 2.0).abs() < 1e-12);
    }
}
