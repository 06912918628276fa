//! Closed-form transport on the real line, where W2 is the L² distance between
//! quantile functions and barycenters average quantile functions.

use super::measure::AtomicMeasure;
use crate::error::{Error, Result};

/// Sorted atoms with cumulative weights, for repeated quantile lookups.
#[derive(Debug, Clone)]
pub struct QuantileFn {
    values: Vec<f64>,
    cumulative: Vec<f64>,
}

impl QuantileFn {
    pub fn new(measure: &AtomicMeasure) -> Self {
        let (values, weights) = measure.sorted_1d();
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Self { values, cumulative }
    }

    /// Left-continuous inverse CDF: the smallest atom whose CDF reaches `u`.
    pub fn eval(&self, u: f64) -> f64 {
        let idx = self.cumulative.partition_point(|&c| c < u - 1e-12);
        self.values[idx.min(self.values.len() - 1)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }
}

/// Exact W2 between two scalar measures via the monotone coupling.
pub fn w2_1d(a: &AtomicMeasure, b: &AtomicMeasure) -> f64 {
    w2_sq_1d(a, b).sqrt()
}

pub fn w2_sq_1d(a: &AtomicMeasure, b: &AtomicMeasure) -> f64 {
    let (xa, wa) = a.sorted_1d();
    let (xb, wb) = b.sorted_1d();
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (wa[0], wb[0]);
    let mut cost = 0.0;
    while i < xa.len() && j < xb.len() {
        let m = ra.min(rb);
        cost += m * (xa[i] - xb[j]).powi(2);
        ra -= m;
        rb -= m;
        if ra <= 1e-15 {
            i += 1;
            if i < xa.len() {
                ra = wa[i];
            }
        }
        if rb <= 1e-15 {
            j += 1;
            if j < xb.len() {
                rb = wb[j];
            }
        }
    }
    cost.max(0.0)
}

/// Weighted quantile-averaging barycenter with `n_out` equally weighted atoms:
/// atom `m` is `Σ_k w_k Q_k((m − ½) / n_out)`.
pub fn weighted_barycenter_1d(measures: &[AtomicMeasure], weights: &[f64], n_out: usize) -> Result<AtomicMeasure> {
    if measures.is_empty() || measures.len() != weights.len() || n_out == 0 {
        return Err(Error::InvalidData("barycenter needs matching measures and weights".into()));
    }
    if measures.iter().any(|m| m.dim() != 1) {
        return Err(Error::InvalidData("quantile barycenter needs scalar measures".into()));
    }
    let total: f64 = weights.iter().sum();
    let qfs: Vec<QuantileFn> = measures.iter().map(QuantileFn::new).collect();
    let atoms = (0..n_out)
        .map(|m| {
            let u = (m as f64 + 0.5) / n_out as f64;
            qfs.iter().zip(weights).map(|(q, &w)| w * q.eval(u)).sum::<f64>() / total
        })
        .collect();
    AtomicMeasure::uniform(atoms, 1)
}

/// Equal-weight W2 barycenter of scalar samples; output size is the largest
/// input size.
pub fn barycenter_1d(samples: &[&[f64]]) -> Result<AtomicMeasure> {
    if samples.iter().any(|s| s.is_empty()) {
        return Err(Error::InvalidData("every sample list must be nonempty".into()));
    }
    let measures = samples
        .iter()
        .map(|s| AtomicMeasure::from_samples(s))
        .collect::<Result<Vec<_>>>()?;
    let n_out = samples.iter().map(|s| s.len()).max().unwrap_or(0);
    weighted_barycenter_1d(&measures, &vec![1.0; measures.len()], n_out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type_one_quantiles() {
        let q = QuantileFn::new(&AtomicMeasure::from_samples(&[3.0, 1.0, 2.0, 4.0]).unwrap());
        assert_eq!(q.eval(0.1), 1.0);
        assert_eq!(q.eval(0.25), 1.0);
        assert_eq!(q.eval(0.26), 2.0);
        assert_eq!(q.eval(1.0), 4.0);
    }

    #[test]
    fn dirac_midpoint() {
        let b = barycenter_1d(&[&[0.0; 5], &[2.0; 5]]).unwrap();
        assert!(b.points().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn identical_lists_are_reproduced() {
        let s = [0.3, -1.0, 2.5, 0.0];
        let b = barycenter_1d(&[&s, &s, &s]).unwrap();
        let mut sorted = s.to_vec();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(b.points(), &sorted[..]);
    }

    #[test]
    fn w2_of_shift_is_shift() {
        let a = AtomicMeasure::from_samples(&[0.0, 1.0, 5.0]).unwrap();
        let b = a.translated(&[3.0]);
        assert!((w2_1d(&a, &b) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn w2_with_unequal_counts() {
        // {0, 1} vs {0, 0, 1}: mass 1/6 moves distance 1
        let a = AtomicMeasure::from_samples(&[0.0, 1.0]).unwrap();
        let b = AtomicMeasure::from_samples(&[0.0, 0.0, 1.0]).unwrap();
        assert!((w2_sq_1d(&a, &b) - 1.0 / 6.0).abs() < 1e-14);
    }
}
