use crate::error::{Error, Result};

/// Finitely supported probability measure on `R^d`.
///
/// Atoms are stored row-major in one flat buffer; weights are renormalized to
/// sum to one on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicMeasure {
    points: Vec<f64>,
    dim: usize,
    weights: Vec<f64>,
}

impl AtomicMeasure {
    pub fn new(points: Vec<f64>, dim: usize, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.len() % dim != 0 {
            return Err(Error::InvalidData(format!(
                "{} coordinates do not split into points of dimension {dim}",
                points.len()
            )));
        }
        let n = points.len() / dim;
        if n == 0 {
            return Err(Error::InvalidData("a measure needs at least one atom".into()));
        }
        if weights.len() != n {
            return Err(Error::InvalidData(format!("{} weights for {n} atoms", weights.len())));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite atom".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidData("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidData("weights sum to zero".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { points, dim, weights })
    }

    /// Equally weighted atoms.
    pub fn uniform(points: Vec<f64>, dim: usize) -> Result<Self> {
        let n = if dim == 0 { 0 } else { points.len() / dim };
        Self::new(points, dim, vec![1.0; n.max(1)])
    }

    /// Empirical measure of scalar samples.
    pub fn from_samples(values: &[f64]) -> Result<Self> {
        Self::uniform(values.to_vec(), 1)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weighted mean of each coordinate.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (i, &w) in self.weights.iter().enumerate() {
            for (mj, &x) in m.iter_mut().zip(self.atom(i)) {
                *mj += w * x;
            }
        }
        m
    }

    /// Weighted variance of a scalar measure.
    pub fn variance(&self) -> f64 {
        let mu = self.mean()[0];
        self.weights
            .iter()
            .zip(&self.points)
            .map(|(&w, &x)| w * (x - mu) * (x - mu))
            .sum()
    }

    /// Shift every atom by `offset` (one entry per coordinate).
    pub fn translated(&self, offset: &[f64]) -> Self {
        let points = self
            .points
            .iter()
            .enumerate()
            .map(|(k, &x)| x + offset[k % self.dim])
            .collect();
        Self {
            points,
            dim: self.dim,
            weights: self.weights.clone(),
        }
    }

    /// Atoms and weights sorted by value (scalar measures only), with
    /// zero-weight atoms removed.
    pub fn sorted_1d(&self) -> (Vec<f64>, Vec<f64>) {
        debug_assert_eq!(self.dim, 1);
        let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.weights[i] > 0.0).collect();
        idx.sort_by(|&a, &b| self.points[a].total_cmp(&self.points[b]));
        (
            idx.iter().map(|&i| self.points[i]).collect(),
            idx.iter().map(|&i| self.weights[i]).collect(),
        )
    }
}

/// Squared Euclidean distance.
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Dense `|a| × |b|` squared-Euclidean cost matrix, row-major.
pub fn cost_matrix(a: &AtomicMeasure, b: &AtomicMeasure) -> Vec<f64> {
    let mut c = Vec::with_capacity(a.len() * b.len());
    for i in 0..a.len() {
        for j in 0..b.len() {
            c.push(sq_dist(a.atom(i), b.atom(j)));
        }
    }
    c
}
