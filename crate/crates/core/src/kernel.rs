//! Squared-exponential Gram matrices and the `V = c·(I + λK)` factorization
//! shared by every conditional in the sampler.

use faer::{Col, ColRef, Mat, MatRef};

use crate::data::{KernelDraw, KernelMode, RhoExponent};
use crate::error::{Error, Result};
use crate::linalg::Cholesky;

/// Diagonal jitter added to every Gram matrix before factorization.
pub const DEFAULT_JITTER: f64 = 1e-8;

/// Kernel hyperparameters in the common ARD form `exp(-Σ w_l Δ_l²)`.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelParams {
    Isotropic { rho: f64, power: f64 },
    Ard { r: Vec<f64> },
}

impl KernelParams {
    pub fn from_draw(draw: &KernelDraw, mode: &KernelMode, q: usize) -> Self {
        match (draw, mode) {
            (KernelDraw::Isotropic { rho }, KernelMode::Isotropic { exponent }) => KernelParams::Isotropic {
                rho: *rho,
                power: exponent.power(q),
            },
            (KernelDraw::Isotropic { rho }, KernelMode::Ard) => KernelParams::Isotropic {
                rho: *rho,
                power: RhoExponent::TwoQ.power(q),
            },
            (KernelDraw::Ard { r, .. }, _) => KernelParams::Ard { r: r.clone() },
        }
    }

    /// Per-coordinate weights `w_l`; the isotropic kernel uses `ρ^{-power}` everywhere.
    pub fn weights(&self, q: usize) -> Vec<f64> {
        match self {
            KernelParams::Isotropic { rho, power } => vec![rho.powf(-power); q],
            KernelParams::Ard { r } => r.clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            KernelParams::Isotropic { rho, .. } if !(*rho > 0.0) => {
                Err(Error::Domain(format!("bandwidth rho must be positive, got {rho}")))
            }
            KernelParams::Ard { r } if r.iter().any(|&v| !(v >= 0.0)) => {
                Err(Error::Domain("ARD weights must be nonnegative".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Symmetric Gram matrix with `jitter` already added to the unit diagonal.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub m: Mat<f64>,
    pub jitter: f64,
}

impl GramMatrix {
    pub fn n(&self) -> usize {
        self.m.nrows()
    }

    /// `K v`.
    pub fn apply(&self, v: ColRef<'_, f64>) -> Col<f64> {
        &self.m * v
    }
}

/// `exp(-‖z_i − z_j‖² / ρ^power)` with `power = 2q` by default.
pub fn gram_isotropic(z: MatRef<'_, f64>, rho: f64, exponent: RhoExponent) -> Result<GramMatrix> {
    let params = KernelParams::Isotropic {
        rho,
        power: exponent.power(z.ncols()),
    };
    params.validate()?;
    Ok(gram_from_weights(z, &params.weights(z.ncols()), DEFAULT_JITTER))
}

/// `exp(-Σ_l r_l (z_il − z_jl)²)`.
pub fn gram_ard(z: MatRef<'_, f64>, r: &[f64]) -> Result<GramMatrix> {
    if r.len() != z.ncols() {
        return Err(Error::Domain(format!("{} ARD weights for {} exposures", r.len(), z.ncols())));
    }
    let params = KernelParams::Ard { r: r.to_vec() };
    params.validate()?;
    Ok(gram_from_weights(z, r, DEFAULT_JITTER))
}

pub fn gram(z: MatRef<'_, f64>, params: &KernelParams, jitter: f64) -> Result<GramMatrix> {
    params.validate()?;
    Ok(gram_from_weights(z, &params.weights(z.ncols()), jitter))
}

fn gram_from_weights(z: MatRef<'_, f64>, w: &[f64], jitter: f64) -> GramMatrix {
    let n = z.nrows();
    let mut m = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        m[(j, j)] = 1.0 + jitter;
        for i in j + 1..n {
            let d: f64 = (0..z.ncols()).map(|l| w[l] * (z[(i, l)] - z[(j, l)]).powi(2)).sum();
            let v = (-d).exp();
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    GramMatrix { m, jitter }
}

/// Kernel values between two point sets, no jitter.
pub fn cross_gram(za: MatRef<'_, f64>, zb: MatRef<'_, f64>, params: &KernelParams) -> Result<Mat<f64>> {
    params.validate()?;
    if za.ncols() != zb.ncols() {
        return Err(Error::Domain("point sets have different dimensions".into()));
    }
    let w = params.weights(za.ncols());
    Ok(Mat::from_fn(za.nrows(), zb.nrows(), |i, j| {
        let d: f64 = (0..za.ncols()).map(|l| w[l] * (za[(i, l)] - zb[(j, l)]).powi(2)).sum();
        (-d).exp()
    }))
}

/// Packed strictly-lower-triangular squared coordinate differences, so the
/// sampler can rebuild Gram matrices for new bandwidths without touching `z`.
#[derive(Debug, Clone)]
pub struct SquaredDiffs {
    n: usize,
    per_dim: Vec<Vec<f64>>,
    total: Vec<f64>,
}

impl SquaredDiffs {
    pub fn new(z: MatRef<'_, f64>, keep_per_dim: bool) -> Self {
        let n = z.nrows();
        let len = n * n.saturating_sub(1) / 2;
        let q = z.ncols();
        let mut per_dim = if keep_per_dim { vec![Vec::with_capacity(len); q] } else { Vec::new() };
        let mut total = Vec::with_capacity(len);
        for j in 0..n {
            for i in j + 1..n {
                let mut s = 0.0;
                for l in 0..q {
                    let d = (z[(i, l)] - z[(j, l)]).powi(2);
                    if keep_per_dim {
                        per_dim[l].push(d);
                    }
                    s += d;
                }
                total.push(s);
            }
        }
        Self { n, per_dim, total }
    }

    pub fn gram(&self, params: &KernelParams, jitter: f64) -> Result<GramMatrix> {
        params.validate()?;
        let exponents: Vec<f64> = match params {
            KernelParams::Isotropic { rho, power } => {
                let w = rho.powf(-power);
                self.total.iter().map(|d| -w * d).collect()
            }
            KernelParams::Ard { r } => {
                if self.per_dim.len() != r.len() {
                    return Err(Error::Domain("difference cache was built without per-dimension terms".into()));
                }
                let mut acc = vec![0.0; self.total.len()];
                for (rl, dl) in r.iter().zip(&self.per_dim) {
                    if *rl == 0.0 {
                        continue;
                    }
                    for (a, d) in acc.iter_mut().zip(dl) {
                        *a -= rl * d;
                    }
                }
                acc
            }
        };
        let n = self.n;
        let mut m = Mat::<f64>::zeros(n, n);
        let mut idx = 0;
        for j in 0..n {
            m[(j, j)] = 1.0 + jitter;
            for i in j + 1..n {
                let v = exponents[idx].exp();
                idx += 1;
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Ok(GramMatrix { m, jitter })
    }
}

/// Factorization of `V = c·(I + λK)`. For full-data fits `c = 1`.
#[derive(Debug, Clone)]
pub struct VFactor {
    chol: Cholesky,
    lambda: f64,
    scale_c: f64,
}

impl VFactor {
    pub fn new(k: &GramMatrix, lambda: f64, scale_c: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Domain(format!("lambda must be positive and finite, got {lambda}")));
        }
        if !(scale_c > 0.0) {
            return Err(Error::Domain(format!("scale must be positive, got {scale_c}")));
        }
        let n = k.n();
        let mut v = Mat::<f64>::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                v[(i, j)] = lambda * k.m[(i, j)];
            }
            v[(j, j)] += 1.0;
        }
        let chol = Cholesky::new(v.as_ref())
            .map_err(|e| Error::Numerical(format!("factorizing I + {lambda}·K: {e}")))?;
        Ok(Self { chol, lambda, scale_c })
    }

    pub fn n(&self) -> usize {
        self.chol.dim()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn scale_c(&self) -> f64 {
        self.scale_c
    }

    /// `V⁻¹ b`.
    pub fn solve(&self, b: ColRef<'_, f64>) -> Col<f64> {
        let mut x = self.chol.solve(b);
        if self.scale_c != 1.0 {
            x /= self.scale_c;
        }
        x
    }

    pub fn solve_mat(&self, b: MatRef<'_, f64>) -> Mat<f64> {
        let mut x = self.chol.solve_mat(b);
        if self.scale_c != 1.0 {
            x /= self.scale_c;
        }
        x
    }

    /// `log |V|`.
    pub fn logdet(&self) -> f64 {
        self.n() as f64 * self.scale_c.ln() + self.chol.logdet()
    }

    /// `bᵀ V⁻¹ b`.
    pub fn quad_form(&self, b: ColRef<'_, f64>) -> f64 {
        self.chol.quad_form(b) / self.scale_c
    }
}

/// Factor `I + λK`.
pub fn v_matrix(k: &GramMatrix, lambda: f64) -> Result<VFactor> {
    VFactor::new(k, lambda, 1.0)
}
