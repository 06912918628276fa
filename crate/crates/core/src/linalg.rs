//! Thin layer over `faer` for the symmetric positive-definite algebra the
//! samplers need: factor once, then solve, take log-determinants and
//! quadratic forms without ever forming an inverse.

use faer::linalg::solvers::Solve;
use faer::{Col, ColRef, Mat, MatRef, Side};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Largest diagonal jitter tried before giving up on a factorization.
const MAX_JITTER: f64 = 1e-2;

/// Lower Cholesky factor `A + jitter·I = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    llt: faer::linalg::solvers::Llt<f64>,
    jitter: f64,
}

impl Cholesky {
    pub fn new(a: MatRef<'_, f64>) -> Result<Self> {
        let llt = a
            .llt(Side::Lower)
            .map_err(|e| Error::Numerical(format!("cholesky failed on {}x{} matrix: {e:?}", a.nrows(), a.ncols())))?;
        Ok(Self { llt, jitter: 0.0 })
    }

    /// Factor `a`, adding `base_jitter` to the diagonal and escalating it by
    /// factors of ten until the factorization succeeds.
    pub fn with_jitter(a: MatRef<'_, f64>, base_jitter: f64) -> Result<Self> {
        let n = a.nrows();
        let mut jitter = base_jitter;
        loop {
            let attempt = if jitter > 0.0 {
                let mut b = a.to_owned();
                for i in 0..n {
                    b[(i, i)] += jitter;
                }
                b.llt(Side::Lower)
            } else {
                a.llt(Side::Lower)
            };
            match attempt {
                Ok(llt) => return Ok(Self { llt, jitter }),
                Err(_) if jitter < MAX_JITTER => {
                    jitter = if jitter > 0.0 { jitter * 10.0 } else { 1e-10 };
                }
                Err(e) => {
                    return Err(Error::Numerical(format!(
                        "cholesky failed on {n}x{n} matrix even with jitter {jitter:e}: {e:?}"
                    )))
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.llt.L().nrows()
    }

    /// Diagonal jitter that was added to obtain this factor.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn lower(&self) -> MatRef<'_, f64> {
        self.llt.L()
    }

    pub fn solve(&self, b: ColRef<'_, f64>) -> Col<f64> {
        self.llt.solve(b)
    }

    pub fn solve_mat(&self, b: MatRef<'_, f64>) -> Mat<f64> {
        self.llt.solve(b)
    }

    /// `log |A|`.
    pub fn logdet(&self) -> f64 {
        let l = self.llt.L();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    /// `L⁻¹ b`.
    pub fn whiten(&self, b: ColRef<'_, f64>) -> Col<f64> {
        let mut out = b.to_owned();
        self.llt.L().solve_lower_triangular_in_place(out.as_mut());
        out
    }

    /// `bᵀ A⁻¹ b`.
    pub fn quad_form(&self, b: ColRef<'_, f64>) -> f64 {
        self.whiten(b).squared_norm_l2()
    }

    /// `L v`, which maps a standard normal vector to a draw with covariance `A`.
    pub fn color(&self, v: ColRef<'_, f64>) -> Col<f64> {
        self.llt.L() * v
    }

    /// `L⁻ᵀ v`, which maps a standard normal vector to a draw with covariance `A⁻¹`.
    pub fn color_inverse(&self, v: ColRef<'_, f64>) -> Col<f64> {
        let mut out = v.to_owned();
        self.llt
            .L()
            .transpose()
            .solve_upper_triangular_in_place(out.as_mut());
        out
    }
}

pub fn standard_normal_col<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Col<f64> {
    Col::from_fn(n, |_| rng.sample(StandardNormal))
}

pub fn col_from_slice(v: &[f64]) -> Col<f64> {
    Col::from_fn(v.len(), |i| v[i])
}

pub fn col_to_vec(v: ColRef<'_, f64>) -> Vec<f64> {
    (0..v.nrows()).map(|i| v[i]).collect()
}

/// Rows of `m` selected by `rows`, in that order.
pub fn select_rows(m: MatRef<'_, f64>, rows: &[usize]) -> Mat<f64> {
    Mat::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

/// Ordinary least squares via the normal equations; `None` when `XᵀX` is
/// numerically singular.
pub fn least_squares(x: MatRef<'_, f64>, y: ColRef<'_, f64>) -> Option<Col<f64>> {
    if x.ncols() == 0 {
        return Some(Col::zeros(0));
    }
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    let chol = Cholesky::new(xtx.as_ref()).ok()?;
    Some(chol.solve(xty.as_ref()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> Mat<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = Mat::<f64>::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut a = &b * b.transpose();
        for i in 0..n {
            a[(i, i)] += 1.0;
        }
        a
    }

    #[test]
    fn solve_and_quad_form_agree() {
        let a = random_spd(6, 1);
        let chol = Cholesky::new(a.as_ref()).unwrap();
        let b = Col::from_fn(6, |i| (i as f64).sin());
        let x = chol.solve(b.as_ref());
        let back = &a * &x;
        for i in 0..6 {
            assert!((back[i] - b[i]).abs() < 1e-10);
        }
        let q: f64 = (0..6).map(|i| x[i] * b[i]).sum();
        assert!((q - chol.quad_form(b.as_ref())).abs() < 1e-10);
    }

    #[test]
    fn jitter_escalates_for_singular_input() {
        let a = Mat::<f64>::from_fn(4, 4, |_, _| 1.0);
        assert!(Cholesky::new(a.as_ref()).is_err());
        let chol = Cholesky::with_jitter(a.as_ref(), 1e-12).unwrap();
        assert!(chol.jitter() >= 1e-12);
    }

    #[test]
    fn logdet_of_diagonal() {
        let a = Mat::<f64>::from_fn(3, 3, |i, j| if i == j { (i + 2) as f64 } else { 0.0 });
        let chol = Cholesky::new(a.as_ref()).unwrap();
        assert!((chol.logdet() - (2.0f64 * 3.0 * 4.0).ln()).abs() < 1e-12);
    }
}
