//! Post-processing: extending h draws to new points, exposure-response
//! surfaces, inclusion probabilities and the calibration regression.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use faer::{Mat, MatRef};
use rand::Rng;

use crate::data::{fmt_f64, KernelMode, PosteriorDraw};
use crate::error::{Error, Result};
use crate::kernel::{cross_gram, gram, KernelParams};
use crate::linalg::{col_from_slice, standard_normal_col, Cholesky};
use crate::ot::{CombinedPosterior, Functional};

/// Default number of points per surface axis.
pub const DEFAULT_GRID_POINTS: usize = 21;
/// Default fraction of each exposure's observed range covered by a surface axis.
pub const DEFAULT_COVERAGE: f64 = 0.98;

/// GP conditional of h at new points given its values at the training sites,
/// for one set of kernel parameters.
#[derive(Debug, Clone)]
pub struct Predictor {
    params: KernelParams,
    z_train: Mat<f64>,
    chol: Cholesky,
    jitter: f64,
}

impl Predictor {
    pub fn new(z_train: MatRef<'_, f64>, params: KernelParams, jitter: f64) -> Result<Self> {
        let k = gram(z_train, &params, jitter)?;
        let chol = Cholesky::with_jitter(k.m.as_ref(), 0.0)?;
        let jitter = jitter + chol.jitter();
        Ok(Self {
            params,
            z_train: z_train.to_owned(),
            chol,
            jitter,
        })
    }

    /// `K(z*, z_train)`, with the training nugget added where a new point
    /// coincides exactly with a training site.
    pub fn cross(&self, z_star: MatRef<'_, f64>) -> Result<Mat<f64>> {
        let mut k = cross_gram(z_star, self.z_train.as_ref(), &self.params)?;
        for i in 0..z_star.nrows() {
            for j in 0..self.z_train.nrows() {
                if (0..z_star.ncols()).all(|l| z_star[(i, l)] == self.z_train[(j, l)]) {
                    k[(i, j)] += self.jitter;
                }
            }
        }
        Ok(k)
    }

    /// Prediction weights `W = K(z*, z) K(z, z)⁻¹`; the mean is `W h`.
    pub fn weights(&self, z_star: MatRef<'_, f64>) -> Result<Mat<f64>> {
        let kst = self.cross(z_star)?;
        Ok(self.chol.solve_mat(kst.transpose()).transpose().to_owned())
    }

    pub fn mean(&self, z_star: MatRef<'_, f64>, h_train: &[f64]) -> Result<Vec<f64>> {
        let w = self.weights(z_star)?;
        let m = &w * col_from_slice(h_train);
        Ok((0..m.nrows()).map(|i| m[i]).collect())
    }

    /// Conditional covariance `τ (K** − K*ᵀ K⁻¹ K*)`.
    pub fn covariance(&self, z_star: MatRef<'_, f64>, tau: f64) -> Result<Mat<f64>> {
        let kst = self.cross(z_star)?;
        let kss = cross_gram(z_star, z_star, &self.params)?;
        let solved = self.chol.solve_mat(kst.transpose());
        let reduced = &kss - &kst * &solved;
        let m = z_star.nrows();
        Ok(Mat::from_fn(m, m, |i, j| tau * 0.5 * (reduced[(i, j)] + reduced[(j, i)])))
    }

    /// One draw of h at `z_star` from the conditional with scale `tau`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, z_star: MatRef<'_, f64>, h_train: &[f64], tau: f64) -> Result<Vec<f64>> {
        let mean = self.mean(z_star, h_train)?;
        let cov = self.covariance(z_star, tau)?;
        let chol = Cholesky::with_jitter(cov.as_ref(), 1e-12 * tau.max(f64::MIN_POSITIVE))?;
        let noise = chol.color(standard_normal_col(rng, mean.len()).as_ref());
        Ok(mean.iter().enumerate().map(|(i, m)| m + noise[i]).collect())
    }
}

/// h at `z_star` for one posterior draw whose h lives at `z_train`: the
/// conditional mean, or a draw from the conditional when `rng` is given.
pub fn predict_h<R: Rng + ?Sized>(
    draw: &PosteriorDraw,
    mode: &KernelMode,
    z_train: MatRef<'_, f64>,
    z_star: MatRef<'_, f64>,
    jitter: f64,
    rng: Option<&mut R>,
) -> Result<Vec<f64>> {
    if draw.h.len() != z_train.nrows() {
        return Err(Error::InvalidData(format!(
            "draw carries {} h values for {} sites",
            draw.h.len(),
            z_train.nrows()
        )));
    }
    let params = KernelParams::from_draw(&draw.kernel, mode, z_train.ncols());
    let predictor = Predictor::new(z_train, params, jitter)?;
    match rng {
        None => predictor.mean(z_star, &draw.h),
        Some(rng) => predictor.sample(rng, z_star, &draw.h, draw.lambda * draw.sigma2),
    }
}

/// Empirical quantile (type 7, linear interpolation) of a column.
pub fn column_quantile(z: MatRef<'_, f64>, j: usize, u: f64) -> f64 {
    let mut v: Vec<f64> = (0..z.nrows()).map(|i| z[(i, j)]).collect();
    v.sort_by(f64::total_cmp);
    let pos = u.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// `points` equispaced values spanning the central `coverage` of column `j`.
pub fn exposure_axis(z: MatRef<'_, f64>, j: usize, points: usize, coverage: f64) -> Result<Vec<f64>> {
    if points == 0 {
        return Err(Error::Domain("surface grid needs at least one point".into()));
    }
    if j >= z.ncols() {
        return Err(Error::Domain(format!("exposure {} out of range (q = {})", j + 1, z.ncols())));
    }
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(Error::Domain(format!("coverage must lie in (0, 1], got {coverage}")));
    }
    let lo = column_quantile(z, j, 0.5 - coverage / 2.0);
    let hi = column_quantile(z, j, 0.5 + coverage / 2.0);
    if points == 1 {
        return Ok(vec![0.5 * (lo + hi)]);
    }
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points).map(|g| lo + step * g as f64).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub enum SurfaceKind {
    Univariate { j: usize },
    /// Product grid; the first exposure varies slowest.
    Bivariate { i: usize, j: usize },
}

impl SurfaceKind {
    pub fn exposures(&self) -> Vec<usize> {
        match *self {
            SurfaceKind::Univariate { j } => vec![j],
            SurfaceKind::Bivariate { i, j } => vec![i, j],
        }
    }

    /// File stem such as `surface_z1` or `surface_z1_z2`.
    pub fn stem(&self) -> String {
        let names: Vec<String> = self.exposures().iter().map(|j| format!("z{}", j + 1)).collect();
        format!("surface_{}", names.join("_"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceRequest {
    pub kind: SurfaceKind,
    pub grid_points: usize,
    /// Quantile at which the remaining exposures are held.
    pub fix: f64,
    pub coverage: f64,
}

impl SurfaceRequest {
    pub fn univariate(j: usize) -> Self {
        Self {
            kind: SurfaceKind::Univariate { j },
            grid_points: DEFAULT_GRID_POINTS,
            fix: 0.5,
            coverage: DEFAULT_COVERAGE,
        }
    }

    pub fn bivariate(i: usize, j: usize) -> Self {
        Self {
            kind: SurfaceKind::Bivariate { i, j },
            ..Self::univariate(i)
        }
    }
}

/// One surface's slice of the reference grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridBlock {
    pub request: SurfaceRequest,
    /// First row of this block in the reference grid.
    pub start: usize,
    /// Grid values along each varying exposure.
    pub axes: Vec<Vec<f64>>,
}

impl GridBlock {
    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid values of row `g` within the block.
    pub fn coords(&self, g: usize) -> Vec<f64> {
        match self.axes.as_slice() {
            [a] => vec![a[g]],
            [a, b] => vec![a[g / b.len()], b[g % b.len()]],
            _ => Vec::new(),
        }
    }
}

/// All points at which h is predicted and combined, stacked block by block.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceGrid {
    pub points: Mat<f64>,
    pub blocks: Vec<GridBlock>,
}

impl ReferenceGrid {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major copy of the points, used to check grids agree across subsets.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.points.nrows() * self.points.ncols());
        for i in 0..self.points.nrows() {
            for l in 0..self.points.ncols() {
                out.push(self.points[(i, l)]);
            }
        }
        out
    }

    /// Grid made of explicit points (no surface blocks).
    pub fn from_points(points: Mat<f64>) -> Self {
        Self {
            points,
            blocks: Vec::new(),
        }
    }
}

/// Build the reference grid for `requests` from the observed exposures.
pub fn build_reference_grid(z: MatRef<'_, f64>, requests: &[SurfaceRequest]) -> Result<ReferenceGrid> {
    let q = z.ncols();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut blocks = Vec::new();
    for req in requests {
        if !(0.0..=1.0).contains(&req.fix) {
            return Err(Error::Domain(format!("fix quantile must lie in [0, 1], got {}", req.fix)));
        }
        let exposures = req.kind.exposures();
        if let [a, b] = exposures[..] {
            if a == b {
                return Err(Error::Domain("bivariate surface needs two different exposures".into()));
            }
        }
        let axes = exposures
            .iter()
            .map(|&j| exposure_axis(z, j, req.grid_points, req.coverage))
            .collect::<Result<Vec<_>>>()?;
        let base: Vec<f64> = (0..q).map(|l| column_quantile(z, l, req.fix)).collect();
        let block = GridBlock {
            request: req.clone(),
            start: rows.len(),
            axes,
        };
        for g in 0..block.len() {
            let mut row = base.clone();
            for (&j, v) in exposures.iter().zip(block.coords(g)) {
                row[j] = v;
            }
            rows.push(row);
        }
        blocks.push(block);
    }
    Ok(ReferenceGrid {
        points: Mat::from_fn(rows.len(), q, |i, l| rows[i][l]),
        blocks,
    })
}

/// Posterior mean and pointwise 95% / 50% bands of h at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceRow {
    pub coords: Vec<f64>,
    pub mean: f64,
    pub lo95: f64,
    pub hi95: f64,
    pub lo50: f64,
    pub hi50: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub kind: SurfaceKind,
    pub rows: Vec<SurfaceRow>,
}

impl Surface {
    /// Means as a `G_i × G_j` matrix for bivariate surfaces (a column for univariate ones).
    pub fn mean_matrix(&self, block: &GridBlock) -> Mat<f64> {
        let (r, c) = match block.axes.as_slice() {
            [a, b] => (a.len(), b.len()),
            [a] => (a.len(), 1),
            _ => (0, 0),
        };
        Mat::from_fn(r, c, |i, j| self.rows[i * c + j].mean)
    }
}

fn band_row(coords: Vec<f64>, combined: &CombinedPosterior) -> SurfaceRow {
    SurfaceRow {
        coords,
        mean: combined.mean()[0],
        lo95: combined.quantile(0.025),
        hi95: combined.quantile(0.975),
        lo50: combined.quantile(0.25),
        hi50: combined.quantile(0.75),
    }
}

/// Assemble a surface from combined posteriors of `h` at the block's grid rows.
pub fn surface_from_combined(block: &GridBlock, combined: &[CombinedPosterior]) -> Result<Surface> {
    if block.is_empty() {
        return Err(Error::Domain("empty surface grid".into()));
    }
    let rows = (0..block.len())
        .map(|g| {
            let target = Functional::H(block.start + g);
            combined
                .iter()
                .find(|c| c.functional == target)
                .map(|c| band_row(block.coords(g), c))
                .ok_or_else(|| Error::InvalidData(format!("no combined posterior for {target}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Surface {
        kind: block.request.kind.clone(),
        rows,
    })
}

/// Univariate surface for exposure `j` from combined h draws on the grid.
pub fn surface_univariate(grid: &ReferenceGrid, combined: &[CombinedPosterior], j: usize) -> Result<Surface> {
    let block = grid
        .blocks
        .iter()
        .find(|b| b.request.kind == SurfaceKind::Univariate { j })
        .ok_or_else(|| Error::Domain(format!("no univariate grid for exposure {}", j + 1)))?;
    surface_from_combined(block, combined)
}

/// Bivariate surface for exposures `(i, j)` from combined h draws on the grid.
pub fn surface_bivariate(grid: &ReferenceGrid, combined: &[CombinedPosterior], i: usize, j: usize) -> Result<Surface> {
    let block = grid
        .blocks
        .iter()
        .find(|b| b.request.kind == SurfaceKind::Bivariate { i, j })
        .ok_or_else(|| Error::Domain(format!("no bivariate grid for exposures {} and {}", i + 1, j + 1)))?;
    surface_from_combined(block, combined)
}

/// `z<j>[, z<i>], mean, lo95, hi95, lo50, hi50`.
pub fn write_surface_csv(path: &Path, surface: &Surface) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let names: Vec<String> = surface.kind.exposures().iter().map(|j| format!("z{}", j + 1)).collect();
    writeln!(w, "{},mean,lo95,hi95,lo50,hi50", names.join(",")).map_err(io)?;
    for r in &surface.rows {
        let mut fields: Vec<String> = r.coords.iter().map(|&v| fmt_f64(v)).collect();
        fields.extend([r.mean, r.lo95, r.hi95, r.lo50, r.hi50].map(fmt_f64));
        writeln!(w, "{}", fields.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Posterior inclusion probability of each exposure: the combined-weight mean
/// of `η_j`.
pub fn inclusion_probabilities(combined: &[CombinedPosterior], q: usize) -> Result<Vec<f64>> {
    (0..q)
        .map(|j| {
            combined
                .iter()
                .find(|c| c.functional == Functional::Eta(j))
                .map(|c| c.mean()[0].clamp(0.0, 1.0))
                .ok_or(Error::ModeError)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub gamma0: f64,
    pub gamma1: f64,
    pub r2: f64,
}

/// OLS of `h_true` on `h_hat`: intercept, slope and R².
pub fn calibration_regression(h_true: &[f64], h_hat: &[f64]) -> Result<Calibration> {
    let n = h_true.len();
    if n != h_hat.len() || n < 3 {
        return Err(Error::InvalidData(format!(
            "calibration needs two equal-length vectors of at least 3 values, got {n} and {}",
            h_hat.len()
        )));
    }
    let nf = n as f64;
    let mx = h_hat.iter().sum::<f64>() / nf;
    let my = h_true.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in h_hat.iter().zip(h_true) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if !(sxx > 1e-300 * nf) {
        return Err(Error::DegenerateRegressor);
    }
    let gamma1 = sxy / sxx;
    let gamma0 = my - gamma1 * mx;
    let r2 = if syy > 0.0 { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) } else { 1.0 };
    Ok(Calibration { gamma0, gamma1, r2 })
}

/// Location and spread of one combined functional.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q500: f64,
    pub q975: f64,
}

pub fn summarize(combined: &CombinedPosterior) -> ParameterSummary {
    ParameterSummary {
        name: combined.name(),
        mean: combined.mean()[0],
        sd: combined.measure.variance().sqrt(),
        q025: combined.quantile(0.025),
        q500: combined.quantile(0.5),
        q975: combined.quantile(0.975),
    }
}

pub fn write_parameters_csv(path: &Path, rows: &[ParameterSummary]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "parameter,mean,sd,q2.5,q50,q97.5").map_err(io)?;
    for r in rows {
        writeln!(
            w,
            "{},{}",
            r.name,
            [r.mean, r.sd, r.q025, r.q500, r.q975].map(fmt_f64).join(",")
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}
