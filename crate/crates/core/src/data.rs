//! Observed samples, model configuration and posterior draws.

use std::path::Path;

use faer::{Col, Mat, MatRef};

use crate::error::{Error, Result};

/// Outcome `y`, confounders `x` (n×p) and exposures `z` (n×q).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub y: Col<f64>,
    pub x: Mat<f64>,
    pub z: Mat<f64>,
    pub outcome_name: String,
    pub confounder_names: Vec<String>,
    pub exposure_names: Vec<String>,
}

impl Dataset {
    /// Build a dataset with generated column names (`x1.., z1..`).
    pub fn new(y: Col<f64>, x: Mat<f64>, z: Mat<f64>) -> Result<Self> {
        let confounder_names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        let exposure_names = (1..=z.ncols()).map(|j| format!("z{j}")).collect();
        Self::with_names(y, x, z, "y".into(), confounder_names, exposure_names)
    }

    pub fn with_names(
        y: Col<f64>,
        x: Mat<f64>,
        z: Mat<f64>,
        outcome_name: String,
        confounder_names: Vec<String>,
        exposure_names: Vec<String>,
    ) -> Result<Self> {
        let n = y.nrows();
        if n == 0 {
            return Err(Error::InvalidData("dataset has no rows".into()));
        }
        if x.nrows() != n || z.nrows() != n {
            return Err(Error::InvalidData(format!(
                "row counts disagree: y has {n}, x has {}, z has {}",
                x.nrows(),
                z.nrows()
            )));
        }
        if z.ncols() == 0 {
            return Err(Error::InvalidData("at least one exposure column is required".into()));
        }
        if confounder_names.len() != x.ncols() || exposure_names.len() != z.ncols() {
            return Err(Error::InvalidData("column names do not match matrix widths".into()));
        }
        let finite = (0..n).all(|i| y[i].is_finite())
            && all_finite(x.as_ref())
            && all_finite(z.as_ref());
        if !finite {
            return Err(Error::InvalidData("non-finite entry".into()));
        }
        Ok(Self {
            y,
            x,
            z,
            outcome_name,
            confounder_names,
            exposure_names,
        })
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.z.ncols()
    }
}

fn all_finite(m: MatRef<'_, f64>) -> bool {
    (0..m.ncols()).all(|j| (0..m.nrows()).all(|i| m[(i, j)].is_finite()))
}

/// Which CSV columns play which role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub outcome: String,
    pub confounders: Vec<String>,
    pub exposures: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum MissingPolicy {
    #[default]
    Error,
    Drop,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub dropped: usize,
}

/// Read a comma-separated file with a header row and assign columns by role.
pub fn load_csv(path: &Path, schema: &Schema, policy: MissingPolicy) -> Result<(Dataset, LoadReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Format {
                path: path.into(),
                msg: format!("{other:?}"),
            },
        })?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    if schema.exposures.is_empty() {
        return Err(Error::Config("schema names no exposure columns".into()));
    }
    let y_col = find(&schema.outcome)?;
    let x_cols = schema.confounders.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let z_cols = schema.exposures.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;

    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut z = Vec::new();
    let mut report = LoadReport::default();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let parse = |col: usize| -> Option<f64> {
            record
                .get(col)
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
        };
        let wanted = std::iter::once(y_col).chain(x_cols.iter().copied()).chain(z_cols.iter().copied());
        let mut values = Vec::with_capacity(1 + x_cols.len() + z_cols.len());
        let mut bad = None;
        for col in wanted {
            match parse(col) {
                Some(v) => values.push(v),
                None => {
                    bad = Some(col);
                    break;
                }
            }
        }
        if let Some(col) = bad {
            match policy {
                MissingPolicy::Error => {
                    return Err(Error::NonFinite {
                        column: headers.get(col).unwrap_or("?").to_string(),
                        row: row + 1,
                    })
                }
                MissingPolicy::Drop => {
                    report.dropped += 1;
                    continue;
                }
            }
        }
        y.push(values[0]);
        x.extend_from_slice(&values[1..1 + x_cols.len()]);
        z.extend_from_slice(&values[1 + x_cols.len()..]);
    }
    let n = y.len();
    if n == 0 {
        return Err(Error::NoUsableRows);
    }
    let p = x_cols.len();
    let q = z_cols.len();
    let ds = Dataset::with_names(
        Col::from_fn(n, |i| y[i]),
        Mat::from_fn(n, p, |i, j| x[i * p + j]),
        Mat::from_fn(n, q, |i, j| z[i * q + j]),
        schema.outcome.clone(),
        schema.confounders.clone(),
        schema.exposures.clone(),
    )?;
    Ok((ds, report))
}

/// Write a dataset in the layout `load_csv` reads, outcome first.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            path: path.into(),
            msg: format!("{other:?}"),
        },
    })?;
    let header: Vec<&str> = std::iter::once(ds.outcome_name.as_str())
        .chain(ds.confounder_names.iter().map(String::as_str))
        .chain(ds.exposure_names.iter().map(String::as_str))
        .collect();
    w.write_record(&header)?;
    for i in 0..ds.n() {
        let row: Vec<String> = std::iter::once(ds.y[i])
            .chain((0..ds.p()).map(|j| ds.x[(i, j)]))
            .chain((0..ds.q()).map(|j| ds.z[(i, j)]))
            .map(fmt_f64)
            .collect();
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

impl Schema {
    pub fn for_dataset(ds: &Dataset) -> Self {
        Self {
            outcome: ds.outcome_name.clone(),
            confounders: ds.confounder_names.clone(),
            exposures: ds.exposure_names.clone(),
        }
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Per-column centering and population-SD scaling, kept for back-transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaling {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Scaling {
    pub fn to_original(&self, j: usize, standardized: f64) -> f64 {
        self.mean[j] + self.sd[j] * standardized
    }
}

/// Center and scale each column of `m` in place (population SD).
pub fn standardize_columns(m: &mut Mat<f64>) -> Result<Scaling> {
    let n = m.nrows() as f64;
    let mut scaling = Scaling {
        mean: Vec::with_capacity(m.ncols()),
        sd: Vec::with_capacity(m.ncols()),
    };
    for j in 0..m.ncols() {
        let mean = (0..m.nrows()).map(|i| m[(i, j)]).sum::<f64>() / n;
        let var = (0..m.nrows()).map(|i| (m[(i, j)] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if !(sd > 1e-300) || sd <= 1e-12 * mean.abs() {
            return Err(Error::DegenerateColumn(j));
        }
        for i in 0..m.nrows() {
            m[(i, j)] = (m[(i, j)] - mean) / sd;
        }
        scaling.mean.push(mean);
        scaling.sd.push(sd);
    }
    Ok(scaling)
}

/// Standardize every exposure column to mean 0 and population SD 1.
pub fn standardize(ds: &Dataset) -> Result<(Dataset, Scaling)> {
    let mut out = ds.clone();
    let scaling = standardize_columns(&mut out.z)?;
    Ok((out, scaling))
}

/// Shape/rate parameterized Gamma prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub const fn new(shape: f64, rate: f64) -> Self {
        Self { shape, rate }
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    /// Log density up to the normalizing constant.
    pub fn log_kernel(&self, x: f64) -> f64 {
        (self.shape - 1.0) * x.ln() - self.rate * x
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.shape > 0.0 && self.rate > 0.0 && self.shape.is_finite() && self.rate.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("{what} prior needs positive shape and rate")))
        }
    }
}

/// Power applied to ρ in the isotropic kernel `exp(-‖Δ‖² / ρ^power)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhoExponent {
    /// `2q`, with q the number of exposures.
    TwoQ,
    Power(f64),
}

impl RhoExponent {
    pub fn power(&self, q: usize) -> f64 {
        match *self {
            RhoExponent::TwoQ => 2.0 * q as f64,
            RhoExponent::Power(p) => p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelMode {
    Isotropic { exponent: RhoExponent },
    Ard,
}

impl KernelMode {
    pub fn is_ard(&self) -> bool {
        matches!(self, KernelMode::Ard)
    }
}

/// Which blocks of the sweep are updated; frozen blocks keep their initial value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpdateFlags {
    pub beta: bool,
    pub sigma2: bool,
    pub lambda: bool,
    pub kernel: bool,
    pub h: bool,
}

impl Default for UpdateFlags {
    fn default() -> Self {
        Self {
            beta: true,
            sigma2: true,
            lambda: true,
            kernel: true,
            h: true,
        }
    }
}

/// Optional starting values overriding the default initialization.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InitialValues {
    pub beta: Option<Vec<f64>>,
    pub sigma2: Option<f64>,
    pub lambda: Option<f64>,
    pub rho: Option<f64>,
    /// ARD bandwidths; entries equal to zero are spikes.
    pub r: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kernel: KernelMode,
    pub lambda_prior: GammaPrior,
    pub sigma_prior: GammaPrior,
    pub rho_prior: GammaPrior,
    /// Prior inclusion probabilities; one entry broadcasts to every exposure.
    pub inclusion_prob: Vec<f64>,
    pub slab: GammaPrior,
    pub temper: bool,
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    /// Draw σ² itself from the Gamma conditional instead of its precision.
    pub sigma2_literal_gamma: bool,
    pub jitter: f64,
    pub initial_step: f64,
    pub target_acceptance: f64,
    pub updates: UpdateFlags,
    pub init: InitialValues,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kernel: KernelMode::Isotropic {
                exponent: RhoExponent::TwoQ,
            },
            lambda_prior: GammaPrior::new(1.0, 0.1),
            sigma_prior: GammaPrior::new(0.001, 0.001),
            rho_prior: GammaPrior::new(2.0, 2.0),
            inclusion_prob: vec![0.5],
            slab: GammaPrior::new(1.0, 2.0),
            temper: true,
            iters: 2000,
            burnin: 1000,
            thin: 5,
            sigma2_literal_gamma: false,
            jitter: crate::kernel::DEFAULT_JITTER,
            initial_step: 0.5,
            target_acceptance: 0.35,
            updates: UpdateFlags::default(),
            init: InitialValues::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.lambda_prior.validate("lambda")?;
        self.sigma_prior.validate("sigma")?;
        self.rho_prior.validate("rho")?;
        self.slab.validate("slab")?;
        if self.inclusion_prob.is_empty() || self.inclusion_prob.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("inclusion probabilities must lie in [0, 1]".into()));
        }
        if self.iters <= self.burnin {
            return Err(Error::Config(format!(
                "iters ({}) must exceed burnin ({})",
                self.iters, self.burnin
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if !(self.jitter >= 0.0) || !(self.initial_step >= 0.0) {
            return Err(Error::Config("jitter and step size must be nonnegative".into()));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::Config("target acceptance must lie in (0, 1)".into()));
        }
        if let KernelMode::Isotropic {
            exponent: RhoExponent::Power(p),
        } = self.kernel
        {
            if !(p > 0.0) {
                return Err(Error::Config("rho exponent must be positive".into()));
            }
        }
        Ok(())
    }

    /// Prior inclusion probabilities expanded to length `q`.
    pub fn inclusion_probs(&self, q: usize) -> Result<Vec<f64>> {
        match self.inclusion_prob.len() {
            1 => Ok(vec![self.inclusion_prob[0]; q]),
            len if len == q => Ok(self.inclusion_prob.clone()),
            len => Err(Error::Config(format!(
                "{len} inclusion probabilities given for {q} exposures"
            ))),
        }
    }

    /// Number of retained draws, `floor((iters - burnin) / thin)`.
    pub fn retained(&self) -> usize {
        (self.iters - self.burnin) / self.thin
    }
}

/// Kernel hyperparameters carried by one draw.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelDraw {
    Isotropic { rho: f64 },
    Ard { r: Vec<f64>, eta: Vec<bool> },
}

/// One joint state of the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraw {
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub lambda: f64,
    pub kernel: KernelDraw,
    /// Latent exposure-response values at the chain's own sites.
    pub h: Vec<f64>,
}

impl PosteriorDraw {
    pub fn check_invariants(&self) -> bool {
        let kernel_ok = match &self.kernel {
            KernelDraw::Isotropic { rho } => *rho > 0.0 && rho.is_finite(),
            KernelDraw::Ard { r, eta } => {
                r.len() == eta.len()
                    && r.iter()
                        .zip(eta)
                        .all(|(&rj, &ej)| rj >= 0.0 && rj.is_finite() && ((rj == 0.0) != ej))
            }
        };
        self.sigma2 > 0.0
            && self.sigma2.is_finite()
            && self.lambda > 0.0
            && self.lambda.is_finite()
            && kernel_ok
            && self.beta.iter().chain(&self.h).all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn schema(conf: &[&str], exp: &[&str]) -> Schema {
        Schema {
            outcome: "y".into(),
            confounders: conf.iter().map(|s| s.to_string()).collect(),
            exposures: exp.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn loads_three_rows() {
        let f = write_tmp("y,x1,z1,z2\n1,2,3,4\n5,6,7,8\n9,10,11,12\n");
        let (ds, rep) = load_csv(f.path(), &schema(&["x1"], &["z1", "z2"]), MissingPolicy::Error).unwrap();
        assert_eq!((ds.n(), ds.p(), ds.q()), (3, 1, 2));
        assert_eq!(rep.dropped, 0);
        assert_eq!(ds.z[(2, 1)], 12.0);
        assert_eq!(ds.y[1], 5.0);
    }

    #[test]
    fn drop_policy_counts_rows() {
        let f = write_tmp("y,x1,z1\n1,2,3\n5,NA,7\n9,10,11\n");
        let (ds, rep) = load_csv(f.path(), &schema(&["x1"], &["z1"]), MissingPolicy::Drop).unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(rep.dropped, 1);
        let err = load_csv(f.path(), &schema(&["x1"], &["z1"]), MissingPolicy::Error).unwrap_err();
        assert!(matches!(err, Error::NonFinite { ref column, row: 2 } if column == "x1"));
    }

    #[test]
    fn missing_column_is_reported() {
        let f = write_tmp("y,z1\n1,2\n");
        let err = load_csv(f.path(), &schema(&[], &["z1", "z9"]), MissingPolicy::Error).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "z9"));
    }

    #[test]
    fn all_rows_dropped_is_an_error() {
        let f = write_tmp("y,z1\nNA,2\n");
        let err = load_csv(f.path(), &schema(&[], &["z1"]), MissingPolicy::Drop).unwrap_err();
        assert!(matches!(err, Error::NoUsableRows));
    }

    #[test]
    fn standardize_population_sd() {
        let ds = Dataset::new(
            Col::from_fn(3, |i| i as f64),
            Mat::zeros(3, 0),
            Mat::from_fn(3, 1, |i, _| (i + 1) as f64),
        )
        .unwrap();
        let (out, sc) = standardize(&ds).unwrap();
        let expect = [-1.224744871391589, 0.0, 1.224744871391589];
        for i in 0..3 {
            assert!((out.z[(i, 0)] - expect[i]).abs() < 1e-12);
        }
        assert!((sc.mean[0] - 2.0).abs() < 1e-15);
        assert!((sc.sd[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let (again, _) = standardize(&out).unwrap();
        for i in 0..3 {
            assert!((again.z[(i, 0)] - out.z[(i, 0)]).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_exposure_is_degenerate() {
        let ds = Dataset::new(Col::zeros(4), Mat::zeros(4, 0), Mat::from_fn(4, 1, |_, _| 3.0)).unwrap();
        assert!(matches!(standardize(&ds), Err(Error::DegenerateColumn(0))));
    }

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.burnin = cfg.iters;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::default();
        cfg.inclusion_prob = vec![1.5];
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::default();
        cfg.thin = 0;
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig {
            iters: 11,
            burnin: 10,
            thin: 1,
            ..ModelConfig::default()
        };
        assert_eq!(cfg.retained(), 1);
    }
}
