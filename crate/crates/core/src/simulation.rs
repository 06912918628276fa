//! Synthetic benchmark: a confounded mixture-exposure study with a known
//! exposure-response function, and a runner sweeping sample size and split
//! exponent with replication.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use faer::{Col, Mat};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::data::{fmt_f64, Dataset, ModelConfig};
use crate::error::{Error, Result};
use crate::ot::{CombineOptions, Functional};
use crate::partition::{split_count, MIN_SUBSET_SIZE};
use crate::pipeline::{fit, FitOptions};
use crate::seed::{derive_seed, rng_from_seed};
use crate::summary::calibration_regression;

const DATA_STREAM: u64 = 11;
const FIT_STREAM: u64 = 12;

/// Largest split exponent accepted by the sweep.
pub const MAX_SPLIT_EXPONENT: f64 = 0.7;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub q: usize,
    pub t: f64,
    pub replications: usize,
    pub beta0: f64,
    pub sigma2: f64,
    pub seed: u64,
    /// Read the confounder's spread parameter as a standard deviation rather
    /// than a variance.
    pub confounder_sd_mode: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 512,
            q: 4,
            t: 0.0,
            replications: 10,
            beta0: 2.0,
            sigma2: 0.5,
            seed: 0,
            confounder_sd_mode: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 64 {
            return Err(Error::Domain(format!("n must be at least 64, got {}", self.n)));
        }
        if !(0.0..=MAX_SPLIT_EXPONENT).contains(&self.t) {
            return Err(Error::Domain(format!("t must lie in [0, {MAX_SPLIT_EXPONENT}], got {}", self.t)));
        }
        if self.replications == 0 {
            return Err(Error::Domain("at least one replication is required".into()));
        }
        if self.q < 2 {
            return Err(Error::Domain("the response function needs q >= 2 exposures".into()));
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::Domain("noise variance must be positive".into()));
        }
        Ok(())
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `4 φ((5/6)(z₁ + z₂ + ½ z₁ z₂))` with `φ` the logistic function.
pub fn true_h(z: &[f64]) -> f64 {
    let (z1, z2) = (z[0], z[1]);
    4.0 * logistic(5.0 / 6.0 * (z1 + z2 + 0.5 * z1 * z2))
}

/// Draw one dataset: `z ~ N(0, I_q)`, `x ~ N(3 cos z₁, 2)`, `y ~ N(β⁰x + h₀(z), σ²)`.
/// Returns the data and `h₀` at every row.
pub fn gen_data(cfg: &SimConfig, seed: u64) -> Result<(Dataset, Vec<f64>)> {
    let mut rng = rng_from_seed(seed);
    let (n, q) = (cfg.n, cfg.q);
    let x_sd = if cfg.confounder_sd_mode { 2.0 } else { 2.0f64.sqrt() };
    let noise = Normal::new(0.0, cfg.sigma2.sqrt()).map_err(|e| Error::Domain(e.to_string()))?;
    let mut z = Mat::<f64>::zeros(n, q);
    let mut x = Mat::<f64>::zeros(n, 1);
    let mut y = Col::<f64>::zeros(n);
    let mut h = Vec::with_capacity(n);
    for i in 0..n {
        let zi: Vec<f64> = (0..q).map(|_| rng.sample(StandardNormal)).collect();
        let xi = 3.0 * zi[0].cos() + x_sd * rng.sample::<f64, _>(StandardNormal);
        let hi = true_h(&zi);
        y[i] = cfg.beta0 * xi + hi + noise.sample(&mut rng);
        x[(i, 0)] = xi;
        for (l, v) in zi.into_iter().enumerate() {
            z[(i, l)] = v;
        }
        h.push(hi);
    }
    let ds = Dataset::with_names(
        y,
        x,
        z,
        "y".into(),
        vec!["x".into()],
        (1..=q).map(|j| format!("z{j}")).collect(),
    )?;
    Ok((ds, h))
}

/// Seed of the dataset for replication `rep` at sample size `n`; shared by
/// every split exponent so cells at the same `(n, rep)` see the same data.
pub fn data_seed(master: u64, n: usize, rep: usize) -> u64 {
    derive_seed(master, &[DATA_STREAM, n as u64, rep as u64])
}

pub fn fit_seed(master: u64, n: usize, t_index: usize, rep: usize) -> u64 {
    derive_seed(master, &[FIT_STREAM, n as u64, t_index as u64, rep as u64])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub n_list: Vec<usize>,
    pub t_list: Vec<f64>,
    pub replications: usize,
    pub seed: u64,
    pub q: usize,
    pub beta0: f64,
    pub sigma2: f64,
    pub confounder_sd_mode: bool,
    pub model: ModelConfig,
    pub combine: CombineOptions,
    pub min_subset_size: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            n_list: vec![512],
            t_list: vec![0.0],
            replications: sim.replications,
            seed: 0,
            q: sim.q,
            beta0: sim.beta0,
            sigma2: sim.sigma2,
            confounder_sd_mode: false,
            model: ModelConfig::default(),
            combine: CombineOptions::default(),
            min_subset_size: MIN_SUBSET_SIZE,
        }
    }
}

impl ExperimentConfig {
    fn sim(&self, n: usize, t: f64) -> SimConfig {
        SimConfig {
            n,
            q: self.q,
            t,
            replications: self.replications,
            beta0: self.beta0,
            sigma2: self.sigma2,
            seed: self.seed,
            confounder_sd_mode: self.confounder_sd_mode,
        }
    }

    /// Check every cell's configuration before anything runs.
    pub fn validate(&self) -> Result<()> {
        if self.n_list.is_empty() || self.t_list.is_empty() {
            return Err(Error::Domain("empty n or t list".into()));
        }
        for &n in &self.n_list {
            for &t in &self.t_list {
                self.sim(n, t).validate()?;
            }
        }
        self.model.validate()
    }

    /// `(n, t_index, t, rep)` for every cell, in output order.
    pub fn cells(&self) -> Vec<(usize, usize, f64, usize)> {
        let mut out = Vec::new();
        for &n in &self.n_list {
            for (ti, &t) in self.t_list.iter().enumerate() {
                for rep in 0..self.replications {
                    out.push((n, ti, t, rep));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellStatus {
    Ok,
    Skipped(String),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub n: usize,
    pub t: f64,
    pub rep: usize,
    pub k: usize,
    pub gamma0: f64,
    pub gamma1: f64,
    pub r2: f64,
    pub beta_hat: f64,
    pub seconds: f64,
    pub status: CellStatus,
}

/// Fit one cell: generate data, fit with `K = round(n^t)` subsets, combine,
/// and regress the truth on the combined `ĥ` at the training sites.
pub fn run_cell(cfg: &ExperimentConfig, n: usize, t_index: usize, t: f64, rep: usize) -> ResultRow {
    let mut row = ResultRow {
        n,
        t,
        rep,
        k: 0,
        gamma0: f64::NAN,
        gamma1: f64::NAN,
        r2: f64::NAN,
        beta_hat: f64::NAN,
        seconds: f64::NAN,
        status: CellStatus::Ok,
    };
    match split_count(n, t, cfg.min_subset_size) {
        Ok(k) => row.k = k,
        Err(e @ Error::SubsetTooSmall { .. }) => {
            row.status = CellStatus::Skipped(e.to_string());
            return row;
        }
        Err(e) => {
            row.status = CellStatus::Failed(e.to_string());
            return row;
        }
    }
    let outcome = (|| -> Result<()> {
        let (ds, h_true) = gen_data(&cfg.sim(n, t), data_seed(cfg.seed, n, rep))?;
        let opts = FitOptions {
            model: cfg.model.clone(),
            splits_exponent: t,
            min_subset_size: cfg.min_subset_size,
            seed: fit_seed(cfg.seed, n, t_index, rep),
            combine: cfg.combine.clone(),
            extra_points: Some(ds.z.clone()),
            ..FitOptions::default()
        };
        let start = Instant::now();
        let result = fit(&ds, &opts)?;
        row.seconds = start.elapsed().as_secs_f64();
        let h_hat = result.h_means(0..n);
        let cal = calibration_regression(&h_true, &h_hat)?;
        row.gamma0 = cal.gamma0;
        row.gamma1 = cal.gamma1;
        row.r2 = cal.r2;
        row.beta_hat = result.find(&Functional::Beta(0)).map_or(f64::NAN, |c| c.mean()[0]);
        Ok(())
    })();
    if let Err(e) = outcome {
        row.status = CellStatus::Failed(e.to_string());
    }
    row
}

/// Run every cell in order. Cells run one after another so the timing column
/// measures a cell's own fit; subset chains inside a cell run in parallel.
pub fn run_experiment(cfg: &ExperimentConfig, mut progress: impl FnMut(&ResultRow)) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for (n, ti, t, rep) in cfg.cells() {
        let row = run_cell(cfg, n, ti, t, rep);
        progress(&row);
        rows.push(row);
    }
    Ok(rows)
}

fn status_text(s: &CellStatus) -> String {
    match s {
        CellStatus::Ok => "ok".into(),
        CellStatus::Skipped(why) => format!("skipped: {why}"),
        CellStatus::Failed(why) => format!("failed: {why}"),
    }
}

/// Long-format table `n,t,rep,K,gamma0,gamma1,r2,beta_hat,seconds,status`.
pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["n", "t", "rep", "K", "gamma0", "gamma1", "r2", "beta_hat", "seconds", "status"])?;
    for r in rows {
        let num = |v: f64| if v.is_nan() { String::new() } else { fmt_f64(v) };
        w.write_record([
            r.n.to_string(),
            fmt_f64(r.t),
            (r.rep + 1).to_string(),
            r.k.to_string(),
            num(r.gamma0),
            num(r.gamma1),
            num(r.r2),
            num(r.beta_hat),
            num(r.seconds),
            status_text(&r.status),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Per-cell seeds, for the run manifest.
pub fn write_seed_table(path: &Path, cfg: &ExperimentConfig) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "n,t,rep,data_seed,fit_seed").map_err(io)?;
    for (n, ti, t, rep) in cfg.cells() {
        writeln!(
            w,
            "{n},{},{},{},{}",
            fmt_f64(t),
            rep + 1,
            data_seed(cfg.seed, n, rep),
            fit_seed(cfg.seed, n, ti, rep)
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}
