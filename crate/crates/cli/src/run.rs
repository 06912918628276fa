//! Artifact directories: writing a fit and loading one back for re-combination
//! or new surfaces.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use splitgp_core::data::{fmt_f64, load_csv, standardize_columns};
use splitgp_core::faer::Mat;
use splitgp_core::ot::{combine, default_plan, write_combined_csv, write_diagnostics_csv, SubsetPosterior};
use splitgp_core::partition::{read_partition_csv, write_partition_csv};
use splitgp_core::pipeline::{reference_grid, subset_posteriors};
use splitgp_core::sampler::{read_draws_csv, write_draws_csv};
use splitgp_core::summary::{
    inclusion_probabilities, summarize, surface_from_combined, write_parameters_csv, write_surface_csv, ReferenceGrid,
};
use splitgp_core::{ChainOutput, CombineOptions, CombinedPosterior, Dataset, FitOptions, Functional, PartitionPlan, Scaling};

use crate::config::{Settings, UsageError};

pub const CONFIG_FILE: &str = "config.cfg";
pub const MANIFEST_FILE: &str = "manifest";
pub const PARTITION_FILE: &str = "partition.csv";

/// Data as the sampler sees it, plus what was done to get there.
pub struct Prepared {
    pub data: Dataset,
    pub exposure_scaling: Option<Scaling>,
    pub confounder_scaling: Option<Scaling>,
    pub dropped: usize,
}

pub fn prepare_data(settings: &Settings) -> Result<Prepared> {
    let path = settings
        .data_path()
        .ok_or_else(|| UsageError("no data file given (--data or key `data`)".into()))?;
    let schema = settings.schema()?;
    let (mut ds, report) = load_csv(&path, &schema, settings.missing()?)?;
    let exposure_scaling = if settings.standardize_exposures()? {
        Some(standardize_columns(&mut ds.z)?)
    } else {
        None
    };
    let confounder_scaling = if settings.standardize_confounders()? && ds.p() > 0 {
        Some(standardize_columns(&mut ds.x)?)
    } else {
        None
    };
    if settings.intercept()? {
        let (n, p) = (ds.n(), ds.p());
        ds.x = Mat::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { ds.x[(i, j - 1)] });
        ds.confounder_names.insert(0, "intercept".into());
    }
    Ok(Prepared {
        data: ds,
        exposure_scaling,
        confounder_scaling,
        dropped: report.dropped,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("cannot create {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Manifest lines, `key = value`.
#[derive(Default)]
pub struct Manifest {
    lines: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Self::default();
        m.push("command", command);
        m.push("version", env!("CARGO_PKG_VERSION"));
        m
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.lines.push((key.to_string(), value.to_string()));
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text: String = self.lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        write_text(&dir.join(MANIFEST_FILE), &text)
    }
}

pub fn draw_file(dir: &Path, k: usize) -> PathBuf {
    dir.join("draws").join(format!("subset_{}.csv", k + 1))
}

fn write_scaling(path: &Path, names: &[String], s: &Scaling) -> Result<()> {
    let mut text = String::from("column,mean,sd\n");
    for (j, name) in names.iter().enumerate() {
        text.push_str(&format!("{name},{},{}\n", fmt_f64(s.mean[j]), fmt_f64(s.sd[j])));
    }
    write_text(path, &text)
}

/// The reference grid, one row per `h_<g>` functional.
fn write_grid(path: &Path, grid: &ReferenceGrid, names: &[String]) -> Result<()> {
    let mut text = format!("point,{}\n", names.join(","));
    for g in 0..grid.len() {
        let row: Vec<String> = (0..grid.points.ncols()).map(|l| fmt_f64(grid.points[(g, l)])).collect();
        text.push_str(&format!("h_{},{}\n", g + 1, row.join(",")));
    }
    write_text(path, &text)
}

/// `combined/`: one file per non-h functional, all h grid points in `h.csv`,
/// the grid itself and solver diagnostics.
pub fn write_combined_dir(dir: &Path, combined: &[CombinedPosterior], grid: &ReferenceGrid, exposures: &[String]) -> Result<()> {
    create_dir(dir)?;
    let (h, rest): (Vec<_>, Vec<_>) = combined
        .iter()
        .cloned()
        .partition(|c| matches!(c.functional, Functional::H(_)));
    for c in &rest {
        write_combined_csv(&dir.join(format!("{}.csv", c.name())), std::slice::from_ref(c))?;
    }
    if !h.is_empty() {
        write_combined_csv(&dir.join("h.csv"), &h)?;
        write_grid(&dir.join("grid.csv"), grid, exposures)?;
    }
    write_diagnostics_csv(&dir.join("diagnostics.csv"), combined)?;
    Ok(())
}

/// `summary/`: parameter table, inclusion probabilities (ARD) and surfaces.
pub fn write_summary_dir(dir: &Path, combined: &[CombinedPosterior], grid: &ReferenceGrid, q: usize, ard: bool) -> Result<()> {
    create_dir(dir)?;
    let params: Vec<_> = combined
        .iter()
        .filter(|c| c.measure.dim() == 1 && !matches!(c.functional, Functional::H(_) | Functional::Eta(_)))
        .map(summarize)
        .collect();
    write_parameters_csv(&dir.join("parameters.csv"), &params)?;
    if ard {
        let pip = inclusion_probabilities(combined, q)?;
        let text: String = std::iter::once("exposure,pip\n".to_string())
            .chain(pip.iter().enumerate().map(|(j, v)| format!("z{},{}\n", j + 1, fmt_f64(*v))))
            .collect();
        write_text(&dir.join("pip.csv"), &text)?;
    }
    for block in &grid.blocks {
        let surface = surface_from_combined(block, combined)?;
        write_surface_csv(&dir.join(format!("{}.csv", block.request.kind.stem())), &surface)?;
    }
    Ok(())
}

fn write_acceptance(path: &Path, chains: &[ChainOutput]) -> Result<()> {
    let mut text = String::from("subset,n_k,draws,lambda,rho");
    let q = chains.first().map_or(0, |c| c.acceptance.r.len());
    for j in 1..=q {
        text.push_str(&format!(",r_{j}"));
    }
    text.push('\n');
    for (k, c) in chains.iter().enumerate() {
        let a = &c.acceptance;
        text.push_str(&format!(
            "{},{},{},{},{}",
            k + 1,
            c.n_sites,
            c.draws.len(),
            fmt_f64(a.lambda),
            a.rho.map(fmt_f64).unwrap_or_default()
        ));
        for r in &a.r {
            text.push_str(&format!(",{}", fmt_f64(*r)));
        }
        text.push('\n');
    }
    write_text(path, &text)
}

/// Everything `fit` writes apart from the manifest.
pub fn write_fit(dir: &Path, settings: &Settings, prepared: &Prepared, result: &splitgp_core::FitResult) -> Result<()> {
    let ds = &prepared.data;
    create_dir(&dir.join("draws"))?;
    write_text(&dir.join(CONFIG_FILE), &settings.to_text())?;
    write_partition_csv(&result.plan, ds.n(), &dir.join(PARTITION_FILE))?;
    for (k, chain) in result.chains.iter().enumerate() {
        write_draws_csv(chain, &draw_file(dir, k))?;
    }
    let ard = settings.model()?.kernel.is_ard();
    write_combined_dir(&dir.join("combined"), &result.combined, &result.grid, &ds.exposure_names)?;
    let summary = dir.join("summary");
    write_summary_dir(&summary, &result.combined, &result.grid, ds.q(), ard)?;
    write_acceptance(&summary.join("acceptance.csv"), &result.chains)?;
    if let Some(s) = &prepared.exposure_scaling {
        write_scaling(&summary.join("exposure_scaling.csv"), &ds.exposure_names, s)?;
    }
    if let Some(s) = &prepared.confounder_scaling {
        let names: Vec<String> = ds.confounder_names.iter().filter(|n| *n != "intercept").cloned().collect();
        write_scaling(&summary.join("confounder_scaling.csv"), &names, s)?;
    }
    Ok(())
}

/// A finished fit read back from its directory.
pub struct LoadedRun {
    pub settings: Settings,
    pub prepared: Prepared,
    pub plan: PartitionPlan,
    pub chains: Vec<ChainOutput>,
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let settings = Settings::from_file(&dir.join(CONFIG_FILE))
        .with_context(|| format!("{} is not a fit directory", dir.display()))?;
    let prepared = prepare_data(&settings)?;
    let plan = read_partition_csv(&dir.join(PARTITION_FILE))?;
    let chains = (0..plan.k)
        .map(|k| read_draws_csv(&draw_file(dir, k)).map_err(Into::into))
        .collect::<Result<Vec<_>>>()?;
    for (k, c) in chains.iter().enumerate() {
        if c.n_sites != plan.index_sets[k].len() {
            anyhow::bail!(splitgp_core::Error::ConfigMismatch(format!(
                "draw file for subset {} has {} sites, partition has {}",
                k + 1,
                c.n_sites,
                plan.index_sets[k].len()
            )));
        }
    }
    Ok(LoadedRun {
        settings,
        prepared,
        plan,
        chains,
    })
}

impl LoadedRun {
    /// Subset posteriors carried to the grid of `opts` and combined.
    pub fn combine(&self, opts: &FitOptions) -> Result<(ReferenceGrid, Vec<SubsetPosterior>, Vec<CombinedPosterior>)> {
        let ds = &self.prepared.data;
        let grid = reference_grid(ds, opts)?;
        let subsets = subset_posteriors(ds, &self.plan, &self.chains, &grid, opts)?;
        let mut plan = default_plan(ds.p(), ds.q(), opts.model.kernel.is_ard(), grid.len());
        plan.extend(opts.joint.iter().cloned());
        let combined = combine(&subsets, &plan, &opts.combine)?;
        Ok((grid, subsets, combined))
    }
}

pub fn describe_combine(m: &mut Manifest, c: &CombineOptions) {
    m.push("method", c.method);
    m.push("epsilon", c.sinkhorn.epsilon.map(fmt_f64).unwrap_or_default());
    m.push("epsilon_scale", fmt_f64(c.sinkhorn.epsilon_scale));
}
