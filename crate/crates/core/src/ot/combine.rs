//! Merging subset posteriors functional by functional.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use super::measure::AtomicMeasure;
use super::median::{geometric_median_w2, MedianOptions};
use super::quantile::{barycenter_1d, w2_sq_1d, QuantileFn};
use super::sinkhorn::{barycenter_sinkhorn, pooled_support, SinkhornOptions};
use crate::data::{fmt_f64, KernelDraw, PosteriorDraw};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CombineMethod {
    /// W2 barycenter; closed form for scalar functionals, Sinkhorn for joint ones.
    #[default]
    Barycenter,
    /// Entropic barycenter on the pooled atoms for every functional.
    Sinkhorn,
    /// W2 geometric median.
    Median,
}

impl fmt::Display for CombineMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CombineMethod::Barycenter => "barycenter",
            CombineMethod::Sinkhorn => "sinkhorn",
            CombineMethod::Median => "median",
        })
    }
}

impl FromStr for CombineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "barycenter" | "mean" => Ok(CombineMethod::Barycenter),
            "sinkhorn" => Ok(CombineMethod::Sinkhorn),
            "median" => Ok(CombineMethod::Median),
            other => Err(Error::Config(format!("unknown combine method {other:?}"))),
        }
    }
}

/// A scalar (or joint vector) summary of a posterior draw. Indices are 0-based;
/// names are 1-based (`beta_1` is `Beta(0)`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Functional {
    Beta(usize),
    Sigma2,
    Lambda,
    Rho,
    R(usize),
    Eta(usize),
    /// h at reference-grid point `g`.
    H(usize),
    Joint(Vec<Functional>),
}

impl fmt::Display for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Functional::Beta(j) => write!(f, "beta_{}", j + 1),
            Functional::Sigma2 => f.write_str("sigma2"),
            Functional::Lambda => f.write_str("lambda"),
            Functional::Rho => f.write_str("rho"),
            Functional::R(j) => write!(f, "r_{}", j + 1),
            Functional::Eta(j) => write!(f, "eta_{}", j + 1),
            Functional::H(g) => write!(f, "h_{}", g + 1),
            Functional::Joint(parts) => {
                let names: Vec<String> = parts.iter().map(ToString::to_string).collect();
                write!(f, "{}", names.join("+"))
            }
        }
    }
}

impl FromStr for Functional {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.contains('+') {
            let parts = s.split('+').map(str::parse).collect::<Result<Vec<Functional>>>()?;
            return Ok(Functional::Joint(parts));
        }
        let bad = || Error::Config(format!("unknown functional {s:?}"));
        let indexed = |rest: &str| -> Result<usize> {
            rest.parse::<usize>().ok().and_then(|i| i.checked_sub(1)).ok_or_else(bad)
        };
        match s {
            "sigma2" => Ok(Functional::Sigma2),
            "lambda" => Ok(Functional::Lambda),
            "rho" => Ok(Functional::Rho),
            _ => {
                let (head, rest) = s.rsplit_once('_').ok_or_else(bad)?;
                let i = indexed(rest)?;
                match head {
                    "beta" => Ok(Functional::Beta(i)),
                    "r" => Ok(Functional::R(i)),
                    "eta" => Ok(Functional::Eta(i)),
                    "h" => Ok(Functional::H(i)),
                    _ => Err(bad()),
                }
            }
        }
    }
}

impl Functional {
    pub fn dim(&self) -> usize {
        match self {
            Functional::Joint(parts) => parts.len(),
            _ => 1,
        }
    }

    /// Value for one draw; `h_grid` holds that draw's h at the reference grid.
    pub fn value(&self, draw: &PosteriorDraw, h_grid: &[f64]) -> Option<f64> {
        match (self, &draw.kernel) {
            (Functional::Beta(j), _) => draw.beta.get(*j).copied(),
            (Functional::Sigma2, _) => Some(draw.sigma2),
            (Functional::Lambda, _) => Some(draw.lambda),
            (Functional::Rho, KernelDraw::Isotropic { rho }) => Some(*rho),
            (Functional::R(j), KernelDraw::Ard { r, .. }) => r.get(*j).copied(),
            (Functional::Eta(j), KernelDraw::Ard { eta, .. }) => eta.get(*j).map(|&e| f64::from(u8::from(e))),
            (Functional::H(g), _) => h_grid.get(*g).copied(),
            _ => None,
        }
    }
}

/// Default functionals: every β_j, σ², λ, the kernel parameters and h at each
/// of `grid_len` reference points.
pub fn default_plan(p: usize, q: usize, ard: bool, grid_len: usize) -> Vec<Functional> {
    let mut plan: Vec<Functional> = (0..p).map(Functional::Beta).collect();
    plan.push(Functional::Sigma2);
    plan.push(Functional::Lambda);
    if ard {
        plan.extend((0..q).map(Functional::R));
        plan.extend((0..q).map(Functional::Eta));
    } else {
        plan.push(Functional::Rho);
    }
    plan.extend((0..grid_len).map(Functional::H));
    plan
}

/// Retained draws of one subset together with their h values on the shared
/// reference grid.
#[derive(Debug, Clone)]
pub struct SubsetPosterior {
    pub subset: Option<usize>,
    pub draws: Vec<PosteriorDraw>,
    /// Per draw, h at the reference grid; empty when no grid is used.
    pub h_grid: Vec<Vec<f64>>,
    /// Reference grid, row-major; must be identical across subsets.
    pub grid: Vec<f64>,
    /// Fingerprint of the model configuration; must be identical across subsets.
    pub config_tag: String,
}

impl SubsetPosterior {
    fn values(&self, f: &Functional) -> Result<Vec<f64>> {
        let parts: Vec<&Functional> = match f {
            Functional::Joint(parts) => parts.iter().collect(),
            single => vec![single],
        };
        let mut out = Vec::with_capacity(self.draws.len() * parts.len());
        for (i, d) in self.draws.iter().enumerate() {
            let h = self.h_grid.get(i).map_or(&[][..], Vec::as_slice);
            for part in &parts {
                out.push(part.value(d, h).ok_or_else(|| {
                    Error::ConfigMismatch(format!("functional {part} is not available in these draws"))
                })?);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombineOptions {
    pub method: CombineMethod,
    pub sinkhorn: SinkhornOptions,
    pub median: MedianOptions,
}

impl Default for CombineOptions {
    fn default() -> Self {
        Self {
            method: CombineMethod::Barycenter,
            sinkhorn: SinkhornOptions::default(),
            median: MedianOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CombineDiagnostics {
    pub method: CombineMethod,
    pub iterations: usize,
    pub converged: bool,
    /// Final solver objective: `Σ_k W2²/K` for barycenters, `Σ_k W2` for the median.
    pub objective: Option<f64>,
    pub epsilon: Option<f64>,
}

/// Combined posterior of one functional: weighted atoms plus solver metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedPosterior {
    pub functional: Functional,
    pub measure: AtomicMeasure,
    pub diagnostics: CombineDiagnostics,
}

impl CombinedPosterior {
    pub fn name(&self) -> String {
        self.functional.to_string()
    }

    pub fn mean(&self) -> Vec<f64> {
        self.measure.mean()
    }

    /// Weighted quantile of a scalar functional.
    pub fn quantile(&self, u: f64) -> f64 {
        QuantileFn::new(&self.measure).eval(u)
    }
}

fn check_consistent(subsets: &[SubsetPosterior]) -> Result<()> {
    let first = subsets
        .first()
        .ok_or_else(|| Error::InvalidData("nothing to combine".into()))?;
    for s in subsets {
        if s.draws.is_empty() {
            return Err(Error::InvalidData(format!("subset {:?} has no retained draws", s.subset)));
        }
        if s.config_tag != first.config_tag {
            return Err(Error::ConfigMismatch(format!(
                "subset {:?} was fitted with a different configuration",
                s.subset
            )));
        }
        if s.grid != first.grid {
            return Err(Error::ConfigMismatch(format!(
                "subset {:?} uses a different reference grid",
                s.subset
            )));
        }
        if !s.h_grid.is_empty() && s.h_grid.len() != s.draws.len() {
            return Err(Error::InvalidData(format!("subset {:?}: one grid row per draw required", s.subset)));
        }
        let d0 = &first.draws[0];
        let same_shape = s.draws.iter().all(|d| {
            d.beta.len() == d0.beta.len() && std::mem::discriminant(&d.kernel) == std::mem::discriminant(&d0.kernel)
        });
        if !same_shape {
            return Err(Error::ConfigMismatch(format!(
                "subset {:?} draws differ in shape from subset {:?}",
                s.subset, first.subset
            )));
        }
    }
    Ok(())
}

/// Combine one functional across subset measures.
pub fn combine_measures(functional: Functional, measures: &[AtomicMeasure], opts: &CombineOptions) -> Result<CombinedPosterior> {
    let k = measures.len();
    let scalar = functional.dim() == 1;
    let (measure, diagnostics) = match (opts.method, scalar) {
        (CombineMethod::Barycenter, true) => {
            let samples: Vec<&[f64]> = measures.iter().map(AtomicMeasure::points).collect();
            let bary = barycenter_1d(&samples)?;
            let objective = measures.iter().map(|m| w2_sq_1d(&bary, m)).sum::<f64>() / k as f64;
            (
                bary,
                CombineDiagnostics {
                    method: opts.method,
                    iterations: 0,
                    converged: true,
                    objective: Some(objective),
                    epsilon: None,
                },
            )
        }
        (CombineMethod::Barycenter | CombineMethod::Sinkhorn, _) => {
            let support = pooled_support(measures);
            let (bary, diag) = barycenter_sinkhorn(measures, None, &support, &opts.sinkhorn)?;
            let objective = if scalar {
                Some(measures.iter().map(|m| w2_sq_1d(&bary, m)).sum::<f64>() / k as f64)
            } else {
                None
            };
            (
                bary,
                CombineDiagnostics {
                    method: CombineMethod::Sinkhorn,
                    iterations: diag.iterations,
                    converged: diag.converged,
                    objective,
                    epsilon: Some(diag.epsilon),
                },
            )
        }
        (CombineMethod::Median, _) => {
            let (med, diag) = geometric_median_w2(measures, &opts.median)?;
            (
                med,
                CombineDiagnostics {
                    method: opts.method,
                    iterations: diag.iterations,
                    converged: diag.converged,
                    objective: Some(diag.objective),
                    epsilon: None,
                },
            )
        }
    };
    Ok(CombinedPosterior {
        functional,
        measure,
        diagnostics,
    })
}

/// Combine every functional of `plan` across the subset posteriors.
pub fn combine(subsets: &[SubsetPosterior], plan: &[Functional], opts: &CombineOptions) -> Result<Vec<CombinedPosterior>> {
    check_consistent(subsets)?;
    plan.par_iter()
        .map(|f| {
            let measures = subsets
                .iter()
                .map(|s| AtomicMeasure::uniform(s.values(f)?, f.dim()))
                .collect::<Result<Vec<_>>>()?;
            combine_measures(f.clone(), &measures, opts)
        })
        .collect()
}

/// Write combined posteriors (all of one dimension) as
/// `functional,value[_1..d],weight` rows.
pub fn write_combined_csv(path: &Path, combined: &[CombinedPosterior]) -> Result<()> {
    let dim = combined.first().map_or(1, |c| c.measure.dim());
    if combined.iter().any(|c| c.measure.dim() != dim) {
        return Err(Error::InvalidData("combined file mixes dimensions".into()));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header = vec!["functional".to_string()];
    if dim == 1 {
        header.push("value".into());
    } else {
        header.extend((1..=dim).map(|j| format!("value_{j}")));
    }
    header.push("weight".into());
    w.write_record(&header)?;
    for c in combined {
        let name = c.name();
        for i in 0..c.measure.len() {
            let mut row = vec![name.clone()];
            row.extend(c.measure.atom(i).iter().map(|&v| fmt_f64(v)));
            row.push(fmt_f64(c.measure.weights()[i]));
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a file written by [`write_combined_csv`]; functionals come back in
/// file order with empty diagnostics.
pub fn read_combined_csv(path: &Path) -> Result<Vec<CombinedPosterior>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        },
        _ => Error::Csv(e),
    })?;
    let width = r.headers()?.len();
    if width < 3 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: "expected functional, value and weight columns".into(),
        });
    }
    let dim = width - 2;
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse().map_err(|_| Error::Format {
                path: path.to_path_buf(),
                msg: format!("bad number {s:?}"),
            })
        };
        let name = rec[0].to_string();
        let entry = groups.entry(name.clone()).or_insert_with(|| {
            order.push(name);
            (Vec::new(), Vec::new())
        });
        for j in 0..dim {
            entry.0.push(parse(&rec[1 + j])?);
        }
        entry.1.push(parse(&rec[1 + dim])?);
    }
    order
        .into_iter()
        .map(|name| {
            let (points, weights) = groups.remove(&name).expect("grouped above");
            Ok(CombinedPosterior {
                functional: name.parse()?,
                measure: AtomicMeasure::new(points, dim, weights)?,
                diagnostics: CombineDiagnostics::default(),
            })
        })
        .collect()
}

/// Solver metadata, one row per functional.
pub fn write_diagnostics_csv(path: &Path, combined: &[CombinedPosterior]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "functional,method,atoms,iterations,converged,objective,epsilon").map_err(io)?;
    for c in combined {
        let d = &c.diagnostics;
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            c.name(),
            d.method,
            c.measure.len(),
            d.iterations,
            d.converged,
            d.objective.map(fmt_f64).unwrap_or_default(),
            d.epsilon.map(fmt_f64).unwrap_or_default()
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn functional_names_round_trip() {
        for f in [
            Functional::Beta(0),
            Functional::Sigma2,
            Functional::Lambda,
            Functional::Rho,
            Functional::R(3),
            Functional::Eta(1),
            Functional::H(20),
            Functional::Joint(vec![Functional::Beta(0), Functional::Beta(1)]),
        ] {
            assert_eq!(f.to_string().parse::<Functional>().unwrap(), f);
        }
        assert!("beta_0".parse::<Functional>().is_err());
        assert!("gamma".parse::<Functional>().is_err());
    }

    #[test]
    fn method_names() {
        for m in [CombineMethod::Barycenter, CombineMethod::Sinkhorn, CombineMethod::Median] {
            assert_eq!(m.to_string().parse::<CombineMethod>().unwrap(), m);
        }
    }
}
