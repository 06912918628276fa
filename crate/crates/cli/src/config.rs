//! Flat `key = value` configuration. Lists are comma-separated, `#` starts a
//! comment. Every key has a default; the effective settings are written back
//! out with each run so later commands can rebuild the same model.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use splitgp_core::data::fmt_f64;
use splitgp_core::kernel::DEFAULT_JITTER;
use splitgp_core::ot::{MedianOptions, SinkhornOptions};
use splitgp_core::summary::{SurfaceKind, SurfaceRequest, DEFAULT_COVERAGE, DEFAULT_GRID_POINTS};
use splitgp_core::{
    CombineMethod, CombineOptions, FitOptions, Functional, GammaPrior, KernelMode, MissingPolicy, ModelConfig,
    PartitionMode, RhoExponent, Schema,
};

/// Bad configuration or flags; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(msg: impl Into<String>) -> Result<T, UsageError> {
    Err(UsageError(msg.into()))
}

/// Every recognized key with its default and a one-line description.
pub fn defaults() -> Vec<(&'static str, String, &'static str)> {
    let m = ModelConfig::default();
    let s = SinkhornOptions::default();
    let med = MedianOptions::default();
    let f = fmt_f64;
    vec![
        ("data", String::new(), "input CSV with a header row"),
        ("outcome", "y".into(), "outcome column"),
        ("confounders", String::new(), "confounder columns (linear part)"),
        ("exposures", String::new(), "exposure columns (kernel part), required"),
        ("missing", "error".into(), "rows with missing values: error | drop"),
        ("intercept", "false".into(), "add a column of ones to the confounders"),
        ("standardize_exposures", "true".into(), "center and scale exposures to unit SD"),
        ("standardize_confounders", "false".into(), "center and scale confounders to unit SD"),
        ("kernel", "isotropic".into(), "isotropic | ard"),
        ("rho_exponent", "2q".into(), "isotropic bandwidth power: 2q or a positive number"),
        ("lambda_shape", f(m.lambda_prior.shape), "Gamma prior on lambda"),
        ("lambda_rate", f(m.lambda_prior.rate), ""),
        ("sigma_shape", f(m.sigma_prior.shape), "Gamma prior on the error precision"),
        ("sigma_rate", f(m.sigma_prior.rate), ""),
        ("rho_shape", f(m.rho_prior.shape), "Gamma prior on rho (isotropic)"),
        ("rho_rate", f(m.rho_prior.rate), ""),
        ("pi", f(m.inclusion_prob[0]), "prior inclusion probability, one value or one per exposure (ard)"),
        ("slab_shape", f(m.slab.shape), "Gamma slab for r_j (ard)"),
        ("slab_rate", f(m.slab.rate), ""),
        ("temper", m.temper.to_string(), "scale subset likelihoods by the number of subsets"),
        ("sigma2_literal_gamma", m.sigma2_literal_gamma.to_string(), "draw sigma2 itself from the Gamma conditional"),
        ("iters", m.iters.to_string(), "MCMC iterations per chain"),
        ("burnin", m.burnin.to_string(), "discarded iterations"),
        ("thin", m.thin.to_string(), "keep every thin-th draw after burn-in"),
        ("jitter", f(DEFAULT_JITTER), "diagonal added to Gram matrices"),
        ("initial_step", f(m.initial_step), "initial log random-walk step"),
        ("target_acceptance", f(m.target_acceptance), "burn-in step adaptation target"),
        ("splits_exponent", "0.0".into(), "number of subsets K = round(n^t)"),
        ("min_subset_size", splitgp_core::partition::MIN_SUBSET_SIZE.to_string(), "smallest allowed subset"),
        ("partition", "disjoint".into(), "disjoint | resampled"),
        ("seed", "0".into(), "master seed"),
        ("method", CombineMethod::default().to_string(), "barycenter | sinkhorn | median"),
        ("epsilon", String::new(), "absolute Sinkhorn regularization (empty: scaled default)"),
        ("epsilon_scale", f(s.epsilon_scale), "Sinkhorn epsilon as a fraction of the median cost"),
        ("sinkhorn_max_iters", s.max_iters.to_string(), ""),
        ("median_max_iters", med.max_iters.to_string(), ""),
        ("surfaces", "all".into(), "all | none | list of j or i:j (1-based or names)"),
        ("grid", DEFAULT_GRID_POINTS.to_string(), "grid points per surface axis"),
        ("fix", "0.5".into(), "quantile at which other exposures are held"),
        ("coverage", f(DEFAULT_COVERAGE), "central fraction of each exposure spanned by the grid"),
        ("joint", String::new(), "joint functionals such as beta_1+beta_2"),
        ("predictive_noise", "false".into(), "draw h at grid points instead of using its conditional mean"),
    ]
}

/// Raw settings after merging defaults, a config file and flag overrides.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            values: defaults().into_iter().map(|(k, v, _)| (k.to_string(), v)).collect(),
        }
    }
}

impl Settings {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let mut s = Self::default();
        s.apply_text(&text)?;
        Ok(s)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), UsageError> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return usage(format!("config line {}: expected key = value", no + 1));
            };
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), UsageError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => usage(format!("unknown config key {key:?}")),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    /// `key = value` lines in key order.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, UsageError> {
        let raw = self.get(key);
        raw.parse()
            .or_else(|_| usage(format!("{key}: cannot parse {raw:?}")))
    }

    fn flag(&self, key: &str) -> Result<bool, UsageError> {
        match self.get(key).to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            other => usage(format!("{key}: expected true or false, got {other:?}")),
        }
    }

    fn list(&self, key: &str) -> Vec<String> {
        split_list(self.get(key))
    }

    fn f64_list(&self, key: &str) -> Result<Vec<f64>, UsageError> {
        self.list(key)
            .iter()
            .map(|v| v.parse().or_else(|_| usage(format!("{key}: cannot parse {v:?}"))))
            .collect()
    }

    fn gamma(&self, name: &str) -> Result<GammaPrior, UsageError> {
        Ok(GammaPrior::new(
            self.parse(&format!("{name}_shape"))?,
            self.parse(&format!("{name}_rate"))?,
        ))
    }

    pub fn data_path(&self) -> Option<PathBuf> {
        let d = self.get("data");
        (!d.is_empty()).then(|| PathBuf::from(d))
    }

    pub fn schema(&self) -> Result<Schema, UsageError> {
        let exposures = self.list("exposures");
        if exposures.is_empty() {
            return usage("no exposure columns configured (key `exposures`)");
        }
        Ok(Schema {
            outcome: self.get("outcome").to_string(),
            confounders: self.list("confounders"),
            exposures,
        })
    }

    pub fn missing(&self) -> Result<MissingPolicy, UsageError> {
        match self.get("missing") {
            "error" => Ok(MissingPolicy::Error),
            "drop" => Ok(MissingPolicy::Drop),
            other => usage(format!("missing: expected error or drop, got {other:?}")),
        }
    }

    pub fn intercept(&self) -> Result<bool, UsageError> {
        self.flag("intercept")
    }

    pub fn standardize_exposures(&self) -> Result<bool, UsageError> {
        self.flag("standardize_exposures")
    }

    pub fn standardize_confounders(&self) -> Result<bool, UsageError> {
        self.flag("standardize_confounders")
    }

    pub fn model(&self) -> Result<ModelConfig, UsageError> {
        let kernel = match self.get("kernel") {
            "isotropic" => KernelMode::Isotropic {
                exponent: match self.get("rho_exponent") {
                    "2q" => RhoExponent::TwoQ,
                    _ => RhoExponent::Power(self.parse("rho_exponent")?),
                },
            },
            "ard" => KernelMode::Ard,
            other => return usage(format!("kernel: expected isotropic or ard, got {other:?}")),
        };
        let model = ModelConfig {
            kernel,
            lambda_prior: self.gamma("lambda")?,
            sigma_prior: self.gamma("sigma")?,
            rho_prior: self.gamma("rho")?,
            inclusion_prob: self.f64_list("pi")?,
            slab: self.gamma("slab")?,
            temper: self.flag("temper")?,
            iters: self.parse("iters")?,
            burnin: self.parse("burnin")?,
            thin: self.parse("thin")?,
            sigma2_literal_gamma: self.flag("sigma2_literal_gamma")?,
            jitter: self.parse("jitter")?,
            initial_step: self.parse("initial_step")?,
            target_acceptance: self.parse("target_acceptance")?,
            ..ModelConfig::default()
        };
        model.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(model)
    }

    pub fn combine(&self) -> Result<CombineOptions, UsageError> {
        let method: CombineMethod = self.get("method").parse().map_err(|e: splitgp_core::Error| UsageError(e.to_string()))?;
        let epsilon = match self.get("epsilon") {
            "" => None,
            _ => {
                let e: f64 = self.parse("epsilon")?;
                if !(e > 0.0) {
                    return usage("epsilon must be positive");
                }
                Some(e)
            }
        };
        let sinkhorn = SinkhornOptions {
            epsilon,
            epsilon_scale: self.parse("epsilon_scale")?,
            max_iters: self.parse("sinkhorn_max_iters")?,
            ..SinkhornOptions::default()
        };
        if !(sinkhorn.epsilon_scale > 0.0) {
            return usage("epsilon_scale must be positive");
        }
        Ok(CombineOptions {
            method,
            sinkhorn: sinkhorn.clone(),
            median: MedianOptions {
                max_iters: self.parse("median_max_iters")?,
                sinkhorn,
                ..MedianOptions::default()
            },
        })
    }

    /// Surface requests; exposure references are 1-based indices or names.
    pub fn surfaces(&self, exposures: &[String]) -> Result<Vec<SurfaceRequest>, UsageError> {
        let grid: usize = self.parse("grid")?;
        let fix: f64 = self.parse("fix")?;
        let coverage: f64 = self.parse("coverage")?;
        if grid == 0 {
            return usage("grid must be at least 1");
        }
        if !(0.0..=1.0).contains(&fix) {
            return usage(format!("fix must lie in [0, 1], got {fix}"));
        }
        if !(coverage > 0.0 && coverage <= 1.0) {
            return usage(format!("coverage must lie in (0, 1], got {coverage}"));
        }
        let finish = |kind: SurfaceKind| SurfaceRequest {
            kind,
            grid_points: grid,
            fix,
            coverage,
        };
        let entries = self.list("surfaces");
        match entries.as_slice() {
            [one] if one == "none" => return Ok(Vec::new()),
            [one] if one == "all" => {
                return Ok((0..exposures.len()).map(|j| finish(SurfaceKind::Univariate { j })).collect())
            }
            _ => {}
        }
        entries
            .iter()
            .map(|e| match e.split_once(':') {
                Some((a, b)) => {
                    let (i, j) = (exposure_index(a, exposures)?, exposure_index(b, exposures)?);
                    if i == j {
                        return usage(format!("surface {e:?} repeats an exposure"));
                    }
                    Ok(finish(SurfaceKind::Bivariate { i, j }))
                }
                None => Ok(finish(SurfaceKind::Univariate {
                    j: exposure_index(e, exposures)?,
                })),
            })
            .collect()
    }

    pub fn joint(&self) -> Result<Vec<Functional>, UsageError> {
        self.list("joint")
            .iter()
            .map(|s| match s.parse::<Functional>() {
                Ok(f @ Functional::Joint(_)) => Ok(f),
                Ok(_) => usage(format!("joint functional {s:?} needs at least two parts joined by +")),
                Err(e) => usage(e.to_string()),
            })
            .collect()
    }

    pub fn fit_options(&self, exposures: &[String]) -> Result<FitOptions, UsageError> {
        let splits_exponent: f64 = self.parse("splits_exponent")?;
        let partition_mode = match self.get("partition") {
            "disjoint" => PartitionMode::Disjoint,
            "resampled" => PartitionMode::WithReplacement,
            other => return usage(format!("partition: expected disjoint or resampled, got {other:?}")),
        };
        Ok(FitOptions {
            model: self.model()?,
            splits_exponent,
            min_subset_size: self.parse("min_subset_size")?,
            partition_mode,
            seed: self.parse("seed")?,
            combine: self.combine()?,
            surfaces: self.surfaces(exposures)?,
            extra_points: None,
            joint: self.joint()?,
            predictive_noise: self.flag("predictive_noise")?,
        })
    }
}

pub fn split_list(raw: &str) -> Vec<String> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// 0-based index of an exposure given by 1-based position or name.
pub fn exposure_index(token: &str, exposures: &[String]) -> Result<usize, UsageError> {
    let token = token.trim();
    if let Ok(j) = token.parse::<usize>() {
        if (1..=exposures.len()).contains(&j) {
            return Ok(j - 1);
        }
        return usage(format!("exposure index {j} is out of range 1..={}", exposures.len()));
    }
    exposures
        .iter()
        .position(|e| e == token)
        .ok_or_else(|| UsageError(format!("unknown exposure {token:?}")))
}

/// Help text listing every key and its default.
pub fn keys_help() -> String {
    let mut out = String::from("Config keys (key = value, lists comma-separated):\n");
    for (k, v, doc) in defaults() {
        let shown = if v.is_empty() { "(empty)".to_string() } else { v };
        out.push_str(&format!("  {k:<24} {shown:<12} {doc}\n"));
    }
    out
}
