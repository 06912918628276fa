use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use splitgp_core::data::fmt_f64;
use splitgp_core::simulation::{
    data_seed, fit_seed, run_experiment, write_results_csv, write_seed_table, CellStatus, ExperimentConfig,
};
use splitgp_core::summary::{surface_from_combined, write_surface_csv, SurfaceKind};
use splitgp_core::pipeline::fit as run_fit;

use crate::config::{exposure_index, split_list, Settings, UsageError};
use crate::run::{self, describe_combine, Manifest, CONFIG_FILE};
use crate::{CombineArgs, FitArgs, ModelFlags, SimulateArgs, SurfaceArgs};

fn apply_model_flags(settings: &mut Settings, flags: &ModelFlags) -> Result<()> {
    for kv in &flags.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| UsageError(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        settings.set(k.trim(), v.trim())?;
    }
    if let Some(v) = flags.seed {
        settings.set("seed", &v.to_string())?;
    }
    if let Some(v) = flags.iters {
        settings.set("iters", &v.to_string())?;
    }
    if let Some(v) = flags.burnin {
        settings.set("burnin", &v.to_string())?;
    }
    if let Some(v) = flags.thin {
        settings.set("thin", &v.to_string())?;
    }
    if let Some(v) = &flags.kernel {
        settings.set("kernel", v)?;
    }
    if let Some(v) = &flags.method {
        settings.set("method", v)?;
    }
    if let Some(v) = flags.epsilon {
        settings.set("epsilon", &fmt_f64(v))?;
    }
    Ok(())
}

fn base_settings(config: Option<&Path>) -> Result<Settings> {
    match config {
        Some(path) => Settings::from_file(path),
        None => Ok(Settings::default()),
    }
}

pub fn fit(args: FitArgs) -> Result<()> {
    let mut settings = base_settings(args.model.config.as_deref())?;
    if let Some(d) = &args.data {
        settings.set("data", &d.display().to_string())?;
    }
    if let Some(t) = args.splits_exponent {
        settings.set("splits_exponent", &fmt_f64(t))?;
    }
    apply_model_flags(&mut settings, &args.model)?;
    // Later commands reopen the data from the saved config.
    if let Some(path) = settings.data_path() {
        let abs = fs::canonicalize(&path).map_err(|e| splitgp_core::Error::Io { path, source: e })?;
        settings.set("data", &abs.display().to_string())?;
    }
    let schema = settings.schema()?;
    let opts = settings.fit_options(&schema.exposures)?;

    let prepared = run::prepare_data(&settings)?;
    let ds = &prepared.data;
    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;

    let mut manifest = Manifest::new("fit");
    manifest.push("seed", opts.seed);
    manifest.push("n", ds.n());
    manifest.push("p", ds.p());
    manifest.push("q", ds.q());
    manifest.push("dropped_rows", prepared.dropped);
    manifest.push("splits_exponent", fmt_f64(opts.splits_exponent));
    manifest.push("iters", opts.model.iters);
    manifest.push("burnin", opts.model.burnin);
    manifest.push("thin", opts.model.thin);
    describe_combine(&mut manifest, &opts.combine);

    let start = Instant::now();
    let result = match run_fit(ds, &opts) {
        Ok(r) => r,
        Err(e) => {
            manifest.push("status", "failed");
            manifest.push("error", &e);
            manifest.write(&args.out)?;
            return Err(e.into());
        }
    };
    manifest.push("subsets", result.plan.k);
    let sizes: Vec<String> = result.plan.index_sets.iter().map(|s| s.len().to_string()).collect();
    manifest.push("subset_sizes", sizes.join(","));
    manifest.push("retained_draws", opts.model.retained());
    if let Err(e) = run::write_fit(&args.out, &settings, &prepared, &result) {
        manifest.push("status", "partial");
        manifest.push("error", format!("{e:#}"));
        manifest.write(&args.out)?;
        return Err(e);
    }
    manifest.push("status", "complete");
    manifest.push("seconds_sampling", fmt_f64(result.timings.sampling.as_secs_f64()));
    manifest.push("seconds_prediction", fmt_f64(result.timings.prediction.as_secs_f64()));
    manifest.push("seconds_combining", fmt_f64(result.timings.combining.as_secs_f64()));
    manifest.push("seconds_total", fmt_f64(start.elapsed().as_secs_f64()));
    manifest.write(&args.out)?;
    eprintln!(
        "fit: n={} K={} draws/subset={} -> {}",
        ds.n(),
        result.plan.k,
        opts.model.retained(),
        args.out.display()
    );
    Ok(())
}

fn parse_list<T: std::str::FromStr>(flag: &str, raw: &str) -> Result<Vec<T>, UsageError> {
    split_list(raw)
        .iter()
        .map(|v| v.parse().map_err(|_| UsageError(format!("{flag}: cannot parse {v:?}"))))
        .collect()
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let mut settings = base_settings(args.model.config.as_deref())?;
    let mut reps = 10;
    if args.paper_scale {
        reps = 300;
        settings.set("iters", "10000")?;
        settings.set("burnin", "5000")?;
        settings.set("thin", "5")?;
    }
    apply_model_flags(&mut settings, &args.model)?;
    if let Some(r) = args.reps {
        reps = r;
    }
    let cfg = ExperimentConfig {
        n_list: parse_list("--n-list", &args.n_list)?,
        t_list: parse_list("--t-list", &args.t_list)?,
        replications: reps,
        seed: settings.get("seed").parse().map_err(|_| UsageError("seed: not an integer".into()))?,
        q: args.q,
        confounder_sd_mode: args.confounder_sd,
        model: settings.model()?,
        combine: settings.combine()?,
        min_subset_size: settings
            .get("min_subset_size")
            .parse()
            .map_err(|_| UsageError("min_subset_size: not an integer".into()))?,
        ..ExperimentConfig::default()
    };
    cfg.validate()?;

    let mut manifest = Manifest::new("simulate");
    manifest.push("seed", cfg.seed);
    manifest.push("n_list", args.n_list.as_str());
    manifest.push("t_list", args.t_list.as_str());
    manifest.push("reps", cfg.replications);
    manifest.push("iters", cfg.model.iters);
    manifest.push("burnin", cfg.model.burnin);
    manifest.push("thin", cfg.model.thin);
    manifest.push("kernel", settings.get("kernel"));
    manifest.push("paper_scale", args.paper_scale);
    manifest.push("q", cfg.q);
    manifest.push("confounder_sd_mode", cfg.confounder_sd_mode);
    describe_combine(&mut manifest, &cfg.combine);

    if let Some(out) = &args.out {
        fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
        fs::write(out.join(CONFIG_FILE), settings.to_text())?;
        write_seed_table(&out.join("seeds.csv"), &cfg)?;
    }
    if args.dry_run {
        println!("n,t,rep,data_seed,fit_seed");
        for (n, ti, t, rep) in cfg.cells() {
            let (ds, fs) = (data_seed(cfg.seed, n, rep), fit_seed(cfg.seed, n, ti, rep));
            println!("{n},{},{},{ds},{fs}", fmt_f64(t), rep + 1);
        }
        if let Some(out) = &args.out {
            manifest.push("status", "dry-run");
            manifest.write(out)?;
        }
        return Ok(());
    }
    let out = args.out.as_deref().expect("required unless --dry-run");

    let start = Instant::now();
    let rows = run_experiment(&cfg, |r| {
        let status = match &r.status {
            CellStatus::Ok => format!("r2={:.4} beta={:.4} {:.1}s", r.r2, r.beta_hat, r.seconds),
            CellStatus::Skipped(why) => format!("skipped: {why}"),
            CellStatus::Failed(why) => format!("failed: {why}"),
        };
        eprintln!("n={} t={} rep={} K={} {status}", r.n, r.t, r.rep + 1, r.k);
    })?;
    write_results_csv(&out.join("results.csv"), &rows)?;
    let failed = rows.iter().filter(|r| matches!(r.status, CellStatus::Failed(_))).count();
    manifest.push("status", "complete");
    manifest.push("cells", rows.len());
    manifest.push("failed_cells", failed);
    manifest.push("seconds_total", fmt_f64(start.elapsed().as_secs_f64()));
    manifest.write(out)?;
    Ok(())
}

pub fn combine(args: CombineArgs) -> Result<()> {
    let mut loaded = run::load_run(&args.run)?;
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| UsageError(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        if !is_combine_key(k.trim()) {
            return Err(UsageError(format!("{k} cannot be changed when re-combining")).into());
        }
        loaded.settings.set(k.trim(), v.trim())?;
    }
    if let Some(m) = &args.method {
        loaded.settings.set("method", m)?;
    }
    if let Some(e) = args.epsilon {
        loaded.settings.set("epsilon", &fmt_f64(e))?;
    }
    let ds = &loaded.prepared.data;
    let opts = loaded.settings.fit_options(&ds.exposure_names)?;
    let (grid, _, combined) = loaded.combine(&opts)?;

    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    run::write_combined_dir(&args.out.join("combined"), &combined, &grid, &ds.exposure_names)?;
    run::write_summary_dir(&args.out.join("summary"), &combined, &grid, ds.q(), opts.model.kernel.is_ard())?;
    fs::write(args.out.join(CONFIG_FILE), loaded.settings.to_text())?;
    let mut manifest = Manifest::new("combine");
    manifest.push("run", args.run.display());
    manifest.push("subsets", loaded.plan.k);
    describe_combine(&mut manifest, &opts.combine);
    manifest.push("status", "complete");
    manifest.write(&args.out)?;
    Ok(())
}

fn is_combine_key(k: &str) -> bool {
    matches!(
        k,
        "method"
            | "epsilon"
            | "epsilon_scale"
            | "sinkhorn_max_iters"
            | "median_max_iters"
            | "surfaces"
            | "grid"
            | "fix"
            | "coverage"
            | "joint"
            | "predictive_noise"
    )
}

pub fn surface(args: SurfaceArgs) -> Result<()> {
    let mut loaded = run::load_run(&args.run)?;
    let names = loaded.prepared.data.exposure_names.clone();
    let tokens = split_list(&args.exposures);
    let kind = match (args.kind.as_str(), tokens.as_slice()) {
        ("uni", [a]) => SurfaceKind::Univariate {
            j: exposure_index(a, &names)?,
        },
        ("bi", [a, b]) => SurfaceKind::Bivariate {
            i: exposure_index(a, &names)?,
            j: exposure_index(b, &names)?,
        },
        ("uni" | "bi", _) => {
            return Err(UsageError(format!("--type {} needs {} exposure(s)", args.kind, if args.kind == "uni" { 1 } else { 2 })).into())
        }
        (other, _) => return Err(UsageError(format!("--type must be uni or bi, got {other:?}")).into()),
    };
    let s = &mut loaded.settings;
    let spec = match &kind {
        SurfaceKind::Univariate { j } => (j + 1).to_string(),
        SurfaceKind::Bivariate { i, j } => format!("{}:{}", i + 1, j + 1),
    };
    s.set("surfaces", &spec)?;
    s.set("joint", "")?;
    if let Some(g) = args.grid {
        s.set("grid", &g.to_string())?;
    }
    if let Some(f) = args.fix {
        s.set("fix", &fmt_f64(f))?;
    }
    if let Some(c) = args.coverage {
        s.set("coverage", &fmt_f64(c))?;
    }
    if let Some(m) = &args.method {
        s.set("method", m)?;
    }
    let opts = loaded.settings.fit_options(&names)?;
    let (grid, _, combined) = loaded.combine(&opts)?;
    let block = &grid.blocks[0];
    let surface = surface_from_combined(block, &combined)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
    }
    write_surface_csv(&args.out, &surface)?;
    Ok(())
}
