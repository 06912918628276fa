use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use splitgp_core::data::write_csv;
use splitgp_core::sampler::{read_draws_csv, write_draws_csv};
use splitgp_core::simulation::{gen_data, SimConfig};

fn splitgp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splitgp"))
        .args(args)
        .env_remove("SPLITGP_JOBS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = splitgp(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_data(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let (ds, _) = gen_data(&SimConfig { n, ..SimConfig::default() }, seed).unwrap();
    let path = dir.join("data.csv");
    write_csv(&ds, &path).unwrap();
    path
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("model.cfg");
    let text = format!(
        "# small model for tests\noutcome = y\nconfounders = x\nexposures = z1, z2, z3, z4\n\
         iters = 40\nburnin = 20\nthin = 2\nsurfaces = 1, 1:2\ngrid = 5\n{extra}"
    );
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    data: PathBuf,
    config: PathBuf,
}

fn fixture(n: usize, extra: &str) -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let data = write_data(&root, n, 5);
    let config = write_config(&root, extra);
    Fixture {
        _tmp: tmp,
        root,
        data,
        config,
    }
}

fn fit(f: &Fixture, name: &str, extra: &[&str]) -> PathBuf {
    let out = f.root.join(name);
    let mut args = vec!["fit", "--config", s(&f.config), "--data", s(&f.data), "--out", s(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

#[test]
fn fit_writes_the_artifact_layout() {
    let f = fixture(160, "");
    let before = fs::read(&f.data).unwrap();
    let out = fit(&f, "run", &["--splits-exponent", "0.3", "--seed", "7"]);
    for rel in [
        "manifest",
        "config.cfg",
        "partition.csv",
        "draws/subset_1.csv",
        "draws/subset_5.csv",
        "combined/beta_1.csv",
        "combined/sigma2.csv",
        "combined/lambda.csv",
        "combined/rho.csv",
        "combined/h.csv",
        "combined/grid.csv",
        "combined/diagnostics.csv",
        "summary/parameters.csv",
        "summary/acceptance.csv",
        "summary/surface_z1.csv",
        "summary/surface_z1_z2.csv",
    ] {
        assert!(out.join(rel).is_file(), "missing {rel}");
    }
    assert!(!out.join("draws/subset_6.csv").exists());
    let manifest = fs::read_to_string(out.join("manifest")).unwrap();
    assert!(manifest.contains("subsets = 5"), "{manifest}");
    assert!(manifest.contains("status = complete"));
    // surfaces: 5 grid rows for z1, 25 for (z1, z2)
    let uni = fs::read_to_string(out.join("summary/surface_z1.csv")).unwrap();
    assert_eq!(uni.lines().count(), 6);
    assert!(uni.starts_with("z1,mean,lo95,hi95,lo50,hi50"));
    let bi = fs::read_to_string(out.join("summary/surface_z1_z2.csv")).unwrap();
    assert_eq!(bi.lines().count(), 26);
    assert_eq!(fs::read(&f.data).unwrap(), before, "input data modified");
}

#[test]
fn zero_exponent_is_one_full_data_chain() {
    let f = fixture(100, "");
    let out = fit(&f, "run", &["--splits-exponent", "0"]);
    let first = fs::read_to_string(out.join("draws/subset_1.csv")).unwrap();
    assert!(first.starts_with("# subset=FULL n_k=100 "), "{}", first.lines().next().unwrap());
    assert!(!out.join("draws/subset_2.csv").exists());
}

#[test]
fn rerun_is_byte_identical() {
    let f = fixture(128, "");
    let a = fit(&f, "a", &["--splits-exponent", "0.3", "--seed", "3"]);
    let b = fit(&f, "b", &["--splits-exponent", "0.3", "--seed", "3", "--jobs", "2"]);
    for rel in ["draws/subset_1.csv", "draws/subset_4.csv", "combined/h.csv", "combined/beta_1.csv", "partition.csv"] {
        assert_eq!(fs::read(a.join(rel)).unwrap(), fs::read(b.join(rel)).unwrap(), "{rel} differs");
    }
    let c = fit(&f, "c", &["--splits-exponent", "0.3", "--seed", "4"]);
    assert_ne!(fs::read(a.join("draws/subset_1.csv")).unwrap(), fs::read(c.join("draws/subset_1.csv")).unwrap());
}

#[test]
fn ard_fit_writes_inclusion_probabilities() {
    let f = fixture(100, "kernel = ard\n");
    let out = fit(&f, "run", &[]);
    let pip = fs::read_to_string(out.join("summary/pip.csv")).unwrap();
    assert_eq!(pip.lines().count(), 5);
    for line in pip.lines().skip(1) {
        let v: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
    assert!(out.join("combined/eta_4.csv").is_file());
}

#[test]
fn combine_methods_differ_on_a_contaminated_subset() {
    let f = fixture(160, "");
    let run = fit(&f, "run", &["--splits-exponent", "0.3"]);
    // shift every beta draw of one subset far away
    let path = run.join("draws/subset_2.csv");
    let mut chain = read_draws_csv(&path).unwrap();
    for d in &mut chain.draws {
        d.beta[0] += 100.0;
    }
    write_draws_csv(&chain, &path).unwrap();

    let bary = f.root.join("bary");
    let med = f.root.join("med");
    ok(&["combine", "--run", s(&run), "--method", "barycenter", "--out", s(&bary)]);
    ok(&["combine", "--run", s(&run), "--method", "median", "--out", s(&med)]);
    let mean = |dir: &Path| -> f64 {
        let text = fs::read_to_string(dir.join("summary/parameters.csv")).unwrap();
        let line = text.lines().find(|l| l.starts_with("beta_1,")).unwrap();
        line.split(',').nth(1).unwrap().parse().unwrap()
    };
    let (mb, mm) = (mean(&bary), mean(&med));
    // five subsets: the barycenter moves by about 100/5, the median barely
    assert!((mb - mm - 20.0).abs() < 3.0, "barycenter {mb}, median {mm}");
    assert!((mm - 2.0).abs() < 0.5, "median {mm}");
    assert!(med.join("combined/diagnostics.csv").is_file());
    let diag = fs::read_to_string(med.join("combined/diagnostics.csv")).unwrap();
    assert!(diag.lines().nth(1).unwrap().contains(",median,"));
}

#[test]
fn surface_on_zero_draws_is_flat() {
    let f = fixture(100, "");
    let run = fit(&f, "run", &["--splits-exponent", "0"]);
    let path = run.join("draws/subset_1.csv");
    let mut chain = read_draws_csv(&path).unwrap();
    for d in &mut chain.draws {
        d.h.iter_mut().for_each(|v| *v = 0.0);
    }
    write_draws_csv(&chain, &path).unwrap();
    let out = f.root.join("flat.csv");
    ok(&["surface", "--run", s(&run), "--type", "bi", "--exposures", "z2,3", "--grid", "4", "--out", s(&out)]);
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("z2,z3,mean"));
    assert_eq!(text.lines().count(), 17);
    for line in text.lines().skip(1) {
        for v in line.split(',').skip(2) {
            assert_eq!(v.parse::<f64>().unwrap().abs(), 0.0, "{line}");
        }
    }
}

#[test]
fn surface_fix_half_is_the_default() {
    let f = fixture(100, "");
    let run = fit(&f, "run", &[]);
    let a = f.root.join("a.csv");
    let b = f.root.join("b.csv");
    ok(&["surface", "--run", s(&run), "--exposures", "1", "--out", s(&a)]);
    ok(&["surface", "--run", s(&run), "--exposures", "1", "--fix", "0.5", "--out", s(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    // matches the surface written by fit on the same grid
    let c = f.root.join("c.csv");
    ok(&["surface", "--run", s(&run), "--exposures", "z1", "--grid", "5", "--out", s(&c)]);
    assert_eq!(fs::read(&c).unwrap(), fs::read(run.join("summary/surface_z1.csv")).unwrap());
}

#[test]
fn simulate_table_has_one_row_per_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    ok(&[
        "simulate", "--n-list", "512", "--t-list", "0,0.5", "--reps", "3", "--seed", "1", "--iters", "12", "--burnin",
        "6", "--thin", "2", "--out", s(&out),
    ]);
    let table = fs::read_to_string(out.join("results.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "n,t,rep,K,gamma0,gamma1,r2,beta_hat,seconds,status");
    assert_eq!(lines.len(), 7);
    // 512^0.5 rounds to 23 subsets of 22 rows, below the minimum subset size
    assert!(lines[1..4].iter().all(|l| l.ends_with(",ok")), "{table}");
    assert!(lines[4..].iter().all(|l| l.starts_with("512,0.5,") && l.contains("skipped")), "{table}");
    assert_eq!(fs::read_to_string(out.join("seeds.csv")).unwrap().lines().count(), 7);
}

#[test]
fn simulate_rejects_bad_t_before_running() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    let res = splitgp(&["simulate", "--n-list", "512", "--t-list", "0,0.9", "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn paper_scale_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    let res = ok(&["simulate", "--paper-scale", "--dry-run", "--n-list", "512,1024", "--out", s(&out)]);
    let manifest = fs::read_to_string(out.join("manifest")).unwrap();
    assert!(manifest.contains("reps = 300"));
    assert!(manifest.contains("iters = 10000"));
    assert!(!out.join("results.csv").exists());
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 601);
}

#[test]
fn exit_codes() {
    let f = fixture(100, "");
    let out = f.root.join("x");
    let bad_key = splitgp(&["fit", "--config", s(&f.config), "--data", s(&f.data), "--set", "colour=red", "--out", s(&out)]);
    assert_eq!(bad_key.status.code(), Some(2));
    let no_flag = splitgp(&["fit", "--bogus"]);
    assert_eq!(no_flag.status.code(), Some(2));
    let bad_col = splitgp(&[
        "fit", "--config", s(&f.config), "--data", s(&f.data), "--set", "exposures=z1,z9", "--out", s(&out),
    ]);
    assert_eq!(bad_col.status.code(), Some(3));
    let missing = splitgp(&["fit", "--config", s(&f.config), "--data", s(&f.root.join("nope.csv")), "--out", s(&out)]);
    assert_eq!(missing.status.code(), Some(3));
    let oversplit = splitgp(&[
        "fit", "--config", s(&f.config), "--data", s(&f.data), "--splits-exponent", "0.7", "--out", s(&out),
    ]);
    assert_eq!(oversplit.status.code(), Some(2));
    let bad_run = splitgp(&["combine", "--run", s(&f.root), "--out", s(&out)]);
    assert_ne!(bad_run.status.code(), Some(0));
}
