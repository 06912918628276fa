use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use crate::data::{fmt_f64, KernelDraw, PosteriorDraw};
use crate::error::{Error, Result};

use super::{AcceptanceRates, ChainOutput};

/// Metadata carried by the comment line of a draw file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DrawFileHeader {
    /// 0-based subset index, `None` for a full-data fit.
    pub subset: Option<usize>,
    pub n_sites: usize,
    pub seed: u64,
}

fn column_names(draw: &PosteriorDraw) -> Vec<String> {
    let mut cols = vec!["draw".to_string()];
    cols.extend((1..=draw.beta.len()).map(|j| format!("beta_{j}")));
    cols.push("sigma2".into());
    cols.push("lambda".into());
    match &draw.kernel {
        KernelDraw::Isotropic { .. } => cols.push("rho".into()),
        KernelDraw::Ard { r, .. } => {
            cols.extend((1..=r.len()).map(|j| format!("r_{j}")));
            cols.extend((1..=r.len()).map(|j| format!("eta_{j}")));
        }
    }
    cols.extend((1..=draw.h.len()).map(|i| format!("h_{i}")));
    cols
}

/// Write retained draws, one row per draw, preceded by a `# subset=… n_k=… seed=…` line.
pub fn write_draws_csv(out: &ChainOutput, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let subset = out.subset.map_or_else(|| "FULL".to_string(), |k| (k + 1).to_string());
    writeln!(w, "# subset={subset} n_k={} seed={}", out.n_sites, out.seed).map_err(|e| Error::io(path, e))?;
    let mut csv = csv::Writer::from_writer(w);
    if let Some(first) = out.draws.first() {
        csv.write_record(column_names(first))?;
    }
    for (i, d) in out.draws.iter().enumerate() {
        let mut row = vec![(i + 1).to_string()];
        row.extend(d.beta.iter().map(|&v| fmt_f64(v)));
        row.push(fmt_f64(d.sigma2));
        row.push(fmt_f64(d.lambda));
        match &d.kernel {
            KernelDraw::Isotropic { rho } => row.push(fmt_f64(*rho)),
            KernelDraw::Ard { r, eta } => {
                row.extend(r.iter().map(|&v| fmt_f64(v)));
                row.extend(eta.iter().map(|&e| u8::from(e).to_string()));
            }
        }
        row.extend(d.h.iter().map(|&v| fmt_f64(v)));
        csv.write_record(row)?;
    }
    csv.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn parse_header(line: &str, path: &Path) -> Result<DrawFileHeader> {
    let bad = |msg: &str| Error::Format {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    let body = line.strip_prefix('#').ok_or_else(|| bad("missing metadata line"))?;
    let (mut subset, mut n_sites, mut seed) = (None, None, None);
    for field in body.split_whitespace() {
        let (key, value) = field.split_once('=').ok_or_else(|| bad("malformed metadata"))?;
        match key {
            "subset" => {
                subset = Some(if value == "FULL" {
                    None
                } else {
                    let k: usize = value.parse().map_err(|_| bad("bad subset id"))?;
                    Some(k.checked_sub(1).ok_or_else(|| bad("subset ids start at 1"))?)
                })
            }
            "n_k" => n_sites = Some(value.parse().map_err(|_| bad("bad n_k"))?),
            "seed" => seed = Some(value.parse().map_err(|_| bad("bad seed"))?),
            _ => {}
        }
    }
    Ok(DrawFileHeader {
        subset: subset.ok_or_else(|| bad("missing subset"))?,
        n_sites: n_sites.ok_or_else(|| bad("missing n_k"))?,
        seed: seed.ok_or_else(|| bad("missing seed"))?,
    })
}

/// Read a draw file written by [`write_draws_csv`]. Acceptance rates and
/// timing are not stored and come back empty.
pub fn read_draws_csv(path: &Path) -> Result<ChainOutput> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|e| Error::io(path, e))?;
    let header = parse_header(first.trim_end(), path)?;
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let names: Vec<String> = csv.headers()?.iter().map(str::to_string).collect();
    let bad = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    let count = |prefix: &str| names.iter().filter(|c| c.starts_with(prefix)).count();
    let p = count("beta_");
    let q_r = count("r_");
    let q_eta = count("eta_");
    let m = count("h_");
    let isotropic = names.iter().any(|c| c == "rho");
    if !names.is_empty() && (q_r != q_eta || isotropic == (q_r > 0)) {
        return Err(bad("inconsistent kernel columns".into()));
    }
    let mut draws = Vec::new();
    for (row_no, rec) in csv.records().enumerate() {
        let rec = rec?;
        let mut vals = rec.iter().skip(1);
        let mut next = |what: &str| -> Result<f64> {
            let s = vals.next().ok_or_else(|| bad(format!("row {}: missing {what}", row_no + 1)))?;
            s.trim()
                .parse::<f64>()
                .map_err(|_| bad(format!("row {}: bad {what} value {s:?}", row_no + 1)))
        };
        let beta = (0..p).map(|_| next("beta")).collect::<Result<Vec<_>>>()?;
        let sigma2 = next("sigma2")?;
        let lambda = next("lambda")?;
        let kernel = if isotropic {
            KernelDraw::Isotropic { rho: next("rho")? }
        } else {
            let r = (0..q_r).map(|_| next("r")).collect::<Result<Vec<_>>>()?;
            let eta = (0..q_eta).map(|_| next("eta").map(|v| v != 0.0)).collect::<Result<Vec<_>>>()?;
            KernelDraw::Ard { r, eta }
        };
        let h = (0..m).map(|_| next("h")).collect::<Result<Vec<_>>>()?;
        draws.push(PosteriorDraw {
            beta,
            sigma2,
            lambda,
            kernel,
            h,
        });
    }
    Ok(ChainOutput {
        subset: header.subset,
        n_sites: header.n_sites,
        seed: header.seed,
        draws,
        acceptance: AcceptanceRates::default(),
        duration: Duration::ZERO,
    })
}
