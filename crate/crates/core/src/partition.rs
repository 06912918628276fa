//! Random partitioning into K subsets and the √K-scaled subset model.
//!
//! Subset `k` keeps its rows `I_k` and is rescaled by `√K`: the outcome and
//! confounders are multiplied by `√K`, the subset Gram matrix by `K`, and the
//! subset covariance becomes `K·(I + λ K_sub)`. The sketching matrix itself is
//! never formed.

use std::io::Write;
use std::path::Path;

use faer::{Col, Mat};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{GramMatrix, VFactor};
use crate::linalg::select_rows;
use crate::seed::rng_from_seed;

/// Default smallest subset a chain is run on.
pub const MIN_SUBSET_SIZE: usize = 32;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum PartitionMode {
    /// Disjoint, balanced index sets covering every row.
    #[default]
    Disjoint,
    /// Each subset draws `⌊n/K⌋` rows uniformly with replacement.
    WithReplacement,
}

/// K index sets (0-based row indices, each sorted ascending).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPlan {
    pub k: usize,
    pub index_sets: Vec<Vec<usize>>,
    pub seed: u64,
}

/// Uniformly random balanced partition of `0..n` into `k` sets.
pub fn make_partition(n: usize, k: usize, seed: u64) -> Result<PartitionPlan> {
    if k == 0 || k > n {
        return Err(Error::Domain(format!("cannot split {n} rows into {k} subsets")));
    }
    let mut rng = rng_from_seed(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let base = n / k;
    let extra = n % k;
    let mut index_sets = Vec::with_capacity(k);
    let mut start = 0;
    for s in 0..k {
        let len = base + usize::from(s < extra);
        let mut set = order[start..start + len].to_vec();
        set.sort_unstable();
        index_sets.push(set);
        start += len;
    }
    Ok(PartitionPlan { k, index_sets, seed })
}

/// `k` subsets of `⌊n/k⌋` rows drawn with replacement.
pub fn make_resampled_plan(n: usize, k: usize, seed: u64) -> Result<PartitionPlan> {
    if k == 0 || k > n {
        return Err(Error::Domain(format!("cannot split {n} rows into {k} subsets")));
    }
    let mut rng = rng_from_seed(seed);
    let size = n / k;
    let index_sets = (0..k)
        .map(|_| {
            let mut set: Vec<usize> = (0..size).map(|_| rng.random_range(0..n)).collect();
            set.sort_unstable();
            set
        })
        .collect();
    Ok(PartitionPlan { k, index_sets, seed })
}

pub fn make_plan(n: usize, k: usize, seed: u64, mode: PartitionMode) -> Result<PartitionPlan> {
    match mode {
        PartitionMode::Disjoint => make_partition(n, k, seed),
        PartitionMode::WithReplacement => make_resampled_plan(n, k, seed),
    }
}

/// Number of splits `K = max(1, round(n^t))`, refusing subsets smaller than
/// `min_subset_size`.
pub fn split_count(n: usize, t: f64, min_subset_size: usize) -> Result<usize> {
    if n == 0 {
        return Err(Error::Domain("n must be at least 1".into()));
    }
    if !(0.0..=0.7).contains(&t) {
        return Err(Error::Domain(format!("split exponent t = {t} is outside [0, 0.7]")));
    }
    let k = ((n as f64).powf(t).round() as usize).clamp(1, n);
    let subset_size = n / k;
    if k > 1 && subset_size < min_subset_size {
        return Err(Error::SubsetTooSmall {
            n,
            k,
            subset_size,
            min: min_subset_size,
        });
    }
    Ok(k)
}

/// Data for one subset chain under the √K-scaled model.
#[derive(Debug, Clone)]
pub struct SketchedSubset {
    /// `√c · y[I_k]`.
    pub y_t: Col<f64>,
    /// `√c · x[I_k]`.
    pub x_t: Mat<f64>,
    /// `z[I_k]`, unscaled.
    pub z_sub: Mat<f64>,
    /// Multiplier on the subset Gram matrix and on the identity in `V`.
    pub scale_c: f64,
    pub indices: Vec<usize>,
    /// 0-based subset index, `None` for a fit on the whole dataset.
    pub subset: Option<usize>,
}

impl SketchedSubset {
    /// The whole dataset as a single unscaled subset.
    pub fn full(ds: &Dataset) -> Self {
        Self {
            y_t: ds.y.clone(),
            x_t: ds.x.clone(),
            z_sub: ds.z.clone(),
            scale_c: 1.0,
            indices: (0..ds.n()).collect(),
            subset: None,
        }
    }

    pub fn n_k(&self) -> usize {
        self.y_t.nrows()
    }

    pub fn p(&self) -> usize {
        self.x_t.ncols()
    }

    pub fn q(&self) -> usize {
        self.z_sub.ncols()
    }
}

/// Build subset `k` (0-based) of `plan`. With `temper = false` the subset is
/// used as-is (`scale_c = 1`).
pub fn sketch(ds: &Dataset, plan: &PartitionPlan, k: usize, temper: bool) -> Result<SketchedSubset> {
    let indices = plan
        .index_sets
        .get(k)
        .ok_or_else(|| Error::Domain(format!("subset {k} out of range for K = {}", plan.k)))?
        .clone();
    let scale_c = if temper { plan.k as f64 } else { 1.0 };
    let root = scale_c.sqrt();
    let y_t = Col::from_fn(indices.len(), |i| root * ds.y[indices[i]]);
    let mut x_t = select_rows(ds.x.as_ref(), &indices);
    if root != 1.0 {
        x_t *= faer::Scale(root);
    }
    Ok(SketchedSubset {
        y_t,
        x_t,
        z_sub: select_rows(ds.z.as_ref(), &indices),
        scale_c,
        indices,
        subset: Some(k),
    })
}

/// Factor `c·(I + λ K_sub)` for a subset.
pub fn subset_v_matrix(sk: &SketchedSubset, gram_sub: &GramMatrix, lambda: f64) -> Result<VFactor> {
    VFactor::new(gram_sub, lambda, sk.scale_c)
}

/// Write `row_index,subset_id` (both 1-based), rows in ascending order.
pub fn write_partition_csv(plan: &PartitionPlan, n: usize, path: &Path) -> Result<()> {
    let mut owner = vec![Vec::new(); n];
    for (k, set) in plan.index_sets.iter().enumerate() {
        for &i in set {
            owner[i].push(k + 1);
        }
    }
    let mut out = String::from("row_index,subset_id\n");
    for (i, ks) in owner.iter().enumerate() {
        for k in ks {
            out.push_str(&format!("{},{}\n", i + 1, k));
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_partition_csv(path: &Path) -> Result<PartitionPlan> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut pairs = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<usize> {
            rec.get(i)
                .and_then(|s| s.trim().parse::<usize>().ok())
                .filter(|&v| v >= 1)
                .ok_or_else(|| Error::Format {
                    path: path.into(),
                    msg: format!("bad partition record {rec:?}"),
                })
        };
        pairs.push((parse(0)? - 1, parse(1)? - 1));
    }
    let k = pairs.iter().map(|&(_, s)| s + 1).max().unwrap_or(0);
    let mut index_sets = vec![Vec::new(); k];
    for (i, s) in pairs {
        index_sets[s].push(i);
    }
    for set in &mut index_sets {
        set.sort_unstable();
    }
    Ok(PartitionPlan { k, index_sets, seed: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::gram_ard;

    fn covers(plan: &PartitionPlan, n: usize) -> bool {
        let mut all: Vec<usize> = plan.index_sets.iter().flatten().copied().collect();
        all.sort_unstable();
        all == (0..n).collect::<Vec<_>>()
    }

    #[test]
    fn single_split_is_everything() {
        let plan = make_partition(10, 1, 3).unwrap();
        assert_eq!(plan.index_sets, vec![(0..10).collect::<Vec<_>>()]);
    }

    #[test]
    fn balanced_sizes() {
        let plan = make_partition(10, 3, 3).unwrap();
        let mut sizes: Vec<usize> = plan.index_sets.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![3, 3, 4]);
        assert!(covers(&plan, 10));
        assert!(make_partition(3, 4, 0).is_err());
    }

    #[test]
    fn seeds_change_large_partitions() {
        let a = make_partition(10_000, 100, 1).unwrap();
        let b = make_partition(10_000, 100, 2).unwrap();
        assert_ne!(a.index_sets, b.index_sets);
        for plan in [&a, &b] {
            assert!(covers(plan, 10_000));
            assert!(plan.index_sets.iter().all(|s| s.len() == 100));
        }
        assert_eq!(a, make_partition(10_000, 100, 1).unwrap());
    }

    #[test]
    fn split_count_rules() {
        assert_eq!(split_count(512, 0.0, MIN_SUBSET_SIZE).unwrap(), 1);
        assert_eq!(split_count(1024, 0.5, MIN_SUBSET_SIZE).unwrap(), 32);
        assert_eq!(split_count(2048, 0.5, MIN_SUBSET_SIZE).unwrap(), 45);
        assert!(matches!(
            split_count(512, 0.7, MIN_SUBSET_SIZE),
            Err(Error::SubsetTooSmall { n: 512, k: 79, .. })
        ));
        assert!(split_count(512, 0.9, MIN_SUBSET_SIZE).is_err());
    }

    fn toy() -> Dataset {
        Dataset::new(
            Col::from_fn(8, |i| i as f64 + 1.0),
            Mat::from_fn(8, 1, |i, _| (i as f64).sin()),
            Mat::from_fn(8, 2, |i, j| (i * (j + 1)) as f64 * 0.3),
        )
        .unwrap()
    }

    #[test]
    fn one_split_sketch_is_identity() {
        let ds = toy();
        let plan = make_partition(8, 1, 0).unwrap();
        let sk = sketch(&ds, &plan, 0, true).unwrap();
        assert_eq!(sk.scale_c, 1.0);
        for i in 0..8 {
            assert_eq!(sk.y_t[i], ds.y[i]);
            assert_eq!(sk.x_t[(i, 0)], ds.x[(i, 0)]);
        }
    }

    #[test]
    fn four_splits_double_the_outcome() {
        let ds = toy();
        let plan = PartitionPlan {
            k: 4,
            index_sets: vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7]],
            seed: 0,
        };
        let sk = sketch(&ds, &plan, 0, true).unwrap();
        assert_eq!((sk.y_t[0], sk.y_t[1]), (2.0, 4.0));
        let plain = sketch(&ds, &plan, 0, false).unwrap();
        assert_eq!((plain.y_t[0], plain.y_t[1]), (1.0, 2.0));
        assert_eq!(plain.scale_c, 1.0);
    }

    #[test]
    fn subset_logdet_scales_with_k() {
        let ds = toy();
        let plan = make_partition(8, 2, 5).unwrap();
        let sk = sketch(&ds, &plan, 1, true).unwrap();
        let g = gram_ard(sk.z_sub.as_ref(), &[0.5, 0.5]).unwrap();
        let v = subset_v_matrix(&sk, &g, 0.8).unwrap();
        let base = crate::kernel::v_matrix(&g, 0.8).unwrap();
        assert!((v.logdet() - (sk.n_k() as f64 * 2f64.ln() + base.logdet())).abs() < 1e-12);
        let tiny = subset_v_matrix(&sk, &g, 1e-15).unwrap();
        assert!((tiny.logdet() - sk.n_k() as f64 * 2f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn partition_file_round_trip() {
        let plan = make_partition(25, 4, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("partition.csv");
        write_partition_csv(&plan, 25, &path).unwrap();
        let back = read_partition_csv(&path).unwrap();
        assert_eq!(back.index_sets, plan.index_sets);
    }
}
