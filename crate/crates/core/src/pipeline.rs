//! End-to-end divide-and-conquer fit: partition, run one chain per subset in
//! parallel, carry every draw's h onto a shared reference grid and combine.

use std::time::{Duration, Instant};

use faer::Mat;
use rayon::prelude::*;

use crate::data::{Dataset, ModelConfig};
use crate::error::Result;
use crate::ot::{combine, default_plan, CombineOptions, CombinedPosterior, Functional, SubsetPosterior};
use crate::partition::{make_plan, sketch, split_count, PartitionMode, PartitionPlan, MIN_SUBSET_SIZE};
use crate::sampler::{run_chain, ChainOutput};
use crate::seed::{derive_seed, rng_from_seed};
use crate::summary::{build_reference_grid, predict_h, ReferenceGrid, SurfaceRequest};

const PARTITION_STREAM: u64 = 1;
const CHAIN_STREAM: u64 = 2;
const PREDICT_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub model: ModelConfig,
    /// `K = round(n^t)`.
    pub splits_exponent: f64,
    pub min_subset_size: usize,
    pub partition_mode: PartitionMode,
    pub seed: u64,
    pub combine: CombineOptions,
    pub surfaces: Vec<SurfaceRequest>,
    /// Extra points appended to the reference grid after the surface blocks.
    pub extra_points: Option<Mat<f64>>,
    /// Joint functionals combined in addition to the marginal defaults.
    pub joint: Vec<Functional>,
    /// Draw h at grid points from the GP conditional instead of using its mean.
    pub predictive_noise: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            splits_exponent: 0.0,
            min_subset_size: MIN_SUBSET_SIZE,
            partition_mode: PartitionMode::Disjoint,
            seed: 0,
            combine: CombineOptions::default(),
            surfaces: Vec::new(),
            extra_points: None,
            joint: Vec::new(),
            predictive_noise: false,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct FitTimings {
    pub sampling: Duration,
    pub prediction: Duration,
    pub combining: Duration,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub plan: PartitionPlan,
    pub chains: Vec<ChainOutput>,
    pub grid: ReferenceGrid,
    pub subsets: Vec<SubsetPosterior>,
    pub combined: Vec<CombinedPosterior>,
    pub timings: FitTimings,
}

impl FitResult {
    pub fn find(&self, f: &Functional) -> Option<&CombinedPosterior> {
        self.combined.iter().find(|c| &c.functional == f)
    }

    /// Combined posterior means of h at reference-grid rows `range`.
    pub fn h_means(&self, range: std::ops::Range<usize>) -> Vec<f64> {
        range
            .map(|g| self.find(&Functional::H(g)).map_or(f64::NAN, |c| c.mean()[0]))
            .collect()
    }
}

/// Seed of subset chain `k` (0-based).
pub fn chain_seed(master: u64, k: usize) -> u64 {
    derive_seed(master, &[CHAIN_STREAM, k as u64])
}

pub fn partition_seed(master: u64) -> u64 {
    derive_seed(master, &[PARTITION_STREAM])
}

/// Text fingerprint of everything that must agree across subsets.
pub fn config_tag(model: &ModelConfig) -> String {
    format!("{model:?}")
}

/// Number of subsets and the partition for `n` rows under `opts`.
pub fn plan_for(n: usize, opts: &FitOptions) -> Result<PartitionPlan> {
    let k = split_count(n, opts.splits_exponent, opts.min_subset_size)?;
    make_plan(n, k, partition_seed(opts.seed), opts.partition_mode)
}

/// Run every subset chain; results are ordered by subset and do not depend on
/// the size of the thread pool.
pub fn run_subsets(ds: &Dataset, plan: &PartitionPlan, opts: &FitOptions) -> Result<Vec<ChainOutput>> {
    (0..plan.k)
        .into_par_iter()
        .map(|k| {
            let sk = sketch(ds, plan, k, opts.model.temper)?;
            let mut out = run_chain(&sk, &opts.model, chain_seed(opts.seed, k))?;
            if plan.k == 1 {
                out.subset = None;
            }
            Ok(out)
        })
        .collect()
}

/// Carry each chain's draws to the reference grid.
pub fn subset_posteriors(
    ds: &Dataset,
    plan: &PartitionPlan,
    chains: &[ChainOutput],
    grid: &ReferenceGrid,
    opts: &FitOptions,
) -> Result<Vec<SubsetPosterior>> {
    let flat = grid.flat();
    let tag = config_tag(&opts.model);
    chains
        .iter()
        .enumerate()
        .map(|(k, chain)| {
            let z_train = crate::linalg::select_rows(ds.z.as_ref(), &plan.index_sets[k]);
            let h_grid = if grid.is_empty() {
                Vec::new()
            } else {
                chain
                    .draws
                    .par_iter()
                    .enumerate()
                    .map(|(i, d)| {
                        if opts.predictive_noise {
                            let mut rng = rng_from_seed(derive_seed(opts.seed, &[PREDICT_STREAM, k as u64, i as u64]));
                            predict_h(d, &opts.model.kernel, z_train.as_ref(), grid.points.as_ref(), opts.model.jitter, Some(&mut rng))
                        } else {
                            predict_h::<rand_chacha::ChaCha8Rng>(
                                d,
                                &opts.model.kernel,
                                z_train.as_ref(),
                                grid.points.as_ref(),
                                opts.model.jitter,
                                None,
                            )
                        }
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            Ok(SubsetPosterior {
                subset: chain.subset,
                draws: chain.draws.clone(),
                h_grid,
                grid: flat.clone(),
                config_tag: tag.clone(),
            })
        })
        .collect()
}

/// Reference grid for the requested surfaces plus any extra points.
pub fn reference_grid(ds: &Dataset, opts: &FitOptions) -> Result<ReferenceGrid> {
    let mut grid = build_reference_grid(ds.z.as_ref(), &opts.surfaces)?;
    if let Some(extra) = &opts.extra_points {
        let q = ds.q();
        if extra.ncols() != q {
            return Err(crate::Error::Domain(format!("extra grid points have {} columns, expected {q}", extra.ncols())));
        }
        let base = grid.points.nrows();
        grid.points = Mat::from_fn(base + extra.nrows(), q, |i, l| {
            if i < base {
                grid.points[(i, l)]
            } else {
                extra[(i - base, l)]
            }
        });
    }
    Ok(grid)
}

/// Full divide-and-conquer fit.
pub fn fit(ds: &Dataset, opts: &FitOptions) -> Result<FitResult> {
    opts.model.validate()?;
    let plan = plan_for(ds.n(), opts)?;
    let t0 = Instant::now();
    let chains = run_subsets(ds, &plan, opts)?;
    let sampling = t0.elapsed();

    let t1 = Instant::now();
    let grid = reference_grid(ds, opts)?;
    let subsets = subset_posteriors(ds, &plan, &chains, &grid, opts)?;
    let prediction = t1.elapsed();

    let t2 = Instant::now();
    let mut functionals = default_plan(ds.p(), ds.q(), opts.model.kernel.is_ard(), grid.len());
    functionals.extend(opts.joint.iter().cloned());
    let combined = combine(&subsets, &functionals, &opts.combine)?;
    let combining = t2.elapsed();

    Ok(FitResult {
        plan,
        chains,
        grid,
        subsets,
        combined,
        timings: FitTimings {
            sampling,
            prediction,
            combining,
        },
    })
}
