//! Divide-and-conquer Bayesian kernel machine regression.
//!
//! The exposure-response surface `h` in `y = Xβ + h(z) + e` gets a Gaussian
//! process prior. Large datasets are split into `K` random subsets, each subset
//! posterior is sampled with a √K-scaled likelihood, and the subset posteriors
//! are merged through Wasserstein barycenters or medians.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod ot;
pub mod partition;
pub mod pipeline;
pub mod sampler;
pub mod seed;
pub mod simulation;
pub mod summary;

pub use faer;

pub use data::{
    Dataset, GammaPrior, InitialValues, KernelDraw, KernelMode, MissingPolicy, ModelConfig, PosteriorDraw,
    RhoExponent, Scaling, Schema, UpdateFlags,
};
pub use error::{Error, ErrorClass, Result};
pub use partition::{make_partition, sketch, split_count, PartitionMode, PartitionPlan, SketchedSubset};
pub use sampler::{run_chain, AcceptanceRates, ChainOutput};
pub use ot::{AtomicMeasure, CombineMethod, CombineOptions, CombinedPosterior, Functional};
pub use pipeline::{fit, FitOptions, FitResult};
