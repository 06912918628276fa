//! Optimal-transport tools for merging subset posteriors.

pub mod combine;
pub mod exact;
pub mod measure;
pub mod median;
pub mod quantile;
pub mod sinkhorn;

pub use combine::{
    combine, combine_measures, default_plan, read_combined_csv, write_combined_csv, write_diagnostics_csv,
    CombineDiagnostics, CombineMethod, CombineOptions, CombinedPosterior, Functional, SubsetPosterior,
};
pub use exact::{solve_transport, transport, w2_exact, TransportSolution, MAX_EXACT_ATOMS};
pub use measure::{cost_matrix, AtomicMeasure};
pub use median::{geometric_median_w2, MedianDiagnostics, MedianOptions};
pub use quantile::{barycenter_1d, w2_1d, w2_sq_1d, weighted_barycenter_1d, QuantileFn};
pub use sinkhorn::{barycenter_sinkhorn, pooled_support, SinkhornDiagnostics, SinkhornOptions};
