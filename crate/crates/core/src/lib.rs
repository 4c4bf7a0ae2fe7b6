//! Entropic optimal transport colocalization curves with bootstrap
//! confidence bands.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix the scalar to `f64`, with `F32` variants for
//! single precision.

// `!(x > 0)` is deliberate: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bootstrap;
pub mod coloc;
pub mod error;
pub mod grid;
pub mod measure;
pub mod rng;
pub mod samplers;
pub mod scalar;
pub mod sinkhorn;
mod stabilized;

pub use bootstrap::{
    balanced_rate, band_from_replicates, bootstrap_band, bootstrap_quantile, coverage_experiment,
    order_statistic_rank, qq_data, read_sups_csv, resample, write_sups_csv, BandSummary,
    BootstrapConfig, CoverageReport,
};
pub use coloc::{
    coloc_curve, curve_by_buckets, curve_by_sorting, default_grid, eval_kernel_functional,
    indicator_kernel, plan_curve, sup_distance, DEFAULT_RESOLUTION, EXACT_PATH_MAX_ENTRIES,
};
pub use error::{Error, Result};
pub use grid::{load_grid, parse_grid, subsample_grid, to_measure};
pub use measure::{
    make_measure, read_measure, read_measure_csv, realize_cost, write_measure, write_measure_csv,
};
pub use rng::{derive_seed, seeded, stream, RngStream};
pub use samplers::{
    sample_gaussian_mixture, sample_vmf_cosine, sample_vmf_mixture, vmf_cosine_cdf,
    vmf_mean_resultant, GaussianMixtureSpec, Scenario, VmfMixtureSpec,
};
pub use scalar::Scalar;
pub use sinkhorn::{
    dual_objective, marginals, primal_objective, solve, solve_with, write_plan, SolutionSummary,
    SolverConfig as GenericSolverConfig,
};

pub use bootstrap::BandResult as GenericBandResult;
pub use coloc::{ColocCurve as GenericColocCurve, ThresholdGrid as GenericThresholdGrid};
pub use grid::GridMeasure as GenericGridMeasure;
pub use measure::{
    CostMatrix as GenericCostMatrix, CostSpec as GenericCostSpec,
    DiscreteMeasure as GenericMeasure,
};
pub use sinkhorn::{EotSolution as GenericEotSolution, Potentials as GenericPotentials};

pub type Measure = measure::DiscreteMeasure<f64>;
pub type CostSpec = measure::CostSpec<f64>;
pub type CostMatrix = measure::CostMatrix<f64>;
pub type SolverConfig = sinkhorn::SolverConfig<f64>;
pub type Potentials = sinkhorn::Potentials<f64>;
pub type EotSolution = sinkhorn::EotSolution<f64>;
pub type ThresholdGrid = coloc::ThresholdGrid<f64>;
pub type ColocCurve = coloc::ColocCurve<f64>;
pub type BandResult = bootstrap::BandResult<f64>;
pub type GridMeasure = grid::GridMeasure<f64>;

pub type MeasureF32 = measure::DiscreteMeasure<f32>;
pub type CostMatrixF32 = measure::CostMatrix<f32>;
pub type SolverConfigF32 = sinkhorn::SolverConfig<f32>;
pub type EotSolutionF32 = sinkhorn::EotSolution<f32>;
pub type ColocCurveF32 = coloc::ColocCurve<f32>;
pub type BandResultF32 = bootstrap::BandResult<f32>;
