//! One-step k-means under sampling: the exact Lloyd update, uniform
//! mini-batch and damped variants, the norm-sampled two-batch competitor, a
//! median-of-means booster, and a query-counting classical emulation of the
//! quantum uniform step, together with the seeded experiment harness that
//! checks their error and sample-complexity behavior.
//!
//! Cluster labels and point indices are 0-based everywhere, and every
//! randomized entry point takes an explicit 64-bit seed.

pub mod dataset;
pub mod error;
pub mod experiments;
pub mod kmeans;
pub mod linalg;
pub mod quantum;
pub mod samplers;
pub mod seeding;

pub use dataset::{
    apply_rigid_transform, generate_gaussian_mixture, hard_instance, jl_project, load_csv, DataSet,
    MixtureSpec, RigidTransform,
};
pub use error::{Error, Result};
pub use kmeans::{
    assign, center_error, cost, diagnostics, lloyd_step, Assignment, Centers, Diagnostics,
};
pub use quantum::{
    cluster_distribution, epsilon_j_delta, perturbed_distribution, predicted_query_bound,
    quantum_kmeans_step, quantum_mean_estimate, ClusterDistribution, EmulationConfig, QueryLedger,
};
pub use samplers::{
    damped_minibatch_step, dlt_step, importance_estimator, median_trick, minibatch_step,
    sample_indices, Batch, DampedSpec, EmptyClusterFallback, MedianMetric, SamplingScheme,
    StepReport,
};
