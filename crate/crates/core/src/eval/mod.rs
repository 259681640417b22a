//! Metrics, experiment orchestration, reports and the privacy audit.

pub mod digest;
pub mod experiment;
pub mod loss;
pub mod metrics;
pub mod report;

pub use digest::privacy_digest;
pub use experiment::{run_experiment, ExperimentSpec, FoldData, Method, MethodOutput};
pub use loss::user_loss_fv;
pub use metrics::{mean_std, ndcg_at, ndcg_at_10, rmse, user_ndcg, Scored};
pub use report::{FoldRow, MethodSummary, RunReport};
