pub mod discovery;
pub mod eval;
pub mod graph;
pub mod reward;
pub mod risk;
pub mod scalar;
pub mod scm;
pub mod seed;
pub mod stats;

pub use graph::{generate_er_dag, Dag, GraphError, NodeSet};
pub use scalar::Real;
pub use scm::{generate_task, Family, ScmError, TaskConfig, TaskInstance, TaskMeta};
pub use stats::{RegressorKind, StatsError};

pub type DataMatrix = stats::DataMatrix<f64>;
pub type DataMatrix32 = stats::DataMatrix<f32>;
pub type FitResult = stats::FitResult<f64>;
pub type FitSettings = stats::FitSettings<f64>;
pub type CiResult = stats::CiResult<f64>;
