//! Task-grid orchestration: bundle generation, discovery runs, mask
//! evaluation and report tables.

pub mod config;
pub mod jsonl;
pub mod pipeline;
pub mod report;

pub use config::{GridCell, RunConfig, TaskSlot};
pub use pipeline::{cmd_discover, cmd_evaluate, cmd_generate, Manifest, MaskSource};
pub use report::cmd_report;
