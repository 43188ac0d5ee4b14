//! End-to-end orchestration: synthetic dataset construction, agent training
//! on synthetic or real transitions, normalized-return evaluation, and the
//! horizon / data-volume experiment matrices.

mod config;
mod eval;
mod matrix;
mod report;
mod runner;
mod synthesis;
mod training;

pub use config::{DataSource, MatrixSection, RunConfig, Sweep, SynthesisSection};
pub use eval::{evaluate, EvalPolicy, EvalReport};
pub use matrix::{run_matrix, MatrixOutcome, WorldModelCache};
pub use report::{aggregate_reports, ReportRow};
pub use runner::{
    build_world_model, read_report, resolve_path, run_full, synthesis_config, write_report,
    MetricsWriter, RunTimings, WorldModelStack,
};
pub use synthesis::{synthesize_dataset, SynthesisConfig, SynthesisOutcome};
pub use training::{train_agent_interleaved, train_agent_on};
