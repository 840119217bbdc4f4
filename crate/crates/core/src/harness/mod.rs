//! Experiment orchestration: specs, cached pipeline stages, sweeps, timing
//! and metrics output.

pub mod cache;
pub mod eval;
pub mod metrics;
pub mod pipeline;
pub mod spec;
pub mod sweep;
pub mod timing;

pub use cache::{StageCache, StageEvent, CODE_VERSION};
pub use eval::{evaluate_precoding, PrecodingEval};
pub use metrics::{lookup, read_rows, write_metrics, MetricsRow};
pub use pipeline::{run_pipeline, PipelineOutput};
pub use spec::{Axis, ExperimentSpec, Profile, Scheme};
pub use sweep::sweep;
pub use timing::{init_threads, time_scheme, TimingRow, THREADS_ENV};
