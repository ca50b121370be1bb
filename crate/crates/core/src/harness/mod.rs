//! Synthetic scenes, run configuration and end-to-end orchestration.

mod config;
mod pipeline;
mod scene;
mod stream;

pub use config::{BenchmarkConfig, Paths, RunConfig, Seeds, StreamConfig};
pub use pipeline::{
    ablation_csv, ablation_rows, benchmark_domains, load_benchmark, manifest_for, prepare,
    pretrain_source, run_ablation, run_pipeline, run_sweep, scenes, sweep_csv, write_run,
    AblationRow, PipelineReport, Prepared, SweepParam, SweepRow,
};
pub use scene::{synth_scene, Densities, Intensity, SyntheticSceneSpec, CLASS_NAMES};
pub use stream::{run_stream, Domain, StreamBatch, StreamRun, StreamSpec};
