//! Filesystem, network and benchmarking layer around `revise_core`.
//!
//! - [`frame_dir`]: videos stored as directories of numbered frames
//! - [`manifest`]: JSONL datasets
//! - [`http`]: chat-completions backend with retries and a concurrency cap
//! - [`batch`] and [`bench`]: parallel evaluation, sweeps and ablations
//! - [`config`]: layered `key=value` settings

pub mod batch;
pub mod bench;
pub mod config;
pub mod frame_dir;
pub mod http;
pub mod manifest;
pub mod records;
pub mod synth_export;
pub mod toy_io;

pub use batch::{run_batch, FrameDirResolver, SynthResolver, VideoResolver};
pub use bench::{aggregate, evaluate, MetricsReport};
pub use config::RunConfig;
pub use frame_dir::{open_frame_dir, FrameDirSource};
pub use http::{HttpBackend, HttpConfig};
pub use manifest::{load_manifest, QaItem};
pub use records::TrajectoryRecord;
