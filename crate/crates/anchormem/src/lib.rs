//! Standard-library companion to [`anchormem_core`]: annotated record files,
//! on-disk stores, two-thread retrieval, latency benchmarks and configuration.

pub mod bench;
pub mod config;
pub mod parallel;
pub mod persist;
pub mod record;

pub use anchormem_core as core;
pub use bench::{latency_bench, BenchReport};
pub use config::Config;
pub use parallel::{retrieve_parallel, SharedStore};
pub use persist::{load, save, Manifest, PersistError, WriteLock};
pub use record::{read_annotated, write_annotated, ReadOptions, Record, RecordError};
