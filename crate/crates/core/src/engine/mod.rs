//! Engine facade: configuration and profile detection, resource governor,
//! write lock and job journal, query routing, the HTTP service and the
//! benchmark and evaluation harness.

pub mod bench;
mod config;
pub mod eval;
mod governor;
mod journal;
mod lock;
mod runtime;
pub mod service;

pub use config::{
    config_from_env, detect_profile, resolve_config, EngineConfig, HostInfo, Profile, GIB, LAPTOP_CEILING,
};
pub use governor::{Action, Component, ComponentState, LedgerEvent, ResourceLedger};
pub use journal::{read_entries, Journal, JournalEntry};
pub use lock::{WriteLock, WriteToken};
pub use runtime::{
    advise_dontneed, lower_thread_priority, Channels, Engine, EnginePaths, HitView, IngestJobReport, JobStatus,
    QueryOptions, QueryResult, Snapshot, StageTimings, CALIBRATION_FILE, DENSE_FILE, FLAT_FILE, HOT_FILE,
    JOURNAL_FILE, SPARSE_FILE, STORE_FILE,
};
