//! Task-free online continual learning on a single-pass, non-iid stream.
//!
//! The toolkit trains a small dense classifier one example at a time while
//! replaying from a fixed-capacity episodic memory, and provides:
//!
//! * plain experience replay (`w = g + g_ref`) and a proximal-gradient
//!   update that pulls the direction toward sigmoid-length-weighted cosine
//!   alignment with the replayed gradients ([`combiner`]);
//! * reservoir memory with optional confidence-scored victim selection
//!   driven by exploitation rate and margin increment ([`buffer`]);
//! * uniform and maximally-interfered retrieval, composed into the online
//!   loop ([`strategy`]);
//! * class-split / pixel-permuted / synthetic task streams and the average
//!   accuracy and forgetting metrics ([`stream`], [`metrics`]);
//! * a seeded experiment harness with finite-difference and Monte-Carlo
//!   self-checks ([`harness`]).
//!
//! Runs are deterministic given a seed; every random choice flows from
//! per-purpose ChaCha streams.

pub mod buffer;
pub mod combiner;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod strategy;
pub mod stream;

pub use buffer::{score, Buffer, MemorySlot, OfferOutcome, StoragePolicy};
pub use combiner::{er_combine, pgd_combine, pgd_grad, CombinerConfig};
pub use error::{Error, Result};
pub use metrics::{accuracy, average_accuracy, forgetting, AccuracyMatrix};
pub use nn::{Example, MlpModel, ParamVector};
pub use strategy::{
    mir_select, run_stream, train_step, Retrieval, RunResult, RunSpec, StepRecord,
    StrategyConfig, Training,
};
pub use stream::{
    load_idx, make_permuted_tasks, make_split_tasks, synthetic_stream, SyntheticSpec, TaskStream,
};
