//! A concurrent in-memory learned index for `u64` keys.
//!
//! Every node maps keys onto its slot array with a linear model, and each
//! key sits exactly at its predicted slot. Keys that collide push a child
//! node down into the slot instead of shifting neighbours, so a lookup reads
//! one slot per level and never searches. Writers lock single slots;
//! readers validate slot versions and never block.
//!
//! Nodes reshape themselves over time. Insert-heavy subtrees are rebuilt
//! with more room, hot read paths are flattened into side-by-side segments,
//! and cold subtrees are packed into gap-free piecewise-linear nodes when
//! the index exceeds its size budget. When to act is decided by cheap
//! Bernoulli trials instead of shared counters.
//!
//! ```
//! use learned_index::{EvolveConfig, Index};
//!
//! let index = Index::new(EvolveConfig::default()).unwrap();
//! index.insert(42, 1).unwrap();
//! assert_eq!(index.get(42), Some(1));
//! assert_eq!(index.range_scan(0, 10), vec![(42, 1)]);
//! ```

pub type Key = u64;
pub type Value = u64;

pub mod build;
pub mod clock;
pub mod config;
pub mod cooling;
mod counter;
pub mod error;
pub mod evolve;
pub mod index;
pub mod model;
pub mod node;
pub mod pla;
pub mod prob;
pub mod slot;

pub use config::{EvolveConfig, StatsMode};
pub use error::{ConfigError, Error, Result};
pub use evolve::{EvolveOutcome, Rebuild};
pub use index::{EvolveStats, Index, IndexStats, LookupTrace, ThreadLocalState};
pub use model::LinearModel;
pub use node::{validate_node, NodeKind, Violation};
