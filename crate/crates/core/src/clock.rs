//! Logical time. Each index counts the operations issued against it; one
//! insert or lookup advances its clock by one tick. Threads batch their
//! ticks locally and publish them every [`TICK_BATCH`] operations, so a
//! thread's own reading is exact and other threads lag by less than a batch.

/// Operations since the index was created.
pub type Tick = u64;

/// Local ticks a thread accumulates before publishing them.
pub const TICK_BATCH: u64 = 16;
