//! Striped counters that keep hot-path accounting off a single cache line.

use std::sync::atomic::{AtomicI64, Ordering};

use crossbeam_utils::CachePadded;

const STRIPES: usize = 32;

thread_local! {
    static STRIPE: usize = {
        static NEXT: std::sync::atomic::AtomicUsize = std::sync::atomic::AtomicUsize::new(0);
        NEXT.fetch_add(1, Ordering::Relaxed) % STRIPES
    };
}

/// A signed counter split over cache-padded stripes. Reads sum all stripes
/// and are only exact when writers are quiescent.
pub struct StripedCounter {
    stripes: Box<[CachePadded<AtomicI64>]>,
}

impl Default for StripedCounter {
    fn default() -> Self {
        StripedCounter {
            stripes: (0..STRIPES).map(|_| CachePadded::new(AtomicI64::new(0))).collect(),
        }
    }
}

impl std::fmt::Debug for StripedCounter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.get())
    }
}

impl StripedCounter {
    #[inline]
    pub fn add(&self, delta: i64) {
        let i = STRIPE.with(|s| *s);
        self.stripes[i].fetch_add(delta, Ordering::Relaxed);
    }

    pub fn get(&self) -> i64 {
        self.stripes.iter().map(|s| s.load(Ordering::Relaxed)).sum()
    }
}
