//! Slot cells and their version/lock word.
//!
//! Every slot owns a 64-bit word laid out as
//!
//! ```text
//!  63                     4   3 2    1        0
//! +------------------------+-----+--------+--------+
//! |        version         | tag | FROZEN | LOCKED |
//! +------------------------+-----+--------+--------+
//! ```
//!
//! Writers take `LOCKED` with a CAS against the exact word they read, so a
//! concurrent change makes the CAS fail and the writer re-reads. Every
//! unlock bumps the version. Readers never write: they load the word, the
//! payload, and the word again, and accept the read only if the two words
//! match and `LOCKED` was clear.
//!
//! `FROZEN` marks a slot that belongs to a subtree currently being replaced
//! by an evolve. Frozen contents are stable, so readers treat the bit like
//! any other version bit, but writers must restart from the root.

use std::sync::atomic::{fence, AtomicU64, Ordering};

use crossbeam_utils::Backoff;

use crate::node::Node;
use crate::{Key, Value};

pub(crate) const LOCKED: u64 = 0b01;
pub(crate) const FROZEN: u64 = 0b10;
const TAG_SHIFT: u32 = 2;
const TAG_MASK: u64 = 0b11 << TAG_SHIFT;
const VERSION_UNIT: u64 = 1 << 4;

const TAG_GAP: u64 = 0;
const TAG_ENTRY: u64 = 1;
const TAG_CHILD: u64 = 2;

/// What a slot holds, as seen by a validated read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotState {
    Gap,
    Entry { key: Key, value: Value },
    Child(*const Node),
}

/// A validated read of a slot together with the word it was read under.
#[derive(Debug, Clone, Copy)]
pub struct Snapshot {
    pub(crate) word: u64,
    pub state: SlotState,
}

impl Snapshot {
    #[inline]
    pub fn is_frozen(&self) -> bool {
        self.word & FROZEN != 0
    }

    #[inline]
    pub fn version(&self) -> u64 {
        self.word >> 4
    }
}

#[repr(C)]
pub struct Slot {
    word: AtomicU64,
    key: AtomicU64,
    payload: AtomicU64,
}

impl std::fmt::Debug for Slot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let snap = self.read();
        f.debug_struct("Slot")
            .field("version", &snap.version())
            .field("frozen", &snap.is_frozen())
            .field("state", &snap.state)
            .finish()
    }
}

impl Default for Slot {
    fn default() -> Self {
        Self::gap()
    }
}

#[inline]
fn tag_of(word: u64) -> u64 {
    (word & TAG_MASK) >> TAG_SHIFT
}

#[inline]
fn decode(word: u64, key: u64, payload: u64) -> SlotState {
    match tag_of(word) {
        TAG_GAP => SlotState::Gap,
        TAG_ENTRY => SlotState::Entry {
            key,
            value: payload,
        },
        _ => SlotState::Child(payload as usize as *const Node),
    }
}

impl Slot {
    pub fn gap() -> Self {
        Slot {
            word: AtomicU64::new(TAG_GAP << TAG_SHIFT),
            key: AtomicU64::new(0),
            payload: AtomicU64::new(0),
        }
    }

    pub fn entry(key: Key, value: Value) -> Self {
        Slot {
            word: AtomicU64::new(TAG_ENTRY << TAG_SHIFT),
            key: AtomicU64::new(key),
            payload: AtomicU64::new(value),
        }
    }

    /// A slot referencing `child`. Ownership of the allocation moves into
    /// the tree; the slot itself never frees it.
    pub fn child(child: *const Node) -> Self {
        Slot {
            word: AtomicU64::new(TAG_CHILD << TAG_SHIFT),
            key: AtomicU64::new(0),
            payload: AtomicU64::new(child as usize as u64),
        }
    }

    /// Optimistic read: retries until it observes an unlocked, unchanged word.
    #[inline]
    pub fn read(&self) -> Snapshot {
        let backoff = Backoff::new();
        loop {
            let w1 = self.word.load(Ordering::Acquire);
            if w1 & LOCKED != 0 {
                backoff.snooze();
                continue;
            }
            let key = self.key.load(Ordering::Relaxed);
            let payload = self.payload.load(Ordering::Acquire);
            fence(Ordering::Acquire);
            let w2 = self.word.load(Ordering::Relaxed);
            if w1 == w2 {
                return Snapshot {
                    word: w1,
                    state: decode(w1, key, payload),
                };
            }
            backoff.spin();
        }
    }

    /// Takes the writer lock iff the word still equals `seen.word` and the
    /// slot is neither locked nor frozen.
    #[inline]
    pub(crate) fn try_lock(&self, seen: &Snapshot) -> Option<SlotGuard<'_>> {
        if seen.word & (LOCKED | FROZEN) != 0 {
            return None;
        }
        self.word
            .compare_exchange(
                seen.word,
                seen.word | LOCKED,
                Ordering::Acquire,
                Ordering::Relaxed,
            )
            .ok()?;
        fence(Ordering::Release);
        Some(SlotGuard {
            slot: self,
            locked_word: seen.word | LOCKED,
        })
    }

    /// Sets `FROZEN` iff the word still equals `seen.word` (which must not be
    /// locked or frozen). Used on the parent slot of a subtree about to be
    /// replaced; failure means the subtree changed and the evolve abandons.
    pub(crate) fn try_freeze(&self, seen: &Snapshot) -> bool {
        if seen.word & (LOCKED | FROZEN) != 0 {
            return false;
        }
        self.word
            .compare_exchange(
                seen.word,
                seen.word | FROZEN,
                Ordering::AcqRel,
                Ordering::Relaxed,
            )
            .is_ok()
    }

    /// Freezes the slot, waiting out any in-flight writer, and returns the
    /// now-stable contents. Gives up with `None` if another evolve has
    /// already frozen it.
    pub(crate) fn freeze_exclusive(&self) -> Option<SlotState> {
        let backoff = Backoff::new();
        loop {
            let w = self.word.load(Ordering::Acquire);
            if w & FROZEN != 0 {
                return None;
            }
            if w & LOCKED != 0 {
                backoff.snooze();
                continue;
            }
            if self
                .word
                .compare_exchange(w, w | FROZEN, Ordering::AcqRel, Ordering::Relaxed)
                .is_ok()
            {
                let key = self.key.load(Ordering::Relaxed);
                let payload = self.payload.load(Ordering::Acquire);
                return Some(decode(w, key, payload));
            }
        }
    }

    /// Clears `FROZEN` without touching contents or version.
    pub(crate) fn unfreeze(&self) {
        self.word.fetch_and(!FROZEN, Ordering::AcqRel);
    }

    /// Replaces the child of a frozen slot and clears the freeze in one
    /// version bump. Caller must be the thread that froze the slot.
    pub(crate) fn publish_child(&self, child: *const Node) {
        let w = self.word.load(Ordering::Acquire);
        debug_assert!(w & FROZEN != 0 && w & LOCKED == 0);
        self.word.store(w | LOCKED, Ordering::Relaxed);
        fence(Ordering::Release);
        self.payload.store(child as usize as u64, Ordering::Release);
        let next = ((w >> 4) + 1) * VERSION_UNIT | (TAG_CHILD << TAG_SHIFT);
        self.word.store(next, Ordering::Release);
    }

    /// Reads without validation. Only sound with exclusive access to the
    /// tree (construction, drop, quiescent checks).
    pub(crate) fn load_exclusive(&self) -> SlotState {
        let w = self.word.load(Ordering::Acquire);
        decode(
            w,
            self.key.load(Ordering::Relaxed),
            self.payload.load(Ordering::Acquire),
        )
    }
}

/// Exclusive write access to one slot. Dropping the guard without writing
/// releases the lock and still bumps the version.
pub(crate) struct SlotGuard<'a> {
    slot: &'a Slot,
    locked_word: u64,
}

impl SlotGuard<'_> {
    fn release(&mut self, tag: u64) {
        let next = ((self.locked_word >> 4) + 1) * VERSION_UNIT | (tag << TAG_SHIFT);
        self.slot.word.store(next, Ordering::Release);
        self.locked_word = 0;
    }

    pub(crate) fn write_entry(mut self, key: Key, value: Value) {
        self.slot.key.store(key, Ordering::Relaxed);
        self.slot.payload.store(value, Ordering::Release);
        self.release(TAG_ENTRY);
    }

    pub(crate) fn write_child(mut self, child: *const Node) {
        self.slot.payload.store(child as usize as u64, Ordering::Release);
        self.release(TAG_CHILD);
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        if self.locked_word != 0 {
            let tag = tag_of(self.locked_word);
            self.release(tag);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_to_entry_bumps_version() {
        let s = Slot::gap();
        let snap = s.read();
        assert_eq!(snap.state, SlotState::Gap);
        let g = s.try_lock(&snap).unwrap();
        g.write_entry(7, 70);
        let after = s.read();
        assert_eq!(after.state, SlotState::Entry { key: 7, value: 70 });
        assert_eq!(after.version(), snap.version() + 1);
        assert_eq!(after.word & LOCKED, 0);
    }

    #[test]
    fn stale_snapshot_cannot_lock() {
        let s = Slot::gap();
        let stale = s.read();
        s.try_lock(&stale).unwrap().write_entry(1, 1);
        assert!(s.try_lock(&stale).is_none());
    }

    #[test]
    fn frozen_slot_rejects_writers_but_reads() {
        let s = Slot::entry(3, 30);
        assert_eq!(s.freeze_exclusive(), Some(SlotState::Entry { key: 3, value: 30 }));
        assert_eq!(s.freeze_exclusive(), None);
        let snap = s.read();
        assert!(snap.is_frozen());
        assert!(s.try_lock(&snap).is_none());
        s.unfreeze();
        let snap = s.read();
        assert!(!snap.is_frozen());
        assert!(s.try_lock(&snap).is_some());
    }

    #[test]
    fn dropped_guard_unlocks() {
        let s = Slot::gap();
        let snap = s.read();
        drop(s.try_lock(&snap).unwrap());
        let again = s.read();
        assert_eq!(again.state, SlotState::Gap);
        assert_eq!(again.version(), snap.version() + 1);
    }
}
