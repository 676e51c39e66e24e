//! The concurrent index: lookups, inserts, scans and statistics.

use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, AtomicU8, Ordering};

use crossbeam_epoch::{self as epoch, Guard};
use crossbeam_utils::Backoff;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::build::{check_sorted, child_slots, Builder};
use crate::clock::{Tick, TICK_BATCH};
use crate::config::{EvolveConfig, StatsMode};
use crate::cooling::CoolingPool;
use crate::counter::StripedCounter;
use crate::error::{Error, Result};
use crate::evolve::{EvolveOutcome, PathEntry, Rebuild};
use crate::node::{free_subtree, validate_node, Body, EvolveCause, Footprint, Node, NodeKind, NodePtr, Violation};
use crate::prob;
use crate::slot::{Slot, SlotState};
use crate::{Key, Value};

/// Path nodes remembered on the fast path; deeper nodes are not considered
/// for triggers.
const TRACKED_DEPTH: usize = 48;

/// Slots of the two-key node created by a conflicting insert: both keys
/// in the middle, one spare slot per side.
const CONFLICT_SLOTS: usize = 6;

/// Per-thread mutable state: the lookup sampling counter, the insert counter
/// used by the sampling statistics mode, and a private random stream.
#[derive(Debug, Clone)]
pub struct ThreadLocalState {
    pub skip_counter: u32,
    pub inserts: u64,
    /// Ticks not yet published to the index clock.
    pub pending_ticks: u64,
    pub rng: ChaCha8Rng,
}

impl ThreadLocalState {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        ThreadLocalState {
            skip_counter: 0,
            inserts: 0,
            pending_ticks: 0,
            rng,
        }
    }
}

thread_local! {
    static LOCAL: RefCell<Option<ThreadLocalState>> = const { RefCell::new(None) };
}

static THREAD_STREAMS: AtomicU64 = AtomicU64::new(1 << 32);

/// Instrumentation filled by [`Index::lookup_traced`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LookupTrace {
    /// Nodes visited, root included.
    pub depth: u32,
    /// Slot reads, one per non-compressed node.
    pub slot_probes: u32,
    /// Key comparisons inside a compressed node.
    pub packed_probes: u32,
    pub compressed: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    pub entry_count: u64,
    pub node_count: u64,
    pub max_depth: u32,
    /// Entry-weighted mean depth.
    pub avg_depth: f64,
    pub bytes_internal: u64,
    pub bytes_total: u64,
    pub hot_lookup_nodes: u64,
    pub compressed_nodes: u64,
}

/// Counts of structural events since the index was created.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvolveStats {
    pub insert_evolves: u64,
    pub lookup_evolves: u64,
    pub compressions: u64,
    pub decompressions: u64,
    pub abandoned: u64,
    pub skipped_large: u64,
    /// Lookup evolves skipped because the subtree was already flat or
    /// flattening would not reduce its depth.
    pub skipped_flat: u64,
    pub bytes_before_compress: u64,
    pub bytes_after_compress: u64,
    /// Per-node statistics counter writes on the insert path.
    pub counter_writes: u64,
}

#[derive(Default)]
pub(crate) struct Counters {
    insert_evolves: AtomicU64,
    lookup_evolves: AtomicU64,
    compressions: AtomicU64,
    decompressions: AtomicU64,
    abandoned: AtomicU64,
    skipped_large: AtomicU64,
    skipped_flat: AtomicU64,
    bytes_before_compress: AtomicU64,
    bytes_after_compress: AtomicU64,
    counter_writes: StripedCounter,
}

impl Counters {
    pub(crate) fn record(&self, kind: Rebuild, outcome: EvolveOutcome) {
        let c = match (outcome, kind) {
            (EvolveOutcome::Done, Rebuild::Expand) => &self.insert_evolves,
            (EvolveOutcome::Done, Rebuild::Flatten) => &self.lookup_evolves,
            (EvolveOutcome::Done, Rebuild::Compress) => &self.compressions,
            (EvolveOutcome::Done, Rebuild::Decompress) => &self.decompressions,
            (EvolveOutcome::Done, Rebuild::Full) => return,
            (EvolveOutcome::Abandoned, _) => &self.abandoned,
            (EvolveOutcome::SkippedLarge, _) => &self.skipped_large,
            (EvolveOutcome::SkippedFlat | EvolveOutcome::SkippedDepth, _) => &self.skipped_flat,
            (EvolveOutcome::SkippedKind, _) => return,
        };
        c.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn compressed_bytes(&self, before: u64, after: u64) {
        self.bytes_before_compress.fetch_add(before, Ordering::Relaxed);
        self.bytes_after_compress.fetch_add(after, Ordering::Relaxed);
    }

    fn snapshot(&self) -> EvolveStats {
        let l = |a: &AtomicU64| a.load(Ordering::Relaxed);
        EvolveStats {
            insert_evolves: l(&self.insert_evolves),
            lookup_evolves: l(&self.lookup_evolves),
            compressions: l(&self.compressions),
            decompressions: l(&self.decompressions),
            abandoned: l(&self.abandoned),
            skipped_large: l(&self.skipped_large),
            skipped_flat: l(&self.skipped_flat),
            bytes_before_compress: l(&self.bytes_before_compress),
            bytes_after_compress: l(&self.bytes_after_compress),
            counter_writes: self.counter_writes.get().max(0) as u64,
        }
    }
}

/// A concurrent ordered map from `u64` keys to `u64` values.
///
/// All operations take `&self`; share the index across threads with `Arc`.
pub struct Index {
    pub(crate) root: Slot,
    pub(crate) cfg: EvolveConfig,
    mode: AtomicU8,
    pub(crate) pool: CoolingPool,
    entries: StripedCounter,
    bytes_internal: StripedCounter,
    bytes_total: StripedCounter,
    pub(crate) counters: Counters,
    streams: AtomicU64,
    size_cap: AtomicU64,
    ticks: StripedCounter,
}

unsafe impl Send for Index {}
unsafe impl Sync for Index {}

impl std::fmt::Debug for Index {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Index")
            .field("entries", &self.entries.get())
            .field("mode", &self.mode())
            .finish()
    }
}

enum Step<'g> {
    Slot(&'g Slot),
    Packed(&'g crate::node::PackedNode),
}

#[inline]
fn step<'g>(node: &'g Node, key: Key) -> Step<'g> {
    match &node.body {
        Body::Slotted(a) => Step::Slot(a.slot_for(key)),
        Body::Flattened(g) => Step::Slot(g.segment_for(key).array.slot_for(key)),
        Body::Packed(p) => Step::Packed(p),
    }
}

/// Fixed-capacity record of the nodes on a descent.
struct Trail {
    nodes: [NodePtr; TRACKED_DEPTH],
    len: usize,
}

impl Trail {
    #[inline]
    fn new() -> Self {
        Trail {
            nodes: [std::ptr::null(); TRACKED_DEPTH],
            len: 0,
        }
    }
    #[inline]
    fn push(&mut self, n: NodePtr) {
        if self.len < TRACKED_DEPTH {
            self.nodes[self.len] = n;
            self.len += 1;
        }
    }
    fn iter<'g>(&self) -> impl Iterator<Item = &'g Node> + '_ {
        // Nodes stay alive while the caller's guard is held.
        self.nodes[..self.len].iter().map(|&p| unsafe { &*p })
    }
}

impl Index {
    pub fn new(cfg: EvolveConfig) -> Result<Self> {
        cfg.validate()?;
        let mut b = Builder::new(cfg.build_gap_factor, 0, EvolveCause::Build);
        let root = b.empty_root(cfg.initial_speed);
        let fp = unsafe { &*root }.footprint();
        let index = Index {
            root: Slot::child(root),
            mode: AtomicU8::new(cfg.stats_mode.to_u8()),
            size_cap: AtomicU64::new(cfg.index_size_cap),
            cfg,
            pool: CoolingPool::new(),
            entries: StripedCounter::default(),
            bytes_internal: StripedCounter::default(),
            bytes_total: StripedCounter::default(),
            counters: Counters::default(),
            streams: AtomicU64::new(0),
            ticks: StripedCounter::default(),
        };
        index.account(fp, Footprint::default());
        Ok(index)
    }

    /// Creates an index holding `entries`, which must be sorted by key with
    /// no duplicates.
    pub fn from_sorted(cfg: EvolveConfig, entries: &[(Key, Value)]) -> Result<Self> {
        let index = Self::new(cfg)?;
        if !entries.is_empty() {
            index.bulk_load(entries)?;
        }
        Ok(index)
    }

    pub fn config(&self) -> &EvolveConfig {
        &self.cfg
    }

    pub fn mode(&self) -> StatsMode {
        StatsMode::from_u8(self.mode.load(Ordering::Relaxed))
    }

    /// Switches the statistics mode used to trigger insert evolution.
    pub fn set_mode(&self, mode: StatsMode) {
        self.mode.store(mode.to_u8(), Ordering::Relaxed);
    }

    pub fn size_cap(&self) -> u64 {
        self.size_cap.load(Ordering::Relaxed)
    }

    /// Changes the footprint budget. Takes effect at the next evolve or
    /// [`Index::enforce_size_cap`] call.
    pub fn set_size_cap(&self, bytes: u64) {
        self.size_cap.store(bytes, Ordering::Relaxed);
    }

    /// A fresh per-thread state with its own random stream.
    pub fn worker(&self) -> ThreadLocalState {
        ThreadLocalState::new(self.cfg.seed, self.streams.fetch_add(1, Ordering::Relaxed))
    }

    /// Published ticks of the logical clock.
    pub fn now(&self) -> Tick {
        self.ticks.get() as Tick
    }

    /// The clock as seen by the thread owning `tls`.
    pub(crate) fn now_with(&self, tls: &ThreadLocalState) -> Tick {
        self.now() + tls.pending_ticks
    }

    #[inline]
    fn tick(&self, tls: &mut ThreadLocalState) {
        tls.pending_ticks += 1;
        if tls.pending_ticks >= TICK_BATCH {
            self.ticks.add(tls.pending_ticks as i64);
            tls.pending_ticks = 0;
        }
    }

    pub(crate) fn with_local<R>(&self, f: impl FnOnce(&mut ThreadLocalState) -> R) -> R {
        LOCAL.with(|cell| {
            let mut slot = cell.borrow_mut();
            let tls = slot.get_or_insert_with(|| {
                ThreadLocalState::new(self.cfg.seed, THREAD_STREAMS.fetch_add(1, Ordering::Relaxed))
            });
            f(tls)
        })
    }

    pub(crate) fn account(&self, added: Footprint, removed: Footprint) {
        self.bytes_internal
            .add(added.internal as i64 - removed.internal as i64);
        self.bytes_total.add(added.total as i64 - removed.total as i64);
    }

    /// Accounted footprint in bytes, maintained incrementally.
    pub fn bytes_total(&self) -> u64 {
        self.bytes_total.get().max(0) as u64
    }

    pub fn bytes_internal(&self) -> u64 {
        self.bytes_internal.get().max(0) as u64
    }

    /// Number of entries, maintained incrementally.
    pub fn len(&self) -> u64 {
        self.entries.get().max(0) as u64
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn evolve_stats(&self) -> EvolveStats {
        self.counters.snapshot()
    }

    pub fn cooling_pool(&self) -> &CoolingPool {
        &self.pool
    }

    /// Replaces the empty tree with one built from `entries`.
    pub fn bulk_load(&self, entries: &[(Key, Value)]) -> Result<()> {
        check_sorted(entries)?;
        let guard = epoch::pin();
        let snap = self.root.read();
        let SlotState::Child(old) = snap.state else {
            unreachable!("root slot always holds a node")
        };
        let old_node = unsafe { &*old };
        if self.len() != 0 || old_node.has_children() || !self.root.try_freeze(&snap) {
            return Err(Error::NotEmpty);
        }
        let mut has_entry = false;
        old_node.for_each_slot(|s| has_entry |= !matches!(s.read().state, SlotState::Gap));
        if has_entry {
            self.root.unfreeze();
            return Err(Error::NotEmpty);
        }
        let mut b = Builder::new(self.cfg.build_gap_factor, self.now(), EvolveCause::Build);
        let target = child_slots(entries.len(), self.cfg.build_gap_factor);
        let root = b.subtree(entries, target, 1, self.cfg.initial_speed);
        self.root.publish_child(root);
        let old_fp = old_node.footprint();
        unsafe {
            let p = old as usize;
            guard.defer_unchecked(move || drop(Box::from_raw(p as *mut Node)));
        }
        let mut added = Footprint::default();
        for &p in &b.created {
            added += unsafe { &*p }.footprint();
        }
        self.account(added, old_fp);
        self.entries.add(entries.len() as i64);
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0x636f_6f6c);
        for &p in &b.created {
            if p != root as NodePtr {
                let n = unsafe { &*p };
                self.pool
                    .maybe_enqueue(p, n.meta.min_key, &mut rng, self.cfg.cooling_probability);
            }
        }
        Ok(())
    }

    /// Descends to `key`, recording each node with the slot that led to it.
    pub(crate) fn path_to<'g>(&'g self, key: Key, _guard: &'g Guard) -> Vec<PathEntry<'g>> {
        let mut path = Vec::new();
        let mut slot = &self.root;
        loop {
            let snap = slot.read();
            let SlotState::Child(p) = snap.state else {
                break;
            };
            let node = unsafe { &*p };
            path.push(PathEntry {
                slot,
                snap,
                node,
                depth: path.len() as u32 + 1,
            });
            match step(node, key) {
                Step::Slot(s) => slot = s,
                Step::Packed(_) => break,
            }
        }
        path
    }

    fn evolve_node(
        &self,
        tls: &mut ThreadLocalState,
        key: Key,
        target: NodePtr,
        kind: Rebuild,
        guard: &Guard,
    ) -> EvolveOutcome {
        let path = self.path_to(key, guard);
        match path.iter().position(|p| p.node as *const Node == target) {
            Some(at) => self.evolve_at(tls, &path, at, kind, guard),
            None => {
                self.counters.record(kind, EvolveOutcome::Abandoned);
                EvolveOutcome::Abandoned
            }
        }
    }

    // ---- lookup ----

    pub fn get(&self, key: Key) -> Option<Value> {
        self.with_local(|tls| self.get_with(tls, key))
    }

    pub fn get_with(&self, tls: &mut ThreadLocalState, key: Key) -> Option<Value> {
        self.tick(tls);
        self.lookup_inner(Some(tls), key, None)
    }

    /// Lookup that reports how it descended. Never triggers evolution.
    pub fn lookup_traced(&self, key: Key) -> (Option<Value>, LookupTrace) {
        let mut t = LookupTrace::default();
        let v = self.lookup_inner(None, key, Some(&mut t));
        (v, t)
    }

    /// Number of nodes on the path to `key`, if present.
    pub fn depth_of(&self, key: Key) -> Option<u32> {
        match self.lookup_traced(key) {
            (Some(_), t) => Some(t.depth),
            _ => None,
        }
    }

    fn lookup_inner(
        &self,
        tls: Option<&mut ThreadLocalState>,
        key: Key,
        mut trace: Option<&mut LookupTrace>,
    ) -> Option<Value> {
        let guard = epoch::pin();
        let sample = match &tls {
            Some(t) if self.cfg.read_evolving_enabled => {
                let mut t = t.skip_counter;
                let due = prob::lookup_sample_due(&mut t, self.cfg.lookup_sample_period);
                Some((due, t))
            }
            _ => None,
        };
        let due = sample.is_some_and(|s| s.0);
        let mut trail = Trail::new();
        let mut slot = &self.root;
        let mut depth = 0u32;
        let mut probes = 0u32;
        let mut packed_probes = 0u32;
        let mut compressed = false;
        let result = loop {
            match slot.read().state {
                SlotState::Child(p) => {
                    let node = unsafe { &*p };
                    depth += 1;
                    if due {
                        trail.push(p);
                    }
                    match step(node, key) {
                        Step::Slot(s) => {
                            probes += 1;
                            slot = s;
                        }
                        Step::Packed(pk) => {
                            compressed = true;
                            break pk.get(key, &mut packed_probes);
                        }
                    }
                }
                SlotState::Entry { key: k, value } => break (k == key).then_some(value),
                SlotState::Gap => break None,
            }
        };
        if let Some(t) = trace.as_deref_mut() {
            *t = LookupTrace {
                depth,
                slot_probes: probes,
                packed_probes,
                compressed,
            };
        }
        if let (Some(tls), Some((_, counter))) = (tls, sample) {
            tls.skip_counter = counter;
            if due {
                self.lookup_trials(tls, key, &trail, &guard);
            }
        }
        result
    }

    fn lookup_trials(&self, tls: &mut ThreadLocalState, key: Key, trail: &Trail, guard: &Guard) {
        let now = self.now_with(tls);
        for node in trail.iter().skip(1) {
            if matches!(node.body, Body::Packed(_)) {
                break;
            }
            let d = prob::hot_lookup_trial(&node.meta, now, &mut tls.rng, &self.cfg);
            if d.evolve {
                self.evolve_node(tls, key, node, Rebuild::Flatten, guard);
                return;
            }
        }
    }

    // ---- insert ----

    /// Inserts `key`. Fails with [`Error::DuplicateKey`] if the key exists,
    /// unless upserts are enabled, in which case the value is replaced.
    pub fn insert(&self, key: Key, value: Value) -> Result<()> {
        self.with_local(|tls| self.insert_with(tls, key, value))
    }

    pub fn insert_with(&self, tls: &mut ThreadLocalState, key: Key, value: Value) -> Result<()> {
        self.tick(tls);
        let backoff = Backoff::new();
        let mode = self.mode();
        let weight = match mode {
            StatsMode::SharedCounter => 1,
            StatsMode::Sampling => {
                tls.inserts += 1;
                if tls.inserts % self.cfg.sampling_period as u64 == 0 {
                    self.cfg.sampling_period as u64
                } else {
                    0
                }
            }
            _ => 0,
        };
        'restart: loop {
            let guard = epoch::pin();
            let mut trail = Trail::new();
            let mut slot = &self.root;
            let mut snap = slot.read();
            let mut depth = 0u32;
            let mut parent: Option<&Node> = None;
            let conflict = loop {
                match snap.state {
                    SlotState::Child(p) => {
                        let node = unsafe { &*p };
                        parent = Some(node);
                        depth += 1;
                        trail.push(p);
                        match step(node, key) {
                            Step::Slot(s) => {
                                slot = s;
                                snap = slot.read();
                            }
                            Step::Packed(_) => {
                                self.evolve_node(tls, key, p, Rebuild::Decompress, &guard);
                                drop(guard);
                                backoff.snooze();
                                continue 'restart;
                            }
                        }
                    }
                    _ if snap.is_frozen() => {
                        drop(guard);
                        backoff.snooze();
                        continue 'restart;
                    }
                    SlotState::Gap => match slot.try_lock(&snap) {
                        Some(g) => {
                            g.write_entry(key, value);
                            break false;
                        }
                        None => snap = slot.read(),
                    },
                    SlotState::Entry { key: k, .. } if k == key => {
                        if !self.cfg.upsert {
                            return Err(Error::DuplicateKey(key));
                        }
                        match slot.try_lock(&snap) {
                            Some(g) => {
                                g.write_entry(key, value);
                                return Ok(());
                            }
                            None => snap = slot.read(),
                        }
                    }
                    SlotState::Entry { key: k, value: v } => match slot.try_lock(&snap) {
                        Some(g) => {
                            let pair = if k < key {
                                [(k, v), (key, value)]
                            } else {
                                [(key, value), (k, v)]
                            };
                            let mut b =
                                Builder::new(self.cfg.build_gap_factor, self.now_with(tls), EvolveCause::Build);
                            let range = parent
                                .and_then(|n| n.routed_range(slot))
                                .unwrap_or((0, Key::MAX));
                            // The new child starts with its key share of the parent's speed.
                            let speed = parent.map_or(self.cfg.initial_speed, |n| {
                                n.meta.speed * pair.len() as f64 / n.meta.build_num.max(1) as f64
                            });
                            let child = b.subtree_open(&pair, CONFLICT_SLOTS, depth + 1, speed, range);
                            g.write_child(child);
                            self.account(unsafe { &*child }.footprint(), Footprint::default());
                            break true;
                        }
                        None => snap = slot.read(),
                    },
                }
            };
            self.entries.add(1);
            match mode {
                StatsMode::Probability if conflict => {
                    let now = self.now_with(tls);
                    for node in trail.iter() {
                        if prob::on_conflict(&node.meta, now, &mut tls.rng, &self.cfg).evolve {
                            self.evolve_node(tls, key, node, Rebuild::Expand, &guard);
                            break;
                        }
                    }
                }
                StatsMode::SharedCounter | StatsMode::Sampling if weight > 0 => {
                    let mut writes = 0;
                    for node in trail.iter() {
                        node.meta.inserts.fetch_add(weight, Ordering::Relaxed);
                        writes += 1;
                        if conflict {
                            node.meta.conflicts.fetch_add(weight, Ordering::Relaxed);
                            writes += 1;
                        }
                    }
                    self.counters.counter_writes.add(writes);
                    for node in trail.iter() {
                        let m = &node.meta;
                        let fire = prob::counter_trigger(
                            m.build_num,
                            m.inserts.load(Ordering::Relaxed),
                            m.conflicts.load(Ordering::Relaxed),
                            &self.cfg,
                        );
                        if fire {
                            self.evolve_node(tls, key, node, Rebuild::Expand, &guard);
                            break;
                        }
                    }
                }
                _ => {}
            }
            return Ok(());
        }
    }

    // ---- scan ----

    /// Up to `count` entries with key `>= start`, ascending.
    pub fn range_scan(&self, start: Key, count: usize) -> Vec<(Key, Value)> {
        let mut out = Vec::with_capacity(count.min(1 << 16));
        if count == 0 {
            return out;
        }
        let _guard = epoch::pin();
        if let SlotState::Child(p) = self.root.read().state {
            scan_node(unsafe { &*p }, Some(start), count, &mut out);
        }
        out
    }

    /// Every entry in key order.
    pub fn to_vec(&self) -> Vec<(Key, Value)> {
        self.range_scan(0, usize::MAX)
    }

    // ---- maintenance ----

    /// Full-tree statistics from a traversal.
    pub fn stats(&self) -> IndexStats {
        let _guard = epoch::pin();
        let mut s = IndexStats::default();
        let mut depth_sum = 0u64;
        if let SlotState::Child(p) = self.root.read().state {
            stats_node(unsafe { &*p }, 1, &mut s, &mut depth_sum);
        }
        s.avg_depth = if s.entry_count == 0 {
            0.0
        } else {
            depth_sum as f64 / s.entry_count as f64
        };
        s
    }

    /// Checks every structural invariant over the whole tree.
    pub fn validate(&self) -> Vec<Violation> {
        let _guard = epoch::pin();
        match self.root.read().state {
            SlotState::Child(p) => validate_node(unsafe { &*p }),
            _ => Vec::new(),
        }
    }

    /// Kind of every node in the tree, in pre-order.
    pub fn node_kinds(&self) -> Vec<NodeKind> {
        let _guard = epoch::pin();
        let mut out = Vec::new();
        if let SlotState::Child(p) = self.root.read().state {
            kinds(unsafe { &*p }, &mut out);
        }
        out
    }

    /// Bulk-rebuilds the whole tree from its current contents. Concurrent
    /// writers wait while the rebuild runs.
    pub fn rebuild(&self) -> EvolveOutcome {
        let guard = epoch::pin();
        self.with_local(|tls| {
            let path = self.path_to(0, &guard);
            self.evolve_at(tls, &path, 0, Rebuild::Full, &guard)
        })
    }

    /// Forces one evolve of the node at `depth` (1 = root) on the path to
    /// `key`, bypassing the probability models.
    pub fn force_evolve(&self, key: Key, depth: usize, kind: Rebuild) -> EvolveOutcome {
        let guard = epoch::pin();
        self.with_local(|tls| {
            let path = self.path_to(key, &guard);
            if depth == 0 || depth > path.len() {
                return EvolveOutcome::SkippedKind;
            }
            self.evolve_at(tls, &path, depth - 1, kind, &guard)
        })
    }

    /// Pointer identity of the node at `depth` on the path to `key`.
    pub fn node_id_at(&self, key: Key, depth: usize) -> Option<usize> {
        let guard = epoch::pin();
        let path = self.path_to(key, &guard);
        path.get(depth.checked_sub(1)?).map(|p| p.node as *const Node as usize)
    }
}

fn scan_slots(slots: &[Slot], first: usize, bound: Option<Key>, count: usize, out: &mut Vec<(Key, Value)>) {
    for (i, s) in slots.iter().enumerate().skip(first) {
        if out.len() >= count {
            return;
        }
        let b = if i == first { bound } else { None };
        match s.read().state {
            SlotState::Gap => {}
            SlotState::Entry { key, value } => {
                if b.is_none_or(|b| key >= b) {
                    out.push((key, value));
                }
            }
            SlotState::Child(c) => scan_node(unsafe { &*c }, b, count, out),
        }
    }
}

fn scan_node(node: &Node, bound: Option<Key>, count: usize, out: &mut Vec<(Key, Value)>) {
    match &node.body {
        Body::Slotted(a) => {
            let first = bound.map_or(0, |b| a.index_for(b));
            scan_slots(&a.slots, first, bound, count, out);
        }
        Body::Flattened(g) => {
            let first = bound.map_or(0, |b| g.dispatch(b));
            for (i, seg) in g.segments.iter().enumerate().skip(first) {
                let b = if i == first { bound } else { None };
                let start = b.map_or(0, |b| seg.array.index_for(b));
                scan_slots(&seg.array.slots, start, b, count, out);
                if out.len() >= count {
                    return;
                }
            }
        }
        Body::Packed(p) => {
            let first = bound.map_or(0, |b| p.lower_bound(b));
            for i in first..p.keys.len() {
                if out.len() >= count {
                    return;
                }
                out.push((p.keys[i], p.values[i]));
            }
        }
    }
}

fn stats_node(node: &Node, depth: u32, s: &mut IndexStats, depth_sum: &mut u64) {
    s.node_count += 1;
    s.max_depth = s.max_depth.max(depth);
    let fp = node.footprint();
    s.bytes_internal += fp.internal;
    s.bytes_total += fp.total;
    match &node.body {
        Body::Packed(p) => {
            s.compressed_nodes += 1;
            s.entry_count += p.keys.len() as u64;
            *depth_sum += depth as u64 * p.keys.len() as u64;
        }
        body => {
            if matches!(body, Body::Flattened(_)) {
                s.hot_lookup_nodes += 1;
            }
            node.for_each_slot(|slot| match slot.read().state {
                SlotState::Gap => {}
                SlotState::Entry { .. } => {
                    s.entry_count += 1;
                    *depth_sum += depth as u64;
                }
                SlotState::Child(c) => stats_node(unsafe { &*c }, depth + 1, s, depth_sum),
            });
        }
    }
}

fn kinds(node: &Node, out: &mut Vec<NodeKind>) {
    out.push(node.kind());
    node.for_each_slot(|s| {
        if let SlotState::Child(c) = s.read().state {
            kinds(unsafe { &*c }, out);
        }
    });
}

impl Drop for Index {
    fn drop(&mut self) {
        if let SlotState::Child(p) = self.root.load_exclusive() {
            unsafe { free_subtree(p as *mut Node) };
        }
    }
}
