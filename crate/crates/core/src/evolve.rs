//! Subtree replacement: adaptive expansion, flattening, compression and
//! decompression.
//!
//! Every transformation follows the same steps. The parent slot is frozen
//! against the snapshot the caller descended through, then every slot of
//! the subtree is frozen in order while its entries are collected. Writers
//! that meet a frozen slot restart from the root; readers keep using the old
//! nodes. The new subtree is published with one pointer swap and the old
//! nodes are retired to the epoch collector.

use crossbeam_epoch::Guard;
use serde::{Deserialize, Serialize};

use crate::build::{child_slots, Builder};
use crate::clock::Tick;
use crate::config::EvolveConfig;
use crate::index::{Index, ThreadLocalState};
use crate::node::{free_subtree, Body, EvolveCause, Footprint, Node, NodeMeta, NodePtr};
use crate::pla;
use crate::prob;
use crate::slot::{Slot, SlotState, Snapshot};
use crate::{Key, Value};

/// Expansion factor for a node of `build_num` keys.
pub fn expansion_gamma(build_num: u64, theta: f64) -> f64 {
    if build_num >= 1_000_000 {
        theta
    } else if build_num >= 100_000 {
        2.0 * theta
    } else {
        5.0 * theta
    }
}

/// `γ·ratio·n` when `ratio ≥ 1`, else `γ·n`, rounded up to at least `n + 1`.
pub fn compute_expand_size(build_num: u64, ratio: f64, theta: f64) -> usize {
    let gamma = expansion_gamma(build_num, theta);
    let n = build_num as f64;
    let size = if ratio >= 1.0 { gamma * ratio * n } else { gamma * n };
    (size.ceil() as u64).max(build_num + 1) as usize
}

/// `speed_now / speed_prev`, or 1 when there is no previous speed or
/// adaptive expansion is off. Capped at `max_speed_ratio`.
pub fn speed_ratio(speed_now: f64, speed_prev: f64, cfg: &EvolveConfig) -> f64 {
    if !cfg.adaptive_expansion || !(speed_prev > 0.0) {
        return 1.0;
    }
    (speed_now / speed_prev).min(cfg.max_speed_ratio)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpandPlan {
    pub expand_size: usize,
    pub speed: f64,
    pub speed_ratio: f64,
    pub gamma: f64,
}

/// Sizes the rebuild of a node that now holds `current` keys.
pub fn plan_expand(meta: &NodeMeta, current: u64, now: Tick, cfg: &EvolveConfig) -> ExpandPlan {
    let speed = prob::update_speed(meta, current, now);
    let ratio = speed_ratio(speed, meta.speed, cfg);
    let n = current.max(1);
    ExpandPlan {
        expand_size: compute_expand_size(n, ratio, cfg.theta),
        speed,
        speed_ratio: ratio,
        gamma: expansion_gamma(n, cfg.theta),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rebuild {
    Expand,
    Flatten,
    Compress,
    Decompress,
    /// Plain bulk rebuild of any subtree, ignoring the size limit.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvolveOutcome {
    Done,
    /// The parent slot or part of the subtree changed concurrently.
    Abandoned,
    /// The subtree holds at least `max_evolve_keys` keys.
    SkippedLarge,
    /// Flattening a subtree that is already a single level.
    SkippedFlat,
    /// Flattening would not reduce the average entry depth.
    SkippedDepth,
    /// The node's form does not admit this transformation.
    SkippedKind,
}

/// One step of a root-to-node descent.
pub(crate) struct PathEntry<'g> {
    pub slot: &'g Slot,
    pub snap: Snapshot,
    pub node: &'g Node,
    /// 1 for the root node.
    pub depth: u32,
}

struct Collected {
    entries: Vec<(Key, Value)>,
    nodes: Vec<NodePtr>,
    footprint: Footprint,
    depth_sum: u64,
}

enum Stop {
    Contended,
    TooLarge,
}

struct Collector {
    out: Collected,
    limit: u64,
    frozen: usize,
}

impl Collector {
    fn node(&mut self, node: &Node, depth: u64) -> Result<(), Stop> {
        self.out.nodes.push(node);
        self.out.footprint += node.footprint();
        match &node.body {
            Body::Slotted(a) => self.slots(&a.slots, depth),
            Body::Flattened(g) => {
                for s in g.segments.iter() {
                    self.slots(&s.array.slots, depth)?;
                }
                Ok(())
            }
            Body::Packed(p) => {
                for (k, v) in p.keys.iter().zip(p.values.iter()) {
                    self.push(*k, *v, depth)?;
                }
                Ok(())
            }
        }
    }

    fn push(&mut self, k: Key, v: Value, depth: u64) -> Result<(), Stop> {
        self.out.entries.push((k, v));
        self.out.depth_sum += depth;
        if self.out.entries.len() as u64 >= self.limit {
            return Err(Stop::TooLarge);
        }
        Ok(())
    }

    fn slots(&mut self, slots: &[Slot], depth: u64) -> Result<(), Stop> {
        for s in slots {
            let state = s.freeze_exclusive().ok_or(Stop::Contended)?;
            self.frozen += 1;
            match state {
                SlotState::Gap => {}
                SlotState::Entry { key, value } => self.push(key, value, depth)?,
                // Frozen by us, so the child cannot be replaced or freed.
                SlotState::Child(c) => self.node(unsafe { &*c }, depth + 1)?,
            }
        }
        Ok(())
    }
}

/// Clears the first `count` freezes taken by a collector over `node`, in the
/// same order. Those slots are stable, so the walk retraces the same path.
fn unfreeze_prefix(node: &Node, count: &mut usize) {
    let arrays = node.arrays();
    for a in arrays {
        for s in a.slots.iter() {
            if *count == 0 {
                return;
            }
            *count -= 1;
            if let SlotState::Child(c) = s.read().state {
                unfreeze_prefix(unsafe { &*c }, count);
            }
            s.unfreeze();
        }
    }
}

/// Entry-weighted depth sum of an exclusively owned subtree.
fn depth_sum(node: &Node, depth: u64) -> u64 {
    let mut sum = 0;
    match &node.body {
        Body::Packed(p) => sum += depth * p.keys.len() as u64,
        _ => node.for_each_slot(|s| match s.load_exclusive() {
            SlotState::Gap => {}
            SlotState::Entry { .. } => sum += depth,
            SlotState::Child(c) => sum += depth_sum(unsafe { &*c }, depth + 1),
        }),
    }
    sum
}

struct SendPtr(*mut Node);
unsafe impl Send for SendPtr {}

/// Key interval the parent of `path[at]` routes to it; `None` at the root.
fn routed_range(path: &[PathEntry<'_>], at: usize) -> Option<(Key, Key)> {
    let parent = path.get(at.checked_sub(1)?)?;
    parent.node.routed_range(path[at].slot)
}

impl Index {
    /// Replaces the subtree rooted at `path[at]` according to `kind`.
    pub(crate) fn evolve_at(
        &self,
        tls: &mut ThreadLocalState,
        path: &[PathEntry<'_>],
        at: usize,
        kind: Rebuild,
        guard: &Guard,
    ) -> EvolveOutcome {
        let outcome = self.evolve_inner(tls, path, at, kind, guard);
        self.counters.record(kind, outcome);
        if outcome == EvolveOutcome::Done && kind != Rebuild::Compress {
            self.enforce_size_cap_with(tls, guard);
        }
        outcome
    }

    fn evolve_inner(
        &self,
        tls: &mut ThreadLocalState,
        path: &[PathEntry<'_>],
        at: usize,
        kind: Rebuild,
        guard: &Guard,
    ) -> EvolveOutcome {
        let cfg = &self.cfg;
        let e = &path[at];
        let node = e.node;
        let admissible = match (kind, &node.body) {
            (Rebuild::Full, _) | (Rebuild::Decompress, Body::Packed(_)) => true,
            (Rebuild::Decompress, _) | (_, Body::Packed(_)) => false,
            (Rebuild::Compress, Body::Flattened(_)) => false,
            (Rebuild::Flatten, _) => at > 0,
            _ => true,
        };
        if !admissible {
            return EvolveOutcome::SkippedKind;
        }
        if kind == Rebuild::Flatten && !node.has_children() {
            return EvolveOutcome::SkippedFlat;
        }
        let limit = if kind == Rebuild::Full {
            u64::MAX
        } else {
            cfg.max_evolve_keys
        };
        if node.meta.build_num >= limit {
            return EvolveOutcome::SkippedLarge;
        }
        if !e.slot.try_freeze(&e.snap) {
            return EvolveOutcome::Abandoned;
        }
        let mut c = Collector {
            out: Collected {
                entries: Vec::with_capacity(node.meta.build_num as usize * 2),
                nodes: Vec::new(),
                footprint: Footprint::default(),
                depth_sum: 0,
            },
            limit,
            frozen: 0,
        };
        let abort = |c: &Collector, outcome| {
            let mut n = c.frozen;
            unfreeze_prefix(node, &mut n);
            e.slot.unfreeze();
            outcome
        };
        match c.node(node, 1) {
            Ok(()) => {}
            Err(Stop::Contended) => return abort(&c, EvolveOutcome::Abandoned),
            Err(Stop::TooLarge) => return abort(&c, EvolveOutcome::SkippedLarge),
        }
        let collected = c.out;
        if collected.entries.is_empty() {
            let mut n = usize::MAX;
            unfreeze_prefix(node, &mut n);
            e.slot.unfreeze();
            return EvolveOutcome::SkippedKind;
        }
        debug_assert!(collected.entries.windows(2).all(|w| w[0].0 < w[1].0));

        let now = self.now_with(tls);
        let entries = &collected.entries;
        let current = entries.len() as u64;
        let cause = match kind {
            Rebuild::Expand | Rebuild::Decompress => EvolveCause::InsertEvolve,
            Rebuild::Full => EvolveCause::Build,
            Rebuild::Flatten => EvolveCause::LookupEvolve,
            Rebuild::Compress => EvolveCause::Compress,
        };
        let mut b = Builder::new(cfg.build_gap_factor, now, cause);
        let new_root = match kind {
            Rebuild::Expand => {
                let plan = plan_expand(&node.meta, current, now, cfg);
                match routed_range(path, at) {
                    Some(range) => b.subtree_open(entries, plan.expand_size, e.depth, plan.speed, range),
                    None => b.subtree(entries, plan.expand_size, e.depth, plan.speed),
                }
            }
            Rebuild::Flatten => {
                let plan = plan_expand(&node.meta, current, now, cfg);
                let root = b.flattened(
                    entries,
                    plan.expand_size,
                    cfg.flatten_segments,
                    e.depth,
                    plan.speed,
                );
                let new_sum = depth_sum(unsafe { &*root }, 1);
                if new_sum >= collected.depth_sum {
                    unsafe { free_subtree(root) };
                    let mut n = usize::MAX;
                    unfreeze_prefix(node, &mut n);
                    e.slot.unfreeze();
                    return EvolveOutcome::SkippedDepth;
                }
                root
            }
            Rebuild::Compress => {
                let meta = NodeMeta::new(current, now, node.meta.speed, cause, e.depth, entries[0].0);
                b.alloc(Node {
                    meta,
                    body: Body::Packed(pla::pack(entries, cfg.pla_epsilon)),
                })
            }
            Rebuild::Decompress | Rebuild::Full => b.subtree(
                entries,
                child_slots(entries.len(), cfg.build_gap_factor),
                e.depth,
                node.meta.speed,
            ),
        };

        e.slot.publish_child(new_root);

        let mut added = Footprint::default();
        for &p in &b.created {
            added += unsafe { &*p }.footprint();
        }
        self.account(added, collected.footprint);
        if kind == Rebuild::Compress {
            self.counters.compressed_bytes(collected.footprint.total, added.total);
        }

        for &old in &collected.nodes {
            let p = SendPtr(old as *mut Node);
            // Unlinked above; readers pinned before the swap keep it alive.
            unsafe {
                guard.defer_unchecked(move || {
                    let p = p;
                    drop(Box::from_raw(p.0));
                })
            };
        }

        self.pool.remove_all(
            collected
                .nodes
                .iter()
                .copied()
                .chain(path[..at].iter().map(|p| p.node as NodePtr)),
        );
        if kind != Rebuild::Compress {
            for &p in &b.created {
                if at == 0 && p == new_root as NodePtr {
                    continue;
                }
                let n = unsafe { &*p };
                self.pool
                    .maybe_enqueue(p, n.meta.min_key, &mut tls.rng, cfg.cooling_probability);
            }
        }
        EvolveOutcome::Done
    }

    /// Compresses the earliest pool members while the footprint exceeds the
    /// size cap. Returns how many nodes were compressed.
    pub fn enforce_size_cap(&self) -> usize {
        let guard = crossbeam_epoch::pin();
        self.with_local(|tls| self.enforce_size_cap_with(tls, &guard))
    }

    pub(crate) fn enforce_size_cap_with(&self, tls: &mut ThreadLocalState, guard: &Guard) -> usize {
        let cap = self.size_cap();
        if cap == u64::MAX {
            return 0;
        }
        let mut done = 0;
        while self.bytes_total() > cap {
            let Some(entry) = self.pool.pop_front() else {
                break;
            };
            let path = self.path_to(entry.locator, guard);
            let Some(at) = path.iter().position(|p| p.node as *const Node == entry.ptr()) else {
                continue;
            };
            if at == 0 {
                continue;
            }
            if self.evolve_at(tls, &path, at, Rebuild::Compress, guard) == EvolveOutcome::Done {
                done += 1;
            }
        }
        done
    }
}
