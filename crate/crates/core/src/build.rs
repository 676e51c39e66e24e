//! Bulk construction of precise-placement subtrees.
//!
//! A node's model is picked from a small candidate set (endpoint
//! interpolation, a minimum-conflict-gap fit, and two interior key-pair
//! fits) by conflict degree. Keys that still collide in one slot are built
//! recursively into a child node.

use crate::clock::Tick;
use crate::error::{Error, Result};
use crate::model::LinearModel;
use crate::node::{
    Body, EvolveCause, FlatGroup, Node, NodeMeta, NodePtr, Segment, SlotArray, Subtree,
};
use crate::slot::Slot;
use crate::{Key, Value};

/// Hard limit on subtree height during construction.
pub const MAX_BUILD_DEPTH: u32 = 128;
/// Smallest slot array any node is given.
pub const MIN_SLOTS: usize = 4;

pub(crate) trait KeySeq {
    fn count(&self) -> usize;
    fn key(&self, i: usize) -> Key;
}

impl KeySeq for [Key] {
    fn count(&self) -> usize {
        self.len()
    }
    fn key(&self, i: usize) -> Key {
        self[i]
    }
}

impl KeySeq for [(Key, Value)] {
    fn count(&self) -> usize {
        self.len()
    }
    fn key(&self, i: usize) -> Key {
        self[i].0
    }
}

/// Conflict statistics of a model over a key set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ConflictProfile {
    /// Maximum number of keys mapped to one slot.
    pub degree: usize,
    /// Number of slots receiving two or more keys.
    pub conflicting_slots: usize,
}

fn profile_of<K: KeySeq + ?Sized>(model: &LinearModel, keys: &K, n: usize) -> ConflictProfile {
    let mut degree = 0;
    let mut conflicting_slots = 0;
    let mut i = 0;
    let len = keys.count();
    while i < len {
        let p = model.predict(keys.key(i), n);
        let mut j = i + 1;
        while j < len && model.predict(keys.key(j), n) == p {
            j += 1;
        }
        degree = degree.max(j - i);
        if j - i > 1 {
            conflicting_slots += 1;
        }
        i = j;
    }
    ConflictProfile {
        degree,
        conflicting_slots,
    }
}

/// Conflict degree and conflicting-slot count of `model` on sorted `keys`.
pub fn conflict_profile(model: &LinearModel, keys: &[Key], num_slots: usize) -> ConflictProfile {
    profile_of(model, keys, num_slots)
}

/// Maps the smallest key to slot 0 and the largest to the last slot.
pub fn endpoint_model(keys: &[Key], num_slots: usize) -> LinearModel {
    endpoint_of(keys, num_slots)
}

fn endpoint_of<K: KeySeq + ?Sized>(keys: &K, n: usize) -> LinearModel {
    let len = keys.count();
    let lo = keys.key(0);
    if len == 1 {
        return LinearModel::anchored(lo, 0.0, (n / 2) as f64);
    }
    LinearModel::through(lo, 0.5, keys.key(len - 1), n as f64 - 0.5)
}

/// Fit that bounds the number of keys per slot by finding the smallest
/// trim `d` such that every window of `d` consecutive keys spans at least
/// one slot width.
fn min_gap_fit<K: KeySeq + ?Sized>(keys: &K, n: usize) -> Option<LinearModel> {
    let len = keys.count();
    if len < 3 || n < 3 {
        return None;
    }
    let span = |a: usize, b: usize| (keys.key(b) - keys.key(a)) as f64;
    let mut d = 1usize;
    let mut ut = span(d, len - 1 - d) / (n - 2) as f64 + 1e-6;
    let mut i = 0;
    while i + d < len {
        while i + d < len && span(i, i + d) >= ut {
            i += 1;
        }
        if i + d >= len {
            break;
        }
        d += 1;
        if d * 3 > len {
            return None;
        }
        ut = span(d, len - 1 - d) / (n - 2) as f64 + 1e-6;
    }
    let slope = 1.0 / ut;
    let mid = span(d, len - 1 - d) / 2.0;
    let intercept = n as f64 / 2.0 - slope * mid;
    Some(LinearModel::anchored(keys.key(d), slope, intercept))
}

/// Line through two interior keys at their proportional slot positions.
fn pair_fit<K: KeySeq + ?Sized>(keys: &K, n: usize, num: usize, den: usize) -> Option<LinearModel> {
    let len = keys.count();
    let (a, b) = (len * num / den, len * (den - num) / den);
    if len < 4 || a >= b || b >= len {
        return None;
    }
    let (ka, kb) = (keys.key(a), keys.key(b));
    if ka == kb {
        return None;
    }
    let pa = n as f64 * a as f64 / len as f64;
    let pb = n as f64 * b as f64 / len as f64;
    Some(LinearModel::through(ka, pa, kb, pb))
}

fn choose_of<K: KeySeq + ?Sized>(keys: &K, n: usize) -> LinearModel {
    let endpoint = endpoint_of(keys, n);
    let candidates = [
        Some(endpoint),
        min_gap_fit(keys, n),
        pair_fit(keys, n, 1, 3),
        pair_fit(keys, n, 1, 4),
    ];
    let mut best = endpoint;
    let mut best_profile = profile_of(&endpoint, keys, n);
    for m in candidates.into_iter().flatten().skip(1) {
        let p = profile_of(&m, keys, n);
        if (p, m.slope) < (best_profile, best.slope) {
            best = m;
            best_profile = p;
        }
    }
    best
}

/// Picks the candidate model with the lowest conflict degree, then fewest
/// conflicting slots, then smallest slope.
pub fn choose_model(keys: &[Key], target_slots: usize) -> LinearModel {
    assert!(!keys.is_empty(), "choose_model needs at least one key");
    choose_of(keys, target_slots.max(1))
}

/// Indices at which the `segments - 1` widest adjacent-key gaps begin a new
/// segment, in increasing order. Ties go to the earlier gap.
pub fn split_points(keys: &[Key], segments: usize) -> Vec<usize> {
    let want = segments.saturating_sub(1).min(keys.len().saturating_sub(1));
    // (gap, index) kept sorted by gap descending, index ascending.
    let mut top: Vec<(Key, usize)> = Vec::with_capacity(want + 1);
    if want == 0 {
        return Vec::new();
    }
    for i in 1..keys.len() {
        let g = keys[i] - keys[i - 1];
        if top.len() == want && g <= top[want - 1].0 {
            continue;
        }
        let pos = top.partition_point(|&(tg, _)| tg >= g);
        top.insert(pos, (g, i));
        top.truncate(want);
    }
    let mut out: Vec<usize> = top.into_iter().map(|(_, i)| i).collect();
    out.sort_unstable();
    out
}

/// Least-squares line from key to rank, anchored at the first key.
pub fn least_squares(keys: &[Key]) -> LinearModel {
    let n = keys.len();
    let anchor = keys[0];
    if n == 1 {
        return LinearModel::anchored(anchor, 0.0, 0.0);
    }
    let nf = n as f64;
    let xs = keys.iter().map(|&k| (k - anchor) as f64);
    let mean_x = xs.clone().sum::<f64>() / nf;
    let mean_y = (nf - 1.0) / 2.0;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, x) in xs.enumerate() {
        let dx = x - mean_x;
        sxy += dx * (i as f64 - mean_y);
        sxx += dx * dx;
    }
    let slope = if sxx > 0.0 { (sxy / sxx).max(0.0) } else { 0.0 };
    LinearModel::anchored(anchor, slope, mean_y - slope * mean_x)
}

/// Slot count for a child holding `m` colliding keys.
#[inline]
pub fn child_slots(m: usize, gap_factor: f64) -> usize {
    ((m as f64 * gap_factor).ceil() as usize).max(MIN_SLOTS)
}

/// Shared state of one (possibly recursive) construction.
pub(crate) struct Builder {
    pub gap_factor: f64,
    pub now: Tick,
    pub cause: EvolveCause,
    pub created: Vec<NodePtr>,
}

impl Builder {
    pub fn new(gap_factor: f64, now: Tick, cause: EvolveCause) -> Self {
        Builder {
            gap_factor,
            now,
            cause,
            created: Vec::new(),
        }
    }

    pub(crate) fn alloc(&mut self, node: Node) -> *mut Node {
        let p = Box::into_raw(Box::new(node));
        self.created.push(p);
        p
    }

    /// Places `entries` into `array` by its model, recursing on collisions.
    fn fill(
        &mut self,
        array: &SlotArray,
        entries: &[(Key, Value)],
        depth: u32,
        speed: f64,
        total: usize,
    ) -> Vec<Slot> {
        let n = array.slots.len();
        let mut slots: Vec<Slot> = (0..n).map(|_| Slot::gap()).collect();
        let mut i = 0;
        while i < entries.len() {
            let p = array.index_for(entries[i].0);
            let mut j = i + 1;
            while j < entries.len() && array.index_for(entries[j].0) == p {
                j += 1;
            }
            let group = &entries[i..j];
            slots[p] = if group.len() == 1 {
                Slot::entry(group[0].0, group[0].1)
            } else {
                let share = speed * group.len() as f64 / total.max(1) as f64;
                let child = self.subtree(
                    group,
                    child_slots(group.len(), self.gap_factor),
                    depth + 1,
                    share,
                );
                Slot::child(child)
            };
            i = j;
        }
        slots
    }

    /// Builds a Normal node (and its children) over sorted, unique,
    /// non-empty `entries`.
    pub fn subtree(
        &mut self,
        entries: &[(Key, Value)],
        target_slots: usize,
        depth: u32,
        speed: f64,
    ) -> *mut Node {
        assert!(
            depth <= MAX_BUILD_DEPTH,
            "build exceeded depth {MAX_BUILD_DEPTH} at keys {:?}..{:?} ({} keys)",
            entries.first().map(|e| e.0),
            entries.last().map(|e| e.0),
            entries.len()
        );
        debug_assert!(!entries.is_empty());
        let n = target_slots.max(MIN_SLOTS);
        let mut model = choose_of(entries, n);
        if entries.len() > 1 && profile_of(&model, entries, n).degree == entries.len() {
            model = endpoint_of(entries, n);
        }
        let mut array = SlotArray::with_gaps(model, n);
        array.slots = self
            .fill(&array, entries, depth, speed, entries.len())
            .into_boxed_slice();
        let meta = NodeMeta::new(
            entries.len() as u64,
            self.now,
            speed,
            self.cause,
            depth,
            entries[0].0,
        );
        self.alloc(Node {
            meta,
            body: Body::Slotted(array),
        })
    }

    /// Like [`Builder::subtree`], but for a node that will keep receiving
    /// inserts from `range`, the inclusive key interval its parent slot
    /// routes to it. Keys beyond the current span are expected about one
    /// mean key spacing out on each side, so that much room (clipped to
    /// `range`) is reserved at both edges. The inner model is chosen
    /// exactly as in `subtree`; the margins only shift it.
    pub fn subtree_open(
        &mut self,
        entries: &[(Key, Value)],
        total_slots: usize,
        depth: u32,
        speed: f64,
        range: (Key, Key),
    ) -> *mut Node {
        let m = entries.len();
        let (min, max) = (entries[0].0, entries[m - 1].0);
        if m < 2 || max <= min {
            return self.subtree(entries, total_slots, depth, speed);
        }
        let spacing = (max - min) as f64 / (m - 1) as f64;
        let left = (min.saturating_sub(range.0) as f64).min(spacing);
        let right = (range.1.saturating_sub(max) as f64).min(spacing);
        let inner_w = (max - min) as f64 + spacing;
        let total = total_slots.max(MIN_SLOTS) as f64;
        let per_key = total / (inner_w + left + right);
        let mut lslots = (left * per_key).round() as usize;
        let mut rslots = (right * per_key).round() as usize;
        let spare = total as usize - MIN_SLOTS;
        if lslots + rslots > spare {
            lslots = (spare as f64 * left / (left + right)).floor() as usize;
            rslots = spare - lslots;
        }
        let inner = total as usize - lslots - rslots;
        let mut model = choose_of(entries, inner);
        if profile_of(&model, entries, inner).degree == m {
            model = endpoint_of(entries, inner);
        }
        model.intercept += lslots as f64;
        let n = lslots + inner + rslots;
        let mut array = SlotArray::with_gaps(model, n);
        array.slots = self.fill(&array, entries, depth, speed, m).into_boxed_slice();
        let meta = NodeMeta::new(m as u64, self.now, speed, self.cause, depth, min);
        self.alloc(Node {
            meta,
            body: Body::Slotted(array),
        })
    }

    /// Builds a HotLookup group: keys are split at the widest gaps, each
    /// segment gets a least-squares model scaled to its share of
    /// `total_slots`, and residual collisions are chained.
    pub fn flattened(
        &mut self,
        entries: &[(Key, Value)],
        total_slots: usize,
        segments: usize,
        depth: u32,
        speed: f64,
    ) -> *mut Node {
        let keys: Vec<Key> = entries.iter().map(|e| e.0).collect();
        let mut bounds = split_points(&keys, segments.max(1));
        bounds.insert(0, 0);
        bounds.push(keys.len());
        let total = keys.len();
        let mut segs = Vec::with_capacity(bounds.len() - 1);
        for w in bounds.windows(2) {
            let (a, b) = (w[0], w[1]);
            let len = b - a;
            let slots = ((total_slots as f64 * len as f64 / total as f64).ceil() as usize)
                .max(MIN_SLOTS);
            let model = least_squares(&keys[a..b]).scaled(slots as f64 / len as f64);
            let mut array = SlotArray::with_gaps(model, slots);
            array.slots = self
                .fill(&array, &entries[a..b], depth, speed, total)
                .into_boxed_slice();
            segs.push(Segment {
                max_key: keys[b - 1],
                array,
            });
        }
        let meta = NodeMeta::new(
            total as u64,
            self.now,
            speed,
            EvolveCause::LookupEvolve,
            depth,
            keys[0],
        );
        self.alloc(Node {
            meta,
            body: Body::Flattened(FlatGroup {
                segments: segs.into_boxed_slice(),
            }),
        })
    }

    /// Root of an empty index: four gaps spread over the whole key space.
    pub fn empty_root(&mut self, speed: f64) -> *mut Node {
        let model = LinearModel::through(0, 0.0, Key::MAX, MIN_SLOTS as f64);
        self.alloc(Node {
            meta: NodeMeta::new(1, self.now, speed, EvolveCause::Build, 1, 0),
            body: Body::Slotted(SlotArray::with_gaps(model, MIN_SLOTS)),
        })
    }
}

/// Checks that keys are strictly increasing.
pub fn check_sorted(entries: &[(Key, Value)]) -> Result<()> {
    if entries.is_empty() {
        return Err(Error::EmptyInput);
    }
    match entries.windows(2).position(|w| w[0].0 >= w[1].0) {
        Some(p) => Err(Error::UnsortedInput { position: p + 1 }),
        None => Ok(()),
    }
}

/// Builds a standalone subtree over `entries` with `target_slots` root slots.
pub fn build_node(
    entries: &[(Key, Value)],
    target_slots: usize,
    gap_factor: f64,
    speed: f64,
) -> Result<Subtree> {
    check_sorted(entries)?;
    let mut b = Builder::new(gap_factor, 0, EvolveCause::Build);
    let root = b.subtree(entries, target_slots, 1, speed);
    Ok(Subtree::new(root, b.created))
}
