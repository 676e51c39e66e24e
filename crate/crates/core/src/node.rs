//! Node layout: slot arrays, flattened hot-lookup groups and packed cold nodes.

use std::mem::size_of;
use std::sync::atomic::AtomicU64;

use serde::{Deserialize, Serialize};

use crate::clock::Tick;
use crate::model::LinearModel;
use crate::slot::{Slot, SlotState};
use crate::{Key, Value};

pub type NodePtr = *const Node;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Normal,
    /// Flattened multi-segment dispatch group.
    HotLookup,
    /// Gap-free, error-bounded packed node.
    Compressed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EvolveCause {
    Build,
    InsertEvolve,
    LookupEvolve,
    Compress,
}

#[derive(Debug)]
pub struct NodeMeta {
    /// Keys in the subtree when it was last built.
    pub build_num: u64,
    pub build_time: Tick,
    /// Estimated insertion rate into the subtree, keys per tick.
    pub speed: f64,
    pub last_evolve_cause: EvolveCause,
    /// Number of nodes on the path from the root to this node, inclusive.
    pub depth_hint: u32,
    /// Smallest key at build time. Any live node is reachable by descending
    /// with this key, which is how the cooling pool relocates its members.
    pub min_key: Key,
    pub(crate) inserts: AtomicU64,
    pub(crate) conflicts: AtomicU64,
}

impl NodeMeta {
    pub fn new(
        build_num: u64,
        build_time: Tick,
        speed: f64,
        cause: EvolveCause,
        depth_hint: u32,
        min_key: Key,
    ) -> Self {
        NodeMeta {
            build_num: build_num.max(1),
            build_time,
            speed: speed.max(0.0),
            last_evolve_cause: cause,
            depth_hint,
            min_key,
            inserts: AtomicU64::new(0),
            conflicts: AtomicU64::new(0),
        }
    }
}

#[derive(Debug)]
pub struct SlotArray {
    pub model: LinearModel,
    pub slots: Box<[Slot]>,
}

impl SlotArray {
    pub fn with_gaps(model: LinearModel, n: usize) -> Self {
        SlotArray {
            model,
            slots: (0..n.max(1)).map(|_| Slot::gap()).collect(),
        }
    }

    #[inline]
    pub fn index_for(&self, key: Key) -> usize {
        self.model.predict(key, self.slots.len())
    }

    #[inline]
    pub fn slot_for(&self, key: Key) -> &Slot {
        &self.slots[self.index_for(key)]
    }

    /// Position of `slot` if it belongs to this array.
    pub fn position_of(&self, slot: &Slot) -> Option<usize> {
        let base = self.slots.as_ptr() as usize;
        let off = (slot as *const Slot as usize).checked_sub(base)?;
        let j = off / std::mem::size_of::<Slot>();
        (j < self.slots.len()).then_some(j)
    }
}

/// One side-by-side segment of a flattened group.
#[derive(Debug)]
pub struct Segment {
    /// Largest key routed to this segment. Keys above the last boundary go
    /// to the last segment.
    pub max_key: Key,
    pub array: SlotArray,
}

#[derive(Debug)]
pub struct FlatGroup {
    pub segments: Box<[Segment]>,
}

impl FlatGroup {
    #[inline]
    pub fn dispatch(&self, key: Key) -> usize {
        let last = self.segments.len() - 1;
        self.segments[..last]
            .iter()
            .position(|s| key <= s.max_key)
            .unwrap_or(last)
    }

    #[inline]
    pub fn segment_for(&self, key: Key) -> &Segment {
        &self.segments[self.dispatch(key)]
    }
}

/// One PLA segment of a packed node, covering `keys[start..start + len]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaSegment {
    pub first_key: Key,
    /// Maps a key to its position relative to `start`.
    pub model: LinearModel,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug)]
pub struct PackedNode {
    pub segments: Box<[PlaSegment]>,
    pub keys: Box<[Key]>,
    pub values: Box<[Value]>,
    pub epsilon: u32,
}

impl PackedNode {
    #[inline]
    fn segment_index(&self, key: Key) -> usize {
        // Last segment whose first key is <= key (segment 0 when below all).
        self.segments
            .partition_point(|s| s.first_key <= key)
            .saturating_sub(1)
    }

    /// Predicted position of `key` in the packed arrays, and the window
    /// `[lo, hi)` the error bound guarantees it lies in, if present.
    #[inline]
    pub fn window(&self, key: Key) -> (usize, usize, usize) {
        let seg = &self.segments[self.segment_index(key)];
        let local = seg.model.predict(key, seg.len);
        let eps = self.epsilon as usize;
        let lo = seg.start + local.saturating_sub(eps);
        let hi = seg.start + (local + eps + 1).min(seg.len);
        (seg.start + local, lo, hi)
    }

    /// Model-guided lookup finished by a binary search within ±epsilon.
    /// `probes` counts key comparisons against the packed array.
    pub fn get(&self, key: Key, probes: &mut u32) -> Option<Value> {
        if self.keys.is_empty() {
            return None;
        }
        let (_, mut lo, mut hi) = self.window(key);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            *probes += 1;
            match self.keys[mid].cmp(&key) {
                std::cmp::Ordering::Equal => return Some(self.values[mid]),
                std::cmp::Ordering::Less => lo = mid + 1,
                std::cmp::Ordering::Greater => hi = mid,
            }
        }
        None
    }

    /// First position whose key is >= `key`.
    pub fn lower_bound(&self, key: Key) -> usize {
        self.keys.partition_point(|&k| k < key)
    }
}

#[derive(Debug)]
pub enum Body {
    Slotted(SlotArray),
    Flattened(FlatGroup),
    Packed(PackedNode),
}

#[derive(Debug)]
pub struct Node {
    pub meta: NodeMeta,
    pub body: Body,
}

/// Logical byte footprint of one node.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Footprint {
    /// Node headers, models and segment descriptors.
    pub internal: u64,
    /// `internal` plus slot arrays and packed key/value storage.
    pub total: u64,
}

impl std::ops::AddAssign for Footprint {
    fn add_assign(&mut self, rhs: Self) {
        self.internal += rhs.internal;
        self.total += rhs.total;
    }
}

impl Node {
    pub fn kind(&self) -> NodeKind {
        match self.body {
            Body::Slotted(_) => NodeKind::Normal,
            Body::Flattened(_) => NodeKind::HotLookup,
            Body::Packed(_) => NodeKind::Compressed,
        }
    }

    pub fn footprint(&self) -> Footprint {
        let header = size_of::<Node>() as u64;
        let slot = size_of::<Slot>() as u64;
        match &self.body {
            Body::Slotted(a) => Footprint {
                internal: header,
                total: header + slot * a.slots.len() as u64,
            },
            Body::Flattened(g) => {
                let internal = header + (size_of::<Segment>() * g.segments.len()) as u64;
                let slots: u64 = g.segments.iter().map(|s| s.array.slots.len() as u64).sum();
                Footprint {
                    internal,
                    total: internal + slot * slots,
                }
            }
            Body::Packed(p) => {
                let internal = header + (size_of::<PlaSegment>() * p.segments.len()) as u64;
                let data = (size_of::<Key>() + size_of::<Value>()) as u64 * p.keys.len() as u64;
                Footprint {
                    internal,
                    total: internal + data,
                }
            }
        }
    }

    /// All slot arrays of the node (one for Normal, one per segment for
    /// HotLookup, none for Compressed).
    /// Inclusive key interval routed to `slot`, which must belong to this
    /// node.
    pub fn routed_range(&self, slot: &Slot) -> Option<(Key, Key)> {
        match &self.body {
            Body::Slotted(a) => a.position_of(slot).map(|j| a.model.slot_range(j, a.slots.len())),
            Body::Flattened(g) => g.segments.iter().enumerate().find_map(|(i, seg)| {
                let j = seg.array.position_of(slot)?;
                let (lo, hi) = seg.array.model.slot_range(j, seg.array.slots.len());
                let seg_lo = if i == 0 { 0 } else { g.segments[i - 1].max_key.saturating_add(1) };
                let seg_hi = if i + 1 == g.segments.len() { Key::MAX } else { seg.max_key };
                Some((lo.max(seg_lo), hi.min(seg_hi).max(lo.max(seg_lo))))
            }),
            Body::Packed(_) => None,
        }
    }

    pub fn arrays(&self) -> Vec<&SlotArray> {
        match &self.body {
            Body::Slotted(a) => vec![a],
            Body::Flattened(g) => g.segments.iter().map(|s| &s.array).collect(),
            Body::Packed(_) => Vec::new(),
        }
    }

    pub(crate) fn for_each_slot(&self, mut f: impl FnMut(&Slot)) {
        match &self.body {
            Body::Slotted(a) => a.slots.iter().for_each(&mut f),
            Body::Flattened(g) => g
                .segments
                .iter()
                .flat_map(|s| s.array.slots.iter())
                .for_each(&mut f),
            Body::Packed(_) => {}
        }
    }

    /// Whether any slot references a child node.
    pub fn has_children(&self) -> bool {
        let mut found = false;
        self.for_each_slot(|s| {
            if matches!(s.read().state, SlotState::Child(_)) {
                found = true;
            }
        });
        found
    }
}

/// Frees `root` and every node below it.
///
/// # Safety
/// The caller must own the subtree exclusively: no other thread may hold
/// references into it and it must not be reachable from a live index.
pub(crate) unsafe fn free_subtree(root: *mut Node) {
    let mut stack = vec![root];
    while let Some(p) = stack.pop() {
        let node = Box::from_raw(p);
        node.for_each_slot(|s| {
            if let SlotState::Child(c) = s.load_exclusive() {
                stack.push(c as *mut Node);
            }
        });
    }
}

/// An owned subtree that has not been linked into an index yet.
pub struct Subtree {
    root: *mut Node,
    pub(crate) created: Vec<NodePtr>,
}

// The subtree is exclusively owned and never shared.
unsafe impl Send for Subtree {}

impl Subtree {
    pub(crate) fn new(root: *mut Node, created: Vec<NodePtr>) -> Self {
        Subtree { root, created }
    }

    pub fn root(&self) -> &Node {
        unsafe { &*self.root }
    }

    pub fn node_count(&self) -> usize {
        self.created.len()
    }
}

impl Drop for Subtree {
    fn drop(&mut self) {
        if !self.root.is_null() {
            unsafe { free_subtree(self.root) };
        }
    }
}

/// One broken invariant found by [`validate_node`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// An entry does not sit at the slot its node's model predicts.
    Misplaced {
        depth: u32,
        slot: usize,
        key: Key,
        predicted: usize,
    },
    /// A key inside a child subtree is not routed to that child's slot by
    /// an ancestor model.
    Unreachable {
        depth: u32,
        key: Key,
        expected_slot: usize,
        predicted: usize,
    },
    /// A key falls outside its flattened segment's dispatch range.
    WrongSegment { depth: u32, segment: usize, key: Key },
    /// In-order traversal is not strictly increasing.
    OutOfOrder { prev: Key, key: Key },
    /// A packed entry lies outside the error window of its segment model.
    ErrorBound {
        index: usize,
        key: Key,
        predicted: usize,
        epsilon: u32,
    },
    /// Packed segments do not tile the packed arrays.
    BadSegments { depth: u32 },
    /// A flattened group has an empty segment list.
    EmptyGroup { depth: u32 },
}

#[derive(Clone, Copy)]
enum Route<'a> {
    Slot { array: &'a SlotArray, index: usize, depth: u32 },
    Segment { group: &'a FlatGroup, index: usize, depth: u32 },
}

struct Validator<'a> {
    out: Vec<Violation>,
    prev: Option<Key>,
    routes: Vec<Route<'a>>,
}

impl<'a> Validator<'a> {
    fn check_key(&mut self, key: Key, skip_innermost: bool) {
        if let Some(prev) = self.prev {
            if key <= prev {
                self.out.push(Violation::OutOfOrder { prev, key });
            }
        }
        self.prev = Some(key);
        // An innermost slot route is checked by the caller as `Misplaced`.
        let n = self.routes.len() - usize::from(skip_innermost && !self.routes.is_empty());
        for r in &self.routes[..n] {
            match *r {
                Route::Slot {
                    array,
                    index,
                    depth,
                } => {
                    let predicted = array.index_for(key);
                    if predicted != index {
                        self.out.push(Violation::Unreachable {
                            depth,
                            key,
                            expected_slot: index,
                            predicted,
                        });
                    }
                }
                Route::Segment {
                    group,
                    index,
                    depth,
                } => {
                    if group.dispatch(key) != index {
                        self.out.push(Violation::WrongSegment {
                            depth,
                            segment: index,
                            key,
                        });
                    }
                }
            }
        }
    }

    fn array(&mut self, array: &'a SlotArray, depth: u32) {
        for (i, slot) in array.slots.iter().enumerate() {
            self.routes.push(Route::Slot {
                array,
                index: i,
                depth,
            });
            match slot.read().state {
                SlotState::Gap => {}
                SlotState::Entry { key, .. } => {
                    self.check_key(key, true);
                    let predicted = array.index_for(key);
                    if predicted != i {
                        self.out.push(Violation::Misplaced {
                            depth,
                            slot: i,
                            key,
                            predicted,
                        });
                    }
                }
                SlotState::Child(c) => {
                    // Children are kept alive by the caller's epoch pin.
                    self.node(unsafe { &*c }, depth + 1);
                }
            }
            self.routes.pop();
        }
    }

    fn node(&mut self, node: &'a Node, depth: u32) {
        match &node.body {
            Body::Slotted(a) => self.array(a, depth),
            Body::Flattened(g) => {
                if g.segments.is_empty() {
                    self.out.push(Violation::EmptyGroup { depth });
                    return;
                }
                for (i, seg) in g.segments.iter().enumerate() {
                    self.routes.push(Route::Segment {
                        group: g,
                        index: i,
                        depth,
                    });
                    self.array(&seg.array, depth);
                    self.routes.pop();
                }
            }
            Body::Packed(p) => {
                let mut next = 0;
                for s in p.segments.iter() {
                    if s.start != next || s.len == 0 || p.keys.get(s.start) != Some(&s.first_key)
                    {
                        self.out.push(Violation::BadSegments { depth });
                    }
                    next = s.start + s.len;
                }
                if next != p.keys.len() || p.keys.len() != p.values.len() {
                    self.out.push(Violation::BadSegments { depth });
                }
                for (i, &key) in p.keys.iter().enumerate() {
                    self.check_key(key, false);
                    let seg = &p.segments[p.segment_index(key)];
                    let predicted = seg.start + seg.model.predict(key, seg.len.max(1));
                    if predicted.abs_diff(i) > p.epsilon as usize {
                        self.out.push(Violation::ErrorBound {
                            index: i,
                            key,
                            predicted,
                            epsilon: p.epsilon,
                        });
                    }
                }
            }
        }
    }
}

/// Checks precise placement, key order, segment routing and packed error
/// bounds for `node` and its whole subtree. Returns one entry per violation.
pub fn validate_node(node: &Node) -> Vec<Violation> {
    let _guard = crossbeam_epoch::pin();
    let mut v = Validator {
        out: Vec::new(),
        prev: None,
        routes: Vec::new(),
    };
    v.node(node, 1);
    v.out
}
