//! FIFO pool of randomly sampled nodes. Members that survive long enough
//! without evolving are treated as cold and compressed first.

use std::collections::{HashMap, VecDeque};

use parking_lot::Mutex;

use crate::node::NodePtr;
use crate::prob::Coin;
use crate::Key;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolEntry {
    pub node: usize,
    /// Key used to relocate the node by descent.
    pub locator: Key,
    seq: u64,
}

impl PoolEntry {
    pub fn ptr(&self) -> NodePtr {
        self.node as NodePtr
    }
}

#[derive(Default)]
struct Inner {
    queue: VecDeque<PoolEntry>,
    /// Live members mapped to the sequence number of their queue entry.
    /// Queue entries with a stale sequence number are skipped lazily.
    members: HashMap<usize, u64>,
    next_seq: u64,
}

impl Inner {
    fn compact(&mut self) {
        if self.queue.len() > 64 && self.queue.len() > 2 * self.members.len() {
            let members = &self.members;
            self.queue.retain(|e| members.get(&e.node) == Some(&e.seq));
        }
    }
}

#[derive(Default)]
pub struct CoolingPool {
    inner: Mutex<Inner>,
}

impl std::fmt::Debug for CoolingPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoolingPool").field("len", &self.len()).finish()
    }
}

impl CoolingPool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `node` unless it is already a member.
    pub fn enqueue(&self, node: NodePtr, locator: Key) -> bool {
        let mut g = self.inner.lock();
        let key = node as usize;
        if g.members.contains_key(&key) {
            return false;
        }
        let seq = g.next_seq;
        g.next_seq += 1;
        g.members.insert(key, seq);
        g.queue.push_back(PoolEntry {
            node: key,
            locator,
            seq,
        });
        true
    }

    /// Bernoulli(`p`) admission.
    pub fn maybe_enqueue(&self, node: NodePtr, locator: Key, coin: &mut impl Coin, p: f64) -> bool {
        coin.flip(p) && self.enqueue(node, locator)
    }

    pub fn remove(&self, node: NodePtr) -> bool {
        self.remove_all(std::iter::once(node)) == 1
    }

    /// Removes every listed node that is a member; returns how many were.
    pub fn remove_all(&self, nodes: impl IntoIterator<Item = NodePtr>) -> usize {
        let mut g = self.inner.lock();
        if g.members.is_empty() {
            return 0;
        }
        let mut removed = 0;
        for n in nodes {
            if g.members.remove(&(n as usize)).is_some() {
                removed += 1;
            }
        }
        if removed > 0 {
            g.compact();
        }
        removed
    }

    /// Takes the earliest surviving member.
    pub fn pop_front(&self) -> Option<PoolEntry> {
        let mut g = self.inner.lock();
        while let Some(e) = g.queue.pop_front() {
            if g.members.get(&e.node) == Some(&e.seq) {
                g.members.remove(&e.node);
                return Some(e);
            }
        }
        None
    }

    pub fn contains(&self, node: NodePtr) -> bool {
        self.inner.lock().members.contains_key(&(node as usize))
    }

    pub fn len(&self) -> usize {
        self.inner.lock().members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Members in FIFO order.
    pub fn snapshot(&self) -> Vec<PoolEntry> {
        let g = self.inner.lock();
        g.queue
            .iter()
            .filter(|e| g.members.get(&e.node) == Some(&e.seq))
            .copied()
            .collect()
    }

    pub fn clear(&self) {
        let mut g = self.inner.lock();
        g.queue.clear();
        g.members.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::Scripted;
    use rand::SeedableRng;

    fn p(i: usize) -> NodePtr {
        (i * 64) as NodePtr
    }

    #[test]
    fn forced_enqueue_and_no_duplicates() {
        let pool = CoolingPool::new();
        let mut yes = Scripted::new([true, true]);
        assert!(pool.maybe_enqueue(p(1), 10, &mut yes, 0.1));
        assert!(!pool.maybe_enqueue(p(1), 10, &mut yes, 0.1));
        assert_eq!(pool.len(), 1);
        assert!(pool.contains(p(1)));
    }

    #[test]
    fn fifo_after_removals() {
        let pool = CoolingPool::new();
        for i in 1..=5 {
            pool.enqueue(p(i), i as Key);
        }
        assert_eq!(pool.remove_all([p(2), p(4), p(9)]), 2);
        let order: Vec<_> = std::iter::from_fn(|| pool.pop_front()).map(|e| e.locator).collect();
        assert_eq!(order, vec![1, 3, 5]);
        assert!(pool.is_empty());
        assert_eq!(pool.remove_all([p(1)]), 0);
    }

    #[test]
    fn reenqueue_after_remove_keeps_single_entry() {
        let pool = CoolingPool::new();
        pool.enqueue(p(1), 1);
        pool.enqueue(p(2), 2);
        pool.remove(p(1));
        pool.enqueue(p(1), 1);
        let order: Vec<_> = pool.snapshot().iter().map(|e| e.locator).collect();
        assert_eq!(order, vec![2, 1]);
    }

    #[test]
    fn admission_rate() {
        let pool = CoolingPool::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let hits = (1..=10_000)
            .filter(|&i| pool.maybe_enqueue(p(i), 0, &mut rng, 0.10))
            .count();
        let frac = hits as f64 / 10_000.0;
        assert!((0.09..=0.11).contains(&frac), "{frac}");
    }
}
