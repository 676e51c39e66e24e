use learned_index::{EvolveConfig, EvolveOutcome, Index, NodeKind, Rebuild};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quiet() -> EvolveConfig {
    EvolveConfig {
        stats_mode: "off".parse().unwrap(),
        cooling_probability: 0.0,
        ..EvolveConfig::default()
    }
}

/// Dense clusters separated by wide gaps, which a single linear model
/// cannot place without conflicts.
fn clustered(n: usize, seed: u64) -> Vec<(u64, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keys = Vec::with_capacity(n);
    let mut base = 0u64;
    while keys.len() < n {
        base += rng.random_range(1u64 << 30..1u64 << 40);
        let width = rng.random_range(1..2000);
        let mut k = base;
        for _ in 0..width {
            k += rng.random_range(1..8);
            keys.push(k);
        }
        base = k;
    }
    keys.truncate(n);
    keys.into_iter().map(|k| (k, k ^ 0xabcd)).collect()
}

fn deepest_key(index: &Index) -> (u64, u32) {
    index
        .to_vec()
        .iter()
        .map(|&(k, _)| (k, index.depth_of(k).unwrap()))
        .max_by_key(|&(_, d)| d)
        .unwrap()
}

#[test]
fn forced_expand_preserves_entries() {
    let entries: Vec<_> = (0..100u64).map(|i| (i * i * 7 + 3, i)).collect();
    let index = Index::from_sorted(quiet(), &entries).unwrap();
    let before = index.stats();
    let (k, depth) = deepest_key(&index);
    assert_eq!(index.force_evolve(k, depth as usize, Rebuild::Expand), EvolveOutcome::Done);
    assert_eq!(index.to_vec(), entries);
    for &(k, v) in &entries {
        assert_eq!(index.get(k), Some(v));
    }
    assert!(index.validate().is_empty());
    assert_eq!(index.stats().entry_count, before.entry_count);
}

#[test]
fn flatten_leaf_is_skipped() {
    let entries: Vec<_> = (0..64u64).map(|i| (i * 10, i)).collect();
    let index = Index::from_sorted(quiet(), &entries).unwrap();
    assert_eq!(index.stats().max_depth, 1);
    assert_eq!(index.force_evolve(0, 1, Rebuild::Flatten), EvolveOutcome::SkippedKind);
    index.insert(5, 5).unwrap();
    index.insert(6, 6).unwrap();
    let (k, d) = deepest_key(&index);
    assert_eq!(index.force_evolve(k, d as usize, Rebuild::Flatten), EvolveOutcome::SkippedFlat);
}

#[test]
fn flatten_reduces_depth_on_clustered_data() {
    let entries = clustered(200_000, 7);
    let index = Index::from_sorted(quiet(), &entries).unwrap();
    let before = index.stats();
    assert!(before.max_depth >= 3, "{before:?}");
    let mut improved = false;
    for &(k, _) in entries.iter().step_by(997) {
        if index.depth_of(k).unwrap() < 3 {
            continue;
        }
        let before_sum: u64 = entries.iter().map(|&(k, _)| index.depth_of(k).unwrap() as u64).sum();
        match index.force_evolve(k, 2, Rebuild::Flatten) {
            EvolveOutcome::Done => {
                let after_sum: u64 = entries.iter().map(|&(k, _)| index.depth_of(k).unwrap() as u64).sum();
                assert!(after_sum < before_sum, "{after_sum} >= {before_sum}");
                improved = true;
                break;
            }
            EvolveOutcome::SkippedDepth | EvolveOutcome::SkippedFlat => {}
            other => panic!("unexpected {other:?}"),
        }
    }
    assert!(improved);
    assert_eq!(index.to_vec(), entries);
    assert!(index.validate().is_empty());
}

#[test]
fn compress_is_lossless_and_bounded() {
    let entries = clustered(50_000, 11);
    let index = Index::from_sorted(quiet(), &entries).unwrap();
    let (k, d) = deepest_key(&index);
    let target = if d >= 2 { 2 } else { panic!("tree too shallow") };
    let bytes_before = index.bytes_total();
    assert_eq!(index.force_evolve(k, target, Rebuild::Compress), EvolveOutcome::Done);
    assert!(index.node_kinds().contains(&NodeKind::Compressed));
    assert!(index.bytes_total() < bytes_before);
    let eps = index.config().pla_epsilon as u32;
    for &(k, v) in &entries {
        let (got, trace) = index.lookup_traced(k);
        assert_eq!(got, Some(v));
        if trace.compressed {
            assert!(trace.packed_probes <= 2 * eps + 2, "{trace:?}");
        }
    }
    assert!(index.validate().is_empty());
    let e = index.evolve_stats();
    assert_eq!(e.compressions, 1);
    assert!(e.bytes_after_compress < e.bytes_before_compress);
}

#[test]
fn insert_into_compressed_decompresses() {
    let entries = clustered(50_000, 12);
    let index = Index::from_sorted(quiet(), &entries).unwrap();
    let (k, _) = deepest_key(&index);
    assert_eq!(index.force_evolve(k, 2, Rebuild::Compress), EvolveOutcome::Done);
    let (_, trace) = index.lookup_traced(k);
    assert!(trace.compressed);
    let fresh = k + 1;
    let fresh = if index.get(fresh).is_some() { k - 1 } else { fresh };
    assert!(index.get(fresh).is_none());
    index.insert(fresh, 42).unwrap();
    assert_eq!(index.get(fresh), Some(42));
    let (_, trace) = index.lookup_traced(k);
    assert!(!trace.compressed);
    assert_eq!(index.evolve_stats().decompressions, 1);
    assert_eq!(index.len(), entries.len() as u64 + 1);
    assert!(index.validate().is_empty());
}

#[test]
fn evolve_drops_replaced_nodes_from_pool() {
    let entries = clustered(50_000, 13);
    let index = Index::from_sorted(quiet(), &entries).unwrap();
    let (k, d) = deepest_key(&index);
    assert!(d >= 3);
    let child = index.node_id_at(k, 3).unwrap();
    let parent = index.node_id_at(k, 2).unwrap();
    let pool = index.cooling_pool();
    pool.clear();
    pool.enqueue(child as *mut _, k);
    pool.enqueue(parent as *mut _, k);
    assert_eq!(index.force_evolve(k, 2, Rebuild::Expand), EvolveOutcome::Done);
    assert!(!pool.contains(child as *mut _));
    assert!(!pool.contains(parent as *mut _));

    // An evolve below a pooled ancestor also evicts the ancestor.
    let (k, d) = deepest_key(&index);
    assert!(d >= 3);
    let grand = index.node_id_at(k, 2).unwrap();
    pool.clear();
    pool.enqueue(grand as *mut _, k);
    assert_eq!(index.force_evolve(k, 3, Rebuild::Expand), EvolveOutcome::Done);
    assert!(!pool.contains(grand as *mut _));
}

#[test]
fn size_cap_compresses_in_fifo_order() {
    let entries = clustered(100_000, 14);
    let index = Index::from_sorted(quiet(), &entries).unwrap();
    let pool = index.cooling_pool();
    pool.clear();
    let mut picked = Vec::new();
    for &(k, _) in entries.iter().step_by(5000) {
        if let Some(id) = index.node_id_at(k, 2) {
            if !picked.iter().any(|&(p, _)| p == id) {
                picked.push((id, k));
            }
        }
        if picked.len() == 3 {
            break;
        }
    }
    assert_eq!(picked.len(), 3);
    for &(id, k) in &picked {
        pool.enqueue(id as *mut _, k);
    }

    index.set_size_cap(u64::MAX);
    assert_eq!(index.enforce_size_cap(), 0);
    assert_eq!(pool.len(), 3);

    index.set_size_cap(index.bytes_total() - 1);
    assert_eq!(index.enforce_size_cap(), 1);
    let (_, first) = index.lookup_traced(picked[0].1);
    assert!(first.compressed);
    for &(_, k) in &picked[1..] {
        assert!(!index.lookup_traced(k).1.compressed);
    }
    assert_eq!(pool.len(), 2);
    assert_eq!(index.to_vec(), entries);
    assert!(index.validate().is_empty());
}

#[test]
fn rebuild_restores_shallow_tree() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let index = Index::new(quiet()).unwrap();
    let mut keys: Vec<u64> = (0..20_000).map(|_| rng.random()).collect();
    for &k in &keys {
        index.insert(k, k).unwrap();
    }
    keys.sort_unstable();
    let before = index.stats();
    assert_eq!(index.rebuild(), EvolveOutcome::Done);
    let after = index.stats();
    assert!(after.avg_depth <= before.avg_depth);
    let got: Vec<u64> = index.to_vec().into_iter().map(|(k, _)| k).collect();
    assert_eq!(got, keys);
}

#[test]
fn probability_mode_evolves_under_inserts() {
    let cfg = EvolveConfig {
        beta: 1.05,
        ..EvolveConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut base: Vec<u64> = (0..10_000).map(|_| rng.random::<u64>() >> 1).collect();
    base.sort_unstable();
    base.dedup();
    let entries: Vec<_> = base.iter().map(|&k| (k, k)).collect();
    let index = Index::from_sorted(cfg, &entries).unwrap();
    for _ in 0..40_000 {
        let k = rng.random::<u64>() >> 1;
        let _ = index.insert(k, k);
    }
    let e = index.evolve_stats();
    assert!(e.insert_evolves > 0, "{e:?}");
    assert_eq!(e.counter_writes, 0);
    assert!(index.validate().is_empty());
}

#[test]
fn counter_mode_writes_counters() {
    let cfg = EvolveConfig {
        stats_mode: "counter".parse().unwrap(),
        ..EvolveConfig::default()
    };
    let index = Index::new(cfg).unwrap();
    for k in 0..1000u64 {
        index.insert(k.wrapping_mul(0x9e37_79b9_7f4a_7c15), k).unwrap();
    }
    assert!(index.evolve_stats().counter_writes >= 1000);
}
