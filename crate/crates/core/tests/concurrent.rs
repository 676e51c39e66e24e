use std::collections::BTreeSet;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use learned_index::{EvolveConfig, Index};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn value_of(k: u64) -> u64 {
    k.rotate_left(17) ^ 0x9e37_79b9_7f4a_7c15
}

/// Threads insert disjoint random key sets while readers probe both
/// inserted and never-inserted keys.
fn run(cfg: EvolveConfig, threads: usize, per_thread: usize, seed: u64) -> (Arc<Index>, BTreeSet<u64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut load: Vec<u64> = (0..per_thread).map(|_| rng.random::<u64>() | 1).collect();
    load.sort_unstable();
    load.dedup();
    let entries: Vec<_> = load.iter().map(|&k| (k, value_of(k))).collect();
    let index = Arc::new(Index::from_sorted(cfg, &entries).unwrap());
    let handles: Vec<_> = (0..threads)
        .map(|t| {
            let index = index.clone();
            std::thread::spawn(move || {
                let mut tls = index.worker();
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (t as u64 + 1));
                let mut mine = Vec::with_capacity(per_thread);
                for i in 0..per_thread {
                    // Odd keys come from the load set; even keys are only
                    // ever inserted by their owning thread.
                    let k = (rng.random::<u64>() & !1) | 0;
                    if index.insert_with(&mut tls, k, value_of(k)).is_ok() {
                        mine.push(k);
                    }
                    if i % 3 == 0 {
                        let probe = rng.random::<u64>();
                        if let Some(v) = index.get_with(&mut tls, probe) {
                            assert_eq!(v, value_of(probe));
                        }
                    }
                    if let Some(&k) = mine.get(i / 2) {
                        assert_eq!(index.get_with(&mut tls, k), Some(value_of(k)));
                    }
                }
                mine
            })
        })
        .collect();
    let mut all: BTreeSet<u64> = load.into_iter().collect();
    for h in handles {
        for k in h.join().unwrap() {
            assert!(all.insert(k), "key {k} inserted twice");
        }
    }
    (index, all)
}

fn check(index: &Index, all: &BTreeSet<u64>) {
    let scanned = index.to_vec();
    assert_eq!(scanned.len(), all.len());
    for ((k, v), want) in scanned.iter().zip(all.iter()) {
        assert_eq!(k, want);
        assert_eq!(*v, value_of(*k));
    }
    assert!(index.validate().is_empty());
    let s = index.stats();
    assert_eq!(s.entry_count, all.len() as u64);
    assert_eq!(index.len(), all.len() as u64);
    assert_eq!(s.bytes_total, index.bytes_total());
}

#[test]
fn eight_writers_default_config() {
    let (index, all) = run(EvolveConfig::default(), 8, 20_000, 1);
    check(&index, &all);
}

#[test]
fn eight_writers_frequent_evolves() {
    let cfg = EvolveConfig {
        beta: 1.01,
        read_evolving_enabled: true,
        p_hl: 1.0,
        lookup_sample_period: 4,
        index_size_cap: 3 << 20,
        cooling_probability: 0.5,
        ..EvolveConfig::default()
    };
    let (index, all) = run(cfg, 8, 20_000, 2);
    let e = index.evolve_stats();
    assert!(e.insert_evolves > 0, "{e:?}");
    check(&index, &all);
}

#[test]
fn counter_modes_concurrent() {
    for mode in ["counter", "sampling", "off"] {
        let cfg = EvolveConfig {
            stats_mode: mode.parse().unwrap(),
            ..EvolveConfig::default()
        };
        let (index, all) = run(cfg, 4, 10_000, 3);
        check(&index, &all);
    }
}

#[test]
fn readers_during_rebuilds() {
    let entries: Vec<_> = (0..50_000u64).map(|i| (i * 3, value_of(i * 3))).collect();
    let index = Arc::new(Index::from_sorted(EvolveConfig::default(), &entries).unwrap());
    let stop = Arc::new(AtomicBool::new(false));
    let readers: Vec<_> = (0..4)
        .map(|t| {
            let index = index.clone();
            let stop = stop.clone();
            std::thread::spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(t);
                let mut n = 0u64;
                while !stop.load(Ordering::Relaxed) {
                    let k = rng.random_range(0..150_000u64);
                    let got = index.get(k);
                    if k % 3 == 0 {
                        assert_eq!(got, Some(value_of(k)));
                    } else {
                        assert_eq!(got, None);
                    }
                    n += 1;
                }
                n
            })
        })
        .collect();
    let deadline = Instant::now() + Duration::from_millis(500);
    let mut rebuilds = 0;
    while Instant::now() < deadline {
        index.rebuild();
        rebuilds += 1;
    }
    stop.store(true, Ordering::Relaxed);
    for r in readers {
        assert!(r.join().unwrap() > 0);
    }
    assert!(rebuilds > 0);
    assert_eq!(index.to_vec(), entries);
}
