use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use learned_index::{EvolveConfig, Index, Rebuild};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
enum Op {
    Insert(u64),
    Get(u64),
    Scan(u64, usize),
    Evolve(u64, usize, u8),
}

fn op() -> impl Strategy<Value = Op> {
    let key = 0u64..5000;
    prop_oneof![
        4 => key.clone().prop_map(Op::Insert),
        2 => key.clone().prop_map(Op::Get),
        1 => (key.clone(), 1usize..20).prop_map(|(k, n)| Op::Scan(k, n)),
        1 => (key, 1usize..4, 0u8..5).prop_map(|(k, d, r)| Op::Evolve(k, d, r)),
    ]
}

fn rebuild_kind(r: u8) -> Rebuild {
    match r {
        0 => Rebuild::Expand,
        1 => Rebuild::Flatten,
        2 => Rebuild::Compress,
        3 => Rebuild::Decompress,
        _ => Rebuild::Full,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matches_btreemap(ops in prop::collection::vec(op(), 1..400), beta in 1.01f64..3.0) {
        let cfg = EvolveConfig { beta, cooling_probability: 0.3, ..EvolveConfig::default() };
        let index = Index::new(cfg).unwrap();
        let mut model = BTreeMap::new();
        for op in ops {
            match op {
                Op::Insert(k) => {
                    let fresh = !model.contains_key(&k);
                    prop_assert_eq!(index.insert(k, k * 2).is_ok(), fresh);
                    model.insert(k, k * 2);
                }
                Op::Get(k) => prop_assert_eq!(index.get(k), model.get(&k).copied()),
                Op::Scan(k, n) => {
                    let want: Vec<_> = model.range(k..).take(n).map(|(&k, &v)| (k, v)).collect();
                    prop_assert_eq!(index.range_scan(k, n), want);
                }
                Op::Evolve(k, d, r) => {
                    index.force_evolve(k, d, rebuild_kind(r));
                }
            }
        }
        let want: Vec<_> = model.into_iter().collect();
        prop_assert_eq!(index.to_vec(), want);
        prop_assert!(index.validate().is_empty());
    }
}

/// Long mixed workload on 8 threads with tiny beta, meant for sanitizer
/// runs. Duration in seconds comes
/// from `STRESS_SECS` (default 5).
#[test]
#[ignore]
fn mixed_stress() {
    let secs: u64 = std::env::var("STRESS_SECS").ok().and_then(|s| s.parse().ok()).unwrap_or(5);
    let cfg = EvolveConfig {
        beta: 1.001,
        read_evolving_enabled: true,
        p_hl: 0.5,
        lookup_sample_period: 8,
        cooling_probability: 0.2,
        index_size_cap: 1 << 20,
        ..EvolveConfig::default()
    };
    let entries: Vec<_> = (0..20_000u64).map(|i| (i << 20, i)).collect();
    let index = Arc::new(Index::from_sorted(cfg, &entries).unwrap());
    let stop = Arc::new(AtomicBool::new(false));
    let threads = 8;
    let handles: Vec<_> = (0..threads)
        .map(|t| {
            let index = index.clone();
            let stop = stop.clone();
            std::thread::spawn(move || {
                let mut tls = index.worker();
                let mut rng = ChaCha8Rng::seed_from_u64(t as u64);
                let mut ops = 0u64;
                while !stop.load(Ordering::Relaxed) {
                    let k = rng.random_range(0..20_000u64 << 20);
                    match rng.random_range(0..100) {
                        0..50 => {
                            let got = index.get_with(&mut tls, k);
                            if k & 1 == 1 {
                                assert!(got.is_none_or(|v| v == k));
                            } else if k & ((1 << 20) - 1) == 0 {
                                assert_eq!(got, Some(k >> 20));
                            } else {
                                assert_eq!(got, None, "never-inserted key {k} found");
                            }
                        }
                        50..95 => {
                            let k = k | 1;
                            let _ = index.insert_with(&mut tls, k, k);
                        }
                        95..99 => {
                            index.range_scan(k, 16);
                        }
                        _ => {
                            index.force_evolve(k, rng.random_range(1..4), Rebuild::Compress);
                        }
                    }
                    ops += 1;
                }
                ops
            })
        })
        .collect();
    std::thread::sleep(Duration::from_secs(secs));
    stop.store(true, Ordering::Relaxed);
    let total: u64 = handles.into_iter().map(|h| h.join().unwrap()).sum();
    assert!(total > 0);
    assert!(index.validate().is_empty());
    let all = index.to_vec();
    assert!(all.windows(2).all(|w| w[0].0 < w[1].0));
    for &(k, v) in &entries {
        assert_eq!(index.get(k), Some(v));
    }
    assert_eq!(all.len() as u64, index.len());
}
