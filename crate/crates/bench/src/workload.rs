//! Workload definitions and op-stream planning.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorkloadKind {
    /// Load everything, then search.
    ReadOnly,
    /// Load half, then 80% search and 20% insert of the other half.
    ReadIntensive,
    /// Load half, then 50% search and 50% insert of the other half.
    Balanced,
    /// Load half, then insert the other half.
    WriteOnly,
    /// Load everything, then five rounds of reads over a hot tenth.
    HotReadA,
    /// `HotReadA` plus inserts of a tenth as many fresh keys (about 16%).
    HotReadB,
    /// Load all but one consecutive eighth, then insert that eighth.
    HotWrite,
}

impl WorkloadKind {
    pub const ALL: [WorkloadKind; 7] = [
        Self::ReadOnly,
        Self::ReadIntensive,
        Self::Balanced,
        Self::WriteOnly,
        Self::HotReadA,
        Self::HotReadB,
        Self::HotWrite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::ReadOnly => "read-only",
            Self::ReadIntensive => "read-intensive",
            Self::Balanced => "balanced",
            Self::WriteOnly => "write-only",
            Self::HotReadA => "hot-read-a",
            Self::HotReadB => "hot-read-b",
            Self::HotWrite => "hot-write",
        }
    }

    /// Share of keys bulk-loaded before the timed phase.
    pub fn default_load_fraction(self) -> f64 {
        match self {
            Self::ReadOnly | Self::HotReadA => 1.0,
            Self::ReadIntensive | Self::Balanced | Self::WriteOnly => 0.5,
            Self::HotReadB => 10.0 / 11.0,
            Self::HotWrite => 7.0 / 8.0,
        }
    }

    /// Inserts as a share of all timed ops.
    pub fn insert_ratio(self) -> f64 {
        match self {
            Self::ReadOnly | Self::HotReadA => 0.0,
            Self::ReadIntensive => 0.2,
            Self::Balanced => 0.5,
            Self::WriteOnly | Self::HotWrite => 1.0,
            Self::HotReadB => 1.0 / 6.0,
        }
    }
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WorkloadKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|k| k.name() == norm || k.name().replace('-', "") == norm)
            .ok_or_else(|| format!("unknown workload `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub load_fraction: f64,
    /// Timed op count. `None` derives it from the dataset size: four
    /// searches per key for `ReadOnly`, one insert per unloaded key
    /// otherwise.
    pub op_count: Option<usize>,
    pub threads: usize,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn new(kind: WorkloadKind, threads: usize, seed: u64) -> Self {
        WorkloadSpec {
            kind,
            load_fraction: kind.default_load_fraction(),
            op_count: None,
            threads,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Get(u64),
    Insert(u64),
}

/// A fully materialized run: the sorted bulk-load set and one op stream
/// per worker.
#[derive(Debug, Clone)]
pub struct Plan {
    pub load: Vec<u64>,
    pub streams: Vec<Vec<Op>>,
    /// Keys the workload concentrates on, sorted. Empty for uniform kinds.
    pub hot: Vec<u64>,
    pub inserts: usize,
    pub lookups: usize,
}

impl Plan {
    pub fn ops(&self) -> usize {
        self.inserts + self.lookups
    }
}

/// A random run of `len` consecutive keys in key order.
fn consecutive(sorted: &[u64], len: usize, rng: &mut ChaCha8Rng) -> (usize, usize) {
    let len = len.clamp(1, sorted.len());
    let start = rng.random_range(0..=sorted.len() - len);
    (start, start + len)
}

/// Interleaves exact counts of lookups (drawn from `read_pool`, or rounds
/// over it when `rounds` is set) and inserts (in `inserts` order).
fn mix(
    inserts: &[u64],
    lookups: usize,
    read_pool: &[u64],
    rounds: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<Op> {
    let mut kinds = vec![true; inserts.len()];
    kinds.resize(inserts.len() + lookups, false);
    kinds.shuffle(rng);
    let mut reads: Vec<u64> = if rounds {
        let mut out = Vec::with_capacity(lookups);
        while out.len() < lookups {
            let mut round = read_pool.to_vec();
            round.shuffle(rng);
            out.extend(round);
        }
        out.truncate(lookups);
        out
    } else {
        (0..lookups).map(|_| read_pool[rng.random_range(0..read_pool.len())]).collect()
    };
    reads.reverse();
    let mut ins = inserts.iter();
    kinds
        .into_iter()
        .map(|is_insert| {
            if is_insert {
                Op::Insert(*ins.next().unwrap())
            } else {
                Op::Get(reads.pop().unwrap())
            }
        })
        .collect()
}

pub fn plan(spec: &WorkloadSpec, data: &Dataset) -> Plan {
    assert!(spec.threads >= 1, "threads must be at least 1");
    assert!(!data.is_empty(), "empty dataset");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x776b_6c64);
    let n = data.len();
    let split = ((n as f64 * spec.load_fraction).round() as usize).clamp(1, n);
    let ratio = spec.kind.insert_ratio();
    let mut hot = Vec::new();

    let (load, ops) = match spec.kind {
        WorkloadKind::ReadOnly => {
            let load = data.keys.clone();
            let lookups = spec.op_count.unwrap_or(4 * n);
            let ops = mix(&[], lookups, &load, false, &mut rng);
            (load, ops)
        }
        WorkloadKind::ReadIntensive | WorkloadKind::Balanced | WorkloadKind::WriteOnly => {
            let load = data.keys[..split].to_vec();
            let pending = &data.keys[split..];
            let inserts = match spec.op_count {
                Some(m) => ((m as f64 * ratio).round() as usize).min(pending.len()),
                None => pending.len(),
            };
            let lookups = if ratio >= 1.0 {
                0
            } else {
                (inserts as f64 * (1.0 - ratio) / ratio).round() as usize
            };
            let ops = mix(&pending[..inserts], lookups, &load, false, &mut rng);
            (load, ops)
        }
        WorkloadKind::HotReadA | WorkloadKind::HotReadB => {
            let load = data.keys[..split].to_vec();
            let mut sorted = load.clone();
            sorted.sort_unstable();
            let (a, b) = consecutive(&sorted, sorted.len().div_ceil(10), &mut rng);
            hot = sorted[a..b].to_vec();
            let lookups = spec.op_count.map_or(5 * hot.len(), |m| {
                (m as f64 * (1.0 - ratio)).round() as usize
            });
            let pending = &data.keys[split..];
            let inserts = if spec.kind == WorkloadKind::HotReadA {
                0
            } else {
                ((lookups as f64 * ratio / (1.0 - ratio)).round() as usize).min(pending.len())
            };
            let ops = mix(&pending[..inserts], lookups, &hot, true, &mut rng);
            (load, ops)
        }
        WorkloadKind::HotWrite => {
            let sorted = data.sorted();
            let want = spec.op_count.unwrap_or(n - split).min(n - 1);
            let (a, b) = consecutive(&sorted, want.max(1), &mut rng);
            let mut pending = sorted[a..b].to_vec();
            pending.shuffle(&mut rng);
            hot = sorted[a..b].to_vec();
            let mut load = sorted[..a].to_vec();
            load.extend_from_slice(&sorted[b..]);
            let ops = mix(&pending, 0, &[], false, &mut rng);
            (load, ops)
        }
    };

    let inserts = ops.iter().filter(|o| matches!(o, Op::Insert(_))).count();
    let lookups = ops.len() - inserts;
    let mut streams = vec![Vec::with_capacity(ops.len() / spec.threads + 1); spec.threads];
    for (i, op) in ops.into_iter().enumerate() {
        streams[i % spec.threads].push(op);
    }
    let mut load = load;
    load.sort_unstable();
    Plan {
        load,
        streams,
        hot,
        inserts,
        lookups,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_dataset, DatasetSource};
    use std::collections::HashSet;

    fn data(n: usize) -> Dataset {
        generate_dataset(&DatasetSource::Easy, n, 3).unwrap()
    }

    #[test]
    fn names_round_trip() {
        for k in WorkloadKind::ALL {
            assert_eq!(k.name().parse::<WorkloadKind>().unwrap(), k);
        }
        assert_eq!("HotReadA".parse::<WorkloadKind>().unwrap(), WorkloadKind::HotReadA);
        assert_eq!("write_only".parse::<WorkloadKind>().unwrap(), WorkloadKind::WriteOnly);
        assert!("scan".parse::<WorkloadKind>().is_err());
    }

    #[test]
    fn ratios_are_exact() {
        let d = data(900_000);
        for kind in WorkloadKind::ALL {
            let p = plan(&WorkloadSpec::new(kind, 3, 1), &d);
            assert!(p.ops() >= 100_000, "{kind}: {}", p.ops());
            let realized = p.inserts as f64 / p.ops() as f64;
            assert!((realized - kind.insert_ratio()).abs() < 0.005, "{kind}: {realized}");
        }
    }

    #[test]
    fn inserts_are_fresh_and_reads_hit() {
        let d = data(20_000);
        for kind in WorkloadKind::ALL {
            let p = plan(&WorkloadSpec::new(kind, 4, 2), &d);
            let loaded: HashSet<_> = p.load.iter().copied().collect();
            let mut inserted = HashSet::new();
            for op in p.streams.iter().flatten() {
                match *op {
                    Op::Insert(k) => {
                        assert!(!loaded.contains(&k));
                        assert!(inserted.insert(k));
                    }
                    Op::Get(k) => assert!(loaded.contains(&k)),
                }
            }
            assert_eq!(p.load.len() + inserted.len(), loaded.len() + p.inserts);
            assert!(p.load.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn hot_read_rounds_cover_hot_set() {
        let d = data(10_000);
        let p = plan(&WorkloadSpec::new(WorkloadKind::HotReadA, 1, 5), &d);
        assert_eq!(p.hot.len(), 1000);
        assert_eq!(p.lookups, 5000);
        let mut counts = std::collections::HashMap::new();
        for op in &p.streams[0] {
            if let Op::Get(k) = op {
                *counts.entry(*k).or_insert(0) += 1;
            }
        }
        assert_eq!(counts.len(), 1000);
        assert!(counts.values().all(|&c| c == 5));
        let sorted = d.sorted();
        let first = sorted.binary_search(&p.hot[0]).unwrap();
        assert_eq!(&sorted[first..first + 1000], &p.hot[..]);
    }

    #[test]
    fn hot_write_inserts_consecutive_eighth() {
        let d = data(8_000);
        let p = plan(&WorkloadSpec::new(WorkloadKind::HotWrite, 2, 5), &d);
        assert_eq!(p.inserts, 1000);
        assert_eq!(p.load.len(), 7000);
        let sorted = d.sorted();
        let first = sorted.binary_search(&p.hot[0]).unwrap();
        assert_eq!(&sorted[first..first + 1000], &p.hot[..]);
    }

    #[test]
    fn streams_split_evenly_and_deterministically() {
        let d = data(10_000);
        let spec = WorkloadSpec::new(WorkloadKind::Balanced, 3, 9);
        let a = plan(&spec, &d);
        let b = plan(&spec, &d);
        assert_eq!(a.streams, b.streams);
        let lens: Vec<_> = a.streams.iter().map(Vec::len).collect();
        assert!(lens.iter().max().unwrap() - lens.iter().min().unwrap() <= 1);
    }

    #[test]
    fn op_count_caps_timed_phase() {
        let d = data(10_000);
        let mut spec = WorkloadSpec::new(WorkloadKind::ReadIntensive, 1, 1);
        spec.op_count = Some(1000);
        let p = plan(&spec, &d);
        assert_eq!(p.inserts, 200);
        assert_eq!(p.lookups, 800);
    }
}
