//! Drives an index through a planned workload on worker threads.

use std::sync::{Arc, Barrier};
use std::time::Instant;

use learned_index::{EvolveConfig, Index, ThreadLocalState};

use crate::dataset::{generate_dataset, Dataset, DatasetError, DatasetSource};
use crate::report::{Latency, OpCounts, RepeatMeasure, RunReport, Verification};
use crate::workload::{plan, Op, Plan, WorkloadSpec};

/// Every `LATENCY_SAMPLE`-th op of each worker is timed.
pub const LATENCY_SAMPLE: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] learned_index::ConfigError),
    #[error("threads must be at least 1")]
    NoThreads,
    #[error("repeats must be at least 1")]
    NoRepeats,
    #[error("load fraction must lie in (0, 1], got {0}")]
    LoadFraction(f64),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("index error: {0}")]
    Index(#[from] learned_index::Error),
}

impl RunError {
    /// Errors caused by the user-supplied settings rather than by the run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            RunError::Config(_)
                | RunError::NoThreads
                | RunError::NoRepeats
                | RunError::LoadFraction(_)
                | RunError::Dataset(DatasetError::Empty | DatasetError::Unknown(_))
        )
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub workload: WorkloadSpec,
    pub dataset: DatasetSource,
    pub n: usize,
    pub evolve: EvolveConfig,
    pub repeats: usize,
    /// Check every key, the full scan and the placement property after the
    /// last repeat.
    pub verify: bool,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        self.evolve.validate()?;
        if self.workload.threads == 0 {
            return Err(RunError::NoThreads);
        }
        if self.repeats == 0 {
            return Err(RunError::NoRepeats);
        }
        let f = self.workload.load_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(RunError::LoadFraction(f));
        }
        if self.n == 0 {
            return Err(DatasetError::Empty.into());
        }
        Ok(())
    }
}

/// Value stored for `key`; lets lookups check they read the right entry.
pub fn value_for(key: u64) -> u64 {
    key.rotate_left(29) ^ 0x5bd1_e995_5bd1_e995
}

pub fn run(cfg: &RunConfig) -> Result<RunReport, RunError> {
    cfg.validate()?;
    let data = generate_dataset(&cfg.dataset, cfg.n, cfg.workload.seed)?;
    run_on(cfg, &data)
}

struct Worker {
    latencies: Vec<u64>,
    counts: OpCounts,
    wrong_values: u64,
}

fn run_stream(index: &Index, tls: &mut ThreadLocalState, ops: &[Op]) -> Worker {
    let mut w = Worker {
        latencies: Vec::with_capacity(ops.len() / LATENCY_SAMPLE + 1),
        counts: OpCounts::default(),
        wrong_values: 0,
    };
    let mut exec = |op: Op, w: &mut Worker| match op {
        Op::Get(k) => {
            w.counts.lookups += 1;
            match index.get_with(tls, k) {
                Some(v) => {
                    w.counts.found += 1;
                    if v != value_for(k) {
                        w.wrong_values += 1;
                    }
                }
                None => {}
            }
        }
        Op::Insert(k) => {
            w.counts.inserts += 1;
            if index.insert_with(tls, k, value_for(k)).is_err() {
                w.counts.failed_inserts += 1;
            }
        }
    };
    for (i, &op) in ops.iter().enumerate() {
        if i % LATENCY_SAMPLE == 0 {
            let t = Instant::now();
            exec(op, &mut w);
            w.latencies.push(t.elapsed().as_nanos() as u64);
        } else {
            exec(op, &mut w);
        }
    }
    w
}

fn hot_depth(index: &Index, hot: &[u64]) -> Option<f64> {
    if hot.is_empty() {
        return None;
    }
    let sum: u64 = hot.iter().map(|&k| index.depth_of(k).unwrap_or(0) as u64).sum();
    Some(sum as f64 / hot.len() as f64)
}

fn verify(index: &Index, plan: &Plan) -> Verification {
    let mut expected: Vec<u64> = plan.load.clone();
    for op in plan.streams.iter().flatten() {
        if let Op::Insert(k) = *op {
            expected.push(k);
        }
    }
    expected.sort_unstable();
    let mut v = Verification::default();
    for &k in &expected {
        let (got, trace) = index.lookup_traced(k);
        if got != Some(value_for(k)) {
            v.missing += 1;
        }
        if !trace.compressed && trace.slot_probes != trace.depth {
            v.placement_mismatches += 1;
        }
    }
    let scan = index.to_vec();
    v.scan_matches = scan.len() == expected.len()
        && scan.iter().zip(&expected).all(|(&(k, val), &e)| k == e && val == value_for(k));
    v.keys_checked = expected.len() as u64;
    v
}

struct Repeat {
    measure: RepeatMeasure,
    latencies: Vec<u64>,
    counts: OpCounts,
    index: Arc<Index>,
    stats_before: learned_index::IndexStats,
    hot_before: Option<f64>,
    wrong_values: u64,
}

fn one_repeat(cfg: &RunConfig, plan: &Plan, repeat: usize) -> Result<Repeat, RunError> {
    let load: Vec<_> = plan.load.iter().map(|&k| (k, value_for(k))).collect();
    let index = Arc::new(Index::from_sorted(cfg.evolve.clone(), &load)?);
    drop(load);
    let stats_before = index.stats();
    let hot_before = hot_depth(&index, &plan.hot);
    let threads = plan.streams.len();
    let barrier = Arc::new(Barrier::new(threads + 1));
    let (start, results): (Instant, Vec<Worker>) = std::thread::scope(|s| {
        let handles: Vec<_> = plan
            .streams
            .iter()
            .enumerate()
            .map(|(t, ops)| {
                let index = index.clone();
                let barrier = barrier.clone();
                let seed = cfg.evolve.seed ^ (repeat as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
                s.spawn(move || {
                    let mut tls = ThreadLocalState::new(seed, t as u64 + 1);
                    barrier.wait();
                    run_stream(&index, &mut tls, ops)
                })
            })
            .collect();
        barrier.wait();
        let start = Instant::now();
        (start, handles.into_iter().map(|h| h.join().expect("worker panicked")).collect())
    });
    let elapsed = start.elapsed().as_secs_f64();
    let mut latencies = Vec::new();
    let mut counts = OpCounts::default();
    let mut wrong_values = 0;
    for w in results {
        latencies.extend(w.latencies);
        counts += w.counts;
        wrong_values += w.wrong_values;
    }
    latencies.sort_unstable();
    let ops = counts.lookups + counts.inserts;
    let measure = RepeatMeasure {
        elapsed_s: elapsed,
        throughput: if elapsed > 0.0 { ops as f64 / elapsed } else { 0.0 },
        latency: Latency::from_sorted(&latencies),
    };
    Ok(Repeat {
        measure,
        latencies,
        counts,
        index,
        stats_before,
        hot_before,
        wrong_values,
    })
}

/// Mean after dropping the lowest and highest value (when at least three).
pub fn trimmed_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let kept = if v.len() >= 3 { &v[1..v.len() - 1] } else { &v[..] };
    kept.iter().sum::<f64>() / kept.len() as f64
}

pub fn run_on(cfg: &RunConfig, data: &Dataset) -> Result<RunReport, RunError> {
    cfg.validate()?;
    let plan = plan(&cfg.workload, data);
    let mut measures = Vec::with_capacity(cfg.repeats);
    let mut all_latencies = Vec::new();
    let mut last = None;
    for r in 0..cfg.repeats {
        let rep = one_repeat(cfg, &plan, r)?;
        measures.push(rep.measure.clone());
        all_latencies.extend_from_slice(&rep.latencies);
        last = Some(rep);
    }
    let last = last.expect("at least one repeat");
    let index = &last.index;
    all_latencies.sort_unstable();
    let throughputs: Vec<f64> = measures.iter().map(|m| m.throughput).collect();
    let evolve = index.evolve_stats();
    let verification = cfg.verify.then(|| verify(index, &plan));
    Ok(RunReport {
        workload: cfg.workload.kind.to_string(),
        dataset: data.name.clone(),
        n: data.len() as u64,
        threads: cfg.workload.threads as u64,
        repeats: cfg.repeats as u64,
        seed: cfg.workload.seed,
        stats_mode: cfg.evolve.stats_mode.to_string(),
        throughput: trimmed_mean(&throughputs),
        repeat_measures: measures,
        latency: Latency::from_sorted(&all_latencies),
        ops: last.counts,
        wrong_values: last.wrong_values,
        load_keys: plan.load.len() as u64,
        hot_keys: plan.hot.len() as u64,
        hot_depth_before: last.hot_before,
        hot_depth_after: hot_depth(index, &plan.hot),
        stats_before: last.stats_before,
        stats_after: index.stats(),
        compression_bytes_saved: evolve.bytes_before_compress.saturating_sub(evolve.bytes_after_compress),
        counter_writes: evolve.counter_writes,
        evolve,
        violations: index.validate().len() as u64,
        verification,
        config: cfg.evolve.clone(),
        git_rev: crate::report::git_revision(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::WorkloadKind;

    fn cfg(kind: WorkloadKind, threads: usize, n: usize) -> RunConfig {
        RunConfig {
            workload: WorkloadSpec::new(kind, threads, 11),
            dataset: DatasetSource::Easy,
            n,
            evolve: EvolveConfig::default(),
            repeats: 1,
            verify: true,
        }
    }

    #[test]
    fn trimmed_mean_drops_extremes() {
        assert_eq!(trimmed_mean(&[1.0, 100.0, 2.0, 3.0, -50.0]), 2.0);
        assert_eq!(trimmed_mean(&[4.0, 6.0]), 5.0);
        assert_eq!(trimmed_mean(&[]), 0.0);
    }

    #[test]
    fn write_only_reaches_full_size() {
        let r = run(&cfg(WorkloadKind::WriteOnly, 1, 100_000)).unwrap();
        assert_eq!(r.stats_after.entry_count, 100_000);
        assert_eq!(r.ops.failed_inserts, 0);
        let v = r.verification.unwrap();
        assert_eq!(v.missing, 0);
        assert!(v.scan_matches);
        assert_eq!(v.placement_mismatches, 0);
        assert_eq!(r.violations, 0);
    }

    #[test]
    fn read_only_never_evolves_without_read_evolving() {
        let mut c = cfg(WorkloadKind::ReadOnly, 2, 20_000);
        c.workload.op_count = Some(50_000);
        let r = run(&c).unwrap();
        let e = r.evolve;
        assert_eq!(e.insert_evolves + e.lookup_evolves + e.compressions, 0);
        assert_eq!(r.ops.found, r.ops.lookups);
        assert_eq!(r.wrong_values, 0);
    }

    #[test]
    fn latency_is_sampled() {
        let mut c = cfg(WorkloadKind::ReadOnly, 1, 10_000);
        c.workload.op_count = Some(64 * 100);
        let r = run(&c).unwrap();
        assert_eq!(r.latency.samples, 100);
    }

    #[test]
    fn invalid_settings_are_config_errors() {
        let mut c = cfg(WorkloadKind::Balanced, 0, 10);
        assert!(run(&c).unwrap_err().is_config());
        c.workload.threads = 1;
        c.repeats = 0;
        assert!(run(&c).unwrap_err().is_config());
        c.repeats = 1;
        c.evolve.beta = 0.5;
        assert!(run(&c).unwrap_err().is_config());
    }
}
