//! Run reports and their JSON / CSV encodings.

use std::fmt;
use std::io::Write;
use std::ops::AddAssign;
use std::path::Path;
use std::str::FromStr;

use learned_index::{EvolveConfig, EvolveStats, IndexStats};
use serde::{Deserialize, Serialize};

/// Latency summary over sampled ops, in nanoseconds. `histogram[i]` counts
/// samples in `[2^i, 2^(i+1))` (bucket 0 also holds zero).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub samples: u64,
    pub p50_ns: u64,
    pub p99_ns: u64,
    pub p999_ns: u64,
    pub max_ns: u64,
    pub histogram: Vec<u64>,
}

fn rank(sorted: &[u64], q: f64) -> u64 {
    let idx = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

impl Latency {
    pub fn from_sorted(sorted: &[u64]) -> Self {
        if sorted.is_empty() {
            return Latency::default();
        }
        let mut histogram = vec![0u64; 64 - sorted[sorted.len() - 1].max(1).leading_zeros() as usize];
        for &ns in sorted {
            histogram[63 - ns.max(1).leading_zeros() as usize] += 1;
        }
        Latency {
            samples: sorted.len() as u64,
            p50_ns: rank(sorted, 0.50),
            p99_ns: rank(sorted, 0.99),
            p999_ns: rank(sorted, 0.999),
            max_ns: sorted[sorted.len() - 1],
            histogram,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub lookups: u64,
    pub inserts: u64,
    pub found: u64,
    pub failed_inserts: u64,
}

impl AddAssign for OpCounts {
    fn add_assign(&mut self, o: Self) {
        self.lookups += o.lookups;
        self.inserts += o.inserts;
        self.found += o.found;
        self.failed_inserts += o.failed_inserts;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatMeasure {
    pub elapsed_s: f64,
    pub throughput: f64,
    pub latency: Latency,
}

/// Post-run oracle checks.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verification {
    pub keys_checked: u64,
    /// Expected keys not found or found with the wrong value.
    pub missing: u64,
    /// Lookups outside compressed nodes whose slot probes differ from depth.
    pub placement_mismatches: u64,
    pub scan_matches: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub workload: String,
    pub dataset: String,
    pub n: u64,
    pub threads: u64,
    pub repeats: u64,
    pub seed: u64,
    pub stats_mode: String,
    /// Ops per second, averaged over repeats without the best and worst.
    pub throughput: f64,
    pub repeat_measures: Vec<RepeatMeasure>,
    pub latency: Latency,
    pub ops: OpCounts,
    pub wrong_values: u64,
    pub load_keys: u64,
    pub hot_keys: u64,
    pub hot_depth_before: Option<f64>,
    pub hot_depth_after: Option<f64>,
    pub stats_before: IndexStats,
    pub stats_after: IndexStats,
    pub evolve: EvolveStats,
    pub compression_bytes_saved: u64,
    pub counter_writes: u64,
    pub violations: u64,
    pub verification: Option<Verification>,
    pub config: EvolveConfig,
    pub git_rev: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown format `{s}` (expected csv or json)")),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Json => "json",
        })
    }
}

/// CSV columns, in order.
pub const CSV_COLUMNS: &[&str] = &[
    "workload",
    "dataset",
    "n",
    "threads",
    "repeats",
    "seed",
    "stats_mode",
    "throughput",
    "p50_ns",
    "p99_ns",
    "p999_ns",
    "max_ns",
    "latency_samples",
    "lookups",
    "inserts",
    "found",
    "failed_inserts",
    "insert_evolves",
    "lookup_evolves",
    "compressions",
    "decompressions",
    "abandoned",
    "skipped_large",
    "skipped_flat",
    "compression_bytes_saved",
    "counter_writes",
    "max_depth_before",
    "avg_depth_before",
    "max_depth_after",
    "avg_depth_after",
    "bytes_before",
    "bytes_after",
    "hot_depth_before",
    "hot_depth_after",
    "violations",
    "git_rev",
    "config",
];

#[derive(Serialize)]
struct CsvRow<'a> {
    workload: &'a str,
    dataset: &'a str,
    n: u64,
    threads: u64,
    repeats: u64,
    seed: u64,
    stats_mode: &'a str,
    throughput: f64,
    p50_ns: u64,
    p99_ns: u64,
    p999_ns: u64,
    max_ns: u64,
    latency_samples: u64,
    lookups: u64,
    inserts: u64,
    found: u64,
    failed_inserts: u64,
    insert_evolves: u64,
    lookup_evolves: u64,
    compressions: u64,
    decompressions: u64,
    abandoned: u64,
    skipped_large: u64,
    skipped_flat: u64,
    compression_bytes_saved: u64,
    counter_writes: u64,
    max_depth_before: u32,
    avg_depth_before: f64,
    max_depth_after: u32,
    avg_depth_after: f64,
    bytes_before: u64,
    bytes_after: u64,
    hot_depth_before: Option<f64>,
    hot_depth_after: Option<f64>,
    violations: u64,
    git_rev: &'a str,
    config: String,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// `key=value` pairs of the evolve configuration joined by `;`.
    pub fn config_echo(&self) -> String {
        self.config
            .to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";")
    }

    fn csv_row(&self) -> CsvRow<'_> {
        let e = &self.evolve;
        CsvRow {
            workload: &self.workload,
            dataset: &self.dataset,
            n: self.n,
            threads: self.threads,
            repeats: self.repeats,
            seed: self.seed,
            stats_mode: &self.stats_mode,
            throughput: self.throughput,
            p50_ns: self.latency.p50_ns,
            p99_ns: self.latency.p99_ns,
            p999_ns: self.latency.p999_ns,
            max_ns: self.latency.max_ns,
            latency_samples: self.latency.samples,
            lookups: self.ops.lookups,
            inserts: self.ops.inserts,
            found: self.ops.found,
            failed_inserts: self.ops.failed_inserts,
            insert_evolves: e.insert_evolves,
            lookup_evolves: e.lookup_evolves,
            compressions: e.compressions,
            decompressions: e.decompressions,
            abandoned: e.abandoned,
            skipped_large: e.skipped_large,
            skipped_flat: e.skipped_flat,
            compression_bytes_saved: self.compression_bytes_saved,
            counter_writes: self.counter_writes,
            max_depth_before: self.stats_before.max_depth,
            avg_depth_before: self.stats_before.avg_depth,
            max_depth_after: self.stats_after.max_depth,
            avg_depth_after: self.stats_after.avg_depth,
            bytes_before: self.stats_before.bytes_total,
            bytes_after: self.stats_after.bytes_total,
            hot_depth_before: self.hot_depth_before,
            hot_depth_after: self.hot_depth_after,
            violations: self.violations,
            git_rev: &self.git_rev,
            config: self.config_echo(),
        }
    }

    /// Header plus one row per report.
    pub fn write_csv<W: Write>(reports: &[RunReport], out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if reports.is_empty() {
            w.write_record(CSV_COLUMNS)?;
        }
        for r in reports {
            w.serialize(r.csv_row())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => self.to_json() + "\n",
            Format::Csv => {
                let mut buf = Vec::new();
                RunReport::write_csv(std::slice::from_ref(self), &mut buf).expect("in-memory csv");
                String::from_utf8(buf).expect("csv is utf-8")
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("cannot write {path}: {source}")]
pub struct EmitError {
    path: String,
    source: std::io::Error,
}

pub fn emit_report(report: &RunReport, format: Format, path: &Path) -> Result<(), EmitError> {
    std::fs::write(path, report.render(format)).map_err(|source| EmitError {
        path: path.display().to_string(),
        source,
    })
}

/// Short commit hash of the source tree, or `unknown`.
pub fn git_revision() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "--short", "HEAD"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".to_string())
}
