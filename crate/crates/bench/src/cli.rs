//! Command-line flags and `key = value` config files.
//!
//! Every flag has a config-file key of the same name (`--size-cap-bytes`
//! and `size_cap_bytes` or `size-cap-bytes`). Settings are applied in the
//! order defaults, config file, flags, so flags win. Keys not listed here
//! are forwarded to [`EvolveConfig::set`].

use std::path::PathBuf;

use clap::Parser;
use learned_index::config::parse_pairs;
use learned_index::{ConfigError, EvolveConfig};

use crate::dataset::DatasetSource;
use crate::report::Format;
use crate::runner::RunConfig;
use crate::workload::{WorkloadKind, WorkloadSpec};

#[derive(Debug, Default, Parser)]
#[command(name = "bench", version, about = "Workload benchmark for the learned index")]
pub struct Args {
    /// File of `key = value` lines mirroring these flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// read-only, read-intensive, balanced, write-only, hot-read-a,
    /// hot-read-b or hot-write.
    #[arg(long)]
    pub workload: Option<String>,
    /// easy, hard or file:PATH.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub n: Option<String>,
    #[arg(long)]
    pub threads: Option<String>,
    /// prob, counter, sampling or off.
    #[arg(long)]
    pub stats_mode: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// on or off.
    #[arg(long)]
    pub read_evolving: Option<String>,
    /// Byte budget for the index, or `inf`.
    #[arg(long)]
    pub size_cap_bytes: Option<String>,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// csv or json.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub repeats: Option<String>,
    /// Timed op count; derived from the dataset when absent.
    #[arg(long)]
    pub op_count: Option<String>,
    /// Share of keys bulk-loaded before the timed phase.
    #[arg(long)]
    pub load_fraction: Option<String>,
    /// Check every key and the placement property after the run (on/off).
    #[arg(long)]
    pub verify: Option<String>,
    #[arg(long)]
    pub pla_epsilon: Option<String>,
    #[arg(long)]
    pub cooling_prob: Option<String>,
    /// Any other setting, as KEY=VALUE. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("cannot read config file {path}: {source}")]
    ConfigFile {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid value `{value}` for {key}: {reason}")]
    Invalid {
        key: String,
        value: String,
        reason: String,
    },
    #[error("expected KEY=VALUE, got `{0}`")]
    SetSyntax(String),
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub kind: WorkloadKind,
    pub dataset: DatasetSource,
    pub n: usize,
    pub threads: usize,
    pub seed: u64,
    pub repeats: usize,
    pub op_count: Option<usize>,
    pub load_fraction: Option<f64>,
    pub verify: bool,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub evolve: EvolveConfig,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            kind: WorkloadKind::WriteOnly,
            dataset: DatasetSource::Easy,
            n: 1_000_000,
            threads: 1,
            seed: 42,
            repeats: 5,
            op_count: None,
            load_fraction: None,
            verify: false,
            out: None,
            format: Format::Json,
            evolve: EvolveConfig {
                seed: 42,
                ..EvolveConfig::default()
            },
        }
    }
}

fn invalid(key: &str, value: &str, reason: impl ToString) -> CliError {
    CliError::Invalid {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| invalid(key, value, e))
}

fn flag(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => Err(invalid(key, value, "expected on/off")),
    }
}

impl Settings {
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let norm = key.trim().replace('-', "_");
        let value = value.trim();
        match norm.as_str() {
            "workload" => self.kind = value.parse().map_err(|e| invalid(key, value, e))?,
            "dataset" => self.dataset = DatasetSource::parse(value).map_err(|e| invalid(key, value, e))?,
            "n" => self.n = num(key, value)?,
            "threads" => self.threads = num(key, value)?,
            "seed" => {
                self.seed = num(key, value)?;
                self.evolve.seed = self.seed;
            }
            "repeats" => self.repeats = num(key, value)?,
            "op_count" => self.op_count = Some(num(key, value)?),
            "load_fraction" => self.load_fraction = Some(num(key, value)?),
            "verify" => self.verify = flag(key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            "format" => self.format = value.parse().map_err(|e| invalid(key, value, e))?,
            _ => self.evolve.set(key, value)?,
        }
        Ok(())
    }

    pub fn from_args(args: &Args) -> Result<Self, CliError> {
        let mut s = Settings::default();
        if let Some(path) = &args.config {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::ConfigFile {
                path: path.clone(),
                source,
            })?;
            for (_, k, v) in parse_pairs(&text)? {
                s.apply(&k, &v)?;
            }
        }
        let flags = [
            ("workload", &args.workload),
            ("dataset", &args.dataset),
            ("n", &args.n),
            ("threads", &args.threads),
            ("stats_mode", &args.stats_mode),
            ("seed", &args.seed),
            ("read_evolving", &args.read_evolving),
            ("size_cap_bytes", &args.size_cap_bytes),
            ("format", &args.format),
            ("repeats", &args.repeats),
            ("op_count", &args.op_count),
            ("load_fraction", &args.load_fraction),
            ("verify", &args.verify),
            ("pla_epsilon", &args.pla_epsilon),
            ("cooling_prob", &args.cooling_prob),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                s.apply(k, v)?;
            }
        }
        if let Some(out) = &args.out {
            s.out = Some(out.clone());
        }
        for kv in &args.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| CliError::SetSyntax(kv.clone()))?;
            s.apply(k, v)?;
        }
        s.evolve.validate()?;
        Ok(s)
    }

    pub fn run_config(&self) -> RunConfig {
        let mut workload = WorkloadSpec::new(self.kind, self.threads, self.seed);
        workload.op_count = self.op_count;
        if let Some(f) = self.load_fraction {
            workload.load_fraction = f;
        }
        RunConfig {
            workload,
            dataset: self.dataset.clone(),
            n: self.n,
            evolve: self.evolve.clone(),
            repeats: self.repeats,
            verify: self.verify,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use learned_index::StatsMode;

    fn parse(argv: &[&str]) -> Result<Settings, CliError> {
        let args = Args::try_parse_from(std::iter::once("bench").chain(argv.iter().copied())).unwrap();
        Settings::from_args(&args)
    }

    #[test]
    fn flags_map_onto_settings() {
        let s = parse(&[
            "--workload=hot-write",
            "--dataset=hard",
            "--n=5000",
            "--threads=8",
            "--stats-mode=sampling",
            "--seed=9",
            "--read-evolving=on",
            "--size-cap-bytes=4096",
            "--format=csv",
            "--repeats=3",
            "--set",
            "beta=1.5",
        ])
        .unwrap();
        assert_eq!(s.kind, WorkloadKind::HotWrite);
        assert_eq!(s.dataset, DatasetSource::Hard);
        assert_eq!((s.n, s.threads, s.seed, s.repeats), (5000, 8, 9, 3));
        assert_eq!(s.evolve.stats_mode, StatsMode::Sampling);
        assert_eq!(s.evolve.seed, 9);
        assert!(s.evolve.read_evolving_enabled);
        assert_eq!(s.evolve.index_size_cap, 4096);
        assert_eq!(s.evolve.beta, 1.5);
        assert_eq!(s.format, Format::Csv);
    }

    #[test]
    fn config_file_mirrors_flags_and_flags_win() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bench.conf");
        std::fs::write(
            &p,
            "# run settings\nworkload = balanced\nthreads = 4\nsize-cap-bytes = inf\nstats_mode = counter\nalpha = 0.2\n",
        )
        .unwrap();
        let path = p.to_str().unwrap();
        let s = parse(&["--config", path, "--threads=2"]).unwrap();
        assert_eq!(s.kind, WorkloadKind::Balanced);
        assert_eq!(s.threads, 2);
        assert_eq!(s.evolve.index_size_cap, u64::MAX);
        assert_eq!(s.evolve.stats_mode, StatsMode::SharedCounter);
        assert_eq!(s.evolve.alpha, 0.2);
    }

    #[test]
    fn bad_values_are_errors() {
        assert!(matches!(parse(&["--workload=scan"]), Err(CliError::Invalid { .. })));
        assert!(matches!(parse(&["--n=lots"]), Err(CliError::Invalid { .. })));
        assert!(matches!(parse(&["--stats-mode=psychic"]), Err(CliError::Config(_))));
        assert!(matches!(parse(&["--set", "gamma=1"]), Err(CliError::Config(_))));
        assert!(matches!(parse(&["--set", "beta"]), Err(CliError::SetSyntax(_))));
        assert!(matches!(parse(&["--set", "beta=0.5"]), Err(CliError::Config(_))));
        assert!(matches!(
            parse(&["--config", "/definitely/not/here"]),
            Err(CliError::ConfigFile { .. })
        ));
    }

    #[test]
    fn run_config_carries_overrides() {
        let s = parse(&["--op-count=100", "--load-fraction=0.25", "--verify=on"]).unwrap();
        let rc = s.run_config();
        assert_eq!(rc.workload.op_count, Some(100));
        assert_eq!(rc.workload.load_fraction, 0.25);
        assert!(rc.verify);
    }
}
