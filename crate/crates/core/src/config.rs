//! Tuning knobs for evolution triggers, expansion, cooling and compression.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// How per-node degradation statistics are maintained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StatsMode {
    /// Bernoulli trials on conflicts and sampled lookups; no shared writes.
    #[default]
    Probability,
    /// Every insert bumps an atomic counter in every node on its path.
    SharedCounter,
    /// Like `SharedCounter`, but only every `sampling_period`-th insert of a
    /// thread touches the counters.
    Sampling,
    /// No statistics and no evolution. Baseline for overhead measurements.
    Off,
}

impl StatsMode {
    pub fn as_str(self) -> &'static str {
        match self {
            StatsMode::Probability => "prob",
            StatsMode::SharedCounter => "counter",
            StatsMode::Sampling => "sampling",
            StatsMode::Off => "off",
        }
    }

    pub(crate) fn to_u8(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_u8(v: u8) -> Self {
        match v {
            0 => StatsMode::Probability,
            1 => StatsMode::SharedCounter,
            2 => StatsMode::Sampling,
            _ => StatsMode::Off,
        }
    }
}

impl fmt::Display for StatsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StatsMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "prob" | "probability" => Ok(StatsMode::Probability),
            "counter" | "shared-counter" => Ok(StatsMode::SharedCounter),
            "sampling" => Ok(StatsMode::Sampling),
            "off" | "none" => Ok(StatsMode::Off),
            other => Err(format!("unknown stats mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolveConfig {
    /// Conflict tolerance: share of new inserts that may conflict.
    pub alpha: f64,
    /// Accumulation tolerance: growth factor over `build_num` before a
    /// node counts as having absorbed enough new keys.
    pub beta: f64,
    /// Expansion base factor.
    pub theta: f64,
    /// Penalty applied to the hot-lookup probability of nodes whose last
    /// evolve was lookup-triggered.
    pub lambda: f64,
    /// Hot-lookup trigger probability.
    pub p_hl: f64,
    /// `ε = path_size / epsilon_divisor` keeps the accumulation probability
    /// away from a permanent zero.
    pub epsilon_divisor: f64,
    pub cooling_probability: f64,
    /// Subtrees with at least this many keys never evolve.
    pub max_evolve_keys: u64,
    /// Soft upper bound on the index footprint, in bytes.
    pub index_size_cap: u64,
    /// Position error bound of compressed nodes.
    pub pla_epsilon: u32,
    /// Insertion rate (keys per tick) assumed for a freshly bulk-loaded
    /// root; every node below it starts with its key share.
    pub initial_speed: f64,
    /// Segments per flattened hot-lookup group.
    pub flatten_segments: usize,
    pub read_evolving_enabled: bool,
    pub lookup_sample_period: u32,
    pub stats_mode: StatsMode,
    /// Period of the `Sampling` statistics mode.
    pub sampling_period: u32,
    /// When false the expansion speed ratio is pinned to 1 (fixed factor).
    pub adaptive_expansion: bool,
    /// Upper clamp on the speed ratio used for expansion.
    pub max_speed_ratio: f64,
    /// Slots per key reserved by bulk builds.
    pub build_gap_factor: f64,
    /// Allow `insert` to overwrite the value of an existing key.
    pub upsert: bool,
    /// Master seed for per-thread generators.
    pub seed: u64,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        EvolveConfig {
            alpha: 0.1,
            beta: 2.0,
            theta: 1.0,
            lambda: 0.1,
            p_hl: 0.05,
            epsilon_divisor: 1000.0,
            cooling_probability: 0.10,
            max_evolve_keys: 1_000_000,
            index_size_cap: u64::MAX,
            pla_epsilon: 16,
            initial_speed: 0.1,
            flatten_segments: 2,
            read_evolving_enabled: false,
            lookup_sample_period: 10,
            stats_mode: StatsMode::Probability,
            sampling_period: 10,
            adaptive_expansion: true,
            max_speed_ratio: 16.0,
            build_gap_factor: 2.0,
            upsert: false,
            seed: 0,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn parse_flag(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => Err(ConfigError::InvalidValue {
            key: key.to_string(),
            value: value.to_string(),
            reason: "expected on/off".into(),
        }),
    }
}

fn parse_bytes(key: &str, value: &str) -> Result<u64, ConfigError> {
    if matches!(value, "inf" | "infinity" | "none" | "max") {
        return Ok(u64::MAX);
    }
    parse_value(key, value)
}

impl EvolveConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        fn check(ok: bool, field: &'static str, reason: &str) -> Result<(), ConfigError> {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::OutOfRange {
                    field,
                    reason: reason.to_string(),
                })
            }
        }
        check(self.alpha > 0.0, "alpha", "must be > 0")?;
        check(self.beta > 1.0, "beta", "must be > 1")?;
        check(self.theta > 0.0, "theta", "must be > 0")?;
        check(self.p_hl > 0.0 && self.p_hl <= 1.0, "p_hl", "must be in (0, 1]")?;
        check(self.lambda > 0.0 && self.lambda < 1.0, "lambda", "must be in (0, 1)")?;
        check(
            (0.0..=1.0).contains(&self.cooling_probability),
            "cooling_probability",
            "must be in [0, 1]",
        )?;
        check(self.epsilon_divisor > 0.0, "epsilon_divisor", "must be > 0")?;
        check(self.initial_speed >= 0.0, "initial_speed", "must be >= 0")?;
        check(self.pla_epsilon >= 1, "pla_epsilon", "must be >= 1")?;
        check(self.flatten_segments >= 2, "flatten_segments", "must be >= 2")?;
        check(self.lookup_sample_period >= 1, "lookup_sample_period", "must be >= 1")?;
        check(self.sampling_period >= 1, "sampling_period", "must be >= 1")?;
        check(self.max_speed_ratio >= 1.0, "max_speed_ratio", "must be >= 1")?;
        check(self.build_gap_factor >= 1.0, "build_gap_factor", "must be >= 1")?;
        check(self.max_evolve_keys >= 2, "max_evolve_keys", "must be >= 2")?;
        Ok(())
    }

    /// Applies one `key = value` setting. Keys accept `snake_case` or
    /// `kebab-case`, plus a few CLI-style aliases.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let norm = key.trim().replace('-', "_");
        let value = value.trim();
        match norm.as_str() {
            "alpha" => self.alpha = parse_value(key, value)?,
            "beta" => self.beta = parse_value(key, value)?,
            "theta" => self.theta = parse_value(key, value)?,
            "lambda" => self.lambda = parse_value(key, value)?,
            "p_hl" => self.p_hl = parse_value(key, value)?,
            "epsilon_divisor" => self.epsilon_divisor = parse_value(key, value)?,
            "cooling_probability" | "cooling_prob" => {
                self.cooling_probability = parse_value(key, value)?
            }
            "max_evolve_keys" => self.max_evolve_keys = parse_value(key, value)?,
            "index_size_cap" | "size_cap_bytes" => self.index_size_cap = parse_bytes(key, value)?,
            "pla_epsilon" => self.pla_epsilon = parse_value(key, value)?,
            "initial_speed" => self.initial_speed = parse_value(key, value)?,
            "flatten_segments" => self.flatten_segments = parse_value(key, value)?,
            "read_evolving_enabled" | "read_evolving" => {
                self.read_evolving_enabled = parse_flag(key, value)?
            }
            "lookup_sample_period" => self.lookup_sample_period = parse_value(key, value)?,
            "stats_mode" => self.stats_mode = parse_value(key, value)?,
            "sampling_period" => self.sampling_period = parse_value(key, value)?,
            "adaptive_expansion" => self.adaptive_expansion = parse_flag(key, value)?,
            "max_speed_ratio" => self.max_speed_ratio = parse_value(key, value)?,
            "build_gap_factor" => self.build_gap_factor = parse_value(key, value)?,
            "upsert" => self.upsert = parse_flag(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Reads `key = value` lines. Blank lines and `#` comments are skipped.
    /// Unknown keys are returned to the caller instead of failing, so a
    /// front end can layer its own settings into the same file.
    pub fn apply_str(&mut self, text: &str) -> Result<Vec<(String, String)>, ConfigError> {
        let mut rest = Vec::new();
        for (_, key, value) in parse_pairs(text)? {
            match self.set(&key, &value) {
                Ok(()) => {}
                Err(ConfigError::UnknownKey(_)) => rest.push((key, value)),
                Err(e) => return Err(e),
            }
        }
        Ok(rest)
    }

    pub fn from_str_strict(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = EvolveConfig::default();
        if let Some((key, _)) = cfg.apply_str(text)?.into_iter().next() {
            return Err(ConfigError::UnknownKey(key));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every setting as `(key, value)` in declaration order, in the same
    /// syntax [`EvolveConfig::set`] accepts.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let cap = if self.index_size_cap == u64::MAX {
            "inf".to_string()
        } else {
            self.index_size_cap.to_string()
        };
        let flag = |b: bool| if b { "on" } else { "off" }.to_string();
        vec![
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
            ("theta", self.theta.to_string()),
            ("lambda", self.lambda.to_string()),
            ("p_hl", self.p_hl.to_string()),
            ("epsilon_divisor", self.epsilon_divisor.to_string()),
            ("cooling_probability", self.cooling_probability.to_string()),
            ("max_evolve_keys", self.max_evolve_keys.to_string()),
            ("index_size_cap", cap),
            ("pla_epsilon", self.pla_epsilon.to_string()),
            ("initial_speed", self.initial_speed.to_string()),
            ("flatten_segments", self.flatten_segments.to_string()),
            ("read_evolving_enabled", flag(self.read_evolving_enabled)),
            ("lookup_sample_period", self.lookup_sample_period.to_string()),
            ("stats_mode", self.stats_mode.to_string()),
            ("sampling_period", self.sampling_period.to_string()),
            ("adaptive_expansion", flag(self.adaptive_expansion)),
            ("max_speed_ratio", self.max_speed_ratio.to_string()),
            ("build_gap_factor", self.build_gap_factor.to_string()),
            ("upsert", flag(self.upsert)),
            ("seed", self.seed.to_string()),
        ]
    }
}

/// Splits `key = value` lines, skipping blanks and `#` comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or(ConfigError::Syntax { line: i + 1 })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1 });
        }
        out.push((i + 1, k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        EvolveConfig::default().validate().unwrap();
    }

    #[test]
    fn pairs_round_trip() {
        let mut cfg = EvolveConfig::default();
        cfg.alpha = 0.25;
        cfg.stats_mode = StatsMode::Sampling;
        cfg.index_size_cap = 1 << 20;
        cfg.read_evolving_enabled = true;
        let text: String = cfg
            .to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        assert_eq!(EvolveConfig::from_str_strict(&text).unwrap(), cfg);
    }

    #[test]
    fn kebab_and_comments() {
        let cfg = EvolveConfig::from_str_strict(
            "# tuned\nsize-cap-bytes = 4096\n\ncooling-prob = 0.5 # half\nread-evolving=on\n",
        )
        .unwrap();
        assert_eq!(cfg.index_size_cap, 4096);
        assert_eq!(cfg.cooling_probability, 0.5);
        assert!(cfg.read_evolving_enabled);
    }

    #[test]
    fn rejects_out_of_range() {
        for (k, v) in [
            ("beta", "1"),
            ("alpha", "0"),
            ("lambda", "1"),
            ("p_hl", "0"),
            ("cooling_probability", "1.5"),
        ] {
            let err = EvolveConfig::from_str_strict(&format!("{k}={v}")).unwrap_err();
            assert!(matches!(err, ConfigError::OutOfRange { .. }), "{k}: {err}");
        }
    }

    #[test]
    fn unknown_keys_are_passed_through() {
        let mut cfg = EvolveConfig::default();
        let rest = cfg.apply_str("threads = 8\nbeta = 3").unwrap();
        assert_eq!(rest, vec![("threads".to_string(), "8".to_string())]);
        assert_eq!(cfg.beta, 3.0);
        assert!(EvolveConfig::from_str_strict("threads = 8").is_err());
    }

    #[test]
    fn syntax_error_reports_line() {
        assert_eq!(
            EvolveConfig::from_str_strict("alpha = 0.1\nbogus").unwrap_err(),
            ConfigError::Syntax { line: 2 }
        );
    }
}
