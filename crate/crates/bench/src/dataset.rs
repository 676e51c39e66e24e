//! Synthetic and file-backed key sets.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("dataset size must be at least 1")]
    Empty,
    #[error("unknown dataset `{0}` (expected easy, hard or file:PATH)")]
    Unknown(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: not an unsigned integer: `{text}`")]
    Parse { path: PathBuf, line: usize, text: String },
    #[error("{path} holds {have} distinct keys, {want} requested")]
    TooSmall { path: PathBuf, have: usize, want: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Hard,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetSource {
    Easy,
    Hard,
    File(PathBuf),
}

impl DatasetSource {
    pub fn parse(s: &str) -> Result<Self, DatasetError> {
        match s {
            "easy" => Ok(Self::Easy),
            "hard" => Ok(Self::Hard),
            _ => match s.strip_prefix("file:") {
                Some(p) if !p.is_empty() => Ok(Self::File(PathBuf::from(p))),
                _ => Err(DatasetError::Unknown(s.to_string())),
            },
        }
    }
}

impl fmt::Display for DatasetSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Easy => f.write_str("easy"),
            Self::Hard => f.write_str("hard"),
            Self::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

/// Unique keys in a seeded random order. Workloads decide which prefix is
/// bulk-loaded and which suffix is inserted.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub difficulty: Difficulty,
    pub keys: Vec<u64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn sorted(&self) -> Vec<u64> {
        let mut k = self.keys.clone();
        k.sort_unstable();
        k
    }
}

pub fn generate_dataset(source: &DatasetSource, n: usize, seed: u64) -> Result<Dataset, DatasetError> {
    if n == 0 {
        return Err(DatasetError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (difficulty, mut keys) = match source {
        DatasetSource::Easy => (Difficulty::Easy, near_linear(n, &mut rng)),
        DatasetSource::Hard => (Difficulty::Hard, lognormal_mixture(n, &mut rng)),
        DatasetSource::File(path) => (Difficulty::External, read_keys(path, n)?),
    };
    keys.shuffle(&mut rng);
    Ok(Dataset {
        name: source.to_string(),
        difficulty,
        keys,
    })
}

fn fill_unique(n: usize, mut draw: impl FnMut() -> u64) -> Vec<u64> {
    let mut seen = HashSet::with_capacity(n);
    let mut keys = Vec::with_capacity(n);
    while keys.len() < n {
        let k = draw();
        if seen.insert(k) {
            keys.push(k);
        }
    }
    keys
}

/// Near-linear CDF: the i-th key sits at `i * stride` plus a uniform
/// jitter of up to 1.25 strides, so neighbours overlap a little but any
/// half-stride window holds at most two keys.
fn near_linear(n: usize, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let stride = ((1u64 << 48) / n as u64).max(4);
    let jitter = stride + stride / 4;
    let mut keys: Vec<u64> = (0..n as u64)
        .map(|i| i * stride + rng.random_range(0..jitter))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    while keys.len() < n {
        let k = rng.random_range(0..n as u64 * stride);
        if let Err(pos) = keys.binary_search(&k) {
            keys.insert(pos, k);
        }
    }
    keys
}

/// Mixture of lognormal clusters with widely varying spread and weight,
/// placed at random offsets. The resulting CDF has sharp steps and long
/// flat stretches at every scale.
fn lognormal_mixture(n: usize, rng: &mut ChaCha8Rng) -> Vec<u64> {
    const CLUSTERS: usize = 24;
    let comps: Vec<(u64, LogNormal<f64>, f64)> = (0..CLUSTERS)
        .map(|_| {
            let offset = rng.random_range(0..1u64 << 60);
            let sigma = rng.random_range(0.3..2.5);
            let mu = rng.random_range(8.0..30.0);
            let weight: f64 = rng.random_range(0.05..1.0);
            (offset, LogNormal::new(mu, sigma).expect("valid lognormal"), weight * weight)
        })
        .collect();
    let total: f64 = comps.iter().map(|c| c.2).sum();
    fill_unique(n, || {
        let mut pick = rng.random::<f64>() * total;
        let mut c = &comps[CLUSTERS - 1];
        for comp in &comps {
            if pick < comp.2 {
                c = comp;
                break;
            }
            pick -= comp.2;
        }
        let x = c.1.sample(rng).min((1u64 << 62) as f64) as u64;
        c.0.saturating_add(x)
    })
}

/// Newline-delimited unsigned integers; blank lines are skipped and
/// duplicates keep their first occurrence. Takes the first `n` distinct keys.
fn read_keys(path: &Path, n: usize) -> Result<Vec<u64>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut seen = HashSet::new();
    let mut keys = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let k: u64 = t.parse().map_err(|_| DatasetError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            text: t.to_string(),
        })?;
        if seen.insert(k) {
            keys.push(k);
            if keys.len() == n {
                return Ok(keys);
            }
        }
    }
    Err(DatasetError::TooSmall {
        path: path.to_path_buf(),
        have: keys.len(),
        want: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_sources() {
        assert_eq!(DatasetSource::parse("easy").unwrap(), DatasetSource::Easy);
        assert_eq!(
            DatasetSource::parse("file:/tmp/k.txt").unwrap(),
            DatasetSource::File("/tmp/k.txt".into())
        );
        assert!(DatasetSource::parse("file:").is_err());
        assert!(DatasetSource::parse("osm").is_err());
        assert_eq!(DatasetSource::parse("hard").unwrap().to_string(), "hard");
    }

    #[test]
    fn same_seed_same_keys() {
        for src in [DatasetSource::Easy, DatasetSource::Hard] {
            let a = generate_dataset(&src, 5000, 7).unwrap();
            let b = generate_dataset(&src, 5000, 7).unwrap();
            let c = generate_dataset(&src, 5000, 8).unwrap();
            assert_eq!(a.keys, b.keys);
            assert_ne!(a.keys, c.keys);
        }
    }

    #[test]
    fn keys_unique() {
        let d = generate_dataset(&DatasetSource::Hard, 20_000, 1).unwrap();
        let set: HashSet<_> = d.keys.iter().collect();
        assert_eq!(set.len(), 20_000);
    }

    #[test]
    fn zero_rejected() {
        assert!(matches!(
            generate_dataset(&DatasetSource::Easy, 0, 1),
            Err(DatasetError::Empty)
        ));
    }

    #[test]
    fn file_source() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("keys.txt");
        std::fs::write(&p, "5\n3\n\n5\n9\n").unwrap();
        let d = generate_dataset(&DatasetSource::File(p.clone()), 3, 1).unwrap();
        assert_eq!(d.sorted(), vec![3, 5, 9]);
        assert_eq!(d.difficulty, Difficulty::External);
        assert!(matches!(
            generate_dataset(&DatasetSource::File(p.clone()), 4, 1),
            Err(DatasetError::TooSmall { have: 3, .. })
        ));
        std::fs::write(&p, "1\nx\n").unwrap();
        assert!(matches!(
            generate_dataset(&DatasetSource::File(p), 2, 1),
            Err(DatasetError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            generate_dataset(&DatasetSource::File(dir.path().join("nope")), 1, 1),
            Err(DatasetError::Io { .. })
        ));
    }
}
