//! File formats: instance specs, pool files, manifests, and the key = value
//! config format.
//!
//! Pool files hold one tour per line as `cost v0 v1 ... v_{n-1}`; edge sets
//! are always derived, never stored. Costs use shortest-round-trip float
//! formatting, so identical runs produce identical bytes. Each pool file is
//! accompanied by a `.manifest` with enough key = value pairs to re-run the
//! producing command.

use anyhow::{bail, Context, Result};
use dtsp_core::construction::Tour;
use dtsp_core::instance::{normalize, parse_tsplib, random_instance, Instance};
use dtsp_core::rngstream::stream;
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

/// Where an instance comes from: a TSPLIB file (normalized on load) or a
/// seeded uniform sample of the unit square (used as-is).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InstanceSpec {
    Tsplib(PathBuf),
    Random { n: usize, seed: u64 },
}

impl InstanceSpec {
    /// Parses `random:n=40,seed=7` or treats the value as a TSPLIB path.
    pub fn parse(text: &str) -> Result<Self> {
        if let Some(rest) = text.strip_prefix("random:") {
            let mut n = None;
            let mut seed = None;
            for part in rest.split(',') {
                match part.split_once('=') {
                    Some(("n", v)) => n = Some(v.parse().context("bad n")?),
                    Some(("seed", v)) => seed = Some(v.parse().context("bad seed")?),
                    _ => bail!("unknown random-instance field {part:?}"),
                }
            }
            let n = n.context("random instance spec needs n=<count>")?;
            Ok(Self::Random {
                n,
                seed: seed.unwrap_or(0),
            })
        } else {
            Ok(Self::Tsplib(PathBuf::from(text)))
        }
    }

    pub fn resolve(&self) -> Result<Instance> {
        match self {
            Self::Tsplib(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                let raw = parse_tsplib(&text)
                    .with_context(|| format!("parsing {}", path.display()))?;
                Ok(normalize(&raw)?)
            }
            Self::Random { n, seed } => {
                let mut rng = stream(*seed, "instance-spec", 0);
                Ok(random_instance(*n, &mut rng)?)
            }
        }
    }
}

impl fmt::Display for InstanceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Tsplib(path) => write!(f, "{}", path.display()),
            Self::Random { n, seed } => write!(f, "random:n={n},seed={seed}"),
        }
    }
}

/// Serializes a pool: `cost v0 v1 ... v_{n-1}` per line.
pub fn pool_to_string(tours: &[Tour]) -> String {
    let mut out = String::new();
    for t in tours {
        out.push_str(&format!("{}", t.cost()));
        for v in t.order() {
            out.push_str(&format!(" {v}"));
        }
        out.push('\n');
    }
    out
}

/// Reads a pool file back against its instance, recomputing costs from the
/// stored orders and rejecting drift beyond 1e-9 (wrong instance or corrupt
/// file).
pub fn read_pool(path: &Path, inst: &Instance) -> Result<Vec<Tour>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut tours = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let cost: f64 = it
            .next()
            .context("empty pool line")?
            .parse()
            .with_context(|| format!("pool line {}", i + 1))?;
        let order: Vec<usize> = it
            .map(|t| t.parse().with_context(|| format!("pool line {}", i + 1)))
            .collect::<Result<_>>()?;
        let tour = Tour::from_order(inst, order)
            .with_context(|| format!("pool line {}", i + 1))?;
        if (tour.cost() - cost).abs() > 1e-9 {
            bail!(
                "pool line {}: stored cost {} disagrees with recomputed {} (wrong instance?)",
                i + 1,
                cost,
                tour.cost()
            );
        }
        tours.push(tour);
    }
    Ok(tours)
}

/// key = value manifest/config format; `#` starts a comment line.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("line {}: expected key = value, got {line:?}", i + 1);
        };
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

pub fn kv_to_string(pairs: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        out.push_str(&format!("{k} = {v}\n"));
    }
    out
}

pub fn load_kv(path: &Path) -> Result<BTreeMap<String, String>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_kv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn instance_spec_roundtrip() {
        let spec = InstanceSpec::parse("random:n=12,seed=5").unwrap();
        assert_eq!(
            spec,
            InstanceSpec::Random { n: 12, seed: 5 }
        );
        assert_eq!(spec.to_string(), "random:n=12,seed=5");
        let inst = spec.resolve().unwrap();
        assert_eq!(inst.n(), 12);
        // deterministic
        assert_eq!(
            spec.resolve().unwrap().coords(),
            inst.coords()
        );
        let file_spec = InstanceSpec::parse("data/foo.tsp").unwrap();
        assert_eq!(file_spec.to_string(), "data/foo.tsp");
    }

    #[test]
    fn pool_roundtrip() {
        let inst =
            random_instance(6, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let tours = vec![
            Tour::from_order(&inst, vec![0, 1, 2, 3, 4, 5]).unwrap(),
            Tour::from_order(&inst, vec![0, 2, 4, 1, 3, 5]).unwrap(),
        ];
        let dir = std::env::temp_dir().join("dtsp-pool-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("pool.txt");
        std::fs::write(&path, pool_to_string(&tours)).unwrap();
        let loaded = read_pool(&path, &inst).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].order(), tours[0].order());
        assert_eq!(loaded[1].cost(), tours[1].cost());
    }

    #[test]
    fn kv_parse_and_write() {
        let text = "# comment\npool_size = 100\nmethod = gpn-tree\n";
        let map = parse_kv(text).unwrap();
        assert_eq!(map["pool_size"], "100");
        assert_eq!(map["method"], "gpn-tree");
        assert!(parse_kv("no-equals-here\n").is_err());
        let out = kv_to_string(&[("a".into(), "1".into())]);
        assert_eq!(out, "a = 1\n");
    }
}
