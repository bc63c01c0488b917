//! Flat `key = value` run configuration.
//!
//! ```text
//! # comments run to end of line
//! synth_n = 10000
//! omega = 4
//! beams = 16,32,64,128
//! ```

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::BuildParams;
use crate::partition::{PartitionParams, DEFAULT_EPSILON, DEFAULT_KMEANS_ITERS};

/// Every key [`PipelineConfig`] understands.
pub const KNOWN_KEYS: &[&str] = &[
    "input",
    "queries",
    "synth_n",
    "synth_dim",
    "synth_clusters",
    "synth_spread",
    "queries_n",
    "omega",
    "epsilon",
    "gamma",
    "subsets",
    "sample_size",
    "kmeans_iters",
    "seed",
    "r",
    "l_build",
    "alpha",
    "workers",
    "pq_m",
    "pq_ks",
    "k",
    "beams",
    "out_dir",
    "memory_budget",
    "plan",
    "graphs",
    "graph",
];

/// Raw key/value pairs, later keys replacing earlier ones.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::format(format!("config line {}: expected `key = value`", no + 1))
            })?;
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(Error::format(format!(
                    "config line {}: unknown key `{key}`",
                    no + 1
                )));
            }
            entries.insert(key.to_string(), value.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = crate::io::read_file(path.as_ref())?;
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::format(format!("{} is not UTF-8", path.as_ref().display())))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Sets `key`, returning the value it replaced.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<Option<String>> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::invalid(format!("unknown config key `{key}`")));
        }
        Ok(self.entries.insert(key.to_string(), value.into()))
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::format(format!("config key `{key}` = `{v}`: {e}")))
            })
            .transpose()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    /// Base vectors (`.fvecs` or `.bvecs`); synthetic data when absent.
    pub input: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub synth_n: usize,
    pub synth_dim: usize,
    pub synth_clusters: usize,
    pub synth_spread: f32,
    pub queries_n: usize,
    pub omega: u32,
    pub epsilon: f64,
    /// Subset capacity. When absent it is derived from `subsets`.
    pub gamma: Option<usize>,
    /// Target subset count used to derive the capacity.
    pub subsets: usize,
    pub sample_size: Option<usize>,
    pub kmeans_iters: usize,
    pub seed: u64,
    pub r: usize,
    pub l_build: usize,
    pub alpha: f32,
    pub workers: usize,
    /// Product quantization is enabled when `pq_m` is set.
    pub pq_m: Option<usize>,
    pub pq_ks: usize,
    pub k: usize,
    pub beams: Vec<usize>,
    pub out_dir: PathBuf,
    /// Bytes per merge.
    pub memory_budget: Option<u64>,
    /// Artifact locations; default to files under `out_dir`.
    pub plan: Option<PathBuf>,
    pub graphs: Option<PathBuf>,
    pub graph: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: None,
            queries: None,
            synth_n: 10_000,
            synth_dim: 32,
            synth_clusters: 16,
            synth_spread: 0.1,
            queries_n: 100,
            omega: 4,
            epsilon: DEFAULT_EPSILON,
            gamma: None,
            subsets: 8,
            sample_size: None,
            kmeans_iters: DEFAULT_KMEANS_ITERS,
            seed: 0,
            r: 32,
            l_build: 64,
            alpha: 1.2,
            workers: 4,
            pq_m: None,
            pq_ks: 256,
            k: 10,
            beams: vec![16, 32, 64, 128],
            out_dir: PathBuf::from("out"),
            memory_budget: None,
            plan: None,
            graphs: None,
            graph: None,
        }
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| Error::format(format!("config key `{key}` = `{v}`: {e}")))
        })
        .collect()
}

impl PipelineConfig {
    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            input: map.get("input").map(PathBuf::from),
            queries: map.get("queries").map(PathBuf::from),
            synth_n: map.parsed("synth_n")?.unwrap_or(d.synth_n),
            synth_dim: map.parsed("synth_dim")?.unwrap_or(d.synth_dim),
            synth_clusters: map.parsed("synth_clusters")?.unwrap_or(d.synth_clusters),
            synth_spread: map.parsed("synth_spread")?.unwrap_or(d.synth_spread),
            queries_n: map.parsed("queries_n")?.unwrap_or(d.queries_n),
            omega: map.parsed("omega")?.unwrap_or(d.omega),
            epsilon: map.parsed("epsilon")?.unwrap_or(d.epsilon),
            gamma: map.parsed("gamma")?,
            subsets: map.parsed("subsets")?.unwrap_or(d.subsets),
            sample_size: map.parsed("sample_size")?,
            kmeans_iters: map.parsed("kmeans_iters")?.unwrap_or(d.kmeans_iters),
            seed: map.parsed("seed")?.unwrap_or(d.seed),
            r: map.parsed("r")?.unwrap_or(d.r),
            l_build: map.parsed("l_build")?.unwrap_or(d.l_build),
            alpha: map.parsed("alpha")?.unwrap_or(d.alpha),
            workers: map.parsed("workers")?.unwrap_or(d.workers),
            pq_m: map.parsed("pq_m")?,
            pq_ks: map.parsed("pq_ks")?.unwrap_or(d.pq_ks),
            k: map.parsed("k")?.unwrap_or(d.k),
            beams: match map.get("beams") {
                Some(v) => parse_list("beams", v)?,
                None => d.beams,
            },
            out_dir: map.get("out_dir").map(PathBuf::from).unwrap_or(d.out_dir),
            memory_budget: map.parsed("memory_budget")?,
            plan: map.get("plan").map(PathBuf::from),
            graphs: map.get("graphs").map(PathBuf::from),
            graph: map.get("graph").map(PathBuf::from),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_map(&ConfigMap::read(path)?)
    }

    /// Re-checks the constraints of every stage that does not depend on N.
    pub fn validate(&self) -> Result<()> {
        if self.input.is_none() {
            if self.synth_n == 0 || self.synth_dim == 0 || self.synth_clusters == 0 {
                return Err(Error::invalid(
                    "synth_n, synth_dim and synth_clusters must be positive",
                ));
            }
            if self.synth_clusters > self.synth_n {
                return Err(Error::invalid("synth_clusters exceeds synth_n"));
            }
            if !(self.synth_spread.is_finite() && self.synth_spread >= 0.0) {
                return Err(Error::invalid("synth_spread must be finite and >= 0"));
            }
        }
        if self.queries.is_none() && self.queries_n == 0 {
            return Err(Error::invalid("queries_n must be positive"));
        }
        if self.gamma.is_none() && self.subsets == 0 {
            return Err(Error::invalid("subsets must be positive"));
        }
        PartitionParams::new(self.omega, self.epsilon, self.gamma.unwrap_or(1), self.seed)
            .validate()?;
        self.build_params().validate()?;
        if self.workers == 0 {
            return Err(Error::invalid("workers must be positive"));
        }
        if let Some(m) = self.pq_m {
            if m == 0 {
                return Err(Error::invalid("pq_m must be positive"));
            }
            if self.pq_ks == 0 || self.pq_ks > 256 {
                return Err(Error::invalid("pq_ks must be in 1..=256"));
            }
        }
        if self.k == 0 {
            return Err(Error::invalid("k must be positive"));
        }
        if self.beams.is_empty() || self.beams.iter().any(|&b| b < self.k) {
            return Err(Error::invalid("beams must be nonempty and each >= k"));
        }
        Ok(())
    }

    /// Capacity for a dataset of `n` vectors.
    pub fn gamma_for(&self, n: usize) -> usize {
        self.gamma
            .unwrap_or_else(|| (self.omega as usize * n).div_ceil(self.subsets).max(1))
    }

    pub fn partition_params(&self, n: usize) -> PartitionParams {
        let mut p = PartitionParams::new(
            self.omega,
            self.epsilon,
            self.gamma_for(n),
            stage_seed(self.seed, Stage::Partition),
        );
        p.sample_size = self.sample_size;
        p.kmeans_iters = self.kmeans_iters;
        p
    }

    pub fn build_params(&self) -> BuildParams {
        BuildParams {
            r: self.r,
            l_build: self.l_build,
            alpha: self.alpha,
            seed: stage_seed(self.seed, Stage::Build),
        }
    }

    pub fn merge_params(&self) -> BuildParams {
        BuildParams {
            seed: stage_seed(self.seed, Stage::Merge),
            ..self.build_params()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Partition,
    Quantize,
    Build,
    Merge,
    Synth,
    Queries,
}

/// Seed of one stage, derived from the top-level seed by a fixed offset.
pub fn stage_seed(seed: u64, stage: Stage) -> u64 {
    let offset = match stage {
        Stage::Partition => 0,
        Stage::Quantize => 1,
        Stage::Build => 2,
        Stage::Merge => 3,
        Stage::Synth => 4,
        Stage::Queries => 5,
    };
    seed.wrapping_add(offset)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_lists() {
        let map = ConfigMap::parse(
            "# run\nsynth_n = 500  # small\n\nomega=3\nbeams = 10, 20,40\ngamma = 400\n",
        )
        .unwrap();
        let cfg = PipelineConfig::from_map(&map).unwrap();
        assert_eq!(cfg.synth_n, 500);
        assert_eq!(cfg.omega, 3);
        assert_eq!(cfg.beams, vec![10, 20, 40]);
        assert_eq!(cfg.gamma_for(500), 400);
        assert_eq!(cfg.r, 32);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(ConfigMap::parse("omega 4").is_err());
        assert!(ConfigMap::parse("colour = red").is_err());
        let bad = ConfigMap::parse("omega = four").unwrap();
        let err = PipelineConfig::from_map(&bad).unwrap_err().to_string();
        assert!(err.contains("omega"), "{err}");
        assert!(PipelineConfig::from_map(&ConfigMap::parse("omega = 1").unwrap()).is_err());
        assert!(PipelineConfig::from_map(&ConfigMap::parse("epsilon = 1.0").unwrap()).is_err());
    }

    #[test]
    fn set_reports_previous_value() {
        let mut map = ConfigMap::parse("workers = 2").unwrap();
        assert_eq!(map.set("workers", "8").unwrap().as_deref(), Some("2"));
        assert_eq!(map.set("seed", "1").unwrap(), None);
        assert!(map.set("nope", "1").is_err());
    }

    #[test]
    fn gamma_from_subsets() {
        let cfg = PipelineConfig {
            subsets: 8,
            ..Default::default()
        };
        let g = cfg.gamma_for(20_000);
        assert_eq!(g, 10_000);
        let phi = crate::partition::estimate_num_partitions(20_000, 4, g as u64).unwrap();
        assert_eq!(phi, 8);
    }

    #[test]
    fn stage_seeds_differ() {
        let stages = [
            Stage::Partition,
            Stage::Quantize,
            Stage::Build,
            Stage::Merge,
            Stage::Synth,
            Stage::Queries,
        ];
        let mut seeds: Vec<u64> = stages.iter().map(|&s| stage_seed(9, s)).collect();
        seeds.sort();
        seeds.dedup();
        assert_eq!(seeds.len(), stages.len());
    }
}
