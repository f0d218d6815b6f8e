use std::path::{Path, PathBuf};

use nsann_core::graph::BuildParams;
use nsann_core::pq::{CalibrationParams, TrainParams};
use nsann_core::search::{SearchParams, VisitedKind};
use nsann_core::synth::SynthKind;
use nsann_core::{Error, Metric, Result, VecFormat};
use nsann_sim::SimConfig;
use serde::{Deserialize, Serialize};

/// One experiment. `seed` is required; every other table has defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub pq: PqConfig,
    #[serde(default)]
    pub graph: GraphConfig,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub mapping: MappingConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic {
        kind: SynthKind,
        n_base: usize,
        n_queries: usize,
    },
    Files {
        base: PathBuf,
        queries: PathBuf,
        metric: Metric,
        /// Taken from the file extension when absent.
        format: Option<VecFormat>,
    },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic {
            kind: SynthKind::Sift,
            n_base: 10_000,
            n_queries: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PqConfig {
    pub m: usize,
    pub c: usize,
    pub iters: usize,
    pub calib_sample: usize,
    pub calib_pairs: usize,
    pub calib_percentile: f64,
}

impl Default for PqConfig {
    fn default() -> Self {
        Self {
            m: 32,
            c: 256,
            iters: 25,
            calib_sample: 1000,
            calib_pairs: 100,
            calib_percentile: 0.99,
        }
    }
}

impl PqConfig {
    pub fn train(&self, seed: u64) -> TrainParams {
        TrainParams {
            m: self.m,
            c: self.c,
            iters: self.iters,
            seed,
        }
    }

    pub fn calibration(&self, seed: u64, n: usize) -> CalibrationParams {
        CalibrationParams {
            sample_size: self.calib_sample.min(n),
            pairs_per_query: self.calib_pairs,
            percentile: self.calib_percentile,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub r: usize,
    pub l_build: usize,
    pub alpha: f32,
}

impl Default for GraphConfig {
    fn default() -> Self {
        let d = BuildParams::default();
        Self {
            r: d.r,
            l_build: d.l_build,
            alpha: d.alpha,
        }
    }
}

impl GraphConfig {
    pub fn build(&self, seed: u64) -> BuildParams {
        BuildParams {
            r: self.r,
            l_build: self.l_build,
            alpha: self.alpha,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub l: Vec<usize>,
    pub k: usize,
    pub t_step: usize,
    pub r: usize,
    /// Fixed rerank ratio; calibrated from the PQ model when absent.
    pub beta: Option<f64>,
    pub et_enabled: bool,
    pub rerank_enabled: bool,
    pub visited: VisitedKind,
    pub parallelism: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        let d = SearchParams::default();
        Self {
            l: vec![20, 50, 100, 150],
            k: d.k,
            t_step: d.t_step,
            r: d.r,
            beta: None,
            et_enabled: d.et_enabled,
            rerank_enabled: d.rerank_enabled,
            visited: d.visited,
            parallelism: 1,
        }
    }
}

impl SearchConfig {
    pub fn params(&self, l: usize, beta: f64) -> SearchParams {
        SearchParams {
            l,
            t_step: self.t_step,
            r: self.r,
            beta,
            k: self.k,
            et_enabled: self.et_enabled,
            rerank_enabled: self.rerank_enabled,
            visited: self.visited,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingConfig {
    pub hot_fraction: f64,
    pub trace_samples: usize,
    /// Candidate list size of the searches whose traces are simulated.
    pub l: usize,
    pub raw_cores: Option<usize>,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            hot_fraction: 0.03,
            trace_samples: 10_000,
            l: 100,
            raw_cores: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub queue_sizes: Vec<usize>,
    pub hot_fractions: Vec<f64>,
    pub error_rates: Vec<f64>,
    pub error_pq: bool,
    pub error_index: bool,
    pub error_raw: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            queue_sizes: vec![32, 64, 128, 256],
            hot_fractions: vec![0.0, 0.01, 0.03, 0.05, 0.07],
            error_rates: vec![0.0, 1e-6, 1e-5, 1e-4],
            error_pq: true,
            error_index: true,
            error_raw: true,
        }
    }
}

impl ExperimentConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            dataset: DatasetConfig::default(),
            pq: PqConfig::default(),
            graph: GraphConfig::default(),
            search: SearchConfig::default(),
            mapping: MappingConfig::default(),
            sim: SimConfig::default(),
            sweep: SweepConfig::default(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: Self = toml::from_str(s).map_err(|e| Error::Malformed(format!("experiment config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.into(),
            source: e,
        })?;
        let mut c = Self::from_toml_str(&s)?;
        // relative dataset paths are relative to the config file
        if let DatasetConfig::Files { base, queries, .. } = &mut c.dataset {
            let dir = path.parent().unwrap_or(Path::new("."));
            for p in [base, queries] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(c)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.search.l.is_empty() {
            return Err(Error::InvalidParam("search.l must list at least one size".into()));
        }
        if let Some(b) = self.search.beta {
            if !(b >= 1.0) {
                return Err(Error::InvalidParam(format!("search.beta {b} must be >= 1")));
            }
        }
        for &l in self.search.l.iter().chain([&self.mapping.l]) {
            self.search.params(l, 1.0).validate()?;
        }
        if self.search.parallelism == 0 {
            return Err(Error::InvalidParam("search.parallelism must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mapping.hot_fraction) {
            return Err(Error::InvalidParam("mapping.hot_fraction must be in [0, 1]".into()));
        }
        if let DatasetConfig::Synthetic { n_base, n_queries, .. } = self.dataset {
            if n_base == 0 || n_queries == 0 {
                return Err(Error::InvalidParam("synthetic sizes must be >= 1".into()));
            }
        }
        self.sim.validate()
    }

    /// Independent seeds per stage, derived from the experiment seed.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        let mut h = nsann_core::hash::ContentHasher::new();
        h.u64(self.seed).str(stage);
        u64::from_str_radix(&h.hex()[..16], 16).expect("hex digest")
    }
}
