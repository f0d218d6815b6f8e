use std::path::Path;

use nsann_core::mapping::Geometry;
use nsann_core::{Error, Metric, Result};
use serde::{Deserialize, Serialize};

/// Per-event dynamic energies in picojoules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyTable {
    pub nand_read_pj: f64,
    pub core_bus_pj: f64,
    pub tile_bus_pj: f64,
    /// Per queue MAC cycle (queue dynamic power / queues at 1 GHz).
    pub mac_cycle_pj: f64,
    /// Per sorter pass.
    pub sort_pj: f64,
    /// Per ADT-build cycle on the PQ module.
    pub adt_cycle_pj: f64,
    /// Per ADT memory lookup (M per PQ distance).
    pub lookup_pj: f64,
}

impl Default for EnergyTable {
    fn default() -> Self {
        Self {
            nand_read_pj: 4442.0,
            core_bus_pj: 21.4,
            tile_bus_pj: 198.6,
            mac_cycle_pj: 1920.316 / 256.0,
            sort_pj: 486.090 * 16.0,
            adt_cycle_pj: 17.396,
            lookup_pj: 1.793,
        }
    }
}

/// Accelerator model parameters. Every field has a default, so a config
/// file only needs the values it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub tiles: usize,
    pub cores_per_tile: usize,
    pub layers: usize,
    pub ssl: usize,
    pub blocks_per_core: usize,
    pub n_bl: usize,
    pub read_granularity_bytes: usize,
    pub core_read_ns: f64,
    /// Added per granule beyond the first within one record read.
    pub extra_chunk_ns: f64,
    pub core_htree_hop_ns: f64,
    pub tile_htree_hop_ns: f64,
    /// `None` uses the tree depth, `log2(cores_per_tile)`.
    pub core_htree_hops: Option<u32>,
    /// `None` uses `log2(tiles)`.
    pub tile_htree_hops: Option<u32>,
    pub clock_ghz: f64,
    pub n_q: usize,
    pub sorter_width: usize,
    /// A pipelined sorter accepts a new pass every cycle; otherwise each
    /// sort holds it for the full latency.
    pub sorter_pipelined: bool,
    /// PQ modules available for ADT builds.
    pub adt_units: usize,
    pub adt_cycles_per_dim_euclidean: u64,
    pub adt_cycles_per_dim_angular: u64,
    pub energy: EnergyTable,
    pub static_power_mw: f64,
    /// Raw-data cores; `None` splits cores by footprint.
    pub raw_cores: Option<usize>,
    pub b_pq: u64,
    pub b_raw: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            tiles: 16,
            cores_per_tile: 32,
            layers: 96,
            ssl: 4,
            blocks_per_core: 64,
            n_bl: 36864,
            read_granularity_bytes: 128,
            core_read_ns: 300.0,
            extra_chunk_ns: 0.0,
            core_htree_hop_ns: 1.0,
            tile_htree_hop_ns: 2.0,
            core_htree_hops: None,
            tile_htree_hops: None,
            clock_ghz: 1.0,
            n_q: 256,
            sorter_width: 256,
            sorter_pipelined: true,
            adt_units: 1,
            adt_cycles_per_dim_euclidean: 24,
            adt_cycles_per_dim_angular: 8,
            energy: EnergyTable::default(),
            static_power_mw: 2141.752,
            raw_cores: None,
            b_pq: 256,
            b_raw: 32,
        }
    }
}

fn ceil_log2(x: usize) -> u32 {
    if x <= 1 {
        0
    } else {
        usize::BITS - (x - 1).leading_zeros()
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("tiles", self.tiles),
            ("cores_per_tile", self.cores_per_tile),
            ("layers", self.layers),
            ("ssl", self.ssl),
            ("blocks_per_core", self.blocks_per_core),
            ("n_bl", self.n_bl),
            ("read_granularity_bytes", self.read_granularity_bytes),
            ("n_q", self.n_q),
            ("sorter_width", self.sorter_width),
            ("adt_units", self.adt_units),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidParam(format!("{name} must be >= 1")));
            }
        }
        if self.read_granularity_bytes > self.n_bl / 8 {
            return Err(Error::InvalidParam("read granularity exceeds the page".into()));
        }
        let times = [
            self.core_read_ns,
            self.extra_chunk_ns,
            self.core_htree_hop_ns,
            self.tile_htree_hop_ns,
            self.static_power_mw,
        ];
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) || !(self.clock_ghz > 0.0) {
            return Err(Error::InvalidParam("latencies and power must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: Self = toml::from_str(s).map_err(|e| Error::Malformed(format!("sim config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.into(),
            source: e,
        })?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn geometry(&self) -> Geometry {
        Geometry {
            tiles: self.tiles,
            cores_per_tile: self.cores_per_tile,
            blocks_per_core: self.blocks_per_core,
            pages_per_block: self.layers * self.ssl,
            n_bl: self.n_bl,
        }
    }

    pub fn core_hops(&self) -> u32 {
        self.core_htree_hops.unwrap_or_else(|| ceil_log2(self.cores_per_tile))
    }

    pub fn tile_hops(&self) -> u32 {
        self.tile_htree_hops.unwrap_or_else(|| ceil_log2(self.tiles))
    }

    /// Picoseconds per clock cycle.
    pub fn cycle_ps(&self) -> f64 {
        1000.0 / self.clock_ghz
    }

    pub fn cycles_ps(&self, cycles: u64) -> u64 {
        (cycles as f64 * self.cycle_ps()).round() as u64
    }

    pub fn ns_ps(ns: f64) -> u64 {
        (ns * 1000.0).round() as u64
    }

    pub fn adt_cycles(&self, metric: Metric, dim: usize) -> u64 {
        match metric {
            Metric::Euclidean => self.adt_cycles_per_dim_euclidean * dim as u64,
            Metric::Angular | Metric::InnerProduct => self.adt_cycles_per_dim_angular * dim as u64,
        }
    }

    /// Constant bitonic latency `2 log2(width)` cycles.
    pub fn sort_cycles(&self) -> u64 {
        2 * ceil_log2(self.sorter_width) as u64
    }
}
