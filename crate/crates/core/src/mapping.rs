//! Physical data layout for the accelerator model: visit-frequency
//! reordering, hot-node selection, round-robin core allocation and address
//! translation.
//!
//! Three regions are planned. Regular records (`R * b_index + b_PQ` bits)
//! hold every vertex's gap-encoded neighbor list and its own PQ code. Hot
//! records (`R * (b_index + b_PQ) + b_PQ` bits) repeat the hottest vertices
//! with their neighbors' PQ codes inline. Raw records (`32 * D` bits) hold
//! the full-precision vectors on dedicated cores. Per-record degree fields
//! live in the spare bits at the tail of each page.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::{bits_for, read_bits, BitWriter};
use crate::dataset::VectorDataset;
use crate::error::{Error, Result};
use crate::graph::{gap_values, GraphIndex};
use crate::pq::PqCodes;
use crate::search::{SearchIndex, SearchParams};
use crate::trace::{Event, QueryTrace};

pub const PQ_CODE_BITS: u64 = 256;
pub const RAW_ELEM_BITS: u64 = 32;

/// Per-vertex evaluation counts from a sampled search run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitTrace {
    pub counts: Vec<u64>,
    pub queries: usize,
}

impl VisitTrace {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Searches `sample_count` base vectors drawn uniformly (with replacement)
/// and counts how often each vertex is evaluated.
pub fn collect_trace(
    index: &SearchIndex<'_>,
    params: &SearchParams,
    sample_count: usize,
    seed: u64,
) -> Result<(VisitTrace, usize)> {
    if sample_count == 0 {
        return Err(Error::InvalidParam("sample_count must be >= 1".into()));
    }
    let n = index.data.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = (0..sample_count).map(|_| rng.random_range(0..n)).collect();
    let per_query: Vec<Result<(Vec<u32>, usize)>> = picks
        .par_iter()
        .map(|&i| {
            let mut t = Vec::new();
            let r = index.search_traced(index.data.row(i), params, &mut t)?;
            let evaluated = t
                .iter()
                .filter_map(|e| match e {
                    Event::FetchIndex(v) => Some(*v),
                    _ => None,
                })
                .collect();
            Ok((evaluated, r.hops))
        })
        .collect();
    let mut counts = vec![0u64; n];
    let mut hops = 0;
    for q in per_query {
        let (ev, h) = q?;
        hops += h;
        for v in ev {
            counts[v as usize] += 1;
        }
    }
    Ok((
        VisitTrace {
            counts,
            queries: sample_count,
        },
        hops,
    ))
}

/// Permutation in both directions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    pub new_of_old: Vec<u32>,
    pub old_of_new: Vec<u32>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        let ids: Vec<u32> = (0..n as u32).collect();
        Self {
            new_of_old: ids.clone(),
            old_of_new: ids,
        }
    }

    /// Hotter vertices get smaller ids; ties keep the old order.
    pub fn by_visits(trace: &VisitTrace) -> Self {
        let n = trace.counts.len();
        let mut old_of_new: Vec<u32> = (0..n as u32).collect();
        old_of_new.sort_by(|&a, &b| trace.counts[b as usize].cmp(&trace.counts[a as usize]).then(a.cmp(&b)));
        let mut new_of_old = vec![0u32; n];
        for (new, &old) in old_of_new.iter().enumerate() {
            new_of_old[old as usize] = new as u32;
        }
        Self {
            new_of_old,
            old_of_new,
        }
    }
}

/// Graph, codes and vectors renumbered by visit frequency.
pub struct Reordered {
    pub graph: GraphIndex,
    pub codes: PqCodes,
    pub data: VectorDataset,
    pub perm: Permutation,
}

pub fn reorder_graph(graph: &GraphIndex, trace: &VisitTrace) -> Result<(GraphIndex, Permutation)> {
    if trace.counts.len() != graph.len() {
        return Err(Error::InvalidParam(format!(
            "trace covers {} vertices, graph has {}",
            trace.counts.len(),
            graph.len()
        )));
    }
    let perm = Permutation::by_visits(trace);
    Ok((graph.relabel(&perm.new_of_old)?, perm))
}

/// Applies [`reorder_graph`] and carries codes and vectors along.
pub fn reorder_all(graph: &GraphIndex, codes: &PqCodes, data: &VectorDataset, trace: &VisitTrace) -> Result<Reordered> {
    let (graph, perm) = reorder_graph(graph, trace)?;
    let codes = codes.permuted(&perm.old_of_new);
    let idx: Vec<usize> = perm.old_of_new.iter().map(|&o| o as usize).collect();
    let data = data.select(&idx)?;
    Ok(Reordered {
        graph,
        codes,
        data,
        perm,
    })
}

/// Number of hot vertices for fraction `p`: new ids `[0, ceil(p * N))`.
pub fn select_hot_nodes(n: usize, p: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParam(format!("hot fraction {p} not in [0, 1]")));
    }
    Ok(((p * n as f64).ceil() as usize).min(n))
}

/// Fraction of trace visit mass held by the hottest `count` vertices.
pub fn hot_mass(trace: &VisitTrace, count: usize) -> f64 {
    let mut c = trace.counts.clone();
    c.sort_unstable_by(|a, b| b.cmp(a));
    let top: u64 = c.iter().take(count).sum();
    top as f64 / trace.total().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub tiles: usize,
    pub cores_per_tile: usize,
    pub blocks_per_core: usize,
    /// Word lines times string-select lines.
    pub pages_per_block: usize,
    /// Bits per page (one per bitline).
    pub n_bl: usize,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            tiles: 16,
            cores_per_tile: 32,
            blocks_per_core: 64,
            pages_per_block: 96 * 4,
            n_bl: 36864,
        }
    }
}

impl Geometry {
    pub fn total_cores(&self) -> usize {
        self.tiles * self.cores_per_tile
    }

    pub fn pages_per_core(&self) -> usize {
        self.blocks_per_core * self.pages_per_block
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Regular,
    Hot,
    Raw,
}

impl Region {
    fn name(self) -> &'static str {
        match self {
            Region::Regular => "regular",
            Region::Hot => "hot",
            Region::Raw => "raw",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PhysicalAddress {
    pub tile: usize,
    pub core: usize,
    pub block: usize,
    pub page: usize,
    pub frame: usize,
}

impl PhysicalAddress {
    pub fn global_core(&self, g: &Geometry) -> usize {
        self.tile * g.cores_per_tile + self.core
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionPlan {
    pub record_bits: u64,
    pub frames_per_page: usize,
    /// First global core of the region and number of cores it spans.
    pub first_core: usize,
    pub cores: usize,
    /// First page within each core.
    pub first_page: usize,
    pub count: usize,
}

impl RegionPlan {
    fn pages_per_core(&self) -> usize {
        let slots = self.count.div_ceil(self.cores.max(1));
        slots.div_ceil(self.frames_per_page.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutParams {
    pub r: usize,
    pub b_index: u32,
    pub b_pq: u64,
    pub b_raw: u64,
    pub dim: usize,
    /// Cores dedicated to raw vectors. `None` splits the cores in proportion
    /// to the raw and index footprints.
    pub raw_cores: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutPlan {
    pub geometry: Geometry,
    pub n: usize,
    pub hot_count: usize,
    pub params: LayoutParams,
    pub degree_bits: u32,
    pub regular: RegionPlan,
    pub hot: RegionPlan,
    pub raw: RegionPlan,
}

/// Records that fit in a page, leaving room for one degree field per record.
fn frames_per_page(n_bl: usize, record: u64, degree_bits: u32) -> usize {
    let mut f = (n_bl as u64 / record) as usize;
    while f > 0 && f as u64 * (record + degree_bits as u64) > n_bl as u64 {
        f -= 1;
    }
    f
}

pub fn plan_layout(n: usize, hot_count: usize, geometry: Geometry, params: LayoutParams) -> Result<LayoutPlan> {
    if n == 0 {
        return Err(Error::Empty("nothing to lay out".into()));
    }
    if hot_count > n {
        return Err(Error::InvalidParam("hot set larger than N".into()));
    }
    let total = geometry.total_cores();
    if total < 2 {
        return Err(Error::CapacityExceeded("need at least two cores".into()));
    }
    let r = params.r as u64;
    let b = params.b_index as u64;
    let degree_bits = bits_for(params.r as u64);
    let reg_bits = r * b + params.b_pq;
    let hot_bits = r * (b + params.b_pq) + params.b_pq;
    let raw_bits = params.b_raw * params.dim as u64;
    let fpp_reg = frames_per_page(geometry.n_bl, reg_bits, degree_bits);
    let fpp_hot = frames_per_page(geometry.n_bl, hot_bits, degree_bits);
    let fpp_raw = frames_per_page(geometry.n_bl, raw_bits, 0);
    if fpp_reg == 0 || fpp_raw == 0 || (hot_count > 0 && fpp_hot == 0) {
        return Err(Error::CapacityExceeded(format!(
            "a record does not fit in a {}-bit page",
            geometry.n_bl
        )));
    }
    let raw_cores = match params.raw_cores {
        Some(c) => c,
        None => {
            let raw = raw_bits as f64 * n as f64;
            let idx = reg_bits as f64 * n as f64 + hot_bits as f64 * hot_count as f64;
            ((total as f64 * raw / (raw + idx)).round() as usize).clamp(1, total - 1)
        }
    };
    if raw_cores == 0 || raw_cores >= total {
        return Err(Error::InvalidParam(format!(
            "raw core count {raw_cores} must be in 1..{total}"
        )));
    }
    let index_cores = total - raw_cores;
    let regular = RegionPlan {
        record_bits: reg_bits,
        frames_per_page: fpp_reg,
        first_core: 0,
        cores: index_cores,
        first_page: 0,
        count: n,
    };
    let hot = RegionPlan {
        record_bits: hot_bits,
        frames_per_page: fpp_hot.max(1),
        first_core: 0,
        cores: index_cores,
        first_page: regular.pages_per_core(),
        count: hot_count,
    };
    let raw = RegionPlan {
        record_bits: raw_bits,
        frames_per_page: fpp_raw,
        first_core: index_cores,
        cores: raw_cores,
        first_page: 0,
        count: n,
    };
    let cap = geometry.pages_per_core();
    let index_pages = regular.pages_per_core() + if hot_count > 0 { hot.pages_per_core() } else { 0 };
    if index_pages > cap || raw.pages_per_core() > cap {
        return Err(Error::CapacityExceeded(format!(
            "needs {index_pages} index pages and {} raw pages per core, capacity {cap}",
            raw.pages_per_core()
        )));
    }
    Ok(LayoutPlan {
        geometry,
        n,
        hot_count,
        params,
        degree_bits,
        regular,
        hot,
        raw,
    })
}

impl LayoutPlan {
    pub fn region(&self, region: Region) -> &RegionPlan {
        match region {
            Region::Regular => &self.regular,
            Region::Hot => &self.hot,
            Region::Raw => &self.raw,
        }
    }

    pub fn index_cores(&self) -> usize {
        self.regular.cores
    }

    pub fn raw_cores(&self) -> usize {
        self.raw.cores
    }

    /// Round robin: id `i` goes to core `i mod cores`, slot `i / cores`.
    pub fn translate(&self, id: u32, region: Region) -> Result<PhysicalAddress> {
        let rp = self.region(region);
        if id as usize >= rp.count {
            return Err(Error::Unallocated {
                id: id as u64,
                region: region.name(),
            });
        }
        let i = id as usize;
        let core = rp.first_core + i % rp.cores;
        let slot = i / rp.cores;
        let page = rp.first_page + slot / rp.frames_per_page;
        let g = &self.geometry;
        Ok(PhysicalAddress {
            tile: core / g.cores_per_tile,
            core: core % g.cores_per_tile,
            block: page / g.pages_per_block,
            page: page % g.pages_per_block,
            frame: slot % rp.frames_per_page,
        })
    }

    /// Inverse of [`LayoutPlan::translate`].
    pub fn translate_inv(&self, addr: &PhysicalAddress, region: Region) -> Result<u32> {
        let rp = self.region(region);
        let g = &self.geometry;
        let core = addr.global_core(g);
        let page = addr.block * g.pages_per_block + addr.page;
        let bad = || Error::Unallocated {
            id: u64::MAX,
            region: region.name(),
        };
        if core < rp.first_core || core >= rp.first_core + rp.cores || page < rp.first_page || addr.frame >= rp.frames_per_page {
            return Err(bad());
        }
        let slot = (page - rp.first_page) * rp.frames_per_page + addr.frame;
        let id = slot * rp.cores + (core - rp.first_core);
        if id >= rp.count {
            return Err(bad());
        }
        Ok(id as u32)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Malformed(format!("layout: {e}")))
    }
}

/// Rewrites traces so that evaluating a hot vertex (`id < hot_count`) reads
/// its hot record once: `FetchIndex(v)` becomes `FetchHot(v)` and the
/// neighbor PQ fetches that immediately follow are dropped.
pub fn apply_hot_nodes(traces: &[QueryTrace], hot_count: usize) -> Vec<QueryTrace> {
    traces
        .iter()
        .map(|t| {
            let mut out = Vec::with_capacity(t.len());
            let mut absorbing = false;
            for &e in t {
                match e {
                    Event::FetchIndex(v) if (v as usize) < hot_count => {
                        out.push(Event::FetchHot(v));
                        absorbing = true;
                    }
                    Event::FetchPq(_) if absorbing => {}
                    _ => {
                        absorbing = false;
                        out.push(e);
                    }
                }
            }
            out
        })
        .collect()
}

/// Hot record payload of vertex `v`: `R` gap values of `b` bits, then `R`
/// neighbor PQ codes, then the owner's code. Unused slots are zero. Returns
/// the packed words and the degree (kept in the page tail).
pub fn encode_hot_record(graph: &GraphIndex, codes: &PqCodes, v: u32, b: u32) -> (Vec<u64>, usize) {
    let mut nb = graph.neighbors(v).to_vec();
    nb.sort_unstable();
    let r = graph.max_degree();
    let mut w = BitWriter::new();
    let gaps = gap_values(&nb);
    for i in 0..r {
        w.push(gaps.get(i).copied().unwrap_or(0), b);
    }
    for i in 0..r {
        let code = nb.get(i).map(|&u| codes.row(u as usize));
        for j in 0..(PQ_CODE_BITS / 8) as usize {
            w.push(code.and_then(|c| c.get(j)).copied().unwrap_or(0) as u64, 8);
        }
    }
    for j in 0..(PQ_CODE_BITS / 8) as usize {
        w.push(codes.row(v as usize).get(j).copied().unwrap_or(0) as u64, 8);
    }
    (w.finish().0, nb.len())
}

/// Decodes a hot record into (neighbor ids, their codes, owner code).
pub fn decode_hot_record(words: &[u64], degree: usize, r: usize, b: u32, m: usize) -> (Vec<u32>, Vec<Vec<u8>>, Vec<u8>) {
    let mut ids = Vec::with_capacity(degree);
    let mut acc = 0u64;
    for i in 0..degree {
        let g = read_bits(words, i as u64 * b as u64, b);
        acc = if i == 0 { g } else { acc + g };
        ids.push(acc as u32);
    }
    let code_at = |pos: u64| -> Vec<u8> { (0..m).map(|j| read_bits(words, pos + 8 * j as u64, 8) as u8).collect() };
    let base = r as u64 * b as u64;
    let codes = (0..degree).map(|i| code_at(base + i as u64 * PQ_CODE_BITS)).collect();
    let owner = code_at(base + r as u64 * PQ_CODE_BITS);
    (ids, codes, owner)
}
