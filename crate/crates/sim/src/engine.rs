//! Trace-driven discrete-event replay.
//!
//! Each queue owns one query at a time and issues its events in order with
//! at most one outstanding request. Cores, the sorter and the PQ module are
//! shared and served first come, first served: the event loop always
//! advances the queue with the earliest ready time (ties by queue id), so
//! resources are claimed in request order. Time is integer picoseconds.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use nsann_core::mapping::{LayoutPlan, Region};
use nsann_core::trace::{Event, QueryTrace};
use nsann_core::{Error, Metric, Result};
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::traffic::{traffic_breakdown, Traffic};

/// Latency components of one query, in picoseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Components {
    pub nand: u64,
    pub bus: u64,
    pub compute: u64,
    pub sort: u64,
    /// Waiting for any busy shared resource.
    pub stall: u64,
    /// The part of `stall` spent waiting for a busy core.
    pub core_stall: u64,
}

impl Components {
    pub fn total(&self) -> u64 {
        self.nand + self.bus + self.compute + self.sort + self.stall
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryTiming {
    pub query: usize,
    pub queue: usize,
    pub dispatch_ps: u64,
    pub finish_ps: u64,
    pub parts: Components,
}

impl QueryTiming {
    pub fn latency_ps(&self) -> u64 {
        self.finish_ps - self.dispatch_ps
    }
}

/// Mean per-query latency components in nanoseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub nand_ns: f64,
    pub bus_ns: f64,
    pub compute_ns: f64,
    pub sort_ns: f64,
    pub stall_ns: f64,
    pub core_stall_ns: f64,
}

impl Breakdown {
    pub fn total_ns(&self) -> f64 {
        self.nand_ns + self.bus_ns + self.compute_ns + self.sort_ns + self.stall_ns
    }

    /// Share of latency spent reading the arrays, moving data on the buses
    /// or waiting for a busy core.
    pub fn data_access_share(&self) -> f64 {
        let t = self.total_ns();
        if t == 0.0 {
            0.0
        } else {
            (self.nand_ns + self.bus_ns + self.core_stall_ns) / t
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Energy {
    pub dynamic_uj: f64,
    pub static_uj: f64,
    pub per_query_nj: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EventCounts {
    pub reads: u64,
    pub hot_reads: u64,
    pub raw_reads: u64,
    pub sorts: u64,
    pub adt_builds: u64,
    pub mac_cycles: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub n_queries: usize,
    pub n_q: usize,
    pub makespan_ns: f64,
    pub qps: f64,
    pub mean_latency_ns: f64,
    pub p50_latency_ns: f64,
    pub p95_latency_ns: f64,
    pub p99_latency_ns: f64,
    pub max_latency_ns: f64,
    /// Busy time of all cores over `cores * makespan`, in percent.
    pub utilization_pct: f64,
    pub index_utilization_pct: f64,
    pub raw_utilization_pct: f64,
    pub sorter_utilization_pct: f64,
    pub adt_utilization_pct: f64,
    pub breakdown: Breakdown,
    pub energy: Energy,
    pub traffic: Traffic,
    pub counts: EventCounts,
    #[serde(skip)]
    pub queries: Vec<QueryTiming>,
}

pub const CSV_HEADER: [&str; 20] = [
    "n_queries",
    "n_q",
    "makespan_ns",
    "qps",
    "mean_latency_ns",
    "p50_latency_ns",
    "p95_latency_ns",
    "p99_latency_ns",
    "utilization_pct",
    "index_utilization_pct",
    "raw_utilization_pct",
    "nand_ns",
    "bus_ns",
    "compute_ns",
    "sort_ns",
    "stall_ns",
    "energy_per_query_nj",
    "index_bytes",
    "pq_bytes",
    "raw_bytes",
];

impl SimReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn csv_record(&self) -> Vec<String> {
        let b = &self.breakdown;
        let f = |x: f64| format!("{x:.6}");
        vec![
            self.n_queries.to_string(),
            self.n_q.to_string(),
            f(self.makespan_ns),
            f(self.qps),
            f(self.mean_latency_ns),
            f(self.p50_latency_ns),
            f(self.p95_latency_ns),
            f(self.p99_latency_ns),
            f(self.utilization_pct),
            f(self.index_utilization_pct),
            f(self.raw_utilization_pct),
            f(b.nand_ns),
            f(b.bus_ns),
            f(b.compute_ns),
            f(b.sort_ns),
            f(b.stall_ns),
            f(self.energy.per_query_nj),
            f(self.traffic.index_bytes),
            f(self.traffic.pq_bytes),
            f(self.traffic.raw_bytes),
        ]
    }
}

struct Timing {
    read_ps: u64,
    chunk_ps: u64,
    bus_ps: u64,
    granule_bits: u64,
    sort_latency: u64,
    adt_ps: u64,
    cycle: u64,
}

impl Timing {
    fn read(&self, record_bits: u64) -> u64 {
        let chunks = record_bits.div_ceil(self.granule_bits).max(1);
        self.read_ps + (chunks - 1) * self.chunk_ps
    }
}

#[derive(Default)]
struct QueueState {
    query: usize,
    pos: usize,
    dispatch: u64,
    parts: Components,
}

struct Machine<'a> {
    plan: &'a LayoutPlan,
    cfg: &'a SimConfig,
    tm: Timing,
    core_free: Vec<u64>,
    core_busy: Vec<u64>,
    sorter_free: u64,
    sorter_busy: u64,
    adt_free: Vec<u64>,
    adt_busy: u64,
    counts: EventCounts,
    dynamic_pj: f64,
}

impl Machine<'_> {
    fn fetch(&mut self, t: u64, id: u32, region: Region, parts: &mut Components) -> Result<u64> {
        let addr = self.plan.translate(id, region)?;
        let core = addr.global_core(&self.plan.geometry);
        let read = self.tm.read(self.plan.region(region).record_bits);
        let start = t.max(self.core_free[core]);
        self.core_free[core] = start + read;
        self.core_busy[core] += read;
        parts.stall += start - t;
        parts.core_stall += start - t;
        parts.nand += read;
        parts.bus += self.tm.bus_ps;
        self.counts.reads += 1;
        let e = &self.cfg.energy;
        self.dynamic_pj += e.nand_read_pj + e.core_bus_pj + e.tile_bus_pj;
        Ok(start + read + self.tm.bus_ps)
    }

    /// Applies one event issued at `t`; returns the time the queue is free.
    fn step(&mut self, t: u64, ev: Event, parts: &mut Components) -> Result<u64> {
        let m = self.plan.params.b_pq / 8;
        let d = self.plan.params.dim as u64;
        let e = self.cfg.energy.clone();
        Ok(match ev {
            Event::FetchIndex(v) | Event::FetchPq(v) => self.fetch(t, v, Region::Regular, parts)?,
            Event::FetchRaw(v) => {
                self.counts.raw_reads += 1;
                self.fetch(t, v, Region::Raw, parts)?
            }
            Event::FetchHot(v) => {
                self.counts.hot_reads += 1;
                self.fetch(t, v, Region::Hot, parts)?
            }
            Event::AdtBuild => {
                let (unit, &free) = self
                    .adt_free
                    .iter()
                    .enumerate()
                    .min_by_key(|&(i, f)| (*f, i))
                    .expect("at least one unit");
                let start = t.max(free);
                self.adt_free[unit] = start + self.tm.adt_ps;
                self.adt_busy += self.tm.adt_ps;
                parts.stall += start - t;
                parts.compute += self.tm.adt_ps;
                self.counts.adt_builds += 1;
                self.dynamic_pj += e.adt_cycle_pj * (self.tm.adt_ps / self.tm.cycle.max(1)) as f64;
                start + self.tm.adt_ps
            }
            Event::PqCompute(n) => {
                let cycles = n as u64 * m;
                let dur = self.cfg.cycles_ps(cycles);
                parts.compute += dur;
                self.counts.mac_cycles += cycles;
                self.dynamic_pj += cycles as f64 * (e.mac_cycle_pj + e.lookup_pj);
                t + dur
            }
            Event::RerankCompute(n) => {
                let cycles = n as u64 * d;
                let dur = self.cfg.cycles_ps(cycles);
                parts.compute += dur;
                self.counts.mac_cycles += cycles;
                self.dynamic_pj += cycles as f64 * e.mac_cycle_pj;
                t + dur
            }
            Event::Sort(len) => {
                let passes = (len as u64).div_ceil(self.cfg.sorter_width as u64).max(1);
                let (occupy, latency) = if self.cfg.sorter_pipelined {
                    (passes * self.tm.cycle, self.tm.sort_latency + (passes - 1) * self.tm.cycle)
                } else {
                    let l = passes * self.tm.sort_latency;
                    (l, l)
                };
                let start = t.max(self.sorter_free);
                self.sorter_free = start + occupy;
                self.sorter_busy += occupy;
                parts.stall += start - t;
                parts.sort += latency;
                self.counts.sorts += 1;
                self.dynamic_pj += e.sort_pj * passes as f64;
                start + latency
            }
        })
    }
}

fn percentile(sorted: &[u64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1] as f64 / 1000.0
}

fn pct(busy: u64, units: usize, span: u64) -> f64 {
    if span == 0 || units == 0 {
        0.0
    } else {
        100.0 * busy as f64 / (units as f64 * span as f64)
    }
}

/// Replays `traces` on the modeled accelerator. Query `i` is dispatched to
/// the first free queue; with all queries present at time zero this is
/// round robin over the queues.
pub fn simulate(traces: &[QueryTrace], plan: &LayoutPlan, cfg: &SimConfig, metric: Metric) -> Result<SimReport> {
    cfg.validate()?;
    let g = cfg.geometry();
    if g != plan.geometry {
        return Err(Error::InvalidParam("layout geometry differs from the simulator config".into()));
    }
    let cycle = cfg.cycles_ps(1);
    let tm = Timing {
        read_ps: SimConfig::ns_ps(cfg.core_read_ns),
        chunk_ps: SimConfig::ns_ps(cfg.extra_chunk_ns),
        bus_ps: SimConfig::ns_ps(
            cfg.core_htree_hop_ns * cfg.core_hops() as f64 + cfg.tile_htree_hop_ns * cfg.tile_hops() as f64,
        ),
        granule_bits: cfg.read_granularity_bytes as u64 * 8,
        sort_latency: cfg.cycles_ps(cfg.sort_cycles()),
        adt_ps: cfg.cycles_ps(cfg.adt_cycles(metric, plan.params.dim)),
        cycle,
    };
    let total_cores = g.total_cores();
    let mut mc = Machine {
        plan,
        cfg,
        tm,
        core_free: vec![0; total_cores],
        core_busy: vec![0; total_cores],
        sorter_free: 0,
        sorter_busy: 0,
        adt_free: vec![0; cfg.adt_units],
        adt_busy: 0,
        counts: EventCounts::default(),
        dynamic_pj: 0.0,
    };

    let nq = cfg.n_q;
    let mut queues: Vec<QueueState> = (0..nq).map(|_| QueueState::default()).collect();
    let mut heap = BinaryHeap::new();
    let mut next_query = 0usize;
    for (qi, q) in queues.iter_mut().enumerate() {
        if next_query < traces.len() {
            q.query = next_query;
            next_query += 1;
            heap.push(Reverse((0u64, qi)));
        }
    }
    let mut done: Vec<QueryTiming> = Vec::with_capacity(traces.len());
    while let Some(Reverse((t, qi))) = heap.pop() {
        let q = &mut queues[qi];
        let trace = &traces[q.query];
        if q.pos < trace.len() {
            let ev = trace[q.pos];
            q.pos += 1;
            let next = mc.step(t, ev, &mut q.parts)?;
            heap.push(Reverse((next, qi)));
            continue;
        }
        done.push(QueryTiming {
            query: q.query,
            queue: qi,
            dispatch_ps: q.dispatch,
            finish_ps: t,
            parts: q.parts,
        });
        debug_assert_eq!(q.parts.total(), t - q.dispatch);
        if next_query < traces.len() {
            *q = QueueState {
                query: next_query,
                pos: 0,
                dispatch: t,
                parts: Components::default(),
            };
            next_query += 1;
            heap.push(Reverse((t, qi)));
        }
    }
    done.sort_by_key(|d| d.query);

    let n = done.len();
    let makespan = done.iter().map(|d| d.finish_ps).max().unwrap_or(0);
    let mut lat: Vec<u64> = done.iter().map(|d| d.latency_ps()).collect();
    lat.sort_unstable();
    let mean = |f: &dyn Fn(&Components) -> u64| {
        if n == 0 {
            0.0
        } else {
            done.iter().map(|d| f(&d.parts) as f64).sum::<f64>() / n as f64 / 1000.0
        }
    };
    let breakdown = Breakdown {
        nand_ns: mean(&|c| c.nand),
        bus_ns: mean(&|c| c.bus),
        compute_ns: mean(&|c| c.compute),
        sort_ns: mean(&|c| c.sort),
        stall_ns: mean(&|c| c.stall),
        core_stall_ns: mean(&|c| c.core_stall),
    };
    let idx_cores = plan.index_cores();
    let idx_busy: u64 = mc.core_busy[..idx_cores].iter().sum();
    let raw_busy: u64 = mc.core_busy[idx_cores..].iter().sum();
    let static_pj = cfg.static_power_mw * makespan as f64 * 1e-3;
    let mean_latency_ns = if n == 0 { 0.0 } else { lat.iter().map(|&l| l as f64).sum::<f64>() / n as f64 / 1000.0 };
    Ok(SimReport {
        n_queries: n,
        n_q: nq,
        makespan_ns: makespan as f64 / 1000.0,
        qps: if makespan == 0 { 0.0 } else { n as f64 / (makespan as f64 * 1e-12) },
        mean_latency_ns,
        p50_latency_ns: percentile(&lat, 0.50),
        p95_latency_ns: percentile(&lat, 0.95),
        p99_latency_ns: percentile(&lat, 0.99),
        max_latency_ns: lat.last().map_or(0.0, |&l| l as f64 / 1000.0),
        utilization_pct: pct(idx_busy + raw_busy, total_cores, makespan),
        index_utilization_pct: pct(idx_busy, idx_cores, makespan),
        raw_utilization_pct: pct(raw_busy, total_cores - idx_cores, makespan),
        sorter_utilization_pct: pct(mc.sorter_busy, 1, makespan),
        adt_utilization_pct: pct(mc.adt_busy, cfg.adt_units, makespan),
        breakdown,
        energy: Energy {
            dynamic_uj: mc.dynamic_pj * 1e-6,
            static_uj: static_pj * 1e-6,
            per_query_nj: if n == 0 { 0.0 } else { (mc.dynamic_pj + static_pj) / n as f64 * 1e-3 },
        },
        traffic: traffic_breakdown(traces, &plan.params),
        counts: mc.counts,
        queries: done,
    })
}
