//! Parameter sweeps; each returns a header and rows ready for CSV.

use std::str::FromStr;

use nsann_core::dataset::recall_at_k;
use nsann_core::graph::gap_encode;
use nsann_core::mapping::LayoutParams;
use nsann_core::search::{exact_graph_search, traced_batch, SearchParams};
use nsann_core::trace::QueryTrace;
use nsann_core::{Error, GraphIndex, GroundTruth, PqCodes, PqModel, Result, SearchIndex};
use nsann_sim::{hot_node_sweep, inject_errors, queue_sweep, traffic_breakdown, ErrorModel, Traffic, CSV_HEADER};
use rayon::prelude::*;

use crate::output::fmt;
use crate::pipeline::{run_search, Data, Mapped, Pipeline, SEARCH_CSV_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    RecallQps,
    QueueSize,
    HotNodes,
    BitError,
    Traffic,
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "recall_qps" => SweepKind::RecallQps,
            "queue_size" => SweepKind::QueueSize,
            "hot_nodes" => SweepKind::HotNodes,
            "bit_error" => SweepKind::BitError,
            "traffic" => SweepKind::Traffic,
            o => return Err(Error::InvalidParam(format!("unknown sweep '{o}'"))),
        })
    }
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::RecallQps => "recall_qps",
            SweepKind::QueueSize => "queue_size",
            SweepKind::HotNodes => "hot_nodes",
            SweepKind::BitError => "bit_error",
            SweepKind::Traffic => "traffic",
        }
    }
}

pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn header_refs(&self) -> Vec<&str> {
        self.header.iter().map(String::as_str).collect()
    }
}

/// Search variants compared in the recall/throughput sweep.
pub const VARIANTS: [(&str, bool, bool); 3] = [("full", true, true), ("no_et", false, true), ("top_t_rerank", true, false)];

pub struct Inputs<'a> {
    pub data: &'a Data,
    pub gt: &'a GroundTruth,
    pub graph: &'a GraphIndex,
    pub model: &'a PqModel,
    pub codes: &'a PqCodes,
    pub beta: f64,
}

pub fn recall_qps(p: &Pipeline, x: &Inputs<'_>) -> Result<Table> {
    let index = SearchIndex::new(x.graph, x.model, x.codes, &x.data.base)?;
    let mut t = Table::new(std::iter::once("variant").chain(SEARCH_CSV_HEADER));
    for (name, et, rr) in VARIANTS {
        for &l in &p.cfg.search.l {
            let params = SearchParams {
                et_enabled: et,
                rerank_enabled: rr,
                ..p.cfg.search.params(l, x.beta)
            };
            let (s, _) = run_search(&index, &x.data.queries, x.gt, &params, p.cfg.search.parallelism)?;
            t.rows.push(std::iter::once(name.to_string()).chain(s.csv_record()).collect());
        }
    }
    Ok(t)
}

pub fn queue_size(p: &Pipeline, m: &Mapped) -> Result<Table> {
    let plan = nsann_core::mapping::plan_layout(m.plan.n, 0, m.plan.geometry, m.layout_params())?;
    let reports = queue_sweep(&m.traces, &plan, &p.cfg.sim, m.reordered.data.metric(), &p.cfg.sweep.queue_sizes)?;
    let mut t = Table::new(CSV_HEADER);
    t.rows = reports.iter().map(|r| r.csv_record()).collect();
    Ok(t)
}

pub fn hot_nodes(p: &Pipeline, m: &Mapped) -> Result<Table> {
    let points = hot_node_sweep(
        &m.traces,
        m.plan.n,
        &m.layout_params(),
        &p.cfg.sim,
        m.reordered.data.metric(),
        &p.cfg.sweep.hot_fractions,
    )?;
    let mut t = Table::new(["hot_fraction", "hot_count", "data_access_share"].into_iter().chain(CSV_HEADER));
    for pt in points {
        let mut row = vec![fmt(pt.fraction), pt.hot_count.to_string(), fmt(pt.report.breakdown.data_access_share())];
        row.extend(pt.report.csv_record());
        t.rows.push(row);
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BitErrorPoint {
    pub rber: f64,
    pub recall: f64,
    pub drop: f64,
    pub flips: nsann_sim::FlipCounts,
}

pub fn bit_error_points(p: &Pipeline, x: &Inputs<'_>, l: usize) -> Result<Vec<BitErrorPoint>> {
    let enc = gap_encode(x.graph);
    let params = p.cfg.search.params(l, x.beta);
    let clean = SearchIndex::new(x.graph, x.model, x.codes, &x.data.base)?;
    let (base, _) = run_search(&clean, &x.data.queries, x.gt, &params, p.cfg.search.parallelism)?;
    let sw = &p.cfg.sweep;
    sw.error_rates
        .iter()
        .enumerate()
        .map(|(i, &rber)| {
            let model = ErrorModel {
                rber,
                seed: p.cfg.stage_seed("errors") ^ i as u64,
                pq: sw.error_pq,
                index: sw.error_index,
                raw: sw.error_raw,
            };
            let c = inject_errors(&model, x.codes, &enc, &x.data.base)?;
            let index = SearchIndex::new(&c.graph, x.model, &c.codes, &c.data)?;
            let (s, _) = run_search(&index, &x.data.queries, x.gt, &params, p.cfg.search.parallelism)?;
            Ok(BitErrorPoint {
                rber,
                recall: s.recall,
                drop: base.recall - s.recall,
                flips: c.flips,
            })
        })
        .collect()
}

pub fn bit_error(p: &Pipeline, x: &Inputs<'_>) -> Result<Table> {
    let mut t = Table::new(["l", "rber", "recall", "recall_drop", "flips_pq", "flips_index", "flips_raw"]);
    let l = p.cfg.mapping.l;
    for pt in bit_error_points(p, x, l)? {
        t.rows.push(vec![
            l.to_string(),
            format!("{:e}", pt.rber),
            fmt(pt.recall),
            fmt(pt.drop),
            pt.flips.pq.to_string(),
            pt.flips.index.to_string(),
            pt.flips.raw.to_string(),
        ]);
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficPoint {
    pub exact: bool,
    pub l: usize,
    pub recall: f64,
    /// Mean bytes per query.
    pub traffic: Traffic,
}

/// Per-query traffic of the PQ search (gap-encoded index, early
/// termination, threshold rerank) and of a best-first search on exact
/// distances reading raw vectors and a 32-bit index, across list sizes.
pub fn traffic_points(p: &Pipeline, x: &Inputs<'_>, pq_ls: &[usize], exact_ls: &[usize]) -> Result<Vec<TrafficPoint>> {
    let dim = x.data.base.dim();
    let lp = |b_index| LayoutParams {
        r: x.graph.max_degree(),
        b_index,
        b_pq: p.cfg.sim.b_pq,
        b_raw: p.cfg.sim.b_raw,
        dim,
        raw_cores: None,
    };
    let nq = x.data.queries.len() as f64;
    let per_query = |t: Traffic| Traffic {
        index_bytes: t.index_bytes / nq,
        pq_bytes: t.pq_bytes / nq,
        raw_bytes: t.raw_bytes / nq,
    };
    let mut out = Vec::new();
    let index = SearchIndex::new(x.graph, x.model, x.codes, &x.data.base)?;
    let gap = lp(gap_encode(x.graph).bit_width());
    for &l in pq_ls {
        let params = p.cfg.search.params(l, x.beta);
        let (res, traces) = traced_batch(&index, &x.data.queries, &params)?;
        let ids: Vec<Vec<u32>> = res.into_iter().map(|r| r.ids).collect();
        out.push(TrafficPoint {
            exact: false,
            l,
            recall: recall_at_k(&ids, x.gt, p.cfg.search.k)?,
            traffic: per_query(traffic_breakdown(&traces, &gap)),
        });
    }
    let plain = lp(32);
    for &l in exact_ls {
        let k = p.cfg.search.k;
        let runs: Vec<Result<(Vec<u32>, QueryTrace)>> = (0..x.data.queries.len())
            .into_par_iter()
            .map(|i| {
                let mut t = Vec::new();
                let r = exact_graph_search(x.graph, &x.data.base, x.data.queries.row(i), l.max(k), k, Some(&mut t))?;
                Ok((r.ids, t))
            })
            .collect();
        let (ids, traces): (Vec<_>, Vec<_>) = runs.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
        out.push(TrafficPoint {
            exact: true,
            l: l.max(k),
            recall: recall_at_k(&ids, x.gt, k)?,
            traffic: per_query(traffic_breakdown(&traces, &plain)),
        });
    }
    Ok(out)
}

/// For every PQ point, the cheapest exact-search point whose recall is at
/// least as high (within `tol`), and the traffic ratio exact / PQ.
pub fn iso_recall_ratios(points: &[TrafficPoint], tol: f64) -> Vec<(TrafficPoint, TrafficPoint, f64)> {
    let mut out = Vec::new();
    for a in points.iter().filter(|p| !p.exact) {
        let best = points
            .iter()
            .filter(|b| b.exact && b.recall >= a.recall - tol)
            .min_by(|x, y| x.traffic.total().total_cmp(&y.traffic.total()));
        if let Some(b) = best {
            out.push((*a, *b, b.traffic.total() / a.traffic.total()));
        }
    }
    out
}

pub const TRAFFIC_EXACT_L: [usize; 6] = [10, 20, 40, 80, 160, 320];

pub fn traffic(p: &Pipeline, x: &Inputs<'_>) -> Result<Table> {
    let pts = traffic_points(p, x, &p.cfg.search.l, &TRAFFIC_EXACT_L)?;
    let mut t = Table::new([
        "variant",
        "l",
        "recall",
        "index_bytes",
        "pq_bytes",
        "raw_bytes",
        "total_bytes",
        "iso_recall_ratio",
    ]);
    let ratios = iso_recall_ratios(&pts, 0.002);
    for pt in &pts {
        let ratio = ratios
            .iter()
            .find(|(a, _, _)| !pt.exact && a.l == pt.l)
            .map(|r| fmt(r.2))
            .unwrap_or_default();
        t.rows.push(vec![
            if pt.exact { "exact_raw" } else { "pq_gap_et" }.to_string(),
            pt.l.to_string(),
            fmt(pt.recall),
            fmt(pt.traffic.index_bytes),
            fmt(pt.traffic.pq_bytes),
            fmt(pt.traffic.raw_bytes),
            fmt(pt.traffic.total()),
            ratio,
        ]);
    }
    Ok(t)
}
