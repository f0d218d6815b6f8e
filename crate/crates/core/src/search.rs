//! PQ-distance graph search with a dynamic candidate list, early
//! termination and threshold reranking.
//!
//! The traversal ranks candidates by PQ distance only. Exact distances are
//! computed for reranking: at every expansion of the working size `T` when
//! early termination is enabled, and once at the end for every candidate
//! whose PQ distance falls under `beta` times the `T`-th PQ distance. Exact
//! distances are cached per query so no vertex is computed twice.

use std::collections::{HashMap, HashSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::VectorDataset;
use crate::distance::sanitize;
use crate::error::{Error, Result};
use crate::graph::GraphIndex;
use crate::hash::seeded_hash;
use crate::pq::{PqCodes, PqModel};
use crate::trace::{Event, QueryTrace};

/// Bloom filter geometry: 12 kB of bits and 8 hashes.
pub const BLOOM_BITS: usize = 12 * 1024 * 8;
pub const BLOOM_HASHES: u32 = 8;

const SEED_A: u64 = 0x5EA5_0001;
const SEED_B: u64 = 0x5EA5_0002;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisitedKind {
    Bloom { bits: usize, hashes: u32 },
    Exact,
}

impl Default for VisitedKind {
    fn default() -> Self {
        VisitedKind::Bloom {
            bits: BLOOM_BITS,
            hashes: BLOOM_HASHES,
        }
    }
}

/// Set membership for visited vertices. The Bloom variant never reports a
/// false negative; it may report false positives.
#[derive(Debug, Clone)]
pub enum VisitedFilter {
    Bloom {
        words: Vec<u64>,
        bits: usize,
        hashes: u32,
        inserted: usize,
    },
    Exact(HashSet<u32>),
}

impl VisitedFilter {
    pub fn new(kind: VisitedKind) -> Self {
        match kind {
            VisitedKind::Bloom { bits, hashes } => VisitedFilter::Bloom {
                words: vec![0; bits.max(1).div_ceil(64)],
                bits: bits.max(1),
                hashes: hashes.max(1),
                inserted: 0,
            },
            VisitedKind::Exact => VisitedFilter::Exact(HashSet::new()),
        }
    }

    #[inline]
    fn positions(id: u32, bits: usize, hashes: u32) -> impl Iterator<Item = usize> {
        let h1 = seeded_hash(id as u64, SEED_A);
        let h2 = seeded_hash(id as u64, SEED_B) | 1;
        (0..hashes as u64).map(move |i| (h1.wrapping_add(i.wrapping_mul(h2)) % bits as u64) as usize)
    }

    pub fn insert(&mut self, id: u32) {
        match self {
            VisitedFilter::Bloom {
                words,
                bits,
                hashes,
                inserted,
            } => {
                for p in Self::positions(id, *bits, *hashes) {
                    words[p / 64] |= 1 << (p % 64);
                }
                *inserted += 1;
            }
            VisitedFilter::Exact(s) => {
                s.insert(id);
            }
        }
    }

    pub fn contains(&self, id: u32) -> bool {
        match self {
            VisitedFilter::Bloom {
                words,
                bits,
                hashes,
                ..
            } => Self::positions(id, *bits, *hashes).all(|p| words[p / 64] & (1 << (p % 64)) != 0),
            VisitedFilter::Exact(s) => s.contains(&id),
        }
    }

    pub fn inserted(&self) -> usize {
        match self {
            VisitedFilter::Bloom { inserted, .. } => *inserted,
            VisitedFilter::Exact(s) => s.len(),
        }
    }
}

/// Standard false-positive estimate `(1 - e^{-h n / m})^h`.
pub fn bloom_fp_rate(bits: usize, hashes: u32, n: usize) -> f64 {
    let h = hashes as f64;
    (1.0 - (-h * n as f64 / bits as f64).exp()).powf(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    /// Candidate list capacity `L`.
    pub l: usize,
    /// Working-size increment.
    pub t_step: usize,
    /// Consecutive unchanged reranks needed to stop early.
    pub r: usize,
    /// PQ error ratio. `f64::INFINITY` reranks every candidate.
    pub beta: f64,
    pub k: usize,
    pub et_enabled: bool,
    /// Threshold rerank at the end. When off, only the top `T` are reranked.
    pub rerank_enabled: bool,
    pub visited: VisitedKind,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            l: 150,
            t_step: 4,
            r: 3,
            beta: 1.06,
            k: 10,
            et_enabled: true,
            rerank_enabled: true,
            visited: VisitedKind::default(),
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParam("k must be >= 1".into()));
        }
        if self.k > self.l {
            return Err(Error::KTooLarge {
                k: self.k,
                limit: self.l,
                what: "candidate list size L",
            });
        }
        if self.t_step == 0 || self.r == 0 {
            return Err(Error::InvalidParam("T_step and r must be >= 1".into()));
        }
        if self.beta.is_nan() || self.beta < 1.0 {
            return Err(Error::InvalidParam(format!("beta = {} must be >= 1", self.beta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub dist: f32,
    pub id: u32,
    pub evaluated: bool,
}

#[inline]
fn cand_cmp(a: &Candidate, b: &Candidate) -> std::cmp::Ordering {
    a.dist.total_cmp(&b.dist).then(a.id.cmp(&b.id))
}

/// Sorts ascending by distance, ties by id, and keeps the first `l`.
pub fn sort_and_truncate(list: &mut Vec<Candidate>, l: usize) {
    list.sort_by(cand_cmp);
    list.truncate(l);
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub ids: Vec<u32>,
    pub distances: Vec<f32>,
    pub pq_distance_count: usize,
    pub exact_distance_count: usize,
    /// Evaluated (expanded) vertices.
    pub hops: usize,
    /// Insertions into the visited filter.
    pub vertices_visited: usize,
    pub terminated_early: bool,
    pub final_t: usize,
    pub rerank_rounds: usize,
}

/// Tracks reranked top-k sets across working-size expansions.
#[derive(Debug, Clone, Default)]
pub struct EtState {
    prev: Option<Vec<u32>>,
    streak: usize,
}

impl EtState {
    /// Records one rerank's top-k ids (any order) and returns the number of
    /// consecutive reranks, ending with this one, that matched their
    /// predecessor.
    pub fn record(&mut self, topk: &[u32]) -> usize {
        let mut ids = topk.to_vec();
        ids.sort_unstable();
        if self.prev.as_ref() == Some(&ids) {
            self.streak += 1;
        } else {
            self.streak = 0;
        }
        self.prev = Some(ids);
        self.streak
    }

    pub fn streak(&self) -> usize {
        self.streak
    }
}

/// True when the top-k set has been unchanged for `r` consecutive reranks.
pub fn early_termination_check(state: &EtState, r: usize) -> bool {
    state.prev.is_some() && state.streak >= r
}

/// `d` scaled by `beta` in the direction of larger distance, so negative
/// distances (inner product) also loosen.
#[inline]
fn threshold(d: f32, beta: f64) -> f64 {
    if beta.is_infinite() {
        f64::INFINITY
    } else {
        let d = d as f64;
        d + (beta - 1.0) * d.abs()
    }
}

/// Read-only view over everything a query needs.
#[derive(Clone, Copy)]
pub struct SearchIndex<'a> {
    pub graph: &'a GraphIndex,
    pub model: &'a PqModel,
    pub codes: &'a PqCodes,
    pub data: &'a VectorDataset,
}

struct Rerank<'q> {
    q: &'q [f32],
    cache: HashMap<u32, f32>,
}

impl<'a> SearchIndex<'a> {
    pub fn new(graph: &'a GraphIndex, model: &'a PqModel, codes: &'a PqCodes, data: &'a VectorDataset) -> Result<Self> {
        let n = graph.len();
        if n == 0 {
            return Err(Error::Empty("graph has no vertices".into()));
        }
        if codes.len() != n || data.len() != n {
            return Err(Error::InvalidParam(format!(
                "graph has {n} vertices, codes {}, vectors {}",
                codes.len(),
                data.len()
            )));
        }
        if codes.m() != model.m() || data.dim() != model.dim() {
            return Err(Error::InvalidParam("PQ model does not match codes or data".into()));
        }
        Ok(Self {
            graph,
            model,
            codes,
            data,
        })
    }

    pub fn search(&self, q: &[f32], params: &SearchParams) -> Result<SearchResult> {
        self.run(q, params, None)
    }

    pub fn search_traced(&self, q: &[f32], params: &SearchParams, trace: &mut QueryTrace) -> Result<SearchResult> {
        self.run(q, params, Some(trace))
    }

    /// Exact distances for `ids` not yet cached; returns how many were new.
    fn rerank_ids(&self, rr: &mut Rerank<'_>, ids: impl Iterator<Item = u32>, trace: &mut Option<&mut QueryTrace>) -> usize {
        let metric = self.data.metric();
        let mut fresh = 0;
        for id in ids {
            if rr.cache.contains_key(&id) {
                continue;
            }
            let d = sanitize(metric.distance(rr.q, self.data.row(id as usize)));
            rr.cache.insert(id, d);
            fresh += 1;
            if let Some(t) = trace.as_deref_mut() {
                t.push(Event::FetchRaw(id));
            }
        }
        if let Some(t) = trace.as_deref_mut() {
            if fresh > 0 {
                t.push(Event::RerankCompute(fresh as u32));
            }
        }
        fresh
    }

    fn top_exact(rr: &Rerank<'_>, ids: impl Iterator<Item = u32>, k: usize) -> Vec<(f32, u32)> {
        let mut v: Vec<(f32, u32)> = ids.map(|id| (rr.cache[&id], id)).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        v.truncate(k);
        v
    }

    fn run(&self, q: &[f32], p: &SearchParams, mut trace: Option<&mut QueryTrace>) -> Result<SearchResult> {
        p.validate()?;
        if q.len() != self.data.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.data.dim(),
                got: q.len(),
            });
        }
        let adt = self.model.build_adt(q)?;
        let mut res = SearchResult::default();
        let mut visited = VisitedFilter::new(p.visited);
        let mut list: Vec<Candidate> = Vec::with_capacity(p.l + self.graph.max_degree());
        let mut rr = Rerank {
            q,
            cache: HashMap::new(),
        };
        let mut et = EtState::default();

        let entry = self.graph.entry_point();
        if let Some(t) = trace.as_deref_mut() {
            t.extend([Event::AdtBuild, Event::FetchPq(entry), Event::PqCompute(1)]);
        }
        visited.insert(entry);
        list.push(Candidate {
            dist: adt.distance(self.codes.row(entry as usize)),
            id: entry,
            evaluated: false,
        });
        res.pq_distance_count = 1;

        let mut t_size = p.k;
        loop {
            let top = t_size.min(list.len());
            if let Some(pos) = list[..top].iter().position(|c| !c.evaluated) {
                list[pos].evaluated = true;
                let v = list[pos].id;
                res.hops += 1;
                if let Some(t) = trace.as_deref_mut() {
                    t.push(Event::FetchIndex(v));
                }
                let mut added = 0u32;
                for &u in self.graph.neighbors(v) {
                    if visited.contains(u) {
                        continue;
                    }
                    visited.insert(u);
                    let d = adt.distance(self.codes.row(u as usize));
                    list.push(Candidate {
                        dist: d,
                        id: u,
                        evaluated: false,
                    });
                    added += 1;
                    if let Some(t) = trace.as_deref_mut() {
                        t.push(Event::FetchPq(u));
                    }
                }
                res.pq_distance_count += added as usize;
                sort_and_truncate(&mut list, p.l);
                if let Some(t) = trace.as_deref_mut() {
                    if added > 0 {
                        t.push(Event::PqCompute(added));
                    }
                    t.push(Event::Sort(list.len() as u32));
                }
                continue;
            }

            // top T fully evaluated
            if p.et_enabled {
                let ids: Vec<u32> = list[..top].iter().map(|c| c.id).collect();
                self.rerank_ids(&mut rr, ids.iter().copied(), &mut trace);
                res.rerank_rounds += 1;
                let best = Self::top_exact(&rr, ids.into_iter(), p.k);
                if let Some(t) = trace.as_deref_mut() {
                    t.push(Event::Sort(top as u32));
                }
                let ids: Vec<u32> = best.iter().map(|b| b.1).collect();
                et.record(&ids);
                if early_termination_check(&et, p.r) {
                    res.terminated_early = true;
                    break;
                }
            }
            if t_size + p.t_step > p.l {
                break;
            }
            t_size += p.t_step;
        }

        let top = t_size.min(list.len());
        let mut final_ids: Vec<u32> = list[..top].iter().map(|c| c.id).collect();
        if p.rerank_enabled && top > 0 {
            let thr = threshold(list[top - 1].dist, p.beta);
            final_ids.extend(
                list[top..]
                    .iter()
                    .filter(|c| (c.dist as f64) < thr)
                    .map(|c| c.id),
            );
        }
        self.rerank_ids(&mut rr, final_ids.iter().copied(), &mut trace);
        res.rerank_rounds += 1;
        let best = Self::top_exact(&rr, final_ids.iter().copied(), p.k);
        if let Some(t) = trace.as_deref_mut() {
            t.push(Event::Sort(final_ids.len() as u32));
        }
        res.ids = best.iter().map(|b| b.1).collect();
        res.distances = best.iter().map(|b| b.0).collect();
        res.exact_distance_count = rr.cache.len();
        res.vertices_visited = visited.inserted();
        res.final_t = t_size;
        Ok(res)
    }
}

/// Best-first search on exact distances without PQ, used as the
/// uncompressed baseline. Every neighbor distance reads the raw vector.
pub fn exact_graph_search(
    graph: &GraphIndex,
    data: &VectorDataset,
    q: &[f32],
    l: usize,
    k: usize,
    mut trace: Option<&mut QueryTrace>,
) -> Result<SearchResult> {
    if k == 0 || k > l {
        return Err(Error::KTooLarge {
            k,
            limit: l,
            what: "candidate list size L",
        });
    }
    if q.len() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            got: q.len(),
        });
    }
    let metric = data.metric();
    let dist = |id: u32| sanitize(metric.distance(q, data.row(id as usize)));
    let mut res = SearchResult::default();
    let mut seen = HashSet::new();
    let entry = graph.entry_point();
    seen.insert(entry);
    let mut list = vec![Candidate {
        dist: dist(entry),
        id: entry,
        evaluated: false,
    }];
    res.exact_distance_count = 1;
    if let Some(t) = trace.as_deref_mut() {
        t.extend([Event::FetchRaw(entry), Event::RerankCompute(1)]);
    }
    while let Some(pos) = list.iter().position(|c| !c.evaluated) {
        list[pos].evaluated = true;
        let v = list[pos].id;
        res.hops += 1;
        if let Some(t) = trace.as_deref_mut() {
            t.push(Event::FetchIndex(v));
        }
        let mut added = 0u32;
        for &u in graph.neighbors(v) {
            if !seen.insert(u) {
                continue;
            }
            list.push(Candidate {
                dist: dist(u),
                id: u,
                evaluated: false,
            });
            added += 1;
            if let Some(t) = trace.as_deref_mut() {
                t.push(Event::FetchRaw(u));
            }
        }
        res.exact_distance_count += added as usize;
        sort_and_truncate(&mut list, l);
        if let Some(t) = trace.as_deref_mut() {
            if added > 0 {
                t.push(Event::RerankCompute(added));
            }
            t.push(Event::Sort(list.len() as u32));
        }
    }
    list.truncate(k);
    res.ids = list.iter().map(|c| c.id).collect();
    res.distances = list.iter().map(|c| c.dist).collect();
    res.vertices_visited = seen.len();
    res.final_t = l;
    Ok(res)
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    pub results: Vec<SearchResult>,
    pub wall_secs: f64,
    pub qps: f64,
    pub mean_latency_us: f64,
}

impl BatchResult {
    pub fn ids(&self) -> Vec<Vec<u32>> {
        self.results.iter().map(|r| r.ids.clone()).collect()
    }

    pub fn total_pq(&self) -> usize {
        self.results.iter().map(|r| r.pq_distance_count).sum()
    }

    pub fn total_exact(&self) -> usize {
        self.results.iter().map(|r| r.exact_distance_count).sum()
    }
}

/// Searches every query on a pool of `parallelism` threads. Per-query
/// results do not depend on the thread count.
pub fn batch_search(index: &SearchIndex<'_>, queries: &VectorDataset, params: &SearchParams, parallelism: usize) -> Result<BatchResult> {
    if queries.is_empty() {
        return Err(Error::Empty("no queries".into()));
    }
    params.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::InvalidParam(format!("thread pool: {e}")))?;
    let start = Instant::now();
    let timed: Vec<Result<(SearchResult, f64)>> = pool.install(|| {
        (0..queries.len())
            .into_par_iter()
            .map(|i| {
                let t0 = Instant::now();
                let r = index.search(queries.row(i), params)?;
                Ok((r, t0.elapsed().as_secs_f64()))
            })
            .collect()
    });
    let wall_secs = start.elapsed().as_secs_f64().max(1e-9);
    let mut results = Vec::with_capacity(timed.len());
    let mut lat = 0.0;
    for t in timed {
        let (r, s) = t?;
        lat += s;
        results.push(r);
    }
    let n = results.len() as f64;
    Ok(BatchResult {
        results,
        wall_secs,
        qps: n / wall_secs,
        mean_latency_us: lat / n * 1e6,
    })
}

/// Searches every query and records its access trace.
pub fn traced_batch(index: &SearchIndex<'_>, queries: &VectorDataset, params: &SearchParams) -> Result<(Vec<SearchResult>, Vec<QueryTrace>)> {
    let out: Vec<Result<(SearchResult, QueryTrace)>> = (0..queries.len())
        .into_par_iter()
        .map(|i| {
            let mut t = Vec::new();
            let r = index.search_traced(queries.row(i), params, &mut t)?;
            Ok((r, t))
        })
        .collect();
    let mut results = Vec::with_capacity(out.len());
    let mut traces = Vec::with_capacity(out.len());
    for o in out {
        let (r, t) = o?;
        results.push(r);
        traces.push(t);
    }
    Ok((results, traces))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{brute_force_knn, recall_at_k, Metric};
    use crate::graph::{build_graph, BuildParams};
    use crate::pq::{train_pq, TrainParams};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Fixture {
        data: VectorDataset,
        graph: GraphIndex,
        model: PqModel,
        codes: PqCodes,
    }

    fn fixture(n: usize, d: usize, seed: u64) -> Fixture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = VectorDataset::new(d, (0..n * d).map(|_| rng.random::<f32>()).collect(), Metric::Euclidean).unwrap();
        let graph = build_graph(&data, &BuildParams { r: 12, l_build: 32, alpha: 1.2, seed }).unwrap();
        let model = train_pq(&data, &TrainParams { m: 4, c: 16, iters: 8, seed }).unwrap();
        let codes = model.encode(&data).unwrap();
        Fixture { data, graph, model, codes }
    }

    impl Fixture {
        fn index(&self) -> SearchIndex<'_> {
            SearchIndex::new(&self.graph, &self.model, &self.codes, &self.data).unwrap()
        }
    }

    /// Textbook PQ best-first search: evaluate the closest unevaluated
    /// candidate until the whole list is evaluated, then rerank all of it.
    fn reference_search(f: &Fixture, q: &[f32], l: usize, k: usize) -> Vec<u32> {
        let adt = f.model.build_adt(q).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        let ep = f.graph.entry_point();
        seen.insert(ep);
        let mut list = vec![(adt.distance(f.codes.row(ep as usize)), ep, false)];
        loop {
            let mut best: Option<usize> = None;
            for (i, c) in list.iter().enumerate() {
                if !c.2 {
                    best = Some(i);
                    break;
                }
            }
            let Some(i) = best else { break };
            list[i].2 = true;
            let v = list[i].1;
            for &u in f.graph.neighbors(v) {
                if seen.insert(u) {
                    list.push((adt.distance(f.codes.row(u as usize)), u, false));
                }
            }
            list.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            list.truncate(l);
        }
        let mut exact: Vec<(f32, u32)> = list
            .iter()
            .map(|c| (Metric::Euclidean.distance(q, f.data.row(c.1 as usize)), c.1))
            .collect();
        exact.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        exact.into_iter().take(k).map(|e| e.1).collect()
    }

    #[test]
    fn bloom_has_no_false_negatives_and_starts_empty() {
        let mut f = VisitedFilter::new(VisitedKind::default());
        assert!((0..10_000).all(|i| !f.contains(i)));
        for i in (0..5000).map(|i| i * 7) {
            f.insert(i);
            assert!(f.contains(i));
        }
        assert!((0..5000).all(|i| f.contains(i * 7)));
        assert_eq!(f.inserted(), 5000);
    }

    #[test]
    fn bloom_formula_uses_negative_exponent() {
        let p = bloom_fp_rate(BLOOM_BITS, BLOOM_HASHES, 8000);
        assert!(p > 0.002 && p < 0.004, "{p}");
    }

    #[test]
    fn sort_and_truncate_examples() {
        let mk = |d: &[f32]| -> Vec<Candidate> {
            d.iter()
                .enumerate()
                .map(|(i, &x)| Candidate { dist: x, id: i as u32, evaluated: false })
                .collect()
        };
        let mut sorted = mk(&[1.0, 2.0, 3.0]);
        let before = sorted.clone();
        sort_and_truncate(&mut sorted, 10);
        assert_eq!(sorted, before);
        let mut rev = mk(&[5.0, 4.0, 3.0, 2.0, 1.0]);
        sort_and_truncate(&mut rev, 5);
        assert_eq!(rev.iter().map(|c| c.id).collect::<Vec<_>>(), vec![4, 3, 2, 1, 0]);
        let mut tie = mk(&[1.0, 1.0]);
        tie.reverse();
        sort_and_truncate(&mut tie, 1);
        assert_eq!(tie[0].id, 0);
    }

    #[test]
    fn early_termination_examples() {
        let mut s = EtState::default();
        assert!(!early_termination_check(&s, 1));
        s.record(&[1, 2, 3]);
        assert!(!early_termination_check(&s, 1));
        s.record(&[3, 2, 1]);
        assert!(early_termination_check(&s, 1));
        s.record(&[1, 2, 4]);
        assert!(!early_termination_check(&s, 1));
        assert_eq!(s.streak(), 0);
    }

    #[test]
    fn toy_set_finds_nearest() {
        let pts: Vec<Vec<f32>> = (0..10).map(|i| vec![i as f32, (i * i) as f32 * 0.1]).collect();
        let data = VectorDataset::from_rows(&pts, Metric::Euclidean).unwrap();
        let adj: Vec<Vec<u32>> = (0..10u32).map(|v| (0..10).filter(|&u| u != v).collect()).collect();
        let graph = GraphIndex::new(9, adj, 0).unwrap();
        let model = train_pq(&data, &TrainParams { m: 2, c: 4, iters: 5, seed: 1 }).unwrap();
        let codes = model.encode(&data).unwrap();
        let idx = SearchIndex::new(&graph, &model, &codes, &data).unwrap();
        let params = SearchParams { l: 10, k: 1, beta: f64::INFINITY, ..SearchParams::default() };
        for (i, p) in pts.iter().enumerate() {
            assert_eq!(idx.search(p, &params).unwrap().ids, vec![i as u32]);
        }
    }

    #[test]
    fn matches_reference_without_dynamic_features() {
        let f = fixture(1000, 8, 3);
        let idx = f.index();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let q: Vec<f32> = (0..8).map(|_| rng.random()).collect();
            let l = 40;
            let params = SearchParams {
                l,
                k: 10,
                t_step: 1,
                beta: 1.0,
                et_enabled: false,
                rerank_enabled: true,
                visited: VisitedKind::Exact,
                ..SearchParams::default()
            };
            let got = idx.search(&q, &params).unwrap();
            assert_eq!(got.ids, reference_search(&f, &q, l, 10));
        }
    }

    #[test]
    fn exhaustive_limit_gives_perfect_recall() {
        let f = fixture(1000, 8, 5);
        let idx = f.index();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let queries = VectorDataset::new(8, (0..50 * 8).map(|_| rng.random()).collect(), Metric::Euclidean).unwrap();
        let gt = brute_force_knn(&f.data, &queries, 10).unwrap();
        let params = SearchParams {
            l: 1000,
            k: 10,
            beta: f64::INFINITY,
            et_enabled: false,
            visited: VisitedKind::Exact,
            t_step: 50,
            ..SearchParams::default()
        };
        let found: Vec<Vec<u32>> = (0..queries.len())
            .map(|i| idx.search(queries.row(i), &params).unwrap().ids)
            .collect();
        assert_eq!(recall_at_k(&found, &gt, 10).unwrap(), 1.0);
    }

    #[test]
    fn counters_and_trace_agree() {
        let f = fixture(800, 8, 7);
        let idx = f.index();
        let q = f.data.row(3).to_vec();
        let params = SearchParams { l: 50, k: 10, ..SearchParams::default() };
        let mut t = Vec::new();
        let r = idx.search_traced(&q, &params, &mut t).unwrap();
        let fetch_index = t.iter().filter(|e| matches!(e, Event::FetchIndex(_))).count();
        let fetch_pq = t.iter().filter(|e| matches!(e, Event::FetchPq(_))).count();
        let fetch_raw = t.iter().filter(|e| matches!(e, Event::FetchRaw(_))).count();
        assert_eq!(fetch_index, r.hops);
        assert_eq!(fetch_pq, r.pq_distance_count);
        assert_eq!(fetch_raw, r.exact_distance_count);
        assert!(r.pq_distance_count <= 1 + f.graph.max_degree() * r.hops);
        assert_eq!(r, idx.search(&q, &params).unwrap());
        assert!(r.distances.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn batch_is_independent_of_parallelism() {
        let f = fixture(600, 8, 9);
        let idx = f.index();
        let queries = f.data.select(&(0..40).collect::<Vec<_>>()).unwrap();
        let params = SearchParams { l: 30, k: 5, ..SearchParams::default() };
        let a = batch_search(&idx, &queries, &params, 1).unwrap();
        let b = batch_search(&idx, &queries, &params, 8).unwrap();
        assert_eq!(a.ids(), b.ids());
        assert!(a.qps > 0.0);
        assert!((a.qps - 40.0 / a.wall_secs).abs() < 1e-6 * a.qps);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let f = fixture(100, 4, 1);
        let idx = f.index();
        let q = vec![0.0; 4];
        let bad = SearchParams { l: 5, k: 10, ..SearchParams::default() };
        assert!(matches!(idx.search(&q, &bad), Err(Error::KTooLarge { .. })));
        let bad = SearchParams { beta: 0.5, ..SearchParams::default() };
        assert!(idx.search(&q, &bad).is_err());
    }

    #[test]
    fn exact_baseline_finds_neighbors() {
        let f = fixture(1000, 8, 11);
        let queries = f.data.select(&(0..30).collect::<Vec<_>>()).unwrap();
        let gt = brute_force_knn(&f.data, &queries, 10).unwrap();
        let found: Vec<Vec<u32>> = (0..30)
            .map(|i| exact_graph_search(&f.graph, &f.data, queries.row(i), 64, 10, None).unwrap().ids)
            .collect();
        assert!(recall_at_k(&found, &gt, 10).unwrap() > 0.95);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn bloom_never_forgets(ids in proptest::collection::vec(any::<u32>(), 1..2000)) {
            let mut f = VisitedFilter::new(VisitedKind::Bloom { bits: 4096, hashes: 4 });
            for &i in &ids {
                f.insert(i);
            }
            for &i in &ids {
                prop_assert!(f.contains(i));
            }
        }

        #[test]
        fn sort_and_truncate_matches_full_sort(
            old in proptest::collection::vec((0f32..100.0, 0u32..1000), 0..50),
            new in proptest::collection::vec((0f32..100.0, 1000u32..2000), 0..50),
            l in 1usize..80,
        ) {
            let mk = |v: &[(f32, u32)]| v.iter().map(|&(d, id)| Candidate { dist: d, id, evaluated: false }).collect::<Vec<_>>();
            let mut list = mk(&old);
            sort_and_truncate(&mut list, l);
            list.extend(mk(&new));
            sort_and_truncate(&mut list, l);
            let mut naive: Vec<(f32, u32)> = old.clone();
            naive.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            naive.truncate(l);
            naive.extend(new.iter().copied());
            naive.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            naive.truncate(l);
            prop_assert_eq!(list.iter().map(|c| (c.dist, c.id)).collect::<Vec<_>>(), naive);
        }
    }
}
