//! Experiment stages with on-disk caching.
//!
//! Each stage derives a key from its inputs; when `manifest.json` already
//! holds that key and the outputs are intact the stage loads them instead of
//! recomputing.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use nsann_core::dataset::{ground_truth_cached, load_ivecs, load_vectors, recall_at_k, save_ivecs, save_vectors};
use nsann_core::graph::{build_graph, gap_encode, graph_stats, load_graph, save_graph, GraphFormat, GraphStats};
use nsann_core::hash::ContentHasher;
use nsann_core::mapping::{
    collect_trace, hot_mass, plan_layout, select_hot_nodes, LayoutParams, LayoutPlan, Permutation, Reordered,
};
use nsann_core::pq::{calibrate_beta, train_pq, BetaCalibration};
use nsann_core::search::{batch_search, traced_batch, SearchParams};
use nsann_core::synth::{self, SynthKind};
use nsann_core::trace::{load_traces, save_traces, QueryTrace};
use nsann_core::{Error, GraphIndex, GroundTruth, PqCodes, PqModel, Result, SearchIndex, VecFormat, VectorDataset};
use nsann_sim::{simulate, SimReport, CSV_HEADER};
use serde::{Deserialize, Serialize};

use crate::config::{DatasetConfig, ExperimentConfig};
use crate::output::{fmt, read_json, write_csv, write_json, write_jsonl, Manifest};

pub struct Data {
    pub base: VectorDataset,
    pub queries: VectorDataset,
    /// Hash of both sets, the root of every stage key.
    pub key: String,
}

/// Base and query sets for a config: generated, or loaded from files.
pub fn load_data(cfg: &ExperimentConfig) -> Result<Data> {
    let (base, queries) = match &cfg.dataset {
        DatasetConfig::Synthetic { kind, n_base, n_queries } => {
            let world = cfg.stage_seed("world");
            (
                synth::generate(*kind, *n_base, world, cfg.stage_seed("base")),
                synth::generate(*kind, *n_queries, world, cfg.stage_seed("queries")),
            )
        }
        DatasetConfig::Files {
            base,
            queries,
            metric,
            format,
        } => {
            let fmt_of = |p: &Path| {
                format.or_else(|| VecFormat::from_path(p)).ok_or_else(|| {
                    Error::InvalidParam(format!("cannot infer vector format of {}", p.display()))
                })
            };
            (
                load_vectors(base, fmt_of(base)?, *metric)?,
                load_vectors(queries, fmt_of(queries)?, *metric)?,
            )
        }
    };
    if base.dim() != queries.dim() {
        return Err(Error::DimensionMismatch {
            expected: base.dim(),
            got: queries.dim(),
        });
    }
    let key = ContentHasher::new()
        .str(&base.content_hash())
        .str(&queries.content_hash())
        .hex();
    Ok(Data { base, queries, key })
}

pub fn synth_kind_name(kind: SynthKind) -> String {
    match kind {
        SynthKind::Sift => "sift".into(),
        SynthKind::Glove => "glove".into(),
        SynthKind::Clustered { dim } => format!("clustered{dim}"),
    }
}

/// Per-query search record; everything here is reproducible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryRecord {
    pub l: usize,
    pub query: usize,
    pub ids: Vec<u32>,
    pub distances: Vec<f32>,
    pub pq_distance_count: usize,
    pub exact_distance_count: usize,
    pub hops: usize,
    pub vertices_visited: usize,
    pub terminated_early: bool,
    pub final_t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub l: usize,
    pub beta: f64,
    pub recall: f64,
    pub mean_pq: f64,
    pub mean_exact: f64,
    pub mean_hops: f64,
    pub mean_visited: f64,
    pub early_terminated: f64,
    /// Wall-clock, excluded from reproducibility checks.
    #[serde(skip)]
    pub wall_qps: f64,
}

impl SearchSummary {
    pub fn mean_distances(&self) -> f64 {
        self.mean_pq + self.mean_exact
    }
}

pub const SEARCH_CSV_HEADER: [&str; 10] = [
    "l",
    "beta",
    "recall",
    "mean_pq",
    "mean_exact",
    "mean_distances",
    "mean_hops",
    "mean_visited",
    "early_terminated",
    "wall_qps",
];

impl SearchSummary {
    pub fn csv_record(&self) -> Vec<String> {
        vec![
            self.l.to_string(),
            fmt(self.beta),
            fmt(self.recall),
            fmt(self.mean_pq),
            fmt(self.mean_exact),
            fmt(self.mean_distances()),
            fmt(self.mean_hops),
            fmt(self.mean_visited),
            fmt(self.early_terminated),
            fmt(self.wall_qps),
        ]
    }
}

/// Runs a batch and summarizes it against ground truth.
pub fn run_search(
    index: &SearchIndex<'_>,
    queries: &VectorDataset,
    gt: &GroundTruth,
    params: &SearchParams,
    parallelism: usize,
) -> Result<(SearchSummary, Vec<QueryRecord>)> {
    let b = batch_search(index, queries, params, parallelism)?;
    let n = b.results.len() as f64;
    let mean = |f: &dyn Fn(&nsann_core::SearchResult) -> f64| b.results.iter().map(f).sum::<f64>() / n;
    let summary = SearchSummary {
        l: params.l,
        beta: params.beta,
        recall: recall_at_k(&b.ids(), gt, params.k)?,
        mean_pq: mean(&|r| r.pq_distance_count as f64),
        mean_exact: mean(&|r| r.exact_distance_count as f64),
        mean_hops: mean(&|r| r.hops as f64),
        mean_visited: mean(&|r| r.vertices_visited as f64),
        early_terminated: mean(&|r| r.terminated_early as u8 as f64),
        wall_qps: b.qps,
    };
    let records = b
        .results
        .into_iter()
        .enumerate()
        .map(|(i, r)| QueryRecord {
            l: params.l,
            query: i,
            ids: r.ids,
            distances: r.distances,
            pq_distance_count: r.pq_distance_count,
            exact_distance_count: r.exact_distance_count,
            hops: r.hops,
            vertices_visited: r.vertices_visited,
            terminated_early: r.terminated_early,
            final_t: r.final_t,
        })
        .collect();
    Ok((summary, records))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSummary {
    pub n: usize,
    pub trace_samples: usize,
    pub hot_count: usize,
    pub hot_mass: f64,
    pub hot_mass_1pct: f64,
    pub b_index: u32,
    pub index_cores: usize,
    pub raw_cores: usize,
    pub search_l: usize,
    pub recall: f64,
}

pub struct Mapped {
    pub reordered: Reordered,
    pub plan: LayoutPlan,
    /// Query traces in reordered ids, before hot-node rewriting.
    pub traces: Vec<QueryTrace>,
    pub summary: MapSummary,
}

impl Mapped {
    pub fn layout_params(&self) -> LayoutParams {
        self.plan.params.clone()
    }
}

pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    manifest: Manifest,
    pub verbose: bool,
}

fn key_of(parts: &[&str]) -> String {
    let mut h = ContentHasher::new();
    for p in parts {
        h.str(p);
    }
    h.hex()
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable")
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig, out: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        let out = out.into();
        std::fs::create_dir_all(&out).map_err(|e| Error::Io {
            path: out.clone(),
            source: e,
        })?;
        let manifest = Manifest::load_or_default(&out);
        Ok(Self {
            cfg,
            out,
            manifest,
            verbose: false,
        })
    }

    fn path(&self, f: &str) -> PathBuf {
        self.out.join(f)
    }

    fn note(&self, msg: &str) {
        if self.verbose {
            eprintln!("[nsann] {msg}");
        }
    }

    fn fresh(&self, stage: &str, key: &str) -> bool {
        self.manifest.is_fresh(&self.out, stage, key)
    }

    fn record(&mut self, stage: &str, key: &str, outputs: &[&str]) -> Result<()> {
        self.manifest.record(&self.out, stage, key, outputs)
    }

    pub fn data(&self) -> Result<Data> {
        load_data(&self.cfg)
    }

    /// Writes the base and query sets as fvecs.
    pub fn write_data(&mut self, d: &Data) -> Result<()> {
        if self.fresh("data", &d.key) {
            return Ok(());
        }
        save_vectors(&self.path("base.fvecs"), VecFormat::Fvecs, &d.base)?;
        save_vectors(&self.path("queries.fvecs"), VecFormat::Fvecs, &d.queries)?;
        self.record("data", &d.key, &["base.fvecs", "queries.fvecs"])
    }

    pub fn ground_truth(&self, d: &Data) -> Result<GroundTruth> {
        ground_truth_cached(&self.path("cache"), &d.base, &d.queries, self.cfg.search.k)
    }

    fn pq_key(&self, d: &Data) -> String {
        key_of(&[&d.key, &json(&self.cfg.pq.train(self.cfg.stage_seed("pq")))])
    }

    pub fn pq(&mut self, d: &Data) -> Result<(PqModel, PqCodes)> {
        let key = self.pq_key(d);
        if self.fresh("pq", &key) {
            if let (Ok(m), Ok(c)) = (PqModel::load(&self.path("pq_model.bin")), PqCodes::load(&self.path("pq_codes.bin"))) {
                return Ok((m, c));
            }
        }
        self.note("training product quantizer");
        let model = train_pq(&d.base, &self.cfg.pq.train(self.cfg.stage_seed("pq")))?;
        let codes = model.encode(&d.base)?;
        model.save(&self.path("pq_model.bin"))?;
        codes.save(&self.path("pq_codes.bin"))?;
        self.record("pq", &key, &["pq_model.bin", "pq_codes.bin"])?;
        Ok((model, codes))
    }

    pub fn calibration(&mut self, d: &Data, model: &PqModel, codes: &PqCodes) -> Result<BetaCalibration> {
        let params = self.cfg.pq.calibration(self.cfg.stage_seed("calibrate"), d.base.len());
        let key = key_of(&[&self.pq_key(d), &json(&params)]);
        if self.fresh("calibrate", &key) {
            if let Ok(c) = read_json(&self.path("beta.json")) {
                return Ok(c);
            }
        }
        self.note("calibrating beta");
        let cal = calibrate_beta(model, codes, &d.base, &params)?;
        write_json(&self.path("beta.json"), &cal)?;
        self.record("calibrate", &key, &["beta.json"])?;
        Ok(cal)
    }

    /// The configured beta, or the calibrated one.
    pub fn beta(&mut self, d: &Data, model: &PqModel, codes: &PqCodes) -> Result<f64> {
        match self.cfg.search.beta {
            Some(b) => Ok(b),
            None => Ok(self.calibration(d, model, codes)?.beta),
        }
    }

    fn graph_key(&self, d: &Data) -> String {
        key_of(&[&d.key, &json(&self.cfg.graph.build(self.cfg.stage_seed("graph")))])
    }

    pub fn graph(&mut self, d: &Data) -> Result<GraphIndex> {
        let key = self.graph_key(d);
        if self.fresh("graph", &key) {
            if let Ok(g) = load_graph(&self.path("graph.bin"), GraphFormat::Native) {
                return Ok(g);
            }
        }
        self.note("building graph");
        let g = build_graph(&d.base, &self.cfg.graph.build(self.cfg.stage_seed("graph")))?;
        save_graph(&self.path("graph.bin"), &g, GraphFormat::Native)?;
        let enc = gap_encode(&g);
        let f = File::create(self.path("graph_gap.bin")).map_err(|e| Error::Io {
            path: self.path("graph_gap.bin"),
            source: e,
        })?;
        enc.write_to(BufWriter::new(f))?;
        write_json(&self.path("graph_stats.json"), &graph_stats(&g))?;
        self.record("graph", &key, &["graph.bin", "graph_gap.bin", "graph_stats.json"])?;
        Ok(g)
    }

    pub fn graph_stats(&self, g: &GraphIndex) -> GraphStats {
        graph_stats(g)
    }

    /// Searches at every configured L; writes `results.jsonl` and `search.csv`.
    pub fn search(
        &mut self,
        d: &Data,
        gt: &GroundTruth,
        g: &GraphIndex,
        model: &PqModel,
        codes: &PqCodes,
        beta: f64,
    ) -> Result<Vec<SearchSummary>> {
        let index = SearchIndex::new(g, model, codes, &d.base)?;
        let mut summaries = Vec::new();
        let mut records = Vec::new();
        for &l in &self.cfg.search.l {
            self.note(&format!("searching L = {l}"));
            let (s, r) = run_search(&index, &d.queries, gt, &self.cfg.search.params(l, beta), self.cfg.search.parallelism)?;
            summaries.push(s);
            records.extend(r.into_iter().map(serde_json::to_value).collect::<std::result::Result<Vec<_>, _>>().map_err(|e| Error::Malformed(e.to_string()))?);
        }
        for s in &summaries {
            let mut v = serde_json::to_value(s).map_err(|e| Error::Malformed(e.to_string()))?;
            v["aggregate"] = true.into();
            records.push(v);
        }
        write_jsonl(&self.path("results.jsonl"), records)?;
        let rows: Vec<Vec<String>> = summaries.iter().map(SearchSummary::csv_record).collect();
        write_csv(&self.path("search.csv"), &SEARCH_CSV_HEADER, &rows)?;
        Ok(summaries)
    }

    fn map_key(&self, d: &Data, beta: f64) -> String {
        key_of(&[
            &self.graph_key(d),
            &self.pq_key(d),
            &json(&self.cfg.mapping),
            &json(&self.cfg.search.params(self.cfg.mapping.l, beta)),
            &json(&self.cfg.sim.geometry()),
            &self.cfg.stage_seed("mapping").to_string(),
        ])
    }

    /// Reorders by visit frequency, plans the layout and records query
    /// traces in the new ids.
    pub fn map(&mut self, d: &Data, g: &GraphIndex, model: &PqModel, codes: &PqCodes, beta: f64, gt: &GroundTruth) -> Result<Mapped> {
        let key = self.map_key(d, beta);
        let files = ["permutation.ivecs", "layout.json", "traces.bin", "mapping.json"];
        if self.fresh("map", &key) {
            if let Ok(m) = self.load_mapped(d, g, codes) {
                return Ok(m);
            }
        }
        self.note("collecting visit trace and planning layout");
        let mc = &self.cfg.mapping;
        let params = self.cfg.search.params(mc.l, beta);
        let index = SearchIndex::new(g, model, codes, &d.base)?;
        let samples = mc.trace_samples.min(d.base.len()).max(1);
        let (visits, _) = collect_trace(&index, &params, samples, self.cfg.stage_seed("mapping"))?;
        let perm = Permutation::by_visits(&visits);
        let reordered = reordered_from(g, codes, &d.base, perm)?;
        let rindex = SearchIndex::new(&reordered.graph, model, &reordered.codes, &reordered.data)?;
        let (results, traces) = traced_batch(&rindex, &d.queries, &params)?;
        let ids: Vec<Vec<u32>> = results
            .iter()
            .map(|r| r.ids.iter().map(|&v| reordered.perm.old_of_new[v as usize]).collect())
            .collect();
        let recall = recall_at_k(&ids, gt, self.cfg.search.k)?;
        let hot_count = select_hot_nodes(d.base.len(), mc.hot_fraction)?;
        let plan = plan_layout(d.base.len(), hot_count, self.cfg.sim.geometry(), self.layout_params(&reordered.graph, d.base.dim()))?;
        let summary = MapSummary {
            n: d.base.len(),
            trace_samples: samples,
            hot_count,
            hot_mass: hot_mass(&visits, hot_count),
            hot_mass_1pct: hot_mass(&visits, select_hot_nodes(d.base.len(), 0.01)?),
            b_index: plan.params.b_index,
            index_cores: plan.index_cores(),
            raw_cores: plan.raw_cores(),
            search_l: mc.l,
            recall,
        };
        save_ivecs(&self.path("permutation.ivecs"), &[reordered.perm.new_of_old.clone()])?;
        crate::output::write_bytes(&self.path("layout.json"), plan.to_json().as_bytes())?;
        save_traces(&self.path("traces.bin"), &traces)?;
        write_json(&self.path("mapping.json"), &summary)?;
        self.record("map", &key, &files)?;
        Ok(Mapped {
            reordered,
            plan,
            traces,
            summary,
        })
    }

    fn load_mapped(&self, d: &Data, g: &GraphIndex, codes: &PqCodes) -> Result<Mapped> {
        let rows = load_ivecs(&self.path("permutation.ivecs"))?;
        let new_of_old: Vec<u32> = rows.first().ok_or_else(|| Error::Malformed("empty permutation".into()))?.iter().map(|&v| v as u32).collect();
        let mut old_of_new = vec![0u32; new_of_old.len()];
        for (old, &new) in new_of_old.iter().enumerate() {
            *old_of_new.get_mut(new as usize).ok_or_else(|| Error::Malformed("permutation id out of range".into()))? = old as u32;
        }
        let reordered = reordered_from(g, codes, &d.base, Permutation { new_of_old, old_of_new })?;
        let plan = LayoutPlan::from_json(&std::fs::read_to_string(self.path("layout.json")).map_err(|e| Error::Io {
            path: self.path("layout.json"),
            source: e,
        })?)?;
        Ok(Mapped {
            reordered,
            plan,
            traces: load_traces(&self.path("traces.bin"))?,
            summary: read_json(&self.path("mapping.json"))?,
        })
    }

    pub fn layout_params(&self, g: &GraphIndex, dim: usize) -> LayoutParams {
        LayoutParams {
            r: g.max_degree(),
            b_index: gap_encode(g).bit_width(),
            b_pq: self.cfg.sim.b_pq,
            b_raw: self.cfg.sim.b_raw,
            dim,
            raw_cores: self.cfg.mapping.raw_cores.or(self.cfg.sim.raw_cores),
        }
    }

    /// Replays the mapped traces; writes `sim_report.json` and `sim.csv`.
    pub fn simulate(&mut self, m: &Mapped) -> Result<SimReport> {
        self.note("simulating");
        let traces = nsann_core::mapping::apply_hot_nodes(&m.traces, m.plan.hot_count);
        let report = simulate(&traces, &m.plan, &self.cfg.sim, m.reordered.data.metric())?;
        write_json(&self.path("sim_report.json"), &report)?;
        write_csv(&self.path("sim.csv"), &CSV_HEADER, &[report.csv_record()])?;
        Ok(report)
    }
}

/// Graph, codes and vectors renumbered by an existing permutation.
pub fn reordered_from(g: &GraphIndex, codes: &PqCodes, base: &VectorDataset, perm: Permutation) -> Result<Reordered> {
    if perm.new_of_old.len() != g.len() {
        return Err(Error::InvalidParam("permutation does not match the graph".into()));
    }
    let graph = g.relabel(&perm.new_of_old)?;
    let codes = codes.permuted(&perm.old_of_new);
    let idx: Vec<usize> = perm.old_of_new.iter().map(|&o| o as usize).collect();
    let data = base.select(&idx)?;
    Ok(Reordered {
        graph,
        codes,
        data,
        perm,
    })
}
