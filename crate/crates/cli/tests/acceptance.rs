//! Acceptance checks. Prints one PASS/FAIL line per criterion with the
//! measured values. Fixtures are cached under the cargo target tmpdir, so
//! only the first run pays for graph builds and PQ training.

use std::cell::OnceCell;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nsann_cli::config::DatasetConfig;
use nsann_cli::output::read_csv;
use nsann_cli::pipeline::{run_search, Data, Mapped, SearchSummary};
use nsann_cli::sweeps::{bit_error_points, iso_recall_ratios, traffic_points, Inputs};
use nsann_cli::{execute, Command, ExperimentConfig, Pipeline};
use nsann_core::dataset::{brute_force_knn, recall_at_k};
use nsann_core::graph::{build_graph, gap_encode, BuildParams};
use nsann_core::mapping::plan_layout;
use nsann_core::pq::{calibrate_beta, train_pq, CalibrationParams, TrainParams};
use nsann_core::search::{SearchParams, VisitedFilter, VisitedKind};
use nsann_core::synth::{clustered, SynthKind};
use nsann_core::{GraphIndex, GroundTruth, Metric, PqCodes, PqModel, Result, SearchIndex, VectorDataset};
use nsann_sim::{hot_node_sweep, queue_sweep};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 42;

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Result<Check> {
    Ok(Check {
        pass,
        detail: detail.into(),
    })
}

struct Fixture {
    p: Pipeline,
    data: Data,
    gt: GroundTruth,
    graph: GraphIndex,
    model: PqModel,
    codes: PqCodes,
    beta: f64,
}

impl Fixture {
    fn load(root: &Path, kind: SynthKind, name: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::with_seed(SEED);
        cfg.dataset = DatasetConfig::Synthetic {
            kind,
            n_base: 100_000,
            n_queries: 1000,
        };
        cfg.graph.r = 32;
        cfg.graph.l_build = 64;
        let mut p = Pipeline::new(cfg, root.join(name))?;
        p.verbose = true;
        let data = p.data()?;
        let gt = p.ground_truth(&data)?;
        let (model, codes) = p.pq(&data)?;
        let beta = p.beta(&data, &model, &codes)?;
        let graph = p.graph(&data)?;
        Ok(Self {
            p,
            data,
            gt,
            graph,
            model,
            codes,
            beta,
        })
    }

    fn index(&self) -> Result<SearchIndex<'_>> {
        SearchIndex::new(&self.graph, &self.model, &self.codes, &self.data.base)
    }

    fn inputs(&self) -> Inputs<'_> {
        Inputs {
            data: &self.data,
            gt: &self.gt,
            graph: &self.graph,
            model: &self.model,
            codes: &self.codes,
            beta: self.beta,
        }
    }

    fn params(&self, l: usize) -> SearchParams {
        self.p.cfg.search.params(l, self.beta)
    }

    fn run(&self, params: &SearchParams) -> Result<SearchSummary> {
        Ok(run_search(&self.index()?, &self.data.queries, &self.gt, params, 1)?.0)
    }
}

struct Ctx {
    root: PathBuf,
    sift: OnceCell<Fixture>,
    glove: OnceCell<Fixture>,
    mapped: OnceCell<Mapped>,
}

impl Ctx {
    fn sift(&self) -> Result<&Fixture> {
        if self.sift.get().is_none() {
            let _ = self.sift.set(Fixture::load(&self.root, SynthKind::Sift, "sift100k")?);
        }
        Ok(self.sift.get().unwrap())
    }

    fn glove(&self) -> Result<&Fixture> {
        if self.glove.get().is_none() {
            let _ = self.glove.set(Fixture::load(&self.root, SynthKind::Glove, "glove100k")?);
        }
        Ok(self.glove.get().unwrap())
    }

    /// SIFT traces in visit-frequency order with the default layout.
    fn mapped(&self) -> Result<&Mapped> {
        if self.mapped.get().is_none() {
            let f = self.sift()?;
            let mut p = Pipeline::new(f.p.cfg.clone(), &f.p.out)?;
            let m = p.map(&f.data, &f.graph, &f.model, &f.codes, f.beta, &f.gt)?;
            let _ = self.mapped.set(m);
        }
        Ok(self.mapped.get().unwrap())
    }
}

fn random_dataset(rng: &mut ChaCha8Rng, n: usize, dim: usize, metric: Metric) -> VectorDataset {
    let data = (0..n * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    VectorDataset::new(dim, data, metric).expect("finite")
}

fn c1_exhaustive_search_is_exact(_: &Ctx) -> Result<Check> {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = 1.0f64;
    let cases = [(16, Metric::Euclidean), (32, Metric::Angular), (24, Metric::InnerProduct), (64, Metric::Euclidean)];
    for (i, &(dim, metric)) in cases.iter().enumerate() {
        let base = random_dataset(&mut rng, 1000, dim, metric);
        let queries = random_dataset(&mut rng, 50, dim, metric);
        let gt = brute_force_knn(&base, &queries, 10)?;
        let graph = build_graph(&base, &BuildParams { r: 16, l_build: 32, alpha: 1.2, seed: i as u64 })?;
        let model = train_pq(&base, &TrainParams { m: 8, c: 256, iters: 4, seed: i as u64 })?;
        let codes = model.encode(&base)?;
        let index = SearchIndex::new(&graph, &model, &codes, &base)?;
        let params = SearchParams {
            l: base.len(),
            beta: f64::INFINITY,
            et_enabled: false,
            visited: VisitedKind::Exact,
            ..Default::default()
        };
        let ids: Vec<Vec<u32>> = (0..queries.len())
            .map(|q| index.search(queries.row(q), &params).map(|r| r.ids))
            .collect::<Result<_>>()?;
        worst = worst.min(recall_at_k(&ids, &gt, 10)?);
    }
    let secs = t.elapsed().as_secs_f64();
    check(worst == 1.0 && secs < 10.0, format!("min recall@10 {worst:.4} over {} datasets in {secs:.1} s", cases.len()))
}

fn c2_beta_calibration(ctx: &Ctx) -> Result<Check> {
    let f = ctx.sift()?;
    let params = CalibrationParams {
        percentile: 0.99,
        ..f.p.cfg.pq.calibration(f.p.cfg.stage_seed("calibrate"), f.data.base.len())
    };
    let t = Instant::now();
    let cal = calibrate_beta(&f.model, &f.codes, &f.data.base, &params)?;
    let secs = t.elapsed().as_secs_f64();
    check(
        (1.03..=1.12).contains(&cal.beta) && secs < 300.0,
        format!("beta {:.4} (median ratio {:.4}) in {secs:.1} s", cal.beta, cal.median),
    )
}

fn c3_beta_rerank_gain(ctx: &Ctx) -> Result<Check> {
    let f = ctx.sift()?;
    let mut pts = Vec::new();
    for l in [20, 50] {
        let full = f.run(&f.params(l))?.recall;
        let top_t = f.run(&SearchParams {
            rerank_enabled: false,
            ..f.params(l)
        })?
        .recall;
        pts.push((l, top_t, full));
    }
    let lowest = pts.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    let all_positive = pts.iter().all(|p| p.2 > p.1);
    let detail = pts
        .iter()
        .map(|(l, t, b)| format!("L={l}: top-T {t:.4} beta {b:.4} (+{:.2}%)", (b - t) * 100.0))
        .collect::<Vec<_>>()
        .join(", ");
    check(all_positive && lowest.2 - lowest.1 >= 0.01, format!("{detail}; need >0 everywhere and >=1% at L={}", lowest.0))
}

/// Distance computations an ET-off search needs to reach `recall`,
/// interpolated along the recall/cost curve of increasing L.
fn iso_recall_cost(curve: &[(f64, f64)], recall: f64) -> Option<f64> {
    curve.windows(2).find_map(|w| {
        let ((r0, c0), (r1, c1)) = (w[0], w[1]);
        (r0 <= recall && recall <= r1 && r1 > r0).then(|| c0 + (c1 - c0) * (recall - r0) / (r1 - r0))
    })
}

fn c4_early_termination(ctx: &Ctx) -> Result<Check> {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, f) in [("sift", ctx.sift()?), ("glove", ctx.glove()?)] {
        let mut curve: Vec<(f64, f64)> = Vec::new();
        for l in (10..=200).step_by(5) {
            let s = f.run(&SearchParams {
                et_enabled: false,
                ..f.params(l)
            })?;
            curve.push((s.recall, s.mean_distances()));
        }
        for l in [50, 100] {
            let on = f.run(&f.params(l))?;
            match iso_recall_cost(&curve, on.recall) {
                Some(off) => {
                    let cut = 1.0 - on.mean_distances() / off;
                    ok &= cut >= 0.05;
                    parts.push(format!("{name} L={l}: recall {:.4}, {:.1} vs {off:.1} distances (-{:.1}%)", on.recall, on.mean_distances(), cut * 100.0));
                }
                None => {
                    ok = false;
                    parts.push(format!("{name} L={l}: recall {:.4} outside the ET-off curve", on.recall));
                }
            }
        }
    }
    check(ok, parts.join("; "))
}

fn same_neighbor_sets(a: &GraphIndex, b: &GraphIndex) -> bool {
    let sorted = |g: &GraphIndex, v: u32| {
        let mut r = g.neighbors(v).to_vec();
        r.sort_unstable();
        r
    };
    a.len() == b.len() && a.entry_point() == b.entry_point() && (0..a.len() as u32).all(|v| sorted(a, v) == sorted(b, v))
}

fn c5_gap_encoding(ctx: &Ctx) -> Result<Check> {
    let mut graphs: Vec<(String, GraphIndex)> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 5);
    for (i, n) in [50usize, 700, 3000].into_iter().enumerate() {
        let ds = random_dataset(&mut rng, n, 8, Metric::Euclidean);
        graphs.push((format!("random{n}"), build_graph(&ds, &BuildParams { r: 8 + 4 * i, l_build: 24, alpha: 1.2, seed: i as u64 })?));
    }
    graphs.push(("sift100k".into(), ctx.sift()?.graph.clone()));
    let t = Instant::now();
    let big = clustered(1_000_000, 8, SEED, SEED ^ 1);
    let g1m = build_graph(&big, &BuildParams { r: 16, l_build: 24, alpha: 1.2, seed: SEED })?;
    eprintln!("[acceptance] 1M graph built in {:.0} s", t.elapsed().as_secs_f64());
    drop(big);
    graphs.push(("clustered1m".into(), g1m));
    let mut exact = true;
    for (_, g) in &graphs {
        exact &= same_neighbor_sets(&gap_encode(g).decode()?, g);
    }
    let g = &graphs.last().unwrap().1;
    let enc = gap_encode(g);
    let plain = g.len() as f64 * g.max_degree() as f64 * 32.0;
    let saving = 1.0 - enc.total_bits() as f64 / plain;
    let b = enc.bit_width();
    check(
        exact && saving >= 0.15 && (20..=26).contains(&b),
        format!(
            "round trip exact on {} graphs: {exact}; 1M graph (R={}) {b}-bit gaps, {:.1}% smaller than 32-bit ids",
            graphs.len(),
            g.max_degree(),
            saving * 100.0
        ),
    )
}

fn c6_traffic(ctx: &Ctx) -> Result<Check> {
    let f = ctx.sift()?;
    let exact_ls: Vec<usize> = (10..=200).step_by(5).collect();
    let pts = traffic_points(&f.p, &f.inputs(), &[20, 50, 100], &exact_ls)?;
    let ratios = iso_recall_ratios(&pts, 0.002);
    let ok = ratios.len() == 3 && ratios.iter().all(|r| r.2 >= 1.5);
    let detail = ratios
        .iter()
        .map(|(a, b, r)| format!("L={} recall {:.4}: {:.0} B vs exact L={} {:.0} B ({r:.2}x)", a.l, a.recall, a.traffic.total(), b.l, b.traffic.total()))
        .collect::<Vec<_>>()
        .join("; ");
    check(ok, detail)
}

fn c7_queue_scaling(ctx: &Ctx) -> Result<Check> {
    let f = ctx.sift()?;
    let m = ctx.mapped()?;
    let plan = plan_layout(m.plan.n, 0, m.plan.geometry, m.layout_params())?;
    let r = queue_sweep(&m.traces, &plan, &f.p.cfg.sim, Metric::Euclidean, &[32, 256])?;
    let qps = r[1].qps / r[0].qps;
    let util = r[1].utilization_pct / r[0].utilization_pct;
    check(
        qps >= 3.0 && util >= 3.0,
        format!(
            "QPS {:.0} -> {:.0} ({qps:.2}x), core utilization {:.1}% -> {:.1}% ({util:.2}x)",
            r[0].qps, r[1].qps, r[0].utilization_pct, r[1].utilization_pct
        ),
    )
}

fn c8_hot_nodes(ctx: &Ctx) -> Result<Check> {
    let f = ctx.sift()?;
    let m = ctx.mapped()?;
    let pts = hot_node_sweep(&m.traces, m.plan.n, &m.layout_params(), &f.p.cfg.sim, Metric::Euclidean, &[0.0, 0.03, 0.07])?;
    let lat: Vec<f64> = pts.iter().map(|p| p.report.mean_latency_ns).collect();
    let speedup = lat[0] / lat[1];
    let marginal = (lat[1] - lat[2]) / lat[1];
    check(
        speedup >= 2.0 && marginal < 0.10,
        format!(
            "mean latency {:.1} / {:.1} / {:.1} us at 0/3/7% hot: {speedup:.2}x at 3%, further {:.1}% at 7%",
            lat[0] / 1e3,
            lat[1] / 1e3,
            lat[2] / 1e3,
            marginal * 100.0
        ),
    )
}

fn c9_bit_errors(ctx: &Ctx) -> Result<Check> {
    let f = ctx.sift()?;
    let mut p = Pipeline::new(f.p.cfg.clone(), &f.p.out)?;
    p.cfg.sweep.error_rates = vec![1e-5, 1e-4];
    let pts = bit_error_points(&p, &f.inputs(), p.cfg.mapping.l)?;
    let ok = pts[0].drop < 0.01 && pts[1].drop < 0.03;
    let detail = pts
        .iter()
        .map(|x| {
            format!(
                "RBER {:e}: recall {:.4} (drop {:.2}%, flips pq/index/raw {}/{}/{})",
                x.rber,
                x.recall,
                x.drop * 100.0,
                x.flips.pq,
                x.flips.index,
                x.flips.raw
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    check(ok, detail)
}

fn c10_bloom_filter(ctx: &Ctx) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 10);
    let mut ids: Vec<u32> = (0..u32::MAX / 2).step_by(997).collect();
    for i in (1..ids.len()).rev() {
        ids.swap(i, rng.random_range(0..=i));
    }
    let (inserted, probes) = ids.split_at(8000);
    let probes = &probes[..1_000_000];
    let mut bloom = VisitedFilter::new(VisitedKind::default());
    inserted.iter().for_each(|&v| bloom.insert(v));
    let fp = probes.iter().filter(|&&v| bloom.contains(v)).count() as f64 / probes.len() as f64;
    let f = ctx.sift()?;
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for &l in &f.p.cfg.search.l {
        let b = f.run(&f.params(l))?.recall;
        let e = f.run(&SearchParams {
            visited: VisitedKind::Exact,
            ..f.params(l)
        })?
        .recall;
        worst = worst.max((b - e).abs());
        parts.push(format!("L={l} {b:.4}/{e:.4}"));
    }
    check(
        fp < 0.001 && worst < 0.005,
        format!(
            "12 kB, 8 hashes, 8000 inserts: false-positive rate {:.3}% over {} probes; recall bloom/exact {}",
            fp * 100.0,
            probes.len(),
            parts.join(", ")
        ),
    )
}

const SMALL: &str = r#"
seed = 7

[dataset]
source = "synthetic"
kind = "sift"
n_base = 5000
n_queries = 100

[pq]
iters = 10

[graph]
r = 24
l_build = 48

[mapping]
trace_samples = 200
"#;

fn run_small(dir: &Path) -> Result<()> {
    let cfg = ExperimentConfig::from_toml_str(SMALL)?;
    let mut p = Pipeline::new(cfg, dir)?;
    execute(Command::Run, &mut p)?;
    Ok(())
}

/// Columns that depend on wall-clock time.
const TIMING_COLUMNS: [&str; 1] = ["wall_qps"];

fn c11_determinism(ctx: &Ctx) -> Result<Check> {
    let a = ctx.root.join("det_a");
    let b = ctx.root.join("det_b");
    for d in [&a, &b] {
        let _ = std::fs::remove_dir_all(d);
        run_small(d)?;
    }
    let mut names: Vec<String> = std::fs::read_dir(&a)
        .map_err(|e| nsann_core::Error::Io { path: a.clone(), source: e })?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let mut diffs = Vec::new();
    for n in &names {
        if n.ends_with(".csv") {
            let (ha, ra) = read_csv(&a.join(n))?;
            let (hb, rb) = read_csv(&b.join(n))?;
            let keep: Vec<usize> = (0..ha.len()).filter(|&i| !TIMING_COLUMNS.contains(&ha[i].as_str())).collect();
            let strip = |rows: &[Vec<String>]| -> Vec<Vec<String>> { rows.iter().map(|r| keep.iter().map(|&i| r[i].clone()).collect()).collect() };
            if ha != hb || strip(&ra) != strip(&rb) {
                diffs.push(n.clone());
            }
        } else if std::fs::read(a.join(n)).ok() != std::fs::read(b.join(n)).ok() {
            diffs.push(n.clone());
        }
    }
    check(
        diffs.is_empty() && !names.is_empty(),
        if diffs.is_empty() {
            format!("{} artifacts identical across two runs", names.len())
        } else {
            format!("differing artifacts: {}", diffs.join(", "))
        },
    )
}

type Criterion = (&'static str, &'static str, fn(&Ctx) -> Result<Check>);

const CRITERIA: [Criterion; 11] = [
    ("C1", "exhaustive search matches brute force", c1_exhaustive_search_is_exact),
    ("C2", "PQ error ratio calibration", c2_beta_calibration),
    ("C3", "threshold rerank gain", c3_beta_rerank_gain),
    ("C4", "early termination at iso-recall", c4_early_termination),
    ("C5", "gap-encoded adjacency", c5_gap_encoding),
    ("C6", "memory traffic vs exact search", c6_traffic),
    ("C7", "queue scaling", c7_queue_scaling),
    ("C8", "hot-node repetition", c8_hot_nodes),
    ("C9", "bit-error tolerance", c9_bit_errors),
    ("C10", "Bloom visited filter", c10_bloom_filter),
    ("C11", "determinism", c11_determinism),
];

fn main() {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&root).expect("fixture directory");
    let only: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with('C')).collect();
    let ctx = Ctx {
        root,
        sift: OnceCell::new(),
        glove: OnceCell::new(),
        mapped: OnceCell::new(),
    };
    let mut passed = 0;
    let mut ran = 0;
    for (id, name, f) in CRITERIA {
        if !only.is_empty() && !only.iter().any(|o| o == id) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let (pass, detail) = match f(&ctx) {
            Ok(c) => (c.pass, c.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        passed += pass as usize;
        println!(
            "[{}] {id} {name}: {detail} ({:.1} s)",
            if pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {passed}/{ran} criteria met");
}
