use std::path::Path;

use nsann_core::dataset::recall_at_k;
use nsann_core::{Error, Result};
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::output::{write_csv, write_json};
use crate::pipeline::{Pipeline, QueryRecord};
use crate::sweeps::{self, Inputs, SweepKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Gen,
    Build,
    Encode,
    Search,
    Map,
    Simulate,
    Eval,
    Run,
    Sweep(SweepKind),
}

/// Resolves the experiment config: the file if given, with `seed`
/// overriding its seed; otherwise defaults, which need an explicit seed.
pub fn resolve_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    match (path, seed) {
        (Some(p), s) => {
            let mut c = ExperimentConfig::load(p)?;
            if let Some(s) = s {
                c.seed = s;
            }
            Ok(c)
        }
        (None, Some(s)) => Ok(ExperimentConfig::with_seed(s)),
        (None, None) => Err(Error::InvalidParam("a seed is required: pass --seed or a config with `seed`".into())),
    }
}

/// Runs one command; returns a JSON summary for stdout.
pub fn execute(cmd: Command, p: &mut Pipeline) -> Result<Value> {
    let d = p.data()?;
    if cmd == Command::Gen {
        p.write_data(&d)?;
        return Ok(json!({"base": d.base.len(), "queries": d.queries.len(), "dim": d.base.dim()}));
    }
    if cmd == Command::Build {
        let g = p.graph(&d)?;
        return Ok(serde_json::to_value(p.graph_stats(&g)).expect("stats"));
    }
    let (model, codes) = p.pq(&d)?;
    if cmd == Command::Encode {
        let cal = p.calibration(&d, &model, &codes)?;
        return Ok(serde_json::to_value(cal).expect("calibration"));
    }
    let beta = p.beta(&d, &model, &codes)?;
    let g = p.graph(&d)?;
    let gt = p.ground_truth(&d)?;
    let run_map_sim = |p: &mut Pipeline| -> Result<Value> {
        let m = p.map(&d, &g, &model, &codes, beta, &gt)?;
        let r = p.simulate(&m)?;
        Ok(json!({"mapping": m.summary, "simulation": r}))
    };
    match cmd {
        Command::Search => Ok(serde_json::to_value(p.search(&d, &gt, &g, &model, &codes, beta)?).expect("summary")),
        Command::Map => {
            let m = p.map(&d, &g, &model, &codes, beta, &gt)?;
            Ok(serde_json::to_value(m.summary).expect("summary"))
        }
        Command::Simulate => run_map_sim(p),
        Command::Eval => eval(p, &gt),
        Command::Run => {
            p.write_data(&d)?;
            let search = p.search(&d, &gt, &g, &model, &codes, beta)?;
            let rest = run_map_sim(p)?;
            let ev = eval(p, &gt)?;
            Ok(json!({"search": search, "eval": ev, "map_sim": rest}))
        }
        Command::Sweep(kind) => {
            let x = Inputs {
                data: &d,
                gt: &gt,
                graph: &g,
                model: &model,
                codes: &codes,
                beta,
            };
            let table = match kind {
                SweepKind::RecallQps => sweeps::recall_qps(p, &x)?,
                SweepKind::BitError => sweeps::bit_error(p, &x)?,
                SweepKind::Traffic => sweeps::traffic(p, &x)?,
                SweepKind::QueueSize | SweepKind::HotNodes => {
                    let m = p.map(&d, &g, &model, &codes, beta, &gt)?;
                    if kind == SweepKind::QueueSize {
                        sweeps::queue_size(p, &m)?
                    } else {
                        sweeps::hot_nodes(p, &m)?
                    }
                }
            };
            let file = format!("sweep_{}.csv", kind.name());
            write_csv(&p.out.join(&file), &table.header_refs(), &table.rows)?;
            Ok(json!({"csv": file, "rows": table.rows.len()}))
        }
        Command::Gen | Command::Build | Command::Encode => unreachable!("handled above"),
    }
}

/// Recomputes recall per list size from `results.jsonl`.
fn eval(p: &Pipeline, gt: &nsann_core::GroundTruth) -> Result<Value> {
    let path = p.out.join("results.jsonl");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
    let mut by_l: std::collections::BTreeMap<usize, Vec<QueryRecord>> = Default::default();
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).map_err(|e| Error::Malformed(format!("results.jsonl: {e}")))?;
        if v.get("aggregate").is_some() {
            continue;
        }
        let r: QueryRecord = serde_json::from_value(v).map_err(|e| Error::Malformed(format!("results.jsonl: {e}")))?;
        by_l.entry(r.l).or_default().push(r);
    }
    let k = p.cfg.search.k;
    let mut out = Vec::new();
    for (l, mut rs) in by_l {
        rs.sort_by_key(|r| r.query);
        let ids: Vec<Vec<u32>> = rs.into_iter().map(|r| r.ids).collect();
        out.push(json!({"l": l, "k": k, "recall": recall_at_k(&ids, gt, k)?}));
    }
    let v = Value::Array(out);
    write_json(&p.out.join("eval.json"), &v)?;
    Ok(v)
}
