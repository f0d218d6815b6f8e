use nsann_core::mapping::{apply_hot_nodes, plan_layout, select_hot_nodes, LayoutParams, LayoutPlan};
use nsann_core::trace::QueryTrace;
use nsann_core::{Metric, Result};
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::engine::{simulate, SimReport};

/// Replays the same traces with each queue count.
pub fn queue_sweep(traces: &[QueryTrace], plan: &LayoutPlan, cfg: &SimConfig, metric: Metric, n_qs: &[usize]) -> Result<Vec<SimReport>> {
    n_qs.iter()
        .map(|&n_q| simulate(traces, plan, &SimConfig { n_q, ..cfg.clone() }, metric))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HotPoint {
    pub fraction: f64,
    pub hot_count: usize,
    pub report: SimReport,
}

/// Re-plans the layout and replays the traces for each hot-node fraction.
/// `traces` must use reordered ids, hottest first. The raw/index core split
/// is fixed from the plan without hot nodes so that only the hot region
/// changes between points.
pub fn hot_node_sweep(
    traces: &[QueryTrace],
    n: usize,
    params: &LayoutParams,
    cfg: &SimConfig,
    metric: Metric,
    fractions: &[f64],
) -> Result<Vec<HotPoint>> {
    let base = plan_layout(n, 0, cfg.geometry(), params.clone())?;
    let fixed = LayoutParams {
        raw_cores: Some(base.raw_cores()),
        ..params.clone()
    };
    fractions
        .iter()
        .map(|&f| {
            let hot_count = select_hot_nodes(n, f)?;
            let plan = plan_layout(n, hot_count, cfg.geometry(), fixed.clone())?;
            let report = simulate(&apply_hot_nodes(traces, hot_count), &plan, cfg, metric)?;
            Ok(HotPoint {
                fraction: f,
                hot_count,
                report,
            })
        })
        .collect()
}
