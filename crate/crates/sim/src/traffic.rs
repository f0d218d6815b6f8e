use nsann_core::mapping::LayoutParams;
use nsann_core::trace::{Event, QueryTrace};
use serde::{Deserialize, Serialize};

/// Bytes moved out of the arrays, by payload type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Traffic {
    pub index_bytes: f64,
    pub pq_bytes: f64,
    pub raw_bytes: f64,
}

impl Traffic {
    pub fn total(&self) -> f64 {
        self.index_bytes + self.pq_bytes + self.raw_bytes
    }
}

/// Payload bits per fetch kind: an index fetch moves `R * b_index` bits,
/// a PQ fetch one code, a raw fetch `b_raw * D`, and a hot fetch a neighbor
/// list plus `R + 1` codes.
pub fn traffic_breakdown(traces: &[QueryTrace], p: &LayoutParams) -> Traffic {
    let index = p.r as u64 * p.b_index as u64;
    let raw = p.b_raw * p.dim as u64;
    let (mut ib, mut pb, mut rb) = (0u64, 0u64, 0u64);
    for e in traces.iter().flatten() {
        match e {
            Event::FetchIndex(_) => ib += index,
            Event::FetchPq(_) => pb += p.b_pq,
            Event::FetchRaw(_) => rb += raw,
            Event::FetchHot(_) => {
                ib += index;
                pb += (p.r as u64 + 1) * p.b_pq;
            }
            _ => {}
        }
    }
    Traffic {
        index_bytes: ib as f64 / 8.0,
        pq_bytes: pb as f64 / 8.0,
        raw_bytes: rb as f64 / 8.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(b_index: u32) -> LayoutParams {
        LayoutParams {
            r: 64,
            b_index,
            b_pq: 256,
            b_raw: 32,
            dim: 128,
            raw_cores: None,
        }
    }

    #[test]
    fn single_pq_fetch_is_one_code() {
        let t = traffic_breakdown(&[vec![Event::FetchPq(3), Event::PqCompute(1)]], &params(24));
        assert_eq!(t, Traffic { index_bytes: 0.0, pq_bytes: 32.0, raw_bytes: 0.0 });
    }

    #[test]
    fn gap_width_scales_index_bytes() {
        let tr = vec![vec![Event::FetchIndex(0), Event::FetchIndex(9)]];
        let a = traffic_breakdown(&tr, &params(24)).index_bytes;
        let b = traffic_breakdown(&tr, &params(32)).index_bytes;
        assert_eq!(a, 2.0 * 64.0 * 24.0 / 8.0);
        assert!((1.0 - a / b - 0.25).abs() < 1e-12);
    }

    #[test]
    fn raw_and_hot_sizes() {
        let t = traffic_breakdown(&[vec![Event::FetchRaw(1), Event::FetchHot(0)]], &params(20));
        assert_eq!(t.raw_bytes, 512.0);
        assert_eq!(t.index_bytes, 64.0 * 20.0 / 8.0);
        assert_eq!(t.pq_bytes, 65.0 * 32.0);
    }
}
