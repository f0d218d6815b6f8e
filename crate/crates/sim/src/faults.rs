//! Raw bit errors on stored payloads.
//!
//! Flip positions are drawn by geometric skipping, so the cost is
//! proportional to the number of flips rather than the number of bits.

use nsann_core::graph::{GapEncodedGraph, GraphIndex};
use nsann_core::pq::PqCodes;
use nsann_core::{Error, Result, VectorDataset};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorModel {
    pub rber: f64,
    pub seed: u64,
    pub pq: bool,
    pub index: bool,
    pub raw: bool,
}

impl ErrorModel {
    pub fn all(rber: f64, seed: u64) -> Self {
        Self {
            rber,
            seed,
            pq: true,
            index: true,
            raw: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rber) {
            return Err(Error::InvalidParam(format!("rber {} outside [0, 1]", self.rber)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipCounts {
    pub pq: u64,
    pub index: u64,
    pub raw: u64,
}

pub struct Corrupted {
    pub codes: PqCodes,
    pub graph: GraphIndex,
    pub data: VectorDataset,
    pub flips: FlipCounts,
}

/// Calls `flip(i)` for each of `len` bits that fails with probability `p`.
fn for_each_flip(len: u64, p: f64, rng: &mut ChaCha8Rng, mut flip: impl FnMut(u64)) -> u64 {
    if p <= 0.0 || len == 0 {
        return 0;
    }
    if p >= 1.0 {
        (0..len).for_each(&mut flip);
        return len;
    }
    let geo = Geometric::new(p).expect("p in (0, 1)");
    let mut pos = 0u64;
    let mut n = 0;
    loop {
        pos = match pos.checked_add(geo.sample(rng)) {
            Some(x) if x < len => x,
            _ => break,
        };
        flip(pos);
        n += 1;
        pos += 1;
    }
    n
}

/// Returns corrupted copies of the stored codes, gap-encoded graph and raw
/// vectors. Each scope uses its own random stream, so enabling one scope
/// does not move the flips of another.
pub fn inject_errors(model: &ErrorModel, codes: &PqCodes, graph: &GapEncodedGraph, data: &VectorDataset) -> Result<Corrupted> {
    model.validate()?;
    let stream = |k: u64| ChaCha8Rng::seed_from_u64(model.seed ^ k.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut flips = FlipCounts::default();

    let mut c = codes.clone();
    if model.pq {
        let bytes = c.as_bytes_mut();
        flips.pq = for_each_flip(bytes.len() as u64 * 8, model.rber, &mut stream(1), |i| {
            bytes[(i / 8) as usize] ^= 1 << (i % 8);
        });
    }

    let mut g = graph.clone();
    if model.index {
        let bits = g.total_bits();
        let words = g.words_mut();
        flips.index = for_each_flip(bits, model.rber, &mut stream(2), |i| {
            words[(i / 64) as usize] ^= 1 << (i % 64);
        });
    }

    let mut raw = data.as_slice().to_vec();
    if model.raw {
        flips.raw = for_each_flip(raw.len() as u64 * 32, model.rber, &mut stream(3), |i| {
            let x = &mut raw[(i / 32) as usize];
            *x = f32::from_bits(x.to_bits() ^ (1 << (i % 32)));
        });
    }

    Ok(Corrupted {
        codes: c,
        graph: g.decode_lossy(),
        data: VectorDataset::new_unchecked(data.dim(), raw, data.metric())?,
        flips,
    })
}
