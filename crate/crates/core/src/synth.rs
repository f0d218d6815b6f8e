//! Deterministic synthetic stand-ins for benchmark corpora.
//!
//! * [`sift_like`]: 128-D gradient-orientation histograms (4x4 cells x 8
//!   orientations) rendered from random patch prototypes, normalized,
//!   clipped at 0.2, renormalized and quantized to integers in 0..=255.
//! * [`glove_like`]: 100-D unit vectors drawn around subtopics of topic
//!   centers with anisotropic noise, for the angular metric.
//! * [`clustered`]: low-dimensional Gaussian clusters for large graphs.
//!
//! A `world` seed fixes the shared structure (prototypes, topics); a
//! `stream` seed draws the individual vectors, so base and query sets come
//! from the same distribution without overlapping.

use std::f32::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Metric, VectorDataset};
use crate::distance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Sift,
    Glove,
    Clustered { dim: usize },
}

impl SynthKind {
    pub fn metric(self) -> Metric {
        match self {
            SynthKind::Glove => Metric::Angular,
            _ => Metric::Euclidean,
        }
    }
}

pub fn generate(kind: SynthKind, n: usize, world: u64, stream: u64) -> VectorDataset {
    match kind {
        SynthKind::Sift => sift_like(n, world, stream),
        SynthKind::Glove => glove_like(n, world, stream),
        SynthKind::Clustered { dim } => clustered(n, dim, world, stream),
    }
}

const SIFT_PROTOTYPES: usize = 2000;

struct Primitive {
    x: f32,
    y: f32,
    theta: f32,
    strength: f32,
    spread: f32,
    kappa: f32,
}

fn sift_prototypes(world: u64) -> Vec<Vec<Primitive>> {
    let mut rng = ChaCha8Rng::seed_from_u64(world ^ 0x51F7_0000);
    let ln = Normal::new(0.0f32, 0.5).unwrap();
    (0..SIFT_PROTOTYPES)
        .map(|_| {
            let k = rng.random_range(3..=8);
            (0..k)
                .map(|_| Primitive {
                    x: rng.random_range(0.0..4.0),
                    y: rng.random_range(0.0..4.0),
                    theta: rng.random_range(0.0..TAU),
                    strength: ln.sample(&mut rng).exp(),
                    spread: rng.random_range(0.5..1.5),
                    kappa: rng.random_range(2.0..8.0),
                })
                .collect()
        })
        .collect()
}

/// Renders one descriptor from jittered primitives into `out` (length 128).
fn render_sift(prims: &[Primitive], rng: &mut ChaCha8Rng, out: &mut [f32]) {
    let pos = Normal::new(0.0f32, 0.3).unwrap();
    let ang = Normal::new(0.0f32, 0.25).unwrap();
    let amp = Normal::new(0.0f32, 0.3).unwrap();
    let noise = Normal::new(0.0f32, 0.03).unwrap();
    out.fill(0.0);
    for p in prims {
        let x = p.x + pos.sample(rng);
        let y = p.y + pos.sample(rng);
        let th = p.theta + ang.sample(rng);
        let s = p.strength * amp.sample(rng).exp();
        let inv = 1.0 / (2.0 * p.spread * p.spread);
        for cy in 0..4 {
            for cx in 0..4 {
                let dx = cx as f32 + 0.5 - x;
                let dy = cy as f32 + 0.5 - y;
                let w = s * (-(dx * dx + dy * dy) * inv).exp();
                let cell = (cy * 4 + cx) * 8;
                for b in 0..8 {
                    let c = (th - TAU * b as f32 / 8.0).cos();
                    out[cell + b] += w * (p.kappa * (c - 1.0)).exp();
                }
            }
        }
    }
    for v in out.iter_mut() {
        *v = (*v + noise.sample(rng).abs()).max(0.0);
    }
    let n = distance::norm(out);
    if n > 0.0 {
        out.iter_mut().for_each(|v| *v = (*v / n).min(0.2));
    }
    let n = distance::norm(out);
    if n > 0.0 {
        out.iter_mut().for_each(|v| *v = (*v / n * 512.0).floor().min(255.0));
    }
}

pub fn sift_like(n: usize, world: u64, stream: u64) -> VectorDataset {
    let protos = sift_prototypes(world);
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let mut data = vec![0f32; n * 128];
    for row in data.chunks_exact_mut(128) {
        let p = rng.random_range(0..protos.len());
        render_sift(&protos[p], &mut rng, row);
    }
    VectorDataset::new(128, data, Metric::Euclidean).expect("finite by construction")
}

const GLOVE_DIM: usize = 100;
const GLOVE_TOPICS: usize = 500;
const GLOVE_SUBTOPICS: usize = 20;

pub fn glove_like(n: usize, world: u64, stream: u64) -> VectorDataset {
    let mut wrng = ChaCha8Rng::seed_from_u64(world ^ 0x610F_0000);
    let unit = Normal::new(0.0f32, 1.0).unwrap();
    // noise scale decays like a word-embedding spectrum
    let scale: Vec<f32> = (0..GLOVE_DIM).map(|i| 1.0 / (1.0 + i as f32 / 20.0).sqrt()).collect();
    let mut subtopics = Vec::with_capacity(GLOVE_TOPICS * GLOVE_SUBTOPICS * GLOVE_DIM);
    for _ in 0..GLOVE_TOPICS {
        let c = distance::normalized(&(0..GLOVE_DIM).map(|_| unit.sample(&mut wrng)).collect::<Vec<_>>());
        for _ in 0..GLOVE_SUBTOPICS {
            subtopics.extend((0..GLOVE_DIM).map(|i| c[i] + 0.08 * scale[i] * unit.sample(&mut wrng)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let mut data = Vec::with_capacity(n * GLOVE_DIM);
    for _ in 0..n {
        let s = rng.random_range(0..GLOVE_TOPICS * GLOVE_SUBTOPICS) * GLOVE_DIM;
        let v: Vec<f32> = (0..GLOVE_DIM)
            .map(|i| subtopics[s + i] + 0.135 * scale[i] * unit.sample(&mut rng))
            .collect();
        data.extend(distance::normalized(&v));
    }
    VectorDataset::new(GLOVE_DIM, data, Metric::Angular).expect("finite by construction")
}

pub fn clustered(n: usize, dim: usize, world: u64, stream: u64) -> VectorDataset {
    let clusters = (n / 100).clamp(1, 10_000);
    let mut wrng = ChaCha8Rng::seed_from_u64(world ^ 0xC105_0000);
    let centers: Vec<f32> = (0..clusters * dim).map(|_| wrng.random_range(-10.0..10.0)).collect();
    let noise = Normal::new(0.0f32, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let c = rng.random_range(0..clusters);
        for j in 0..dim {
            data.push(centers[c * dim + j] + noise.sample(&mut rng));
        }
    }
    VectorDataset::new(dim, data, Metric::Euclidean).expect("finite by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sift_like_values_are_bytes() {
        let ds = sift_like(200, 1, 2);
        assert_eq!(ds.dim(), 128);
        assert!(ds.as_slice().iter().all(|&v| (0.0..=255.0).contains(&v) && v.fract() == 0.0));
        assert!(ds.rows().all(|r| r.iter().any(|&v| v > 0.0)));
    }

    #[test]
    fn glove_like_is_unit_norm() {
        let ds = glove_like(100, 1, 2);
        assert_eq!(ds.metric(), Metric::Angular);
        assert!(ds.rows().all(|r| (distance::norm(r) - 1.0).abs() < 1e-4));
    }

    #[test]
    fn generation_is_seeded() {
        assert_eq!(sift_like(50, 3, 4), sift_like(50, 3, 4));
        assert_ne!(sift_like(50, 3, 4), sift_like(50, 3, 5));
        assert_eq!(clustered(500, 4, 1, 1), clustered(500, 4, 1, 1));
    }
}
