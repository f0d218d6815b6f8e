//! Product quantization: per-subspace k-means codebooks, byte codes and
//! asymmetric distance tables.
//!
//! For euclidean data the codebooks quantize raw subvectors and a table
//! entry is the squared L2 distance between the query subvector and the
//! centroid. Angular data is normalized before training and encoding; its
//! table entry is `1/M - <q_i, c>` for the normalized query, so the `M`
//! entries sum to `1 - cos`. Inner product entries are `-<q_i, c>`.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Metric, VectorDataset};
use crate::distance::{self, sanitize};
use crate::error::{Error, Result};

const MODEL_MAGIC: &[u8; 4] = b"NSPQ";
const CODES_MAGIC: &[u8; 4] = b"NSPC";
const VERSION: u32 = 1;

/// Row stride of an [`Adt`]. Entries at `c >= C` hold +inf so that a
/// corrupted code byte ranks last instead of reading another subspace.
pub const ADT_STRIDE: usize = 256;

/// Training sample cap.
pub const MAX_TRAIN: usize = 100_000;

/// Splits `dim` into `m` near-equal widths; the first `dim % m` get one extra.
pub fn split_dims(dim: usize, m: usize) -> Result<Vec<usize>> {
    if m == 0 || m > dim {
        return Err(Error::InvalidParam(format!(
            "cannot split {dim} dimensions into {m} subspaces"
        )));
    }
    let base = dim / m;
    let extra = dim % m;
    Ok((0..m).map(|i| base + usize::from(i < extra)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PqModel {
    c: usize,
    dim: usize,
    sub_dims: Vec<usize>,
    offsets: Vec<usize>,
    /// Per subspace, `C x sub_dim` row-major.
    codebooks: Vec<Vec<f32>>,
    metric: Metric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub m: usize,
    pub c: usize,
    pub iters: usize,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            m: 32,
            c: 256,
            iters: 25,
            seed: 0,
        }
    }
}

/// Mean quantization error (sum over subspaces of the mean squared
/// subvector error) after each assignment step.
pub type TrainHistory = Vec<f64>;

pub fn train_pq(ds: &VectorDataset, params: &TrainParams) -> Result<PqModel> {
    train_pq_with_history(ds, params).map(|(m, _)| m)
}

pub fn train_pq_with_history(ds: &VectorDataset, params: &TrainParams) -> Result<(PqModel, TrainHistory)> {
    let TrainParams { m, c, iters, seed } = *params;
    if c == 0 || c > 256 {
        return Err(Error::InvalidParam(format!("C = {c} must be in 1..=256")));
    }
    if ds.len() < c {
        return Err(Error::KTooLarge {
            k: c,
            limit: ds.len(),
            what: "number of training vectors",
        });
    }
    if let Some(pos) = ds.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            row: pos / ds.dim(),
            col: pos % ds.dim(),
        });
    }
    let sub_dims = split_dims(ds.dim(), m)?;
    let offsets = offsets_of(&sub_dims);
    let metric = ds.metric();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample: Vec<usize> = if ds.len() > MAX_TRAIN {
        rand::seq::index::sample(&mut rng, ds.len(), MAX_TRAIN).into_vec()
    } else {
        (0..ds.len()).collect()
    };
    let n = sample.len();

    // Per-subspace contiguous training matrices.
    let subsets: Vec<Vec<f32>> = (0..m)
        .map(|s| {
            let (o, w) = (offsets[s], sub_dims[s]);
            let mut buf = Vec::with_capacity(n * w);
            for &i in &sample {
                let row = prepared(ds.row(i), metric);
                buf.extend_from_slice(&row[o..o + w]);
            }
            buf
        })
        .collect();

    let results: Vec<(Vec<f32>, Vec<f64>)> = subsets
        .par_iter()
        .enumerate()
        .map(|(s, data)| {
            let sub_seed = seed ^ (s as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            kmeans(data, sub_dims[s], c, iters, sub_seed)
        })
        .collect();

    let mut history = vec![0.0; iters];
    let mut codebooks = Vec::with_capacity(m);
    for (cb, h) in results {
        for (acc, v) in history.iter_mut().zip(h) {
            *acc += v;
        }
        codebooks.push(cb);
    }
    Ok((
        PqModel {
            c,
            dim: ds.dim(),
            sub_dims,
            offsets,
            codebooks,
            metric,
        },
        history,
    ))
}

fn offsets_of(sub_dims: &[usize]) -> Vec<usize> {
    sub_dims
        .iter()
        .scan(0, |acc, &w| {
            let o = *acc;
            *acc += w;
            Some(o)
        })
        .collect()
}

/// Vector in the space the codebooks live in.
fn prepared(x: &[f32], metric: Metric) -> std::borrow::Cow<'_, [f32]> {
    match metric {
        Metric::Angular => std::borrow::Cow::Owned(distance::normalized(x)),
        _ => std::borrow::Cow::Borrowed(x),
    }
}

/// Nearest centroid of `x` in a transposed codebook (`w x c`), ties to the
/// smaller index. `scratch` has length `c`.
#[inline]
fn nearest(x: &[f32], cbt: &[f32], c: usize, scratch: &mut [f32]) -> (usize, f32) {
    scratch.fill(0.0);
    for (j, &xj) in x.iter().enumerate() {
        let col = &cbt[j * c..(j + 1) * c];
        for (acc, &v) in scratch.iter_mut().zip(col) {
            let d = xj - v;
            *acc += d * d;
        }
    }
    let mut best = 0;
    let mut best_d = scratch[0];
    for (i, &d) in scratch.iter().enumerate().skip(1) {
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    (best, best_d)
}

fn transpose(cb: &[f32], w: usize, c: usize) -> Vec<f32> {
    let mut t = vec![0.0; w * c];
    for k in 0..c {
        for j in 0..w {
            t[j * c + k] = cb[k * w + j];
        }
    }
    t
}

/// Lloyd's k-means with k-means++ seeding on an `n x w` matrix.
fn kmeans(data: &[f32], w: usize, c: usize, iters: usize, seed: u64) -> (Vec<f32>, Vec<f64>) {
    let n = data.len() / w;
    let row = |i: usize| &data[i * w..(i + 1) * w];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++
    let mut cb = Vec::with_capacity(c * w);
    let first = rng.random_range(0..n);
    cb.extend_from_slice(row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| distance::l2_sq(row(i), row(first)) as f64).collect();
    for _ in 1..c {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            if d2[chosen] == 0.0 {
                // rounding pushed us past the end; take the last positive weight
                chosen = d2.iter().rposition(|&d| d > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let p = row(pick).to_vec();
        cb.extend_from_slice(&p);
        for (i, d) in d2.iter_mut().enumerate() {
            let nd = distance::l2_sq(row(i), &p) as f64;
            if nd < *d {
                *d = nd;
            }
        }
    }

    let mut history = Vec::with_capacity(iters);
    let mut assign = vec![0usize; n];
    let mut err = vec![0f32; n];
    let mut scratch = vec![0f32; c];
    for _ in 0..iters {
        let cbt = transpose(&cb, w, c);
        for i in 0..n {
            let (a, d) = nearest(row(i), &cbt, c, &mut scratch);
            assign[i] = a;
            err[i] = d;
        }
        history.push(err.iter().map(|&e| e as f64).sum::<f64>() / n as f64);

        let mut sums = vec![0f64; c * w];
        let mut counts = vec![0usize; c];
        for i in 0..n {
            let a = assign[i];
            counts[a] += 1;
            for (s, &v) in sums[a * w..(a + 1) * w].iter_mut().zip(row(i)) {
                *s += v as f64;
            }
        }
        for j in 0..c {
            if counts[j] > 0 {
                continue;
            }
            let largest = (0..c).max_by_key(|&k| (counts[k], std::cmp::Reverse(k))).unwrap();
            if counts[largest] <= 1 {
                break;
            }
            let far = (0..n)
                .filter(|&i| assign[i] == largest)
                .max_by(|&a, &b| err[a].total_cmp(&err[b]).then(b.cmp(&a)))
                .unwrap();
            assign[far] = j;
            err[far] = 0.0;
            counts[largest] -= 1;
            counts[j] = 1;
            for (t, &v) in row(far).iter().enumerate() {
                sums[largest * w + t] -= v as f64;
                sums[j * w + t] = v as f64;
            }
        }
        for j in 0..c {
            if counts[j] > 0 {
                for t in 0..w {
                    cb[j * w + t] = (sums[j * w + t] / counts[j] as f64) as f32;
                }
            }
        }
    }
    (cb, history)
}

impl PqModel {
    /// Builds a model from explicit codebooks (`C x sub_dim` per subspace).
    pub fn from_codebooks(codebooks: Vec<Vec<f32>>, sub_dims: Vec<usize>, c: usize, metric: Metric) -> Result<Self> {
        if c == 0 || c > 256 {
            return Err(Error::InvalidParam(format!("C = {c} must be in 1..=256")));
        }
        if codebooks.len() != sub_dims.len() || sub_dims.is_empty() {
            return Err(Error::InvalidParam("codebook count must equal M >= 1".into()));
        }
        for (s, (cb, &w)) in codebooks.iter().zip(&sub_dims).enumerate() {
            if w == 0 || cb.len() != c * w {
                return Err(Error::Malformed(format!(
                    "subspace {s}: codebook has {} values, expected {}",
                    cb.len(),
                    c * w
                )));
            }
            if cb.iter().any(|v| !v.is_finite()) {
                return Err(Error::Malformed(format!("subspace {s}: non-finite centroid")));
            }
        }
        let dim = sub_dims.iter().sum();
        Ok(Self {
            c,
            dim,
            offsets: offsets_of(&sub_dims),
            sub_dims,
            codebooks,
            metric,
        })
    }

    pub fn m(&self) -> usize {
        self.sub_dims.len()
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn sub_dims(&self) -> &[usize] {
        &self.sub_dims
    }

    pub fn centroid(&self, subspace: usize, index: usize) -> &[f32] {
        let w = self.sub_dims[subspace];
        &self.codebooks[subspace][index * w..(index + 1) * w]
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got,
            });
        }
        Ok(())
    }

    fn encode_one(&self, x: &[f32], out: &mut [u8], cbts: &[Vec<f32>], scratch: &mut [f32]) {
        let x = prepared(x, self.metric);
        for s in 0..self.m() {
            let (o, w) = (self.offsets[s], self.sub_dims[s]);
            out[s] = nearest(&x[o..o + w], &cbts[s], self.c, scratch).0 as u8;
        }
    }

    fn transposed(&self) -> Vec<Vec<f32>> {
        self.codebooks
            .iter()
            .zip(&self.sub_dims)
            .map(|(cb, &w)| transpose(cb, w, self.c))
            .collect()
    }

    pub fn encode(&self, ds: &VectorDataset) -> Result<PqCodes> {
        self.check_dim(ds.dim())?;
        let m = self.m();
        let cbts = self.transposed();
        let mut codes = vec![0u8; ds.len() * m];
        codes
            .par_chunks_mut(m)
            .enumerate()
            .for_each_init(
                || vec![0f32; self.c],
                |scratch, (i, out)| self.encode_one(ds.row(i), out, &cbts, scratch),
            );
        Ok(PqCodes { m, codes })
    }

    pub fn encode_vector(&self, x: &[f32]) -> Result<Vec<u8>> {
        self.check_dim(x.len())?;
        let mut out = vec![0u8; self.m()];
        self.encode_one(x, &mut out, &self.transposed(), &mut vec![0f32; self.c]);
        Ok(out)
    }

    /// Concatenation of the centroids selected by `code`.
    pub fn reconstruct(&self, code: &[u8]) -> Result<Vec<f32>> {
        self.check_code(code)?;
        let mut out = Vec::with_capacity(self.dim);
        for (s, &ci) in code.iter().enumerate() {
            out.extend_from_slice(self.centroid(s, ci as usize));
        }
        Ok(out)
    }

    fn check_code(&self, code: &[u8]) -> Result<()> {
        if code.len() != self.m() {
            return Err(Error::DimensionMismatch {
                expected: self.m(),
                got: code.len(),
            });
        }
        if let Some((s, &v)) = code.iter().enumerate().find(|(_, &v)| v as usize >= self.c) {
            return Err(Error::CodeOutOfRange {
                subspace: s,
                value: v as usize,
                centroids: self.c,
            });
        }
        Ok(())
    }

    pub fn build_adt(&self, q: &[f32]) -> Result<Adt> {
        self.check_dim(q.len())?;
        let q = prepared(q, self.metric);
        let m = self.m();
        let mut table = vec![f32::INFINITY; m * ADT_STRIDE];
        let inv_m = 1.0 / m as f32;
        for s in 0..m {
            let (o, w) = (self.offsets[s], self.sub_dims[s]);
            let qs = &q[o..o + w];
            let row = &mut table[s * ADT_STRIDE..s * ADT_STRIDE + self.c];
            for (ci, slot) in row.iter_mut().enumerate() {
                let cen = &self.codebooks[s][ci * w..(ci + 1) * w];
                *slot = match self.metric {
                    Metric::Euclidean => distance::l2_sq(qs, cen),
                    Metric::Angular => inv_m - distance::dot(qs, cen),
                    Metric::InnerProduct => -distance::dot(qs, cen),
                };
            }
        }
        Ok(Adt { m, c: self.c, table })
    }

    /// Serialized form: magic, version, M, C, D, metric, sub_dims, codebooks.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(self.m() as u32)?;
        w.write_u32::<LittleEndian>(self.c as u32)?;
        w.write_u32::<LittleEndian>(self.dim as u32)?;
        w.write_u8(self.metric.to_tag())?;
        for &sd in &self.sub_dims {
            w.write_u32::<LittleEndian>(sd as u32)?;
        }
        for cb in &self.codebooks {
            for &v in cb {
                w.write_f32::<LittleEndian>(v)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::Malformed("not a PQ model file".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let m = r.read_u32::<LittleEndian>()? as usize;
        let c = r.read_u32::<LittleEndian>()? as usize;
        let dim = r.read_u32::<LittleEndian>()? as usize;
        let metric = Metric::from_tag(r.read_u8()?)?;
        if m == 0 || m > dim || c == 0 || c > 256 {
            return Err(Error::Malformed(format!("bad header M={m} C={c} D={dim}")));
        }
        let sub_dims = (0..m)
            .map(|_| r.read_u32::<LittleEndian>().map(|v| v as usize))
            .collect::<std::io::Result<Vec<_>>>()?;
        if sub_dims.iter().sum::<usize>() != dim {
            return Err(Error::Malformed("subspace widths do not sum to D".into()));
        }
        let mut codebooks = Vec::with_capacity(m);
        for &w in &sub_dims {
            let mut cb = vec![0f32; c * w];
            r.read_f32_into::<LittleEndian>(&mut cb)?;
            codebooks.push(cb);
        }
        Self::from_codebooks(codebooks, sub_dims, c, metric)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(bytes.as_slice())
    }
}

/// `N x M` matrix of centroid indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PqCodes {
    m: usize,
    codes: Vec<u8>,
}

impl PqCodes {
    pub fn from_raw(m: usize, codes: Vec<u8>) -> Result<Self> {
        if m == 0 || codes.len() % m != 0 {
            return Err(Error::Malformed(format!(
                "{} code bytes do not form rows of {m}",
                codes.len()
            )));
        }
        Ok(Self { m, codes })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.codes.len() / self.m
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u8] {
        &self.codes[i * self.m..(i + 1) * self.m]
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.codes
    }

    pub fn as_bytes_mut(&mut self) -> &mut [u8] {
        &mut self.codes
    }

    /// Rows reordered so that new row `i` is old row `order[i]`.
    pub fn permuted(&self, order: &[u32]) -> Self {
        let mut codes = Vec::with_capacity(self.codes.len());
        for &o in order {
            codes.extend_from_slice(self.row(o as usize));
        }
        Self { m: self.m, codes }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CODES_MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u64::<LittleEndian>(self.len() as u64)?;
        w.write_u32::<LittleEndian>(self.m as u32)?;
        w.write_all(&self.codes)?;
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.codes.len() + 20);
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CODES_MAGIC {
            return Err(Error::Malformed("not a PQ codes file".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let n = r.read_u64::<LittleEndian>()? as usize;
        let m = r.read_u32::<LittleEndian>()? as usize;
        let mut codes = vec![0u8; n * m];
        r.read_exact(&mut codes)?;
        Self::from_raw(m, codes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(bytes.as_slice())
    }
}

/// Per-query asymmetric distance table, `M x C` (rows padded to
/// [`ADT_STRIDE`] with +inf).
#[derive(Debug, Clone, PartialEq)]
pub struct Adt {
    m: usize,
    c: usize,
    table: Vec<f32>,
}

impl Adt {
    /// Table from explicit rows (each of length `C`).
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let c = rows.first().map(Vec::len).unwrap_or(0);
        if c == 0 || c > ADT_STRIDE || rows.iter().any(|r| r.len() != c) {
            return Err(Error::InvalidParam("ADT rows must share a length in 1..=256".into()));
        }
        let mut table = vec![f32::INFINITY; rows.len() * ADT_STRIDE];
        for (s, r) in rows.iter().enumerate() {
            table[s * ADT_STRIDE..s * ADT_STRIDE + c].copy_from_slice(r);
        }
        Ok(Self {
            m: rows.len(),
            c,
            table,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn row(&self, s: usize) -> &[f32] {
        &self.table[s * ADT_STRIDE..s * ADT_STRIDE + self.c]
    }

    /// Sum of the `M` selected entries in subspace order. Out-of-range code
    /// bytes select +inf padding. `code.len()` must equal `M`.
    #[inline]
    pub fn distance(&self, code: &[u8]) -> f32 {
        debug_assert_eq!(code.len(), self.m);
        let mut acc = 0f32;
        for (s, &ci) in code.iter().enumerate() {
            acc += self.table[s * ADT_STRIDE + ci as usize];
        }
        sanitize(acc)
    }
}

/// Checked Eq.-style PQ distance: errors on wrong length or code >= C.
pub fn pq_distance(adt: &Adt, code: &[u8]) -> Result<f32> {
    if code.len() != adt.m {
        return Err(Error::DimensionMismatch {
            expected: adt.m,
            got: code.len(),
        });
    }
    if let Some((s, &v)) = code.iter().enumerate().find(|(_, &v)| v as usize >= adt.c) {
        return Err(Error::CodeOutOfRange {
            subspace: s,
            value: v as usize,
            centroids: adt.c,
        });
    }
    Ok(adt.distance(code))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub sample_size: usize,
    pub pairs_per_query: usize,
    pub percentile: f64,
    pub seed: u64,
}

impl Default for CalibrationParams {
    fn default() -> Self {
        Self {
            sample_size: 1000,
            pairs_per_query: 100,
            percentile: 0.99,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaCalibration {
    pub beta: f64,
    pub percentile: f64,
    pub sample_size: usize,
    /// Number of (query, base) pairs that produced a usable ratio.
    pub pairs_used: usize,
    /// Median ratio, for reference.
    pub median: f64,
}

/// Nearest-rank percentile of a sorted sample.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Samples base vectors as queries and pairs each with uniformly random base
/// vectors; the ratio is PQ distance over exact distance. Pairs where either
/// distance is not positive are skipped. Returns the requested percentile of
/// the ratios, clamped to at least 1.
pub fn calibrate_beta(
    model: &PqModel,
    codes: &PqCodes,
    ds: &VectorDataset,
    params: &CalibrationParams,
) -> Result<BetaCalibration> {
    if params.sample_size == 0 || params.sample_size > ds.len() {
        return Err(Error::InvalidParam(format!(
            "sample_size {} must be in 1..={}",
            params.sample_size,
            ds.len()
        )));
    }
    if !(params.percentile > 0.0 && params.percentile < 1.0) {
        return Err(Error::InvalidParam(format!(
            "percentile {} must be in (0, 1)",
            params.percentile
        )));
    }
    if codes.len() != ds.len() || codes.m() != model.m() {
        return Err(Error::InvalidParam("codes do not match dataset/model".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let queries = rand::seq::index::sample(&mut rng, ds.len(), params.sample_size).into_vec();
    let pairs: Vec<(usize, Vec<usize>)> = queries
        .into_iter()
        .map(|q| {
            let others = (0..params.pairs_per_query)
                .map(|_| rng.random_range(0..ds.len()))
                .collect();
            (q, others)
        })
        .collect();
    let metric = ds.metric();
    let mut ratios: Vec<f64> = pairs
        .par_iter()
        .map(|(q, others)| {
            let qv = ds.row(*q);
            let adt = model.build_adt(qv).expect("dimension checked by codes");
            others
                .iter()
                .filter(|&&x| x != *q)
                .filter_map(|&x| {
                    let approx = adt.distance(codes.row(x)) as f64;
                    let exact = metric.distance(qv, ds.row(x)) as f64;
                    (approx > 0.0 && exact > 0.0 && approx.is_finite()).then(|| approx / exact)
                })
                .collect::<Vec<f64>>()
        })
        .flatten()
        .collect();
    if ratios.is_empty() {
        return Err(Error::Degenerate(
            "no sampled pair had positive PQ and exact distances".into(),
        ));
    }
    ratios.sort_by(f64::total_cmp);
    let beta = percentile_sorted(&ratios, params.percentile).max(1.0);
    Ok(BetaCalibration {
        beta,
        percentile: params.percentile,
        sample_size: params.sample_size,
        pairs_used: ratios.len(),
        median: percentile_sorted(&ratios, 0.5),
    })
}
