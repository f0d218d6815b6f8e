//! Vector datasets, the `fvecs`/`bvecs`/`ivecs` file formats, exact k-NN
//! ground truth and recall scoring.
//!
//! All three metrics are expressed so that smaller is closer:
//!
//! * euclidean: squared L2 distance (no square root; ordering is preserved),
//! * angular: `1 - cos(q, x)`,
//! * inner product: `-<q, x>`.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use byteorder::{LittleEndian, WriteBytesExt};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::{self, sanitize};
use crate::error::{Error, Result};
use crate::hash::ContentHasher;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    Angular,
    InnerProduct,
}

impl Metric {
    /// Distance between two equal-length vectors. Panics in debug builds on
    /// length mismatch; use [`exact_distance`] for a checked variant.
    #[inline]
    pub fn distance(self, q: &[f32], x: &[f32]) -> f32 {
        match self {
            Metric::Euclidean => distance::l2_sq(q, x),
            Metric::Angular => {
                let nq = distance::norm(q);
                let nx = distance::norm(x);
                if nq == 0.0 || nx == 0.0 {
                    1.0
                } else {
                    1.0 - distance::dot(q, x) / (nq * nx)
                }
            }
            Metric::InnerProduct => -distance::dot(q, x),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Angular => "angular",
            Metric::InnerProduct => "inner_product",
        }
    }

    fn tag(self) -> u8 {
        match self {
            Metric::Euclidean => 0,
            Metric::Angular => 1,
            Metric::InnerProduct => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Metric::Euclidean),
            1 => Ok(Metric::Angular),
            2 => Ok(Metric::InnerProduct),
            t => Err(Error::Malformed(format!("unknown metric tag {t}"))),
        }
    }

    pub(crate) fn to_tag(self) -> u8 {
        self.tag()
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" | "l2" => Ok(Metric::Euclidean),
            "angular" | "cosine" => Ok(Metric::Angular),
            "inner_product" | "ip" | "dot" => Ok(Metric::InnerProduct),
            other => Err(Error::InvalidParam(format!("unknown metric '{other}'"))),
        }
    }
}

/// Checked distance between `q` and `x` under `metric`.
pub fn exact_distance(q: &[f32], x: &[f32], metric: Metric) -> Result<f32> {
    if q.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: q.len(),
            got: x.len(),
        });
    }
    Ok(metric.distance(q, x))
}

/// Dense row-major `N x D` matrix of `f32` with a declared metric.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorDataset {
    dim: usize,
    data: Vec<f32>,
    metric: Metric,
}

impl VectorDataset {
    pub fn new(dim: usize, data: Vec<f32>, metric: Metric) -> Result<Self> {
        let ds = Self::new_unchecked(dim, data, metric)?;
        if let Some(pos) = ds.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(ds)
    }

    /// Like [`VectorDataset::new`] but accepts non-finite values. Used for
    /// copies of stored data after fault injection.
    pub fn new_unchecked(dim: usize, data: Vec<f32>, metric: Metric) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParam("dimension must be >= 1".into()));
        }
        if data.is_empty() {
            return Err(Error::Empty("dataset has no vectors".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::Malformed(format!(
                "{} values do not form rows of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data, metric })
    }

    pub fn from_rows(rows: &[Vec<f32>], metric: Metric) -> Result<Self> {
        let dim = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Empty("no rows".into()))?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::InconsistentDimension {
                    record: i,
                    expected: dim,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(dim, data, metric)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn with_metric(mut self, metric: Metric) -> Self {
        self.metric = metric;
        self
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// New dataset made of the given rows, in order.
    pub fn select(&self, ids: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for &i in ids {
            if i >= self.len() {
                return Err(Error::InvalidParam(format!(
                    "row {i} out of range ({} rows)",
                    self.len()
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::new_unchecked(self.dim, data, self.metric)
    }

    /// Content hash over dimension, metric and values.
    pub fn content_hash(&self) -> String {
        ContentHasher::new()
            .u64(self.dim as u64)
            .str(self.metric.as_str())
            .f32s(&self.data)
            .hex()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VecFormat {
    Fvecs,
    Bvecs,
    Ivecs,
}

impl VecFormat {
    fn elem_size(self) -> usize {
        match self {
            VecFormat::Fvecs | VecFormat::Ivecs => 4,
            VecFormat::Bvecs => 1,
        }
    }

    /// Guess from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "fvecs" => Some(VecFormat::Fvecs),
            "bvecs" => Some(VecFormat::Bvecs),
            "ivecs" => Some(VecFormat::Ivecs),
            _ => None,
        }
    }
}

impl FromStr for VecFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fvecs" => Ok(VecFormat::Fvecs),
            "bvecs" => Ok(VecFormat::Bvecs),
            "ivecs" => Ok(VecFormat::Ivecs),
            other => Err(Error::InvalidParam(format!("unknown vector format '{other}'"))),
        }
    }
}

/// Parses `*vecs` records from a byte buffer. Returns `(dim, values)` with
/// byte and integer elements widened to `f32`.
pub fn parse_vecs(buf: &[u8], format: VecFormat) -> Result<(usize, Vec<f32>)> {
    if buf.is_empty() {
        return Err(Error::Empty("vector file is empty".into()));
    }
    let esz = format.elem_size();
    let mut pos = 0usize;
    let mut dim = 0usize;
    let mut record = 0usize;
    let mut out = Vec::new();
    while pos < buf.len() {
        if buf.len() - pos < 4 {
            return Err(Error::Malformed(format!(
                "record {record}: truncated dimension field"
            )));
        }
        let d = i32::from_le_bytes(buf[pos..pos + 4].try_into().unwrap());
        if d <= 0 {
            return Err(Error::Malformed(format!(
                "record {record}: non-positive dimension {d}"
            )));
        }
        let d = d as usize;
        if record == 0 {
            dim = d;
            out.reserve(buf.len() / (4 + d * esz) * d);
        } else if d != dim {
            return Err(Error::InconsistentDimension {
                record,
                expected: dim,
                found: d,
            });
        }
        pos += 4;
        let need = d * esz;
        if buf.len() - pos < need {
            return Err(Error::Malformed(format!(
                "record {record}: expected {need} payload bytes, found {}",
                buf.len() - pos
            )));
        }
        let payload = &buf[pos..pos + need];
        match format {
            VecFormat::Fvecs => out.extend(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap())),
            ),
            VecFormat::Ivecs => out.extend(
                payload
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes(c.try_into().unwrap()) as f32),
            ),
            VecFormat::Bvecs => out.extend(payload.iter().map(|&b| b as f32)),
        }
        pos += need;
        record += 1;
    }
    Ok((dim, out))
}

/// Serializes rows of dimension `dim` in the given format. Values must be
/// representable exactly (bytes for `bvecs`, integers for `ivecs`).
pub fn write_vecs<W: Write>(mut w: W, format: VecFormat, dim: usize, data: &[f32]) -> Result<()> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::InvalidParam(format!(
            "{} values do not form rows of dimension {dim}",
            data.len()
        )));
    }
    for row in data.chunks_exact(dim) {
        w.write_i32::<LittleEndian>(dim as i32)?;
        for &v in row {
            match format {
                VecFormat::Fvecs => w.write_f32::<LittleEndian>(v)?,
                VecFormat::Bvecs => {
                    if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
                        return Err(Error::InvalidParam(format!(
                            "value {v} is not representable as an unsigned byte"
                        )));
                    }
                    w.write_u8(v as u8)?
                }
                VecFormat::Ivecs => {
                    if v.fract() != 0.0 || v < i32::MIN as f32 || v > i32::MAX as f32 {
                        return Err(Error::InvalidParam(format!(
                            "value {v} is not representable as i32"
                        )));
                    }
                    w.write_i32::<LittleEndian>(v as i32)?
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Loads a vector file into a dataset with the given metric.
pub fn load_vectors(path: &Path, format: VecFormat, metric: Metric) -> Result<VectorDataset> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let (dim, data) = parse_vecs(&buf, format)?;
    VectorDataset::new(dim, data, metric)
}

pub fn save_vectors(path: &Path, format: VecFormat, ds: &VectorDataset) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_vecs(BufWriter::new(f), format, ds.dim(), ds.as_slice())
}

/// Reads an `ivecs` file as integer rows (used for id lists).
pub fn load_ivecs(path: &Path) -> Result<Vec<Vec<i32>>> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    let mut pos = 0;
    let mut dim = None;
    while pos < buf.len() {
        if buf.len() - pos < 4 {
            return Err(Error::Malformed("truncated ivecs dimension".into()));
        }
        let d = i32::from_le_bytes(buf[pos..pos + 4].try_into().unwrap());
        if d < 0 {
            return Err(Error::Malformed(format!("negative dimension {d}")));
        }
        let d = d as usize;
        match dim {
            None => dim = Some(d),
            Some(e) if e != d => {
                return Err(Error::InconsistentDimension {
                    record: rows.len(),
                    expected: e,
                    found: d,
                })
            }
            _ => {}
        }
        pos += 4;
        if buf.len() - pos < 4 * d {
            return Err(Error::Malformed("truncated ivecs record".into()));
        }
        rows.push(
            buf[pos..pos + 4 * d]
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        );
        pos += 4 * d;
    }
    if rows.is_empty() {
        return Err(Error::Empty(format!("{} is empty", path.display())));
    }
    Ok(rows)
}

pub fn save_ivecs(path: &Path, rows: &[Vec<u32>]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in rows {
        w.write_i32::<LittleEndian>(r.len() as i32)?;
        for &v in r {
            w.write_i32::<LittleEndian>(v as i32)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Exact `k` nearest neighbors per query, ids and distances ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub k: usize,
    pub ids: Vec<Vec<u32>>,
    pub distances: Vec<Vec<f32>>,
}

impl GroundTruth {
    pub fn num_queries(&self) -> usize {
        self.ids.len()
    }

    /// Writes `<prefix>.ivecs` (ids) and `<prefix>.fvecs` (distances).
    pub fn save(&self, prefix: &Path) -> Result<()> {
        save_ivecs(&prefix.with_extension("ivecs"), &self.ids)?;
        let dists: Vec<f32> = self.distances.iter().flatten().copied().collect();
        let path = prefix.with_extension("fvecs");
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_vecs(BufWriter::new(f), VecFormat::Fvecs, self.k, &dists)
    }

    pub fn load(prefix: &Path) -> Result<Self> {
        let rows = load_ivecs(&prefix.with_extension("ivecs"))?;
        let path = prefix.with_extension("fvecs");
        let mut buf = Vec::new();
        File::open(&path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(&path, e))?;
        let (k, flat) = parse_vecs(&buf, VecFormat::Fvecs)?;
        if flat.len() != rows.len() * k || rows.iter().any(|r| r.len() != k) {
            return Err(Error::Malformed(
                "ground truth ids and distances disagree".into(),
            ));
        }
        let ids = rows
            .into_iter()
            .map(|r| r.into_iter().map(|v| v as u32).collect())
            .collect();
        let distances = flat.chunks_exact(k).map(<[f32]>::to_vec).collect();
        Ok(Self { k, ids, distances })
    }
}

#[inline]
fn cmp_pair(a: &(f32, u32), b: &(f32, u32)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Exact top-`k` of every query by linear scan. Ties go to the smaller id.
/// Parallel over queries; the result does not depend on the thread count.
pub fn brute_force_knn(base: &VectorDataset, queries: &VectorDataset, k: usize) -> Result<GroundTruth> {
    if k > base.len() {
        return Err(Error::KTooLarge {
            k,
            limit: base.len(),
            what: "base size",
        });
    }
    if k == 0 {
        return Err(Error::InvalidParam("k must be >= 1".into()));
    }
    if base.dim() != queries.dim() {
        return Err(Error::DimensionMismatch {
            expected: base.dim(),
            got: queries.dim(),
        });
    }
    let metric = base.metric();
    let per_query: Vec<(Vec<u32>, Vec<f32>)> = (0..queries.len())
        .into_par_iter()
        .map(|qi| {
            let q = queries.row(qi);
            let mut all: Vec<(f32, u32)> = base
                .rows()
                .enumerate()
                .map(|(i, x)| (sanitize(metric.distance(q, x)), i as u32))
                .collect();
            if k < all.len() {
                all.select_nth_unstable_by(k - 1, cmp_pair);
                all.truncate(k);
            }
            all.sort_unstable_by(cmp_pair);
            all.into_iter().map(|(d, i)| (i, d)).unzip()
        })
        .collect();
    let (ids, distances) = per_query.into_iter().unzip();
    Ok(GroundTruth { k, ids, distances })
}

/// Ground truth cached under `dir`, keyed by (base hash, query hash, metric, k).
pub fn ground_truth_cached(
    dir: &Path,
    base: &VectorDataset,
    queries: &VectorDataset,
    k: usize,
) -> Result<GroundTruth> {
    let key = ContentHasher::new()
        .str(&base.content_hash())
        .str(&queries.content_hash())
        .str(base.metric().as_str())
        .u64(k as u64)
        .hex();
    let prefix: PathBuf = dir.join(format!("gt-{}", &key[..16]));
    if prefix.with_extension("ivecs").exists() && prefix.with_extension("fvecs").exists() {
        if let Ok(gt) = GroundTruth::load(&prefix) {
            if gt.k == k && gt.num_queries() == queries.len() {
                return Ok(gt);
            }
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let gt = brute_force_knn(base, queries, k)?;
    gt.save(&prefix)?;
    Ok(gt)
}

/// Mean over queries of `|found[..k] ∩ truth[..k]| / k`.
pub fn recall_at_k(found: &[Vec<u32>], truth: &GroundTruth, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidParam("k must be >= 1".into()));
    }
    if found.len() != truth.ids.len() {
        return Err(Error::InvalidParam(format!(
            "{} result lists for {} queries",
            found.len(),
            truth.ids.len()
        )));
    }
    if found.is_empty() {
        return Err(Error::Empty("no queries to score".into()));
    }
    let mut total = 0usize;
    for (qi, (f, t)) in found.iter().zip(&truth.ids).enumerate() {
        if f.len() < k {
            return Err(Error::LengthShortfall {
                query: qi,
                have: f.len(),
                need: k,
            });
        }
        if t.len() < k {
            return Err(Error::LengthShortfall {
                query: qi,
                have: t.len(),
                need: k,
            });
        }
        let truth_k = &t[..k];
        total += f[..k].iter().filter(|id| truth_k.contains(id)).count();
    }
    Ok(total as f64 / (k * found.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gt_from(ids: Vec<Vec<u32>>) -> GroundTruth {
        let k = ids[0].len();
        let distances = ids.iter().map(|r| vec![0.0; r.len()]).collect();
        GroundTruth { k, ids, distances }
    }

    #[test]
    fn single_fvecs_record() {
        let mut buf = Vec::new();
        buf.extend(2i32.to_le_bytes());
        buf.extend(1.0f32.to_le_bytes());
        buf.extend(2.0f32.to_le_bytes());
        let (dim, data) = parse_vecs(&buf, VecFormat::Fvecs).unwrap();
        let ds = VectorDataset::new(dim, data, Metric::Euclidean).unwrap();
        assert_eq!((ds.len(), ds.dim()), (1, 2));
        assert_eq!(ds.row(0), &[1.0, 2.0]);
    }

    #[test]
    fn bvecs_bytes_are_widened() {
        let mut buf = 4i32.to_le_bytes().to_vec();
        buf.extend([0u8, 255, 1, 2]);
        let (_, data) = parse_vecs(&buf, VecFormat::Bvecs).unwrap();
        assert_eq!(data, vec![0.0, 255.0, 1.0, 2.0]);
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(matches!(parse_vecs(&[], VecFormat::Fvecs), Err(Error::Empty(_))));
        let mut truncated = 3i32.to_le_bytes().to_vec();
        truncated.extend(1.0f32.to_le_bytes());
        assert!(matches!(
            parse_vecs(&truncated, VecFormat::Fvecs),
            Err(Error::Malformed(_))
        ));
        let mut mixed = Vec::new();
        write_vecs(&mut mixed, VecFormat::Fvecs, 2, &[1.0, 2.0]).unwrap();
        write_vecs(&mut mixed, VecFormat::Fvecs, 3, &[1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(
            parse_vecs(&mixed, VecFormat::Fvecs),
            Err(Error::InconsistentDimension { record: 1, expected: 2, found: 3 })
        ));
    }

    #[test]
    fn fvecs_round_trip_on_random_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f32> = (0..1000 * 16).map(|_| rng.random_range(-1e3..1e3)).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.fvecs");
        let ds = VectorDataset::new(16, data, Metric::Euclidean).unwrap();
        save_vectors(&path, VecFormat::Fvecs, &ds).unwrap();
        let back = load_vectors(&path, VecFormat::Fvecs, Metric::Euclidean).unwrap();
        assert_eq!(back, ds);

        let bytes: Vec<f32> = (0..1000 * 8).map(|_| rng.random_range(0..=255u8) as f32).collect();
        let ds = VectorDataset::new(8, bytes, Metric::Euclidean).unwrap();
        let path = dir.path().join("x.bvecs");
        save_vectors(&path, VecFormat::Bvecs, &ds).unwrap();
        assert_eq!(load_vectors(&path, VecFormat::Bvecs, Metric::Euclidean).unwrap(), ds);
    }

    #[test]
    fn distance_examples() {
        assert_eq!(exact_distance(&[1.0, 2.0], &[1.0, 2.0], Metric::Euclidean).unwrap(), 0.0);
        let d = exact_distance(&[1.0, 0.0], &[0.0, 1.0], Metric::Angular).unwrap();
        assert!((d - 1.0).abs() < 1e-7);
        assert_eq!(exact_distance(&[1.0, 2.0], &[3.0, 4.0], Metric::InnerProduct).unwrap(), -11.0);
        assert!(matches!(
            exact_distance(&[1.0], &[1.0, 2.0], Metric::Euclidean),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn distances_match_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let dim = rng.random_range(1..200);
            let q: Vec<f32> = (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect();
            let x: Vec<f32> = (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect();
            let (mut l2, mut dp, mut nq, mut nx) = (0f64, 0f64, 0f64, 0f64);
            for i in 0..dim {
                let (a, b) = (q[i] as f64, x[i] as f64);
                l2 += (a - b) * (a - b);
                dp += a * b;
                nq += a * a;
                nx += b * b;
            }
            let ang = 1.0 - dp / (nq.sqrt() * nx.sqrt());
            let check = |got: f32, want: f64, scale: f64| {
                assert!(
                    ((got as f64) - want).abs() <= 1e-5 * scale.max(1.0),
                    "got {got}, want {want}"
                );
            };
            check(Metric::Euclidean.distance(&q, &x), l2, l2);
            check(Metric::InnerProduct.distance(&q, &x), -dp, nq.sqrt() * nx.sqrt());
            check(Metric::Angular.distance(&q, &x), ang, 1.0);
        }
    }

    #[test]
    fn brute_force_small_example() {
        let base = VectorDataset::from_rows(
            &[vec![0.0, 0.0], vec![3.0, 4.0], vec![1.0, 1.0]],
            Metric::Euclidean,
        )
        .unwrap();
        let q = VectorDataset::from_rows(&[vec![0.0, 0.0]], Metric::Euclidean).unwrap();
        let gt = brute_force_knn(&base, &q, 2).unwrap();
        assert_eq!(gt.ids[0], vec![0, 2]);
        assert_eq!(gt.distances[0], vec![0.0, 2.0]);

        let full = brute_force_knn(&base, &q, 3).unwrap();
        let mut ids = full.ids[0].clone();
        ids.sort();
        assert_eq!(ids, vec![0, 1, 2]);
        assert_eq!(recall_at_k(&full.ids, &full, 3).unwrap(), 1.0);
        assert!(matches!(brute_force_knn(&base, &q, 4), Err(Error::KTooLarge { .. })));
    }

    #[test]
    fn brute_force_ties_prefer_smaller_id() {
        let base = VectorDataset::from_rows(
            &[vec![1.0], vec![-1.0], vec![1.0], vec![5.0]],
            Metric::Euclidean,
        )
        .unwrap();
        let q = VectorDataset::from_rows(&[vec![0.0]], Metric::Euclidean).unwrap();
        assert_eq!(brute_force_knn(&base, &q, 3).unwrap().ids[0], vec![0, 1, 2]);
    }

    #[test]
    fn recall_examples() {
        let truth = gt_from(vec![vec![1, 2, 3, 4]]);
        assert_eq!(recall_at_k(&[vec![1, 2, 3, 4]], &truth, 4).unwrap(), 1.0);
        assert_eq!(recall_at_k(&[vec![5, 6, 7, 8]], &truth, 4).unwrap(), 0.0);
        assert_eq!(recall_at_k(&[vec![1, 2, 3, 9]], &truth, 4).unwrap(), 0.75);
        assert!(matches!(
            recall_at_k(&[vec![1, 2]], &truth, 4),
            Err(Error::LengthShortfall { .. })
        ));
    }

    #[test]
    fn ground_truth_cache_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = VectorDataset::new(
            4,
            (0..400).map(|_| rng.random::<f32>()).collect(),
            Metric::Euclidean,
        )
        .unwrap();
        let q = base.select(&[0, 1, 2]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = ground_truth_cached(dir.path(), &base, &q, 5).unwrap();
        let b = ground_truth_cached(dir.path(), &base, &q, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
    }

    proptest! {
        #[test]
        fn recall_is_permutation_invariant(mut ids in proptest::collection::vec(0u32..50, 10), seed in 0u64..1000) {
            let truth = gt_from(vec![(0..10).collect()]);
            let before = recall_at_k(&[ids.clone()], &truth, 10).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..ids.len()).rev() {
                let j = rng.random_range(0..=i);
                ids.swap(i, j);
            }
            prop_assert_eq!(before, recall_at_k(&[ids], &truth, 10).unwrap());
        }

        #[test]
        fn brute_force_distances_non_decreasing(seed in 0u64..500, k in 1usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let base = VectorDataset::new(3, (0..60).map(|_| rng.random_range(-5.0..5.0)).collect(), Metric::Euclidean).unwrap();
            let q = VectorDataset::new(3, (0..6).map(|_| rng.random_range(-5.0..5.0)).collect(), Metric::Euclidean).unwrap();
            let gt = brute_force_knn(&base, &q, k).unwrap();
            for d in &gt.distances {
                prop_assert!(d.windows(2).all(|w| w[0] <= w[1]));
            }
        }

        #[test]
        fn symmetric_metrics(a in proptest::collection::vec(-100f32..100.0, 7), b in proptest::collection::vec(-100f32..100.0, 7)) {
            prop_assert_eq!(Metric::Euclidean.distance(&a, &b), Metric::Euclidean.distance(&b, &a));
            let x = Metric::Angular.distance(&a, &b);
            let y = Metric::Angular.distance(&b, &a);
            prop_assert!((x - y).abs() <= 1e-6);
        }
    }
}
