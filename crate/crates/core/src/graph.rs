//! Proximity graph storage, a Vamana-style builder, file formats and gap
//! encoding of adjacency lists.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bits::{bits_for, read_bits, BitWriter};
use crate::dataset::{Metric, VectorDataset};
use crate::distance;
use crate::error::{Error, Result};

const GRAPH_MAGIC: &[u8; 4] = b"NSGR";
const VERSION: u32 = 1;

/// Bounded-degree directed graph in CSR form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphIndex {
    r: usize,
    entry_point: u32,
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
}

impl GraphIndex {
    /// Validates and builds from per-vertex lists.
    pub fn new(r: usize, adjacency: Vec<Vec<u32>>, entry_point: u32) -> Result<Self> {
        let n = adjacency.len();
        if n == 0 {
            return Err(Error::Empty("graph has no vertices".into()));
        }
        if r == 0 {
            return Err(Error::InvalidParam("max degree must be >= 1".into()));
        }
        if entry_point as usize >= n {
            return Err(Error::InvalidGraph(format!(
                "entry point {entry_point} out of range (n = {n})"
            )));
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::with_capacity(adjacency.iter().map(Vec::len).sum());
        offsets.push(0);
        let mut seen = vec![u32::MAX; n];
        for (v, row) in adjacency.into_iter().enumerate() {
            if row.len() > r {
                return Err(Error::DegreeExceeded {
                    vertex: v,
                    degree: row.len(),
                    max: r,
                });
            }
            for &u in &row {
                if u as usize >= n {
                    return Err(Error::IdOutOfRange {
                        vertex: v,
                        id: u as u64,
                        n,
                    });
                }
                if u as usize == v {
                    return Err(Error::InvalidGraph(format!("self loop at vertex {v}")));
                }
                if seen[u as usize] == v as u32 {
                    return Err(Error::InvalidGraph(format!(
                        "duplicate neighbor {u} at vertex {v}"
                    )));
                }
                seen[u as usize] = v as u32;
            }
            neighbors.extend_from_slice(&row);
            offsets.push(neighbors.len());
        }
        Ok(Self {
            r,
            entry_point,
            offsets,
            neighbors,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn max_degree(&self) -> usize {
        self.r
    }

    #[inline]
    pub fn entry_point(&self) -> u32 {
        self.entry_point
    }

    #[inline]
    pub fn neighbors(&self, v: u32) -> &[u32] {
        let v = v as usize;
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: u32) -> usize {
        self.neighbors(v).len()
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.len()
    }

    pub fn adjacency(&self) -> Vec<Vec<u32>> {
        (0..self.len() as u32).map(|v| self.neighbors(v).to_vec()).collect()
    }

    /// Graph with vertex `v` renamed to `new_of_old[v]`.
    pub fn relabel(&self, new_of_old: &[u32]) -> Result<Self> {
        let n = self.len();
        if new_of_old.len() != n {
            return Err(Error::InvalidParam("permutation length differs from N".into()));
        }
        let mut adj = vec![Vec::new(); n];
        let mut hit = vec![false; n];
        for (old, &new) in new_of_old.iter().enumerate() {
            let new = new as usize;
            if new >= n || hit[new] {
                return Err(Error::InvalidParam("relabeling is not a permutation".into()));
            }
            hit[new] = true;
            adj[new] = self
                .neighbors(old as u32)
                .iter()
                .map(|&u| new_of_old[u as usize])
                .collect();
        }
        Self::new(self.r, adj, new_of_old[self.entry_point as usize])
    }

    /// Vertices reachable from the entry point by BFS.
    pub fn reachable_from_entry(&self) -> Vec<bool> {
        let mut seen = vec![false; self.len()];
        bfs_mark(self, self.entry_point, &mut seen);
        seen
    }

    /// Native format: header (magic, version, N, R, entry, encoding flag 0,
    /// bit width 32), offsets table (N+1 u64), neighbor ids (u32).
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(GRAPH_MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u64::<LittleEndian>(self.len() as u64)?;
        w.write_u32::<LittleEndian>(self.r as u32)?;
        w.write_u32::<LittleEndian>(self.entry_point)?;
        w.write_u8(0)?;
        w.write_u8(32)?;
        for &o in &self.offsets {
            w.write_u64::<LittleEndian>(o as u64)?;
        }
        for &u in &self.neighbors {
            w.write_u32::<LittleEndian>(u)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    fn read_native<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != GRAPH_MAGIC {
            return Err(Error::Malformed("not a native graph file".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let n = r.read_u64::<LittleEndian>()? as usize;
        let max_deg = r.read_u32::<LittleEndian>()? as usize;
        let entry = r.read_u32::<LittleEndian>()?;
        let flag = r.read_u8()?;
        let _width = r.read_u8()?;
        match flag {
            0 => {
                let mut offsets = vec![0u64; n + 1];
                r.read_u64_into::<LittleEndian>(&mut offsets)?;
                let total = *offsets.last().unwrap_or(&0) as usize;
                if offsets.windows(2).any(|w| w[0] > w[1]) || offsets[0] != 0 {
                    return Err(Error::Malformed("offsets are not monotone".into()));
                }
                let mut nb = vec![0u32; total];
                r.read_u32_into::<LittleEndian>(&mut nb)?;
                let adj = offsets
                    .windows(2)
                    .map(|w| nb[w[0] as usize..w[1] as usize].to_vec())
                    .collect();
                Self::new(max_deg, adj, entry)
            }
            1 => {
                let enc = GapEncodedGraph::read_body(&mut r, n, max_deg, entry)?;
                enc.decode()
            }
            f => Err(Error::Malformed(format!("unknown encoding flag {f}"))),
        }
    }

    /// DiskANN in-memory layout: u64 file size, u32 max degree, u32 entry,
    /// u64 frozen points, then per vertex a u32 degree and that many u32 ids.
    pub fn write_diskann<W: Write>(&self, mut w: W) -> Result<()> {
        let size = 24 + 4 * (self.len() + self.num_edges());
        w.write_u64::<LittleEndian>(size as u64)?;
        w.write_u32::<LittleEndian>(self.r as u32)?;
        w.write_u32::<LittleEndian>(self.entry_point)?;
        w.write_u64::<LittleEndian>(0)?;
        for v in 0..self.len() as u32 {
            let nb = self.neighbors(v);
            w.write_u32::<LittleEndian>(nb.len() as u32)?;
            for &u in nb {
                w.write_u32::<LittleEndian>(u)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    fn read_diskann(buf: &[u8]) -> Result<Self> {
        let mut r = buf;
        if buf.len() < 24 {
            return Err(Error::Malformed("diskann header truncated".into()));
        }
        let _size = r.read_u64::<LittleEndian>()?;
        let max_deg = r.read_u32::<LittleEndian>()? as usize;
        let entry = r.read_u32::<LittleEndian>()?;
        let _frozen = r.read_u64::<LittleEndian>()?;
        let mut adj = Vec::new();
        while !r.is_empty() {
            let d = r
                .read_u32::<LittleEndian>()
                .map_err(|_| Error::Malformed("truncated degree field".into()))? as usize;
            if d > max_deg {
                return Err(Error::DegreeExceeded {
                    vertex: adj.len(),
                    degree: d,
                    max: max_deg,
                });
            }
            let mut row = vec![0u32; d];
            r.read_u32_into::<LittleEndian>(&mut row)
                .map_err(|_| Error::Malformed("truncated neighbor list".into()))?;
            adj.push(row);
        }
        Self::new(max_deg, adj, entry)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphFormat {
    Native,
    DiskannMem,
}

impl std::str::FromStr for GraphFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "native" => Ok(GraphFormat::Native),
            "diskann_mem" => Ok(GraphFormat::DiskannMem),
            o => Err(Error::InvalidParam(format!("unknown graph format '{o}'"))),
        }
    }
}

pub fn load_graph(path: &Path, format: GraphFormat) -> Result<GraphIndex> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        GraphFormat::Native => GraphIndex::read_native(buf.as_slice()),
        GraphFormat::DiskannMem => GraphIndex::read_diskann(&buf),
    }
}

pub fn save_graph(path: &Path, g: &GraphIndex, format: GraphFormat) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let w = std::io::BufWriter::new(f);
    match format {
        GraphFormat::Native => g.write_to(w),
        GraphFormat::DiskannMem => g.write_diskann(w),
    }
}

fn bfs_mark(g: &GraphIndex, start: u32, seen: &mut [bool]) -> usize {
    if seen[start as usize] {
        return 0;
    }
    let mut q = VecDeque::from([start]);
    seen[start as usize] = true;
    let mut count = 1;
    while let Some(v) = q.pop_front() {
        for &u in g.neighbors(v) {
            if !seen[u as usize] {
                seen[u as usize] = true;
                count += 1;
                q.push_back(u);
            }
        }
    }
    count
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildParams {
    pub r: usize,
    pub l_build: usize,
    pub alpha: f32,
    pub seed: u64,
}

impl Default for BuildParams {
    fn default() -> Self {
        Self {
            r: 64,
            l_build: 150,
            alpha: 1.2,
            seed: 0,
        }
    }
}

/// Working state of the builder: mutable adjacency over the prepared points.
struct Builder<'a> {
    data: &'a [f32],
    dim: usize,
    adj: Vec<Vec<u32>>,
    stamp: Vec<u32>,
    epoch: u32,
}

impl Builder<'_> {
    #[inline]
    fn point(&self, i: u32) -> &[f32] {
        &self.data[i as usize * self.dim..(i as usize + 1) * self.dim]
    }

    #[inline]
    fn dist(&self, a: u32, b: u32) -> f32 {
        distance::l2_sq(self.point(a), self.point(b))
    }

    /// Exact best-first search for `target` from `start`. Returns all
    /// evaluated vertices with their distances.
    fn greedy(&mut self, start: u32, target: &[f32], l: usize) -> Vec<(f32, u32)> {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.fill(0);
            self.epoch = 1;
        }
        let epoch = self.epoch;
        let mut list: Vec<(f32, u32, bool)> = Vec::with_capacity(l + 1);
        self.stamp[start as usize] = epoch;
        list.push((distance::l2_sq(self.point(start), target), start, false));
        let mut evaluated = Vec::new();
        while let Some(pos) = list.iter().position(|c| !c.2) {
            list[pos].2 = true;
            let v = list[pos].1;
            evaluated.push((list[pos].0, v));
            for i in 0..self.adj[v as usize].len() {
                let u = self.adj[v as usize][i];
                if self.stamp[u as usize] == epoch {
                    continue;
                }
                self.stamp[u as usize] = epoch;
                let d = distance::l2_sq(self.point(u), target);
                if list.len() == l && d >= list[l - 1].0 {
                    continue;
                }
                let at = list.partition_point(|c| (c.0, c.1) < (d, u));
                list.insert(at, (d, u, false));
                list.truncate(l);
            }
        }
        evaluated
    }

    /// Searches for `p`, prunes the visited set together with its current
    /// neighbors and adds pruned reverse edges.
    fn insert(&mut self, p: u32, entry: u32, l: usize, alpha: f32, r: usize) {
        let target = self.point(p).to_vec();
        let mut cands = self.greedy(entry, &target, l);
        cands.extend(self.adj[p as usize].iter().map(|&u| (self.dist(p, u), u)));
        let nb = self.prune(p, cands, alpha, r);
        self.adj[p as usize] = nb.clone();
        for &j in &nb {
            if self.adj[j as usize].contains(&p) {
                continue;
            }
            if self.adj[j as usize].len() < r {
                self.adj[j as usize].push(p);
            } else {
                let cands: Vec<(f32, u32)> = self.adj[j as usize]
                    .iter()
                    .chain(std::iter::once(&p))
                    .map(|&u| (self.dist(j, u), u))
                    .collect();
                self.adj[j as usize] = self.prune(j, cands, alpha, r);
            }
        }
    }

    /// Alpha-pruned neighbor selection over candidates sorted by distance to
    /// `p`. Selection runs at alpha = 1 first and relaxes by 1.2x up to
    /// `alpha` while slots remain; a candidate is occluded at level `a`
    /// once some selected neighbor `s` has `d(p, c) / d(s, c) > a` on
    /// squared distances.
    fn prune(&self, p: u32, mut cands: Vec<(f32, u32)>, alpha: f32, r: usize) -> Vec<u32> {
        cands.retain(|c| c.1 != p);
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        cands.dedup_by_key(|c| c.1);
        let mut out: Vec<u32> = Vec::with_capacity(r);
        let mut occlusion = vec![0f32; cands.len()];
        let mut level = 1.0f32;
        while out.len() < r {
            for i in 0..cands.len() {
                if out.len() == r {
                    break;
                }
                if occlusion[i] > level {
                    continue;
                }
                occlusion[i] = f32::INFINITY;
                let star = cands[i].1;
                out.push(star);
                for j in i + 1..cands.len() {
                    if occlusion[j] > alpha {
                        continue;
                    }
                    let djk = self.dist(star, cands[j].1);
                    let ratio = if djk == 0.0 { f32::INFINITY } else { cands[j].0 / djk };
                    occlusion[j] = occlusion[j].max(ratio);
                }
            }
            if level >= alpha {
                break;
            }
            level = (level * 1.2).min(alpha);
        }
        out
    }
}

/// Index of the point closest to the dataset mean.
pub fn approximate_medoid(data: &[f32], dim: usize) -> u32 {
    let n = data.len() / dim;
    let mut mean = vec![0f64; dim];
    for row in data.chunks_exact(dim) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    let mean: Vec<f32> = mean.iter().map(|m| (m / n as f64) as f32).collect();
    let mut best = (f32::INFINITY, 0u32);
    for (i, row) in data.chunks_exact(dim).enumerate() {
        let d = distance::l2_sq(row, &mean);
        if d < best.0 {
            best = (d, i as u32);
        }
    }
    best.1
}

/// Incremental Vamana build. Points are inserted in a seeded random order;
/// each insertion searches the current graph, prunes the visited set to
/// at most `R` neighbors and adds pruned reverse edges.
/// Angular data is normalized first; all metrics build on squared L2.
pub fn build_graph(ds: &VectorDataset, params: &BuildParams) -> Result<GraphIndex> {
    let n = ds.len();
    if n < 2 {
        return Err(Error::InvalidParam("graph build needs at least 2 points".into()));
    }
    if params.r < 2 {
        return Err(Error::InvalidParam("R must be >= 2".into()));
    }
    if params.l_build < 1 || params.alpha < 1.0 {
        return Err(Error::InvalidParam("need L_build >= 1 and alpha >= 1".into()));
    }
    let r = params.r;
    let dim = ds.dim();
    let normalized: Vec<f32>;
    let data: &[f32] = if ds.metric() == Metric::Angular {
        normalized = ds.rows().flat_map(distance::normalized).collect();
        &normalized
    } else {
        ds.as_slice()
    };
    let medoid = approximate_medoid(data, dim);
    if n <= r + 1 {
        let adj = (0..n as u32)
            .map(|v| (0..n as u32).filter(|&u| u != v).collect())
            .collect();
        return GraphIndex::new(r, adj, medoid);
    }

    let mut b = Builder {
        data,
        dim,
        adj: vec![Vec::new(); n],
        stamp: vec![0; n],
        epoch: 0,
    };
    let l = params.l_build.max(r);
    let mut order: Vec<u32> = (0..n as u32).filter(|&v| v != medoid).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(params.seed));

    for &p in &order {
        b.insert(p, medoid, l, params.alpha, r);
    }

    repair_reachability(&mut b, medoid, r, l);
    GraphIndex::new(r, b.adj, medoid)
}

/// Links every vertex not reachable from the entry point to its closest
/// reachable vertex found by search, evicting that vertex's farthest
/// neighbor when it is full.
fn repair_reachability(b: &mut Builder<'_>, entry: u32, r: usize, l: usize) {
    let n = b.adj.len();
    for _round in 0..4 {
        let g = GraphIndex {
            r,
            entry_point: entry,
            offsets: std::iter::once(0)
                .chain(b.adj.iter().scan(0, |acc, row| {
                    *acc += row.len();
                    Some(*acc)
                }))
                .collect(),
            neighbors: b.adj.iter().flatten().copied().collect(),
        };
        let mut seen = g.reachable_from_entry();
        if seen.iter().all(|&s| s) {
            return;
        }
        for u in 0..n as u32 {
            if seen[u as usize] {
                continue;
            }
            let target = b.point(u).to_vec();
            let mut found = b.greedy(entry, &target, l);
            found.sort_by(|a, c| a.0.total_cmp(&c.0).then(a.1.cmp(&c.1)));
            let found: Vec<u32> = found
                .into_iter()
                .map(|c| c.1)
                .filter(|&w| w != u && seen[w as usize])
                .collect();
            let spare = |w: &u32| b.adj[*w as usize].len() < r;
            let Some(host) = found
                .iter()
                .copied()
                .find(spare)
                .or_else(|| (0..n as u32).find(|w| seen[*w as usize] && *w != u && spare(w)))
                .or(found.first().copied())
            else {
                continue;
            };
            if b.adj[host as usize].len() >= r {
                let row = &b.adj[host as usize];
                let far = (0..row.len())
                    .max_by(|&x, &y| b.dist(host, row[x]).total_cmp(&b.dist(host, row[y])))
                    .unwrap();
                b.adj[host as usize].remove(far);
            }
            b.adj[host as usize].push(u);
            // mark what u now reaches so later vertices can attach to it
            let mut stack = vec![u];
            seen[u as usize] = true;
            while let Some(v) = stack.pop() {
                for &w in &b.adj[v as usize] {
                    if !seen[w as usize] {
                        seen[w as usize] = true;
                        stack.push(w);
                    }
                }
            }
        }
    }
}

/// Gap values of one adjacency row: sorted ascending, first id absolute,
/// then successive differences.
pub fn gap_values(row: &[u32]) -> Vec<u64> {
    let mut s = row.to_vec();
    s.sort_unstable();
    let mut out = Vec::with_capacity(s.len());
    let mut prev = 0u32;
    for (i, &v) in s.iter().enumerate() {
        out.push(if i == 0 { v as u64 } else { (v - prev) as u64 });
        prev = v;
    }
    out
}

/// Fixed-size bit-packed adjacency records: a degree field of
/// `ceil(log2(R+1))` bits followed by `R` values of `b` bits. Values past the
/// stored degree are zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GapEncodedGraph {
    n: usize,
    r: usize,
    entry_point: u32,
    bit_width: u32,
    degree_bits: u32,
    words: Vec<u64>,
}

pub fn gap_encode(g: &GraphIndex) -> GapEncodedGraph {
    let rows: Vec<Vec<u64>> = (0..g.len() as u32).map(|v| gap_values(g.neighbors(v))).collect();
    let bit_width = rows
        .iter()
        .flatten()
        .map(|&x| bits_for(x))
        .max()
        .unwrap_or(0)
        .max(1);
    let degree_bits = bits_for(g.max_degree() as u64);
    let record = degree_bits as u64 + g.max_degree() as u64 * bit_width as u64;
    let mut w = BitWriter::with_capacity(record * g.len() as u64);
    for row in &rows {
        w.push(row.len() as u64, degree_bits);
        for &x in row {
            w.push(x, bit_width);
        }
        for _ in row.len()..g.max_degree() {
            w.push(0, bit_width);
        }
    }
    let (words, _) = w.finish();
    GapEncodedGraph {
        n: g.len(),
        r: g.max_degree(),
        entry_point: g.entry_point(),
        bit_width,
        degree_bits,
        words,
    }
}

impl GapEncodedGraph {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn bit_width(&self) -> u32 {
        self.bit_width
    }

    pub fn degree_bits(&self) -> u32 {
        self.degree_bits
    }

    pub fn max_degree(&self) -> usize {
        self.r
    }

    pub fn entry_point(&self) -> u32 {
        self.entry_point
    }

    pub fn record_bits(&self) -> u64 {
        self.degree_bits as u64 + self.r as u64 * self.bit_width as u64
    }

    /// Bit offset of vertex `v`'s record.
    pub fn offset(&self, v: usize) -> u64 {
        v as u64 * self.record_bits()
    }

    pub fn total_bits(&self) -> u64 {
        self.n as u64 * self.record_bits()
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Mutable payload, for fault injection.
    pub fn words_mut(&mut self) -> &mut [u64] {
        &mut self.words
    }

    /// Stored degree and gap values of vertex `v`, without validation. The
    /// degree is clamped to `R`.
    pub fn raw_record(&self, v: usize) -> (usize, Vec<u64>) {
        let mut pos = self.offset(v);
        let deg = (read_bits(&self.words, pos, self.degree_bits) as usize).min(self.r);
        pos += self.degree_bits as u64;
        let vals = (0..deg)
            .map(|i| read_bits(&self.words, pos + i as u64 * self.bit_width as u64, self.bit_width))
            .collect();
        (deg, vals)
    }

    /// Neighbor ids of `v` in ascending order (strict).
    pub fn decode_row(&self, v: usize) -> Result<Vec<u32>> {
        let (deg, vals) = self.raw_record(v);
        let mut out = Vec::with_capacity(deg);
        let mut acc = 0u64;
        for (i, x) in vals.into_iter().enumerate() {
            acc = if i == 0 { x } else { acc + x };
            if acc >= self.n as u64 {
                return Err(Error::IdOutOfRange { vertex: v, id: acc, n: self.n });
            }
            out.push(acc as u32);
        }
        Ok(out)
    }

    pub fn decode(&self) -> Result<GraphIndex> {
        let adj = (0..self.n).map(|v| self.decode_row(v)).collect::<Result<Vec<_>>>()?;
        GraphIndex::new(self.r, adj, self.entry_point)
    }

    /// Decoding tolerant of corrupted payloads: ids at or beyond N, repeats
    /// and self loops are skipped. An out-of-range entry point falls back to 0.
    pub fn decode_lossy(&self) -> GraphIndex {
        let mut seen = vec![u32::MAX; self.n];
        let adj = (0..self.n)
            .map(|v| {
                let (_, vals) = self.raw_record(v);
                let mut out = Vec::with_capacity(vals.len());
                let mut acc = 0u64;
                for (i, x) in vals.into_iter().enumerate() {
                    acc = if i == 0 { x } else { acc.saturating_add(x) };
                    if acc < self.n as u64 && acc != v as u64 && seen[acc as usize] != v as u32 {
                        seen[acc as usize] = v as u32;
                        out.push(acc as u32);
                    }
                }
                out
            })
            .collect();
        let entry = if (self.entry_point as usize) < self.n { self.entry_point } else { 0 };
        GraphIndex::new(self.r, adj, entry).expect("lossy decode yields a valid graph")
    }

    /// Native file with encoding flag 1: header, offsets table (N+1 u64 bit
    /// offsets), then the payload words.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(GRAPH_MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u64::<LittleEndian>(self.n as u64)?;
        w.write_u32::<LittleEndian>(self.r as u32)?;
        w.write_u32::<LittleEndian>(self.entry_point)?;
        w.write_u8(1)?;
        w.write_u8(self.bit_width as u8)?;
        w.write_u8(self.degree_bits as u8)?;
        for v in 0..=self.n {
            w.write_u64::<LittleEndian>(self.offset(v))?;
        }
        w.write_u64::<LittleEndian>(self.words.len() as u64)?;
        for &x in &self.words {
            w.write_u64::<LittleEndian>(x)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Reads what follows the common header (after the bit width byte).
    fn read_body<R: Read>(r: &mut R, n: usize, max_deg: usize, entry: u32) -> Result<Self> {
        let degree_bits = r.read_u8()? as u32;
        // the width byte was consumed by the caller; recover it from the offsets
        let mut offsets = vec![0u64; n + 1];
        r.read_u64_into::<LittleEndian>(&mut offsets)?;
        let nwords = r.read_u64::<LittleEndian>()? as usize;
        let mut words = vec![0u64; nwords];
        r.read_u64_into::<LittleEndian>(&mut words)?;
        let record = if n > 0 { offsets[1] - offsets[0] } else { 0 };
        if max_deg == 0 || record < degree_bits as u64 || (record - degree_bits as u64) % max_deg as u64 != 0 {
            return Err(Error::Malformed("inconsistent gap record size".into()));
        }
        let bit_width = ((record - degree_bits as u64) / max_deg as u64) as u32;
        if bit_width == 0 || bit_width > 32 || (nwords as u64) * 64 < record * n as u64 {
            return Err(Error::Malformed("bad gap payload".into()));
        }
        Ok(Self {
            n,
            r: max_deg,
            entry_point: entry,
            bit_width,
            degree_bits,
            words,
        })
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != GRAPH_MAGIC {
            return Err(Error::Malformed("not a native graph file".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let n = r.read_u64::<LittleEndian>()? as usize;
        let max_deg = r.read_u32::<LittleEndian>()? as usize;
        let entry = r.read_u32::<LittleEndian>()?;
        if r.read_u8()? != 1 {
            return Err(Error::Malformed("graph file is not gap encoded".into()));
        }
        let width = r.read_u8()? as u32;
        let enc = Self::read_body(&mut r, n, max_deg, entry)?;
        if enc.bit_width != width {
            return Err(Error::Malformed("bit width disagrees with record size".into()));
        }
        Ok(enc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub n: usize,
    pub max_degree: usize,
    pub degree_histogram: Vec<usize>,
    pub mean_degree: f64,
    pub raw_bits: u64,
    pub encoded_bits: u64,
    pub bit_width: u32,
    /// `1 - encoded / raw`.
    pub compression: f64,
}

pub fn graph_stats(g: &GraphIndex) -> GraphStats {
    let enc = gap_encode(g);
    let mut hist = vec![0usize; g.max_degree() + 1];
    for v in 0..g.len() as u32 {
        hist[g.degree(v)] += 1;
    }
    let raw_bits = 32 * g.len() as u64 * g.max_degree() as u64;
    let encoded_bits = enc.total_bits();
    GraphStats {
        n: g.len(),
        max_degree: g.max_degree(),
        degree_histogram: hist,
        mean_degree: g.num_edges() as f64 / g.len() as f64,
        raw_bits,
        encoded_bits,
        bit_width: enc.bit_width(),
        compression: 1.0 - encoded_bits as f64 / raw_bits as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_graph(n: usize, r: usize, seed: u64) -> GraphIndex {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let adj = (0..n)
            .map(|v| {
                let d = rng.random_range(0..=r.min(n - 1));
                let mut row: Vec<u32> = rand::seq::index::sample(&mut rng, n, d)
                    .into_iter()
                    .filter(|&u| u != v)
                    .map(|u| u as u32)
                    .collect();
                row.shuffle(&mut rng);
                row
            })
            .collect();
        GraphIndex::new(r, adj, rng.random_range(0..n as u32)).unwrap()
    }

    fn sorted_sets(g: &GraphIndex) -> Vec<Vec<u32>> {
        g.adjacency()
            .into_iter()
            .map(|mut r| {
                r.sort_unstable();
                r
            })
            .collect()
    }

    fn random_ds(n: usize, d: usize, seed: u64) -> VectorDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VectorDataset::new(d, (0..n * d).map(|_| rng.random::<f32>()).collect(), Metric::Euclidean).unwrap()
    }

    #[test]
    fn worked_delta_example() {
        assert_eq!(gap_values(&[9, 2, 5]), vec![2, 3, 4]);
    }

    #[test]
    fn small_instance_shrinks() {
        let g = GraphIndex::new(
            3,
            vec![vec![1, 2, 3], vec![0, 2, 3], vec![0, 1, 3], vec![0, 1, 2]],
            0,
        )
        .unwrap();
        let enc = gap_encode(&g);
        assert!(enc.total_bits() < 384);
        assert_eq!(sorted_sets(&enc.decode().unwrap()), sorted_sets(&g));
        let st = graph_stats(&g);
        assert_eq!(st.raw_bits, 384);
        assert_eq!(st.degree_histogram, vec![0, 0, 0, 4]);
    }

    #[test]
    fn encoded_size_matches_serialization() {
        let g = random_graph(500, 12, 3);
        let enc = gap_encode(&g);
        let st = graph_stats(&g);
        assert_eq!(st.encoded_bits, enc.total_bits());
        // payload words cover exactly the records, rounded up to a word
        assert_eq!(enc.words().len() as u64, st.encoded_bits.div_ceil(64));
        let bytes = enc.to_bytes();
        let header = 4 + 4 + 8 + 4 + 4 + 3 + 8 * (g.len() + 1) + 8;
        assert_eq!(bytes.len(), header + 8 * enc.words().len());
        let back = GapEncodedGraph::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, enc);
    }

    #[test]
    fn validation_errors() {
        assert!(matches!(
            GraphIndex::new(2, vec![vec![1], vec![7]], 0),
            Err(Error::IdOutOfRange { vertex: 1, id: 7, n: 2 })
        ));
        assert!(matches!(
            GraphIndex::new(1, vec![vec![1, 2], vec![], vec![]], 0),
            Err(Error::DegreeExceeded { .. })
        ));
        assert!(GraphIndex::new(2, vec![vec![0]], 0).is_err());
        assert!(GraphIndex::new(2, vec![vec![1, 1], vec![]], 0).is_err());
    }

    #[test]
    fn file_round_trips() {
        let g = random_graph(300, 8, 4);
        let dir = tempfile::tempdir().unwrap();
        for fmt in [GraphFormat::Native, GraphFormat::DiskannMem] {
            let p = dir.path().join(format!("{fmt:?}"));
            save_graph(&p, &g, fmt).unwrap();
            assert_eq!(load_graph(&p, fmt).unwrap(), g);
        }
        let p = dir.path().join("enc");
        std::fs::write(&p, gap_encode(&g).to_bytes()).unwrap();
        assert_eq!(sorted_sets(&load_graph(&p, GraphFormat::Native).unwrap()), sorted_sets(&g));
    }

    #[test]
    fn out_of_range_id_in_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad");
        let mut buf = Vec::new();
        buf.extend(0u64.to_le_bytes());
        buf.extend(4u32.to_le_bytes());
        buf.extend(0u32.to_le_bytes());
        buf.extend(0u64.to_le_bytes());
        for row in [vec![1u32], vec![2 + 5]] {
            buf.extend((row.len() as u32).to_le_bytes());
            for x in row {
                buf.extend(x.to_le_bytes());
            }
        }
        std::fs::write(&p, buf).unwrap();
        assert!(matches!(
            load_graph(&p, GraphFormat::DiskannMem),
            Err(Error::IdOutOfRange { id: 7, .. })
        ));
    }

    #[test]
    fn tiny_build_is_complete() {
        let ds = random_ds(3, 2, 1);
        let g = build_graph(&ds, &BuildParams { r: 2, l_build: 10, alpha: 1.2, seed: 0 }).unwrap();
        for v in 0..3u32 {
            assert_eq!(g.degree(v), 2);
        }
    }

    #[test]
    fn degenerate_build_is_valid() {
        let ds = VectorDataset::new(2, vec![0.5; 2 * 100], Metric::Euclidean).unwrap();
        let g = build_graph(&ds, &BuildParams { r: 4, l_build: 8, alpha: 1.2, seed: 0 }).unwrap();
        assert_eq!(g.len(), 100);
        assert!((0..100u32).all(|v| g.degree(v) <= 4));
        assert!(g.reachable_from_entry().iter().all(|&s| s));
    }

    #[test]
    fn build_reaches_nearly_all_vertices() {
        let ds = random_ds(10_000, 8, 2);
        let g = build_graph(&ds, &BuildParams { r: 16, l_build: 32, alpha: 1.2, seed: 5 }).unwrap();
        let reached = g.reachable_from_entry().iter().filter(|&&s| s).count();
        assert!(reached as f64 >= 0.999 * 10_000.0, "{reached}");
        assert!((0..g.len() as u32).all(|v| g.degree(v) <= 16));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g");
        save_graph(&p, &g, GraphFormat::Native).unwrap();
        assert_eq!(sorted_sets(&load_graph(&p, GraphFormat::Native).unwrap()), sorted_sets(&g));
    }

    #[test]
    fn build_is_deterministic() {
        let ds = random_ds(2000, 6, 9);
        let p = BuildParams { r: 12, l_build: 24, alpha: 1.2, seed: 1 };
        assert_eq!(build_graph(&ds, &p).unwrap(), build_graph(&ds, &p).unwrap());
    }

    #[test]
    fn lossy_decode_skips_bad_ids() {
        let g = random_graph(100, 6, 8);
        let mut enc = gap_encode(&g);
        for w in enc.words_mut().iter_mut().step_by(3) {
            *w ^= 0xF0F0_0F0F_1234_5678;
        }
        let lossy = enc.decode_lossy();
        assert_eq!(lossy.len(), 100);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn gap_round_trip(n in 2usize..300, r in 1usize..20, seed in any::<u64>()) {
            let g = random_graph(n, r, seed);
            let enc = gap_encode(&g);
            prop_assert_eq!(sorted_sets(&enc.decode().unwrap()), sorted_sets(&g));
            prop_assert_eq!(sorted_sets(&enc.decode_lossy()), sorted_sets(&g));
            for v in 0..n as u32 {
                let vals = gap_values(g.neighbors(v));
                prop_assert!(vals.iter().skip(1).all(|&d| d >= 1));
            }
        }
    }
}
