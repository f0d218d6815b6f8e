//! Per-query access traces produced by search and replayed by the simulator.
//!
//! File layout (little-endian): magic `NSTR`, u32 version, u64 query count,
//! then per query a u32 event count followed by events encoded as a u8 tag
//! and a u32 payload.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NSTR";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Event {
    /// Build the query's distance table on the shared PQ module.
    AdtBuild,
    /// Read a vertex's neighbor list.
    FetchIndex(u32),
    /// Read a vertex's PQ code.
    FetchPq(u32),
    /// Read a vertex's full-precision vector.
    FetchRaw(u32),
    /// Read a hot record: neighbor list plus the neighbors' PQ codes.
    FetchHot(u32),
    /// `n` PQ distance accumulations.
    PqCompute(u32),
    /// `n` exact distance computations.
    RerankCompute(u32),
    /// One pass of the shared sorter over a list of the given length.
    Sort(u32),
}

impl Event {
    fn encode(self) -> (u8, u32) {
        match self {
            Event::AdtBuild => (0, 0),
            Event::FetchIndex(v) => (1, v),
            Event::FetchPq(v) => (2, v),
            Event::FetchRaw(v) => (3, v),
            Event::FetchHot(v) => (4, v),
            Event::PqCompute(n) => (5, n),
            Event::RerankCompute(n) => (6, n),
            Event::Sort(n) => (7, n),
        }
    }

    fn decode(tag: u8, x: u32) -> Result<Self> {
        Ok(match tag {
            0 => Event::AdtBuild,
            1 => Event::FetchIndex(x),
            2 => Event::FetchPq(x),
            3 => Event::FetchRaw(x),
            4 => Event::FetchHot(x),
            5 => Event::PqCompute(x),
            6 => Event::RerankCompute(x),
            7 => Event::Sort(x),
            t => return Err(Error::Malformed(format!("unknown trace event tag {t}"))),
        })
    }

    /// Vertex touched by a fetch, if any.
    pub fn vertex(self) -> Option<u32> {
        match self {
            Event::FetchIndex(v) | Event::FetchPq(v) | Event::FetchRaw(v) | Event::FetchHot(v) => Some(v),
            _ => None,
        }
    }
}

pub type QueryTrace = Vec<Event>;

pub fn write_traces<W: Write>(mut w: W, traces: &[QueryTrace]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u64::<LittleEndian>(traces.len() as u64)?;
    for t in traces {
        w.write_u32::<LittleEndian>(t.len() as u32)?;
        for &e in t {
            let (tag, x) = e.encode();
            w.write_u8(tag)?;
            w.write_u32::<LittleEndian>(x)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_traces<R: Read>(mut r: R) -> Result<Vec<QueryTrace>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Malformed("not a trace file".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let nq = r.read_u64::<LittleEndian>()? as usize;
    let mut out = Vec::with_capacity(nq.min(1 << 20));
    for _ in 0..nq {
        let ne = r.read_u32::<LittleEndian>()? as usize;
        let mut t = Vec::with_capacity(ne.min(1 << 20));
        for _ in 0..ne {
            let tag = r.read_u8()?;
            let x = r.read_u32::<LittleEndian>()?;
            t.push(Event::decode(tag, x)?);
        }
        out.push(t);
    }
    Ok(out)
}

pub fn save_traces(path: &Path, traces: &[QueryTrace]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_traces(std::io::BufWriter::new(f), traces)
}

pub fn load_traces(path: &Path) -> Result<Vec<QueryTrace>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_traces(bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_round_trip() {
        let traces = vec![
            vec![
                Event::AdtBuild,
                Event::FetchPq(0),
                Event::PqCompute(1),
                Event::FetchIndex(0),
                Event::FetchHot(9),
                Event::FetchRaw(3),
                Event::RerankCompute(2),
                Event::Sort(17),
            ],
            vec![],
        ];
        let mut buf = Vec::new();
        write_traces(&mut buf, &traces).unwrap();
        assert_eq!(read_traces(buf.as_slice()).unwrap(), traces);
        buf[16 + 4] = 99;
        assert!(read_traces(buf.as_slice()).is_err());
    }
}
