//! Graph-based approximate nearest neighbor search driven by product-quantized
//! distances, with gap-encoded adjacency and a physical layout planner for a
//! near-storage accelerator model.
//!
//! The pipeline is:
//!
//! 1. [`dataset`]: load `fvecs`/`bvecs`/`ivecs`, compute exact ground truth.
//! 2. [`pq`]: train codebooks, encode, build per-query distance tables.
//! 3. [`graph`]: build or load a proximity graph, gap-encode it.
//! 4. [`search`]: PQ-distance traversal with a dynamic candidate list,
//!    early termination and threshold reranking.
//! 5. [`mapping`]: visit-frequency reordering, hot-node selection and
//!    address translation, consumed by the simulator crate.

pub mod bits;
pub mod dataset;
pub mod distance;
pub mod error;
pub mod graph;
pub mod hash;
pub mod mapping;
pub mod pq;
pub mod search;
pub mod synth;
pub mod trace;

pub use dataset::{GroundTruth, Metric, VecFormat, VectorDataset};
pub use error::{Error, Result};
pub use graph::{GapEncodedGraph, GraphIndex};
pub use pq::{Adt, PqCodes, PqModel};
pub use search::{SearchIndex, SearchParams, SearchResult};
