//! Range-filtered approximate nearest neighbor search.
//!
//! Objects carry an embedding vector and a tuple of numeric attributes. A
//! query asks for the `k` nearest vectors among objects whose attributes
//! fall inside per-attribute intervals. The index partitions objects with a
//! skew-aware binary tree over attribute values and attaches a bounded-degree
//! proximity graph to every tree node; queries pick in-range entry points
//! from the tree and rebuild in-range adjacency on the fly while walking an
//! object's tree path.
//!
//! ```
//! use khi::{build_index, normalize_predicate, BuildParams, Interval, QueryParams, RfannsQuery};
//!
//! let dataset = khi::synthetic::eight_object_example();
//! let index = build_index(dataset, BuildParams::default()).unwrap();
//! let predicate = normalize_predicate(
//!     &[(0, Interval::new(3.0, 4.0)), (1, Interval::new(4.0, 6.0))],
//!     2,
//! )
//! .unwrap();
//! let query = RfannsQuery { vector: vec![0.0, 0.0], predicate, k: 2 };
//! let out = index.search(&query, &QueryParams::new(2, 10, 32)).unwrap();
//! let mut ids = out.ids();
//! ids.sort();
//! assert_eq!(ids, vec![2, 3]);
//! ```

pub mod bench;
pub mod error;
pub mod graph;
pub mod index;
pub mod model;
pub mod oracle;
pub mod query;
pub mod storage;
pub mod synthetic;
pub mod tree;
pub mod workload;

pub use error::{KhiError, Result};
pub use graph::{GraphParams, Neighbor, NodeGraph};
pub use index::{build_index, build_report, BuildParams, BuildReport, KhiIndex, ParallelMode};
pub use model::{distance, normalize_predicate, Dataset, Interval, Object, ObjectSchema, RangePredicate, RfannsQuery};
pub use oracle::{ground_truth, prefilter_knn, recall, GroundTruth, TruthEntry};
pub use query::{QueryParams, ReconOrder, SearchOutput, SearchState, SearchStats};
pub use tree::{build_tree, PartitionTree, TreeParams};
pub use workload::{gen_workload, Workload, WorkloadSpec};
