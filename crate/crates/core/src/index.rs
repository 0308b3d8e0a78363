//! Full index construction: the partitioning tree followed by bottom-up,
//! level-ordered graph construction.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{KhiError, Result};
use crate::graph::{
    build_leaf_graph, merge_graphs, merge_graphs_concurrent, GraphCtx, GraphParams, MergeInput, NodeGraph,
};
use crate::model::Dataset;
use crate::storage;
use crate::tree::{build_tree, PartitionTree, TreeParams};

pub const DEFAULT_TAU_P: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParallelMode {
    /// Whole nodes per worker; output identical to the single-thread build.
    Deterministic,
    /// Levels with fewer than `tau_p` nodes spread one node's right-child
    /// insertions over the workers. Output depends on the schedule.
    Fast,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildParams {
    pub tree: TreeParams,
    pub graph: GraphParams,
    /// Levels with fewer nodes than this switch to intra-node parallelism in
    /// [`ParallelMode::Fast`].
    pub tau_p: usize,
    pub threads: usize,
    pub mode: ParallelMode,
}

impl Default for BuildParams {
    fn default() -> Self {
        Self {
            tree: TreeParams::default(),
            graph: GraphParams::default(),
            tau_p: DEFAULT_TAU_P,
            threads: 1,
            mode: ParallelMode::Deterministic,
        }
    }
}

impl BuildParams {
    pub fn validate(&self) -> Result<()> {
        self.tree.validate()?;
        self.graph.validate()?;
        if self.threads == 0 {
            return Err(KhiError::InvalidParam("threads must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildTiming {
    pub tree_seconds: f64,
    pub total_seconds: f64,
    /// Graph construction time per level, indexed by level (root = 0).
    pub level_seconds: Vec<f64>,
}

/// A built index: dataset, partitioning tree and one graph per tree node.
#[derive(Debug, Clone)]
pub struct KhiIndex {
    pub(crate) dataset: Dataset,
    pub(crate) tree: PartitionTree,
    pub(crate) graphs: Vec<NodeGraph>,
    pub(crate) params: BuildParams,
    pub(crate) timing: Option<BuildTiming>,
}

impl KhiIndex {
    pub(crate) fn from_parts(
        dataset: Dataset,
        tree: PartitionTree,
        graphs: Vec<NodeGraph>,
        params: BuildParams,
    ) -> Self {
        Self {
            dataset,
            tree,
            graphs,
            params,
            timing: None,
        }
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn tree(&self) -> &PartitionTree {
        &self.tree
    }

    pub fn graphs(&self) -> &[NodeGraph] {
        &self.graphs
    }

    #[inline]
    pub fn graph(&self, node: u32) -> &NodeGraph {
        &self.graphs[node as usize]
    }

    pub fn params(&self) -> BuildParams {
        self.params
    }

    pub fn timing(&self) -> Option<&BuildTiming> {
        self.timing.as_ref()
    }

    pub fn len(&self) -> usize {
        self.dataset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.is_empty()
    }

    pub fn graph_ctx(&self) -> GraphCtx<'_> {
        GraphCtx {
            dataset: &self.dataset,
            position: &self.tree.position,
        }
    }

    /// Total number of stored neighbor slots over all graphs.
    pub fn edge_count(&self) -> usize {
        self.graphs.iter().map(NodeGraph::edge_count).sum()
    }

    /// Adjacency of `object` in the graph of `node`.
    pub fn neighbors_in(&self, node: u32, object: u32) -> &[crate::graph::Neighbor] {
        self.graphs[node as usize].neighbors_at(self.tree.position(object))
    }
}

fn build_node(
    ctx: GraphCtx<'_>,
    tree: &PartitionTree,
    graphs: &[Option<NodeGraph>],
    id: u32,
    params: GraphParams,
    intra_parallel: bool,
) -> NodeGraph {
    let node = tree.node(id);
    match (node.left, node.right) {
        (Some(l), Some(r)) => {
            let input = MergeInput {
                owner: id,
                left: graphs[l as usize].as_ref().expect("children built first"),
                right: graphs[r as usize].as_ref().expect("children built first"),
                left_ids: tree.slice(l),
                right_ids: tree.slice(r),
            };
            if intra_parallel {
                merge_graphs_concurrent(ctx, input, params, true)
            } else {
                merge_graphs(ctx, input, params)
            }
        }
        _ => build_leaf_graph(ctx, id, node.begin, tree.slice(id), params),
    }
}

/// Builds the complete index over `dataset`.
pub fn build_index(dataset: Dataset, params: BuildParams) -> Result<KhiIndex> {
    params.validate()?;
    let started = Instant::now();
    let tree = build_tree(&dataset, params.tree)?;
    let tree_seconds = started.elapsed().as_secs_f64();

    let pool = if params.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(params.threads)
                .build()
                .map_err(|e| KhiError::InvalidParam(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };

    let ctx = GraphCtx {
        dataset: &dataset,
        position: &tree.position,
    };
    let mut graphs: Vec<Option<NodeGraph>> = vec![None; tree.nodes().len()];
    let levels = tree.levels();
    let mut level_seconds = vec![0.0; levels.len()];
    for (depth, level) in levels.iter().enumerate().rev() {
        let t = Instant::now();
        let built: Vec<NodeGraph> = match &pool {
            None => level
                .iter()
                .map(|&id| build_node(ctx, &tree, &graphs, id, params.graph, false))
                .collect(),
            Some(pool) if params.mode == ParallelMode::Fast && level.len() < params.tau_p => pool.install(|| {
                level
                    .iter()
                    .map(|&id| build_node(ctx, &tree, &graphs, id, params.graph, true))
                    .collect()
            }),
            Some(pool) => pool.install(|| {
                level
                    .par_iter()
                    .map(|&id| build_node(ctx, &tree, &graphs, id, params.graph, false))
                    .collect()
            }),
        };
        for (&id, g) in level.iter().zip(built) {
            graphs[id as usize] = Some(g);
        }
        level_seconds[depth] = t.elapsed().as_secs_f64();
    }

    let graphs = graphs.into_iter().map(|g| g.expect("every level processed")).collect();
    let mut index = KhiIndex::from_parts(dataset, tree, graphs, params);
    index.timing = Some(BuildTiming {
        tree_seconds,
        total_seconds: started.elapsed().as_secs_f64(),
        level_seconds,
    });
    Ok(index)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildReport {
    /// `None` for indexes loaded from disk.
    pub build_seconds: Option<f64>,
    /// Serialized size of the adjacency section.
    pub graph_bytes: u64,
    /// Serialized size of everything before the adjacency section.
    pub tree_bytes: u64,
    pub level_seconds: Vec<f64>,
    pub edge_count: usize,
    pub height: usize,
}

pub fn build_report(index: &KhiIndex) -> BuildReport {
    BuildReport {
        build_seconds: index.timing.as_ref().map(|t| t.total_seconds),
        graph_bytes: storage::adjacency_bytes(index),
        tree_bytes: storage::tree_section_bytes(index),
        level_seconds: index
            .timing
            .as_ref()
            .map(|t| t.level_seconds.clone())
            .unwrap_or_default(),
        edge_count: index.edge_count(),
        height: index.tree.height(),
    }
}
