//! Range-filtered query execution: entry-point selection over the tree,
//! on-the-fly in-range neighbor reconstruction along an object's tree path,
//! and greedy search restricted to in-range objects.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{KhiError, Result};
use crate::graph::{Neighbor, Ranked, VisitedSet};
use crate::index::KhiIndex;
use crate::model::{l2, RangePredicate, RfannsQuery};
use crate::tree::DimSet;

/// Order in which an object's tree path is scanned during neighbor
/// reconstruction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ReconOrder {
    #[default]
    LeafToRoot,
    RootToLeaf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryParams {
    pub k: usize,
    pub ef: usize,
    /// Entry-point budget `c_e`.
    pub entry_budget: usize,
    /// Neighbor budget `c_n`.
    pub neighbor_budget: usize,
    pub recon_order: ReconOrder,
}

impl QueryParams {
    /// Defaults `c_e = k` and `c_n = max_degree`.
    pub fn new(k: usize, ef: usize, max_degree: usize) -> Self {
        Self {
            k,
            ef,
            entry_budget: k,
            neighbor_budget: max_degree,
            recon_order: ReconOrder::LeafToRoot,
        }
    }

    pub fn with_ef(self, ef: usize) -> Self {
        Self { ef, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.ef < self.k {
            return Err(KhiError::InvalidParam(format!(
                "need ef >= k >= 1, got k = {}, ef = {}",
                self.k, self.ef
            )));
        }
        if self.entry_budget == 0 || self.neighbor_budget == 0 {
            return Err(KhiError::InvalidParam("c_e and c_n must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchStats {
    pub dist_comps: u64,
    pub hops: u64,
}

impl std::ops::AddAssign for SearchStats {
    fn add_assign(&mut self, rhs: Self) {
        self.dist_comps += rhs.dist_comps;
        self.hops += rhs.hops;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutput {
    /// Ascending by distance, ties by id.
    pub neighbors: Vec<Neighbor>,
    pub stats: SearchStats,
}

impl SearchOutput {
    pub fn ids(&self) -> Vec<u32> {
        self.neighbors.iter().map(|n| n.id).collect()
    }
}

/// Per-search scratch space; reuse it across queries on one thread.
#[derive(Debug, Clone)]
pub struct SearchState {
    visited: VisitedSet,
    frontier: BinaryHeap<Reverse<Ranked>>,
    results: BinaryHeap<Ranked>,
    recon: Vec<u32>,
    path: Vec<u32>,
}

impl SearchState {
    pub fn new(object_count: usize) -> Self {
        Self {
            visited: VisitedSet::new(object_count),
            frontier: BinaryHeap::new(),
            results: BinaryHeap::new(),
            recon: Vec::new(),
            path: Vec::new(),
        }
    }

    fn reset(&mut self, object_count: usize) {
        self.visited.reset(object_count);
        self.frontier.clear();
        self.results.clear();
    }

    pub fn visited(&self) -> &VisitedSet {
        &self.visited
    }
}

/// Receives the distance threshold after every hop.
pub trait HopObserver {
    /// `threshold` is the distance from the query to the farthest retained
    /// result; `filled` is true once the result heap holds `ef` entries.
    fn on_hop(&mut self, hop: u64, threshold: f32, filled: bool);
}

impl HopObserver for () {
    #[inline]
    fn on_hop(&mut self, _: u64, _: f32, _: bool) {}
}

impl KhiIndex {
    /// Picks up to `entry_budget` in-range entry points, at most one per
    /// tree node whose region is resolved against the predicate on every
    /// dimension.
    pub fn range_filter(&self, predicate: &RangePredicate, entry_budget: usize) -> Vec<u32> {
        let tree = &self.tree;
        let m = tree.attr_count();
        let mut chosen: Vec<u32> = Vec::new();
        let mut stack: Vec<(u32, DimSet)> = vec![(0, DimSet::EMPTY)];
        while chosen.len() < entry_budget {
            let Some((id, covered)) = stack.pop() else {
                break;
            };
            let node = tree.node(id);
            let covered = covered.union(node.excluded);
            if covered.len() == m {
                chosen.push(id);
                continue;
            }
            let (Some(dim), Some(l), Some(r)) = (node.split_dim, node.left, node.right) else {
                continue;
            };
            if covered.contains(dim) {
                stack.push((l, covered));
                stack.push((r, covered));
                continue;
            }
            let wanted = predicate.interval(dim);
            for child in [l, r] {
                let extent = tree.node(child).region[dim];
                if extent.disjoint_from(&wanted) {
                    continue;
                }
                if extent.within(&wanted) {
                    stack.push((child, covered.with(dim)));
                } else {
                    stack.push((child, covered));
                }
            }
        }

        let mut entries: Vec<u32> = chosen
            .iter()
            .filter_map(|&p| {
                tree.slice(p)
                    .iter()
                    .copied()
                    .find(|&o| predicate.matches(self.dataset.tuple(o)))
            })
            .collect();
        if entries.is_empty() {
            entries = self.fallback_entries(predicate, entry_budget);
        }
        entries
    }

    /// Linear scan of the leaves whose regions intersect the predicate.
    fn fallback_entries(&self, predicate: &RangePredicate, budget: usize) -> Vec<u32> {
        let tree = &self.tree;
        let mut out = Vec::new();
        let mut stack = vec![0u32];
        while let Some(id) = stack.pop() {
            let node = tree.node(id);
            let intersects = predicate
                .constrained()
                .iter()
                .all(|&d| !node.region[d].disjoint_from(&predicate.interval(d)));
            if !intersects {
                continue;
            }
            match (node.left, node.right) {
                (Some(l), Some(r)) => {
                    stack.push(r);
                    stack.push(l);
                }
                _ => {
                    for &o in tree.slice(id) {
                        if predicate.matches(self.dataset.tuple(o)) {
                            out.push(o);
                            if out.len() >= budget {
                                return out;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Collects up to `neighbor_budget` unvisited in-range neighbors of
    /// `object` from the graphs along its tree path. Every unvisited
    /// neighbor examined is marked visited, in range or not.
    pub fn recons_nbr(
        &self,
        object: u32,
        predicate: &RangePredicate,
        neighbor_budget: usize,
        order: ReconOrder,
        visited: &mut VisitedSet,
        out: &mut Vec<u32>,
    ) {
        let mut path = Vec::with_capacity(self.tree.height());
        self.collect_path(object, order, &mut path);
        self.recons_along(object, &path, predicate, neighbor_budget, visited, out);
    }

    fn collect_path(&self, object: u32, order: ReconOrder, path: &mut Vec<u32>) {
        path.clear();
        let mut cur = Some(self.tree.leaf_of(object));
        while let Some(id) = cur {
            path.push(id);
            cur = self.tree.node(id).parent;
        }
        if order == ReconOrder::RootToLeaf {
            path.reverse();
        }
    }

    fn recons_along(
        &self,
        object: u32,
        path: &[u32],
        predicate: &RangePredicate,
        neighbor_budget: usize,
        visited: &mut VisitedSet,
        out: &mut Vec<u32>,
    ) {
        out.clear();
        let pos = self.tree.position(object);
        for &p in path {
            for nb in self.graphs[p as usize].neighbors_at(pos) {
                if !visited.insert(nb.id as usize) {
                    continue;
                }
                if !predicate.matches(self.dataset.tuple(nb.id)) {
                    continue;
                }
                out.push(nb.id);
                if out.len() == neighbor_budget {
                    return;
                }
            }
        }
    }

    /// Range-filtered k-NN search. Every returned object satisfies the
    /// query predicate.
    pub fn search(&self, query: &RfannsQuery, params: &QueryParams) -> Result<SearchOutput> {
        let mut state = SearchState::new(self.len());
        self.search_with(query, params, &mut state)
    }

    pub fn search_with(
        &self,
        query: &RfannsQuery,
        params: &QueryParams,
        state: &mut SearchState,
    ) -> Result<SearchOutput> {
        self.search_observed(query, params, state, &mut ())
    }

    /// [`KhiIndex::search`] reporting the distance threshold after each hop.
    pub fn search_observed<O: HopObserver>(
        &self,
        query: &RfannsQuery,
        params: &QueryParams,
        state: &mut SearchState,
        observer: &mut O,
    ) -> Result<SearchOutput> {
        params.validate()?;
        if query.vector.len() != self.dataset.dim() {
            return Err(KhiError::Dimension {
                expected: self.dataset.dim(),
                actual: query.vector.len(),
            });
        }
        if query.predicate.attr_count() != self.dataset.attr_count() {
            return Err(KhiError::Dimension {
                expected: self.dataset.attr_count(),
                actual: query.predicate.attr_count(),
            });
        }
        state.reset(self.len());
        let SearchState {
            visited,
            frontier,
            results,
            recon,
            path,
        } = state;
        let q = query.vector.as_slice();
        let pred = &query.predicate;
        let ef = params.ef;
        let mut stats = SearchStats::default();

        for o in self.range_filter(pred, params.entry_budget) {
            if !visited.insert(o as usize) {
                continue;
            }
            let n = Neighbor::new(o, l2(q, self.dataset.vector(o)));
            stats.dist_comps += 1;
            results.push(Ranked(n));
            frontier.push(Reverse(Ranked(n)));
            if results.len() > ef {
                results.pop();
            }
        }

        while let Some(&Reverse(Ranked(best))) = frontier.peek() {
            let worst = results.peek().map(|r| r.0.dist).unwrap_or(f32::INFINITY);
            if results.len() >= ef && best.dist > worst {
                break;
            }
            frontier.pop();
            self.collect_path(best.id, params.recon_order, path);
            self.recons_along(best.id, path, pred, params.neighbor_budget, visited, recon);
            for &v in recon.iter() {
                let n = Neighbor::new(v, l2(q, self.dataset.vector(v)));
                stats.dist_comps += 1;
                results.push(Ranked(n));
                frontier.push(Reverse(Ranked(n)));
                if results.len() > ef {
                    results.pop();
                }
            }
            stats.hops += 1;
            let threshold = results.peek().map(|r| r.0.dist).unwrap_or(f32::INFINITY);
            observer.on_hop(stats.hops, threshold, results.len() >= ef);
        }

        let mut neighbors: Vec<Neighbor> = std::mem::take(results)
            .into_sorted_vec()
            .into_iter()
            .map(|r| r.0)
            .collect();
        neighbors.truncate(params.k);
        Ok(SearchOutput { neighbors, stats })
    }
}
