//! Exact baselines: prefiltered linear-scan k-NN and recall.

use std::collections::{BinaryHeap, HashSet};

use crate::graph::{Neighbor, Ranked};
use crate::model::{l2, Dataset, RfannsQuery};

/// Exact answer for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthEntry {
    /// The `min(k, |O_B|)` nearest in-range objects, ascending by
    /// `(distance, id)`.
    pub neighbors: Vec<Neighbor>,
    /// `|O_B|`.
    pub filtered_count: usize,
}

impl TruthEntry {
    pub fn ids(&self) -> Vec<u32> {
        self.neighbors.iter().map(|n| n.id).collect()
    }
}

/// Ground truth for a whole workload, aligned with its query order.
pub type GroundTruth = Vec<TruthEntry>;

/// Scans every object once, computing distances only for those inside the
/// predicate. The number of distance computations equals `filtered_count`.
pub fn prefilter_knn(dataset: &Dataset, query: &RfannsQuery) -> TruthEntry {
    let k = query.k;
    let mut heap: BinaryHeap<Ranked> = BinaryHeap::with_capacity(k + 1);
    let mut filtered_count = 0;
    for id in 0..dataset.len() as u32 {
        if !query.predicate.matches(dataset.tuple(id)) {
            continue;
        }
        filtered_count += 1;
        let n = Neighbor::new(id, l2(&query.vector, dataset.vector(id)));
        if heap.len() < k {
            heap.push(Ranked(n));
        } else if heap.peek().is_some_and(|worst| Ranked(n) < *worst) {
            heap.pop();
            heap.push(Ranked(n));
        }
    }
    TruthEntry {
        neighbors: heap.into_sorted_vec().into_iter().map(|r| r.0).collect(),
        filtered_count,
    }
}

pub fn ground_truth(dataset: &Dataset, queries: &[RfannsQuery]) -> GroundTruth {
    use rayon::prelude::*;
    queries.par_iter().map(|q| prefilter_knn(dataset, q)).collect()
}

/// `|result ∩ truth| / min(k, |O_B|)`; 1.0 when nothing is in range.
pub fn recall(result: &[u32], truth: &TruthEntry, k: usize) -> f64 {
    let denom = k.min(truth.filtered_count);
    if denom == 0 {
        return 1.0;
    }
    let wanted: HashSet<u32> = truth.neighbors.iter().take(denom).map(|n| n.id).collect();
    let hits = result
        .iter()
        .take(k)
        .collect::<HashSet<_>>()
        .into_iter()
        .filter(|id| wanted.contains(id))
        .count();
    hits as f64 / denom as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{normalize_predicate, Interval, RangePredicate};
    use crate::synthetic::{self, AttrDistribution, EXAMPLE_QUERY};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn truth(ids: &[u32], filtered: usize) -> TruthEntry {
        TruthEntry {
            neighbors: ids.iter().map(|&i| Neighbor::new(i, i as f32)).collect(),
            filtered_count: filtered,
        }
    }

    #[test]
    fn example_query_truth() {
        let ds = synthetic::eight_object_example();
        let pred = normalize_predicate(&[(0, Interval::new(3.0, 4.0)), (1, Interval::new(4.0, 6.0))], 2).unwrap();
        let q = RfannsQuery {
            vector: EXAMPLE_QUERY.to_vec(),
            predicate: pred,
            k: 2,
        };
        let t = prefilter_knn(&ds, &q);
        assert_eq!(t.filtered_count, 4);
        let mut ids = t.ids();
        ids.sort_unstable();
        assert_eq!(ids, vec![2, 3]);
    }

    #[test]
    fn empty_predicate_match() {
        let ds = synthetic::eight_object_example();
        let pred = normalize_predicate(&[(1, Interval::new(100.0, 101.0))], 2).unwrap();
        let t = prefilter_knn(
            &ds,
            &RfannsQuery {
                vector: vec![0.0, 0.0],
                predicate: pred,
                k: 3,
            },
        );
        assert!(t.neighbors.is_empty());
        assert_eq!(t.filtered_count, 0);
    }

    #[test]
    fn recall_conventions() {
        assert_eq!(recall(&[1, 2, 3], &truth(&[1, 2, 3], 50), 3), 1.0);
        assert_eq!(recall(&[4, 5, 6], &truth(&[1, 2, 3], 50), 3), 0.0);
        assert_eq!(recall(&[], &truth(&[], 0), 10), 1.0);
        // k = 10, |O_B| = 6, 5 of the 6 true ids returned
        let r = recall(&[1, 2, 3, 4, 5, 99], &truth(&[1, 2, 3, 4, 5, 6], 6), 10);
        assert!((r - 5.0 / 6.0).abs() < 1e-12);
    }

    fn double_loop(ds: &Dataset, q: &[f32], pred: &RangePredicate, k: usize) -> (Vec<u32>, usize) {
        let mut inside = Vec::new();
        for i in 0..ds.len() {
            let t = ds.tuple(i as u32);
            let mut ok = true;
            for &a in pred.constrained() {
                let iv = pred.interval(a);
                if t[a] < iv.lo || t[a] > iv.hi {
                    ok = false;
                }
            }
            if ok {
                let mut s = 0.0f32;
                let v = ds.vector(i as u32);
                for j in 0..v.len() {
                    s += (v[j] - q[j]) * (v[j] - q[j]);
                }
                inside.push((s.sqrt(), i as u32));
            }
        }
        let count = inside.len();
        inside.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        (inside.into_iter().take(k).map(|p| p.1).collect(), count)
    }

    #[test]
    fn matches_independent_double_loop() {
        let ds = synthetic::dataset(10_000, 8, 3, AttrDistribution::Uniform, 77);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let raw: Vec<_> = (0..3)
                .map(|d| {
                    let lo = rng.random_range(0.0..700.0);
                    (d, Interval::new(lo, lo + 300.0))
                })
                .collect();
            let pred = normalize_predicate(&raw, 3).unwrap();
            let vector: Vec<f32> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
            let q = RfannsQuery {
                vector: vector.clone(),
                predicate: pred.clone(),
                k: 10,
            };
            let t = prefilter_knn(&ds, &q);
            let (ids, count) = double_loop(&ds, &vector, &pred, 10);
            assert_eq!(t.filtered_count, count);
            // distances can differ in the last ulp between the two loops, so compare as sets
            let mut a = t.ids();
            let mut b = ids;
            a.sort_unstable();
            b.sort_unstable();
            assert_eq!(a, b);
        }
    }

    proptest! {
        #[test]
        fn recall_is_permutation_invariant(mut ids in prop::collection::vec(0u32..30, 0..10), seed in 0u64..1000) {
            ids.sort_unstable();
            ids.dedup();
            let t = truth(&(0..10).collect::<Vec<_>>(), 20);
            let before = recall(&ids, &t, 10);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            use rand::seq::SliceRandom;
            ids.shuffle(&mut rng);
            prop_assert_eq!(before, recall(&ids, &t, 10));
            prop_assert!((0.0..=1.0).contains(&before));
        }
    }
}
