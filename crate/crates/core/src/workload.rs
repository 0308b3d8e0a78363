//! Query workload generation with a target predicate selectivity.
//!
//! Intervals are placed in quantile space of a sample of the attribute
//! tuples. Every constrained attribute starts with quantile width
//! `sigma^(1/|J|)` around a uniformly drawn quantile position; a shared
//! width scale is then bisected until the exact selectivity over the full
//! dataset lands in `[sigma (1 - tol), sigma (1 + tol)]`.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{KhiError, Result};
use crate::model::{normalize_predicate, Dataset, Interval, RangePredicate, RfannsQuery};

pub const DEFAULT_TOL: f64 = 0.5;
pub const DEFAULT_SAMPLE_SIZE: usize = 100_000;
const MAX_BISECTION_STEPS: usize = 64;
const MAX_RETRIES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkloadSpec {
    pub query_count: usize,
    pub sigma: f64,
    pub tol: f64,
    /// Number of constrained attributes `|B|`.
    pub cardinality: usize,
    /// Tuples sampled for quantile estimation; `None` means
    /// `min(100_000, n)`.
    pub sample_size: Option<usize>,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn new(query_count: usize, sigma: f64, cardinality: usize, seed: u64) -> Self {
        Self {
            query_count,
            sigma,
            tol: DEFAULT_TOL,
            cardinality,
            sample_size: None,
            seed,
        }
    }

    pub fn validate(&self, attr_count: usize) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma <= 1.0) {
            return Err(KhiError::InvalidParam(format!(
                "sigma must be in (0, 1], got {}",
                self.sigma
            )));
        }
        if !(0.0..1.0).contains(&self.tol) {
            return Err(KhiError::InvalidParam(format!(
                "tol must be in [0, 1), got {}",
                self.tol
            )));
        }
        if self.cardinality == 0 || self.cardinality > attr_count {
            return Err(KhiError::InvalidParam(format!(
                "cardinality must be in 1..={attr_count}, got {}",
                self.cardinality
            )));
        }
        Ok(())
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.sigma * (1.0 - self.tol), self.sigma * (1.0 + self.tol))
    }
}

/// Per-attribute sorted values of a tuple sample.
#[derive(Debug, Clone)]
pub struct QuantileSample {
    columns: Vec<Vec<f64>>,
}

impl QuantileSample {
    pub fn build(dataset: &Dataset, sample_size: usize, rng: &mut impl Rng) -> Self {
        let n = dataset.len();
        let take = sample_size.min(n).max(1);
        let rows = index::sample(rng, n, take);
        let columns = (0..dataset.attr_count())
            .map(|d| {
                let mut col: Vec<f64> = rows
                    .iter()
                    .map(|r| dataset.attr(r as u32, d))
                    .filter(|v| v.is_finite())
                    .collect();
                col.sort_by(f64::total_cmp);
                col
            })
            .collect();
        Self { columns }
    }

    /// Sample value at quantile `q` of attribute `attr`.
    pub fn quantile(&self, attr: usize, q: f64) -> f64 {
        let col = &self.columns[attr];
        let idx = (q.clamp(0.0, 1.0) * (col.len() - 1) as f64).round() as usize;
        col[idx]
    }
}

/// Fraction of `dataset` satisfying `predicate`.
pub fn selectivity(dataset: &Dataset, predicate: &RangePredicate) -> f64 {
    let hits = (0..dataset.len() as u32)
        .filter(|&o| predicate.matches(dataset.tuple(o)))
        .count();
    hits as f64 / dataset.len() as f64
}

fn predicate_at(
    sample: &QuantileSample,
    attrs: &[usize],
    centres: &[f64],
    base_width: f64,
    scale: f64,
    attr_count: usize,
) -> Result<RangePredicate> {
    let w = (scale * base_width).min(1.0);
    let raw: Vec<(usize, Interval)> = attrs
        .iter()
        .zip(centres)
        .map(|(&a, &c)| {
            let lo_q = (c - w / 2.0).clamp(0.0, 1.0 - w);
            let hi_q = lo_q + w;
            let lo = if lo_q <= 0.0 {
                f64::NEG_INFINITY
            } else {
                sample.quantile(a, lo_q)
            };
            let hi = if hi_q >= 1.0 {
                f64::INFINITY
            } else {
                sample.quantile(a, hi_q)
            };
            (a, Interval::new(lo, hi))
        })
        .collect();
    normalize_predicate(&raw, attr_count)
}

/// Draws one predicate whose exact selectivity over `dataset` is within the
/// workload's tolerance band.
pub fn gen_predicate(
    dataset: &Dataset,
    sample: &QuantileSample,
    spec: &WorkloadSpec,
    rng: &mut impl Rng,
) -> Result<RangePredicate> {
    let m = dataset.attr_count();
    spec.validate(m)?;
    if dataset.is_empty() {
        return Err(KhiError::Input(
            "cannot generate predicates over an empty dataset".into(),
        ));
    }
    let mut attrs: Vec<usize> = if spec.cardinality < m {
        index::sample(rng, m, spec.cardinality).into_vec()
    } else {
        (0..m).collect()
    };
    attrs.sort_unstable();
    let (lower, upper) = spec.bounds();
    let base_width = spec.sigma.powf(1.0 / attrs.len() as f64);

    for _ in 0..MAX_RETRIES {
        let centres: Vec<f64> = attrs.iter().map(|_| rng.random::<f64>()).collect();
        let (mut lo_s, mut hi_s) = (0.0, 1.0 / base_width);
        let mut scale = 1.0;
        for _ in 0..MAX_BISECTION_STEPS {
            let pred = predicate_at(sample, &attrs, &centres, base_width, scale, m)?;
            let sel = selectivity(dataset, &pred);
            if sel >= lower && sel <= upper {
                return Ok(pred);
            }
            if sel < lower {
                lo_s = scale;
            } else {
                hi_s = scale;
            }
            scale = 0.5 * (lo_s + hi_s);
        }
    }
    Err(KhiError::GenerationFailed {
        attributes: attrs,
        retries: MAX_RETRIES,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadEntry {
    /// Row of the query-vector file this query uses.
    pub query_index: usize,
    pub predicate: RangePredicate,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Workload {
    pub entries: Vec<WorkloadEntry>,
}

impl Workload {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Pairs entries with their query vectors.
    pub fn queries(&self, query_vectors: &[Vec<f32>], k: usize) -> Result<Vec<RfannsQuery>> {
        self.entries
            .iter()
            .map(|e| {
                let vector = query_vectors.get(e.query_index).ok_or_else(|| {
                    KhiError::Input(format!(
                        "workload references query vector {} but only {} exist",
                        e.query_index,
                        query_vectors.len()
                    ))
                })?;
                Ok(RfannsQuery {
                    vector: vector.clone(),
                    predicate: e.predicate.clone(),
                    k,
                })
            })
            .collect()
    }
}

/// Generates `spec.query_count` queries, query `i` using vector
/// `i % query_vectors.len()`. Each query draws from its own ChaCha stream,
/// so the output depends only on the dataset, the `WorkloadSpec` and its seed.
pub fn gen_workload(dataset: &Dataset, query_vectors: &[Vec<f32>], spec: &WorkloadSpec) -> Result<Workload> {
    spec.validate(dataset.attr_count())?;
    if spec.query_count == 0 {
        return Ok(Workload::default());
    }
    if query_vectors.is_empty() {
        return Err(KhiError::Input("no query vectors provided".into()));
    }
    if let Some(v) = query_vectors.iter().find(|v| v.len() != dataset.dim()) {
        return Err(KhiError::Dimension {
            expected: dataset.dim(),
            actual: v.len(),
        });
    }
    let mut sample_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sample_size = spec.sample_size.unwrap_or(DEFAULT_SAMPLE_SIZE);
    let sample = QuantileSample::build(dataset, sample_size, &mut sample_rng);

    let entries = (0..spec.query_count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64 + 1);
            let predicate = gen_predicate(dataset, &sample, spec, &mut rng)?;
            Ok(WorkloadEntry {
                query_index: i % query_vectors.len(),
                predicate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Workload { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ObjectSchema;
    use crate::synthetic::{self, AttrDistribution};

    fn brute_count(ds: &Dataset, p: &RangePredicate) -> usize {
        (0..ds.len() as u32)
            .filter(|&o| {
                let t = ds.tuple(o);
                (0..t.len()).all(|a| t[a] >= p.interval(a).lo && t[a] <= p.interval(a).hi)
            })
            .count()
    }

    #[test]
    fn full_selectivity_gives_full_domain() {
        let ds = synthetic::dataset(500, 2, 3, AttrDistribution::Uniform, 1);
        let spec = WorkloadSpec {
            tol: 0.0,
            ..WorkloadSpec::new(1, 1.0, 3, 4)
        };
        let w = gen_workload(&ds, &[vec![0.0; 2]], &spec).unwrap();
        let p = &w.entries[0].predicate;
        assert!(p.intervals().iter().all(Interval::is_full));
        assert_eq!(selectivity(&ds, p), 1.0);
    }

    #[test]
    fn sigma_one_sixteenth_bounds() {
        let spec = WorkloadSpec::new(1, 1.0 / 16.0, 2, 0);
        assert_eq!(spec.bounds(), (0.03125, 0.09375));
    }

    #[test]
    fn selectivities_within_band_by_brute_force() {
        let ds = synthetic::dataset(10_000, 2, 4, AttrDistribution::Uniform, 2);
        let qv = vec![vec![0.0; 2]; 7];
        for (sigma, card) in [(1.0 / 64.0, 4), (1.0 / 16.0, 2), (1.0 / 256.0, 3)] {
            let spec = WorkloadSpec::new(100, sigma, card, 99);
            let w = gen_workload(&ds, &qv, &spec).unwrap();
            assert_eq!(w.len(), 100);
            let (lo, hi) = spec.bounds();
            for (i, e) in w.entries.iter().enumerate() {
                assert_eq!(e.query_index, i % 7);
                assert_eq!(e.predicate.cardinality(), card);
                let sel = brute_count(&ds, &e.predicate) as f64 / ds.len() as f64;
                assert!(sel >= lo && sel <= hi, "sigma {sigma}: selectivity {sel}");
            }
        }
    }

    #[test]
    fn empty_and_deterministic() {
        let ds = synthetic::dataset(2_000, 2, 2, AttrDistribution::Gaussian, 3);
        let qv = vec![vec![0.0; 2]];
        assert!(gen_workload(&ds, &qv, &WorkloadSpec::new(0, 0.1, 2, 1))
            .unwrap()
            .is_empty());
        let spec = WorkloadSpec::new(20, 1.0 / 16.0, 1, 42);
        assert_eq!(
            gen_workload(&ds, &qv, &spec).unwrap(),
            gen_workload(&ds, &qv, &spec).unwrap()
        );
        let other = WorkloadSpec { seed: 43, ..spec };
        assert_ne!(
            gen_workload(&ds, &qv, &spec).unwrap(),
            gen_workload(&ds, &qv, &other).unwrap()
        );
    }

    #[test]
    fn duplicate_mass_fails_cleanly() {
        // half the objects share one value, the rest another: 1/16 is unreachable
        let n = 1000;
        let attrs: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { 2.0 }).collect();
        let ds = Dataset::new(ObjectSchema::new(1, 1).unwrap(), vec![0.0; n], attrs).unwrap();
        let err = gen_workload(&ds, &[vec![0.0]], &WorkloadSpec::new(1, 1.0 / 16.0, 1, 0)).unwrap_err();
        assert!(matches!(err, KhiError::GenerationFailed { ref attributes, .. } if attributes == &[0]));
    }

    #[test]
    fn invalid_specs() {
        let ds = synthetic::dataset(10, 2, 2, AttrDistribution::Uniform, 0);
        let qv = vec![vec![0.0; 2]];
        assert!(gen_workload(&ds, &qv, &WorkloadSpec::new(1, 0.0, 1, 0)).is_err());
        assert!(gen_workload(&ds, &qv, &WorkloadSpec::new(1, 0.5, 3, 0)).is_err());
        let bad_tol = WorkloadSpec {
            tol: 1.0,
            ..WorkloadSpec::new(1, 0.5, 1, 0)
        };
        assert!(gen_workload(&ds, &qv, &bad_tol).is_err());
    }
}
