//! Recall/throughput sweeps over `ef` and per-hop distance-threshold traces.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{KhiError, Result};
use crate::index::KhiIndex;
use crate::model::RfannsQuery;
use crate::oracle::{prefilter_knn, recall, TruthEntry};
use crate::query::{HopObserver, QueryParams, ReconOrder, SearchState, SearchStats};

/// One measured configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchPoint {
    pub ef: usize,
    pub recall: f64,
    pub qps: f64,
    /// Mean distance computations per query.
    pub dist_comps: f64,
    /// Mean hops per query.
    pub hops: f64,
    pub threads: usize,
}

/// Anything that answers range-filtered queries at a given `ef`.
pub trait RangeSearcher: Sync {
    type State: Send;

    fn new_state(&self) -> Self::State;

    fn run(&self, query: &RfannsQuery, ef: usize, state: &mut Self::State) -> Result<(Vec<u32>, SearchStats)>;
}

/// The graph index with fixed entry and neighbor budgets.
#[derive(Debug, Clone, Copy)]
pub struct KhiSearcher<'a> {
    pub index: &'a KhiIndex,
    /// `c_e`; `None` uses the query's `k`.
    pub entry_budget: Option<usize>,
    /// `c_n`; `None` uses the index's `M`.
    pub neighbor_budget: Option<usize>,
    pub recon_order: ReconOrder,
}

impl<'a> KhiSearcher<'a> {
    pub fn new(index: &'a KhiIndex) -> Self {
        Self {
            index,
            entry_budget: None,
            neighbor_budget: None,
            recon_order: ReconOrder::default(),
        }
    }

    pub fn params(&self, k: usize, ef: usize) -> QueryParams {
        QueryParams {
            k,
            ef,
            entry_budget: self.entry_budget.unwrap_or(k),
            neighbor_budget: self.neighbor_budget.unwrap_or(self.index.params().graph.max_degree),
            recon_order: self.recon_order,
        }
    }
}

impl RangeSearcher for KhiSearcher<'_> {
    type State = SearchState;

    fn new_state(&self) -> SearchState {
        SearchState::new(self.index.len())
    }

    fn run(&self, query: &RfannsQuery, ef: usize, state: &mut SearchState) -> Result<(Vec<u32>, SearchStats)> {
        let out = self.index.search_with(query, &self.params(query.k, ef), state)?;
        Ok((out.ids(), out.stats))
    }
}

/// Exact prefiltering scan. `ef` is ignored; its distance counter equals
/// `|O_B|`.
#[derive(Debug, Clone, Copy)]
pub struct Prefilter<'a> {
    pub dataset: &'a crate::model::Dataset,
}

impl RangeSearcher for Prefilter<'_> {
    type State = ();

    fn new_state(&self) {}

    fn run(&self, query: &RfannsQuery, _ef: usize, _: &mut ()) -> Result<(Vec<u32>, SearchStats)> {
        let t = prefilter_knn(self.dataset, query);
        let stats = SearchStats {
            dist_comps: t.filtered_count as u64,
            hops: 0,
        };
        Ok((t.ids(), stats))
    }
}

fn run_batch<S: RangeSearcher>(
    searcher: &S,
    queries: &[RfannsQuery],
    ef: usize,
) -> Result<Vec<(Vec<u32>, SearchStats)>> {
    queries
        .par_iter()
        .map_init(|| searcher.new_state(), |state, q| searcher.run(q, ef, state))
        .collect()
}

/// Runs every query once per `ef` after an untimed warm-up batch, timing
/// the whole batch on a pool of `threads` workers.
pub fn run_bench<S: RangeSearcher>(
    searcher: &S,
    queries: &[RfannsQuery],
    truth: &[TruthEntry],
    ef_list: &[usize],
    threads: usize,
) -> Result<Vec<BenchPoint>> {
    if queries.len() != truth.len() {
        return Err(KhiError::Input(format!(
            "{} queries but {} ground-truth entries",
            queries.len(),
            truth.len()
        )));
    }
    if queries.is_empty() || ef_list.is_empty() {
        return Err(KhiError::Input("need at least one query and one ef value".into()));
    }
    if ef_list.windows(2).any(|w| w[0] > w[1]) {
        return Err(KhiError::Input(format!("ef list must be ascending: {ef_list:?}")));
    }
    let max_k = queries.iter().map(|q| q.k).max().unwrap_or(0);
    if ef_list[0] < max_k {
        return Err(KhiError::Input(format!(
            "smallest ef {} is below k = {max_k}",
            ef_list[0]
        )));
    }
    if threads == 0 {
        return Err(KhiError::InvalidParam("threads must be >= 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| KhiError::InvalidParam(format!("thread pool: {e}")))?;

    let mut points = Vec::with_capacity(ef_list.len());
    for &ef in ef_list {
        pool.install(|| run_batch(searcher, queries, ef))?;
        let started = Instant::now();
        let results = pool.install(|| run_batch(searcher, queries, ef))?;
        let elapsed = started.elapsed().as_secs_f64().max(1e-9);

        let count = queries.len() as f64;
        let mut total = SearchStats::default();
        let mut recall_sum = 0.0;
        for ((ids, stats), (q, t)) in results.iter().zip(queries.iter().zip(truth)) {
            recall_sum += recall(ids, t, q.k);
            total += *stats;
        }
        points.push(BenchPoint {
            ef,
            recall: recall_sum / count,
            qps: count / elapsed,
            dist_comps: total.dist_comps as f64 / count,
            hops: total.hops as f64 / count,
            threads,
        });
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    /// 1-based hop index.
    pub hop: u64,
    /// Distance from the query to the farthest retained result.
    pub threshold: f32,
    /// Whether the result set held `ef` entries after this hop.
    pub filled: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HopTrace {
    pub points: Vec<TracePoint>,
}

impl HopTrace {
    /// Index into `points` of the first hop after which the result set was
    /// full.
    pub fn first_filled(&self) -> Option<usize> {
        self.points.iter().position(|p| p.filled)
    }

    /// True when the threshold never increases once the result set is full.
    pub fn is_monotone_after_fill(&self) -> bool {
        match self.first_filled() {
            None => true,
            Some(i) => self.points[i..].windows(2).all(|w| w[1].threshold <= w[0].threshold),
        }
    }

    pub fn threshold_at(&self, hop: u64) -> Option<f32> {
        self.points.iter().find(|p| p.hop == hop).map(|p| p.threshold)
    }
}

impl HopObserver for HopTrace {
    fn on_hop(&mut self, hop: u64, threshold: f32, filled: bool) {
        self.points.push(TracePoint { hop, threshold, filled });
    }
}

/// Runs the same traversal as [`KhiIndex::search`], recording the threshold
/// after every hop.
pub fn hop_trace(index: &KhiIndex, query: &RfannsQuery, params: &QueryParams) -> Result<HopTrace> {
    let mut trace = HopTrace::default();
    let mut state = SearchState::new(index.len());
    index.search_observed(query, params, &mut state, &mut trace)?;
    Ok(trace)
}

/// `%g`-style formatting with six significant digits.
pub fn format_g6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub const BENCH_CSV_HEADER: &str = "ef,recall,qps,dist_comps,hops,threads";
pub const TRACE_CSV_HEADER: &str = "query_id,hop,threshold";

pub fn write_bench_csv(points: &[BenchPoint], w: &mut impl Write) -> Result<()> {
    writeln!(w, "{BENCH_CSV_HEADER}")?;
    for p in points {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            p.ef,
            format_g6(p.recall),
            format_g6(p.qps),
            format_g6(p.dist_comps),
            format_g6(p.hops),
            p.threads
        )?;
    }
    Ok(())
}

/// Writes `(query id, trace)` pairs as one row per hop.
pub fn write_trace_csv(traces: &[(usize, HopTrace)], w: &mut impl Write) -> Result<()> {
    writeln!(w, "{TRACE_CSV_HEADER}")?;
    for (qid, trace) in traces {
        for p in &trace.points {
            writeln!(w, "{qid},{},{}", p.hop, format_g6(p.threshold as f64))?;
        }
    }
    Ok(())
}
