use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use khi::bench::{hop_trace, run_bench, write_bench_csv, write_trace_csv, KhiSearcher};
use khi::graph::GraphParams;
use khi::storage;
use khi::synthetic::{AttrDistribution, SyntheticSpec, VectorDistribution};
use khi::tree::TreeParams;
use khi::workload::{gen_workload, Workload, WorkloadSpec};
use khi::{build_index, build_report, ground_truth, BuildParams, Dataset, KhiIndex, ParallelMode, RfannsQuery};

#[derive(Parser)]
#[command(name = "khi", version, about = "Range-filtered approximate nearest neighbor index")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReconOrderArg {
    Leaf,
    Root,
}

#[derive(clap::Args)]
struct DatasetArgs {
    /// Vector file: u32 n, u32 d, then n*d little-endian f32.
    #[arg(long)]
    vectors: PathBuf,
    /// Attribute file: u32 n, u32 m, then n*m little-endian f64.
    #[arg(long)]
    attrs: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Build an index and write it to disk.
    Build {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        out: PathBuf,
        /// Maximum graph degree.
        #[arg(long = "M", default_value_t = 32)]
        max_degree: usize,
        #[arg(long, default_value_t = 32)]
        ef_build: usize,
        /// Split balance threshold.
        #[arg(long, default_value_t = 3.0)]
        tau: f64,
        #[arg(long, default_value_t = 2)]
        leaf_capacity: usize,
        /// Levels with fewer nodes switch to intra-node parallelism.
        #[arg(long, default_value_t = 100)]
        tau_p: usize,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Only parallelize across whole nodes; output matches a single-thread build.
        #[arg(long)]
        deterministic: bool,
    },
    /// Compute exact answers for a workload by prefiltered linear scan.
    Gt {
        #[command(flatten)]
        data: DatasetArgs,
        /// Query vector file.
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        workload: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate range predicates with a target selectivity.
    Genq {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        query_vectors: PathBuf,
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 0.5)]
        tol: f64,
        /// Number of constrained attributes; defaults to all.
        #[arg(long)]
        cardinality: Option<usize>,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Answer a workload and write `query_id,rank,id,distance` rows.
    Query {
        #[arg(long)]
        index: PathBuf,
        #[command(flatten)]
        data: DatasetArgs,
        /// Query vector file; without it workload indexes refer to --vectors.
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        workload: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        ef: usize,
        /// Entry-point budget; defaults to k.
        #[arg(long)]
        ce: Option<usize>,
        /// Neighbor budget; defaults to the index's M.
        #[arg(long)]
        cn: Option<usize>,
        #[arg(long, value_enum, default_value = "leaf")]
        recon_order: ReconOrderArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep ef and write recall/throughput rows as CSV.
    Bench {
        #[arg(long)]
        index: PathBuf,
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        workload: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, value_delimiter = ',', default_value = "16,32,64,128,256")]
        ef_list: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Record the distance threshold after every hop as CSV.
    Trace {
        #[arg(long)]
        index: PathBuf,
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        workload: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 300)]
        ef: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic dataset and query vectors.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        attrs: usize,
        /// uniform, gaussian or zipf:<exponent>
        #[arg(long, default_value = "uniform")]
        attr_dist: String,
        /// Number of Gaussian clusters; 0 draws i.i.d. Gaussian vectors.
        #[arg(long, default_value_t = 0)]
        clusters: usize,
        #[arg(long, default_value_t = 0.3)]
        spread: f32,
        #[arg(long, default_value_t = 100)]
        query_count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long)]
        attrs_out: PathBuf,
        #[arg(long)]
        queries: PathBuf,
    },
}

fn load_dataset(data: &DatasetArgs) -> Result<Dataset> {
    storage::load_dataset(&data.vectors, &data.attrs)
        .with_context(|| format!("loading {} and {}", data.vectors.display(), data.attrs.display()))
}

fn load_index(path: &Path, data: &DatasetArgs) -> Result<KhiIndex> {
    let dataset = load_dataset(data)?;
    storage::load_index(path, dataset).with_context(|| format!("loading index {}", path.display()))
}

fn load_queries(index: &KhiIndex, queries: Option<&Path>, workload: &Path, k: usize) -> Result<Vec<RfannsQuery>> {
    let vectors = match queries {
        Some(p) => storage::read_query_vectors(p).with_context(|| format!("reading {}", p.display()))?,
        None => {
            let ds = index.dataset();
            (0..ds.len() as u32).map(|i| ds.vector(i).to_vec()).collect()
        }
    };
    let workload = read_workload(workload, index.dataset().attr_count())?;
    Ok(workload.queries(&vectors, k)?)
}

fn read_workload(path: &Path, attr_count: usize) -> Result<Workload> {
    storage::read_workload(path, attr_count).with_context(|| format!("reading workload {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn parse_attr_dist(s: &str) -> Result<AttrDistribution> {
    match s {
        "uniform" => Ok(AttrDistribution::Uniform),
        "gaussian" => Ok(AttrDistribution::Gaussian),
        _ => match s.strip_prefix("zipf:") {
            Some(e) => Ok(AttrDistribution::Zipf(e.parse().context("zipf exponent")?)),
            None => bail!("unknown attribute distribution {s:?}"),
        },
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Build {
            data,
            out,
            max_degree,
            ef_build,
            tau,
            leaf_capacity,
            tau_p,
            threads,
            deterministic,
        } => {
            let dataset = load_dataset(&data)?;
            let params = BuildParams {
                tree: TreeParams::new(tau, leaf_capacity)?,
                graph: GraphParams::new(max_degree, ef_build)?,
                tau_p,
                threads,
                mode: if deterministic {
                    ParallelMode::Deterministic
                } else {
                    ParallelMode::Fast
                },
            };
            let index = build_index(dataset, params)?;
            storage::save_index(&index, &out)?;
            let report = build_report(&index);
            println!(
                "built {} objects: height {}, {} nodes, {} edges, {:.2}s; tree {} bytes, graphs {} bytes",
                index.len(),
                report.height,
                index.tree().nodes().len(),
                report.edge_count,
                report.build_seconds.unwrap_or_default(),
                report.tree_bytes,
                report.graph_bytes
            );
        }
        Command::Gt {
            data,
            queries,
            workload,
            k,
            out,
        } => {
            let dataset = load_dataset(&data)?;
            let vectors = storage::read_query_vectors(&queries)?;
            let queries = read_workload(&workload, dataset.attr_count())?.queries(&vectors, k)?;
            let truth = ground_truth(&dataset, &queries);
            storage::save_ground_truth(&truth, &out)?;
            println!("wrote exact answers for {} queries", truth.len());
        }
        Command::Genq {
            data,
            query_vectors,
            sigma,
            tol,
            cardinality,
            count,
            seed,
            out,
        } => {
            let dataset = load_dataset(&data)?;
            let vectors = storage::read_query_vectors(&query_vectors)?;
            let spec = WorkloadSpec {
                query_count: count,
                sigma,
                tol,
                cardinality: cardinality.unwrap_or(dataset.attr_count()),
                sample_size: None,
                seed,
            };
            let workload = gen_workload(&dataset, &vectors, &spec)?;
            storage::save_workload(&workload, &out)?;
            println!("wrote {} predicates", workload.len());
        }
        Command::Query {
            index,
            data,
            queries,
            workload,
            k,
            ef,
            ce,
            cn,
            recon_order,
            out,
        } => {
            let index = load_index(&index, &data)?;
            let queries = load_queries(&index, queries.as_deref(), &workload, k)?;
            let searcher = KhiSearcher {
                index: &index,
                entry_budget: ce,
                neighbor_budget: cn,
                recon_order: match recon_order {
                    ReconOrderArg::Leaf => khi::ReconOrder::LeafToRoot,
                    ReconOrderArg::Root => khi::ReconOrder::RootToLeaf,
                },
            };
            let params = searcher.params(k, ef);
            let mut state = khi::SearchState::new(index.len());
            let mut w = create(&out)?;
            writeln!(w, "query_id,rank,id,distance")?;
            for (qid, q) in queries.iter().enumerate() {
                let result = index.search_with(q, &params, &mut state)?;
                for (rank, nb) in result.neighbors.iter().enumerate() {
                    writeln!(w, "{qid},{rank},{},{}", nb.id, nb.dist)?;
                }
            }
            w.flush()?;
        }
        Command::Bench {
            index,
            data,
            queries,
            workload,
            gt,
            k,
            ef_list,
            threads,
            out,
        } => {
            let index = load_index(&index, &data)?;
            let queries = load_queries(&index, queries.as_deref(), &workload, k)?;
            let truth = storage::read_ground_truth(&gt)?;
            let points = run_bench(&KhiSearcher::new(&index), &queries, &truth, &ef_list, threads)?;
            let mut w = create(&out)?;
            write_bench_csv(&points, &mut w)?;
            w.flush()?;
        }
        Command::Trace {
            index,
            data,
            queries,
            workload,
            k,
            ef,
            out,
        } => {
            let index = load_index(&index, &data)?;
            let queries = load_queries(&index, queries.as_deref(), &workload, k)?;
            let params = KhiSearcher::new(&index).params(k, ef);
            let traces = queries
                .iter()
                .enumerate()
                .map(|(i, q)| Ok((i, hop_trace(&index, q, &params)?)))
                .collect::<Result<Vec<_>>>()?;
            let mut w = create(&out)?;
            write_trace_csv(&traces, &mut w)?;
            w.flush()?;
        }
        Command::Synth {
            n,
            dim,
            attrs,
            attr_dist,
            clusters,
            spread,
            query_count,
            seed,
            vectors,
            attrs_out,
            queries,
        } => {
            if n == 0 || dim == 0 || attrs == 0 {
                bail!("n, dim and attrs must all be positive");
            }
            let spec = SyntheticSpec {
                n,
                dim,
                attrs,
                attr_dist: parse_attr_dist(&attr_dist)?,
                vector_dist: if clusters == 0 {
                    VectorDistribution::Gaussian
                } else {
                    VectorDistribution::Clustered { clusters, spread }
                },
                seed,
            };
            let (dataset, query_vectors) = spec.generate(query_count);
            storage::save_dataset(&dataset, &vectors, &attrs_out)?;
            let flat: Vec<f32> = query_vectors.concat();
            storage::write_vectors(&queries, dim, &flat)?;
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    run(Cli::parse())
}
