//! On-disk formats: vector and attribute matrices, the index file, workload
//! text files and binary ground truth.
//!
//! All integers and floats are little-endian. The index file references the
//! dataset rather than embedding it; [`load_index`] takes the dataset and
//! checks it against the header.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};

use crate::error::{KhiError, Result};
use crate::graph::{GraphParams, Neighbor, NodeGraph};
use crate::index::{BuildParams, KhiIndex, ParallelMode};
use crate::model::{l2, normalize_predicate, Dataset, Interval, ObjectSchema};
use crate::oracle::{GroundTruth, TruthEntry};
use crate::tree::{DimSet, Extent, PartitionTree, TreeNode, TreeParams};
use crate::workload::{Workload, WorkloadEntry};

pub const INDEX_MAGIC: [u8; 4] = *b"KHI1";
pub const INDEX_VERSION: u16 = 1;
/// magic, version, six u32 fields, tau, node_count, height
pub const HEADER_BYTES: u64 = 4 + 2 + 6 * 4 + 8 + 2 * 4;
pub const NODE_RECORD_BYTES: u64 = 5 * 4 + 8 + 8 + 2 * 4;

/// Bounds-checked little-endian cursor that reports byte offsets.
struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn offset(&self) -> u64 {
        self.pos as u64
    }

    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let remaining = self.buf.len() - self.pos;
        if len > remaining {
            return Err(KhiError::Format {
                offset: self.pos as u64,
                message: format!("truncated {what}: need {len} bytes, {remaining} left"),
            });
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(LittleEndian::read_u16(self.take(2, what)?))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.take(4, what)?))
    }

    fn i32(&mut self, what: &str) -> Result<i32> {
        Ok(LittleEndian::read_i32(self.take(4, what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(LittleEndian::read_u64(self.take(8, what)?))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(LittleEndian::read_f32(self.take(4, what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(LittleEndian::read_f64(self.take(8, what)?))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(KhiError::Format {
                offset: self.pos as u64,
                message: format!("{} trailing bytes", self.buf.len() - self.pos),
            });
        }
        Ok(())
    }
}

fn format_err(offset: u64, message: impl Into<String>) -> KhiError {
    KhiError::Format {
        offset,
        message: message.into(),
    }
}

/// Reads the `n`, `d` prefix shared by vector and attribute files and
/// checks the payload length.
fn read_matrix_header(cur: &mut Cursor<'_>, elem_bytes: usize) -> Result<(usize, usize)> {
    let n = cur.u32("row count")? as usize;
    let d = cur.u32("column count")? as usize;
    if n == 0 || d == 0 {
        return Err(format_err(0, format!("zero dimension: n = {n}, d = {d}")));
    }
    let need = (n as u64) * (d as u64) * elem_bytes as u64;
    let have = (cur.buf.len() - cur.pos) as u64;
    if need != have {
        return Err(format_err(
            cur.offset(),
            format!("header declares {n} x {d} values ({need} bytes) but {have} bytes follow"),
        ));
    }
    Ok((n, d))
}

/// Reads an `n x d` f32 matrix.
pub fn read_vectors(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = fs::read(path)?;
    let mut cur = Cursor::new(&bytes);
    let (n, d) = read_matrix_header(&mut cur, 4)?;
    let mut values = vec![0f32; n * d];
    LittleEndian::read_f32_into(cur.take(n * d * 4, "vector data")?, &mut values);
    Ok((n, d, values))
}

/// Reads an `n x m` f64 matrix, rejecting NaN entries.
pub fn read_attributes(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = fs::read(path)?;
    let mut cur = Cursor::new(&bytes);
    let (n, m) = read_matrix_header(&mut cur, 8)?;
    let mut values = vec![0f64; n * m];
    LittleEndian::read_f64_into(cur.take(n * m * 8, "attribute data")?, &mut values);
    if let Some(i) = values.iter().position(|v| v.is_nan()) {
        return Err(format_err(
            8 + 8 * i as u64,
            format!("NaN attribute at row {}, column {}", i / m, i % m),
        ));
    }
    Ok((n, m, values))
}

fn write_matrix<T: Copy>(
    path: impl AsRef<Path>,
    cols: usize,
    values: &[T],
    mut put: impl FnMut(&mut BufWriter<fs::File>, T) -> std::io::Result<()>,
) -> Result<()> {
    if cols == 0 || values.is_empty() || !values.len().is_multiple_of(cols) {
        return Err(KhiError::Input(format!(
            "cannot write {} values as rows of {cols}",
            values.len()
        )));
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_u32::<LittleEndian>((values.len() / cols) as u32)?;
    w.write_u32::<LittleEndian>(cols as u32)?;
    for &v in values {
        put(&mut w, v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_vectors(path: impl AsRef<Path>, dim: usize, values: &[f32]) -> Result<()> {
    write_matrix(path, dim, values, |w, v| w.write_f32::<LittleEndian>(v))
}

pub fn write_attributes(path: impl AsRef<Path>, attr_count: usize, values: &[f64]) -> Result<()> {
    write_matrix(path, attr_count, values, |w, v| w.write_f64::<LittleEndian>(v))
}

/// Reads a vector file as one `Vec` per row.
pub fn read_query_vectors(path: impl AsRef<Path>) -> Result<Vec<Vec<f32>>> {
    let (_, d, values) = read_vectors(path)?;
    Ok(values.chunks_exact(d).map(<[f32]>::to_vec).collect())
}

/// Pairs a vector file with an attribute file.
pub fn load_dataset(vectors: impl AsRef<Path>, attrs: impl AsRef<Path>) -> Result<Dataset> {
    let (n, d, v) = read_vectors(vectors)?;
    let (n_attr, m, a) = read_attributes(attrs)?;
    if n != n_attr {
        return Err(KhiError::DatasetMismatch(format!(
            "vector file has {n} rows but attribute file has {n_attr}"
        )));
    }
    Dataset::new(ObjectSchema::new(d, m)?, v, a)
}

pub fn save_dataset(dataset: &Dataset, vectors: impl AsRef<Path>, attrs: impl AsRef<Path>) -> Result<()> {
    write_vectors(vectors, dataset.dim(), dataset.raw_vectors())?;
    write_attributes(attrs, dataset.attr_count(), dataset.raw_attrs())
}

/// Size of the adjacency section: one degree byte per object per node plus
/// four bytes per stored neighbor.
pub fn adjacency_bytes(index: &KhiIndex) -> u64 {
    index
        .graphs()
        .iter()
        .map(|g| g.len() as u64 + 4 * g.edge_count() as u64)
        .sum()
}

/// Size of everything before the adjacency section.
pub fn tree_section_bytes(index: &KhiIndex) -> u64 {
    HEADER_BYTES + 4 * index.len() as u64 + NODE_RECORD_BYTES * index.tree().nodes().len() as u64
}

fn opt_i32(v: Option<u32>) -> i32 {
    v.map_or(-1, |x| x as i32)
}

pub fn write_index(index: &KhiIndex, w: &mut impl Write) -> Result<()> {
    let params = index.params();
    let tree = index.tree();
    let ds = index.dataset();
    w.write_all(&INDEX_MAGIC)?;
    w.write_u16::<LittleEndian>(INDEX_VERSION)?;
    for v in [
        ds.len(),
        ds.dim(),
        ds.attr_count(),
        params.graph.max_degree,
        params.tree.leaf_capacity,
        params.tau_p,
    ] {
        w.write_u32::<LittleEndian>(v as u32)?;
    }
    w.write_f64::<LittleEndian>(params.tree.tau)?;
    w.write_u32::<LittleEndian>(tree.nodes().len() as u32)?;
    w.write_u32::<LittleEndian>(tree.height() as u32)?;
    for &id in tree.ordered_ids() {
        w.write_u32::<LittleEndian>(id)?;
    }
    for node in tree.nodes() {
        w.write_i32::<LittleEndian>(node.level as i32)?;
        w.write_i32::<LittleEndian>(opt_i32(node.parent))?;
        w.write_i32::<LittleEndian>(opt_i32(node.left))?;
        w.write_i32::<LittleEndian>(opt_i32(node.right))?;
        w.write_i32::<LittleEndian>(node.split_dim.map_or(-1, |d| d as i32))?;
        w.write_f64::<LittleEndian>(node.split_value)?;
        w.write_u64::<LittleEndian>(node.excluded.bits())?;
        w.write_u32::<LittleEndian>(node.begin)?;
        w.write_u32::<LittleEndian>(node.end)?;
    }
    for g in index.graphs() {
        for local in 0..g.len() {
            let nbrs = g.neighbors(local);
            w.write_u8(nbrs.len() as u8)?;
            for nb in nbrs {
                w.write_u32::<LittleEndian>(nb.id)?;
            }
        }
    }
    Ok(())
}

pub fn save_index(index: &KhiIndex, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_index(index, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_index(path: impl AsRef<Path>, dataset: Dataset) -> Result<KhiIndex> {
    let bytes = fs::read(path)?;
    read_index(&bytes, dataset)
}

fn parse_link(v: i32, node_count: usize, offset: u64, what: &str) -> Result<Option<u32>> {
    match v {
        -1 => Ok(None),
        x if x >= 0 && (x as usize) < node_count => Ok(Some(x as u32)),
        x => Err(format_err(offset, format!("{what} link {x} out of range"))),
    }
}

/// Parses an index image produced by [`write_index`] against `dataset`.
pub fn read_index(bytes: &[u8], dataset: Dataset) -> Result<KhiIndex> {
    let mut cur = Cursor::new(bytes);
    let magic = cur.take(4, "magic")?;
    if magic != INDEX_MAGIC {
        return Err(KhiError::MagicMismatch {
            found: [magic[0], magic[1], magic[2], magic[3]],
        });
    }
    let version = cur.u16("version")?;
    if version != INDEX_VERSION {
        return Err(KhiError::VersionMismatch {
            found: version,
            expected: INDEX_VERSION,
        });
    }
    let n = cur.u32("n")? as usize;
    let d = cur.u32("d")? as usize;
    let m = cur.u32("m")? as usize;
    let max_degree = cur.u32("M")? as usize;
    let leaf_capacity = cur.u32("leaf capacity")? as usize;
    let tau_p = cur.u32("tau_p")? as usize;
    let tau = cur.f64("tau")?;
    let node_count = cur.u32("node count")? as usize;
    let height = cur.u32("height")? as usize;
    if (n, d, m) != (dataset.len(), dataset.dim(), dataset.attr_count()) {
        return Err(KhiError::DatasetMismatch(format!(
            "index header has n = {n}, d = {d}, m = {m}; dataset has n = {}, d = {}, m = {}",
            dataset.len(),
            dataset.dim(),
            dataset.attr_count()
        )));
    }
    let tree_params = TreeParams::new(tau, leaf_capacity).map_err(|e| format_err(HEADER_BYTES - 16, e.to_string()))?;
    let graph_params =
        GraphParams::new(max_degree, GraphParams::default().ef_build).map_err(|e| format_err(18, e.to_string()))?;
    if node_count == 0 {
        return Err(format_err(HEADER_BYTES - 8, "index has no nodes"));
    }

    let ids_offset = cur.offset();
    let mut ordered_ids = vec![0u32; n];
    LittleEndian::read_u32_into(cur.take(4 * n, "ordered ids")?, &mut ordered_ids);
    let mut seen = vec![false; n];
    for (i, &id) in ordered_ids.iter().enumerate() {
        if id as usize >= n || std::mem::replace(&mut seen[id as usize], true) {
            return Err(format_err(
                ids_offset + 4 * i as u64,
                format!("ordered ids are not a permutation (entry {id})"),
            ));
        }
    }

    let mut nodes: Vec<TreeNode> = Vec::with_capacity(node_count);
    for id in 0..node_count {
        let at = cur.offset();
        let level = cur.i32("node level")?;
        let parent = parse_link(cur.i32("node parent")?, node_count, at, "parent")?;
        let left = parse_link(cur.i32("node left")?, node_count, at, "left")?;
        let right = parse_link(cur.i32("node right")?, node_count, at, "right")?;
        let split_dim = cur.i32("split dimension")?;
        let split_value = cur.f64("split value")?;
        let excluded = DimSet::from_bits(cur.u64("excluded set")?);
        let begin = cur.u32("node begin")?;
        let end = cur.u32("node end")?;

        let bad = |msg: String| Err(format_err(at, format!("node {id}: {msg}")));
        if level < 0 || begin > end || end as usize > n {
            return bad(format!("invalid level {level} or slice {begin}..{end}"));
        }
        if left.is_some() != right.is_some() || left.is_some() != (split_dim >= 0) {
            return bad("children and split dimension disagree".into());
        }
        if split_dim >= m as i32 {
            return bad(format!("split dimension {split_dim} >= m"));
        }
        if excluded.bits() >> m.min(63) != 0 && m < 64 {
            return bad("excluded set names unknown attributes".into());
        }
        let region = match parent {
            None if id == 0 => vec![Extent::FULL; m],
            Some(p) if (p as usize) < id => {
                let parent = &nodes[p as usize];
                let Some(dim) = parent.split_dim else {
                    return bad(format!("parent {p} is a leaf"));
                };
                let mut region = parent.region.clone();
                if parent.left == Some(id as u32) {
                    region[dim].hi = parent.split_value;
                } else if parent.right == Some(id as u32) {
                    region[dim].lo = parent.split_value;
                    region[dim].lo_open = true;
                } else {
                    return bad(format!("not a child of its parent {p}"));
                }
                if parent.level + 1 != level as u32 || begin < parent.begin || end > parent.end {
                    return bad("inconsistent with parent".into());
                }
                region
            }
            _ => return bad("nodes must follow their parents".into()),
        };
        nodes.push(TreeNode {
            id: id as u32,
            parent,
            left,
            right,
            level: level as u32,
            region,
            split_dim: (split_dim >= 0).then_some(split_dim as usize),
            split_value,
            excluded,
            begin,
            end,
        });
    }
    if nodes[0].len() != n {
        return Err(format_err(
            ids_offset + 4 * n as u64,
            "root does not cover every object",
        ));
    }
    for node in &nodes {
        if let (Some(l), Some(r)) = (node.left, node.right) {
            let (l, r) = (&nodes[l as usize], &nodes[r as usize]);
            if l.begin != node.begin || l.end != r.begin || r.end != node.end {
                return Err(format_err(
                    ids_offset + 4 * n as u64 + NODE_RECORD_BYTES * node.id as u64,
                    format!("children of node {} do not tile its slice", node.id),
                ));
            }
        }
    }
    let tree = PartitionTree::assemble(nodes, ordered_ids, tree_params, m);
    if tree.height() != height {
        return Err(format_err(
            HEADER_BYTES - 4,
            format!("header height {height} but nodes give {}", tree.height()),
        ));
    }

    let mut graphs = Vec::with_capacity(node_count);
    for node in tree.nodes() {
        let mut lists = Vec::with_capacity(node.len());
        for &object in tree.slice(node.id) {
            let at = cur.offset();
            let degree = cur.u8("degree")? as usize;
            if degree > max_degree {
                return Err(format_err(at, format!("degree {degree} exceeds M = {max_degree}")));
            }
            let mut list = Vec::with_capacity(degree);
            for _ in 0..degree {
                let nb = cur.u32("neighbor id")?;
                if nb as usize >= n || !node.contains_position(tree.position(nb)) || nb == object {
                    return Err(KhiError::DanglingNeighbor {
                        node: node.id,
                        neighbor: nb,
                    });
                }
                list.push(Neighbor::new(nb, l2(dataset.vector(object), dataset.vector(nb))));
            }
            lists.push(list);
        }
        graphs.push(NodeGraph::from_lists(node.id, node.begin, lists));
    }
    cur.finish()?;

    let params = BuildParams {
        tree: tree_params,
        graph: graph_params,
        tau_p,
        threads: 1,
        mode: ParallelMode::Deterministic,
    };
    Ok(KhiIndex::from_parts(dataset, tree, graphs, params))
}

/// Writes one line per entry: `query_index;attr:lo:hi,...`, listing only
/// constrained attributes.
pub fn write_workload(workload: &Workload, w: &mut impl Write) -> Result<()> {
    for e in &workload.entries {
        let terms: Vec<String> = e
            .predicate
            .constrained()
            .iter()
            .map(|&a| {
                let iv = e.predicate.interval(a);
                format!("{a}:{}:{}", iv.lo, iv.hi)
            })
            .collect();
        writeln!(w, "{};{}", e.query_index, terms.join(","))?;
    }
    Ok(())
}

pub fn save_workload(workload: &Workload, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_workload(workload, &mut w)?;
    w.flush()?;
    Ok(())
}

fn parse_workload_line(line: &str, attr_count: usize) -> std::result::Result<WorkloadEntry, String> {
    let (qi, rest) = line.split_once(';').ok_or("missing ';'")?;
    let query_index = qi
        .trim()
        .parse::<usize>()
        .map_err(|e| format!("bad query index {qi:?}: {e}"))?;
    let mut raw = Vec::new();
    for term in rest.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let parts: Vec<&str> = term.split(':').collect();
        let [a, lo, hi] = parts[..] else {
            return Err(format!("term {term:?} is not attr:lo:hi"));
        };
        let attr = a.parse::<usize>().map_err(|e| format!("bad attribute {a:?}: {e}"))?;
        let lo = lo.parse::<f64>().map_err(|e| format!("bad bound {lo:?}: {e}"))?;
        let hi = hi.parse::<f64>().map_err(|e| format!("bad bound {hi:?}: {e}"))?;
        raw.push((attr, Interval::new(lo, hi)));
    }
    let predicate = normalize_predicate(&raw, attr_count).map_err(|e| e.to_string())?;
    Ok(WorkloadEntry { query_index, predicate })
}

/// Parses a workload file; blank lines and lines starting with `#` are
/// skipped.
pub fn read_workload(path: impl AsRef<Path>, attr_count: usize) -> Result<Workload> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut entries = Vec::new();
    let mut offset = 0u64;
    for line in reader.lines() {
        let line = line?;
        let len = line.len() as u64 + 1;
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            let entry = parse_workload_line(t, attr_count).map_err(|m| format_err(offset, m))?;
            entries.push(entry);
        }
        offset += len;
    }
    Ok(Workload { entries })
}

pub fn write_ground_truth(truth: &[TruthEntry], w: &mut impl Write) -> Result<()> {
    w.write_u32::<LittleEndian>(truth.len() as u32)?;
    for t in truth {
        w.write_u32::<LittleEndian>(t.filtered_count as u32)?;
        w.write_u32::<LittleEndian>(t.neighbors.len() as u32)?;
        for nb in &t.neighbors {
            w.write_u32::<LittleEndian>(nb.id)?;
            w.write_f32::<LittleEndian>(nb.dist)?;
        }
    }
    Ok(())
}

pub fn save_ground_truth(truth: &[TruthEntry], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_ground_truth(truth, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let bytes = fs::read(path)?;
    let mut cur = Cursor::new(&bytes);
    let count = cur.u32("query count")? as usize;
    let mut truth = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let filtered_count = cur.u32("filtered count")? as usize;
        let at = cur.offset();
        let r = cur.u32("result length")? as usize;
        if r > filtered_count {
            return Err(format_err(
                at,
                format!("{r} results but only {filtered_count} in range"),
            ));
        }
        let mut neighbors = Vec::with_capacity(r.min(1 << 16));
        for _ in 0..r {
            let id = cur.u32("result id")?;
            let dist = cur.f32("result distance")?;
            neighbors.push(Neighbor::new(id, dist));
        }
        truth.push(TruthEntry {
            neighbors,
            filtered_count,
        });
    }
    cur.finish()?;
    Ok(truth)
}
