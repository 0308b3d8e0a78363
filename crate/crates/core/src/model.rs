//! Domain types shared by every module: schemas, objects, datasets, range
//! predicates and the Euclidean distance.

use std::fmt;

use crate::error::{KhiError, Result};

/// Shape of a dataset: embedding dimensionality and attribute count.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSchema {
    pub dim: usize,
    pub attr_count: usize,
    pub attribute_names: Vec<String>,
}

impl ObjectSchema {
    pub fn new(dim: usize, attr_count: usize) -> Result<Self> {
        let names = (0..attr_count).map(|i| format!("a{i}")).collect();
        Self::with_names(dim, names)
    }

    pub fn with_names(dim: usize, attribute_names: Vec<String>) -> Result<Self> {
        if dim == 0 {
            return Err(KhiError::InvalidParam("embedding dimension must be >= 1".into()));
        }
        if attribute_names.is_empty() {
            return Err(KhiError::InvalidParam("attribute count must be >= 1".into()));
        }
        Ok(Self {
            dim,
            attr_count: attribute_names.len(),
            attribute_names,
        })
    }
}

/// An owned object: embedding plus attribute tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct Object {
    pub id: u32,
    pub vector: Vec<f32>,
    pub tuple: Vec<f64>,
}

/// Column-agnostic, row-major storage of `n` objects. Object ids are the
/// dense row numbers `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: ObjectSchema,
    vectors: Vec<f32>,
    attrs: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from flat row-major buffers.
    pub fn new(schema: ObjectSchema, vectors: Vec<f32>, attrs: Vec<f64>) -> Result<Self> {
        if !vectors.len().is_multiple_of(schema.dim) {
            return Err(KhiError::Input(format!(
                "vector buffer length {} is not a multiple of d = {}",
                vectors.len(),
                schema.dim
            )));
        }
        if !attrs.len().is_multiple_of(schema.attr_count) {
            return Err(KhiError::Input(format!(
                "attribute buffer length {} is not a multiple of m = {}",
                attrs.len(),
                schema.attr_count
            )));
        }
        let n = vectors.len() / schema.dim;
        if attrs.len() / schema.attr_count != n {
            return Err(KhiError::Input(format!(
                "vector count {n} disagrees with tuple count {}",
                attrs.len() / schema.attr_count
            )));
        }
        if n > u32::MAX as usize {
            return Err(KhiError::Input(format!("{n} objects exceed the u32 id space")));
        }
        if let Some(pos) = attrs.iter().position(|v| !v.is_finite()) {
            return Err(KhiError::Input(format!(
                "non-finite attribute at row {}, column {}",
                pos / schema.attr_count,
                pos % schema.attr_count
            )));
        }
        Ok(Self { schema, vectors, attrs })
    }

    pub fn from_objects(schema: ObjectSchema, objects: &[Object]) -> Result<Self> {
        let mut vectors = Vec::with_capacity(objects.len() * schema.dim);
        let mut attrs = Vec::with_capacity(objects.len() * schema.attr_count);
        for (row, o) in objects.iter().enumerate() {
            if o.id as usize != row {
                return Err(KhiError::Input(format!(
                    "object ids must be dense and in order; row {row} has id {}",
                    o.id
                )));
            }
            if o.vector.len() != schema.dim {
                return Err(KhiError::Dimension {
                    expected: schema.dim,
                    actual: o.vector.len(),
                });
            }
            if o.tuple.len() != schema.attr_count {
                return Err(KhiError::Dimension {
                    expected: schema.attr_count,
                    actual: o.tuple.len(),
                });
            }
            vectors.extend_from_slice(&o.vector);
            attrs.extend_from_slice(&o.tuple);
        }
        Self::new(schema, vectors, attrs)
    }

    #[inline]
    pub fn schema(&self) -> &ObjectSchema {
        &self.schema
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.vectors.len() / self.schema.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.schema.dim
    }

    #[inline]
    pub fn attr_count(&self) -> usize {
        self.schema.attr_count
    }

    #[inline]
    pub fn vector(&self, id: u32) -> &[f32] {
        let d = self.schema.dim;
        let start = id as usize * d;
        &self.vectors[start..start + d]
    }

    #[inline]
    pub fn tuple(&self, id: u32) -> &[f64] {
        let m = self.schema.attr_count;
        let start = id as usize * m;
        &self.attrs[start..start + m]
    }

    #[inline]
    pub fn attr(&self, id: u32, dim: usize) -> f64 {
        self.attrs[id as usize * self.schema.attr_count + dim]
    }

    pub fn object(&self, id: u32) -> Object {
        Object {
            id,
            vector: self.vector(id).to_vec(),
            tuple: self.tuple(id).to_vec(),
        }
    }

    pub fn raw_vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn raw_attrs(&self) -> &[f64] {
        &self.attrs
    }

    /// Euclidean distance between two stored objects.
    #[inline]
    pub fn dist(&self, a: u32, b: u32) -> f32 {
        l2(self.vector(a), self.vector(b))
    }
}

/// A closed interval `[lo, hi]` in attribute units. Infinite bounds are
/// IEEE infinities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const FULL: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    #[inline]
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn is_full(&self) -> bool {
        self.lo == f64::NEG_INFINITY && self.hi == f64::INFINITY
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// Per-attribute closed intervals. Unconstrained attributes hold
/// `Interval::FULL`; `constrained` lists the attributes a query actually
/// restricts, ascending and non-empty.
#[derive(Debug, Clone, PartialEq)]
pub struct RangePredicate {
    intervals: Vec<Interval>,
    constrained: Vec<usize>,
}

impl RangePredicate {
    #[inline]
    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    #[inline]
    pub fn interval(&self, attr: usize) -> Interval {
        self.intervals[attr]
    }

    #[inline]
    pub fn constrained(&self) -> &[usize] {
        &self.constrained
    }

    /// Number of constrained attributes, `|B|`.
    pub fn cardinality(&self) -> usize {
        self.constrained.len()
    }

    pub fn attr_count(&self) -> usize {
        self.intervals.len()
    }

    /// Boundary-inclusive membership test over the constrained attributes.
    #[inline]
    pub fn matches(&self, tuple: &[f64]) -> bool {
        self.constrained.iter().all(|&i| self.intervals[i].contains(tuple[i]))
    }
}

/// A range-filtered k-NN query.
#[derive(Debug, Clone, PartialEq)]
pub struct RfannsQuery {
    pub vector: Vec<f32>,
    pub predicate: RangePredicate,
    pub k: usize,
}

/// Pads a partial set of `(attribute, interval)` constraints to a full
/// `m`-attribute predicate.
///
/// Repeated attributes are intersected.
pub fn normalize_predicate(raw: &[(usize, Interval)], attr_count: usize) -> Result<RangePredicate> {
    if raw.is_empty() {
        return Err(KhiError::InvalidPredicate(
            "at least one attribute must be constrained".into(),
        ));
    }
    let mut intervals = vec![Interval::FULL; attr_count];
    let mut constrained = Vec::with_capacity(raw.len());
    for &(attr, iv) in raw {
        if attr >= attr_count {
            return Err(KhiError::InvalidPredicate(format!(
                "attribute index {attr} out of range for m = {attr_count}"
            )));
        }
        if iv.lo.is_nan() || iv.hi.is_nan() || iv.lo > iv.hi {
            return Err(KhiError::InvalidInterval {
                attr,
                lo: iv.lo,
                hi: iv.hi,
            });
        }
        let cur = &mut intervals[attr];
        cur.lo = cur.lo.max(iv.lo);
        cur.hi = cur.hi.min(iv.hi);
        if cur.lo > cur.hi {
            return Err(KhiError::InvalidInterval {
                attr,
                lo: cur.lo,
                hi: cur.hi,
            });
        }
        constrained.push(attr);
    }
    constrained.sort_unstable();
    constrained.dedup();
    Ok(RangePredicate { intervals, constrained })
}

/// `o ⊨ B`: every constrained attribute value lies in its closed interval.
#[inline]
pub fn satisfies(object: &Object, predicate: &RangePredicate) -> bool {
    predicate.matches(&object.tuple)
}

/// Euclidean distance with a length check.
pub fn distance(x: &[f32], y: &[f32]) -> Result<f32> {
    if x.len() != y.len() {
        return Err(KhiError::Dimension {
            expected: x.len(),
            actual: y.len(),
        });
    }
    Ok(l2(x, y))
}

/// Euclidean distance; callers guarantee equal lengths.
#[inline]
pub fn l2(x: &[f32], y: &[f32]) -> f32 {
    debug_assert_eq!(x.len(), y.len());
    // four independent accumulators let the loop vectorize
    let mut acc = [0.0f32; 4];
    let chunks = x.len() / 4;
    for c in 0..chunks {
        let b = c * 4;
        for l in 0..4 {
            let d = x[b + l] - y[b + l];
            acc[l] += d * d;
        }
    }
    let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..x.len() {
        let d = x[i] - y[i];
        sum += d * d;
    }
    sum.sqrt()
}
