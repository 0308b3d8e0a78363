//! Desk-scale synthetic datasets and the small worked example used in tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Zipf};

use crate::model::{Dataset, Object, ObjectSchema};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttrDistribution {
    /// i.i.d. uniform on `[0, 1000)`.
    Uniform,
    /// i.i.d. normal, mean 500, standard deviation 100.
    Gaussian,
    /// Integer ranks `1..=1000` drawn from a Zipf law with the given exponent.
    Zipf(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VectorDistribution {
    /// i.i.d. standard normal coordinates.
    Gaussian,
    /// Gaussian mixture: `clusters` standard-normal centres, each point
    /// offset from a uniformly chosen centre by `spread` times a standard
    /// normal vector.
    Clustered { clusters: usize, spread: f32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub dim: usize,
    pub attrs: usize,
    pub attr_dist: AttrDistribution,
    pub vector_dist: VectorDistribution,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Generates the dataset together with `query_count` held-out query
    /// vectors drawn from the same vector distribution.
    pub fn generate(&self, query_count: usize) -> (Dataset, Vec<Vec<f32>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let centres: Vec<Vec<f32>> = match self.vector_dist {
            VectorDistribution::Gaussian => Vec::new(),
            VectorDistribution::Clustered { clusters, .. } => {
                (0..clusters.max(1)).map(|_| normal_vec(&mut rng, self.dim)).collect()
            }
        };
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f32> {
            match self.vector_dist {
                VectorDistribution::Gaussian => normal_vec(rng, self.dim),
                VectorDistribution::Clustered { spread, .. } => {
                    let c = &centres[rng.random_range(0..centres.len())];
                    c.iter()
                        .map(|&x| {
                            let z: f32 = StandardNormal.sample(rng);
                            x + spread * z
                        })
                        .collect()
                }
            }
        };

        let mut vectors = Vec::with_capacity(self.n * self.dim);
        for _ in 0..self.n {
            vectors.extend(draw(&mut rng));
        }
        let mut attrs = Vec::with_capacity(self.n * self.attrs);
        let zipf = match self.attr_dist {
            AttrDistribution::Zipf(s) => Some(Zipf::new(1000.0, s).expect("valid zipf exponent")),
            _ => None,
        };
        for _ in 0..self.n * self.attrs {
            let v = match self.attr_dist {
                AttrDistribution::Uniform => rng.random_range(0.0..1000.0),
                AttrDistribution::Gaussian => {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    500.0 + 100.0 * z
                }
                AttrDistribution::Zipf(_) => zipf.as_ref().unwrap().sample(&mut rng),
            };
            attrs.push(v);
        }
        let queries = (0..query_count).map(|_| draw(&mut rng)).collect();
        let schema = ObjectSchema::new(self.dim, self.attrs).expect("non-empty schema");
        let ds = Dataset::new(schema, vectors, attrs).expect("generated data is well formed");
        (ds, queries)
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Dataset with Gaussian vectors and the given attribute distribution.
pub fn dataset(n: usize, dim: usize, attrs: usize, attr_dist: AttrDistribution, seed: u64) -> Dataset {
    SyntheticSpec {
        n,
        dim,
        attrs,
        attr_dist,
        vector_dist: VectorDistribution::Gaussian,
        seed,
    }
    .generate(0)
    .0
}

/// Eight objects with two attributes and 2-d embeddings, laid out so that
/// the partitioning tree with `c_l = 2` splits the root on attribute 0 at
/// 3.4 and its children on attribute 1 at 1.4 and 5.0. Under the predicate
/// `[3.0, 4.0] x [4.0, 6.0]` the in-range objects are ids 2..=5, and the two
/// nearest to [`EXAMPLE_QUERY`] are ids 2 and 3.
pub fn eight_object_example() -> Dataset {
    let rows: [([f32; 2], [f64; 2]); 8] = [
        ([5.0, 5.0], [1.0, 1.0]),
        ([-4.0, -4.0], [2.0, 1.4]),
        ([1.0, 0.5], [3.0, 4.5]),
        ([0.8, -0.6], [3.4, 4.8]),
        ([3.0, 3.0], [3.9, 5.0]),
        ([-3.0, 2.5], [3.8, 6.0]),
        ([0.2, 0.1], [4.5, 2.0]),
        ([2.0, -3.0], [5.0, 7.0]),
    ];
    let objects: Vec<Object> = rows
        .iter()
        .enumerate()
        .map(|(i, (v, t))| Object {
            id: i as u32,
            vector: v.to_vec(),
            tuple: t.to_vec(),
        })
        .collect();
    Dataset::from_objects(ObjectSchema::new(2, 2).unwrap(), &objects).unwrap()
}

pub const EXAMPLE_QUERY: [f32; 2] = [0.0, 0.0];
