//! Synthetic Gaussian-cluster classification data.

use fire_core::derive_seed;
use fire_core::linalg::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

const STREAM_MEANS: u64 = 20;
const STREAM_TRAIN: u64 = 21;
const STREAM_TEST: u64 = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    GaussianClusters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub generator: Generator,
    pub num_classes: usize,
    pub input_dim: usize,
    pub samples_per_class: usize,
    pub test_per_class: usize,
    /// Per-coordinate standard deviation of the isotropic noise.
    pub noise: f64,
    /// Distance of every class mean from the origin.
    pub radius: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            generator: Generator::GaussianClusters,
            num_classes: 10,
            input_dim: 32,
            samples_per_class: 500,
            test_per_class: 100,
            noise: 0.5,
            radius: 2.0,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Dataset(m.to_string()));
        if self.num_classes == 0 {
            return bad("num_classes must be positive");
        }
        if self.input_dim == 0 {
            return bad("input_dim must be positive");
        }
        if self.samples_per_class == 0 || self.test_per_class == 0 {
            return bad("samples_per_class and test_per_class must be positive");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be finite and nonnegative");
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return bad("radius must be finite and positive");
        }
        Ok(())
    }
}

/// Samples in rows, one label per row. Rows are grouped by class.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: fire_core::nn::select_rows(&self.x, idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
    /// Class means, `num_classes × input_dim`.
    pub means: Matrix,
}

pub fn generate_dataset(spec: &DatasetSpec) -> Result<Splits> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, STREAM_MEANS, 0));
    let mut means = Matrix::random_gaussian(spec.num_classes, spec.input_dim, 1.0, &mut rng);
    for c in 0..spec.num_classes {
        let row = means.row_mut(c);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v *= spec.radius / norm);
    }
    let train = sample(spec, &means, spec.samples_per_class, STREAM_TRAIN);
    let test = sample(spec, &means, spec.test_per_class, STREAM_TEST);
    Ok(Splits { train, test, means })
}

fn sample(spec: &DatasetSpec, means: &Matrix, per_class: usize, stream: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, stream, 0));
    let n = spec.num_classes * per_class;
    let mut x = Matrix::zeros(n, spec.input_dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..spec.num_classes {
        for k in 0..per_class {
            let row = x.row_mut(c * per_class + k);
            for (v, m) in row.iter_mut().zip(means.row(c)) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = m + spec.noise * z;
            }
            labels.push(c);
        }
    }
    Dataset { x, labels }
}

/// Accuracy of assigning every sample to its closest class mean.
pub fn nearest_mean_accuracy(data: &Dataset, means: &Matrix) -> f64 {
    let correct = (0..data.len())
        .filter(|&i| {
            let x = data.x.row(i);
            let best = (0..means.rows())
                .map(|c| {
                    let d: f64 = x.iter().zip(means.row(c)).map(|(a, b)| (a - b) * (a - b)).sum();
                    (c, d)
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(c, _)| c);
            best == Some(data.labels[i])
        })
        .count();
    correct as f64 / data.len() as f64
}
