//! Data-arrival protocols: which training samples and test classes each
//! chunk sees.

use fire_core::derive_seed;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetSpec};
use crate::error::{HarnessError, Result};

const STREAM_ORDER: u64 = 23;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    WarmStart,
    Continual,
    ClassIncremental,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamSpec {
    pub protocol: Protocol,
    /// Defaults per protocol: 2, 10 and 20.
    pub num_chunks: Option<usize>,
    /// Share of the training set in the first warm-start chunk.
    pub initial_fraction: f64,
    /// Epoch multiplier for the first warm-start chunk.
    pub warm_start_epoch_multiplier: usize,
    pub dataset: DatasetSpec,
}

impl Default for StreamSpec {
    fn default() -> Self {
        Self {
            protocol: Protocol::Continual,
            num_chunks: None,
            initial_fraction: 0.1,
            warm_start_epoch_multiplier: 10,
            dataset: DatasetSpec::default(),
        }
    }
}

impl StreamSpec {
    pub fn chunks(&self) -> usize {
        self.num_chunks.unwrap_or(match self.protocol {
            Protocol::WarmStart => 2,
            Protocol::Continual => 10,
            Protocol::ClassIncremental => 20,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        let k = self.chunks();
        let bad = |m: String| Err(HarnessError::Config(m));
        if k == 0 {
            return bad("num_chunks must be positive".into());
        }
        match self.protocol {
            Protocol::WarmStart => {
                if k != 2 {
                    return bad(format!("warm_start uses 2 chunks, got {k}"));
                }
                if !(self.initial_fraction > 0.0 && self.initial_fraction < 1.0) {
                    return bad(format!("initial_fraction {} outside (0, 1)", self.initial_fraction));
                }
                if self.warm_start_epoch_multiplier == 0 {
                    return bad("warm_start_epoch_multiplier must be positive".into());
                }
            }
            Protocol::Continual => {
                let n = self.dataset.num_classes * self.dataset.samples_per_class;
                if k > n {
                    return bad(format!("{k} chunks for {n} samples"));
                }
            }
            Protocol::ClassIncremental => {
                if !self.dataset.num_classes.is_multiple_of(k) {
                    return bad(format!(
                        "{} classes do not split into {k} equal phases",
                        self.dataset.num_classes
                    ));
                }
            }
        }
        Ok(())
    }

    /// Epochs to train chunk `k` given the per-chunk budget.
    pub fn epochs_for(&self, k: usize, epochs_per_chunk: usize) -> usize {
        if self.protocol == Protocol::WarmStart && k == 0 {
            epochs_per_chunk * self.warm_start_epoch_multiplier
        } else {
            epochs_per_chunk
        }
    }
}

/// Cumulative training indices of one chunk and the classes it evaluates on.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub train: Vec<usize>,
    pub classes: Vec<usize>,
}

pub fn build_chunks(spec: &StreamSpec, train: &Dataset) -> Result<Vec<Chunk>> {
    spec.validate()?;
    let k = spec.chunks();
    let c = spec.dataset.num_classes;
    let all_classes: Vec<usize> = (0..c).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.dataset.seed, STREAM_ORDER, 0));
    let chunks = match spec.protocol {
        Protocol::WarmStart | Protocol::Continual => {
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut rng);
            let n = order.len();
            let cut = |i: usize| match spec.protocol {
                Protocol::WarmStart if i == 0 => ((n as f64 * spec.initial_fraction).ceil() as usize).max(1),
                Protocol::WarmStart => n,
                _ => (n * (i + 1)).div_ceil(k),
            };
            (0..k)
                .map(|i| Chunk {
                    train: order[..cut(i)].to_vec(),
                    classes: all_classes.clone(),
                })
                .collect()
        }
        Protocol::ClassIncremental => {
            let mut order = all_classes;
            order.shuffle(&mut rng);
            let per = c / k;
            (0..k)
                .map(|i| {
                    let mut classes = order[..per * (i + 1)].to_vec();
                    classes.sort_unstable();
                    Chunk {
                        train: indices_for_classes(train, &classes),
                        classes,
                    }
                })
                .collect()
        }
    };
    Ok(chunks)
}

/// Indices of `data` whose label is in `classes` (sorted).
pub fn indices_for_classes(data: &Dataset, classes: &[usize]) -> Vec<usize> {
    (0..data.len())
        .filter(|&i| classes.binary_search(&data.labels[i]).is_ok())
        .collect()
}
