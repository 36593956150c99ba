//! Mini-batch SGD training and batched inference over prepared samples.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affnet::{build, Network, NetworkSpec};
use crate::ami::WeightRule;
use crate::error::{Error, Result};
use crate::evalharness::augment::{augment, AugmentConfig};
use crate::evalharness::dataset::{prepare_input, Sample};
use crate::ndnn::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// `None` trains on the original images only.
    pub augment: Option<AugmentConfig>,
    pub weight_rule: WeightRule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
            augment: None,
            weight_rule: WeightRule::SuffixSum,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid(format!(
                "batch size must be at least 2 for train-mode batch norm, got {}",
                self.batch_size
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// A network-ready input with its class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Tensor<f32>,
    pub label: usize,
}

/// Resizes and standardizes samples for a network of the given input size.
pub fn prepare_examples(samples: &[&Sample], input_size: (usize, usize)) -> Result<Vec<Example>> {
    samples
        .iter()
        .map(|s| {
            Ok(Example {
                input: prepare_input(&s.ami.pixels, input_size)?,
                label: s.label,
            })
        })
        .collect()
}

/// Training pool: every sample plus its augmented variants when enabled.
/// Each sample's augmentation seed depends only on `seed` and its video id.
pub fn training_pool(samples: &[&Sample], input_size: (usize, usize), config: &TrainConfig) -> Result<Vec<Example>> {
    let Some(ops) = config.augment else {
        return prepare_examples(samples, input_size);
    };
    let mut pool = Vec::new();
    for s in samples {
        for img in augment(&s.ami, mix_seed(config.seed, &s.video_id), &ops) {
            pool.push(Example {
                input: prepare_input(&img.pixels, input_size)?,
                label: s.label,
            });
        }
    }
    Ok(pool)
}

/// A trained network and its per-epoch mean training loss.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network<f32>,
    pub loss_curve: Vec<f64>,
}

/// Splits a shuffled order into batches, folding a trailing single example
/// into the previous batch so every batch has at least two items.
fn batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(batch_size).collect();
    if out.len() >= 2 && out[out.len() - 1].len() == 1 {
        out.pop();
        let start = (out.len() - 1) * batch_size;
        let last = out.len() - 1;
        out[last] = &order[start..];
    }
    out
}

/// Trains a freshly initialized network from `spec` on `examples`.
pub fn train_network(examples: &[Example], spec: &NetworkSpec, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let mut network = build::<f32>(spec)?;
    if config.epochs == 0 {
        return Ok(TrainOutcome {
            network,
            loss_curve: Vec::new(),
        });
    }
    if examples.len() < 2 {
        return Err(Error::invalid(format!(
            "training needs at least 2 examples, got {}",
            examples.len()
        )));
    }
    let lr = config.learning_rate as f32;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut loss_curve = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for batch in batches(&order, config.batch_size) {
            let inputs: Vec<&Tensor<f32>> = batch.iter().map(|&i| &examples[i].input).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| examples[i].label).collect();
            let x = Tensor::stack(&inputs)?;
            let loss = network.train_step(&x, &labels, lr)?;
            total += f64::from(loss) * batch.len() as f64;
        }
        loss_curve.push(total / examples.len() as f64);
    }
    // Running averages lag the weights they were collected under, so
    // re-estimate them once with the final weights.
    let order: Vec<usize> = (0..examples.len()).collect();
    let stacked = batches(&order, config.batch_size)
        .into_iter()
        .map(|b| Tensor::stack(&b.iter().map(|&i| &examples[i].input).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    network.recalibrate_batch_norm(&stacked)?;
    Ok(TrainOutcome { network, loss_curve })
}

/// Infer-mode class predictions, evaluated in chunks to bound memory.
pub fn predict_classes(network: &Network<f32>, examples: &[Example]) -> Result<Vec<usize>> {
    const CHUNK: usize = 32;
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(CHUNK) {
        let inputs: Vec<&Tensor<f32>> = chunk.iter().map(|e| &e.input).collect();
        let probs = network.predict(&Tensor::stack(&inputs)?)?;
        let classes = probs.shape()[1];
        for row in probs.data().chunks(classes) {
            out.push(argmax(row));
        }
    }
    Ok(out)
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Deterministic 64-bit seed derived from a base seed and a key.
pub fn mix_seed(seed: u64, key: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    // splitmix64 finalizer
    let mut z = h ^ seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
