//! Skip-gram with negative sampling over integer token sequences.
//!
//! Shared by node2vec (sequences are walks) and the word-vector text encoder
//! (sequences are tokenized reports).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkipGramConfig {
    pub dims: usize,
    /// Context positions on each side of the center.
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Initial learning rate; decays linearly to `1e-4` of itself.
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dims: 256,
            window: 10,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingStats {
    /// (center, context) pairs seen per epoch.
    pub pairs_per_epoch: u64,
    /// Mean pair loss per epoch.
    pub epoch_loss: Vec<f64>,
}

impl TrainingStats {
    /// True when the corpus yielded no training pairs, so the vectors are
    /// still at their random initialization.
    pub fn no_signal(&self) -> bool {
        self.pairs_per_epoch == 0
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(x))`, stable for large |x|.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Loss of one (center, context) pair with its negatives:
/// `-ln σ(u·v) - Σ ln σ(-u·n_k)`.
pub fn pair_loss(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> f64 {
    let mut loss = -log_sigmoid(dot(center, context));
    for n in negatives {
        loss -= log_sigmoid(-dot(center, n));
    }
    loss
}

/// Gradients of [`pair_loss`] with respect to the center vector, the context
/// vector and each negative vector.
pub struct PairGradient {
    pub center: Vec<f64>,
    pub context: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

pub fn pair_gradient(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> PairGradient {
    let g_pos = sigmoid(dot(center, context)) - 1.0;
    let mut g_center: Vec<f64> = context.iter().map(|v| g_pos * v).collect();
    let g_context: Vec<f64> = center.iter().map(|u| g_pos * u).collect();
    let mut g_negs = Vec::with_capacity(negatives.len());
    for n in negatives {
        let g = sigmoid(dot(center, n));
        for (gc, nv) in g_center.iter_mut().zip(n.iter()) {
            *gc += g * nv;
        }
        g_negs.push(center.iter().map(|u| g * u).collect());
    }
    PairGradient {
        center: g_center,
        context: g_context,
        negatives: g_negs,
    }
}

/// Cumulative unigram^0.75 distribution for negative sampling.
pub struct NegativeSampler {
    cumulative: Vec<f64>,
}

impl NegativeSampler {
    pub fn new(counts: &[u64]) -> Option<Self> {
        let mut acc = 0.0;
        let cumulative: Vec<f64> = counts
            .iter()
            .map(|&c| {
                acc += (c as f64).powf(0.75);
                acc
            })
            .collect();
        (acc > 0.0).then_some(NegativeSampler { cumulative })
    }

    pub fn sample<R: Rng>(&self, r: &mut R) -> usize {
        let total = *self.cumulative.last().expect("non-empty sampler");
        let x = r.gen::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= x)
            .min(self.cumulative.len() - 1)
    }
}

/// Trains input vectors for `vocab_size` ids. Ids in `sequences` must be
/// `< vocab_size`.
///
/// Single-threaded and deterministic for a fixed config.
pub fn train_skipgram(
    sequences: &[Vec<usize>],
    vocab_size: usize,
    config: &SkipGramConfig,
) -> Result<(Matrix, TrainingStats)> {
    if config.dims < 1 {
        return Err(Error::invalid("embedding dims must be >= 1"));
    }
    if sequences.is_empty() {
        return Err(Error::invalid("no sequences to train on"));
    }
    if vocab_size == 0 {
        return Err(Error::invalid("empty vocabulary"));
    }
    let dims = config.dims;
    let mut counts = vec![0u64; vocab_size];
    for s in sequences {
        for &t in s {
            if t >= vocab_size {
                return Err(Error::invalid(format!("token id {t} >= vocabulary size {vocab_size}")));
            }
            counts[t] += 1;
        }
    }
    let mut r = rng::rng(rng::derive_seed(config.seed, "skipgram"));
    let bound = 0.5 / dims as f64;
    let mut input: Vec<f64> = (0..vocab_size * dims)
        .map(|_| r.gen_range(-bound..bound))
        .collect();
    let mut output = vec![0.0f64; vocab_size * dims];

    let pairs_per_epoch: u64 = sequences
        .iter()
        .map(|s| {
            let n = s.len();
            (0..n)
                .map(|i| (i.min(config.window) + (n - 1 - i).min(config.window)) as u64)
                .sum::<u64>()
        })
        .sum();
    let mut stats = TrainingStats {
        pairs_per_epoch,
        epoch_loss: Vec::with_capacity(config.epochs),
    };
    let Some(sampler) = NegativeSampler::new(&counts) else {
        return Err(Error::invalid("empty vocabulary"));
    };
    if pairs_per_epoch == 0 {
        let m = Matrix::from_vec(vocab_size, dims, input)?;
        return Ok((m, stats));
    }

    let total = (pairs_per_epoch * config.epochs as u64) as f64;
    let min_lr = config.learning_rate * 1e-4;
    let mut done = 0u64;
    let mut grad_center = vec![0.0f64; dims];
    let mut neg_ids = Vec::with_capacity(config.negatives);
    for _ in 0..config.epochs {
        let mut loss_sum = 0.0;
        for seq in sequences {
            for (i, &center) in seq.iter().enumerate() {
                let lo = i.saturating_sub(config.window);
                let hi = (i + config.window).min(seq.len() - 1);
                for (j, &context) in seq.iter().enumerate().take(hi + 1).skip(lo) {
                    if j == i {
                        continue;
                    }
                    let lr = (config.learning_rate * (1.0 - done as f64 / total)).max(min_lr);
                    done += 1;
                    neg_ids.clear();
                    for _ in 0..config.negatives {
                        neg_ids.push(sampler.sample(&mut r));
                    }
                    loss_sum += sgd_pair(
                        &mut input,
                        &mut output,
                        dims,
                        center,
                        context,
                        &neg_ids,
                        lr,
                        &mut grad_center,
                    );
                }
            }
        }
        stats.epoch_loss.push(loss_sum / pairs_per_epoch as f64);
    }
    let m = Matrix::from_vec(vocab_size, dims, input)?;
    Ok((m, stats))
}

/// One SGD step on a pair; returns the pair loss before the update.
///
/// Same math as [`pair_gradient`], applied in place. Output rows are updated
/// sequentially, so a negative equal to the context sees the context update.
#[allow(clippy::too_many_arguments)]
fn sgd_pair(
    input: &mut [f64],
    output: &mut [f64],
    dims: usize,
    center: usize,
    context: usize,
    negatives: &[usize],
    lr: f64,
    grad_center: &mut [f64],
) -> f64 {
    let u = &input[center * dims..(center + 1) * dims];
    grad_center.iter_mut().for_each(|g| *g = 0.0);
    let mut loss = 0.0;
    let mut step = |target: usize, positive: bool, grad_center: &mut [f64]| {
        let v = &mut output[target * dims..(target + 1) * dims];
        let s = dot(u, v);
        let (g, l) = if positive {
            (sigmoid(s) - 1.0, -log_sigmoid(s))
        } else {
            (sigmoid(s), -log_sigmoid(-s))
        };
        for k in 0..dims {
            grad_center[k] += g * v[k];
            v[k] -= lr * g * u[k];
        }
        l
    };
    loss += step(context, true, grad_center);
    for &n in negatives {
        loss += step(n, false, grad_center);
    }
    let u = &mut input[center * dims..(center + 1) * dims];
    for k in 0..dims {
        u[k] -= lr * grad_center[k];
    }
    loss
}
