//! Momentum-contrastive tuning of the hash layers.
//!
//! A query encoder and a key encoder start from the same weights. Each step encodes a
//! batch of positive pairs, scores every query code against its own key code and the
//! FIFO queue of past key codes with InfoNCE, backpropagates into the query encoder
//! only, takes an SGD step, moves the key encoder toward the query encoder by
//! momentum, and finally enqueues the batch's key codes.
//!
//! Concatenated codes are L2-normalized before every dot product in the loss. The
//! index and query stages keep using raw codes.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{prepare_input, sigmoid, EncoderConfig, HashEncoder};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub queue_len: usize,
    pub batch_size: usize,
    pub temperature: f64,
    pub momentum: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    /// Std-dev of the Gaussian jitter that forms positives for untimed sources.
    pub pair_jitter: f64,
    /// Largest temporal offset (in frames) between a query and its positive.
    pub max_offset: i64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            queue_len: 8192,
            batch_size: 256,
            temperature: 0.2,
            momentum: 0.999,
            learning_rate: 0.001,
            iterations: 60,
            pair_jitter: 0.05,
            max_offset: 150,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Settings used with the synthetic desk-scale corpus.
    pub fn desk() -> Self {
        Self {
            queue_len: 2048,
            batch_size: 128,
            learning_rate: 300.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.queue_len == 0 {
            return bad("queue length must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be > 0, got {}", self.temperature));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be >= 0, got {}", self.learning_rate));
        }
        if !(self.pair_jitter >= 0.0 && self.pair_jitter.is_finite()) {
            return bad(format!("pair jitter must be >= 0, got {}", self.pair_jitter));
        }
        if self.max_offset < 0 {
            return bad(format!("max offset must be >= 0, got {}", self.max_offset));
        }
        Ok(())
    }
}

/// Double-precision copy of an encoder's weights, used while training.
#[derive(Debug, Clone, PartialEq)]
pub struct HashParams {
    config: EncoderConfig,
    weights: Vec<f64>,
}

impl HashParams {
    pub fn from_encoder(encoder: &HashEncoder) -> Self {
        Self {
            config: *encoder.config(),
            weights: encoder.weights().iter().map(|&w| w as f64).collect(),
        }
    }

    pub fn new(config: EncoderConfig, weights: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if weights.len() != config.weight_count() {
            return Err(Error::Dimension {
                expected: config.weight_count(),
                got: weights.len(),
            });
        }
        Ok(Self { config, weights })
    }

    pub fn to_encoder(&self) -> Result<HashEncoder> {
        HashEncoder::from_weights(self.config, self.weights.iter().map(|&w| w as f32).collect())
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    fn prepare(&self, x: &[f32]) -> Result<Vec<f64>> {
        prepare_input(x, self.config.feature_dim, self.config.normalize_input)
    }

    /// Concatenated sigmoid code (length `b·r`) for a prepared input.
    fn concat_code(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.config.feature_dim)
            .map(|row| sigmoid(row.iter().zip(x).map(|(w, v)| w * v).sum()))
            .collect()
    }

    /// L2-normalized concatenated code of `x`.
    pub fn normalized_code(&self, x: &[f32]) -> Result<Vec<f64>> {
        let mut z = self.concat_code(&self.prepare(x)?);
        let n = l2_norm(&z);
        z.iter_mut().for_each(|v| *v /= n);
        Ok(z)
    }
}

/// FIFO queue of normalized key codes.
#[derive(Debug, Clone)]
pub struct CodeQueue {
    capacity: usize,
    entries: VecDeque<Vec<f64>>,
}

impl CodeQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn push(&mut self, code: Vec<f64>) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(code);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.iter().map(Vec::as_slice)
    }
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_finite(what: &str, v: &[f64]) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(what.into()));
    }
    Ok(())
}

/// Logits `[u·z⁺, u·q₁, …]/τ` with the positive first.
fn logits(u: &[f64], positive: &[f64], queue: &CodeQueue, tau: f64) -> Vec<f64> {
    std::iter::once(positive)
        .chain(queue.iter())
        .map(|v| dot(u, v) / tau)
        .collect()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// InfoNCE loss of a normalized query code against its positive and the queue.
/// The denominator has `queue.len() + 1` terms.
pub fn infonce(z_q: &[f64], z_pos: &[f64], queue: &CodeQueue, tau: f64) -> Result<f64> {
    if z_pos.len() != z_q.len() {
        return Err(Error::Dimension {
            expected: z_q.len(),
            got: z_pos.len(),
        });
    }
    if let Some(bad) = queue.iter().find(|q| q.len() != z_q.len()) {
        return Err(Error::Dimension {
            expected: z_q.len(),
            got: bad.len(),
        });
    }
    check_finite("query code", z_q)?;
    check_finite("positive code", z_pos)?;
    let s = logits(z_q, z_pos, queue, tau);
    check_finite("logits", &s)?;
    Ok(log_sum_exp(&s) - s[0])
}

/// Loss and gradient with respect to the raw (unnormalized) concatenated code `z`.
pub fn code_gradient(z: &[f64], z_pos: &[f64], queue: &CodeQueue, tau: f64) -> Result<(f64, Vec<f64>)> {
    let norm = l2_norm(z);
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::NonFinite("code norm".into()));
    }
    let u: Vec<f64> = z.iter().map(|v| v / norm).collect();
    let loss = infonce(&u, z_pos, queue, tau)?;
    let s = logits(&u, z_pos, queue, tau);
    let lse = log_sum_exp(&s);
    // dL/du = (Σ pᵢ vᵢ − z⁺)/τ
    let mut g_u: Vec<f64> = z_pos.iter().map(|p| -p / tau).collect();
    for (si, v) in s.iter().zip(std::iter::once(z_pos).chain(queue.iter())) {
        let p = (si - lse).exp();
        for (g, vk) in g_u.iter_mut().zip(v) {
            *g += p * vk / tau;
        }
    }
    // Jacobian of u = z/|z| is (I − u uᵀ)/|z|.
    let radial = dot(&u, &g_u);
    let g_z = g_u
        .iter()
        .zip(&u)
        .map(|(g, uk)| (g - uk * radial) / norm)
        .collect();
    Ok((loss, g_z))
}

/// Loss for one training sample and its gradient with respect to every weight of
/// `params` (same layout as the weights).
pub fn loss_and_grad(
    params: &HashParams,
    x_q: &[f32],
    z_pos: &[f64],
    queue: &CodeQueue,
    tau: f64,
) -> Result<(f64, Vec<f64>)> {
    let x = params.prepare(x_q)?;
    let h = params.concat_code(&x);
    let (loss, g_z) = code_gradient(&h, z_pos, queue, tau)?;
    let d = params.config.feature_dim;
    let mut grad = Vec::with_capacity(params.weights.len());
    for (g, hk) in g_z.iter().zip(&h) {
        let g_a = g * hk * (1.0 - hk);
        grad.extend(x.iter().map(|xi| g_a * xi));
    }
    debug_assert_eq!(grad.len(), d * h.len());
    check_finite("gradient", &grad)?;
    Ok((loss, grad))
}

/// Loss only; used by finite-difference checks.
pub fn loss_only(params: &HashParams, x_q: &[f32], z_pos: &[f64], queue: &CodeQueue, tau: f64) -> Result<f64> {
    let x = params.prepare(x_q)?;
    let h = params.concat_code(&x);
    let n = l2_norm(&h);
    let u: Vec<f64> = h.iter().map(|v| v / n).collect();
    infonce(&u, z_pos, queue, tau)
}

/// Plain SGD: `w ← w − lr·g`.
pub fn sgd_step(params: &mut HashParams, grad: &[f64], lr: f64) -> Result<()> {
    if grad.len() != params.weights.len() {
        return Err(Error::Dimension {
            expected: params.weights.len(),
            got: grad.len(),
        });
    }
    for (w, g) in params.weights.iter_mut().zip(grad) {
        *w -= lr * g;
    }
    Ok(())
}

/// `θ_k ← m·θ_k + (1−m)·θ_q`, element-wise.
pub fn momentum_update(key: &mut HashParams, query: &HashParams, m: f64) -> Result<()> {
    if key.config.feature_dim != query.config.feature_dim
        || key.weights.len() != query.weights.len()
    {
        return Err(Error::Dimension {
            expected: key.weights.len(),
            got: query.weights.len(),
        });
    }
    for (k, q) in key.weights.iter_mut().zip(&query.weights) {
        *k = m * *k + (1.0 - m) * q;
    }
    Ok(())
}

/// One video's features ordered by start frame.
#[derive(Debug, Clone)]
pub struct TimedSequence {
    starts: Vec<u64>,
    features: Vec<Vec<f32>>,
}

impl TimedSequence {
    pub fn new(mut records: Vec<(u64, Vec<f32>)>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("timed sequence".into()));
        }
        records.sort_by_key(|(s, _)| *s);
        let (starts, features) = records.into_iter().unzip();
        Ok(Self { starts, features })
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    /// Index of the record whose start frame is nearest `frame` (earlier on ties).
    pub fn nearest(&self, frame: i64) -> usize {
        let target = frame.clamp(0, i64::MAX) as u64;
        let pos = self.starts.partition_point(|&s| s < target);
        if pos == 0 {
            return 0;
        }
        if pos == self.starts.len() {
            return pos - 1;
        }
        if target - self.starts[pos - 1] <= self.starts[pos] - target {
            pos - 1
        } else {
            pos
        }
    }
}

#[derive(Debug, Clone)]
pub enum PairSource {
    /// Positive = query + isotropic Gaussian jitter.
    Jitter { features: Vec<Vec<f32>>, sigma: f64 },
    /// Positive = record whose start frame is nearest `t + Δt`, `Δt ~ U{−max_offset..max_offset}`.
    Temporal { videos: Vec<TimedSequence>, max_offset: i64 },
}

/// Emits `(x_q, x_k)` positive pairs.
#[derive(Debug, Clone)]
pub struct PairSampler {
    source: PairSource,
    dim: usize,
    // cumulative record counts, for uniform sampling over all temporal records
    offsets: Vec<usize>,
}

impl PairSampler {
    pub fn new(source: PairSource) -> Result<Self> {
        let (dim, offsets) = match &source {
            PairSource::Jitter { features, sigma } => {
                if !(*sigma >= 0.0 && sigma.is_finite()) {
                    return Err(Error::InvalidConfig(format!("jitter must be >= 0, got {sigma}")));
                }
                let first = features.first().ok_or_else(|| Error::Empty("pair source".into()))?;
                (first.len(), Vec::new())
            }
            PairSource::Temporal { videos, max_offset } => {
                if *max_offset < 0 {
                    return Err(Error::InvalidConfig("max offset must be >= 0".into()));
                }
                let first = videos
                    .iter()
                    .find(|v| !v.is_empty())
                    .ok_or_else(|| Error::Empty("pair source".into()))?;
                let mut acc = 0;
                let offsets = videos
                    .iter()
                    .map(|v| {
                        acc += v.len();
                        acc
                    })
                    .collect();
                (first.features[0].len(), offsets)
            }
        };
        let all_dims_match = match &source {
            PairSource::Jitter { features, .. } => features.iter().all(|f| f.len() == dim),
            PairSource::Temporal { videos, .. } => videos
                .iter()
                .flat_map(|v| &v.features)
                .all(|f| f.len() == dim),
        };
        if !all_dims_match {
            return Err(Error::InvalidConfig("pair source features differ in dimension".into()));
        }
        Ok(Self { source, dim, offsets })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f32>, Vec<f32>) {
        match &self.source {
            PairSource::Jitter { features, sigma } => {
                let x = features[rng.random_range(0..features.len())].clone();
                if *sigma == 0.0 {
                    return (x.clone(), x);
                }
                let noise = Normal::new(0.0, *sigma).expect("validated sigma");
                let k = x.iter().map(|&v| v + noise.sample(rng) as f32).collect();
                (x, k)
            }
            PairSource::Temporal { videos, max_offset } => {
                let total = *self.offsets.last().unwrap();
                let pick = rng.random_range(0..total);
                let v = self.offsets.partition_point(|&o| o <= pick);
                let video = &videos[v];
                let i = pick - if v == 0 { 0 } else { self.offsets[v - 1] };
                let dt = rng.random_range(-*max_offset..=*max_offset);
                let target = video.starts[i] as i64 + dt;
                let k = video.nearest(target);
                (video.features[i].clone(), video.features[k].clone())
            }
        }
    }
}

/// Stateful training loop; exposes both encoders between steps.
pub struct Trainer {
    config: TrainConfig,
    query: HashParams,
    key: HashParams,
    queue: CodeQueue,
    rng: ChaCha8Rng,
    steps: usize,
}

impl Trainer {
    pub fn new(init: &HashEncoder, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let query = HashParams::from_encoder(init);
        Ok(Self {
            key: query.clone(),
            query,
            queue: CodeQueue::new(config.queue_len),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            steps: 0,
            config,
        })
    }

    pub fn query(&self) -> &HashParams {
        &self.query
    }

    pub fn key(&self) -> &HashParams {
        &self.key
    }

    pub fn queue(&self) -> &CodeQueue {
        &self.queue
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// One optimization step; returns the mean InfoNCE loss over the batch.
    ///
    /// Per-sample work runs on the rayon pool, but gradients are reduced in batch
    /// order so results do not depend on the worker count.
    pub fn step(&mut self, sampler: &PairSampler) -> Result<f64> {
        let d = self.query.config.feature_dim;
        if sampler.dim() != d {
            return Err(Error::Dimension {
                expected: d,
                got: sampler.dim(),
            });
        }
        let pairs: Vec<(Vec<f32>, Vec<f32>)> = (0..self.config.batch_size)
            .map(|_| sampler.sample_pair(&mut self.rng))
            .collect();
        let keys: Vec<Vec<f64>> = pairs
            .par_iter()
            .map(|(_, xk)| self.key.normalized_code(xk))
            .collect::<Result<_>>()?;
        let tau = self.config.temperature;
        let per_sample: Vec<(f64, Vec<f64>)> = pairs
            .par_iter()
            .zip(&keys)
            .map(|((xq, _), zk)| loss_and_grad(&self.query, xq, zk, &self.queue, tau))
            .collect::<Result<_>>()?;

        let scale = 1.0 / self.config.batch_size as f64;
        let mut loss = 0.0;
        let mut grad = vec![0f64; self.query.weights.len()];
        for (l, g) in &per_sample {
            loss += l;
            for (acc, gi) in grad.iter_mut().zip(g) {
                *acc += gi;
            }
        }
        loss *= scale;
        grad.iter_mut().for_each(|g| *g *= scale);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {}", self.steps)));
        }
        check_finite("batch gradient", &grad)?;

        sgd_step(&mut self.query, &grad, self.config.learning_rate)?;
        momentum_update(&mut self.key, &self.query, self.config.momentum)?;
        for k in keys {
            self.queue.push(k);
        }
        self.steps += 1;
        Ok(loss)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The trained query-side encoder.
    pub encoder: HashEncoder,
    /// Mean batch loss per step.
    pub losses: Vec<f64>,
}

pub fn train(init: &HashEncoder, sampler: &PairSampler, config: TrainConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(init, config)?;
    let mut losses = Vec::with_capacity(config.iterations);
    for step in 0..config.iterations {
        let loss = trainer.step(sampler)?;
        log::debug!("step {step}: loss {loss:.6}");
        losses.push(loss);
    }
    let encoder = if config.iterations == 0 {
        init.clone()
    } else {
        trainer.query.to_encoder()?
    };
    Ok(TrainOutcome { encoder, losses })
}

/// Mean cosine similarity between the concatenated codes of each pair, with codes
/// centered on the binarization threshold ½ before normalizing. Uncentered sigmoid codes
/// all lie near (½,…,½), so their plain cosine is close to 1 for any pair.
pub fn mean_positive_similarity(encoder: &HashEncoder, pairs: &[(Vec<f32>, Vec<f32>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("pair list".into()));
    }
    let params = HashParams::from_encoder(encoder);
    let centered = |x: &[f32]| -> Result<Vec<f64>> {
        let mut z: Vec<f64> = params.concat_code(&params.prepare(x)?).iter().map(|h| h - 0.5).collect();
        let n = l2_norm(&z);
        if n == 0.0 {
            return Err(Error::Undefined("code lies exactly on the binarization threshold".into()));
        }
        z.iter_mut().for_each(|v| *v /= n);
        Ok(z)
    };
    let sims: Vec<f64> = pairs
        .par_iter()
        .map(|(a, b)| Ok(dot(&centered(a)?, &centered(b)?)))
        .collect::<Result<_>>()?;
    Ok(sims.iter().sum::<f64>() / sims.len() as f64)
}
