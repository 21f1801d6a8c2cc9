//! The query stage: bucket lookup per table, bucket-average distance, min over
//! tables, then frame assembly and temporal smoothing.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{HashCode, HashEncoder};
use crate::error::{Error, Result};
use crate::index::{HashIndex, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    /// `1 − cos(a, b)`.
    Cosine,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        })
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::InvalidConfig(format!(
                "unknown distance {other:?} (expected euclidean or cosine)"
            ))),
        }
    }
}

impl Metric {
    pub fn distance(self, a: &[f32], b: &[f32]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        match self {
            Metric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(&x, &y)| {
                    let d = x as f64 - y as f64;
                    d * d
                })
                .sum::<f64>()
                .sqrt(),
            Metric::Cosine => {
                let (mut ab, mut aa, mut bb) = (0f64, 0f64, 0f64);
                for (&x, &y) in a.iter().zip(b) {
                    let (x, y) = (x as f64, y as f64);
                    ab += x * y;
                    aa += x * x;
                    bb += y * y;
                }
                if aa == 0.0 || bb == 0.0 {
                    return 1.0;
                }
                (1.0 - ab / (aa.sqrt() * bb.sqrt())).max(0.0)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueryConfig {
    /// Distance assigned when a table has no bucket for the key; `None` means `√r`.
    pub sentinel: Option<f64>,
    pub distance: Metric,
    /// Gaussian smoothing width in frames; 0 disables smoothing.
    pub smooth_sigma: f64,
    pub per_video_minmax: bool,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            sentinel: None,
            distance: Metric::Euclidean,
            smooth_sigma: 10.0,
            per_video_minmax: false,
        }
    }
}

impl QueryConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.sentinel {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidConfig(format!("sentinel must be > 0, got {s}")));
            }
        }
        if !(self.smooth_sigma >= 0.0 && self.smooth_sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "smoothing sigma must be >= 0, got {}",
                self.smooth_sigma
            )));
        }
        Ok(())
    }

    pub fn sentinel_for(&self, code_len: usize) -> f64 {
        self.sentinel.unwrap_or((code_len as f64).sqrt())
    }
}

/// Result of scoring one feature, with lookup accounting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub score: f64,
    /// Stored codes (or bucket means) the query was compared with, over all tables.
    pub codes_compared: u64,
    /// Tables whose bucket existed.
    pub hits: u32,
    /// Multiplications spent: `d·r·b` for hashing plus `r` per compared code.
    pub multiplications: u64,
}

/// Frames `[start, start + len)` covered by one feature record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSpan {
    pub start: u64,
    pub len: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    pub video_id: String,
    pub scores: Vec<f64>,
}

/// Average distance between `h` and the bucket keyed by `bin(h)` in table `j`, or
/// `sentinel` if there is no such bucket.
pub fn bucket_distance(
    index: &HashIndex,
    table: usize,
    h: &HashCode,
    metric: Metric,
    sentinel: f64,
) -> Result<f64> {
    Ok(bucket_lookup(index, table, h, metric, sentinel)?.0)
}

fn bucket_lookup(
    index: &HashIndex,
    table: usize,
    h: &HashCode,
    metric: Metric,
    sentinel: f64,
) -> Result<(f64, u64)> {
    let r = index.code_len();
    if h.len() != r {
        return Err(Error::Dimension {
            expected: r,
            got: h.len(),
        });
    }
    let Some(bucket) = index.lookup(table, &h.binarize()) else {
        return Ok((sentinel, 0));
    };
    let q = h.values();
    Ok(match index.variant() {
        Variant::Full => {
            let total: f64 = bucket
                .payload()
                .chunks_exact(r)
                .map(|c| metric.distance(q, c))
                .sum();
            (total / bucket.count() as f64, bucket.count())
        }
        Variant::Light => (metric.distance(q, bucket.payload()), 1),
    })
}

/// Scores test features against a built index.
pub struct Scorer<'a> {
    index: &'a HashIndex,
    encoder: &'a HashEncoder,
    config: QueryConfig,
    sentinel: f64,
}

impl<'a> Scorer<'a> {
    pub fn new(index: &'a HashIndex, encoder: &'a HashEncoder, config: QueryConfig) -> Result<Self> {
        config.validate()?;
        index.check_encoder(encoder)?;
        Ok(Self {
            index,
            encoder,
            config,
            sentinel: config.sentinel_for(index.code_len()),
        })
    }

    pub fn sentinel(&self) -> f64 {
        self.sentinel
    }

    pub fn config(&self) -> &QueryConfig {
        &self.config
    }

    pub fn bucket_distance(&self, table: usize, h: &HashCode) -> Result<f64> {
        bucket_distance(self.index, table, h, self.config.distance, self.sentinel)
    }

    /// Minimum over tables of the bucket-average distance.
    pub fn score(&self, y: &[f32]) -> Result<f64> {
        Ok(self.probe(y)?.score)
    }

    pub fn probe(&self, y: &[f32]) -> Result<Probe> {
        let codes = self.encoder.encode_layers(y)?;
        let c = self.encoder.config();
        let r = c.code_len as u64;
        let mut probe = Probe {
            score: f64::INFINITY,
            codes_compared: 0,
            hits: 0,
            multiplications: (c.feature_dim * c.code_len * c.num_tables) as u64,
        };
        for (j, h) in codes.iter().enumerate() {
            let (dist, compared) =
                bucket_lookup(self.index, j, h, self.config.distance, self.sentinel)?;
            if compared > 0 {
                probe.hits += 1;
            }
            probe.codes_compared += compared;
            probe.multiplications += r * compared;
            probe.score = probe.score.min(dist);
        }
        Ok(probe)
    }

    /// Scores for a batch of features, in input order.
    pub fn score_all<F: AsRef<[f32]> + Sync>(&self, features: &[F]) -> Result<Vec<f64>> {
        features.par_iter().map(|y| self.score(y.as_ref())).collect()
    }

    /// Frame-level series for one video: per-feature scores averaged over covered
    /// frames, smoothed, then optionally min-max normalized.
    pub fn score_video<F: AsRef<[f32]> + Sync>(
        &self,
        video_id: &str,
        features: &[F],
        spans: &[FrameSpan],
        frame_count: usize,
    ) -> Result<ScoreSeries> {
        let raw = self.score_all(features)?;
        let scores = finish_series(&raw, spans, frame_count, &self.config)?;
        Ok(ScoreSeries {
            video_id: video_id.to_string(),
            scores,
        })
    }
}

/// Frame assembly, smoothing and optional normalization applied to per-feature scores.
/// Shared with the baseline scorers so every method goes through the same pipeline.
pub fn finish_series(
    feature_scores: &[f64],
    spans: &[FrameSpan],
    frame_count: usize,
    config: &QueryConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    let frames = assemble_frames(feature_scores, spans, frame_count)?;
    let mut out = smooth(&frames, config.smooth_sigma);
    if config.per_video_minmax {
        minmax_normalize(&mut out);
    }
    Ok(out)
}

/// Mean score of the features covering each frame. Frames covered by no feature take
/// the value of the nearest covered frame (the earlier one on ties).
pub fn assemble_frames(scores: &[f64], spans: &[FrameSpan], frame_count: usize) -> Result<Vec<f64>> {
    if scores.len() != spans.len() {
        return Err(Error::Dimension {
            expected: spans.len(),
            got: scores.len(),
        });
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("feature score {s}")));
    }
    let mut sum = vec![0f64; frame_count];
    let mut cover = vec![0u32; frame_count];
    for (i, (&s, span)) in scores.iter().zip(spans).enumerate() {
        let end = span.start.checked_add(span.len as u64);
        if span.len == 0 || end.is_none_or(|e| e > frame_count as u64) {
            return Err(Error::data(
                format!("feature {i}"),
                format!(
                    "span [{}, +{}) out of range for {frame_count} frames",
                    span.start, span.len
                ),
            ));
        }
        for f in span.start as usize..end.unwrap() as usize {
            sum[f] += s;
            cover[f] += 1;
        }
    }
    if cover.iter().all(|&c| c == 0) {
        return Err(Error::Empty("no frame is covered by any feature".into()));
    }
    let mut out: Vec<Option<f64>> = sum
        .iter()
        .zip(&cover)
        .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
        .collect();

    let mut prev: Vec<Option<usize>> = vec![None; frame_count];
    let mut last = None;
    for f in 0..frame_count {
        if cover[f] > 0 {
            last = Some(f);
        }
        prev[f] = last;
    }
    let mut next = None;
    for f in (0..frame_count).rev() {
        if cover[f] > 0 {
            next = Some(f);
            continue;
        }
        let src = match (prev[f], next) {
            (Some(p), Some(n)) => {
                if f - p <= n - f {
                    p
                } else {
                    n
                }
            }
            (Some(p), None) => p,
            (None, Some(n)) => n,
            (None, None) => unreachable!(),
        };
        out[f] = out[src];
    }
    Ok(out.into_iter().map(|v| v.unwrap()).collect())
}

/// Normalized Gaussian kernel truncated at radius `⌈3σ⌉`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let w: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Gaussian smoothing with symmetric (half-sample) reflection at both ends.
/// `sigma == 0` is the identity.
pub fn smooth(series: &[f64], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 || series.is_empty() {
        return series.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let n = series.len() as i64;
    let reflect = |i: i64| -> usize {
        let m = i.rem_euclid(2 * n);
        (if m < n { m } else { 2 * n - 1 - m }) as usize
    };
    (0..n)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * series[reflect(i + k as i64 - radius)])
                .sum()
        })
        .collect()
}

/// Rescale to `[0,1]`; a constant series maps to all zeros.
pub fn minmax_normalize(series: &mut [f64]) {
    let (lo, hi) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    for v in series.iter_mut() {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
    }
}
