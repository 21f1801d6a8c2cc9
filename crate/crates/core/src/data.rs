//! On-disk corpus formats (feature files, JSON manifests, label and score CSVs) and
//! the seeded synthetic corpus generator.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{read_file, write_file, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::scoring::FrameSpan;
use crate::training::TimedSequence;

const FEATURE_MAGIC: &[u8; 8] = b"LLSHFVS1";
const FLAG_TIMESTAMPS: u8 = 1;

/// Feature vectors of one video, optionally with the frame span of each record.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    dim: usize,
    features: Vec<Vec<f32>>,
    spans: Option<Vec<FrameSpan>>,
}

impl FeatureSet {
    pub fn new(dim: usize, features: Vec<Vec<f32>>, spans: Option<Vec<FrameSpan>>) -> Result<Self> {
        if dim == 0 || dim > u32::MAX as usize {
            return Err(Error::InvalidConfig(format!("feature dimension {dim} out of range")));
        }
        if let Some(f) = features.iter().find(|f| f.len() != dim) {
            return Err(Error::Dimension {
                expected: dim,
                got: f.len(),
            });
        }
        if let Some(s) = &spans {
            if s.len() != features.len() {
                return Err(Error::InvalidConfig(format!(
                    "{} spans for {} feature records",
                    s.len(),
                    features.len()
                )));
            }
        }
        Ok(Self { dim, features, spans })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[Vec<f32>] {
        &self.features
    }

    pub fn spans(&self) -> Option<&[FrameSpan]> {
        self.spans.as_deref()
    }

    pub fn into_features(self) -> Vec<Vec<f32>> {
        self.features
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let per = 4 * self.dim + if self.spans.is_some() { 12 } else { 0 };
        let mut w = ByteWriter::with_capacity(21 + per * self.features.len());
        w.bytes(FEATURE_MAGIC);
        w.u32(self.dim as u32);
        w.u64(self.features.len() as u64);
        w.u8(if self.spans.is_some() { FLAG_TIMESTAMPS } else { 0 });
        for (i, f) in self.features.iter().enumerate() {
            w.f32s(f);
            if let Some(spans) = &self.spans {
                w.u64(spans[i].start);
                w.u32(spans[i].len);
            }
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8], context: &str) -> Result<Self> {
        let mut r = ByteReader::new(bytes, context);
        r.magic(FEATURE_MAGIC)?;
        let dim = r.u32("dimension")? as usize;
        if dim == 0 {
            return Err(r.error("feature dimension is 0"));
        }
        let count = r.u64("record count")?;
        let flags = r.u8("flags")?;
        if flags & !FLAG_TIMESTAMPS != 0 {
            return Err(r.error(format!("unknown flag bits {flags:#04x}")));
        }
        let timed = flags & FLAG_TIMESTAMPS != 0;
        let per = 4 * dim as u64 + if timed { 12 } else { 0 };
        let expected = count.checked_mul(per);
        if expected != Some(r.remaining() as u64) {
            let detail = match expected {
                Some(e) => format!("header promises {count} records of {per} bytes ({e} bytes) but {} remain", r.remaining()),
                None => format!("record count {count} overflows"),
            };
            return Err(r.error(format!("payload length mismatch: {detail}")));
        }
        let count = count as usize;
        let mut features = Vec::with_capacity(count);
        let mut spans = timed.then(|| Vec::with_capacity(count));
        for i in 0..count {
            let mut f = Vec::with_capacity(dim);
            r.f32s_into(dim, &mut f, &format!("record {i}"))?;
            if f.iter().any(|v| !v.is_finite()) {
                return Err(r.error(format!("record {i} contains a non-finite value")));
            }
            features.push(f);
            if let Some(s) = spans.as_mut() {
                let start = r.u64("start frame")?;
                let len = r.u32("frame span")?;
                if len == 0 {
                    return Err(r.error(format!("record {i} spans zero frames")));
                }
                s.push(FrameSpan { start, len });
            }
        }
        r.finish()?;
        Ok(Self { dim, features, spans })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&read_file(path)?, &path.display().to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoEntry {
    pub id: String,
    /// Relative to the manifest's directory.
    pub features: PathBuf,
    pub frame_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
}

/// JSON listing of one split of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub split: Split,
    pub videos: Vec<VideoEntry>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::data(path.display().to_string(), e.to_string()))?;
        manifest.validate(path)?;
        Ok(manifest)
    }

    /// Checks ids are unique, referenced files exist and test videos carry labels.
    pub fn validate(&self, path: &Path) -> Result<()> {
        let ctx = path.display().to_string();
        let base = path.parent().unwrap_or(Path::new(""));
        let mut seen = std::collections::HashSet::new();
        for v in &self.videos {
            if !seen.insert(&v.id) {
                return Err(Error::data(&ctx, format!("duplicate video id {:?}", v.id)));
            }
            if v.frame_count == 0 {
                return Err(Error::data(&ctx, format!("video {:?} has frame_count 0", v.id)));
            }
            let f = base.join(&v.features);
            if !f.is_file() {
                return Err(Error::data(&ctx, format!("video {:?}: feature file {} not found", v.id, f.display())));
            }
            match &v.labels {
                Some(l) if !base.join(l).is_file() => {
                    return Err(Error::data(
                        &ctx,
                        format!("video {:?}: label file {} not found", v.id, base.join(l).display()),
                    ))
                }
                None if self.split == Split::Test => {
                    return Err(Error::data(&ctx, format!("test video {:?} has no label file", v.id)))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_file(path.as_ref(), text.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub id: String,
    pub features: FeatureSet,
    pub frame_count: u64,
    pub labels: Option<Vec<u8>>,
}

impl Video {
    /// Frame spans of the records; without stored spans, record `i` covers frame `i`
    /// provided there is one record per frame.
    pub fn spans(&self) -> Result<Vec<FrameSpan>> {
        if let Some(s) = self.features.spans() {
            return Ok(s.to_vec());
        }
        if self.features.len() as u64 != self.frame_count {
            return Err(Error::data(
                &self.id,
                format!(
                    "{} untimed records cannot cover {} frames; store frame spans in the feature file",
                    self.features.len(),
                    self.frame_count
                ),
            ));
        }
        Ok((0..self.frame_count).map(|start| FrameSpan { start, len: 1 }).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub split: Split,
    pub videos: Vec<Video>,
}

impl Dataset {
    /// Loads a manifest and every file it references, enforcing consistent dimension
    /// and label lengths.
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let path = manifest_path.as_ref();
        let manifest = Manifest::load(path)?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let videos: Vec<Video> = manifest
            .videos
            .par_iter()
            .map(|v| {
                let features = FeatureSet::load(base.join(&v.features))?;
                let labels = v
                    .labels
                    .as_ref()
                    .map(|l| load_labels(base.join(l), v.frame_count))
                    .transpose()?;
                Ok(Video {
                    id: v.id.clone(),
                    features,
                    frame_count: v.frame_count,
                    labels,
                })
            })
            .collect::<Result<_>>()?;
        let ds = Dataset {
            name: manifest.name,
            split: manifest.split,
            videos,
        };
        ds.check_dims(&path.display().to_string())?;
        Ok(ds)
    }

    fn check_dims(&self, ctx: &str) -> Result<()> {
        let mut dim = None;
        for v in &self.videos {
            match dim {
                None => dim = Some(v.features.dim()),
                Some(d) if d != v.features.dim() => {
                    return Err(Error::data(
                        ctx,
                        format!("video {:?} has dimension {}, expected {d}", v.id, v.features.dim()),
                    ))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> Option<usize> {
        self.videos.first().map(|v| v.features.dim())
    }

    pub fn num_records(&self) -> usize {
        self.videos.iter().map(|v| v.features.len()).sum()
    }

    /// Every record of every video, in manifest order.
    pub fn all_features(&self) -> Vec<&[f32]> {
        self.videos
            .iter()
            .flat_map(|v| v.features.features().iter().map(|f| f.as_slice()))
            .collect()
    }

    /// Per-video timestamped sequences for temporal positive sampling.
    pub fn timed_sequences(&self) -> Result<Vec<TimedSequence>> {
        self.videos
            .iter()
            .filter(|v| !v.features.is_empty())
            .map(|v| {
                let spans = v.spans()?;
                TimedSequence::new(
                    spans
                        .iter()
                        .map(|s| s.start)
                        .zip(v.features.features().iter().cloned())
                        .collect(),
                )
            })
            .collect()
    }

    /// Writes `<dir>/<stem>.json` plus feature (and label) files under `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<PathBuf> {
        let dir = dir.as_ref();
        for sub in ["features", "labels"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let mut entries = Vec::with_capacity(self.videos.len());
        for v in &self.videos {
            let features = PathBuf::from("features").join(format!("{}.fvs", v.id));
            v.features.save(dir.join(&features))?;
            let labels = match &v.labels {
                Some(l) => {
                    let p = PathBuf::from("labels").join(format!("{}.csv", v.id));
                    save_labels(dir.join(&p), l)?;
                    Some(p)
                }
                None => None,
            };
            entries.push(VideoEntry {
                id: v.id.clone(),
                features,
                frame_count: v.frame_count,
                labels,
            });
        }
        let manifest = Manifest {
            name: self.name.clone(),
            split: self.split,
            videos: entries,
        };
        let path = dir.join(format!("{stem}.json"));
        manifest.save(&path)?;
        Ok(path)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    frame_index: u64,
    label: u8,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    frame_index: u64,
    score: f64,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let at = e
        .position()
        .map(|p| format!("line {}: ", p.line()))
        .unwrap_or_default();
    Error::data(path.display().to_string(), format!("{at}{e}"))
}

/// Reads a `frame_index,label` CSV, requiring dense indices from 0 and binary labels.
pub fn load_labels(path: impl AsRef<Path>, frame_count: u64) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let ctx = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for row in rdr.deserialize::<LabelRow>() {
        let row = row.map_err(|e| csv_err(path, e))?;
        if row.frame_index != out.len() as u64 {
            return Err(Error::data(
                &ctx,
                format!("frame_index {} out of order, expected {}", row.frame_index, out.len()),
            ));
        }
        if row.label > 1 {
            return Err(Error::data(&ctx, format!("frame {}: label {} is not 0 or 1", row.frame_index, row.label)));
        }
        out.push(row.label);
    }
    if out.len() as u64 != frame_count {
        return Err(Error::data(
            &ctx,
            format!("{} labels but the video has {frame_count} frames", out.len()),
        ));
    }
    Ok(out)
}

pub fn save_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for (i, &label) in labels.iter().enumerate() {
        w.serialize(LabelRow {
            frame_index: i as u64,
            label,
        })
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes a `frame_index,score` CSV; values use the shortest exact decimal form.
pub fn save_scores(path: impl AsRef<Path>, scores: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for (i, &score) in scores.iter().enumerate() {
        w.serialize(ScoreRow {
            frame_index: i as u64,
            score,
        })
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let ctx = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for row in rdr.deserialize::<ScoreRow>() {
        let row = row.map_err(|e| csv_err(path, e))?;
        if row.frame_index != out.len() as u64 {
            return Err(Error::data(
                &ctx,
                format!("frame_index {} out of order, expected {}", row.frame_index, out.len()),
            ));
        }
        if !row.score.is_finite() {
            return Err(Error::NonFinite(format!("{ctx}: frame {} score", row.frame_index)));
        }
        out.push(row.score);
    }
    Ok(out)
}

/// Knobs of the synthetic corpus: normal data is a mixture of `num_modes` Gaussian
/// clusters on the unit sphere with Zipf-like weights; test videos walk through the
/// modes with AR(1) noise and contain one contiguous anomalous segment displaced off
/// the manifold by `anomaly_shift`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub d: usize,
    pub num_modes: usize,
    /// Noise magnitude around a mode center (before projection to the sphere).
    pub mode_spread: f64,
    /// Feature records across all training videos.
    pub train_count: usize,
    pub train_videos: usize,
    /// Test videos.
    pub videos: usize,
    pub frames_per_video: usize,
    pub snippet_len: u32,
    pub snippet_stride: u32,
    /// Mean number of consecutive snippets spent in one mode.
    pub dwell: usize,
    /// Fraction of each test video's frames inside the anomalous segment.
    pub anomaly_rate: f64,
    pub anomaly_shift: f64,
    /// AR(1) coefficient of the noise between consecutive snippets.
    pub temporal_correlation: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            d: 64,
            num_modes: 8,
            mode_spread: 0.35,
            train_count: 6000,
            train_videos: 12,
            videos: 16,
            frames_per_video: 960,
            snippet_len: 32,
            snippet_stride: 16,
            dwell: 24,
            anomaly_rate: 0.2,
            anomaly_shift: 1.2,
            temporal_correlation: 0.9,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "tiny" => Ok(Self {
                d: 16,
                num_modes: 4,
                train_count: 400,
                train_videos: 4,
                videos: 4,
                frames_per_video: 320,
                ..Self::default()
            }),
            other => Err(Error::InvalidConfig(format!("unknown preset {other:?} (expected default or tiny)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.d < 2 || self.num_modes == 0 || self.train_videos == 0 || self.dwell == 0 {
            return bad("d >= 2 and num_modes, train_videos, dwell >= 1 are required".into());
        }
        if self.train_count < self.train_videos {
            return bad(format!(
                "train_count {} must be at least train_videos {}",
                self.train_count, self.train_videos
            ));
        }
        if self.snippet_len == 0 || self.snippet_stride == 0 {
            return bad("snippet_len and snippet_stride must be positive".into());
        }
        if self.frames_per_video < self.snippet_len as usize {
            return bad(format!(
                "frames_per_video {} is shorter than one snippet ({})",
                self.frames_per_video, self.snippet_len
            ));
        }
        if !(self.anomaly_rate > 0.0 && self.anomaly_rate < 1.0) {
            return bad(format!("anomaly_rate must lie in (0,1), got {}", self.anomaly_rate));
        }
        if !(self.mode_spread >= 0.0 && self.mode_spread.is_finite()) {
            return bad(format!("mode_spread must be finite and >= 0, got {}", self.mode_spread));
        }
        if !(self.anomaly_shift > self.mode_spread && self.anomaly_shift.is_finite()) {
            return bad(format!(
                "anomaly_shift {} must exceed mode_spread {}",
                self.anomaly_shift, self.mode_spread
            ));
        }
        if !(0.0..1.0).contains(&self.temporal_correlation) {
            return bad(format!(
                "temporal_correlation must lie in [0,1), got {}",
                self.temporal_correlation
            ));
        }
        Ok(())
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= n;
    }
    v
}

fn to_sphere(v: &[f64]) -> Vec<f32> {
    unit(v.to_vec()).into_iter().map(|x| x as f32).collect()
}

/// Random unit vector orthogonal to the unit vector `c`.
fn orthogonal_unit(rng: &mut ChaCha8Rng, c: &[f64]) -> Vec<f64> {
    let mut v = gaussian_vec(rng, c.len(), 1.0);
    let p: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
    for (x, y) in v.iter_mut().zip(c) {
        *x -= p * y;
    }
    unit(v)
}

struct Walk<'a> {
    cfg: &'a SynthConfig,
    centers: &'a [Vec<f64>],
    weights: WeightedIndex<f64>,
    mode: usize,
    left: usize,
    noise: Vec<f64>,
}

impl<'a> Walk<'a> {
    fn new(cfg: &'a SynthConfig, centers: &'a [Vec<f64>], weights: WeightedIndex<f64>, rng: &mut ChaCha8Rng) -> Self {
        let noise = gaussian_vec(rng, cfg.d, 1.0 / (cfg.d as f64).sqrt());
        Self {
            cfg,
            centers,
            weights,
            mode: 0,
            left: 0,
            noise,
        }
    }

    /// Mode center and noise of the next snippet.
    fn step(&mut self, rng: &mut ChaCha8Rng) -> (&'a [f64], Vec<f64>) {
        if self.left == 0 {
            self.mode = self.weights.sample(rng);
            let lo = self.cfg.dwell.div_ceil(2);
            self.left = rng.random_range(lo..=lo + self.cfg.dwell);
        }
        self.left -= 1;
        let rho = self.cfg.temporal_correlation;
        let fresh = gaussian_vec(rng, self.cfg.d, 1.0 / (self.cfg.d as f64).sqrt());
        let keep = (1.0 - rho * rho).sqrt();
        for (e, f) in self.noise.iter_mut().zip(fresh) {
            *e = rho * *e + keep * f;
        }
        (&self.centers[self.mode], self.noise.clone())
    }
}

/// Generates the train and test splits in memory.
pub fn synthesize(cfg: &SynthConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers: Vec<Vec<f64>> = (0..cfg.num_modes)
        .map(|_| unit(gaussian_vec(&mut rng, cfg.d, 1.0)))
        .collect();
    let weights = WeightedIndex::new((0..cfg.num_modes).map(|k| 1.0 / (k + 1) as f64))
        .expect("positive mode weights");
    let stride = cfg.snippet_stride as u64;
    let spread = cfg.mode_spread;
    let mix = |c: &[f64], noise: &[f64], extra: Option<&[f64]>| -> Vec<f32> {
        let v: Vec<f64> = c
            .iter()
            .zip(noise)
            .enumerate()
            .map(|(i, (c, n))| c + spread * n + extra.map_or(0.0, |e| e[i]))
            .collect();
        to_sphere(&v)
    };

    let mut train = Vec::with_capacity(cfg.train_videos);
    for v in 0..cfg.train_videos {
        let n = cfg.train_count / cfg.train_videos + usize::from(v < cfg.train_count % cfg.train_videos);
        let mut walk = Walk::new(cfg, &centers, weights.clone(), &mut rng);
        let mut feats = Vec::with_capacity(n);
        let mut spans = Vec::with_capacity(n);
        for i in 0..n {
            let (c, noise) = walk.step(&mut rng);
            feats.push(mix(c, &noise, None));
            spans.push(FrameSpan {
                start: i as u64 * stride,
                len: cfg.snippet_len,
            });
        }
        let frame_count = (n as u64 - 1) * stride + cfg.snippet_len as u64;
        train.push(Video {
            id: format!("train_{v:03}"),
            features: FeatureSet::new(cfg.d, feats, Some(spans))?,
            frame_count,
            labels: None,
        });
    }

    let frames = cfg.frames_per_video;
    let n_snip = (frames - cfg.snippet_len as usize) / cfg.snippet_stride as usize + 1;
    let seg_len = (cfg.anomaly_rate * frames as f64).round() as usize;
    let mut test = Vec::with_capacity(cfg.videos);
    for v in 0..cfg.videos {
        let mut walk = Walk::new(cfg, &centers, weights.clone(), &mut rng);
        let seg_start = rng.random_range(0..=frames - seg_len);
        let seg = seg_start..seg_start + seg_len;
        let mut labels = vec![0u8; frames];
        for l in &mut labels[seg.clone()] {
            *l = 1;
        }
        let mut direction: Option<Vec<f64>> = None;
        let mut feats = Vec::with_capacity(n_snip);
        let mut spans = Vec::with_capacity(n_snip);
        for i in 0..n_snip {
            let start = i as u64 * stride;
            let (c, noise) = walk.step(&mut rng);
            let center = start as usize + cfg.snippet_len as usize / 2;
            let f = if seg.contains(&center) {
                let dir = direction.get_or_insert_with(|| orthogonal_unit(&mut rng, c));
                let shift: Vec<f64> = dir.iter().map(|x| x * cfg.anomaly_shift).collect();
                mix(c, &noise, Some(&shift))
            } else {
                mix(c, &noise, None)
            };
            feats.push(f);
            spans.push(FrameSpan {
                start,
                len: cfg.snippet_len,
            });
        }
        test.push(Video {
            id: format!("test_{v:03}"),
            features: FeatureSet::new(cfg.d, feats, Some(spans))?,
            frame_count: frames as u64,
            labels: Some(labels),
        });
    }
    let name = format!("synthetic-{}", cfg.seed);
    Ok((
        Dataset {
            name: name.clone(),
            split: Split::Train,
            videos: train,
        },
        Dataset {
            name,
            split: Split::Test,
            videos: test,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SynthOutput {
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
}

/// Writes `train.json`, `test.json` and their files under `out_dir`.
pub fn generate_synthetic(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<SynthOutput> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (train, test) = synthesize(cfg)?;
    Ok(SynthOutput {
        train_manifest: train.save(out_dir, "train")?,
        test_manifest: test.save(out_dir, "test")?,
    })
}
