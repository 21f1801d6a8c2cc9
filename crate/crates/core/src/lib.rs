//! Learnable locality-sensitive hashing for distance-based anomaly detection.
//!
//! Features are hashed by `b` sigmoid layers into binary keys; an anomaly score is the
//! smallest average code distance to a matching bucket over all tables. The layers can
//! be random (classic LSH) or trained contrastively with a momentum key encoder.

mod binio;

pub mod baselines;
pub mod data;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod index;
pub mod scoring;
pub mod theory;
pub mod training;

pub use data::{Dataset, FeatureSet, Manifest, SynthConfig, Video};
pub use encoder::{BinaryKey, EncoderConfig, HashCode, HashEncoder};
pub use error::{Error, Result};
pub use evaluation::{macro_auc, micro_auc, roc_auc, LabeledVideo};
pub use index::{FingerprintCheck, HashIndex, Variant};
pub use scoring::{FrameSpan, Metric, QueryConfig, ScoreSeries, Scorer};
pub use training::{PairSampler, PairSource, TrainConfig, Trainer};
