//! Hash encoder: `b` parallel bias-free linear layers followed by a sigmoid.
//!
//! Layer `j` maps a `d`-dimensional feature to an `r`-dimensional code in `(0,1)^r`.
//! Thresholding that code at 0.5 gives the bucket key. Because the sigmoid crosses
//! 0.5 exactly at a zero pre-activation, a randomly initialized encoder is a
//! random-hyperplane LSH family.
//!
//! Weights are stored as `f32` in layer-major, row-major order; all dot products
//! accumulate in `f64`.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binio::{read_file, write_file, ByteReader, ByteWriter};
use crate::error::{Error, Result};

const ENCODER_MAGIC: &[u8; 8] = b"LLSHENC1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Input feature dimension `d`.
    pub feature_dim: usize,
    /// Bits per code `r`.
    pub code_len: usize,
    /// Number of hash layers / tables `b`.
    pub num_tables: usize,
    /// Scale inputs to unit norm before projecting.
    pub normalize_input: bool,
    pub seed: u64,
}

impl EncoderConfig {
    pub fn new(feature_dim: usize, code_len: usize, num_tables: usize) -> Self {
        Self {
            feature_dim,
            code_len,
            num_tables,
            normalize_input: true,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_normalize_input(mut self, normalize: bool) -> Self {
        self.normalize_input = normalize;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.code_len == 0 || self.num_tables == 0 {
            return Err(Error::InvalidConfig(format!(
                "d, r and b must all be at least 1 (got d={}, r={}, b={})",
                self.feature_dim, self.code_len, self.num_tables
            )));
        }
        for (name, v) in [
            ("d", self.feature_dim),
            ("r", self.code_len),
            ("b", self.num_tables),
        ] {
            if u32::try_from(v).is_err() {
                return Err(Error::InvalidConfig(format!("{name}={v} exceeds u32")));
            }
        }
        self.feature_dim
            .checked_mul(self.code_len)
            .and_then(|x| x.checked_mul(self.num_tables))
            .ok_or_else(|| Error::InvalidConfig("weight count overflows".into()))?;
        Ok(())
    }

    /// Length of a concatenated code, `b·r`.
    pub fn concat_len(&self) -> usize {
        self.code_len * self.num_tables
    }

    pub fn weight_count(&self) -> usize {
        self.feature_dim * self.code_len * self.num_tables
    }
}

/// Real-valued output of one hash layer; every entry lies in `(0,1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HashCode(Vec<f32>);

impl HashCode {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("hash code".into()));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(Error::InvalidConfig(format!(
                "hash code entry {v} outside (0,1)"
            )));
        }
        Ok(Self(values))
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f32>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }

    pub fn binarize(&self) -> BinaryKey {
        binarize(&self.0)
    }
}

/// Concatenation of the `b` per-layer codes in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcatCode(Vec<f32>);

impl ConcatCode {
    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Slice belonging to layer `j` (0-based).
    pub fn layer(&self, j: usize, code_len: usize) -> &[f32] {
        &self.0[j * code_len..(j + 1) * code_len]
    }
}

/// Output of [`HashEncoder::encode`].
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub codes: Vec<HashCode>,
    pub concat: ConcatCode,
}

/// `r` key bits packed little-endian within each byte: bit `i` lives in byte `i/8`
/// at position `i%8`. Unused high bits of the last byte are always zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BinaryKey {
    bytes: Box<[u8]>,
    len: u32,
}

impl BinaryKey {
    pub fn from_bits(bits: &[bool]) -> Self {
        let mut bytes = vec![0u8; packed_len(bits.len())];
        for (i, &bit) in bits.iter().enumerate() {
            if bit {
                bytes[i / 8] |= 1 << (i % 8);
            }
        }
        Self {
            bytes: bytes.into_boxed_slice(),
            len: bits.len() as u32,
        }
    }

    pub fn from_packed(bytes: &[u8], len: usize) -> Result<Self> {
        if bytes.len() != packed_len(len) {
            return Err(Error::Dimension {
                expected: packed_len(len),
                got: bytes.len(),
            });
        }
        if !len.is_multiple_of(8) {
            let last = bytes[bytes.len() - 1];
            if last >> (len % 8) != 0 {
                return Err(Error::InvalidConfig(format!(
                    "packed key has bits set beyond length {len}"
                )));
            }
        }
        Ok(Self {
            bytes: bytes.into(),
            len: len as u32,
        })
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bit(&self, i: usize) -> bool {
        assert!(i < self.len(), "bit index {i} out of range");
        self.bytes[i / 8] >> (i % 8) & 1 == 1
    }

    pub fn bits(&self) -> Vec<bool> {
        (0..self.len()).map(|i| self.bit(i)).collect()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }
}

pub(crate) fn packed_len(bits: usize) -> usize {
    bits.div_ceil(8)
}

/// Threshold a code at 0.5; exactly 0.5 maps to 1.
pub fn binarize(code: &[f32]) -> BinaryKey {
    let mut bytes = vec![0u8; packed_len(code.len())];
    for (i, &v) in code.iter().enumerate() {
        if v >= 0.5 {
            bytes[i / 8] |= 1 << (i % 8);
        }
    }
    BinaryKey {
        bytes: bytes.into_boxed_slice(),
        len: code.len() as u32,
    }
}

pub fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

// Largest f32 strictly below 0.5 and strictly below 1.
const BELOW_HALF: f32 = 0.499_999_97;
const BELOW_ONE: f32 = 1.0 - f32::EPSILON / 2.0;

/// Sigmoid rounded to `f32` such that the stored value stays inside `(0,1)` and
/// `value >= 0.5` holds exactly when `a >= 0`.
pub(crate) fn sigmoid_code(a: f64) -> f32 {
    let v = (sigmoid(a) as f32).clamp(f32::MIN_POSITIVE, BELOW_ONE);
    if a < 0.0 && v >= 0.5 {
        BELOW_HALF
    } else {
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashEncoder {
    config: EncoderConfig,
    weights: Vec<f32>,
}

impl HashEncoder {
    /// Gaussian rows rescaled to unit length, drawn from a ChaCha8 stream seeded by
    /// `config.seed`.
    pub fn init_random(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.feature_dim;
        let mut weights = Vec::with_capacity(config.weight_count());
        let mut row = vec![0f64; d];
        for _ in 0..config.code_len * config.num_tables {
            loop {
                for w in row.iter_mut() {
                    *w = StandardNormal.sample(&mut rng);
                }
                let norm = row.iter().map(|w| w * w).sum::<f64>().sqrt();
                if norm > 0.0 {
                    weights.extend(row.iter().map(|w| (w / norm) as f32));
                    break;
                }
            }
        }
        Ok(Self { config, weights })
    }

    pub fn from_weights(config: EncoderConfig, weights: Vec<f32>) -> Result<Self> {
        config.validate()?;
        if weights.len() != config.weight_count() {
            return Err(Error::Dimension {
                expected: config.weight_count(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("encoder weights".into()));
        }
        Ok(Self { config, weights })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    /// The `r×d` weight block of layer `j` (0-based).
    pub fn layer_weights(&self, j: usize) -> &[f32] {
        let block = self.config.code_len * self.config.feature_dim;
        &self.weights[j * block..(j + 1) * block]
    }

    /// Dimension check plus optional unit-norm scaling, widened to `f64`.
    pub fn prepare_input(&self, x: &[f32]) -> Result<Vec<f64>> {
        prepare_input(x, self.config.feature_dim, self.config.normalize_input)
    }

    fn layer_code(&self, j: usize, x: &[f64]) -> HashCode {
        let d = self.config.feature_dim;
        let codes = self
            .layer_weights(j)
            .chunks_exact(d)
            .map(|row| sigmoid_code(dot_f32_f64(row, x)))
            .collect();
        HashCode::from_vec_unchecked(codes)
    }

    /// Code of layer `j` (0-based) for feature `x`.
    pub fn forward_layer(&self, j: usize, x: &[f32]) -> Result<HashCode> {
        if j >= self.config.num_tables {
            return Err(Error::InvalidConfig(format!(
                "layer index {j} out of range for b={}",
                self.config.num_tables
            )));
        }
        let x = self.prepare_input(x)?;
        Ok(self.layer_code(j, &x))
    }

    /// All `b` layer codes, in layer order.
    pub fn encode_layers(&self, x: &[f32]) -> Result<Vec<HashCode>> {
        let x = self.prepare_input(x)?;
        Ok((0..self.config.num_tables)
            .map(|j| self.layer_code(j, &x))
            .collect())
    }

    pub fn encode(&self, x: &[f32]) -> Result<Encoded> {
        let codes = self.encode_layers(x)?;
        let mut concat = Vec::with_capacity(self.config.concat_len());
        for c in &codes {
            concat.extend_from_slice(c.values());
        }
        Ok(Encoded {
            codes,
            concat: ConcatCode(concat),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut w = ByteWriter::with_capacity(8 + 4 * 3 + 1 + 8 + 4 * self.weights.len());
        w.bytes(ENCODER_MAGIC);
        w.u32(c.feature_dim as u32);
        w.u32(c.code_len as u32);
        w.u32(c.num_tables as u32);
        w.u8(c.normalize_input as u8);
        w.u64(c.seed);
        w.f32s(&self.weights);
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8], context: &str) -> Result<Self> {
        let mut r = ByteReader::new(bytes, context);
        r.magic(ENCODER_MAGIC)?;
        let d = r.u32("feature dim")? as usize;
        let code_len = r.u32("code length")? as usize;
        let b = r.u32("table count")? as usize;
        let normalize_input = match r.u8("normalize flag")? {
            0 => false,
            1 => true,
            v => return Err(r.error(format!("normalize flag must be 0 or 1, got {v}"))),
        };
        let seed = r.u64("seed")?;
        let config = EncoderConfig {
            feature_dim: d,
            code_len,
            num_tables: b,
            normalize_input,
            seed,
        };
        config.validate()?;
        let n = config.weight_count();
        if r.remaining() != n * 4 {
            return Err(r.error(format!(
                "weight payload is {} bytes, header d={d} r={code_len} b={b} requires {}",
                r.remaining(),
                n * 4
            )));
        }
        let mut weights = Vec::with_capacity(n);
        r.f32s_into(n, &mut weights, "weights")?;
        r.finish()?;
        Self::from_weights(config, weights)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = read_file(path)?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }

    /// Stable 64-bit digest of the serialized encoder (first 8 bytes of SHA-256).
    pub fn fingerprint(&self) -> u64 {
        fingerprint_bytes(&self.to_bytes())
    }
}

pub fn fingerprint_bytes(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub(crate) fn prepare_input(x: &[f32], d: usize, normalize: bool) -> Result<Vec<f64>> {
    if x.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: x.len(),
        });
    }
    let mut out: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature vector".into()));
    }
    if normalize {
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroVector);
        }
        out.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(out)
}

#[inline]
pub(crate) fn dot_f32_f64(w: &[f32], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(&a, &b)| a as f64 * b).sum()
}
