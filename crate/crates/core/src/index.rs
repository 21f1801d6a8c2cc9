//! The index stage: `b` hash tables mapping binary keys to buckets of training codes.
//!
//! The full variant keeps every code in its bucket; the light variant keeps only the
//! bucket mean and population. Full buckets are stored in a canonical order (codes
//! sorted lexicographically) so that query results and serialized bytes do not depend
//! on the order training features were inserted.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{read_file, write_file, ByteReader, ByteWriter};
use crate::encoder::{binarize, packed_len, BinaryKey, HashCode, HashEncoder};
use crate::error::{Error, Result};

const INDEX_MAGIC: &[u8; 8] = b"LLSHIDX1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Full,
    Light,
}

impl Variant {
    fn tag(self) -> u8 {
        match self {
            Variant::Full => 0,
            Variant::Light => 1,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::Light => "light",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "light" => Ok(Variant::Light),
            other => Err(Error::InvalidConfig(format!(
                "unknown index variant {other:?} (expected full or light)"
            ))),
        }
    }
}

/// Bucket contents. In a full index `payload` holds `count·r` values (the codes,
/// contiguous); in a light index it holds the `r`-dimensional mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Bucket {
    count: u64,
    payload: Vec<f32>,
}

impl Bucket {
    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn payload(&self) -> &[f32] {
        &self.payload
    }
}

pub type Table = HashMap<BinaryKey, Bucket>;

#[derive(Debug, Clone, PartialEq)]
pub struct HashIndex {
    encoder_fingerprint: u64,
    variant: Variant,
    code_len: usize,
    tables: Vec<Table>,
    total: u64,
}

/// How [`HashIndex::load`] treats the stored encoder fingerprint.
#[derive(Debug, Clone, Copy)]
pub enum FingerprintCheck {
    Skip,
    /// Log a warning on mismatch and continue.
    Warn(u64),
    /// Refuse to load on mismatch.
    Strict(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableStats {
    pub buckets: usize,
    pub min_size: u64,
    pub max_size: u64,
    pub mean_size: f64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexStats {
    pub variant: Variant,
    pub code_len: usize,
    pub num_tables: usize,
    pub total: u64,
    pub tables: Vec<TableStats>,
}

impl fmt::Display for IndexStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "variant={} r={} b={} N={}",
            self.variant, self.code_len, self.num_tables, self.total
        )?;
        for (j, t) in self.tables.iter().enumerate() {
            writeln!(
                f,
                "table {j}: buckets={} size min={} max={} mean={:.2}",
                t.buckets, t.min_size, t.max_size, t.mean_size
            )?;
        }
        Ok(())
    }
}

impl HashIndex {
    /// Hash every training feature through all `b` layers and bucket the codes.
    ///
    /// Encoding fans out across the rayon pool; insertion is sequential in input
    /// order, so the result is independent of the worker count.
    pub fn build<F>(encoder: &HashEncoder, features: &[F], variant: Variant) -> Result<Self>
    where
        F: AsRef<[f32]> + Sync,
    {
        if features.is_empty() {
            return Err(Error::Empty("training feature set".into()));
        }
        let encoded: Vec<Vec<HashCode>> = features
            .par_iter()
            .map(|x| encoder.encode_layers(x.as_ref()))
            .collect::<Result<_>>()?;
        Ok(Self::from_codes(
            encoder.config().code_len,
            encoder.fingerprint(),
            &encoded,
            variant,
        ))
    }

    /// Build from already-encoded codes (`codes[n][j]` is layer `j` of feature `n`).
    pub(crate) fn from_codes(
        code_len: usize,
        encoder_fingerprint: u64,
        codes: &[Vec<HashCode>],
        variant: Variant,
    ) -> Self {
        let b = codes.first().map_or(0, Vec::len);
        let tables = (0..b)
            .map(|j| match variant {
                Variant::Full => {
                    let mut table = Table::new();
                    for layers in codes {
                        let h = &layers[j];
                        let bucket = table.entry(h.binarize()).or_insert_with(|| Bucket {
                            count: 0,
                            payload: Vec::new(),
                        });
                        bucket.count += 1;
                        bucket.payload.extend_from_slice(h.values());
                    }
                    for bucket in table.values_mut() {
                        canonicalize(&mut bucket.payload, code_len);
                    }
                    table
                }
                Variant::Light => {
                    let mut sums: HashMap<BinaryKey, (Vec<f64>, u64)> = HashMap::new();
                    for layers in codes {
                        let h = &layers[j];
                        let (sum, count) = sums
                            .entry(h.binarize())
                            .or_insert_with(|| (vec![0.0; code_len], 0));
                        for (s, &v) in sum.iter_mut().zip(h.values()) {
                            *s += v as f64;
                        }
                        *count += 1;
                    }
                    sums.into_iter()
                        .map(|(k, (sum, count))| (k, mean_bucket(&sum, count)))
                        .collect()
                }
            })
            .collect();
        Self {
            encoder_fingerprint,
            variant,
            code_len,
            tables,
            total: codes.len() as u64,
        }
    }

    /// Convert a full index into a light one holding one mean per bucket.
    pub fn lighten(&self) -> Result<Self> {
        if self.variant == Variant::Light {
            return Err(Error::InvalidConfig("index is already light".into()));
        }
        let r = self.code_len;
        let tables = self
            .tables
            .iter()
            .map(|table| {
                table
                    .iter()
                    .map(|(key, bucket)| {
                        let mut sum = vec![0f64; r];
                        for code in bucket.payload.chunks_exact(r) {
                            for (s, &v) in sum.iter_mut().zip(code) {
                                *s += v as f64;
                            }
                        }
                        (key.clone(), mean_bucket(&sum, bucket.count))
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            variant: Variant::Light,
            tables,
            ..self.clone()
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn code_len(&self) -> usize {
        self.code_len
    }

    pub fn num_tables(&self) -> usize {
        self.tables.len()
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn encoder_fingerprint(&self) -> u64 {
        self.encoder_fingerprint
    }

    pub fn tables(&self) -> &[Table] {
        &self.tables
    }

    pub fn lookup(&self, table: usize, key: &BinaryKey) -> Option<&Bucket> {
        self.tables[table].get(key)
    }

    pub fn stats(&self) -> IndexStats {
        let tables = self
            .tables
            .iter()
            .map(|t| {
                let sizes = t.values().map(Bucket::count);
                let total: u64 = sizes.clone().sum();
                TableStats {
                    buckets: t.len(),
                    min_size: sizes.clone().min().unwrap_or(0),
                    max_size: sizes.max().unwrap_or(0),
                    mean_size: if t.is_empty() {
                        0.0
                    } else {
                        total as f64 / t.len() as f64
                    },
                    total,
                }
            })
            .collect();
        IndexStats {
            variant: self.variant,
            code_len: self.code_len,
            num_tables: self.tables.len(),
            total: self.total,
            tables,
        }
    }

    /// Serialize; buckets are written in ascending key order so equal indexes
    /// produce identical bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::default();
        w.bytes(INDEX_MAGIC);
        w.u8(self.variant.tag());
        w.u32(self.code_len as u32);
        w.u32(self.tables.len() as u32);
        w.u64(self.total);
        w.u64(self.encoder_fingerprint);
        for table in &self.tables {
            w.u64(table.len() as u64);
            let mut keys: Vec<&BinaryKey> = table.keys().collect();
            keys.sort();
            for key in keys {
                let bucket = &table[key];
                w.bytes(key.as_bytes());
                w.u64(bucket.count);
                w.f32s(&bucket.payload);
            }
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8], context: &str) -> Result<Self> {
        let mut rd = ByteReader::new(bytes, context);
        rd.magic(INDEX_MAGIC)?;
        let variant = match rd.u8("variant")? {
            0 => Variant::Full,
            1 => Variant::Light,
            v => return Err(rd.error(format!("unknown variant tag {v}"))),
        };
        let r = rd.u32("code length")? as usize;
        let b = rd.u32("table count")? as usize;
        if r == 0 || b == 0 {
            return Err(rd.error("code length and table count must be positive"));
        }
        let total = rd.u64("total count")?;
        let encoder_fingerprint = rd.u64("encoder fingerprint")?;
        let key_len = packed_len(r);
        let mut tables = Vec::with_capacity(b);
        for j in 0..b {
            let n_buckets = rd.u64("bucket count")?;
            let mut table = Table::new();
            let mut sum = 0u64;
            for _ in 0..n_buckets {
                let key_bytes = rd.take(key_len, "bucket key")?;
                let key = BinaryKey::from_packed(key_bytes, r)
                    .map_err(|e| rd.error(format!("invalid key: {e}")))?;
                let count = rd.u64("bucket size")?;
                if count == 0 {
                    return Err(rd.error("empty bucket"));
                }
                let values = match variant {
                    Variant::Full => usize::try_from(count)
                        .ok()
                        .and_then(|c| c.checked_mul(r))
                        .filter(|n| n.saturating_mul(4) <= rd.remaining())
                        .ok_or_else(|| rd.error(format!("bucket of {count} codes overruns file")))?,
                    Variant::Light => r,
                };
                let mut payload = Vec::with_capacity(values);
                rd.f32s_into(values, &mut payload, "bucket payload")?;
                if variant == Variant::Full
                    && payload.chunks_exact(r).any(|c| binarize(c) != key)
                {
                    return Err(rd.error(format!("table {j}: stored code does not match its key")));
                }
                sum = sum
                    .checked_add(count)
                    .ok_or_else(|| rd.error("bucket sizes overflow"))?;
                if table.insert(key, Bucket { count, payload }).is_some() {
                    return Err(rd.error(format!("table {j}: duplicate key")));
                }
            }
            if sum != total {
                return Err(rd.error(format!(
                    "table {j}: bucket sizes sum to {sum}, header says N={total}"
                )));
            }
            tables.push(table);
        }
        rd.finish()?;
        Ok(Self {
            encoder_fingerprint,
            variant,
            code_len: r,
            tables,
            total,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>, check: FingerprintCheck) -> Result<Self> {
        let path = path.as_ref();
        let bytes = read_file(path)?;
        let index = Self::from_bytes(&bytes, &path.display().to_string())?;
        index.check_fingerprint(check)?;
        Ok(index)
    }

    pub fn check_fingerprint(&self, check: FingerprintCheck) -> Result<()> {
        match check {
            FingerprintCheck::Skip => Ok(()),
            FingerprintCheck::Warn(actual) | FingerprintCheck::Strict(actual)
                if actual == self.encoder_fingerprint =>
            {
                Ok(())
            }
            FingerprintCheck::Warn(actual) => {
                log::warn!(
                    "index was built with encoder {:016x}, using encoder {actual:016x}",
                    self.encoder_fingerprint
                );
                Ok(())
            }
            FingerprintCheck::Strict(actual) => Err(Error::Fingerprint {
                stored: self.encoder_fingerprint,
                actual,
            }),
        }
    }

    /// Verify that `encoder` is shape-compatible with this index.
    pub fn check_encoder(&self, encoder: &HashEncoder) -> Result<()> {
        let c = encoder.config();
        if c.code_len != self.code_len {
            return Err(Error::Dimension {
                expected: self.code_len,
                got: c.code_len,
            });
        }
        if c.num_tables != self.tables.len() {
            return Err(Error::Dimension {
                expected: self.tables.len(),
                got: c.num_tables,
            });
        }
        Ok(())
    }
}

fn mean_bucket(sum: &[f64], count: u64) -> Bucket {
    Bucket {
        count,
        payload: sum.iter().map(|s| (s / count as f64) as f32).collect(),
    }
}

fn canonicalize(payload: &mut Vec<f32>, r: usize) {
    let mut codes: Vec<&[f32]> = payload.chunks_exact(r).collect();
    codes.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    *payload = codes.concat();
}
