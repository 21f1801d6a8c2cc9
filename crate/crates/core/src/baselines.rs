//! Exhaustive KNN and K-means anomaly scorers, and the multiplication-count cost
//! model used to compare them with hashing.

use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::encoder::HashEncoder;
use crate::error::{Error, Result};
use crate::index::{HashIndex, Variant};
use crate::scoring::{Metric, QueryConfig, Scorer};

/// Mean distance from `y` to its `k` nearest training features (exhaustive scan).
pub fn knn_score<F: AsRef<[f32]>>(train: &[F], y: &[f32], k: usize, metric: Metric) -> Result<f64> {
    if k == 0 || k > train.len() {
        return Err(Error::InvalidConfig(format!(
            "K={k} must lie in 1..={} (training set size)",
            train.len()
        )));
    }
    let mut dists = Vec::with_capacity(train.len());
    for x in train {
        let x = x.as_ref();
        if x.len() != y.len() {
            return Err(Error::Dimension {
                expected: y.len(),
                got: x.len(),
            });
        }
        dists.push(metric.distance(y, x));
    }
    if k < dists.len() {
        dists.select_nth_unstable_by(k - 1, f64::total_cmp);
        dists.truncate(k);
    }
    // Summing in ascending order keeps the result independent of training order.
    dists.sort_by(f64::total_cmp);
    Ok(dists.iter().sum::<f64>() / k as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KMeansModel {
    pub centers: Vec<Vec<f32>>,
    /// Within-cluster sum of squared distances after each update.
    pub inertia: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

fn nearest(point: &[f32], centers: &[Vec<f32>]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(c, center)| (c, sq_dist(point, center)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// Lloyd's algorithm from `k` distinct random training points, at most `max_iter`
/// rounds, stopping early once assignments no longer change. A cluster that loses all
/// its points is re-seeded with the point farthest from its current center.
pub fn kmeans_fit<F: AsRef<[f32]> + Sync>(train: &[F], k: usize, max_iter: usize, seed: u64) -> Result<KMeansModel> {
    let n = train.len();
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!("K={k} must lie in 1..={n}")));
    }
    if max_iter == 0 {
        return Err(Error::InvalidConfig("k-means needs at least one iteration".into()));
    }
    let d = train[0].as_ref().len();
    if let Some(bad) = train.iter().find(|x| x.as_ref().len() != d) {
        return Err(Error::Dimension {
            expected: d,
            got: bad.as_ref().len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f32>> = sample(&mut rng, n, k)
        .into_iter()
        .map(|i| train[i].as_ref().to_vec())
        .collect();
    let mut assign: Vec<usize> = vec![usize::MAX; n];
    let mut inertia = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iter {
        let nearest_all: Vec<(usize, f64)> = train
            .par_iter()
            .map(|x| nearest(x.as_ref(), &centers))
            .collect();
        let changed = nearest_all
            .iter()
            .zip(&assign)
            .any(|((c, _), a)| c != a);
        if !changed {
            break;
        }
        iterations += 1;
        for (a, (c, _)) in assign.iter_mut().zip(&nearest_all) {
            *a = *c;
        }
        let mut sums = vec![vec![0f64; d]; k];
        let mut counts = vec![0usize; k];
        for (x, &c) in train.iter().zip(&assign) {
            counts[c] += 1;
            for (s, &v) in sums[c].iter_mut().zip(x.as_ref()) {
                *s += v as f64;
            }
        }
        let mut dist_to_center: Vec<f64> = nearest_all.iter().map(|(_, dd)| *dd).collect();
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| (s / counts[c] as f64) as f32).collect();
            } else {
                let (far, _) = dist_to_center
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
                centers[c] = train[far].as_ref().to_vec();
                dist_to_center[far] = 0.0;
                assign[far] = c;
            }
        }
        let total: f64 = train
            .iter()
            .zip(&assign)
            .map(|(x, &c)| sq_dist(x.as_ref(), &centers[c]))
            .sum();
        inertia.push(total);
    }
    Ok(KMeansModel {
        centers,
        inertia,
        iterations,
    })
}

/// Distance from `y` to the nearest center.
pub fn kmeans_score(centers: &[Vec<f32>], y: &[f32], metric: Metric) -> Result<f64> {
    if centers.is_empty() {
        return Err(Error::Empty("k-means centers".into()));
    }
    centers
        .iter()
        .map(|c| {
            if c.len() != y.len() {
                Err(Error::Dimension {
                    expected: c.len(),
                    got: y.len(),
                })
            } else {
                Ok(metric.distance(y, c))
            }
        })
        .try_fold(f64::INFINITY, |m, d| d.map(|d| m.min(d)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CostMethod {
    Knn,
    KMeans,
    /// Full-variant hashing, with or without trained layers.
    Lsh,
    /// Light-variant hashing (bucket means).
    Light,
}

impl std::str::FromStr for CostMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "knn" => Ok(CostMethod::Knn),
            "kmeans" | "k-means" => Ok(CostMethod::KMeans),
            "lsh" | "llsh" => Ok(CostMethod::Lsh),
            "light" | "light-llsh" => Ok(CostMethod::Light),
            other => Err(Error::InvalidConfig(format!(
                "unknown cost method {other:?} (expected knn, kmeans, lsh or light)"
            ))),
        }
    }
}

/// Inputs to the cost model: `d` feature dimension, `N`/`M` training/testing counts,
/// `K` neighbours or clusters, `t` k-means iterations, `r`/`b` code shape, `n` codes
/// compared at query time, `m` codes averaged at index time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CostInputs {
    pub d: Option<u64>,
    pub big_n: Option<u64>,
    pub big_m: Option<u64>,
    pub k: Option<u64>,
    pub t: Option<u64>,
    pub r: Option<u64>,
    pub b: Option<u64>,
    pub n: Option<u64>,
    pub m: Option<u64>,
}

impl CostInputs {
    /// Parse `d=9216,N=792855,...`; keys are case-sensitive (`N` ≠ `n`).
    pub fn parse(spec: &str) -> Result<Self> {
        let mut out = Self::default();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("expected key=value, got {part:?}")))?;
            let value: u64 = value
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{key}: {value:?} is not a non-negative integer")))?;
            let slot = match key.trim() {
                "d" => &mut out.d,
                "N" => &mut out.big_n,
                "M" => &mut out.big_m,
                "K" | "k" => &mut out.k,
                "t" => &mut out.t,
                "r" => &mut out.r,
                "b" => &mut out.b,
                "n" => &mut out.n,
                "m" => &mut out.m,
                other => return Err(Error::InvalidConfig(format!("unknown cost parameter {other:?}"))),
            };
            *slot = Some(value);
        }
        Ok(out)
    }
}

fn need(v: Option<u64>, name: &str, method: CostMethod) -> Result<u128> {
    v.map(u128::from)
        .ok_or_else(|| Error::InvalidConfig(format!("{method:?} cost needs {name}")))
}

/// Exact multiplication count for one method.
///
/// KNN `dNM`; K-means `dKNt + dKM`; hashing `drb(M+N) + rn`; light hashing adds `2rm`.
pub fn cost(method: CostMethod, p: &CostInputs) -> Result<u128> {
    let d = need(p.d, "d", method)?;
    let big_n = need(p.big_n, "N", method)?;
    let big_m = need(p.big_m, "M", method)?;
    let overflow = || Error::InvalidConfig("multiplication count overflows u128".into());
    let mul = |xs: &[u128]| xs.iter().try_fold(1u128, |acc, &x| acc.checked_mul(x)).ok_or_else(overflow);
    let add = |a: u128, b: u128| a.checked_add(b).ok_or_else(overflow);
    match method {
        CostMethod::Knn => mul(&[d, big_n, big_m]),
        CostMethod::KMeans => {
            let k = need(p.k, "K", method)?;
            let t = need(p.t, "t", method)?;
            add(mul(&[d, k, big_n, t])?, mul(&[d, k, big_m])?)
        }
        CostMethod::Lsh | CostMethod::Light => {
            let r = need(p.r, "r", method)?;
            let b = need(p.b, "b", method)?;
            let n = need(p.n, "n", method)?;
            if r == 0 || b == 0 {
                return Err(Error::InvalidConfig("r and b must be >= 1".into()));
            }
            let base = add(mul(&[d, r, b, add(big_m, big_n)?])?, mul(&[r, n])?)?;
            if method == CostMethod::Light {
                let m = need(p.m, "m", method)?;
                add(base, mul(&[2, r, m])?)
            } else {
                Ok(base)
            }
        }
    }
}

/// Human-readable magnitude with one decimal: `821.5 Tera`, `5.5 Giga`.
pub fn format_count(count: u128) -> String {
    const UNITS: [(f64, &str); 4] = [(1e15, "Peta"), (1e12, "Tera"), (1e9, "Giga"), (1e6, "Mega")];
    let v = count as f64;
    for (scale, name) in UNITS {
        // Peta is only used beyond 10^4 Tera so table-scale numbers stay in Tera.
        if (name == "Peta" && v >= 1e4 * 1e12) || (name != "Peta" && v >= scale) {
            return format!("{:.1} {name}", v / scale);
        }
    }
    count.to_string()
}

/// Signed difference rendered as `"5.5 Giga more"` / `"0.8 Giga less"`; differences of
/// at least 10^8 are shown in Giga.
pub fn format_delta(delta: i128) -> String {
    let word = if delta < 0 { "less" } else { "more" };
    let abs = delta.unsigned_abs();
    if (1e8..1e12).contains(&(abs as f64)) {
        format!("{:.1} Giga {word}", abs as f64 / 1e9)
    } else {
        format!("{} {word}", format_count(abs))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PaperRow {
    pub method: &'static str,
    pub parameters: String,
    pub multiplications: i128,
    pub display: String,
}

/// The efficiency comparison on the large benchmark: `d=9216`, `N=792855`, `M=112422`,
/// with the measured `n`/`m` values of each hashing variant. The LLSH and light-LLSH
/// rows are reported relative to LSH.
pub fn paper_table() -> Result<Vec<PaperRow>> {
    let base = CostInputs {
        d: Some(9216),
        big_n: Some(792_855),
        big_m: Some(112_422),
        ..Default::default()
    };
    let hashing = |n: u64, m: Option<u64>| CostInputs {
        r: Some(32),
        b: Some(8),
        n: Some(n),
        m,
        ..base
    };
    let knn = cost(CostMethod::Knn, &base)? as i128;
    let km = |k| cost(CostMethod::KMeans, &CostInputs { k: Some(k), t: Some(300), ..base });
    let km1024 = km(1024)? as i128;
    let km32 = km(32)? as i128;
    let lsh = cost(CostMethod::Lsh, &hashing(38_150_830, None))? as i128;
    let llsh = cost(CostMethod::Lsh, &hashing(209_872_075, None))? as i128;
    let light = cost(CostMethod::Light, &hashing(490_433, Some(5_650_569)))? as i128;
    let abs = |method, parameters: &str, v: i128| PaperRow {
        method,
        parameters: parameters.to_string(),
        multiplications: v,
        display: format_count(v as u128),
    };
    let rel = |method, parameters: &str, v: i128| PaperRow {
        method,
        parameters: parameters.to_string(),
        multiplications: v,
        display: format!("{} than LSH", format_delta(v - lsh)),
    };
    Ok(vec![
        abs("KNN", "K=1024", knn),
        abs("K-means", "K=1024, t=300", km1024),
        abs("K-means", "K=32, t=300", km32),
        abs("LSH", "b=8, r=32, n=38150830", lsh),
        rel("LLSH", "b=8, r=32, n=209872075", llsh),
        rel("light-LLSH", "b=8, r=32, n=490433, m=5650569", light),
    ])
}

/// Measured `(n, m)` for a set of queries: `n` counts stored codes compared with each
/// query over all tables (a light bucket counts once); `m` counts the codes folded into
/// bucket means when the index is light (`N·b`), and is 0 for a full index.
pub fn measure_n_m<F: AsRef<[f32]> + Sync>(
    index: &HashIndex,
    encoder: &HashEncoder,
    queries: &[F],
) -> Result<(u64, u64)> {
    let scorer = Scorer::new(index, encoder, QueryConfig::default())?;
    let compared: Vec<u64> = queries
        .par_iter()
        .map(|q| scorer.probe(q.as_ref()).map(|p| p.codes_compared))
        .collect::<Result<_>>()?;
    let n = compared.iter().sum();
    let m = match index.variant() {
        Variant::Full => 0,
        Variant::Light => index.total() * index.num_tables() as u64,
    };
    Ok((n, m))
}

impl fmt::Display for PaperRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<11} {:<32} {}", self.method, self.parameters, self.display)
    }
}
