//! Collision probabilities of random-hyperplane LSH with `r` bits per table and `b`
//! tables, and a Monte-Carlo estimator that runs the real encoder.
//!
//! With angle `α` between two vectors and similarity `s = (π − α)/π`:
//! one bit agrees with probability `s`, a whole `r`-bit key with `s^r`, and at least
//! one of `b` tables collides with `1 − (1 − s^r)^b`.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::encoder::{EncoderConfig, HashEncoder};
use crate::error::{Error, Result};

/// The four `(r, b)` settings plotted as the reference S-curves.
pub const REFERENCE_CURVES: [(u32, u32); 4] = [(1, 1), (16, 1), (1, 8), (16, 8)];

/// Angle between two non-zero vectors, in `[0, π]`.
pub fn angle(y: &[f32], x: &[f32]) -> Result<f64> {
    if y.len() != x.len() {
        return Err(Error::Dimension {
            expected: y.len(),
            got: x.len(),
        });
    }
    let (mut yx, mut yy, mut xx) = (0f64, 0f64, 0f64);
    for (&a, &b) in y.iter().zip(x) {
        let (a, b) = (a as f64, b as f64);
        yx += a * b;
        yy += a * a;
        xx += b * b;
    }
    if yy == 0.0 || xx == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((yx / (yy.sqrt() * xx.sqrt())).clamp(-1.0, 1.0).acos())
}

fn check_angle(alpha: f64) -> Result<()> {
    if !(0.0..=PI).contains(&alpha) {
        return Err(Error::InvalidConfig(format!("angle {alpha} outside [0, π]")));
    }
    Ok(())
}

fn check_rb(r: u32, b: u32) -> Result<()> {
    if r == 0 || b == 0 {
        return Err(Error::InvalidConfig(format!("r and b must be >= 1 (got r={r}, b={b})")));
    }
    Ok(())
}

pub fn similarity_from_angle(alpha: f64) -> f64 {
    (PI - alpha) / PI
}

pub fn angle_from_similarity(s: f64) -> f64 {
    PI * (1.0 - s)
}

/// Probability that one bit agrees.
pub fn per_bit_prob(alpha: f64) -> Result<f64> {
    check_angle(alpha)?;
    Ok(similarity_from_angle(alpha))
}

/// Probability that an `r`-bit key agrees.
pub fn table_prob(alpha: f64, r: u32) -> Result<f64> {
    check_rb(r, 1)?;
    Ok(per_bit_prob(alpha)?.powi(r as i32))
}

/// Probability that at least one of `b` tables collides.
pub fn multi_table_prob(alpha: f64, r: u32, b: u32) -> Result<f64> {
    check_rb(r, b)?;
    check_angle(alpha)?;
    Ok(collision_at_similarity(similarity_from_angle(alpha), r, b))
}

fn collision_at_similarity(s: f64, r: u32, b: u32) -> f64 {
    let per_table = s.powi(r as i32);
    if b == 1 {
        return per_table;
    }
    1.0 - (1.0 - per_table).powi(b as i32)
}

/// Approximate similarity threshold `(1/b)^(1/r)`.
pub fn similarity_threshold(r: u32, b: u32) -> Result<f64> {
    check_rb(r, b)?;
    Ok((1.0 / b as f64).powf(1.0 / r as f64))
}

/// `num_points` evenly spaced `(s, P)` pairs over `s ∈ [0, 1]`.
pub fn curve_points(r: u32, b: u32, num_points: usize) -> Result<Vec<(f64, f64)>> {
    check_rb(r, b)?;
    if num_points < 2 {
        return Err(Error::InvalidConfig("a curve needs at least 2 points".into()));
    }
    let last = (num_points - 1) as f64;
    Ok((0..num_points)
        .map(|i| {
            let s = i as f64 / last;
            (s, collision_at_similarity(s, r, b))
        })
        .collect())
}

/// Similarity at which the curve rises fastest, located by finite differences on a
/// grid of `num_points`.
pub fn steepest_similarity(r: u32, b: u32, num_points: usize) -> Result<f64> {
    let pts = curve_points(r, b, num_points)?;
    let (i, _) = pts
        .windows(2)
        .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, slope)| {
            if slope > best.1 {
                (i, slope)
            } else {
                best
            }
        });
    Ok(0.5 * (pts[i].0 + pts[i + 1].0))
}

/// `curve_points` rendered as CSV with header `r,b,s,p`.
pub fn curves_csv(configs: &[(u32, u32)], num_points: usize) -> Result<String> {
    let mut out = String::from("r,b,s,p\n");
    for &(r, b) in configs {
        for (s, p) in curve_points(r, b, num_points)? {
            out.push_str(&format!("{r},{b},{s:.6},{p:.9}\n"));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MonteCarloResult {
    pub trials: u64,
    pub hits: u64,
    pub empirical: f64,
    pub theoretical: f64,
    /// Binomial standard deviation of the estimate under the theoretical probability.
    pub std_dev: f64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fraction of trials in which a pair of vectors at exact angle `alpha` collides in at
/// least one table of a freshly random-initialized encoder.
///
/// Each trial draws its own encoder and pair from a sub-stream keyed by
/// `(seed, trial)`, so the result does not depend on the worker count.
pub fn monte_carlo_collision(alpha: f64, r: u32, b: u32, d: usize, trials: u64, seed: u64) -> Result<MonteCarloResult> {
    check_angle(alpha)?;
    check_rb(r, b)?;
    if d < 2 {
        return Err(Error::InvalidConfig(format!("need d >= 2 to place a pair at an angle, got {d}")));
    }
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be >= 1".into()));
    }
    let base = EncoderConfig::new(d, r as usize, b as usize);
    base.validate()?;
    let hits = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<u64> {
            let trial_seed = splitmix64(seed ^ splitmix64(t));
            let encoder = HashEncoder::init_random(base.with_seed(trial_seed))?;
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(trial_seed));
            let (y, x) = pair_at_angle(alpha, d, &mut rng);
            let ky = encoder.encode_layers(&y)?;
            let kx = encoder.encode_layers(&x)?;
            let hit = ky.iter().zip(&kx).any(|(a, b)| a.binarize() == b.binarize());
            Ok(hit as u64)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    let theoretical = multi_table_prob(alpha, r, b)?;
    Ok(MonteCarloResult {
        trials,
        hits,
        empirical: hits as f64 / trials as f64,
        theoretical,
        std_dev: (theoretical * (1.0 - theoretical) / trials as f64).sqrt(),
    })
}

/// Unit vectors `(y, x)` with `x = y·cos α + y⊥·sin α`.
pub fn pair_at_angle<R: rand::Rng + ?Sized>(alpha: f64, d: usize, rng: &mut R) -> (Vec<f32>, Vec<f32>) {
    let gaussian = |rng: &mut R| -> Vec<f64> { (0..d).map(|_| StandardNormal.sample(rng)).collect() };
    let normalize = |v: &mut Vec<f64>| -> f64 {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        n
    };
    let mut y = gaussian(rng);
    while normalize(&mut y) == 0.0 {
        y = gaussian(rng);
    }
    let mut perp;
    loop {
        perp = gaussian(rng);
        let proj: f64 = perp.iter().zip(&y).map(|(a, b)| a * b).sum();
        perp.iter_mut().zip(&y).for_each(|(p, yi)| *p -= proj * yi);
        if normalize(&mut perp) > 1e-9 {
            break;
        }
    }
    let (c, s) = (alpha.cos(), alpha.sin());
    let x = y.iter().zip(&perp).map(|(a, p)| (a * c + p * s) as f32).collect();
    (y.iter().map(|&v| v as f32).collect(), x)
}
