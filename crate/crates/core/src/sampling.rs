//! Random-variate helpers: log-weight normalisation, categorical draws and
//! the conjugate distributions used by the Gibbs updates.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, ChiSquared, Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, invert_lower};

/// Random number generator used for every chain.
pub type ChainRng = ChaCha8Rng;

/// Seeds a chain generator.
pub fn rng_from_seed(seed: u64) -> ChainRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent child seed from a parent seed and a stream label.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `log(sum(exp(v)))` computed with max subtraction.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Normalised weights `exp(l_v - max l) / sum_j exp(l_j - max l)`.
///
/// Fails when every log weight is `-inf` or any is NaN.
pub fn normalize_log_weights(log_w: &[f64]) -> Result<Vec<f64>> {
    if log_w.iter().any(|v| v.is_nan()) {
        return Err(Error::numerical("log weight is NaN"));
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::numerical("all log weights are -inf"));
    }
    let mut w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    Ok(w)
}

/// Inverse-CDF categorical draw from a single uniform `u` in `[0, 1)`.
///
/// Cumulative sums run in index order; the first index whose cumulative mass
/// exceeds `u` is returned.
pub fn categorical_from_uniform(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return i;
        }
    }
    // u * total can round up to the last cumulative sum
    weights
        .iter()
        .rposition(|&w| w > 0.0)
        .unwrap_or(weights.len() - 1)
}

pub fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    categorical_from_uniform(weights, rng.random::<f64>())
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Draw from `Gamma(shape, rate)`.
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let dist = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::numerical(format!("gamma({shape}, {rate}): {e}")))?;
    Ok(dist.sample(rng))
}

/// Draw from the inverse gamma with density proportional to `x^(-shape-1) exp(-rate / x)`.
pub fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let g = sample_gamma(shape, rate, rng)?;
    Ok(1.0 / g.max(f64::MIN_POSITIVE))
}

pub fn sample_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    let dist = Beta::new(a, b).map_err(|e| Error::numerical(format!("beta({a}, {b}): {e}")))?;
    Ok(dist.sample(rng))
}

/// Draw `Sigma ~ InvWishart(df, scale)` by the Bartlett decomposition.
///
/// With `C C' = scale^-1` and Bartlett factor `A`, `Sigma = (C A)^-T (C A)^-1`;
/// only the scale matrix is inverted, never the draw.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(
    df: f64,
    scale: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let n = scale.nrows();
    if df <= (n as f64) - 1.0 {
        return Err(Error::numerical(format!(
            "inverse-Wishart degrees of freedom {df} must exceed n - 1 = {}",
            n as f64 - 1.0
        )));
    }
    let scale_inv = cholesky(scale)?.inverse();
    let c = cholesky(&scale_inv)?.l();
    let mut bartlett = DMatrix::zeros(n, n);
    for i in 0..n {
        let chi = ChiSquared::new(df - i as f64)
            .map_err(|e| Error::numerical(format!("chi-squared: {e}")))?;
        bartlett[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            bartlett[(i, j)] = standard_normal(rng);
        }
    }
    let m = c * bartlett;
    let m_inv = invert_lower(&m)?;
    let sigma = m_inv.transpose() * m_inv;
    Ok(crate::linalg::symmetrize(&sigma))
}

/// `q`-quantile of a weighted sample: the smallest value whose cumulative weight reaches `q`.
pub fn weighted_quantile(values: &[f64], weights: &[f64], q: f64) -> f64 {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for &i in &idx {
        acc += weights[i];
        if acc >= q * total {
            return values[i];
        }
    }
    values[*idx.last().expect("non-empty sample")]
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}
