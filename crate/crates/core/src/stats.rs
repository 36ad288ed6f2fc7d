//! Small statistical helpers shared by the cell and limit-law code.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population variance (divides by `n`).
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance (divides by `n - 1`).
pub fn sample_variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return f64::NAN;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

pub fn std_error(x: &[f64]) -> f64 {
    (sample_variance(x) / x.len() as f64).sqrt()
}

/// Central moment of order `k` about the sample mean.
pub fn central_moment(x: &[f64], k: i32) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(k)).sum::<f64>() / x.len() as f64
}

pub fn skewness(x: &[f64]) -> f64 {
    central_moment(x, 3) / central_moment(x, 2).powf(1.5)
}

pub fn excess_kurtosis(x: &[f64]) -> f64 {
    central_moment(x, 4) / central_moment(x, 2).powi(2) - 3.0
}

pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Means of consecutive blocks of `width` samples; a ragged tail is dropped.
pub fn block_means(x: &[f64], width: usize) -> Vec<f64> {
    x.chunks_exact(width.max(1)).map(mean).collect()
}

/// Lagged cross-covariance `Gamma_k[i][j] = <y^i(t+k) y^j(t)>` of centred
/// `d`-vector series (`series[t][i]`), for lags `0..=max_lag`.
pub fn cross_covariances(series: &[Vec<f64>], max_lag: usize) -> Vec<Vec<f64>> {
    let d = series.first().map_or(0, Vec::len);
    let n = series.len();
    (0..=max_lag)
        .map(|k| {
            let mut g = vec![0.0; d * d];
            if k < n {
                for t in 0..n - k {
                    for i in 0..d {
                        for j in 0..d {
                            g[i * d + j] += series[t + k][i] * series[t][j];
                        }
                    }
                }
                g.iter_mut().for_each(|v| *v /= (n - k) as f64);
            }
            g
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    pub rate: f64,
    pub amplitude: f64,
    pub r_squared: f64,
}

/// Least-squares fit of `log y = log A - rate * t` over the positive samples.
pub fn fit_exponential_decay(t: &[f64], y: &[f64]) -> Result<ExpFit> {
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(y)
        .filter(|(_, v)| **v > 0.0 && v.is_finite())
        .map(|(a, v)| (*a, v.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Statistical(
            "exponential fit needs at least two positive samples".into(),
        ));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let stl: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
    let sll: f64 = pts.iter().map(|p| (p.1 - ml).powi(2)).sum();
    if stt <= 0.0 {
        return Err(Error::Statistical("exponential fit needs distinct times".into()));
    }
    let slope = stl / stt;
    let r_squared = if sll > 0.0 { stl * stl / (stt * sll) } else { 1.0 };
    Ok(ExpFit {
        rate: -slope,
        amplitude: (ml - slope * mt).exp(),
        r_squared,
    })
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    d
}

/// First Wasserstein distance between two empirical distributions.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let mut all: Vec<f64> = a.iter().chain(&b).copied().collect();
    all.sort_by(f64::total_cmp);
    let (mut i, mut j) = (0, 0);
    let mut w = 0.0;
    for k in 0..all.len().saturating_sub(1) {
        let x = all[k];
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        w += (i as f64 / n - j as f64 / m).abs() * (all[k + 1] - x);
    }
    w
}

/// Critical value of the two-sample KS test at the 5% level.
pub fn ks_critical_5pct(n: usize, m: usize) -> f64 {
    1.358 * ((n + m) as f64 / (n * m) as f64).sqrt()
}

/// Eigenvalues of a symmetric matrix of size 1 or 2 (row-major), ascending.
pub fn sym_eigenvalues(a: &[f64], d: usize) -> Vec<f64> {
    match d {
        1 => vec![a[0]],
        _ => {
            let (p, q, r) = (a[0], 0.5 * (a[1] + a[2]), a[3]);
            let m = 0.5 * (p + r);
            let s = (0.25 * (p - r).powi(2) + q * q).sqrt();
            vec![m - s, m + s]
        }
    }
}

pub fn symmetrize(a: &[f64], d: usize) -> Vec<f64> {
    let mut s = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            s[i * d + j] = 0.5 * (a[i * d + j] + a[j * d + i]);
        }
    }
    s
}

/// Symmetric square root of a positive semi-definite matrix of size 1 or 2.
pub fn psd_sqrt(a: &[f64], d: usize) -> Vec<f64> {
    match d {
        1 => vec![a[0].max(0.0).sqrt()],
        _ => {
            let det = (a[0] * a[3] - a[1] * a[2]).max(0.0).sqrt();
            let tau = (a[0] + a[3] + 2.0 * det).max(0.0).sqrt();
            if tau == 0.0 {
                return vec![0.0; 4];
            }
            vec![(a[0] + det) / tau, a[1] / tau, a[2] / tau, (a[3] + det) / tau]
        }
    }
}
