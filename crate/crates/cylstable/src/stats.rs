//! Small statistical helpers shared by the samplers and the verification
//! experiments: Monte Carlo estimates with standard errors, quantiles and
//! the log-log tail-slope regression.
//!
//! Heavy-tailed caveat: for stability indices below 2 the raw samples have
//! infinite variance, so experiments should only ever average *bounded*
//! transforms (cosines, clipped norms, indicator variables); these helpers do
//! not police that.

use serde::Serialize;

/// A Monte Carlo estimate: sample count, point value and standard error of
/// the mean.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MCEstimate {
    pub n: usize,
    pub value: f64,
    pub std_error: f64,
}

impl MCEstimate {
    /// Estimate mean and standard error from samples.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        assert!(n >= 1, "need at least one sample");
        let mean = samples.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Self {
                n,
                value: mean,
                std_error: 0.0,
            };
        }
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        Self {
            n,
            value: mean,
            std_error: (var / n as f64).sqrt(),
        }
    }

    /// Estimate for a Bernoulli proportion with `hits` successes out of `n`.
    pub fn proportion(hits: usize, n: usize) -> Self {
        assert!(n >= 1);
        let p = hits as f64 / n as f64;
        Self {
            n,
            value: p,
            std_error: (p * (1.0 - p) / n as f64).sqrt(),
        }
    }

    /// Standard error of the ratio self/other by the delta method, treating
    /// the two estimates as independent.
    pub fn ratio(&self, other: &MCEstimate) -> MCEstimate {
        let r = self.value / other.value;
        let rel = (self.std_error / self.value).hypot(other.std_error / other.value);
        MCEstimate {
            n: self.n.min(other.n),
            value: r,
            std_error: (r * rel).abs(),
        }
    }
}

/// Empirical quantile (linear interpolation) of an unsorted slice.
pub fn quantile(samples: &[f64], q: f64) -> f64 {
    assert!((0.0..=1.0).contains(&q));
    assert!(!samples.is_empty());
    let mut v: Vec<f64> = samples.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&v, q)
}

/// Quantile of an already ascending-sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Median.
pub fn median(samples: &[f64]) -> f64 {
    quantile(samples, 0.5)
}

/// Kolmogorov-Smirnov distance between the empirical distribution of
/// `samples` and a reference CDF.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v: Vec<f64> = samples.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    let mut sup: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        sup = sup.max((f - i as f64 / n).abs());
        sup = sup.max(((i + 1) as f64 / n - f).abs());
    }
    sup
}

/// Slope of the least-squares line through `(x_i, y_i)`.
pub fn regression_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    sxy / sxx
}

/// Log-log regression slope of the empirical survival function over the top
/// `fraction` of `samples` (by magnitude). For an alpha-stable tail the slope
/// estimates `-alpha`.
pub fn tail_slope(samples: &[f64], fraction: f64) -> f64 {
    assert!(fraction > 0.0 && fraction < 1.0);
    let mut mags: Vec<f64> = samples.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let k = ((samples.len() as f64 * fraction) as usize).max(8);
    let n = samples.len() as f64;
    // Survival at the (i+1)-th largest magnitude is (i+1)/n.
    let mut xs = Vec::with_capacity(k);
    let mut ys = Vec::with_capacity(k);
    for (i, &m) in mags.iter().take(k).enumerate() {
        if m <= 0.0 {
            break;
        }
        xs.push(m.ln());
        ys.push(((i + 1) as f64 / n).ln());
    }
    regression_slope(&xs, &ys)
}

/// Maximum absolute gap between matching empirical quantiles of two samples,
/// evaluated at the inner deciles (0.1 .. 0.9). Extreme quantiles of
/// heavy-tailed laws are too noisy to compare directly.
pub fn decile_gap(a: &[f64], b: &[f64]) -> f64 {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.total_cmp(y));
    sb.sort_by(|x, y| x.total_cmp(y));
    (1..=9)
        .map(|i| {
            let q = i as f64 / 10.0;
            (quantile_sorted(&sa, q) - quantile_sorted(&sb, q)).abs()
        })
        .fold(0.0, f64::max)
}
