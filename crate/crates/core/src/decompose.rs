//! Additive trend / seasonal / residual decomposition of a univariate window.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecompMethod {
    MovingAverage,
    Stl,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecompConfig {
    /// Half-width of the centered moving average; the window is `2k + 1`.
    pub k: usize,
    pub period: usize,
    pub method: DecompMethod,
    /// LOESS span as a fraction of the smoothed series length.
    pub loess_bandwidth: f64,
}

impl Default for DecompConfig {
    fn default() -> Self {
        Self {
            k: 12,
            period: 24,
            method: DecompMethod::MovingAverage,
            loess_bandwidth: 0.3,
        }
    }
}

impl DecompConfig {
    pub fn validate(&self) -> Result<()> {
        if self.period == 0 {
            return Err(Error::Config("decomposition period must be at least 1".into()));
        }
        if !(self.loess_bandwidth > 0.0 && self.loess_bandwidth <= 1.0) {
            return Err(Error::Config(format!(
                "loess_bandwidth must lie in (0, 1], got {}",
                self.loess_bandwidth
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentTriple {
    pub trend: Vec<f64>,
    pub seasonal: Vec<f64>,
    pub residual: Vec<f64>,
    pub method: DecompMethod,
    pub period: usize,
}

impl ComponentTriple {
    pub fn reconstruct(&self) -> Vec<f64> {
        self.trend
            .iter()
            .zip(&self.seasonal)
            .zip(&self.residual)
            .map(|((t, s), r)| t + s + r)
            .collect()
    }
}

/// Centered moving average of width `2k + 1` with `k` replicated values padded on each side.
pub fn moving_average_trend(x: &[f64], k: usize) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let len = x.len();
    let padded = |i: isize| -> f64 { x[i.clamp(0, len as isize - 1) as usize] };
    let m = (2 * k + 1) as f64;
    let k = k as isize;
    // running sum over the padded sequence
    let mut sum: f64 = (-k..=k).map(padded).sum();
    let mut out = Vec::with_capacity(len);
    for t in 0..len as isize {
        out.push(sum / m);
        sum += padded(t + k + 1) - padded(t - k);
    }
    out
}

/// Phase means of the detrended series, re-centered to sum to zero over one period and tiled.
pub fn estimate_seasonal(detrended: &[f64], period: usize) -> Result<Vec<f64>> {
    if period == 0 {
        return Err(Error::Config("period must be at least 1".into()));
    }
    if period > detrended.len() {
        return Err(Error::PeriodExceedsWindow {
            period,
            len: detrended.len(),
        });
    }
    let mut sums = vec![0.0; period];
    let mut counts = vec![0usize; period];
    for (i, v) in detrended.iter().enumerate() {
        sums[i % period] += v;
        counts[i % period] += 1;
    }
    let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    let center = means.iter().sum::<f64>() / period as f64;
    Ok((0..detrended.len()).map(|i| means[i % period] - center).collect())
}

/// Trend by moving average (or STL), seasonal from the detrended series, residual by subtraction.
pub fn additive_decompose(x: &[f64], cfg: &DecompConfig) -> Result<ComponentTriple> {
    cfg.validate()?;
    match cfg.method {
        DecompMethod::Stl => stl_decompose(x, cfg),
        DecompMethod::MovingAverage => {
            let trend = moving_average_trend(x, cfg.k);
            let detrended: Vec<f64> = x.iter().zip(&trend).map(|(a, b)| a - b).collect();
            let seasonal = estimate_seasonal(&detrended, cfg.period)?;
            let residual = residual_of(x, &trend, &seasonal);
            Ok(ComponentTriple {
                trend,
                seasonal,
                residual,
                method: DecompMethod::MovingAverage,
                period: cfg.period,
            })
        }
    }
}

fn residual_of(x: &[f64], trend: &[f64], seasonal: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(trend)
        .zip(seasonal)
        .map(|((v, t), s)| v - t - s)
        .collect()
}

const STL_INNER_ITERATIONS: usize = 2;

/// Simplified STL: two inner passes of cycle-subseries LOESS, low-pass removal and LOESS trend.
pub fn stl_decompose(x: &[f64], cfg: &DecompConfig) -> Result<ComponentTriple> {
    cfg.validate()?;
    let len = x.len();
    let period = cfg.period;
    if len < 2 * period {
        return Err(Error::InsufficientLength {
            len,
            needed: 2 * period,
        });
    }
    let trend_span = span(cfg.loess_bandwidth, len, 3);
    let positions: Vec<f64> = (0..len).map(|i| i as f64).collect();

    let mut trend = vec![0.0; len];
    let mut seasonal = vec![0.0; len];
    for _ in 0..STL_INNER_ITERATIONS {
        let detrended: Vec<f64> = x.iter().zip(&trend).map(|(a, b)| a - b).collect();
        let cycle = smooth_cycle_subseries(&detrended, period, cfg.loess_bandwidth);
        let low = period_low_pass(&cycle, period);
        seasonal = (0..len).map(|i| cycle[i + period] - low[i]).collect();
        let deseasonalized: Vec<f64> = x.iter().zip(&seasonal).map(|(a, b)| a - b).collect();
        trend = positions
            .iter()
            .map(|&at| loess(&positions, &deseasonalized, trend_span, at))
            .collect();
    }
    let residual = residual_of(x, &trend, &seasonal);
    Ok(ComponentTriple {
        trend,
        seasonal,
        residual,
        method: DecompMethod::Stl,
        period,
    })
}

fn span(bandwidth: f64, n: usize, min: usize) -> usize {
    ((bandwidth * n as f64).ceil() as usize).max(min).min(n.max(1))
}

/// LOESS-smooths each phase's subseries and extends it by one cycle on both
/// ends, returning a series of length `len + 2·period` aligned so that index
/// `i + period` corresponds to original index `i`.
fn smooth_cycle_subseries(x: &[f64], period: usize, bandwidth: f64) -> Vec<f64> {
    let len = x.len();
    let mut out = vec![0.0; len + 2 * period];
    for phase in 0..period {
        let ys: Vec<f64> = x.iter().skip(phase).step_by(period).copied().collect();
        let xs: Vec<f64> = (0..ys.len()).map(|j| j as f64).collect();
        let q = span(bandwidth, ys.len(), 2);
        out[phase] = loess(&xs, &ys, q, -1.0);
        for (j, _) in ys.iter().enumerate() {
            out[period + phase + j * period] = loess(&xs, &ys, q, j as f64);
        }
        let after = period + phase + ys.len() * period;
        if after < out.len() {
            out[after] = loess(&xs, &ys, q, ys.len() as f64);
        }
    }
    out
}

/// Centered period-length mean (a `2×p` average for even `p`) of the extended
/// cycle series, evaluated at each original index.
fn period_low_pass(extended: &[f64], period: usize) -> Vec<f64> {
    let len = extended.len() - 2 * period;
    let half = period / 2;
    let weights: Vec<f64> = if period % 2 == 1 {
        vec![1.0 / period as f64; period]
    } else {
        let mut w = vec![1.0 / period as f64; period + 1];
        w[0] *= 0.5;
        w[period] *= 0.5;
        w
    };
    (0..len)
        .map(|i| {
            let center = i + period;
            weights
                .iter()
                .enumerate()
                .map(|(j, w)| w * extended[center + j - half])
                .sum()
        })
        .collect()
}

/// Local linear regression with tricube weights over the `q` nearest points, evaluated at `at`.
///
/// `xs` must be sorted ascending.
pub(crate) fn loess(xs: &[f64], ys: &[f64], q: usize, at: f64) -> f64 {
    let n = xs.len();
    if n == 1 {
        return ys[0];
    }
    let q = q.clamp(1, n);
    // grow [lo, hi) outward from the insertion point until it holds q points
    let mut lo = xs.partition_point(|&x| x < at);
    let mut hi = lo;
    while hi - lo < q {
        let take_left = match (lo > 0, hi < n) {
            (true, true) => at - xs[lo - 1] <= xs[hi] - at,
            (left, _) => left,
        };
        if take_left {
            lo -= 1;
        } else {
            hi += 1;
        }
    }
    let mut h = (at - xs[lo]).abs().max((xs[hi - 1] - at).abs());
    if h <= 0.0 {
        h = 1.0;
    }
    // keep the q-th neighbor inside the support
    let h = h * 1.000_001;
    let (xs, ys) = (&xs[lo..hi], &ys[lo..hi]);
    let weights: Vec<f64> = xs
        .iter()
        .map(|x| {
            let u = (x - at).abs() / h;
            let c = 1.0 - u * u * u;
            c * c * c
        })
        .collect();
    let mut sw = 0.0;
    let mut sx = 0.0;
    let mut sy = 0.0;
    for ((x, y), w) in xs.iter().zip(ys).zip(&weights) {
        sw += w;
        sx += w * x;
        sy += w * y;
    }
    let xbar = sx / sw;
    let ybar = sy / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for ((x, y), w) in xs.iter().zip(ys).zip(&weights) {
        sxx += w * (x - xbar) * (x - xbar);
        sxy += w * (x - xbar) * (y - ybar);
    }
    if sxx <= 1e-12 * sw {
        return ybar;
    }
    ybar + (sxy / sxx) * (at - xbar)
}
