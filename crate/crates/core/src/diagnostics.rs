//! Chain diagnostics: sample ACF, integrated autocorrelation time, and
//! per-parameter summaries of a PMMH run.

use serde::Serialize;

use crate::error::DiagError;
use crate::pmmh::ChainOutput;

/// Lower bound returned by [`iact`].
pub const IACT_FLOOR: f64 = 1e-2;

/// Default cap on the lag window used by [`chain_summary`].
pub const DEFAULT_MAX_LAG: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AcfResult {
    /// `values[k]` is the lag-`k` autocorrelation; `values[0] == 1`.
    pub values: Vec<f64>,
}

impl AcfResult {
    pub fn max_lag(&self) -> usize {
        self.values.len() - 1
    }
}

/// Biased sample autocorrelation up to `max_lag`.
pub fn acf(series: &[f64], max_lag: usize) -> Result<AcfResult, DiagError> {
    let n = series.len();
    if max_lag < 1 || max_lag >= n {
        return Err(DiagError::Lag { max_lag, len: n });
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let c0: f64 = centred.iter().map(|z| z * z).sum();
    if !(c0.is_finite() && c0 > 0.0) {
        return Err(DiagError::DegenerateSeries);
    }
    let mut values = Vec::with_capacity(max_lag + 1);
    values.push(1.0);
    for k in 1..=max_lag {
        let ck: f64 = centred[..n - k]
            .iter()
            .zip(&centred[k..])
            .map(|(a, b)| a * b)
            .sum();
        values.push(ck / c0);
    }
    Ok(AcfResult { values })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IactResult {
    pub value: f64,
    /// Last lag included in the sum.
    pub lag: usize,
    /// The sum stopped at a negative autocorrelation rather than at `max_lag`.
    pub truncated: bool,
    /// The raw sum fell below [`IACT_FLOOR`] and was clamped.
    pub floored: bool,
}

/// `1 + 2 sum_{k=1}^{K} acf(k)` where `K` is the first lag with a negative
/// autocorrelation, or `max_lag` if none is negative.
pub fn iact(series: &[f64], max_lag: usize) -> Result<IactResult, DiagError> {
    let r = acf(series, max_lag)?;
    let stop = r.values[1..]
        .iter()
        .position(|&v| v < 0.0)
        .map(|p| p + 1);
    let lag = stop.unwrap_or(max_lag);
    let raw = 1.0 + 2.0 * r.values[1..=lag].iter().sum::<f64>();
    let floored = raw < IACT_FLOOR;
    Ok(IactResult {
        value: if floored { IACT_FLOOR } else { raw },
        lag,
        truncated: stop.is_some(),
        floored,
    })
}

/// Quantile by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
    /// `None` for constant traces or traces too short to have a lag.
    pub iact: Option<IactResult>,
    pub ess: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainSummary {
    pub n_iter: usize,
    pub burn_in: usize,
    pub n_samples: usize,
    pub acceptance_rate: f64,
    pub max_rejection_run: usize,
    pub params: Vec<ParamSummary>,
    pub running_acceptance: Vec<f64>,
}

fn summarize_param(name: &str, xs: &[f64]) -> ParamSummary {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iact = if n > 1 {
        iact(xs, DEFAULT_MAX_LAG.min(n - 1)).ok()
    } else {
        None
    };
    ParamSummary {
        name: name.to_string(),
        mean,
        sd,
        q025: quantile(&sorted, 0.025),
        q50: quantile(&sorted, 0.5),
        q975: quantile(&sorted, 0.975),
        ess: iact.map(|r| n as f64 / r.value),
        iact,
    }
}

/// Longest run of consecutive rejections.
pub fn max_rejection_run(flags: &[bool]) -> usize {
    let mut best = 0;
    let mut run = 0;
    for &a in flags {
        run = if a { 0 } else { run + 1 };
        best = best.max(run);
    }
    best
}

/// Number of leading iterations discarded for a burn-in fraction.
pub fn burn_in_count(n_iter: usize, fraction: f64) -> usize {
    (fraction * n_iter as f64).floor() as usize
}

/// Summaries over iterations `burn+1..=M` where `burn = floor(fraction * M)`.
/// The initial state (row 0) is never part of the sample.
pub fn chain_summary(out: &ChainOutput, burn_in_fraction: f64) -> Result<ChainSummary, DiagError> {
    trace_summary(&out.param_names, &out.theta_trace, &out.accept_flags, burn_in_fraction)
}

/// [`chain_summary`] on raw traces: `theta_trace` has `M + 1` rows and
/// `accept_flags` has `M` entries.
pub fn trace_summary(
    param_names: &[String],
    theta_trace: &[Vec<f64>],
    accept_flags: &[bool],
    burn_in_fraction: f64,
) -> Result<ChainSummary, DiagError> {
    if !(0.0..1.0).contains(&burn_in_fraction) {
        return Err(DiagError::BurnIn(burn_in_fraction));
    }
    let m = accept_flags.len();
    let burn = burn_in_count(m, burn_in_fraction);
    if m == 0 || burn >= m || theta_trace.len() != m + 1 {
        return Err(DiagError::Empty);
    }
    let flags = &accept_flags[burn..];
    let rows = &theta_trace[burn + 1..];
    let params = param_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let xs: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            summarize_param(name, &xs)
        })
        .collect();
    let mut accepted = 0usize;
    let running_acceptance = flags
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            accepted += a as usize;
            accepted as f64 / (i + 1) as f64
        })
        .collect();
    Ok(ChainSummary {
        n_iter: m,
        burn_in: burn,
        n_samples: flags.len(),
        acceptance_rate: accepted as f64 / flags.len() as f64,
        max_rejection_run: max_rejection_run(flags),
        params,
        running_acceptance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width histogram over `[min, max]` of the series.
pub fn histogram(xs: &[f64], bins: usize) -> Vec<HistogramBin> {
    if xs.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return vec![HistogramBin {
            lo,
            hi,
            count: xs.len(),
        }];
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in xs {
        let b = (((x - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(b, count)| HistogramBin {
            lo: lo + b as f64 * width,
            hi: if b + 1 == bins { hi } else { lo + (b + 1) as f64 * width },
            count,
        })
        .collect()
}
