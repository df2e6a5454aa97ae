//! Rank-normalized split R-hat and effective sample size.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Fewest total draws for which diagnostics are reported.
pub const MIN_DRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDiagnostics {
    pub name: String,
    /// `None` when the parameter is constant across all draws.
    pub rhat: Option<f64>,
    pub ess_bulk: Option<f64>,
    pub ess_tail: Option<f64>,
}

/// Split each chain into halves, dropping the middle draw of odd lengths.
fn split_chains(chains: &[&[f64]]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

/// Normal scores of the pooled ranks, with average ranks for ties.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut pooled: Vec<(f64, usize, usize)> = Vec::new();
    for (c, chain) in chains.iter().enumerate() {
        for (i, &x) in chain.iter().enumerate() {
            pooled.push((x, c, i));
        }
    }
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = pooled.len() as f64;
    let normal = Normal::standard();
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut k = 0;
    while k < pooled.len() {
        let mut end = k + 1;
        while end < pooled.len() && pooled[end].0 == pooled[k].0 {
            end += 1;
        }
        // 1-based average rank of the tie block
        let rank = (k + 1 + end) as f64 / 2.0;
        let score = normal.inverse_cdf((rank - 0.375) / (s + 0.25));
        for &(_, c, i) in &pooled[k..end] {
            out[c][i] = score;
        }
        k = end;
    }
    out
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Classic R-hat of already-split chains; `None` if within-chain variance
/// vanishes.
fn rhat_basic(chains: &[Vec<f64>]) -> Option<f64> {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = chains.iter().map(|c| var(c)).sum::<f64>() / chains.len() as f64;
    let b = n * var(&means);
    if !(w > 0.0) || !w.is_finite() {
        return None;
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    Some((var_plus / w).sqrt())
}

/// Autocovariance of one chain at `lag`.
fn autocov(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    x[..n - lag].iter().zip(&x[lag..]).map(|(a, b)| (a - m) * (b - m)).sum::<f64>() / n as f64
}

/// Multi-chain ESS with Geyer's initial positive sequence and monotone
/// adjustment. Autocovariances are computed lag by lag until the sequence
/// terminates.
fn ess_basic(chains: &[Vec<f64>]) -> Option<f64> {
    let m = chains.len() as f64;
    let n = chains[0].len();
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov0: Vec<f64> = chains.iter().zip(&means).map(|(c, &mu)| autocov(c, mu, 0)).collect();
    let mean_var = acov0.iter().sum::<f64>() / m * nf / (nf - 1.0);
    let var_plus = if chains.len() > 1 {
        mean_var * (nf - 1.0) / nf + var(&means)
    } else {
        mean_var * (nf - 1.0) / nf
    };
    if !(var_plus > 0.0) || !var_plus.is_finite() {
        return None;
    }
    let rho = |lag: usize| -> f64 {
        let mean_acov = chains.iter().zip(&means).map(|(c, &mu)| autocov(c, mu, lag)).sum::<f64>() / m;
        1.0 - (mean_var - mean_acov) / var_plus
    };
    let mut pair_sums = Vec::new();
    let mut t = 0;
    while t + 1 < n {
        let p = rho(t) + rho(t + 1);
        if p < 0.0 {
            break;
        }
        pair_sums.push(p);
        t += 2;
    }
    for k in 1..pair_sums.len() {
        if pair_sums[k] > pair_sums[k - 1] {
            pair_sums[k] = pair_sums[k - 1];
        }
    }
    let total = m * nf;
    let tau = (-1.0 + 2.0 * pair_sums.iter().sum::<f64>()).max(1.0 / total.log10());
    Some(total / tau)
}

fn check_shapes(chains: &[&[f64]]) -> Result<()> {
    if chains.is_empty() {
        return Err(Error::DiagnosticUnavailable("no chains".into()));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::DiagnosticUnavailable("chains differ in length".into()));
    }
    let total = n * chains.len();
    if total < MIN_DRAWS || n < 4 {
        return Err(Error::DiagnosticUnavailable(format!(
            "{total} draws; at least {MIN_DRAWS} and 4 per chain are required"
        )));
    }
    Ok(())
}

fn fold(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut all: Vec<f64> = chains.iter().flatten().copied().collect();
    all.sort_by(f64::total_cmp);
    let k = all.len();
    let median = if k % 2 == 1 { all[k / 2] } else { 0.5 * (all[k / 2 - 1] + all[k / 2]) };
    chains.iter().map(|c| c.iter().map(|x| (x - median).abs()).collect()).collect()
}

/// Rank-normalized split R-hat: the larger of the bulk and folded versions.
pub fn split_rhat(chains: &[&[f64]]) -> Result<Option<f64>> {
    check_shapes(chains)?;
    let split = split_chains(chains);
    let bulk = rhat_basic(&rank_normalize(&split));
    let tail = rhat_basic(&rank_normalize(&fold(&split)));
    Ok(match (bulk, tail) {
        (Some(a), Some(b)) => Some(a.max(b)),
        (a, b) => a.or(b),
    })
}

/// Bulk ESS on rank-normalized split chains. May exceed the number of draws
/// for antithetic chains, capped at `S log10 S`.
pub fn ess_bulk(chains: &[&[f64]]) -> Result<Option<f64>> {
    check_shapes(chains)?;
    Ok(ess_basic(&rank_normalize(&split_chains(chains))))
}

/// Tail ESS: the smaller ESS of the 5% and 95% quantile indicators.
pub fn ess_tail(chains: &[&[f64]]) -> Result<Option<f64>> {
    check_shapes(chains)?;
    let split = split_chains(chains);
    let mut all: Vec<f64> = split.iter().flatten().copied().collect();
    all.sort_by(f64::total_cmp);
    let q = |p: f64| all[((all.len() - 1) as f64 * p).round() as usize];
    let (lo, hi) = (q(0.05), q(0.95));
    let ind = |thr: f64, below: bool| -> Vec<Vec<f64>> {
        split
            .iter()
            .map(|c| c.iter().map(|&x| f64::from(u8::from(if below { x <= thr } else { x > thr }))).collect())
            .collect()
    };
    let a = ess_basic(&ind(lo, true));
    let b = ess_basic(&ind(hi, false));
    Ok(match (a, b) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    })
}

/// Diagnostics for one parameter given its draws per chain.
pub fn diagnose(name: &str, chains: &[&[f64]]) -> Result<ParameterDiagnostics> {
    Ok(ParameterDiagnostics {
        name: name.to_string(),
        rhat: split_rhat(chains)?,
        ess_bulk: ess_bulk(chains)?,
        ess_tail: ess_tail(chains)?,
    })
}
