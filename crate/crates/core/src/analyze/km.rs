//! Kaplan–Meier product-limit curves and the log-rank test.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Normal quantile for the pointwise 95% band.
const Z95: f64 = 1.959_963_984_540_054;

/// One product-limit curve. Row 0 is `t = 0` with `S = 1`; the remaining
/// rows are the distinct event times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmCurve {
    pub stratum: String,
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
}

impl KmCurve {
    /// Survival just after time `t` (right-continuous step function).
    pub fn survival_at(&self, t: f64) -> f64 {
        let mut s = 1.0;
        for (ti, si) in self.times.iter().zip(&self.survival) {
            if *ti <= t {
                s = *si;
            } else {
                break;
            }
        }
        s
    }
}

fn check_inputs(times: &[f64], events: &[bool], strata: &[String]) -> Result<()> {
    if times.len() != events.len() || times.len() != strata.len() {
        return Err(Error::Domain("times, events and strata differ in length".into()));
    }
    if let Some(t) = times.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(Error::Domain(format!("time must be positive, got {t}")));
    }
    Ok(())
}

fn km_single(stratum: &str, mut units: Vec<(f64, bool)>) -> KmCurve {
    units.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut curve = KmCurve {
        stratum: stratum.to_string(),
        times: vec![0.0],
        survival: vec![1.0],
        lower: vec![1.0],
        upper: vec![1.0],
        at_risk: vec![units.len()],
        events: vec![0],
    };
    let mut s = 1.0;
    let mut greenwood = 0.0;
    let mut at_risk = units.len();
    let mut k = 0;
    while k < units.len() {
        let t = units[k].0;
        let mut end = k;
        let mut deaths = 0;
        while end < units.len() && units[end].0 == t {
            deaths += usize::from(units[end].1);
            end += 1;
        }
        if deaths > 0 {
            let (n, d) = (at_risk as f64, deaths as f64);
            s *= 1.0 - d / n;
            let (lo, hi) = if deaths < at_risk {
                greenwood += d / (n * (n - d));
                let half = Z95 * greenwood.sqrt();
                ((s.ln() - half).exp(), (s.ln() + half).exp().min(1.0))
            } else {
                (0.0, 0.0)
            };
            curve.times.push(t);
            curve.survival.push(s);
            curve.lower.push(lo);
            curve.upper.push(hi);
            curve.at_risk.push(at_risk);
            curve.events.push(deaths);
        }
        at_risk -= end - k;
        k = end;
    }
    curve
}

/// Product-limit estimate per stratum, strata in sorted label order. Tied
/// deaths are aggregated; the band is `exp(ln S +- 1.96 sqrt(V))` with
/// Greenwood's `V = sum d / (n (n - d))`, and collapses to zero once
/// `S = 0`.
pub fn kaplan_meier(times: &[f64], events: &[bool], strata: &[String]) -> Result<Vec<KmCurve>> {
    check_inputs(times, events, strata)?;
    let mut groups: BTreeMap<&str, Vec<(f64, bool)>> = BTreeMap::new();
    for ((t, e), s) in times.iter().zip(events).zip(strata) {
        groups.entry(s.as_str()).or_default().push((*t, *e));
    }
    Ok(groups.into_iter().map(|(s, units)| km_single(s, units)).collect())
}

/// Curves for the requested `levels` in that order. Levels without units
/// are skipped and returned separately so callers can warn about them.
pub fn kaplan_meier_levels(
    times: &[f64],
    events: &[bool],
    strata: &[String],
    levels: &[String],
) -> Result<(Vec<KmCurve>, Vec<String>)> {
    let curves = kaplan_meier(times, events, strata)?;
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for l in levels {
        match curves.iter().find(|c| &c.stratum == l) {
            Some(c) => out.push(c.clone()),
            None => skipped.push(l.clone()),
        }
    }
    Ok((out, skipped))
}

/// CSV with columns `time,survival,lower,upper,stratum`.
pub fn write_km_csv<W: Write>(curves: &[KmCurve], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "survival", "lower", "upper", "stratum"])?;
    for c in curves {
        for i in 0..c.times.len() {
            w.write_record([
                c.times[i].to_string(),
                c.survival[i].to_string(),
                c.lower[i].to_string(),
                c.upper[i].to_string(),
                c.stratum.clone(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<km>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRankResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub strata: Vec<String>,
    pub observed: Vec<f64>,
    pub expected: Vec<f64>,
}

/// K-sample log-rank test over the pooled distinct event times.
pub fn logrank_test(times: &[f64], events: &[bool], strata: &[String]) -> Result<LogRankResult> {
    check_inputs(times, events, strata)?;
    let labels: Vec<String> = {
        let mut l: Vec<String> = strata.to_vec();
        l.sort();
        l.dedup();
        l
    };
    let k = labels.len();
    if k < 2 {
        return Err(Error::TestUndefined(format!("{k} stratum; at least two are required")));
    }
    if !events.iter().any(|e| *e) {
        return Err(Error::TestUndefined("no events".into()));
    }
    let group: Vec<usize> = strata
        .iter()
        .map(|s| labels.binary_search(s).expect("label present"))
        .collect();
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));

    let mut at_risk = vec![0.0f64; k];
    for &g in &group {
        at_risk[g] += 1.0;
    }
    let mut observed = vec![0.0; k];
    let mut expected = vec![0.0; k];
    let mut cov = DMatrix::<f64>::zeros(k, k);
    let mut i = 0;
    while i < order.len() {
        let t = times[order[i]];
        let mut end = i;
        let mut deaths = vec![0.0; k];
        let mut leaving = vec![0.0; k];
        while end < order.len() && times[order[end]] == t {
            let u = order[end];
            leaving[group[u]] += 1.0;
            if events[u] {
                deaths[group[u]] += 1.0;
            }
            end += 1;
        }
        let d: f64 = deaths.iter().sum();
        let n: f64 = at_risk.iter().sum();
        if d > 0.0 {
            for g in 0..k {
                observed[g] += deaths[g];
                expected[g] += d * at_risk[g] / n;
            }
            if n > 1.0 {
                let f = d * (n - d) / (n - 1.0);
                for g in 0..k {
                    for h in 0..k {
                        let delta = if g == h { 1.0 } else { 0.0 };
                        cov[(g, h)] += f * at_risk[g] / n * (delta - at_risk[h] / n);
                    }
                }
            }
        }
        for g in 0..k {
            at_risk[g] -= leaving[g];
        }
        i = end;
    }
    let diff = DVector::from_iterator(k - 1, (0..k - 1).map(|g| observed[g] - expected[g]));
    let v = cov.view((0, 0), (k - 1, k - 1)).into_owned();
    let statistic = if diff.iter().all(|x| x.abs() < 1e-12) {
        0.0
    } else {
        let inv = v
            .try_inverse()
            .ok_or_else(|| Error::TestUndefined("singular log-rank covariance".into()))?;
        (diff.transpose() * inv * &diff)[(0, 0)]
    };
    let df = k - 1;
    let chi = ChiSquared::new(df as f64).map_err(|e| Error::TestUndefined(e.to_string()))?;
    Ok(LogRankResult {
        statistic,
        df,
        p_value: chi.sf(statistic),
        strata: labels,
        observed,
        expected,
    })
}

pub fn write_logrank_csv<W: Write>(result: &LogRankResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["statistic", "df", "p_value"])?;
    w.write_record([result.statistic.to_string(), result.df.to_string(), result.p_value.to_string()])?;
    w.flush().map_err(|e| Error::io("<logrank>", e))?;
    Ok(())
}
