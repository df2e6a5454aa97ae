//! Posterior means, medians, standard deviations and equal-tailed credible
//! intervals, plus the estimated correlation functions.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::PosteriorDraws;

/// Type-7 sample quantile: linear interpolation between order statistics at
/// position `(n - 1) p`. `sorted` must be ascending and nonempty.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub label: String,
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub alpha: f64,
    pub params: Vec<ParamSummary>,
}

impl PosteriorSummary {
    pub fn get(&self, label: &str) -> Option<&ParamSummary> {
        self.params.iter().find(|p| p.label == label)
    }
}

/// Summary of one column of draws.
pub fn summarize_column(label: &str, values: &[f64], alpha: f64) -> Result<ParamSummary> {
    if values.is_empty() {
        return Err(Error::Domain(format!("no draws for {label}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(ParamSummary {
        label: label.to_string(),
        mean,
        median: quantile_type7(&sorted, 0.5),
        sd,
        lower: quantile_type7(&sorted, alpha / 2.0),
        upper: quantile_type7(&sorted, 1.0 - alpha / 2.0),
    })
}

/// Per-parameter mean, median, sample sd and the type-7 `(alpha/2,
/// 1 - alpha/2)` quantiles over all chains.
pub fn summarize_draws(draws: &PosteriorDraws, alpha: f64) -> Result<PosteriorSummary> {
    if draws.n_rows() == 0 {
        return Err(Error::Domain("no draws to summarize".into()));
    }
    let params = (0..draws.n_params())
        .map(|k| summarize_column(&draws.labels()[k], &draws.column(k), alpha))
        .collect::<Result<Vec<_>>>()?;
    Ok(PosteriorSummary { alpha, params })
}

/// Fraction of draws for which `pred` holds on the row.
pub fn posterior_probability(draws: &PosteriorDraws, pred: impl Fn(&[f64]) -> bool) -> f64 {
    let n = draws.n_rows();
    if n == 0 {
        return f64::NAN;
    }
    (0..n).filter(|&i| pred(draws.row(i))).count() as f64 / n as f64
}

/// Fraction of draws with `a > b` for two labelled parameters.
pub fn probability_greater(draws: &PosteriorDraws, a: &str, b: &str) -> Result<f64> {
    let ia = draws.index_of(a).ok_or_else(|| Error::Domain(format!("no parameter {a}")))?;
    let ib = draws.index_of(b).ok_or_else(|| Error::Domain(format!("no parameter {b}")))?;
    Ok(posterior_probability(draws, |row| row[ia] > row[ib]))
}

/// Descriptive name for a draw label, used in the first summary column.
pub fn display_name(label: &str) -> String {
    if let Some(inner) = label.strip_prefix("beta[").and_then(|s| s.strip_suffix(']')) {
        return match inner {
            "intercept" => "Intercept".into(),
            other => other.to_string(),
        };
    }
    match label {
        "sigma" => "Error scale".into(),
        "sigma2" => "Error variance".into(),
        "sigma_v2" => "Physical variance".into(),
        "nu_r_P" => "Physical row length".into(),
        "nu_c_P" => "Physical column length".into(),
        "lambda_v" => "Physical shape (unbounded)".into(),
        "kappa_v" => "Physical shape".into(),
        "sigma_w2" => "Logical variance".into(),
        "nu_r_L" => "Logical row length".into(),
        "nu_c_L" => "Logical column length".into(),
        "kappa_w" => "Logical shape".into(),
        l if l.starts_with("v[") => format!("Physical effect {}", &l[2..l.len() - 1]),
        l if l.starts_with("w[") => format!("Logical effect {}", &l[2..l.len() - 1]),
        l => l.to_string(),
    }
}

/// CSV with columns `Name,Parameter,Mean,SD,Lower,Upper`.
pub fn write_summary_csv<W: Write>(summary: &PosteriorSummary, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["Name", "Parameter", "Mean", "SD", "Lower", "Upper"])?;
    for p in &summary.params {
        w.write_record([
            display_name(&p.label),
            p.label.clone(),
            p.mean.to_string(),
            p.sd.to_string(),
            p.lower.to_string(),
            p.upper.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<summary>", e))?;
    Ok(())
}

/// One point of an estimated correlation function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPoint {
    pub distance_r: usize,
    pub distance_c: usize,
    pub correlation: f64,
}

/// Posterior mean of `exp(-(dr/nu_r)^kappa - (dc/nu_c)^kappa)` over a grid of
/// integer distances, using the draw columns named by `labels`
/// (`[nu_r, nu_c, kappa]`).
pub fn correlation_grid(
    draws: &PosteriorDraws,
    labels: [&str; 3],
    max_dr: usize,
    max_dc: usize,
) -> Result<Vec<CorrelationPoint>> {
    let cols: Vec<Vec<f64>> = labels
        .iter()
        .map(|l| draws.column_by_label(l).ok_or_else(|| Error::Domain(format!("no parameter {l}"))))
        .collect::<Result<_>>()?;
    let n = draws.n_rows();
    if n == 0 {
        return Err(Error::Domain("no draws".into()));
    }
    let mut out = Vec::with_capacity((max_dr + 1) * (max_dc + 1));
    for dr in 0..=max_dr {
        for dc in 0..=max_dc {
            let total: f64 = (0..n)
                .map(|i| {
                    let (nr, nc, k) = (cols[0][i], cols[1][i], cols[2][i]);
                    (-(dr as f64 / nr).powf(k) - (dc as f64 / nc).powf(k)).exp()
                })
                .sum();
            out.push(CorrelationPoint {
                distance_r: dr,
                distance_c: dc,
                correlation: total / n as f64,
            });
        }
    }
    Ok(out)
}

pub fn write_correlation_csv<W: Write>(points: &[CorrelationPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["distance_r", "distance_c", "correlation"])?;
    for p in points {
        w.write_record([p.distance_r.to_string(), p.distance_c.to_string(), p.correlation.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<correlation>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn draws(cols: &[(&str, Vec<f64>)]) -> PosteriorDraws {
        let n = cols[0].1.len();
        let mut values = Vec::new();
        for i in 0..n {
            for (_, c) in cols {
                values.push(c[i]);
            }
        }
        PosteriorDraws::new(cols.iter().map(|(l, _)| l.to_string()).collect(), 1, n, values, Vec::new()).unwrap()
    }

    #[test]
    fn constant_column() {
        let s = summarize_column("c", &[2.5; 10], 0.05).unwrap();
        assert_eq!((s.mean, s.median, s.sd, s.lower, s.upper), (2.5, 2.5, 0.0, 2.5, 2.5));
    }

    #[test]
    fn type7_quartiles() {
        let s = summarize_column("x", &[4.0, 1.0, 3.0, 2.0], 0.5).unwrap();
        assert_relative_eq!(s.lower, 1.75);
        assert_relative_eq!(s.upper, 3.25);
        assert_relative_eq!(s.median, 2.5);
    }

    #[test]
    fn empty_is_error() {
        assert!(summarize_column("x", &[], 0.05).is_err());
        assert!(summarize_column("x", &[1.0], 1.5).is_err());
    }

    #[test]
    fn probability_by_construction() {
        let d = draws(&[("a", vec![1.0, 2.0, 3.0, 4.0]), ("b", vec![2.0, 1.0, 1.0, 5.0])]);
        assert_eq!(probability_greater(&d, "a", "b").unwrap(), 0.5);
    }

    #[test]
    fn summary_csv_layout() {
        let d = draws(&[("beta[intercept]", vec![1.0, 3.0]), ("sigma", vec![0.5, 0.5])]);
        let s = summarize_draws(&d, 0.05).unwrap();
        let mut buf = Vec::new();
        write_summary_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("Name,Parameter,Mean,SD,Lower,Upper"));
        assert!(lines.next().unwrap().starts_with("Intercept,beta[intercept],2,"));
    }

    #[test]
    fn correlation_grid_at_fixed_parameters() {
        let d = draws(&[("nr", vec![2.0, 2.0]), ("nc", vec![1.0, 1.0]), ("k", vec![1.0, 1.0])]);
        let g = correlation_grid(&d, ["nr", "nc", "k"], 2, 1).unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g[0].correlation, 1.0);
        assert_relative_eq!(g[5].correlation, (-2.0f64).exp(), epsilon = 1e-15);
    }
}
