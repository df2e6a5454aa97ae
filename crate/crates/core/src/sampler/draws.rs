//! Retained draws, per-chain statistics and their file formats.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::diagnostics::{diagnose, ParameterDiagnostics};
use super::hmc::ChainResult;
use super::LogDensity;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub chain: usize,
    pub step_size: f64,
    pub n_divergent: usize,
    pub warmup_divergent: usize,
    pub mean_accept: f64,
    pub n_leapfrog: usize,
}

/// Constrained draws from one or more chains, stored row-major with the
/// rows of chain 0 first.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    labels: Vec<String>,
    n_chains: usize,
    n_draws: usize,
    values: Vec<f64>,
    chains: Vec<ChainStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub n_chains: usize,
    pub n_draws_per_chain: usize,
    pub max_rhat: Option<f64>,
    pub min_ess_bulk: Option<f64>,
    pub divergent_fraction: f64,
    /// Human-readable warnings, e.g. many divergences or large R-hat.
    pub flags: Vec<String>,
    pub chains: Vec<ChainStats>,
    pub parameters: Vec<ParameterDiagnostics>,
}

impl DiagnosticsReport {
    pub fn converged(&self, rhat_threshold: f64) -> bool {
        self.max_rhat.is_none_or(|r| r <= rhat_threshold)
    }
}

impl PosteriorDraws {
    pub fn new(labels: Vec<String>, n_chains: usize, n_draws: usize, values: Vec<f64>, chains: Vec<ChainStats>) -> Result<Self> {
        if values.len() != labels.len() * n_chains * n_draws {
            return Err(Error::Domain(format!(
                "{} values for {} labels x {} chains x {} draws",
                values.len(),
                labels.len(),
                n_chains,
                n_draws
            )));
        }
        Ok(Self {
            labels,
            n_chains,
            n_draws,
            values,
            chains,
        })
    }

    pub fn from_chains<T: LogDensity + ?Sized>(target: &T, chains: &[ChainResult]) -> Self {
        let labels = target.labels();
        let n_draws = chains.first().map_or(0, |c| c.n_draws());
        let mut values = Vec::with_capacity(labels.len() * n_draws * chains.len());
        for c in chains {
            for i in 0..c.n_draws() {
                values.extend(target.constrain(c.draw(i)));
            }
        }
        Self {
            labels,
            n_chains: chains.len(),
            n_draws,
            values,
            chains: chains.iter().map(|c| c.stats.clone()).collect(),
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_chains(&self) -> usize {
        self.n_chains
    }

    pub fn n_draws_per_chain(&self) -> usize {
        self.n_draws
    }

    pub fn n_rows(&self) -> usize {
        self.n_chains * self.n_draws
    }

    pub fn n_params(&self) -> usize {
        self.labels.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn chain_stats(&self) -> &[ChainStats] {
        &self.chains
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.n_params();
        &self.values[i * k..(i + 1) * k]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// All draws of parameter `k`, chains concatenated.
    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.row(i)[k]).collect()
    }

    pub fn column_by_label(&self, label: &str) -> Option<Vec<f64>> {
        self.index_of(label).map(|k| self.column(k))
    }

    /// Draws of parameter `k` split by chain.
    pub fn chain_columns(&self, k: usize) -> Vec<Vec<f64>> {
        (0..self.n_chains)
            .map(|c| (0..self.n_draws).map(|i| self.row(c * self.n_draws + i)[k]).collect())
            .collect()
    }

    pub fn total_divergent(&self) -> usize {
        self.chains.iter().map(|c| c.n_divergent).sum()
    }

    pub fn diagnostics(&self) -> Result<DiagnosticsReport> {
        let mut parameters = Vec::with_capacity(self.n_params());
        for k in 0..self.n_params() {
            let cols = self.chain_columns(k);
            let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
            parameters.push(diagnose(&self.labels[k], &refs)?);
        }
        let max_rhat = parameters.iter().filter_map(|p| p.rhat).fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))));
        let min_ess_bulk = parameters.iter().filter_map(|p| p.ess_bulk).fold(None, |acc: Option<f64>, e| Some(acc.map_or(e, |a| a.min(e))));
        let rows = self.n_rows().max(1) as f64;
        let divergent_fraction = self.total_divergent() as f64 / rows;
        let mut flags = Vec::new();
        if divergent_fraction > 0.5 {
            flags.push(format!("{:.1}% of post-warmup transitions diverged", 100.0 * divergent_fraction));
        }
        if let Some(r) = max_rhat {
            if r > 1.1 {
                flags.push(format!("max R-hat {r:.3} exceeds 1.1"));
            }
        }
        Ok(DiagnosticsReport {
            n_chains: self.n_chains,
            n_draws_per_chain: self.n_draws,
            max_rhat,
            min_ess_bulk,
            divergent_fraction,
            flags,
            chains: self.chains.clone(),
            parameters,
        })
    }

    /// CSV with columns `chain,draw,<labels...>`; chain and draw are 1-based.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["chain".to_string(), "draw".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        let mut rec = Vec::with_capacity(header.len());
        for c in 0..self.n_chains {
            for i in 0..self.n_draws {
                rec.clear();
                rec.push((c + 1).to_string());
                rec.push((i + 1).to_string());
                rec.extend(self.row(c * self.n_draws + i).iter().map(|x| x.to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| Error::io("<draws>", e))?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Read a file written by [`Self::write_csv`]. Chain statistics are not
    /// stored in the CSV and come back empty.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.len() < 2 || &header[0] != "chain" || &header[1] != "draw" {
            return Err(Error::Domain("draws CSV must start with chain,draw columns".into()));
        }
        let labels: Vec<String> = header.iter().skip(2).map(String::from).collect();
        let mut values = Vec::new();
        let mut chain_of_row = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::Domain(format!("line {}: cannot parse {s:?}", line + 2)))
            };
            let chain: usize = rec[0]
                .parse()
                .map_err(|_| Error::Domain(format!("line {}: bad chain index", line + 2)))?;
            chain_of_row.push(chain);
            for s in rec.iter().skip(2) {
                values.push(parse(s)?);
            }
        }
        let n_chains = chain_of_row.iter().copied().max().unwrap_or(0);
        let n_rows = chain_of_row.len();
        if n_chains == 0 || n_rows % n_chains != 0 {
            return Err(Error::Domain("draws CSV has unequal chain lengths".into()));
        }
        let n_draws = n_rows / n_chains;
        for (i, &c) in chain_of_row.iter().enumerate() {
            if c != i / n_draws + 1 {
                return Err(Error::Domain("draws CSV rows are not grouped by chain".into()));
            }
        }
        Self::new(labels, n_chains, n_draws, values, Vec::new())
    }

    pub fn read_csv_file(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}
