//! Right-censored survival records with fixed-effect covariates and a
//! physical location per unit.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDataset {
    unit_ids: Vec<String>,
    times: Vec<f64>,
    events: Vec<bool>,
    /// Row-major `n x p`, first column the intercept.
    covariates: Vec<f64>,
    covariate_names: Vec<String>,
    /// 0-based physical location index per unit.
    locations: Vec<usize>,
    n_locations: usize,
}

impl SurvivalDataset {
    pub fn new(
        unit_ids: Vec<String>,
        times: Vec<f64>,
        events: Vec<bool>,
        covariates: Vec<f64>,
        covariate_names: Vec<String>,
        locations: Vec<usize>,
        n_locations: usize,
    ) -> Result<Self> {
        let n = times.len();
        let p = covariate_names.len();
        if unit_ids.len() != n || events.len() != n || locations.len() != n {
            return Err(Error::Domain(format!(
                "column lengths differ: {} ids, {} times, {} events, {} locations",
                unit_ids.len(),
                n,
                events.len(),
                locations.len()
            )));
        }
        if p == 0 {
            return Err(Error::Domain("at least the intercept column is required".into()));
        }
        if covariates.len() != n * p {
            return Err(Error::Domain(format!(
                "covariate matrix has {} entries, expected {n} x {p}",
                covariates.len()
            )));
        }
        if let Some(i) = times.iter().position(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::Domain(format!("unit {} has non-positive time {}", unit_ids[i], times[i])));
        }
        if let Some(i) = covariates.iter().position(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("unit {} has a non-finite covariate", unit_ids[i / p])));
        }
        if let Some(i) = locations.iter().position(|&j| j >= n_locations) {
            return Err(Error::Domain(format!(
                "unit {} has location {} outside 1..={n_locations}",
                unit_ids[i],
                locations[i] + 1
            )));
        }
        Ok(Self {
            unit_ids,
            times,
            events,
            covariates,
            covariate_names,
            locations,
            n_locations,
        })
    }

    pub fn n_units(&self) -> usize {
        self.times.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn n_locations(&self) -> usize {
        self.n_locations
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn events(&self) -> &[bool] {
        &self.events
    }

    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn locations(&self) -> &[usize] {
        &self.locations
    }

    /// Covariate row of unit `i`.
    pub fn x(&self, i: usize) -> &[f64] {
        let p = self.n_covariates();
        &self.covariates[i * p..(i + 1) * p]
    }

    pub fn censoring_rate(&self) -> f64 {
        if self.events.is_empty() {
            return 0.0;
        }
        self.events.iter().filter(|e| !**e).count() as f64 / self.events.len() as f64
    }

    /// Units reordered so that unit `k` of the result is unit `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let n = self.n_units();
        let mut seen = vec![false; n];
        if order.len() != n || order.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::Domain("order is not a permutation of the units".into()));
        }
        let p = self.n_covariates();
        Ok(Self {
            unit_ids: order.iter().map(|&i| self.unit_ids[i].clone()).collect(),
            times: order.iter().map(|&i| self.times[i]).collect(),
            events: order.iter().map(|&i| self.events[i]).collect(),
            covariates: order.iter().flat_map(|&i| self.covariates[i * p..(i + 1) * p].iter().copied()).collect(),
            covariate_names: self.covariate_names.clone(),
            locations: order.iter().map(|&i| self.locations[i]).collect(),
            n_locations: self.n_locations,
        })
    }

    /// Subset of units, in the given order.
    pub fn select(&self, units: &[usize]) -> Self {
        let p = self.n_covariates();
        Self {
            unit_ids: units.iter().map(|&i| self.unit_ids[i].clone()).collect(),
            times: units.iter().map(|&i| self.times[i]).collect(),
            events: units.iter().map(|&i| self.events[i]).collect(),
            covariates: units.iter().flat_map(|&i| self.covariates[i * p..(i + 1) * p].iter().copied()).collect(),
            covariate_names: self.covariate_names.clone(),
            locations: units.iter().map(|&i| self.locations[i]).collect(),
            n_locations: self.n_locations,
        }
    }

    /// Number of units at each location.
    pub fn units_per_location(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_locations];
        for &j in &self.locations {
            counts[j] += 1;
        }
        counts
    }
}
