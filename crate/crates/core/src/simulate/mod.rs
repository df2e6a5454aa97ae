//! Synthetic datasets with a four-level factor, physical and logical
//! random effects and Type-I censoring, plus RMSE-based recovery studies.

pub mod study;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{cholesky_with_jitter, KernelGeometry, KernelParams, Topology};
use crate::model::{Family, SurvivalDataset};
use crate::topology::{build_location_map, GridSpec, LocationMap, Relabeling};

pub use study::{replication_seed, run_recovery_study, write_study_csv, RecoveryStudy, ReplicationResult, StudyRow};

/// Generating parameter values. Zero variances switch an effect off and
/// `sigma = 0` removes the noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthParams {
    /// Intercept followed by the effects of levels 1, 2 and 3 (level 4 is
    /// the baseline).
    pub beta: Vec<f64>,
    pub sigma: f64,
    pub sigma_v2: f64,
    pub nu_r_p: f64,
    pub nu_c_p: f64,
    pub kappa_v: f64,
    pub sigma_w2: f64,
    pub nu_r_l: f64,
    pub nu_c_l: f64,
    pub kappa_w: f64,
}

impl Default for TruthParams {
    /// Magnitudes of the GPU analysis estimates.
    fn default() -> Self {
        Self {
            beta: vec![2.0, 0.65, 0.26, -0.27],
            sigma: 0.182f64.sqrt(),
            sigma_v2: 0.022,
            nu_r_p: 0.964,
            nu_c_p: 0.964,
            kappa_v: 1.297,
            sigma_w2: 0.012,
            nu_r_l: 1.876,
            nu_c_l: 0.598,
            kappa_w: 0.945,
        }
    }
}

impl TruthParams {
    /// Truth values keyed by the draw labels of a fitted M2 model.
    pub fn labelled(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = COVARIATE_NAMES
            .iter()
            .zip(&self.beta)
            .map(|(n, b)| (format!("beta[{n}]"), *b))
            .collect();
        out.extend([
            ("sigma".to_string(), self.sigma),
            ("sigma_v2".to_string(), self.sigma_v2),
            ("nu_r_P".to_string(), self.nu_r_p),
            ("nu_c_P".to_string(), self.nu_c_p),
            ("kappa_v".to_string(), self.kappa_v),
            ("sigma_w2".to_string(), self.sigma_w2),
            ("nu_r_L".to_string(), self.nu_r_l),
            ("nu_c_L".to_string(), self.nu_c_l),
            ("kappa_w".to_string(), self.kappa_w),
        ]);
        out
    }

    fn validate(&self) -> Result<()> {
        if self.beta.len() != 4 || self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Domain("beta must hold 4 finite values (intercept and 3 levels)".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Domain(format!("sigma must be non-negative, got {}", self.sigma)));
        }
        for (name, v) in [("sigma_v2", self.sigma_v2), ("sigma_w2", self.sigma_w2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.sigma_v2 > 0.0 {
            KernelParams::new(self.nu_r_p, self.nu_c_p, self.kappa_v, self.sigma_v2, Topology::EuclideanGrid)?;
        }
        if self.sigma_w2 > 0.0 {
            KernelParams::new(self.nu_r_l, self.nu_c_l, self.kappa_w, self.sigma_w2, Topology::Torus)?;
        }
        Ok(())
    }
}

pub const COVARIATE_NAMES: [&str; 4] = ["intercept", "level1", "level2", "level3"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSettings {
    pub grid: GridSpec,
    #[serde(default)]
    pub relabeling: Relabeling,
    pub replicates_per_location: usize,
    pub truth: TruthParams,
    pub target_censoring_rate: f64,
    pub family: Family,
    pub seed: u64,
}

impl SimulationSettings {
    /// 5x5 grid, 52 replicates, 50% censoring, lognormal lifetimes.
    pub fn standard(grid: GridSpec, replicates: usize, seed: u64) -> Self {
        Self {
            grid,
            relabeling: Relabeling::Folded,
            replicates_per_location: replicates,
            truth: TruthParams::default(),
            target_censoring_rate: 0.5,
            family: Family::Nor,
            seed,
        }
    }
}

/// Everything needed to score a fit against the truth without
/// re-simulating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationManifest {
    pub settings: SimulationSettings,
    /// Realized physical effects by physical location index.
    pub v: Vec<f64>,
    /// Realized logical effects by logical location index.
    pub w: Vec<f64>,
    pub censoring_time: f64,
    pub realized_censoring_rate: f64,
    pub attempts: usize,
    pub n_units: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_file: Option<String>,
}

/// Tolerance on the realized censoring rate.
pub const CENSORING_TOLERANCE: f64 = 0.05;
const MAX_ATTEMPTS: usize = 100;

/// Draw `(v, w)` from their Gaussian fields.
pub fn draw_effects<R: Rng + ?Sized>(map: &LocationMap, truth: &TruthParams, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = map.len();
    let field = |variance: f64, nu_r: f64, nu_c: f64, kappa: f64, topology: Topology, rng: &mut R| -> Result<Vec<f64>> {
        let z = DVector::from_iterator(m, (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)));
        if variance == 0.0 {
            return Ok(vec![0.0; m]);
        }
        let corr = KernelGeometry::new(map, topology).correlation(nu_r, nu_c, kappa);
        let chol = cholesky_with_jitter(&corr)?.factor;
        Ok(((chol * z) * variance.sqrt()).iter().copied().collect())
    };
    let v = field(truth.sigma_v2, truth.nu_r_p, truth.nu_c_p, truth.kappa_v, Topology::EuclideanGrid, rng)?;
    let w = field(truth.sigma_w2, truth.nu_r_l, truth.nu_c_l, truth.kappa_w, Topology::Torus, rng)?;
    Ok((v, w))
}

/// Censoring time giving the censoring rate closest to `target` when units
/// with `t > c` are censored: bisection on the log scale.
fn censoring_threshold(log_t: &[f64], target: f64) -> (f64, f64) {
    let n = log_t.len() as f64;
    let rate = |c: f64| log_t.iter().filter(|&&y| y > c).count() as f64 / n;
    if target <= 0.0 {
        return (f64::INFINITY, 0.0);
    }
    let lo0 = log_t.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
    let hi0 = log_t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (lo0, hi0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (r_lo, r_hi) = (rate(lo), rate(hi));
    let c = if (r_lo - target).abs() < (r_hi - target).abs() { lo } else { hi };
    (c, rate(c))
}

/// Simulate one dataset. Units are ordered by physical location, then
/// replicate; replicate `k` gets factor level `k % 4 + 1`.
pub fn generate_dataset(settings: &SimulationSettings) -> Result<(SurvivalDataset, SimulationManifest)> {
    settings.truth.validate()?;
    if settings.replicates_per_location == 0 {
        return Err(Error::Domain("at least one replicate per location is required".into()));
    }
    if !(settings.target_censoring_rate >= 0.0 && settings.target_censoring_rate < 1.0) {
        return Err(Error::Domain(format!(
            "target censoring rate must lie in [0, 1), got {}",
            settings.target_censoring_rate
        )));
    }
    let map = build_location_map(settings.grid, settings.relabeling)?;
    let m = map.len();
    let reps = settings.replicates_per_location;
    let n = m * reps;
    let truth = &settings.truth;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);

    let mut covariates = Vec::with_capacity(n * 4);
    let mut locations = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    for j in 0..m {
        for k in 0..reps {
            let level = k % 4 + 1;
            covariates.extend([1.0, f64::from(u8::from(level == 1)), f64::from(u8::from(level == 2)), f64::from(u8::from(level == 3))]);
            locations.push(j);
            ids.push(format!("{}-{}", j + 1, k + 1));
        }
    }

    let mut last_problem = String::new();
    for attempt in 1..=MAX_ATTEMPTS {
        let (v, w) = draw_effects(&map, truth, &mut rng)?;
        let log_t: Vec<f64> = (0..n)
            .map(|i| {
                let x = &covariates[i * 4..i * 4 + 4];
                let j = locations[i];
                let mu: f64 = x.iter().zip(&truth.beta).map(|(a, b)| a * b).sum::<f64>() + v[j] + w[map.logical_index(j)];
                let eps = settings.family.sample(&mut rng);
                mu + truth.sigma * eps
            })
            .collect();
        let (c, rate) = censoring_threshold(&log_t, settings.target_censoring_rate);
        if (rate - settings.target_censoring_rate).abs() > CENSORING_TOLERANCE {
            return Err(Error::Simulation(format!(
                "censoring rate {rate:.3} cannot reach the target {}",
                settings.target_censoring_rate
            )));
        }
        let events: Vec<bool> = log_t.iter().map(|&y| y <= c).collect();
        let mut failures = vec![0usize; m];
        for (i, e) in events.iter().enumerate() {
            failures[locations[i]] += usize::from(*e);
        }
        if let Some(j) = failures.iter().position(|&f| f == 0) {
            last_problem = format!("location {} had no failures", j + 1);
            continue;
        }
        let censor_time = c.exp();
        let times: Vec<f64> = log_t.iter().map(|&y| if y <= c { y.exp() } else { censor_time }).collect();
        if times.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::Simulation("generated a non-positive or non-finite time".into()));
        }
        let data = SurvivalDataset::new(
            ids,
            times,
            events,
            covariates,
            COVARIATE_NAMES.iter().map(|s| s.to_string()).collect(),
            locations,
            m,
        )?;
        let manifest = SimulationManifest {
            settings: settings.clone(),
            v,
            w,
            censoring_time: censor_time,
            realized_censoring_rate: rate,
            attempts: attempt,
            n_units: n,
            dataset_file: None,
        };
        return Ok((data, manifest));
    }
    Err(Error::Simulation(format!(
        "no dataset with failures at every location after {MAX_ATTEMPTS} attempts ({last_problem})"
    )))
}

/// `sqrt(mean((estimate - truth)^2))`.
pub fn compute_rmse(estimates: &[f64], truth: f64) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::Domain("no estimates".into()));
    }
    Ok((estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / estimates.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rmse_examples() {
        assert_eq!(compute_rmse(&[2.0, 2.0], 2.0).unwrap(), 0.0);
        assert_relative_eq!(compute_rmse(&[4.0, 2.0], 3.0).unwrap(), 1.0);
        assert_relative_eq!(compute_rmse(&[2.1, 1.9, 2.0], 2.0).unwrap(), (0.02f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert!(compute_rmse(&[], 1.0).is_err());
    }

    #[test]
    fn standard_size_and_censoring() {
        let s = SimulationSettings::standard(GridSpec::new(5, 5).unwrap(), 52, 7);
        let (d, man) = generate_dataset(&s).unwrap();
        assert_eq!(d.n_units(), 1300);
        assert!((man.realized_censoring_rate - 0.5).abs() <= 0.05);
        assert_eq!(d.censoring_rate(), man.realized_censoring_rate);
        for (t, e) in d.times().iter().zip(d.events()) {
            assert!(*t > 0.0);
            if !e {
                assert_eq!(*t, man.censoring_time);
            }
        }
    }

    #[test]
    fn degenerate_noise_gives_linear_predictor() {
        let mut s = SimulationSettings::standard(GridSpec::new(2, 2).unwrap(), 8, 1);
        s.truth.sigma = 0.0;
        s.truth.sigma_v2 = 0.0;
        s.truth.sigma_w2 = 0.0;
        s.target_censoring_rate = 0.0;
        let (d, _) = generate_dataset(&s).unwrap();
        for i in 0..d.n_units() {
            let xb: f64 = d.x(i).iter().zip(&s.truth.beta).map(|(a, b)| a * b).sum();
            assert_relative_eq!(d.times()[i].ln(), xb, epsilon = 1e-12);
        }
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let s = SimulationSettings::standard(GridSpec::new(3, 3).unwrap(), 12, 42);
        assert_eq!(generate_dataset(&s).unwrap(), generate_dataset(&s).unwrap());
    }

    #[test]
    fn unreachable_target_is_an_error() {
        let mut s = SimulationSettings::standard(GridSpec::new(2, 2).unwrap(), 4, 1);
        s.truth.sigma = 0.0;
        s.truth.sigma_v2 = 0.0;
        s.truth.sigma_w2 = 0.0;
        s.truth.beta = vec![1.0, 0.0, 0.0, 0.0];
        s.target_censoring_rate = 0.5;
        assert!(matches!(generate_dataset(&s), Err(Error::Simulation(_))));
    }
}
