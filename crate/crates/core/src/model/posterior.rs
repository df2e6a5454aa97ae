//! Log posterior of the spatial AFT model and its analytic gradient.
//!
//! The sampler works on an unconstrained vector in which each random effect
//! is whitened: `v = sqrt(sigma_v2) * L_v * z_v` with `z_v ~ N(0, I)` and
//! `L_v` the Cholesky factor of the correlation matrix. Positive scalars are
//! on the log scale and `kappa_w` on the logit scale.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::dataset::SurvivalDataset;
use super::family::{unit_loglik_grad, Family};
use super::params::{
    kappa_from_lambda_unchecked, EffectSlots, LogicalEffect, ModelTag, ParamLayout, ParameterState, PhysicalEffect,
};
use super::priors::{Prior, PriorSpec};
use crate::error::{Error, Result};
use crate::kernels::{cholesky_with_jitter, KernelGeometry, Topology};
use crate::sampler::LogDensity;
use crate::topology::LocationMap;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Likelihood and prior parts of the whitened log density, with their
/// gradients when requested.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub log_lik: f64,
    pub log_prior: f64,
    pub grad_lik: Vec<f64>,
    pub grad_prior: Vec<f64>,
}

/// Which random effect a block belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Effect {
    Physical,
    Logical,
}

/// Realized random effect for given hyperparameters.
struct EffectState {
    corr: DMatrix<f64>,
    chol: DMatrix<f64>,
    scale: f64,
    values: DVector<f64>,
    nu_r: f64,
    nu_c: f64,
    kappa: f64,
    /// `d kappa / d (shape coordinate)`
    dkappa: f64,
}

#[derive(Debug, Clone)]
pub struct SpatialAft {
    model: ModelTag,
    family: Family,
    priors: PriorSpec,
    layout: ParamLayout,
    covariate_names: Vec<String>,
    log_t: Vec<f64>,
    events: Vec<bool>,
    x: Vec<f64>,
    physical_loc: Vec<usize>,
    logical_loc: Vec<usize>,
    physical_geometry: Option<KernelGeometry>,
    logical_geometry: Option<KernelGeometry>,
    likelihood_weight: f64,
}

impl SpatialAft {
    pub fn new(
        data: &SurvivalDataset,
        map: &LocationMap,
        model: ModelTag,
        family: Family,
        priors: PriorSpec,
    ) -> Result<Self> {
        priors.validate()?;
        if data.n_locations() != map.len() {
            return Err(Error::Domain(format!(
                "dataset has {} locations but the grid has {}",
                data.n_locations(),
                map.len()
            )));
        }
        let layout = ParamLayout::new(model, data.n_covariates(), map.len());
        Ok(Self {
            model,
            family,
            priors,
            layout,
            covariate_names: data.covariate_names().to_vec(),
            log_t: data.times().iter().map(|t| t.ln()).collect(),
            events: data.events().to_vec(),
            x: data.covariates().to_vec(),
            physical_loc: data.locations().to_vec(),
            logical_loc: data.locations().iter().map(|&j| map.logical_index(j)).collect(),
            physical_geometry: model.has_physical().then(|| KernelGeometry::new(map, Topology::EuclideanGrid)),
            logical_geometry: model.has_logical().then(|| KernelGeometry::new(map, Topology::Torus)),
            likelihood_weight: 1.0,
        })
    }

    /// Same model with the log-likelihood multiplied by `weight` (a power
    /// posterior).
    pub fn with_likelihood_weight(mut self, weight: f64) -> Self {
        self.likelihood_weight = weight;
        self
    }

    pub fn model(&self) -> ModelTag {
        self.model
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn priors(&self) -> &PriorSpec {
        &self.priors
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn n_units(&self) -> usize {
        self.log_t.len()
    }

    fn n_beta(&self) -> usize {
        self.layout.n_beta
    }

    fn slots(&self, effect: Effect) -> Option<&EffectSlots> {
        match effect {
            Effect::Physical => self.layout.physical.as_ref(),
            Effect::Logical => self.layout.logical.as_ref(),
        }
    }

    fn geometry(&self, effect: Effect) -> &KernelGeometry {
        match effect {
            Effect::Physical => self.physical_geometry.as_ref(),
            Effect::Logical => self.logical_geometry.as_ref(),
        }
        .expect("geometry exists for every effect in the layout")
    }

    fn effect_priors(&self, effect: Effect) -> [&Prior; 4] {
        let p = &self.priors;
        match effect {
            Effect::Physical => [&p.sigma_v2, &p.nu_r_p, &p.nu_c_p, &p.lambda_v],
            Effect::Logical => [&p.sigma_w2, &p.nu_r_l, &p.nu_c_l, &p.kappa_w],
        }
    }

    fn kernel_shape(effect: Effect, shape_prior: &Prior, u: f64) -> (f64, f64) {
        match effect {
            Effect::Physical => {
                let lambda = shape_prior.constrain(u);
                let kappa = kappa_from_lambda_unchecked(lambda);
                // d kappa / d ln lambda
                (kappa, lambda * kappa * (1.0 - 0.5 * kappa))
            }
            Effect::Logical => {
                let kappa = shape_prior.constrain(u);
                (kappa, kappa * (1.0 - kappa))
            }
        }
    }

    fn effect_state(&self, effect: Effect, u: &[f64]) -> Result<EffectState> {
        let slots = self.slots(effect).expect("effect present");
        let pri = self.effect_priors(effect);
        let variance = pri[0].constrain(u[slots.log_variance]);
        let nu_r = pri[1].constrain(u[slots.log_nu_r]);
        let nu_c = pri[2].constrain(u[slots.log_nu_c]);
        let (kappa, dkappa) = Self::kernel_shape(effect, pri[3], u[slots.shape]);
        if !(variance > 0.0 && variance.is_finite() && nu_r > 0.0 && nu_r.is_finite() && nu_c > 0.0 && nu_c.is_finite())
            || !(kappa > 0.0)
        {
            return Err(Error::Evaluation(format!(
                "hyperparameters out of range: variance {variance}, nu ({nu_r}, {nu_c}), kappa {kappa}"
            )));
        }
        let corr = self.geometry(effect).correlation(nu_r, nu_c, kappa);
        let chol = cholesky_with_jitter(&corr)
            .map_err(|e| Error::Evaluation(format!("{e} at nu ({nu_r}, {nu_c}), kappa {kappa}")))?
            .factor;
        let scale = variance.sqrt();
        let z = DVector::from_column_slice(&u[slots.whitened.clone()]);
        let values = (&chol * z) * scale;
        Ok(EffectState {
            corr,
            chol,
            scale,
            values,
            nu_r,
            nu_c,
            kappa,
            dkappa,
        })
    }

    /// Whitened log density split into likelihood and prior, each with its
    /// gradient if `with_grad`.
    pub fn evaluate(&self, u: &[f64], with_grad: bool) -> Result<Evaluation> {
        let dim = self.layout.dim;
        if u.len() != dim {
            return Err(Error::Domain(format!("expected {dim} coordinates, got {}", u.len())));
        }
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::Evaluation("non-finite coordinate".into()));
        }
        let p = self.n_beta();
        let beta = &u[..p];
        let log_sigma = u[self.layout.log_sigma];
        let sigma = log_sigma.exp();
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Evaluation(format!("sigma = {sigma}")));
        }
        let phys = if self.model.has_physical() { Some(self.effect_state(Effect::Physical, u)?) } else { None };
        let logi = if self.model.has_logical() { Some(self.effect_state(Effect::Logical, u)?) } else { None };

        let mut grad_lik = if with_grad { vec![0.0; dim] } else { Vec::new() };
        let m = self.layout.n_locations;
        let mut g_phys = vec![0.0; if with_grad && phys.is_some() { m } else { 0 }];
        let mut g_logi = vec![0.0; if with_grad && logi.is_some() { m } else { 0 }];

        let mut log_lik = 0.0;
        for i in 0..self.log_t.len() {
            let xi = &self.x[i * p..(i + 1) * p];
            let mut mu: f64 = xi.iter().zip(beta).map(|(a, b)| a * b).sum();
            if let Some(e) = &phys {
                mu += e.values[self.physical_loc[i]];
            }
            if let Some(e) = &logi {
                mu += e.values[self.logical_loc[i]];
            }
            let (l, d_mu, d_ls) = unit_loglik_grad(self.log_t[i], self.events[i], mu, sigma, log_sigma, self.family);
            log_lik += l;
            if with_grad {
                for (g, xk) in grad_lik[..p].iter_mut().zip(xi) {
                    *g += d_mu * xk;
                }
                grad_lik[self.layout.log_sigma] += d_ls;
                if !g_phys.is_empty() {
                    g_phys[self.physical_loc[i]] += d_mu;
                }
                if !g_logi.is_empty() {
                    g_logi[self.logical_loc[i]] += d_mu;
                }
            }
        }
        if !log_lik.is_finite() {
            return Err(Error::Evaluation(format!("log-likelihood is {log_lik}")));
        }

        if with_grad {
            for (effect, state, g) in [(Effect::Physical, &phys, &g_phys), (Effect::Logical, &logi, &g_logi)] {
                if let Some(state) = state {
                    self.effect_likelihood_gradient(effect, state, u, g, &mut grad_lik);
                }
            }
        }

        let mut grad_prior = if with_grad { vec![0.0; dim] } else { Vec::new() };
        let mut log_prior = 0.0;
        let mut scalars: Vec<(usize, &Prior)> = (0..p).map(|k| (k, &self.priors.beta)).collect();
        scalars.push((self.layout.log_sigma, &self.priors.sigma));
        for effect in [Effect::Physical, Effect::Logical] {
            if let Some(s) = self.slots(effect) {
                let pri = self.effect_priors(effect);
                scalars.extend([(s.log_variance, pri[0]), (s.log_nu_r, pri[1]), (s.log_nu_c, pri[2]), (s.shape, pri[3])]);
                for k in s.whitened.clone() {
                    log_prior += -0.5 * u[k] * u[k] - HALF_LN_2PI;
                    if with_grad {
                        grad_prior[k] -= u[k];
                    }
                }
            }
        }
        for (idx, prior) in scalars {
            let (lp, d) = prior.unconstrained_log_density(u[idx]);
            log_prior += lp;
            if with_grad {
                grad_prior[idx] += d;
            }
        }
        if !log_prior.is_finite() {
            return Err(Error::Evaluation(format!("log prior is {log_prior}")));
        }
        Ok(Evaluation {
            log_lik,
            log_prior,
            grad_lik,
            grad_prior,
        })
    }

    /// Chain rule from `g = d loglik / d effect` to the effect's
    /// unconstrained coordinates.
    fn effect_likelihood_gradient(&self, effect: Effect, st: &EffectState, u: &[f64], g: &[f64], grad: &mut [f64]) {
        let slots = self.slots(effect).expect("effect present");
        let g = DVector::from_column_slice(g);
        let z = DVector::from_column_slice(&u[slots.whitened.clone()]);
        let a = st.chol.tr_mul(&g);
        for (k, idx) in slots.whitened.clone().enumerate() {
            grad[idx] += st.scale * a[k];
        }
        grad[slots.log_variance] += 0.5 * g.dot(&st.values);

        // dL = L * Phi(L^-1 dR L^-T), so g' dL z = <dR, L^-T Phi(a z') L^-1>
        // where Phi keeps the lower triangle and halves the diagonal.
        if z.iter().all(|x| *x == 0.0) {
            return;
        }
        let weights = cholesky_adjoint_weights(&lower_triangular_inverse(&st.chol), a.as_slice(), z.as_slice());
        let kg = self.geometry(effect).contract(&st.corr, &weights, st.nu_r, st.nu_c, st.kappa);
        grad[slots.log_nu_r] += st.scale * kg.log_nu_r;
        grad[slots.log_nu_c] += st.scale * kg.log_nu_c;
        grad[slots.shape] += st.scale * kg.kappa * st.dkappa;
    }

    /// Whitened log density with the likelihood weight applied.
    pub fn log_density(&self, u: &[f64]) -> Result<f64> {
        let e = self.evaluate(u, false)?;
        Ok(self.likelihood_weight * e.log_lik + e.log_prior)
    }

    /// Linear predictor `mu_i` for every unit at a constrained state.
    pub fn linear_predictor(&self, state: &ParameterState) -> Result<Vec<f64>> {
        linear_predictor_parts(
            state,
            &self.x,
            self.n_beta(),
            &self.physical_loc,
            &self.logical_loc,
            self.layout.n_locations,
        )
    }

    /// Log posterior at a constrained state in centered form: likelihood,
    /// multivariate normal densities of `v` and `w`, scalar priors and the
    /// log-Jacobian of the scalar transforms. It differs from the whitened
    /// sampling density by the Jacobian of the whitening map.
    pub fn log_posterior(&self, state: &ParameterState) -> Result<f64> {
        self.check_state(state)?;
        let mu = self.linear_predictor(state)?;
        let sigma = state.sigma;
        let mut total = 0.0;
        for i in 0..mu.len() {
            total += unit_loglik_grad(self.log_t[i], self.events[i], mu[i], sigma, sigma.ln(), self.family).0;
        }
        total *= self.likelihood_weight;
        let pr = &self.priors;
        total += state.beta.iter().map(|b| pr.beta.unconstrained_log_density(*b).0).sum::<f64>();
        total += scalar_term(&pr.sigma, sigma);
        if let Some(p) = &state.physical {
            total += scalar_term(&pr.sigma_v2, p.sigma_v2)
                + scalar_term(&pr.nu_r_p, p.nu_r)
                + scalar_term(&pr.nu_c_p, p.nu_c)
                + scalar_term(&pr.lambda_v, p.lambda_v);
            let corr = self.geometry(Effect::Physical).correlation(p.nu_r, p.nu_c, p.kappa_v());
            total += mvn_log_density(&p.v, &corr, p.sigma_v2)?;
        }
        if let Some(l) = &state.logical {
            total += scalar_term(&pr.sigma_w2, l.sigma_w2)
                + scalar_term(&pr.nu_r_l, l.nu_r)
                + scalar_term(&pr.nu_c_l, l.nu_c)
                + scalar_term(&pr.kappa_w, l.kappa_w);
            let corr = self.geometry(Effect::Logical).correlation(l.nu_r, l.nu_c, l.kappa_w);
            total += mvn_log_density(&l.w, &corr, l.sigma_w2)?;
        }
        if !total.is_finite() {
            return Err(Error::Evaluation(format!("log posterior is {total}")));
        }
        Ok(total)
    }

    /// Gradient of the whitened sampling density at a constrained state,
    /// with respect to the unconstrained coordinates.
    pub fn log_posterior_gradient(&self, state: &ParameterState) -> Result<Vec<f64>> {
        let u = self.to_unconstrained(state)?;
        let e = self.evaluate(&u, true)?;
        Ok(e.grad_lik
            .iter()
            .zip(&e.grad_prior)
            .map(|(l, p)| self.likelihood_weight * l + p)
            .collect())
    }

    fn check_state(&self, state: &ParameterState) -> Result<()> {
        state.validate(self.n_beta(), self.layout.n_locations)?;
        let tag = state.model()?;
        if tag != self.model {
            return Err(Error::Domain(format!("state is for model {tag}, evaluator is {}", self.model)));
        }
        Ok(())
    }

    pub fn to_unconstrained(&self, state: &ParameterState) -> Result<Vec<f64>> {
        self.check_state(state)?;
        let mut u = vec![0.0; self.layout.dim];
        let pr = &self.priors;
        u[..self.n_beta()].copy_from_slice(&state.beta);
        u[self.layout.log_sigma] = pr.sigma.unconstrain(state.sigma);
        if let (Some(s), Some(p)) = (&self.layout.physical, &state.physical) {
            u[s.log_variance] = pr.sigma_v2.unconstrain(p.sigma_v2);
            u[s.log_nu_r] = pr.nu_r_p.unconstrain(p.nu_r);
            u[s.log_nu_c] = pr.nu_c_p.unconstrain(p.nu_c);
            u[s.shape] = pr.lambda_v.unconstrain(p.lambda_v);
            let corr = self.geometry(Effect::Physical).correlation(p.nu_r, p.nu_c, p.kappa_v());
            let z = whiten(&p.v, &corr, p.sigma_v2)?;
            u[s.whitened.clone()].copy_from_slice(&z);
        }
        if let (Some(s), Some(l)) = (&self.layout.logical, &state.logical) {
            u[s.log_variance] = pr.sigma_w2.unconstrain(l.sigma_w2);
            u[s.log_nu_r] = pr.nu_r_l.unconstrain(l.nu_r);
            u[s.log_nu_c] = pr.nu_c_l.unconstrain(l.nu_c);
            u[s.shape] = pr.kappa_w.unconstrain(l.kappa_w);
            let corr = self.geometry(Effect::Logical).correlation(l.nu_r, l.nu_c, l.kappa_w);
            let z = whiten(&l.w, &corr, l.sigma_w2)?;
            u[s.whitened.clone()].copy_from_slice(&z);
        }
        Ok(u)
    }

    pub fn to_state(&self, u: &[f64]) -> Result<ParameterState> {
        if u.len() != self.layout.dim {
            return Err(Error::Domain(format!("expected {} coordinates, got {}", self.layout.dim, u.len())));
        }
        let pr = &self.priors;
        let physical = match &self.layout.physical {
            Some(s) => {
                let st = self.effect_state(Effect::Physical, u)?;
                Some(PhysicalEffect {
                    sigma_v2: pr.sigma_v2.constrain(u[s.log_variance]),
                    nu_r: st.nu_r,
                    nu_c: st.nu_c,
                    lambda_v: pr.lambda_v.constrain(u[s.shape]),
                    v: st.values.iter().copied().collect(),
                })
            }
            None => None,
        };
        let logical = match &self.layout.logical {
            Some(s) => {
                let st = self.effect_state(Effect::Logical, u)?;
                Some(LogicalEffect {
                    sigma_w2: pr.sigma_w2.constrain(u[s.log_variance]),
                    nu_r: st.nu_r,
                    nu_c: st.nu_c,
                    kappa_w: st.kappa,
                    w: st.values.iter().copied().collect(),
                })
            }
            None => None,
        };
        Ok(ParameterState {
            beta: u[..self.n_beta()].to_vec(),
            sigma: pr.sigma.constrain(u[self.layout.log_sigma]),
            physical,
            logical,
        })
    }

    /// Starting point: intercept and `sigma` from the mean and spread of the
    /// log times, other coefficients zero, hyperparameters at their prior
    /// medians and whitened effects at zero.
    pub fn initial_point(&self) -> Vec<f64> {
        let mut u = vec![0.0; self.layout.dim];
        let n = self.log_t.len().max(1) as f64;
        let mean = self.log_t.iter().sum::<f64>() / n;
        let var = self.log_t.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        let has_intercept = self.covariate_names.first().is_some_and(|c| c == "intercept");
        if has_intercept && mean.is_finite() {
            u[0] = mean;
        }
        let sd = var.sqrt();
        u[self.layout.log_sigma] = if sd.is_finite() && sd > 1e-3 { sd.ln() } else { self.priors.sigma.unconstrain(self.priors.sigma.median()) };
        for effect in [Effect::Physical, Effect::Logical] {
            if let Some(s) = self.slots(effect) {
                let pri = self.effect_priors(effect);
                u[s.log_variance] = pri[0].unconstrain(pri[0].median());
                u[s.log_nu_r] = pri[1].unconstrain(pri[1].median());
                u[s.log_nu_c] = pri[2].unconstrain(pri[2].median());
                u[s.shape] = pri[3].unconstrain(pri[3].median());
            }
        }
        u
    }

    /// Exact draw from the prior on the unconstrained scale.
    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut u = vec![0.0; self.layout.dim];
        for b in u[..self.n_beta()].iter_mut() {
            *b = self.priors.beta.sample_unconstrained(rng);
        }
        u[self.layout.log_sigma] = self.priors.sigma.sample_unconstrained(rng);
        for effect in [Effect::Physical, Effect::Logical] {
            if let Some(s) = self.slots(effect) {
                let pri = self.effect_priors(effect);
                u[s.log_variance] = pri[0].sample_unconstrained(rng);
                u[s.log_nu_r] = pri[1].sample_unconstrained(rng);
                u[s.log_nu_c] = pri[2].sample_unconstrained(rng);
                u[s.shape] = pri[3].sample_unconstrained(rng);
                for k in s.whitened.clone() {
                    u[k] = rng.sample(StandardNormal);
                }
            }
        }
        u
    }

    pub fn labels(&self) -> Vec<String> {
        self.layout.labels(&self.covariate_names)
    }

    /// Constrained draw vector in [`Self::labels`] order.
    pub fn constrain(&self, u: &[f64]) -> Result<Vec<f64>> {
        let st = self.to_state(u)?;
        let mut out = st.beta.clone();
        out.push(st.sigma);
        if let Some(p) = &st.physical {
            out.extend([p.sigma_v2, p.nu_r, p.nu_c, p.lambda_v, p.kappa_v()]);
        }
        if let Some(l) = &st.logical {
            out.extend([l.sigma_w2, l.nu_r, l.nu_c, l.kappa_w]);
        }
        if let Some(p) = &st.physical {
            out.extend_from_slice(&p.v);
        }
        if let Some(l) = &st.logical {
            out.extend_from_slice(&l.w);
        }
        Ok(out)
    }
}

impl LogDensity for SpatialAft {
    fn dim(&self) -> usize {
        self.layout.dim
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        let e = self.evaluate(x, true)?;
        let w = self.likelihood_weight;
        for ((g, l), p) in grad.iter_mut().zip(&e.grad_lik).zip(&e.grad_prior) {
            *g = w * l + p;
        }
        Ok(w * e.log_lik + e.log_prior)
    }

    fn labels(&self) -> Vec<String> {
        SpatialAft::labels(self)
    }

    fn constrain(&self, x: &[f64]) -> Vec<f64> {
        SpatialAft::constrain(self, x).unwrap_or_else(|_| vec![f64::NAN; self.layout.constrained_dim()])
    }
}

fn scalar_term(prior: &Prior, x: f64) -> f64 {
    prior.unconstrained_log_density(prior.unconstrain(x)).0
}

fn whiten(values: &[f64], corr: &DMatrix<f64>, variance: f64) -> Result<Vec<f64>> {
    let chol = cholesky_with_jitter(corr)?.factor;
    let v = DVector::from_column_slice(values) / variance.sqrt();
    let z = chol
        .solve_lower_triangular(&v)
        .ok_or_else(|| Error::Evaluation("singular Cholesky factor".into()))?;
    Ok(z.iter().copied().collect())
}

/// `ln N(values; 0, variance * corr)`.
fn mvn_log_density(values: &[f64], corr: &DMatrix<f64>, variance: f64) -> Result<f64> {
    let chol = cholesky_with_jitter(corr)?;
    let z = whiten(values, corr, variance)?;
    let m = values.len() as f64;
    Ok(-0.5 * z.iter().map(|x| x * x).sum::<f64>() - m * HALF_LN_2PI - 0.5 * m * variance.ln() - 0.5 * chol.log_det())
}

fn linear_predictor_parts(
    state: &ParameterState,
    x: &[f64],
    p: usize,
    physical_loc: &[usize],
    logical_loc: &[usize],
    m: usize,
) -> Result<Vec<f64>> {
    if state.beta.len() != p {
        return Err(Error::Domain(format!("beta has length {}, expected {p}", state.beta.len())));
    }
    for (name, len) in [
        ("v", state.physical.as_ref().map(|e| e.v.len())),
        ("w", state.logical.as_ref().map(|e| e.w.len())),
    ] {
        if let Some(len) = len {
            if len != m {
                return Err(Error::Domain(format!("{name} has length {len}, expected {m}")));
            }
        }
    }
    Ok((0..physical_loc.len())
        .map(|i| {
            let mut mu: f64 = x[i * p..(i + 1) * p].iter().zip(&state.beta).map(|(a, b)| a * b).sum();
            if let Some(e) = &state.physical {
                mu += e.v[physical_loc[i]];
            }
            if let Some(e) = &state.logical {
                mu += e.w[logical_loc[i]];
            }
            mu
        })
        .collect())
}

/// `mu_i = x_i' beta + v[j(i)] + w[l(i)]` for every unit.
/// Inverse of a non-singular lower-triangular matrix by column-wise forward
/// substitution.
fn lower_triangular_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let m = l.nrows();
    let mut x = DMatrix::<f64>::zeros(m, m);
    let ls = l.as_slice();
    for j in 0..m {
        let col = &mut x.as_mut_slice()[j * m..(j + 1) * m];
        col[j] = 1.0;
        for k in j..m {
            let xk = col[k] / ls[k * m + k];
            col[k] = xk;
            if xk != 0.0 {
                for (xi, lik) in col[k + 1..].iter_mut().zip(&ls[k * m + k + 1..(k + 1) * m]) {
                    *xi -= lik * xk;
                }
            }
        }
    }
    x
}

/// `L^-T Phi(a z') L^-1` given `linv = L^-1`. Column `j` of
/// `Phi(a z') L^-1` is `a_i` times a running sum of `linv[k, j] z_k`, so only
/// the final product with `L^-T` costs `m^3 / 3`.
fn cholesky_adjoint_weights(linv: &DMatrix<f64>, a: &[f64], z: &[f64]) -> DMatrix<f64> {
    let m = a.len();
    let li = linv.as_slice();
    let mut b = vec![0.0; m * m];
    for j in 0..m {
        let mut run = 0.0;
        for i in j..m {
            let c = li[j * m + i] * z[i];
            b[j * m + i] = a[i] * (run + 0.5 * c);
            run += c;
        }
    }
    let mut w = DMatrix::<f64>::zeros(m, m);
    let ws = w.as_mut_slice();
    for j in 0..m {
        for i in 0..m {
            let s = i.max(j);
            ws[j * m + i] = dot(&li[i * m + s..(i + 1) * m], &b[j * m + s..(j + 1) * m]);
        }
    }
    w
}

/// Dot product with independent accumulators so the loop vectorizes.
fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (xc, xr) = x.split_at(x.len() - x.len() % 4);
    let (yc, yr) = y.split_at(xc.len());
    for (p, q) in xc.chunks_exact(4).zip(yc.chunks_exact(4)) {
        for k in 0..4 {
            acc[k] += p[k] * q[k];
        }
    }
    let tail: f64 = xr.iter().zip(yr).map(|(p, q)| p * q).sum();
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

pub fn linear_predictor(state: &ParameterState, data: &SurvivalDataset, map: &LocationMap) -> Result<Vec<f64>> {
    if data.n_locations() != map.len() {
        return Err(Error::Domain("dataset and grid disagree on the number of locations".into()));
    }
    let logical: Vec<usize> = data.locations().iter().map(|&j| map.logical_index(j)).collect();
    linear_predictor_parts(state, data.covariates(), data.n_covariates(), data.locations(), &logical, map.len())
}

/// Centered log posterior at a constrained state; see
/// [`SpatialAft::log_posterior`].
pub fn log_posterior(
    state: &ParameterState,
    data: &SurvivalDataset,
    priors: &PriorSpec,
    map: &LocationMap,
    family: Family,
) -> Result<f64> {
    SpatialAft::new(data, map, state.model()?, family, priors.clone())?.log_posterior(state)
}

/// Gradient of the whitened sampling density; see
/// [`SpatialAft::log_posterior_gradient`].
pub fn log_posterior_gradient(
    state: &ParameterState,
    data: &SurvivalDataset,
    priors: &PriorSpec,
    map: &LocationMap,
    family: Family,
) -> Result<Vec<f64>> {
    SpatialAft::new(data, map, state.model()?, family, priors.clone())?.log_posterior_gradient(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::family::unit_loglik;
    use crate::topology::{build_location_map, GridSpec, Relabeling};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid_map(r: usize, c: usize) -> LocationMap {
        build_location_map(GridSpec::new(r, c).unwrap(), Relabeling::Folded).unwrap()
    }

    fn toy_data(n: usize, m: usize, seed: u64) -> SurvivalDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut times = Vec::new();
        let mut events = Vec::new();
        let mut locs = Vec::new();
        for i in 0..n {
            let xi: f64 = rng.sample(StandardNormal);
            x.extend([1.0, xi]);
            let y: f64 = 1.0 + 0.5 * xi + 0.6 * rng.sample::<f64, _>(StandardNormal);
            times.push(y.exp());
            events.push(rng.random::<f64>() < 0.6);
            locs.push(i % m);
        }
        SurvivalDataset::new(
            (0..n).map(|i| format!("u{i}")).collect(),
            times,
            events,
            x,
            vec!["intercept".into(), "x".into()],
            locs,
            m,
        )
        .unwrap()
    }

    fn random_point(model: &SpatialAft, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut u = model.initial_point();
        for x in u.iter_mut() {
            *x += 0.5 * rng.sample::<f64, _>(StandardNormal);
        }
        u
    }

    fn fd_check(model: &SpatialAft, u: &[f64]) {
        let mut grad = vec![0.0; u.len()];
        model.log_density_and_grad(u, &mut grad).unwrap();
        let h = 1e-5;
        for k in 0..u.len() {
            let mut up = u.to_vec();
            let mut dn = u.to_vec();
            up[k] += h;
            dn[k] -= h;
            let fd = (model.log_density(&up).unwrap() - model.log_density(&dn).unwrap()) / (2.0 * h);
            let err = (grad[k] - fd).abs() / fd.abs().max(1.0);
            assert!(err < 1e-5, "coordinate {k}: analytic {} vs fd {fd}", grad[k]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let map = grid_map(2, 3);
        let data = toy_data(18, 6, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for family in [Family::Nor, Family::Sev] {
            for tag in [ModelTag::M0, ModelTag::M1, ModelTag::M2] {
                let model = SpatialAft::new(&data, &map, tag, family, PriorSpec::analysis()).unwrap();
                for _ in 0..3 {
                    let u = random_point(&model, &mut rng);
                    fd_check(&model, &u);
                }
            }
        }
    }

    #[test]
    fn tempered_gradient_matches_finite_differences() {
        let map = grid_map(3, 3);
        let data = toy_data(27, 9, 5);
        let model = SpatialAft::new(&data, &map, ModelTag::M2, Family::Sev, PriorSpec::simulation())
            .unwrap()
            .with_likelihood_weight(0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let u = random_point(&model, &mut rng);
        fd_check(&model, &u);
    }

    #[test]
    fn beta_gradient_is_score_times_covariate() {
        let data = SurvivalDataset::new(
            vec!["a".into()],
            vec![2.0],
            vec![true],
            vec![1.0, 0.7],
            vec!["intercept".into(), "x".into()],
            vec![0],
            1,
        )
        .unwrap();
        let map = grid_map(1, 1);
        let model = SpatialAft::new(&data, &map, ModelTag::M0, Family::Nor, PriorSpec::analysis()).unwrap();
        let u = vec![0.3, -0.2, 0.1f64];
        let e = model.evaluate(&u, true).unwrap();
        let sigma = 0.1f64.exp();
        let z = (2f64.ln() - (0.3 - 0.2 * 0.7)) / sigma;
        let score = z / sigma;
        assert_relative_eq!(e.grad_lik[0], score, max_relative = 1e-12);
        assert_relative_eq!(e.grad_lik[1], score * 0.7, max_relative = 1e-12);
    }

    #[test]
    fn whitened_density_differs_from_centered_by_jacobian() {
        let map = grid_map(2, 3);
        let data = toy_data(12, 6, 3);
        let model = SpatialAft::new(&data, &map, ModelTag::M2, Family::Nor, PriorSpec::analysis()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = random_point(&model, &mut rng);
        let state = model.to_state(&u).unwrap();
        let centered = model.log_posterior(&state).unwrap();
        let whitened = model.log_density(&u).unwrap();
        let p = state.physical.as_ref().unwrap();
        let l = state.logical.as_ref().unwrap();
        let lv = cholesky_with_jitter(&model.geometry(Effect::Physical).correlation(p.nu_r, p.nu_c, p.kappa_v())).unwrap();
        let lw = cholesky_with_jitter(&model.geometry(Effect::Logical).correlation(l.nu_r, l.nu_c, l.kappa_w)).unwrap();
        let m = 6.0;
        let jac = 0.5 * m * p.sigma_v2.ln() + 0.5 * lv.log_det() + 0.5 * m * l.sigma_w2.ln() + 0.5 * lw.log_det();
        assert_relative_eq!(whitened, centered + jac, max_relative = 1e-10);
        let back = model.to_unconstrained(&state).unwrap();
        for (a, b) in back.iter().zip(&u) {
            assert_relative_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn zero_effects_assemble_from_unit_terms() {
        let map = grid_map(2, 2);
        let data = toy_data(4, 4, 9);
        let state = ParameterState {
            beta: vec![0.4, -0.1],
            sigma: 0.8,
            physical: Some(PhysicalEffect {
                sigma_v2: 0.5,
                nu_r: 1.2,
                nu_c: 0.9,
                lambda_v: 0.7,
                v: vec![0.0; 4],
            }),
            logical: Some(LogicalEffect {
                sigma_w2: 0.3,
                nu_r: 1.1,
                nu_c: 1.4,
                kappa_w: 0.6,
                w: vec![0.0; 4],
            }),
        };
        let priors = PriorSpec::analysis();
        let lp = log_posterior(&state, &data, &priors, &map, Family::Nor).unwrap();
        let mut expect = 0.0;
        for i in 0..4 {
            let mu = 0.4 - 0.1 * data.x(i)[1];
            expect += unit_loglik(data.times()[i], data.events()[i], mu, 0.8, Family::Nor).unwrap();
        }
        expect += priors.beta.log_density(0.4) + priors.beta.log_density(-0.1);
        let with_jac = |p: &Prior, x: f64| p.log_density(x) + x.ln();
        expect += with_jac(&priors.sigma, 0.8);
        expect += with_jac(&priors.sigma_v2, 0.5) + with_jac(&priors.nu_r_p, 1.2) + with_jac(&priors.nu_c_p, 0.9);
        expect += with_jac(&priors.lambda_v, 0.7);
        expect += with_jac(&priors.sigma_w2, 0.3) + with_jac(&priors.nu_r_l, 1.1) + with_jac(&priors.nu_c_l, 1.4);
        expect += priors.kappa_w.log_density(0.6) + (0.6f64 * 0.4).ln();
        // MVN normalizers at the mean: -m/2 ln(2 pi) - 1/2 ln det(s2 R)
        let g = GridSpec::new(2, 2).unwrap();
        let rv = crate::kernels::build_correlation_matrix(
            &map,
            &crate::kernels::KernelParams::new(1.2, 0.9, kappa_from_lambda_unchecked(0.7), 0.5, Topology::EuclideanGrid).unwrap(),
        )
        .unwrap()
        .matrix;
        let rw = crate::kernels::build_torus_correlation_kron(
            &map,
            &crate::kernels::KernelParams::new(1.1, 1.4, 0.6, 0.3, Topology::Torus).unwrap(),
        )
        .unwrap()
        .matrix;
        assert_eq!(g.n_locations(), 4);
        for (r, s2) in [(rv, 0.5f64), (rw, 0.3f64)] {
            expect += -2.0 * (2.0 * std::f64::consts::PI).ln() - 0.5 * (r.determinant() * s2.powi(4)).ln();
        }
        assert_relative_eq!(lp, expect, max_relative = 1e-12);
    }

    #[test]
    fn single_location_reduces_to_univariate_normals() {
        let map = grid_map(1, 1);
        let data = toy_data(3, 1, 11);
        let state = ParameterState {
            beta: vec![0.2, 0.1],
            sigma: 1.3,
            physical: Some(PhysicalEffect {
                sigma_v2: 0.4,
                nu_r: 1.0,
                nu_c: 1.0,
                lambda_v: 1.0,
                v: vec![0.3],
            }),
            logical: Some(LogicalEffect {
                sigma_w2: 0.2,
                nu_r: 1.0,
                nu_c: 1.0,
                kappa_w: 0.5,
                w: vec![-0.1],
            }),
        };
        let model = SpatialAft::new(&data, &map, ModelTag::M2, Family::Sev, PriorSpec::analysis()).unwrap();
        let with = model.log_posterior(&state).unwrap();
        let mut no_effects = state.clone();
        no_effects.physical.as_mut().unwrap().v = vec![0.0];
        no_effects.logical.as_mut().unwrap().w = vec![0.0];
        let base = model.log_posterior(&no_effects).unwrap();
        // likelihood changes plus the change in two univariate normal kernels
        let mu_shift = 0.3 - 0.1;
        let mut dlik = 0.0;
        for i in 0..3 {
            let mu = 0.2 + 0.1 * data.x(i)[1];
            dlik += unit_loglik(data.times()[i], data.events()[i], mu + mu_shift, 1.3, Family::Sev).unwrap()
                - unit_loglik(data.times()[i], data.events()[i], mu, 1.3, Family::Sev).unwrap();
        }
        let dprior = -0.5 * 0.09 / 0.4 - 0.5 * 0.01 / 0.2;
        assert_relative_eq!(with - base, dlik + dprior, max_relative = 1e-12);
    }

    #[test]
    fn linear_predictor_examples() {
        let map = grid_map(1, 1);
        let data = SurvivalDataset::new(
            vec!["a".into()],
            vec![1.0],
            vec![true],
            vec![1.0],
            vec!["intercept".into()],
            vec![0],
            1,
        )
        .unwrap();
        let state = ParameterState {
            beta: vec![2.002],
            sigma: 1.0,
            physical: Some(PhysicalEffect {
                sigma_v2: 1.0,
                nu_r: 1.0,
                nu_c: 1.0,
                lambda_v: 1.0,
                v: vec![0.1],
            }),
            logical: Some(LogicalEffect {
                sigma_w2: 1.0,
                nu_r: 1.0,
                nu_c: 1.0,
                kappa_w: 1.0,
                w: vec![-0.05],
            }),
        };
        assert_relative_eq!(linear_predictor(&state, &data, &map).unwrap()[0], 2.052, epsilon = 1e-12);
    }

    #[test]
    fn whitened_gradient_of_effects_vanishes_without_data_at_zero() {
        let map = grid_map(2, 2);
        let empty = SurvivalDataset::new(vec![], vec![], vec![], vec![], vec!["intercept".into()], vec![], 4).unwrap();
        let model = SpatialAft::new(&empty, &map, ModelTag::M2, Family::Nor, PriorSpec::analysis()).unwrap();
        let u = model.initial_point();
        let e = model.evaluate(&u, true).unwrap();
        for s in [model.layout.physical.as_ref().unwrap(), model.layout.logical.as_ref().unwrap()] {
            for k in s.whitened.clone() {
                assert_eq!(e.grad_lik[k] + e.grad_prior[k], 0.0);
            }
        }
    }

    #[test]
    fn appending_a_unit_adds_its_loglik() {
        let map = grid_map(2, 2);
        let data = toy_data(9, 4, 13);
        let head = data.select(&(0..8).collect::<Vec<_>>());
        let model_full = SpatialAft::new(&data, &map, ModelTag::M1, Family::Nor, PriorSpec::analysis()).unwrap();
        let model_head = SpatialAft::new(&head, &map, ModelTag::M1, Family::Nor, PriorSpec::analysis()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let u = random_point(&model_full, &mut rng);
        let state = model_full.to_state(&u).unwrap();
        let mu = model_full.linear_predictor(&state).unwrap()[8];
        let unit = unit_loglik(data.times()[8], data.events()[8], mu, state.sigma, Family::Nor).unwrap();
        let diff = model_full.log_posterior(&state).unwrap() - model_head.log_posterior(&state).unwrap();
        assert_relative_eq!(diff, unit, max_relative = 1e-10);
    }
}
