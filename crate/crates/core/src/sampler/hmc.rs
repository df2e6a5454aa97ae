//! Static-trajectory HMC with a uniformly jittered number of leapfrog
//! steps, diagonal metric and dual-averaging step size adaptation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adapt::{DualAveraging, DualAveragingConfig, RunningVariance, WarmupSchedule};
use super::draws::{ChainStats, PosteriorDraws};
use super::LogDensity;
use crate::error::{Error, Result};

/// Energy error above which a transition is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmcConfig {
    pub n_warmup: usize,
    pub n_draws: usize,
    pub target_accept: f64,
    pub max_leapfrog_steps: usize,
    pub seed: u64,
    pub n_chains: usize,
    pub dual_averaging: DualAveragingConfig,
    pub adapt_metric: bool,
    /// Chains after the first start from the initial point perturbed
    /// uniformly within this radius on every coordinate.
    pub init_radius: f64,
    /// Keep every `thin`-th post-warmup transition.
    pub thin: usize,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            n_warmup: 4000,
            n_draws: 4000,
            target_accept: 0.8,
            max_leapfrog_steps: 64,
            seed: 0,
            n_chains: 1,
            dual_averaging: DualAveragingConfig::default(),
            adapt_metric: true,
            init_radius: 0.5,
            thin: 1,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_draws == 0 || self.n_chains == 0 || self.max_leapfrog_steps == 0 || self.thin == 0 {
            return Err(Error::Domain(
                "draws, chains, thinning and max leapfrog steps must be positive".into(),
            ));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Domain(format!(
                "target acceptance must lie in (0, 1), got {}",
                self.target_accept
            )));
        }
        if !(self.init_radius >= 0.0) {
            return Err(Error::Domain("init radius must be non-negative".into()));
        }
        Ok(())
    }
}

/// Tuned step size and inverse metric, reusable to warm-start a related
/// target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adaptation {
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
}

/// Output of one chain in unconstrained coordinates.
#[derive(Debug, Clone)]
pub struct ChainResult {
    /// Row-major `n_draws x dim`.
    pub draws: Vec<f64>,
    pub dim: usize,
    pub stats: ChainStats,
    pub adaptation: Adaptation,
    pub last: Vec<f64>,
}

impl ChainResult {
    pub fn n_draws(&self) -> usize {
        self.draws.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn draw(&self, i: usize) -> &[f64] {
        &self.draws[i * self.dim..(i + 1) * self.dim]
    }
}

/// Phase-space point with cached density and gradient.
#[derive(Debug, Clone)]
struct State {
    q: Vec<f64>,
    logp: f64,
    grad: Vec<f64>,
}

fn kinetic(p: &[f64], inv_metric: &[f64]) -> f64 {
    0.5 * p.iter().zip(inv_metric).map(|(pi, m)| pi * pi * m).sum::<f64>()
}

/// `n_steps` leapfrog steps of size `eps` in place. `grad` must hold the
/// gradient at `q` on entry and holds the gradient at the final `q` on exit.
/// Returns the log density at the final position.
pub fn leapfrog<T: LogDensity + ?Sized>(
    target: &T,
    q: &mut [f64],
    p: &mut [f64],
    grad: &mut [f64],
    eps: f64,
    inv_metric: &[f64],
    n_steps: usize,
) -> Result<f64> {
    let mut logp = f64::NAN;
    for _ in 0..n_steps {
        for (pi, g) in p.iter_mut().zip(grad.iter()) {
            *pi += 0.5 * eps * g;
        }
        for ((qi, pi), m) in q.iter_mut().zip(p.iter()).zip(inv_metric) {
            *qi += eps * m * pi;
        }
        logp = target.log_density_and_grad(q, grad)?;
        if !logp.is_finite() {
            return Err(Error::Evaluation(format!("log density is {logp}")));
        }
        for (pi, g) in p.iter_mut().zip(grad.iter()) {
            *pi += 0.5 * eps * g;
        }
    }
    Ok(logp)
}

struct Transition {
    accept_stat: f64,
    divergent: bool,
    n_steps: usize,
}

fn transition<T: LogDensity + ?Sized>(
    target: &T,
    state: &mut State,
    eps: f64,
    inv_metric: &[f64],
    max_steps: usize,
    rng: &mut ChaCha8Rng,
) -> Transition {
    let dim = state.q.len();
    let mut p: Vec<f64> = inv_metric
        .iter()
        .map(|m| rng.sample::<f64, _>(StandardNormal) / m.sqrt())
        .collect();
    debug_assert_eq!(p.len(), dim);
    let h0 = -state.logp + kinetic(&p, inv_metric);
    let n_steps = rng.random_range(1..=max_steps);
    let mut q = state.q.clone();
    let mut grad = state.grad.clone();
    let result = leapfrog(target, &mut q, &mut p, &mut grad, eps, inv_metric, n_steps);
    let u: f64 = rng.random();
    let logp = match result {
        Ok(lp) => lp,
        Err(_) => {
            return Transition {
                accept_stat: 0.0,
                divergent: true,
                n_steps,
            }
        }
    };
    let h1 = -logp + kinetic(&p, inv_metric);
    let delta = h1 - h0;
    if !delta.is_finite() || delta > DIVERGENCE_THRESHOLD {
        return Transition {
            accept_stat: 0.0,
            divergent: true,
            n_steps,
        };
    }
    let accept_stat = (-delta).exp().min(1.0);
    if u < accept_stat {
        state.q = q;
        state.logp = logp;
        state.grad = grad;
    }
    Transition {
        accept_stat,
        divergent: false,
        n_steps,
    }
}

/// Step size at which a single leapfrog step has acceptance near one half.
fn initial_step_size<T: LogDensity + ?Sized>(
    target: &T,
    state: &State,
    start: f64,
    inv_metric: &[f64],
    rng: &mut ChaCha8Rng,
) -> f64 {
    let p0: Vec<f64> = inv_metric
        .iter()
        .map(|m| rng.sample::<f64, _>(StandardNormal) / m.sqrt())
        .collect();
    let h0 = -state.logp + kinetic(&p0, inv_metric);
    let log_accept = |eps: f64| {
        let mut q = state.q.clone();
        let mut p = p0.clone();
        let mut g = state.grad.clone();
        match leapfrog(target, &mut q, &mut p, &mut g, eps, inv_metric, 1) {
            Ok(lp) => {
                let d = h0 - (-lp + kinetic(&p, inv_metric));
                if d.is_finite() {
                    d
                } else {
                    f64::NEG_INFINITY
                }
            }
            Err(_) => f64::NEG_INFINITY,
        }
    };
    let mut eps = start;
    let direction = if log_accept(eps) > -std::f64::consts::LN_2 { 1.0 } else { -1.0 };
    for _ in 0..100 {
        let la = log_accept(eps);
        if direction * la <= -direction * std::f64::consts::LN_2 {
            break;
        }
        let next = eps * 2f64.powf(direction);
        if !(1e-10..=1e5).contains(&next) {
            break;
        }
        eps = next;
    }
    eps
}

fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

fn start_state<T: LogDensity + ?Sized>(target: &T, q: Vec<f64>) -> Result<State> {
    let mut grad = vec![0.0; q.len()];
    let logp = target.log_density_and_grad(&q, &mut grad)?;
    if !logp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Initialization(format!("log density {logp} at the initial point")));
    }
    Ok(State { q, logp, grad })
}

/// Run one chain: warmup adaptation followed by `config.n_draws` retained
/// transitions. `warm` seeds the step size and metric; with `n_warmup == 0`
/// they are used as is.
pub fn run_chain<T: LogDensity + ?Sized>(
    target: &T,
    init: &[f64],
    config: &HmcConfig,
    chain: usize,
    warm: Option<&Adaptation>,
) -> Result<ChainResult> {
    config.validate()?;
    let dim = target.dim();
    if init.len() != dim {
        return Err(Error::Initialization(format!("initial point has {} coordinates, target has {dim}", init.len())));
    }
    let mut rng = chain_rng(config.seed, chain);

    let base = start_state(target, init.to_vec())?;
    let mut state = base.clone();
    if chain > 0 && config.init_radius > 0.0 {
        for _ in 0..100 {
            let q: Vec<f64> = init
                .iter()
                .map(|x| x + rng.random_range(-config.init_radius..=config.init_radius))
                .collect();
            if let Ok(s) = start_state(target, q) {
                state = s;
                break;
            }
        }
    }

    let mut inv_metric = warm.map(|w| w.inv_metric.clone()).unwrap_or_else(|| vec![1.0; dim]);
    if inv_metric.len() != dim {
        inv_metric = vec![1.0; dim];
    }
    let mut step = match warm {
        Some(w) if w.step_size.is_finite() && w.step_size > 0.0 => w.step_size,
        _ => initial_step_size(target, &state, 1.0, &inv_metric, &mut rng),
    };

    let schedule = WarmupSchedule::new(config.n_warmup, config.adapt_metric);
    let mut da = DualAveraging::new(step, config.target_accept, config.dual_averaging);
    let mut window = RunningVariance::new(dim);
    let mut warmup_divergent = 0;
    for i in 0..config.n_warmup {
        let t = transition(target, &mut state, da.current(), &inv_metric, config.max_leapfrog_steps, &mut rng);
        warmup_divergent += usize::from(t.divergent);
        da.update(t.accept_stat);
        if schedule.collects_metric(i) {
            window.add(&state.q);
        }
        if schedule.ends_window(i) {
            inv_metric = window.regularized();
            window = RunningVariance::new(dim);
            let restart = initial_step_size(target, &state, da.current(), &inv_metric, &mut rng);
            da = DualAveraging::new(restart, config.target_accept, config.dual_averaging);
        }
    }
    if config.n_warmup > 0 {
        step = da.averaged();
    }

    let mut draws = Vec::with_capacity(config.n_draws * dim);
    let mut n_divergent = 0;
    let mut accept_sum = 0.0;
    let mut n_leapfrog = 0;
    let n_transitions = config.n_draws * config.thin;
    for k in 0..n_transitions {
        let t = transition(target, &mut state, step, &inv_metric, config.max_leapfrog_steps, &mut rng);
        n_divergent += usize::from(t.divergent);
        accept_sum += t.accept_stat;
        n_leapfrog += t.n_steps;
        if (k + 1) % config.thin == 0 {
            draws.extend_from_slice(&state.q);
        }
    }
    Ok(ChainResult {
        draws,
        dim,
        stats: ChainStats {
            chain,
            step_size: step,
            n_divergent,
            warmup_divergent,
            mean_accept: accept_sum / n_transitions as f64,
            n_leapfrog,
        },
        adaptation: Adaptation {
            step_size: step,
            inv_metric,
        },
        last: state.q,
    })
}

/// Run `config.n_chains` chains in parallel on the current rayon pool.
/// Results are independent of the pool size.
pub fn run_chains<T: LogDensity + ?Sized>(
    target: &T,
    init: &[f64],
    config: &HmcConfig,
    warm: Option<&Adaptation>,
) -> Result<Vec<ChainResult>> {
    config.validate()?;
    (0..config.n_chains)
        .into_par_iter()
        .map(|c| run_chain(target, init, config, c, warm))
        .collect()
}

/// Sample `target` and return constrained draws from all chains.
pub fn run_hmc<T: LogDensity + ?Sized>(target: &T, init: &[f64], config: &HmcConfig) -> Result<PosteriorDraws> {
    let chains = run_chains(target, init, config, None)?;
    Ok(PosteriorDraws::from_chains(target, &chains))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Gaussian {
        prec: [[f64; 2]; 2],
    }

    impl Gaussian {
        fn correlated(rho: f64) -> Self {
            let det = 1.0 - rho * rho;
            Self {
                prec: [[1.0 / det, -rho / det], [-rho / det, 1.0 / det]],
            }
        }
    }

    impl LogDensity for Gaussian {
        fn dim(&self) -> usize {
            2
        }
        fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
            let g0 = -(self.prec[0][0] * x[0] + self.prec[0][1] * x[1]);
            let g1 = -(self.prec[1][0] * x[0] + self.prec[1][1] * x[1]);
            grad[0] = g0;
            grad[1] = g1;
            Ok(0.5 * (x[0] * g0 + x[1] * g1))
        }
    }

    #[test]
    fn leapfrog_is_reversible() {
        let target = Gaussian::correlated(0.7);
        let mut q = vec![0.3, -1.2];
        let mut p = vec![0.8, 0.1];
        let mut g = vec![0.0; 2];
        target.log_density_and_grad(&q, &mut g).unwrap();
        let (q0, p0) = (q.clone(), p.clone());
        let m = [1.0, 1.0];
        leapfrog(&target, &mut q, &mut p, &mut g, 0.1, &m, 25).unwrap();
        p.iter_mut().for_each(|x| *x = -*x);
        leapfrog(&target, &mut q, &mut p, &mut g, 0.1, &m, 25).unwrap();
        p.iter_mut().for_each(|x| *x = -*x);
        for (a, b) in q.iter().zip(&q0).chain(p.iter().zip(&p0)) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn energy_error_shrinks_with_step_size() {
        let target = Gaussian::correlated(0.9);
        let m = [1.0, 1.0];
        let errors: Vec<f64> = [0.2, 0.1, 0.05]
            .iter()
            .map(|&eps| {
                let mut q = vec![1.0, 0.5];
                let mut p = vec![-0.4, 0.9];
                let mut g = vec![0.0; 2];
                let lp0 = target.log_density_and_grad(&q, &mut g).unwrap();
                let h0 = -lp0 + kinetic(&p, &m);
                let steps = (1.0 / eps) as usize;
                let lp = leapfrog(&target, &mut q, &mut p, &mut g, eps, &m, steps).unwrap();
                (-lp + kinetic(&p, &m) - h0).abs()
            })
            .collect();
        assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
    }

    #[test]
    fn deterministic_given_seed() {
        let target = Gaussian::correlated(0.5);
        let cfg = HmcConfig {
            n_warmup: 200,
            n_draws: 200,
            n_chains: 2,
            seed: 9,
            ..HmcConfig::default()
        };
        let a = run_hmc(&target, &[0.0, 0.0], &cfg).unwrap();
        let b = run_hmc(&target, &[0.0, 0.0], &cfg).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn bad_start_is_an_initialization_error() {
        struct Nowhere;
        impl LogDensity for Nowhere {
            fn dim(&self) -> usize {
                1
            }
            fn log_density_and_grad(&self, _: &[f64], _: &mut [f64]) -> Result<f64> {
                Ok(f64::NEG_INFINITY)
            }
        }
        let err = run_hmc(&Nowhere, &[0.0], &HmcConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Initialization(_)));
    }
}
