//! Warmup adaptation: dual averaging of the step size and a regularized
//! diagonal metric estimated over expanding windows.

use serde::{Deserialize, Serialize};

/// Dual-averaging constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualAveragingConfig {
    pub gamma: f64,
    pub t0: f64,
    pub kappa: f64,
}

impl Default for DualAveragingConfig {
    fn default() -> Self {
        Self {
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DualAveraging {
    cfg: DualAveragingConfig,
    target: f64,
    mu: f64,
    h_bar: f64,
    log_step: f64,
    log_step_bar: f64,
    t: f64,
}

impl DualAveraging {
    pub fn new(initial_step: f64, target: f64, cfg: DualAveragingConfig) -> Self {
        Self {
            cfg,
            target,
            mu: (10.0 * initial_step).ln(),
            h_bar: 0.0,
            log_step: initial_step.ln(),
            log_step_bar: 0.0,
            t: 0.0,
        }
    }

    pub fn update(&mut self, accept_stat: f64) {
        let accept = if accept_stat.is_finite() { accept_stat.clamp(0.0, 1.0) } else { 0.0 };
        self.t += 1.0;
        let eta = 1.0 / (self.t + self.cfg.t0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept);
        self.log_step = self.mu - self.t.sqrt() / self.cfg.gamma * self.h_bar;
        let w = self.t.powf(-self.cfg.kappa);
        self.log_step_bar = w * self.log_step + (1.0 - w) * self.log_step_bar;
    }

    /// Step size to use for the next transition.
    pub fn current(&self) -> f64 {
        self.log_step.exp()
    }

    /// Averaged step size, used once adaptation ends.
    pub fn averaged(&self) -> f64 {
        if self.t == 0.0 {
            self.current()
        } else {
            self.log_step_bar.exp()
        }
    }
}

/// Welford accumulator of per-coordinate variances.
#[derive(Debug, Clone)]
pub struct RunningVariance {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningVariance {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn add(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &xi) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = xi - *m;
            *m += d / n;
            *s += d * (xi - *m);
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    /// Variance shrunk towards `1e-3`, the usual regularization of a
    /// diagonal metric estimate.
    pub fn regularized(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|s| {
                let var = if self.n > 1 { s / (n - 1.0) } else { 1.0 };
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

/// Warmup phase boundaries: step size only up to `slow_start`, metric
/// windows `[slow_start, mid)` and `[mid, slow_end)`, then step size only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WarmupSchedule {
    pub slow_start: usize,
    pub mid: usize,
    pub slow_end: usize,
    pub total: usize,
}

impl WarmupSchedule {
    pub fn new(total: usize, adapt_metric: bool) -> Self {
        if !adapt_metric || total < 40 {
            return Self {
                slow_start: total,
                mid: total,
                slow_end: total,
                total,
            };
        }
        Self {
            slow_start: total / 4,
            mid: total / 2,
            slow_end: 3 * total / 4,
            total,
        }
    }

    pub fn collects_metric(&self, i: usize) -> bool {
        i >= self.slow_start && i < self.slow_end
    }

    /// True after iteration `i` completes a metric window.
    pub fn ends_window(&self, i: usize) -> bool {
        self.slow_start < self.slow_end && (i + 1 == self.mid || i + 1 == self.slow_end)
    }
}
