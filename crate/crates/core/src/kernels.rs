//! Powered-exponential correlation on the physical grid and on the logical
//! torus.
//!
//! Both kernels share the separable form
//! `exp(-(d_r / nu_r)^kappa - (d_c / nu_c)^kappa)`; they differ only in the
//! per-coordinate distance. On the grid the distance is `|a - b|` and any
//! `0 < kappa <= 2` is valid. On the torus the distance wraps around the
//! period, and positive definiteness only holds for `0 < kappa <= 1`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{GridSpec, LocationMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    EuclideanGrid,
    Torus,
}

impl Topology {
    /// Largest shape parameter for which the kernel is positive definite.
    pub fn max_kappa(self) -> f64 {
        match self {
            Topology::EuclideanGrid => 2.0,
            Topology::Torus => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    nu_r: f64,
    nu_c: f64,
    kappa: f64,
    variance: f64,
    topology: Topology,
}

impl KernelParams {
    pub fn new(nu_r: f64, nu_c: f64, kappa: f64, variance: f64, topology: Topology) -> Result<Self> {
        let positive = |name: &str, x: f64| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(Error::KernelValidity(format!("{name} must be positive, got {x}")))
            }
        };
        positive("nu_r", nu_r)?;
        positive("nu_c", nu_c)?;
        positive("variance", variance)?;
        if !(kappa > 0.0 && kappa <= topology.max_kappa()) {
            return Err(Error::KernelValidity(format!(
                "kappa = {kappa} outside (0, {}] for {topology:?}",
                topology.max_kappa()
            )));
        }
        Ok(Self {
            nu_r,
            nu_c,
            kappa,
            variance,
            topology,
        })
    }

    /// Unit-variance parameters, the usual case when only `R` is wanted.
    pub fn correlation_only(nu_r: f64, nu_c: f64, kappa: f64, topology: Topology) -> Result<Self> {
        Self::new(nu_r, nu_c, kappa, 1.0, topology)
    }

    pub fn nu_r(&self) -> f64 {
        self.nu_r
    }
    pub fn nu_c(&self) -> f64 {
        self.nu_c
    }
    pub fn kappa(&self) -> f64 {
        self.kappa
    }
    pub fn variance(&self) -> f64 {
        self.variance
    }
    pub fn topology(&self) -> Topology {
        self.topology
    }
}

/// Circular distance between 1-based positions on a ring of `n` points.
pub fn torus_distance(a: usize, b: usize, n: usize) -> Result<usize> {
    if a == 0 || b == 0 || a > n || b > n {
        return Err(Error::Domain(format!("positions {a}, {b} outside 1..={n}")));
    }
    let d = a.abs_diff(b);
    Ok(d.min(n - d))
}

fn axis_distance(a: usize, b: usize, n: usize, topology: Topology) -> Result<usize> {
    match topology {
        Topology::EuclideanGrid => {
            if a == 0 || b == 0 || a > n || b > n {
                return Err(Error::Domain(format!("positions {a}, {b} outside 1..={n}")));
            }
            Ok(a.abs_diff(b))
        }
        Topology::Torus => torus_distance(a, b, n),
    }
}

#[inline]
fn powered(d: f64, nu: f64, kappa: f64) -> f64 {
    if d == 0.0 {
        0.0
    } else {
        (d / nu).powf(kappa)
    }
}

/// Correlation between two 1-based `(row, col)` coordinates on `grid`.
pub fn correlation(
    s: (usize, usize),
    t: (usize, usize),
    params: &KernelParams,
    grid: GridSpec,
) -> Result<f64> {
    let dr = axis_distance(s.0, t.0, grid.n_rows(), params.topology)? as f64;
    let dc = axis_distance(s.1, t.1, grid.n_cols(), params.topology)? as f64;
    Ok((-powered(dr, params.nu_r, params.kappa) - powered(dc, params.nu_c, params.kappa)).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub matrix: DMatrix<f64>,
    pub topology: Topology,
    pub params: KernelParams,
}

impl CorrelationMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `variance * R`.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.matrix * self.params.variance
    }
}

/// Dense `m x m` correlation matrix. Euclidean kernels are indexed by
/// physical location index, torus kernels by logical location index.
pub fn build_correlation_matrix(map: &LocationMap, params: &KernelParams) -> Result<CorrelationMatrix> {
    let coords = match params.topology {
        Topology::EuclideanGrid => map.physical_coords(),
        Topology::Torus => map.logical_coords(),
    };
    let grid = map.grid();
    let m = coords.len();
    let mut r = DMatrix::<f64>::identity(m, m);
    for s in 0..m {
        for t in (s + 1)..m {
            let rho = correlation(coords[s], coords[t], params, grid)?;
            r[(s, t)] = rho;
            r[(t, s)] = rho;
        }
    }
    Ok(CorrelationMatrix {
        matrix: r,
        topology: params.topology,
        params: *params,
    })
}

/// Powered-exponential kernel on `n` equally spaced points of a circle. No
/// validity check on `kappa` so the non-PD regime can be explored.
pub fn circle_correlation_matrix(n: usize, nu: f64, kappa: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |s, t| {
        let d = s.abs_diff(t);
        let d = d.min(n - d) as f64;
        (-powered(d, nu, kappa)).exp()
    })
}

pub fn kronecker(b: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    DMatrix::from_fn(ar * br, ac * bc, |i, j| b[(i / ar, j / ac)] * a[(i % ar, j % ac)])
}

/// Torus correlation as `B ⊗ A`, with `A` the row-circle kernel and `B` the
/// column-circle kernel. Requires the logical coordinates to be listed
/// column-major (rows varying fastest).
pub fn build_torus_correlation_kron(map: &LocationMap, params: &KernelParams) -> Result<CorrelationMatrix> {
    if params.topology != Topology::Torus {
        return Err(Error::KernelValidity(
            "Kronecker construction is only defined on the torus".into(),
        ));
    }
    let grid = map.grid();
    for (l, &c) in map.logical_coords().iter().enumerate() {
        if c != grid.coords_of(l) {
            return Err(Error::Consistency(format!(
                "logical location {} is {c:?}, expected column-major {:?}",
                l + 1,
                grid.coords_of(l)
            )));
        }
    }
    let a = circle_correlation_matrix(grid.n_rows(), params.nu_r, params.kappa);
    let b = circle_correlation_matrix(grid.n_cols(), params.nu_c, params.kappa);
    Ok(CorrelationMatrix {
        matrix: kronecker(&b, &a),
        topology: Topology::Torus,
        params: *params,
    })
}

pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

#[derive(Debug, Clone)]
pub struct JitteredCholesky {
    /// Lower-triangular factor with `L L^T = M + jitter I`.
    pub factor: DMatrix<f64>,
    pub jitter: f64,
}

impl JitteredCholesky {
    pub fn log_det(&self) -> f64 {
        2.0 * self.factor.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// Cholesky factor of a symmetric matrix, retrying with `JITTER_LADDER` on
/// the diagonal until the factorization succeeds.
pub fn cholesky_with_jitter(m: &DMatrix<f64>) -> Result<JitteredCholesky> {
    if !m.is_square() {
        return Err(Error::Domain(format!("matrix is {}x{}, not square", m.nrows(), m.ncols())));
    }
    let n = m.nrows();
    for &jitter in &JITTER_LADDER {
        let mut a = m.clone();
        for i in 0..n {
            a[(i, i)] += jitter;
        }
        if let Some(chol) = nalgebra::Cholesky::new(a) {
            let factor = chol.unpack();
            if factor.iter().all(|x| x.is_finite()) {
                return Ok(JitteredCholesky { factor, jitter });
            }
        }
    }
    Err(Error::NotPositiveDefinite {
        max_jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
    })
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::Domain(format!("matrix is {}x{}, not square", m.nrows(), m.ncols())));
    }
    if m.is_empty() {
        return Err(Error::Domain("empty matrix".into()));
    }
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Per-pair integer distances for one topology, cached so the correlation
/// matrix and its hyperparameter derivatives can be rebuilt cheaply at every
/// leapfrog step.
#[derive(Debug, Clone)]
pub struct KernelGeometry {
    m: usize,
    topology: Topology,
    max_dr: usize,
    max_dc: usize,
    dr: Vec<u16>,
    dc: Vec<u16>,
}

/// Per-distance kernel factors for the current hyperparameters.
#[derive(Debug, Clone, Default)]
struct AxisTable {
    /// `(d / nu)^kappa`
    u: Vec<f64>,
    /// `ln(d / nu)`, zero at `d = 0`
    log_ratio: Vec<f64>,
}

impl AxisTable {
    fn new(max_d: usize, nu: f64, kappa: f64) -> Self {
        let mut u = Vec::with_capacity(max_d + 1);
        let mut log_ratio = Vec::with_capacity(max_d + 1);
        for d in 0..=max_d {
            if d == 0 {
                u.push(0.0);
                log_ratio.push(0.0);
            } else {
                let lr = (d as f64 / nu).ln();
                u.push((kappa * lr).exp());
                log_ratio.push(lr);
            }
        }
        Self { u, log_ratio }
    }
}

/// Gradient of a scalar with respect to the kernel hyperparameters, given
/// the scalar's gradient with respect to the entries of `R`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KernelGradient {
    pub log_nu_r: f64,
    pub log_nu_c: f64,
    pub kappa: f64,
}

impl KernelGeometry {
    pub fn new(map: &LocationMap, topology: Topology) -> Self {
        let grid = map.grid();
        let coords = match topology {
            Topology::EuclideanGrid => map.physical_coords(),
            Topology::Torus => map.logical_coords(),
        };
        let m = coords.len();
        let mut dr = Vec::with_capacity(m * m);
        let mut dc = Vec::with_capacity(m * m);
        for t in 0..m {
            for s in 0..m {
                // coordinates come from the map, so they are always in range
                let r = axis_distance(coords[s].0, coords[t].0, grid.n_rows(), topology).unwrap_or(0);
                let c = axis_distance(coords[s].1, coords[t].1, grid.n_cols(), topology).unwrap_or(0);
                dr.push(r as u16);
                dc.push(c as u16);
            }
        }
        let max_dr = dr.iter().copied().max().unwrap_or(0) as usize;
        let max_dc = dc.iter().copied().max().unwrap_or(0) as usize;
        Self {
            m,
            topology,
            max_dr,
            max_dc,
            dr,
            dc,
        }
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    /// Correlation matrix for the given hyperparameters (no validity check).
    pub fn correlation(&self, nu_r: f64, nu_c: f64, kappa: f64) -> DMatrix<f64> {
        let er: Vec<f64> = AxisTable::new(self.max_dr, nu_r, kappa).u.iter().map(|u| (-u).exp()).collect();
        let ec: Vec<f64> = AxisTable::new(self.max_dc, nu_c, kappa).u.iter().map(|u| (-u).exp()).collect();
        let m = self.m;
        DMatrix::from_fn(m, m, |s, t| {
            let k = t * m + s;
            er[self.dr[k] as usize] * ec[self.dc[k] as usize]
        })
    }

    /// Contract `sum_ij dR_ij/dtheta * weights_ij` for each hyperparameter.
    /// `r` must be the matrix returned by [`Self::correlation`] for the same
    /// hyperparameters.
    pub fn contract(
        &self,
        r: &DMatrix<f64>,
        weights: &DMatrix<f64>,
        nu_r: f64,
        nu_c: f64,
        kappa: f64,
    ) -> KernelGradient {
        let tr = AxisTable::new(self.max_dr, nu_r, kappa);
        let tc = AxisTable::new(self.max_dc, nu_c, kappa);
        let m = self.m;
        let rs = r.as_slice();
        let ws = weights.as_slice();
        let (mut g_r, mut g_c, mut g_k) = (0.0, 0.0, 0.0);
        for k in 0..m * m {
            let rw = rs[k] * ws[k];
            if rw == 0.0 {
                continue;
            }
            let (ir, ic) = (self.dr[k] as usize, self.dc[k] as usize);
            let (ur, uc) = (tr.u[ir], tc.u[ic]);
            g_r += rw * ur;
            g_c += rw * uc;
            g_k -= rw * (ur * tr.log_ratio[ir] + uc * tc.log_ratio[ic]);
        }
        KernelGradient {
            log_nu_r: kappa * g_r,
            log_nu_c: kappa * g_c,
            kappa: g_k,
        }
    }
}
