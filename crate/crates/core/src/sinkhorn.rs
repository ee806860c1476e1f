//! Entropic optimal transport between uniform measures of equal size.
//!
//! The solver alternates row and column scalings of the Gibbs kernel
//! `exp(−C/ε)`. A linear-domain fast path is used when the kernel is
//! representable; otherwise (or on request) the iterations run on dual
//! potentials in the log domain, with ε-scaling to reach small regularizations
//! in few sweeps.

use serde::{Deserialize, Serialize};

use crate::assignment::{solve_lap, Permutation};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

/// How the entropic regularization is chosen for a cost matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Regularization {
    /// Fixed ε, in units of the cost.
    Absolute(f64),
    /// ε = factor × median entry of the cost matrix.
    MedianScaled(f64),
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization::MedianScaled(0.05)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub epsilon: Regularization,
    pub max_iters: usize,
    /// Largest tolerated deviation of a row or column sum from `1/b`.
    pub tol_marginal: f64,
    /// Force log-domain iterations even when the kernel would not underflow.
    pub log_domain: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: Regularization::default(),
            max_iters: 100,
            tol_marginal: 1e-6,
            log_domain: false,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        let eps_ok = match self.epsilon {
            Regularization::Absolute(e) | Regularization::MedianScaled(e) => e > 0.0 && e.is_finite(),
        };
        if !eps_ok {
            return Err(Error::InvalidConfig(format!("sinkhorn epsilon must be > 0: {:?}", self.epsilon)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("sinkhorn max_iters must be ≥ 1".into()));
        }
        if !(self.tol_marginal > 0.0) {
            return Err(Error::InvalidConfig("sinkhorn tol_marginal must be > 0".into()));
        }
        Ok(())
    }

    /// The absolute ε this configuration uses for `cost`.
    pub fn resolve_epsilon<T: Real>(&self, cost: &Matrix<T>) -> f64 {
        match self.epsilon {
            Regularization::Absolute(e) => e,
            Regularization::MedianScaled(f) => {
                let med = median(cost.data()).as_f64().abs();
                if med > 0.0 {
                    f * med
                } else {
                    // All-zero (or median-zero) costs: any positive ε gives the same plan scale.
                    let max = cost.data().iter().fold(0.0f64, |m, v| m.max(v.as_f64().abs()));
                    if max > 0.0 {
                        f * max
                    } else {
                        1.0
                    }
                }
            }
        }
    }
}

/// Nonnegative `b × b` coupling of two uniform measures (total mass 1).
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan<T> {
    weights: Matrix<T>,
    /// Whether the marginal tolerance was met within the iteration budget.
    pub converged: bool,
    pub iterations: usize,
    /// Max deviation of any row or column sum from `1/b` at exit.
    pub marginal_error: f64,
    /// Whether the log-domain path produced this plan.
    pub log_domain: bool,
}

impl<T: Real> TransportPlan<T> {
    /// Wraps an explicit coupling, checking nonnegativity and `1/b` marginals within `tol`.
    pub fn from_weights(weights: Matrix<T>, tol: f64) -> Result<Self> {
        if !weights.is_square() || weights.rows() == 0 {
            return Err(Error::InvalidInput("transport plan must be square and non-empty".into()));
        }
        if weights.data().iter().any(|&w| w < T::zero() || !w.is_finite()) {
            return Err(Error::InvalidInput("transport plan has negative or non-finite weights".into()));
        }
        let err = marginal_error(&weights);
        if err > tol {
            return Err(Error::InvalidInput(format!("plan marginals off by {err:e} (tolerance {tol:e})")));
        }
        Ok(Self { weights, converged: true, iterations: 0, marginal_error: err, log_domain: false })
    }

    /// Uniform coupling, every entry `1/b²`.
    pub fn uniform(b: usize) -> Self {
        let w = T::one() / T::from_count(b * b);
        Self {
            weights: Matrix::filled(b, b, w),
            converged: true,
            iterations: 0,
            marginal_error: 0.0,
            log_domain: false,
        }
    }

    /// The coupling `P/b` of a permutation matrix `P`.
    pub fn from_permutation(p: &Permutation) -> Self {
        let b = p.len();
        let w = T::one() / T::from_count(b);
        let mut m = Matrix::zeros(b, b);
        for i in 0..b {
            m[(i, p.get(i))] = w;
        }
        Self { weights: m, converged: true, iterations: 0, marginal_error: 0.0, log_domain: false }
    }

    pub(crate) fn from_parts(weights: Matrix<T>, converged: bool, iterations: usize) -> Self {
        let marginal_error = marginal_error(&weights);
        Self { weights, converged, iterations, marginal_error, log_domain: false }
    }

    pub fn size(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &Matrix<T> {
        &self.weights
    }

    pub fn into_weights(self) -> Matrix<T> {
        self.weights
    }

    /// The plan rescaled to a doubly stochastic matrix (row and column sums 1).
    pub fn doubly_stochastic(&self) -> Matrix<T> {
        self.weights.scale(T::from_count(self.size()))
    }
}

/// Max over rows and columns of `|sum − 1/b|`.
pub fn marginal_error<T: Real>(w: &Matrix<T>) -> f64 {
    let target = 1.0 / w.rows() as f64;
    w.row_sums()
        .into_iter()
        .chain(w.col_sums())
        .map(|s| (s.as_f64() - target).abs())
        .fold(0.0, f64::max)
}

fn median<T: Real>(data: &[T]) -> T {
    let mut v = data.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / T::lit(2.0)
    }
}

/// Entropic OT plan between uniform marginals for a square cost matrix.
///
/// Never returns NaN weights: when the linear-domain kernel would underflow,
/// or scalings stop being finite, the log-domain solver takes over.
pub fn sinkhorn_plan<T: Real>(cost: &Matrix<T>, cfg: &SinkhornConfig) -> Result<TransportPlan<T>> {
    cfg.validate()?;
    if !cost.is_square() || cost.rows() == 0 {
        return Err(Error::InvalidInput(format!(
            "sinkhorn expects a non-empty square cost matrix, got {}x{}",
            cost.rows(),
            cost.cols()
        )));
    }
    if !cost.is_finite() {
        return Err(Error::InvalidInput("sinkhorn: non-finite cost".into()));
    }
    let eps = cfg.resolve_epsilon(cost);
    let (lo, hi) = cost
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v.as_f64()), hi.max(v.as_f64())));
    // Underflow bound of the kernel with the cost shifted to start at zero.
    let exp_limit = -(T::min_positive_value().as_f64().ln()) * 0.5;
    if !cfg.log_domain && (hi - lo) / eps < exp_limit {
        if let Some(plan) = linear_sinkhorn(cost, lo, eps, cfg) {
            return Ok(plan);
        }
    }
    Ok(log_sinkhorn(cost, eps, cfg))
}

fn linear_sinkhorn<T: Real>(cost: &Matrix<T>, shift: f64, eps: f64, cfg: &SinkhornConfig) -> Option<TransportPlan<T>> {
    let b = cost.rows();
    let a = T::one() / T::from_count(b);
    let shift = T::lit(shift);
    let inv_eps = T::lit(1.0 / eps);
    let kernel = cost.map(|c| (-(c - shift) * inv_eps).exp());
    let mut u = vec![T::one(); b];
    let mut v = vec![T::one(); b];
    let mut kv = vec![T::zero(); b];
    let mut converged = false;
    let mut iters = 0;
    for it in 1..=cfg.max_iters {
        iters = it;
        for (i, row) in kernel.row_iter().enumerate() {
            let s = crate::linalg::dot(row, &v);
            u[i] = a / s;
        }
        let mut ktu = vec![T::zero(); b];
        for (i, row) in kernel.row_iter().enumerate() {
            let ui = u[i];
            for (acc, &k) in ktu.iter_mut().zip(row) {
                *acc += k * ui;
            }
        }
        for j in 0..b {
            v[j] = a / ktu[j];
        }
        if u.iter().chain(&v).any(|x| !x.is_finite() || *x == T::zero()) {
            return None;
        }
        let mut err = 0.0f64;
        for (i, row) in kernel.row_iter().enumerate() {
            kv[i] = crate::linalg::dot(row, &v);
            err = err.max((u[i] * kv[i] - a).abs().as_f64());
        }
        if err <= cfg.tol_marginal {
            converged = true;
            break;
        }
    }
    let weights = Matrix::from_fn(b, b, |i, j| u[i] * kernel[(i, j)] * v[j]);
    if !weights.is_finite() {
        return None;
    }
    Some(TransportPlan::from_parts(weights, converged, iters))
}

/// Log-sum-exp of `(pot[k] − c[k]) / eps` over `k`.
#[inline]
fn lse<T: Real>(pot: &[T], c: impl Iterator<Item = T> + Clone, inv_eps: T) -> T {
    let mut m = T::neg_infinity();
    for (p, ck) in pot.iter().zip(c.clone()) {
        m = m.max((*p - ck) * inv_eps);
    }
    let mut s = T::zero();
    for (p, ck) in pot.iter().zip(c) {
        s += ((*p - ck) * inv_eps - m).exp();
    }
    m + s.ln()
}

fn log_sinkhorn<T: Real>(cost: &Matrix<T>, eps: f64, cfg: &SinkhornConfig) -> TransportPlan<T> {
    let b = cost.rows();
    let log_a = -T::from_count(b).ln();
    let a = T::one() / T::from_count(b);
    let cost_t = cost.transpose();
    let mut f = vec![T::zero(); b];
    let mut g = vec![T::zero(); b];

    let range = cost
        .data()
        .iter()
        .fold(T::zero(), |m, v| m.max(v.abs()))
        .as_f64();
    // ε-scaling: halve from the cost range down to the target, a few sweeps per stage.
    let mut schedule = Vec::new();
    let mut e = range.max(eps);
    while e > eps * 2.0 {
        schedule.push(e);
        e *= 0.5;
    }
    const STAGE_SWEEPS: usize = 10;
    const ABSORB_LOG_LIMIT: f64 = 30.0;
    const KERNEL_FLOOR: f64 = 200.0;

    let sweep = |f: &mut [T], g: &mut [T], eps_t: T| {
        let inv = T::one() / eps_t;
        for (fi, row) in f.iter_mut().zip(cost.row_iter()) {
            *fi = eps_t * (log_a - lse(g, row.iter().copied(), inv));
        }
        for (gj, col) in g.iter_mut().zip(cost_t.row_iter()) {
            *gj = eps_t * (log_a - lse(f, col.iter().copied(), inv));
        }
    };

    for &stage_eps in &schedule {
        let e = T::lit(stage_eps);
        for _ in 0..STAGE_SWEEPS {
            sweep(&mut f, &mut g, e);
        }
    }

    // Final stage: scaling iterations on the kernel exp((f + g − C)/ε), with
    // the scalings absorbed into the potentials whenever they grow large.
    // Entries below e^-KERNEL_FLOOR are flushed to zero: their mass is
    // negligible, and subnormal arithmetic would dominate the run time.
    let eps_t = T::lit(eps);
    let inv = T::one() / eps_t;
    let (lo_scale, hi_scale) = (T::lit((-ABSORB_LOG_LIMIT).exp()), T::lit(ABSORB_LOG_LIMIT.exp()));
    let floor = T::lit(-KERNEL_FLOOR);
    let stabilized_kernel = |f: &[T], g: &[T]| {
        Matrix::from_fn(b, b, |i, j| {
            let e = (f[i] + g[j] - cost[(i, j)]) * inv;
            if e < floor {
                T::zero()
            } else {
                e.exp()
            }
        })
    };
    sweep(&mut f, &mut g, eps_t);
    let mut kernel = stabilized_kernel(&f, &g);
    let mut u = vec![T::one(); b];
    let mut v = vec![T::one(); b];
    let mut kv = vec![T::zero(); b];
    let mut ktu = vec![T::zero(); b];
    let mut converged = false;
    let mut iters = 0;
    for it in 1..=cfg.max_iters {
        iters = it;
        // Columns are exact after the previous v-update; check rows.
        let mut err = 0.0f64;
        for (i, row) in kernel.row_iter().enumerate() {
            kv[i] = crate::linalg::dot(row, &v);
            err = err.max((u[i] * kv[i] - a).abs().as_f64());
        }
        if err <= cfg.tol_marginal && it > 1 {
            converged = true;
            break;
        }
        for i in 0..b {
            u[i] = a / kv[i];
        }
        ktu.iter_mut().for_each(|x| *x = T::zero());
        for (i, row) in kernel.row_iter().enumerate() {
            let ui = u[i];
            for (acc, &k) in ktu.iter_mut().zip(row) {
                *acc += k * ui;
            }
        }
        for j in 0..b {
            v[j] = a / ktu[j];
        }
        let too_large = u.iter().chain(&v).any(|&x| !(x > lo_scale && x < hi_scale));
        if too_large {
            if u.iter().chain(&v).any(|x| !x.is_finite() || *x == T::zero()) {
                // Scalings broke down: fall back to one exact log-domain sweep.
                sweep(&mut f, &mut g, eps_t);
            } else {
                f.iter_mut().zip(&u).for_each(|(fi, ui)| *fi += eps_t * ui.ln());
                g.iter_mut().zip(&v).for_each(|(gj, vj)| *gj += eps_t * vj.ln());
            }
            kernel = stabilized_kernel(&f, &g);
            u.iter_mut().for_each(|x| *x = T::one());
            v.iter_mut().for_each(|x| *x = T::one());
        }
    }
    let weights = Matrix::from_fn(b, b, |i, j| u[i] * kernel[(i, j)] * v[j]);
    let mut plan = TransportPlan::from_parts(weights, converged, iters);
    plan.log_domain = true;
    plan
}

/// Maximum-weight rounding of a plan to a permutation.
pub fn plan_to_matching<T: Real>(plan: &TransportPlan<T>) -> Result<Permutation> {
    solve_lap(&plan.weights().map(|w| -w)).map(|(p, _)| p)
}

/// `Σᵢⱼ planᵢⱼ · costᵢⱼ` (mass-1 normalization).
pub fn transport_cost<T: Real>(plan: &TransportPlan<T>, cost: &Matrix<T>) -> Result<T> {
    if plan.weights().shape() != cost.shape() {
        return Err(Error::InvalidArgument(format!(
            "transport_cost: plan is {}x{}, cost is {}x{}",
            plan.size(),
            plan.size(),
            cost.rows(),
            cost.cols()
        )));
    }
    plan.weights().inner(cost)
}
