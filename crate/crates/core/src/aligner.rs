//! Stochastic Wasserstein-Procrustes optimizer.
//!
//! Each step draws independent mini-batches from both sets, matches them under
//! the current map, takes a gradient step on `‖X_t Q − P_t Y_t‖²` and projects
//! back onto the orthogonal group.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assignment::{max_trace_matching, solve_lap, Permutation};
use crate::error::{Error, Result};
use crate::linalg::{project_orthogonal, Matrix};
use crate::procrustes::Orthogonal;
use crate::scalar::Real;
use crate::sinkhorn::{sinkhorn_plan, transport_cost, SinkhornConfig, TransportPlan};

/// Batch sizes up to this use the exact solver under [`Matcher::Auto`].
pub const AUTO_EXACT_LIMIT: usize = 512;

/// Matching sizes up to this are solved exactly by [`estimate_objective`].
pub const EXACT_EVAL_LIMIT: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Matcher {
    Hungarian,
    Sinkhorn(SinkhornConfig),
    /// Hungarian up to `exact_limit`, Sinkhorn above.
    Auto { exact_limit: usize, sinkhorn: SinkhornConfig },
}

impl Default for Matcher {
    fn default() -> Self {
        Matcher::Auto { exact_limit: AUTO_EXACT_LIMIT, sinkhorn: SinkhornConfig::default() }
    }
}

impl Matcher {
    fn resolve(&self, b: usize) -> Option<SinkhornConfig> {
        match *self {
            Matcher::Hungarian => None,
            Matcher::Sinkhorn(cfg) => Some(cfg),
            Matcher::Auto { exact_limit, sinkhorn } => (b > exact_limit).then_some(sinkhorn),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentConfig {
    pub total_iters: usize,
    pub batch_size: usize,
    /// Double the batch size at iterations ⌈T/3⌉ and ⌈2T/3⌉.
    pub batch_doubling: bool,
    /// Step size is `lr · d / (2b·m₂)` for the current batch size `b`, where
    /// `m₂` is the mean squared row norm of the sampling pools (1 for
    /// unit-normalized data).
    pub lr: f64,
    pub matcher: Matcher,
    /// Batches are drawn from the first `sample_pool` rows; `None` means
    /// `min(n, 20000)`.
    pub sample_pool: Option<usize>,
    pub seed: u64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            total_iters: 4000,
            batch_size: 500,
            batch_doubling: true,
            lr: 1.0,
            matcher: Matcher::default(),
            sample_pool: None,
            seed: 0,
        }
    }
}

pub const DEFAULT_SAMPLE_POOL: usize = 20_000;

impl AlignmentConfig {
    /// Batch size in effect at 0-based iteration `t`.
    pub fn batch_size_at(&self, t: usize) -> usize {
        if !self.batch_doubling {
            return self.batch_size;
        }
        let tt = self.total_iters;
        let first = tt.div_ceil(3);
        let second = (2 * tt).div_ceil(3);
        let doublings = (t >= first) as u32 + (t >= second) as u32;
        self.batch_size << doublings
    }

    pub fn final_batch_size(&self) -> usize {
        self.batch_size_at(self.total_iters.saturating_sub(1))
    }

    pub fn step_size(&self, d: usize, b: usize, second_moment: f64) -> f64 {
        self.lr * d as f64 / (2.0 * b as f64 * second_moment)
    }

    pub fn pool(&self, n: usize) -> usize {
        self.sample_pool.unwrap_or(n.min(DEFAULT_SAMPLE_POOL)).min(n)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.total_iters == 0 {
            return Err(Error::InvalidConfig("total_iters must be ≥ 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch size must be ≥ 2".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidConfig("learning rate must be > 0".into()));
        }
        if let Some(p) = self.sample_pool {
            if p > n {
                return Err(Error::InvalidConfig(format!("sample pool {p} exceeds {n} rows")));
            }
        }
        let pool = self.pool(n);
        if pool < self.final_batch_size() {
            return Err(Error::InvalidConfig(format!(
                "sample pool {pool} is smaller than the final batch size {}",
                self.final_batch_size()
            )));
        }
        if let Matcher::Sinkhorn(c) | Matcher::Auto { sinkhorn: c, .. } = self.matcher {
            c.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AlignmentState<T> {
    pub q: Orthogonal<T>,
    pub iter: usize,
    /// `(iteration, ‖X_t Q_t − P_t Y_t‖² / b)`: a mini-batch estimate of the
    /// population objective, not the full-set objective.
    pub loss_history: Vec<(usize, f64)>,
}

impl<T: Real> AlignmentState<T> {
    pub fn new(q: Orthogonal<T>) -> Self {
        Self { q, iter: 0, loss_history: Vec::new() }
    }
}

/// Correspondence found for one mini-batch.
#[derive(Debug, Clone)]
pub enum BatchCoupling<T> {
    Exact(Permutation),
    /// Mass-1 entropic plan; the gradient uses `b · plan`.
    Entropic(TransportPlan<T>),
}

impl<T: Real> BatchCoupling<T> {
    /// `P_t · Y_t` with `P_t` the permutation or `b` times the plan.
    pub fn apply(&self, y_batch: &Matrix<T>) -> Result<Matrix<T>> {
        match self {
            BatchCoupling::Exact(p) => Ok(p.apply_rows(y_batch)),
            BatchCoupling::Entropic(plan) => plan.doubly_stochastic().matmul(y_batch),
        }
    }
}

/// Squared distances `‖aᵢ − bⱼ‖²`.
pub fn squared_distances<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    let cross = a.matmul_t(b)?;
    let an: Vec<T> = a.row_iter().map(|r| r.iter().map(|&v| v * v).sum()).collect();
    let bn: Vec<T> = b.row_iter().map(|r| r.iter().map(|&v| v * v).sum()).collect();
    Ok(Matrix::from_fn(a.rows(), b.rows(), |i, j| {
        (an[i] + bn[j] - T::lit(2.0) * cross[(i, j)]).max(T::zero())
    }))
}

/// Matches `x_batch·Q` against `y_batch` and returns the coupling and the batch loss.
pub fn match_batch<T: Real>(
    x_mapped: &Matrix<T>,
    y_batch: &Matrix<T>,
    matcher: &Matcher,
) -> Result<(BatchCoupling<T>, f64)> {
    let b = x_mapped.rows();
    match matcher.resolve(b) {
        None => {
            // argmax tr(Y Qᵀ Xᵀ P) over permutations.
            let score = x_mapped.matmul_t(y_batch)?;
            let p = max_trace_matching(&score)?;
            let loss = x_mapped.sub(&p.apply_rows(y_batch))?.frobenius_sq().as_f64() / b as f64;
            Ok((BatchCoupling::Exact(p), loss))
        }
        Some(cfg) => {
            let cost = squared_distances(x_mapped, y_batch)?;
            let plan = sinkhorn_plan(&cost, &cfg)?;
            let loss = transport_cost(&plan, &cost)?.as_f64();
            Ok((BatchCoupling::Entropic(plan), loss))
        }
    }
}

/// `G = −2 · X_tᵀ P_t Y_t`, the gradient of `−2 tr(Qᵀ X_tᵀ P_t Y_t)` in `Q`.
pub fn batch_gradient<T: Real>(x_batch: &Matrix<T>, coupled_y: &Matrix<T>) -> Result<Matrix<T>> {
    Ok(x_batch.t_matmul(coupled_y)?.scale(T::lit(-2.0)))
}

/// One iteration: match, gradient, step of size `alpha`, projection.
pub fn align_step<T: Real>(
    x_batch: &Matrix<T>,
    y_batch: &Matrix<T>,
    mut state: AlignmentState<T>,
    alpha: f64,
    matcher: &Matcher,
) -> Result<AlignmentState<T>> {
    if x_batch.shape() != y_batch.shape() {
        return Err(Error::InvalidArgument(format!(
            "batches differ in shape: {}x{} vs {}x{}",
            x_batch.rows(),
            x_batch.cols(),
            y_batch.rows(),
            y_batch.cols()
        )));
    }
    let x_mapped = state.q.apply(x_batch)?;
    let (coupling, loss) = match_batch(&x_mapped, y_batch, matcher)?;
    let grad = batch_gradient(x_batch, &coupling.apply(y_batch)?)?;
    let mut next = state.q.matrix().clone();
    next.axpy(T::lit(-alpha), &grad)?;
    let q = project_orthogonal(&next)
        .map_err(|e| Error::DegenerateStep { iter: state.iter, source: Box::new(e) })?;
    state.loss_history.push((state.iter, loss));
    state.q = q;
    state.iter += 1;
    Ok(state)
}

/// Runs the full schedule from `q0`.
pub fn align<T: Real>(
    x: &Matrix<T>,
    y: &Matrix<T>,
    q0: Orthogonal<T>,
    cfg: &AlignmentConfig,
) -> Result<AlignmentState<T>> {
    align_observed(x, y, q0, cfg, |_| {})
}

/// [`align`], calling `observe` with the state after every step.
pub fn align_observed<T: Real>(
    x: &Matrix<T>,
    y: &Matrix<T>,
    q0: Orthogonal<T>,
    cfg: &AlignmentConfig,
    mut observe: impl FnMut(&AlignmentState<T>),
) -> Result<AlignmentState<T>> {
    if x.cols() != y.cols() || q0.dim() != x.cols() {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: x has {}, y has {}, map has {}",
            x.cols(),
            y.cols(),
            q0.dim()
        )));
    }
    let n = x.rows().min(y.rows());
    cfg.validate(n)?;
    let pool = cfg.pool(n);
    let d = x.cols();
    let m2 = second_moment(&x.head_rows(pool), &y.head_rows(pool));
    if !(m2 > 0.0) {
        return Err(Error::InvalidInput("sampling pools are all zero".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AlignmentState::new(q0);
    for t in 0..cfg.total_iters {
        let b = cfg.batch_size_at(t);
        let xi = sample(&mut rng, pool, b).into_vec();
        let yi = sample(&mut rng, pool, b).into_vec();
        let xb = x.select_rows(&xi);
        let yb = y.select_rows(&yi);
        state = align_step(&xb, &yb, state, cfg.step_size(d, b, m2), &cfg.matcher)?;
        observe(&state);
    }
    Ok(state)
}

/// Mean squared row norm over both sets.
pub fn second_moment<T: Real>(x: &Matrix<T>, y: &Matrix<T>) -> f64 {
    let total = x.frobenius_sq().as_f64() + y.frobenius_sq().as_f64();
    total / (x.rows() + y.rows()).max(1) as f64
}

/// Transport cost between the first `n_eval` rows of `x·Q` and of `y`
/// (sum of squared distances, not averaged). Exact up to
/// [`EXACT_EVAL_LIMIT`] rows, entropic above.
pub fn estimate_objective<T: Real>(
    x: &Matrix<T>,
    y: &Matrix<T>,
    q: &Orthogonal<T>,
    n_eval: usize,
    sinkhorn: &SinkhornConfig,
) -> Result<f64> {
    if n_eval == 0 || n_eval > x.rows() || n_eval > y.rows() {
        return Err(Error::InvalidArgument(format!("n_eval {n_eval} out of range")));
    }
    let xm = q.apply(&x.head_rows(n_eval))?;
    let cost = squared_distances(&xm, &y.head_rows(n_eval))?;
    if n_eval <= EXACT_EVAL_LIMIT {
        let (_, total) = solve_lap(&cost)?;
        Ok(total.as_f64())
    } else {
        let plan = sinkhorn_plan(&cost, sinkhorn)?;
        Ok(transport_cost(&plan, &cost)?.as_f64() * n_eval as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::{random_orthogonal, synth_generate, GaussianStream};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
        GaussianStream::new(seed).matrix(rows, cols)
    }

    #[test]
    fn schedule_doubles_at_thirds() {
        let cfg = AlignmentConfig { total_iters: 9, batch_size: 10, ..Default::default() };
        let sizes: Vec<usize> = (0..9).map(|t| cfg.batch_size_at(t)).collect();
        assert_eq!(sizes, vec![10, 10, 10, 20, 20, 20, 40, 40, 40]);
        let cfg = AlignmentConfig { total_iters: 4000, batch_size: 500, ..Default::default() };
        assert_eq!(cfg.batch_size_at(1333), 500);
        assert_eq!(cfg.batch_size_at(1334), 1000);
        assert_eq!(cfg.batch_size_at(2667), 2000);
        assert_eq!(cfg.final_batch_size(), 2000);
        let one = AlignmentConfig { total_iters: 1, batch_size: 4, ..Default::default() };
        assert_eq!(one.batch_size_at(0), 4);
    }

    #[test]
    fn step_preserves_norms_and_orthogonality() {
        let xb = gaussian(16, 5, 1);
        let yb = gaussian(16, 5, 2);
        let state = AlignmentState::new(random_orthogonal::<f64>(5, 3));
        let next = align_step(&xb, &yb, state, 0.1, &Matcher::Hungarian).unwrap();
        let xq = next.q.apply(&xb).unwrap();
        assert!((xq.frobenius() - xb.frobenius()).abs() < 1e-9);
        assert!(next.q.orthonormality_error() < 1e-8);
        assert_eq!(next.iter, 1);
        assert_eq!(next.loss_history.len(), 1);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let xb = gaussian(12, 4, 4);
        let yb = gaussian(12, 4, 5);
        let p = Permutation::new(vec![3, 1, 0, 2, 5, 4, 7, 6, 9, 8, 11, 10]).unwrap();
        let py = p.apply_rows(&yb);
        let g = batch_gradient(&xb, &py).unwrap();
        let xtpy = xb.t_matmul(&py).unwrap();
        let f = |q: &Matrix<f64>| -2.0 * q.inner(&xtpy).unwrap();
        let q = random_orthogonal::<f64>(4, 6).into_matrix();
        let h = 1e-6;
        for i in 0..4 {
            for j in 0..4 {
                let mut plus = q.clone();
                plus[(i, j)] += h;
                let mut minus = q.clone();
                minus[(i, j)] -= h;
                let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                assert!((fd - g[(i, j)]).abs() <= 1e-6 * g[(i, j)].abs().max(1.0));
            }
        }
    }

    #[test]
    fn trace_and_residual_objectives_differ_by_a_constant() {
        let xb = gaussian(10, 3, 7);
        let yb = gaussian(10, 3, 8);
        let p = Permutation::new(vec![9, 8, 7, 6, 5, 4, 3, 2, 1, 0]).unwrap();
        let py = p.apply_rows(&yb);
        let xtpy = xb.t_matmul(&py).unwrap();
        let mut offsets = Vec::new();
        for s in 0..20 {
            let q = random_orthogonal::<f64>(3, 100 + s);
            let resid = q.apply(&xb).unwrap().sub(&py).unwrap().frobenius_sq();
            let trace = -2.0 * q.matrix().inner(&xtpy).unwrap();
            offsets.push(resid - trace);
        }
        let c = offsets[0];
        assert!(offsets.iter().all(|o| (o - c).abs() < 1e-9));
    }

    #[test]
    fn fixed_point_at_truth() {
        let inst = synth_generate::<f64>(64, 4, 0.0, 9).unwrap();
        let truth = inst.truth();
        // Batch: all rows of x, and y reordered so the true match is the identity.
        let xb = inst.x.matrix().clone();
        let yb = truth.apply_rows(inst.y.matrix());
        let x_mapped = inst.true_rotation.apply(&xb).unwrap();
        let (coupling, loss) = match_batch(&x_mapped, &yb, &Matcher::Hungarian).unwrap();
        match coupling {
            BatchCoupling::Exact(p) => assert_eq!(p, Permutation::identity(64)),
            _ => unreachable!(),
        }
        assert!(loss < 1e-20);
        let state = AlignmentState::new(inst.true_rotation.clone());
        let next = align_step(&xb, &yb, state, 1e-3, &Matcher::Hungarian).unwrap();
        assert!(next.q.matrix().sub(inst.true_rotation.matrix()).unwrap().frobenius() < 1e-6);
    }

    #[test]
    fn single_iteration_equals_one_step() {
        let x = gaussian(40, 3, 10);
        let y = gaussian(40, 3, 11);
        let cfg = AlignmentConfig {
            total_iters: 1,
            batch_size: 8,
            matcher: Matcher::Hungarian,
            seed: 5,
            ..Default::default()
        };
        let q0 = Orthogonal::identity(3);
        let full = align(&x, &y, q0.clone(), &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xi = sample(&mut rng, 40, 8).into_vec();
        let yi = sample(&mut rng, 40, 8).into_vec();
        let manual = align_step(
            &x.select_rows(&xi),
            &y.select_rows(&yi),
            AlignmentState::new(q0),
            cfg.step_size(3, 8, second_moment(&x, &y)),
            &Matcher::Hungarian,
        )
        .unwrap();
        assert_eq!(full.q, manual.q);
        assert_eq!(full.loss_history, manual.loss_history);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let x = gaussian(200, 4, 12);
        let y = gaussian(200, 4, 13);
        let cfg = AlignmentConfig { total_iters: 30, batch_size: 16, seed: 3, ..Default::default() };
        let a = align(&x, &y, Orthogonal::identity(4), &cfg).unwrap();
        let b = align(&x, &y, Orthogonal::identity(4), &cfg).unwrap();
        assert_eq!(a.loss_history, b.loss_history);
        assert_eq!(a.q, b.q);
    }

    #[test]
    fn sinkhorn_matcher_runs() {
        let x = gaussian(100, 3, 14);
        let y = gaussian(100, 3, 15);
        let cfg = AlignmentConfig {
            total_iters: 5,
            batch_size: 20,
            matcher: Matcher::Sinkhorn(SinkhornConfig::default()),
            ..Default::default()
        };
        let s = align(&x, &y, Orthogonal::identity(3), &cfg).unwrap();
        assert!(s.q.orthonormality_error() < 1e-8);
        assert_eq!(s.loss_history.len(), 5);
    }

    #[test]
    fn rejects_small_pool() {
        let x = gaussian(50, 3, 16);
        let cfg = AlignmentConfig { total_iters: 3, batch_size: 20, ..Default::default() };
        let err = align(&x, &x, Orthogonal::identity(3), &cfg).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn objective_estimates() {
        let x = gaussian(30, 4, 17);
        let q = random_orthogonal::<f64>(4, 18);
        let y = q.apply(&x).unwrap();
        let sk = SinkhornConfig::default();
        assert!(estimate_objective(&x, &y, &q, 30, &sk).unwrap() < 1e-8);

        // Rotating both aligned sets by the same map leaves the cost unchanged.
        let y = gaussian(30, 4, 19);
        let a = random_orthogonal::<f64>(4, 20);
        let base = estimate_objective(&x, &y, &q, 30, &sk).unwrap();
        let qa = Orthogonal::new(q.matrix().matmul(a.matrix()).unwrap(), 1e-8).unwrap();
        let ya = a.apply(&y).unwrap();
        let rotated = estimate_objective(&x, &ya, &qa, 30, &sk).unwrap();
        assert!((base - rotated).abs() < 1e-8);

        let x = gaussian(100, 5, 21);
        let y = gaussian(100, 5, 22);
        let q = Orthogonal::identity(5);
        let cost = squared_distances(&x, &y).unwrap();
        let (p, _) = solve_lap(&cost).unwrap();
        let plan = TransportPlan::from_permutation(&p);
        let oracle = transport_cost(&plan, &cost).unwrap() * 100.0;
        let est = estimate_objective(&x, &y, &q, 100, &sk).unwrap();
        assert!((est - oracle).abs() < 1e-8);
    }
}
