//! Convex graph-matching initializer.
//!
//! Minimizes `f(P) = ‖K_X P − P K_Y‖²_F` over doubly stochastic `P` with
//! Frank-Wolfe, where `K_X = XXᵀ` and `K_Y = YYᵀ` are Gram matrices of the
//! leading rows of each set, then reads off an orthogonal map from the
//! relaxed matching.
//!
//! The iteration keeps the residual `R = K_X P − P K_Y`. Every linear
//! minimization oracle returns a permutation `S`, so `K_X S − S K_Y` is a pure
//! re-indexing of the Gram matrices and the line search and residual update
//! need no matrix product. The gradient `2(K_X R − R K_Y)` goes through the
//! rank-`d` factors, `K_X R = X(XᵀR)`, at `O(m²d)` per iteration.

use serde::{Deserialize, Serialize};

use crate::assignment::{solve_lap, Permutation};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::procrustes::{fit_orthogonal, Orthogonal};
use crate::scalar::Real;
use crate::sinkhorn::TransportPlan;

/// Residual recomputation period, bounding drift of the incremental update.
const RESIDUAL_REFRESH: usize = 25;

/// Gram matrices of the leading `m` rows of both sets.
#[derive(Debug, Clone)]
pub struct GramPair<T> {
    pub kx: Matrix<T>,
    pub ky: Matrix<T>,
    xs: Matrix<T>,
    ys: Matrix<T>,
}

impl<T: Real> GramPair<T> {
    /// Grams of the rows of `xs` and `ys`.
    pub fn from_rows(xs: Matrix<T>, ys: Matrix<T>) -> Result<Self> {
        if xs.shape() != ys.shape() {
            return Err(Error::InvalidArgument(format!(
                "gram factors differ in shape: {}x{} vs {}x{}",
                xs.rows(),
                xs.cols(),
                ys.rows(),
                ys.cols()
            )));
        }
        Ok(Self { kx: xs.matmul_t(&xs)?, ky: ys.matmul_t(&ys)?, xs, ys })
    }

    pub fn size(&self) -> usize {
        self.kx.rows()
    }

    /// `K_X A − A K_Y`.
    fn commutator(&self, a: &Matrix<T>) -> Result<Matrix<T>> {
        let left = self.xs.matmul(&self.xs.t_matmul(a)?)?;
        let right = a.matmul(&self.ys)?.matmul_t(&self.ys)?;
        left.sub(&right)
    }

    /// `‖K_X P − P K_Y‖²_F` for a dense `P`.
    pub fn objective(&self, p: &Matrix<T>) -> Result<T> {
        Ok(self.residual(p)?.frobenius_sq())
    }

    /// `K_X P − P K_Y`.
    pub fn residual(&self, p: &Matrix<T>) -> Result<Matrix<T>> {
        self.commutator(p)
    }

    /// `∇f(P) = 2(K_X R − R K_Y)` with `R = K_X P − P K_Y`; equal to
    /// `2(K_X²P − 2K_X P K_Y + P K_Y²)` for symmetric Grams.
    pub fn gradient(&self, p: &Matrix<T>) -> Result<Matrix<T>> {
        let r = self.residual(p)?;
        self.gradient_from_residual(&r)
    }

    fn gradient_from_residual(&self, r: &Matrix<T>) -> Result<Matrix<T>> {
        Ok(self.commutator(r)?.scale(T::lit(2.0)))
    }

    /// `K_X S − S K_Y` for the permutation matrix `S` with ones at `(i, σ(i))`.
    fn vertex_residual(&self, sigma: &Permutation, sigma_inv: &Permutation) -> Matrix<T> {
        let m = self.size();
        Matrix::from_fn(m, m, |i, j| self.kx[(i, sigma_inv.get(j))] - self.ky[(sigma.get(i), j)])
    }
}

/// Builds `K_X`, `K_Y` from the first `m` rows of `x` and `y`.
pub fn build_grams<T: Real>(x: &Matrix<T>, y: &Matrix<T>, m: usize) -> Result<GramPair<T>> {
    if m == 0 || m > x.rows() || m > y.rows() {
        return Err(Error::InvalidArgument(format!(
            "gram subset size {m} must be in 1..={}",
            x.rows().min(y.rows())
        )));
    }
    if x.cols() != y.cols() {
        return Err(Error::InvalidArgument(format!("dimensions differ: {} vs {}", x.cols(), y.cols())));
    }
    GramPair::from_rows(x.head_rows(m), y.head_rows(m))
}

/// Stopping threshold on the Frank-Wolfe duality gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GapTolerance {
    Absolute(f64),
    /// Fraction of the objective at the starting point.
    RelativeToInitial(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FwConfig {
    pub max_iters: usize,
    pub gap_tol: GapTolerance,
    /// Number of leading rows of each set entering the relaxation.
    pub subset_size: usize,
}

impl Default for FwConfig {
    fn default() -> Self {
        Self { max_iters: 300, gap_tol: GapTolerance::RelativeToInitial(1e-6), subset_size: 2500 }
    }
}

impl FwConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("fw max_iters must be ≥ 1".into()));
        }
        let tol = match self.gap_tol {
            GapTolerance::Absolute(t) | GapTolerance::RelativeToInitial(t) => t,
        };
        if !(tol > 0.0) {
            return Err(Error::InvalidConfig("fw gap tolerance must be > 0".into()));
        }
        if self.subset_size < 2 {
            return Err(Error::InvalidConfig("fw subset size must be ≥ 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FwOutcome<T> {
    /// Final iterate as a mass-1 transport plan (doubly stochastic / m).
    pub plan: TransportPlan<T>,
    /// `f` at the start point and after every step.
    pub objective_trace: Vec<f64>,
    /// Duality gap observed at each iteration.
    pub gap_trace: Vec<f64>,
    pub converged: bool,
}

/// Frank-Wolfe from the uniform doubly stochastic matrix with exact line search.
pub fn fw_solve<T: Real>(g: &GramPair<T>, cfg: &FwConfig) -> Result<FwOutcome<T>> {
    fw_solve_observed(g, cfg, |_, _| {})
}

/// [`fw_solve`], calling `observe(iteration, P)` on the start point and every iterate.
pub fn fw_solve_observed<T: Real>(
    g: &GramPair<T>,
    cfg: &FwConfig,
    mut observe: impl FnMut(usize, &Matrix<T>),
) -> Result<FwOutcome<T>> {
    cfg.validate()?;
    let m = g.size();
    if g.ky.shape() != (m, m) || !g.kx.is_square() {
        return Err(Error::InvalidArgument("gram matrices must be square and equal-sized".into()));
    }
    let mut p = Matrix::filled(m, m, T::one() / T::from_count(m));
    let mut r = g.residual(&p)?;
    let f0 = r.frobenius_sq();
    let gap_tol = match cfg.gap_tol {
        GapTolerance::Absolute(t) => t,
        GapTolerance::RelativeToInitial(t) => t * f0.as_f64(),
    };
    let mut objective_trace = vec![f0.as_f64()];
    let mut gap_trace = Vec::new();
    let mut converged = false;
    observe(0, &p);

    for it in 1..=cfg.max_iters {
        if it % RESIDUAL_REFRESH == 0 {
            r = g.residual(&p)?;
        }
        let grad = g.gradient_from_residual(&r)?;
        if !grad.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite Frank-Wolfe gradient at iteration {it}")));
        }
        // Linear minimization over the Birkhoff polytope: the best vertex.
        let (sigma, vertex_value) = solve_lap(&grad)?;
        let gap = (grad.inner(&p)? - vertex_value).as_f64();
        gap_trace.push(gap);
        if gap <= gap_tol {
            converged = true;
            break;
        }
        let sigma_inv = sigma.inverse();
        let mut e = g.vertex_residual(&sigma, &sigma_inv);
        e.axpy(-T::one(), &r)?;
        let num = r.inner(&e)?;
        let den = e.frobenius_sq();
        if !(den > T::zero()) {
            converged = true;
            break;
        }
        let gamma = (-num / den).max(T::zero()).min(T::one());
        if gamma == T::zero() {
            converged = true;
            break;
        }
        let keep = T::one() - gamma;
        p.data_mut().iter_mut().for_each(|v| *v *= keep);
        for i in 0..m {
            p[(i, sigma.get(i))] += gamma;
        }
        r.axpy(gamma, &e)?;
        objective_trace.push(r.frobenius_sq().as_f64());
        observe(it, &p);
    }

    let plan = TransportPlan::from_parts(p.scale(T::one() / T::from_count(m)), converged, gap_trace.len());
    Ok(FwOutcome { plan, objective_trace, gap_trace, converged })
}

/// `Q₀ = argmin_Q ‖xQ − P·y‖²` with `P` the plan rescaled to unit row sums.
pub fn extract_q0<T: Real>(x: &Matrix<T>, y: &Matrix<T>, plan: &TransportPlan<T>) -> Result<Orthogonal<T>> {
    let m = plan.size();
    if x.rows() != m || y.rows() != m || x.cols() != y.cols() {
        return Err(Error::InvalidArgument(format!(
            "extract_q0: plan is {m}x{m}, x is {}x{}, y is {}x{}",
            x.rows(),
            x.cols(),
            y.rows(),
            y.cols()
        )));
    }
    let target = plan.doubly_stochastic().matmul(y)?;
    fit_orthogonal(x, &target)
}

/// Gram construction, Frank-Wolfe and `Q₀` extraction on the leading `subset_size` rows.
pub fn convex_init<T: Real>(x: &Matrix<T>, y: &Matrix<T>, cfg: &FwConfig) -> Result<(Orthogonal<T>, FwOutcome<T>)> {
    let m = cfg.subset_size.min(x.rows()).min(y.rows());
    let grams = build_grams(x, y, m)?;
    let outcome = fw_solve(&grams, cfg)?;
    let q0 = extract_q0(&x.head_rows(m), &y.head_rows(m), &outcome.plan)?;
    Ok((q0, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::brute_force_lap;
    use crate::data_io::{random_orthogonal, GaussianStream};
    use crate::sinkhorn::marginal_error;

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
        GaussianStream::new(seed).matrix(rows, cols)
    }

    #[test]
    fn grams_match_naive_dot_products() {
        let x = gaussian(20, 5, 1);
        let y = gaussian(20, 5, 2);
        let g = build_grams(&x, &y, 20).unwrap();
        for i in 0..20 {
            for j in 0..20 {
                let naive: f64 = (0..5).map(|k| x[(i, k)] * x[(j, k)]).sum();
                assert!((g.kx[(i, j)] - naive).abs() < 1e-10);
                assert!((g.kx[(i, j)] - g.kx[(j, i)]).abs() < 1e-9);
            }
        }
        let g1 = build_grams(&x, &y, 1).unwrap();
        assert!((g1.kx[(0, 0)] - x.row(0).iter().map(|v| v * v).sum::<f64>()).abs() < 1e-12);
        assert!(build_grams(&x, &y, 21).is_err());
    }

    #[test]
    fn orthonormal_rows_give_identity_gram() {
        let q = random_orthogonal::<f64>(4, 3).into_matrix();
        let g = build_grams(&q, &q, 4).unwrap();
        assert!(g.kx.sub(&Matrix::identity(4)).unwrap().frobenius() < 1e-12);
    }

    #[test]
    fn identical_grams_vanish_at_identity() {
        let x = gaussian(8, 3, 4);
        let g = build_grams(&x, &x, 8).unwrap();
        assert!(g.objective(&Matrix::identity(8)).unwrap() < 1e-20);
    }

    #[test]
    fn gradient_matches_expanded_form() {
        let x = gaussian(6, 3, 5);
        let y = gaussian(6, 3, 6);
        let g = build_grams(&x, &y, 6).unwrap();
        let p = Matrix::filled(6, 6, 1.0 / 6.0);
        let kx2p = g.kx.matmul(&g.kx).unwrap().matmul(&p).unwrap();
        let kxpky = g.kx.matmul(&p).unwrap().matmul(&g.ky).unwrap();
        let pky2 = p.matmul(&g.ky).unwrap().matmul(&g.ky).unwrap();
        let expanded = kx2p.sub(&kxpky.scale(2.0)).unwrap().add(&pky2).unwrap().scale(2.0);
        assert!(g.gradient(&p).unwrap().sub(&expanded).unwrap().frobenius() < 1e-10);
    }

    #[test]
    fn vertex_oracle_matches_brute_force() {
        for seed in 0..10 {
            let x = gaussian(6, 2, 10 + seed);
            let y = gaussian(6, 2, 30 + seed);
            let g = build_grams(&x, &y, 6).unwrap();
            let p = Matrix::filled(6, 6, 1.0 / 6.0);
            let grad = g.gradient(&p).unwrap();
            let (_, fast) = solve_lap(&grad).unwrap();
            let (_, slow) = brute_force_lap(&grad).unwrap();
            assert!((fast - slow).abs() <= 1e-9 * slow.abs().max(1.0));
        }
    }

    #[test]
    fn vertex_residual_is_reindexing() {
        let x = gaussian(5, 2, 7);
        let y = gaussian(5, 2, 8);
        let g = build_grams(&x, &y, 5).unwrap();
        let sigma = Permutation::new(vec![2, 0, 4, 1, 3]).unwrap();
        let s: Matrix<f64> = sigma.to_matrix();
        let direct = g.residual(&s).unwrap();
        let fast = g.vertex_residual(&sigma, &sigma.inverse());
        assert!(direct.sub(&fast).unwrap().frobenius() < 1e-12);
    }

    #[test]
    fn iterates_stay_feasible_and_trace_descends() {
        let x = gaussian(15, 4, 9);
        let y = random_orthogonal::<f64>(4, 10).apply(&x).unwrap();
        let g = build_grams(&x, &y, 15).unwrap();
        let mut worst = 0.0f64;
        let cfg = FwConfig { max_iters: 200, subset_size: 15, ..Default::default() };
        let out = fw_solve_observed(&g, &cfg, |_, p| {
            let scaled = p.scale(1.0 / 15.0);
            worst = worst.max(marginal_error(&scaled) * 15.0);
            assert!(p.data().iter().all(|&v| v >= 0.0));
        })
        .unwrap();
        assert!(worst < 1e-8, "{worst}");
        for w in out.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
        assert!(out.objective_trace.last().unwrap() <= &out.objective_trace[0]);
    }

    #[test]
    fn permutation_relabeling_preserves_optimum() {
        let x = gaussian(6, 2, 11);
        let y = gaussian(6, 2, 12);
        let pi = Permutation::new(vec![3, 5, 0, 1, 4, 2]).unwrap();
        let g = build_grams(&x, &y, 6).unwrap();
        let g2 = build_grams(&x, &pi.apply_rows(&y), 6).unwrap();
        let cfg = FwConfig { max_iters: 2000, subset_size: 6, gap_tol: GapTolerance::Absolute(1e-12) };
        let a = fw_solve(&g, &cfg).unwrap();
        let b = fw_solve(&g2, &cfg).unwrap();
        let fa = *a.objective_trace.last().unwrap();
        let fb = *b.objective_trace.last().unwrap();
        assert!((fa - fb).abs() < 1e-3 * fa.max(1.0), "{fa} vs {fb}");
        // The relabeled optimum P·Πᵀ evaluated on the original problem.
        let p = b.plan.doubly_stochastic().matmul(&pi.to_matrix()).unwrap();
        let fp = g.objective(&p).unwrap();
        assert!((fp - fb).abs() < 1e-8 * fb.max(1.0));
    }

    #[test]
    fn q0_from_identity_plan() {
        let x = gaussian(10, 3, 13);
        let plan = TransportPlan::from_permutation(&Permutation::identity(10));
        let q = extract_q0(&x, &x, &plan).unwrap();
        assert!(q.matrix().sub(&Matrix::identity(3)).unwrap().frobenius() < 1e-10);
    }

    #[test]
    fn q0_from_planted_permutation() {
        let x = gaussian(30, 4, 14);
        let r = random_orthogonal::<f64>(4, 15);
        let p = Permutation::new((0..30).map(|i| (i * 7) % 30).collect()).unwrap();
        // y with P·y = x·R: row σ(i) of y holds row i of xR.
        let xr = r.apply(&x).unwrap();
        let y = p.inverse().apply_rows(&xr);
        assert!(p.apply_rows(&y).sub(&xr).unwrap().frobenius() < 1e-12);
        let q = extract_q0(&x, &y, &TransportPlan::from_permutation(&p)).unwrap();
        assert!(q.matrix().sub(r.matrix()).unwrap().frobenius() < 1e-6);
    }

    #[test]
    fn q0_from_uniform_plan_is_degenerate() {
        let x = gaussian(10, 3, 16);
        let y = gaussian(10, 3, 17);
        let err = extract_q0(&x, &y, &TransportPlan::uniform(10)).unwrap_err();
        assert!(matches!(err, Error::DegenerateFit { .. }), "{err}");
    }
}
