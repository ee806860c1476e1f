//! Dense row-major matrices, thin SVD, orthogonal projection and PCA.

use std::fmt;
use std::ops::{Index, IndexMut};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::procrustes::Orthogonal;
use crate::scalar::Real;

/// Work size (multiply-adds) above which products are split across threads.
const PAR_THRESHOLD: usize = 1 << 16;

const MAX_JACOBI_SWEEPS: usize = 80;

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            write!(f, "  ")?;
            for v in self.data[i * self.cols..(i + 1) * self.cols].iter().take(8) {
                write!(f, "{:>10.4?} ", v)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl<T: Real> Matrix<T> {
    /// Builds a matrix from row-major data, rejecting wrong lengths and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite entry at ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::InvalidInput(format!(
                    "row {} has length {}, expected {}",
                    i,
                    r.len(),
                    cols
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn from_diag(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// Copies the listed rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: idx.len(), cols: self.cols, data }
    }

    /// First `n` rows (clamped to the row count).
    pub fn head_rows(&self, n: usize) -> Self {
        let n = n.min(self.rows);
        Self { rows: n, cols: self.cols, data: self.data[..n * self.cols].to_vec() }
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(shape_err("matmul", self.shape(), other.shape()));
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = Self::zeros(n, m);
        let kernel = |(i, out_row): (usize, &mut [T])| {
            let a = self.row(i);
            for (p, &aip) in a.iter().enumerate() {
                if aip == T::zero() {
                    continue;
                }
                let b = other.row(p);
                for (o, &bv) in out_row.iter_mut().zip(b) {
                    *o += aip * bv;
                }
            }
        };
        if n * k * m >= PAR_THRESHOLD && m > 0 {
            out.data.par_chunks_mut(m).enumerate().for_each(kernel);
        } else if m > 0 {
            out.data.chunks_mut(m).enumerate().for_each(kernel);
        }
        Ok(out)
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(shape_err("t_matmul", self.shape(), other.shape()));
        }
        self.transpose().matmul(other)
    }

    /// `self · otherᵀ`: every entry is a row-row dot product.
    pub fn matmul_t(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(shape_err("matmul_t", self.shape(), other.shape()));
        }
        let m = other.rows;
        let mut out = Self::zeros(self.rows, m);
        let kernel = |(i, out_row): (usize, &mut [T])| {
            let a = self.row(i);
            for (j, o) in out_row.iter_mut().enumerate() {
                *o = dot(a, other.row(j));
            }
        };
        if self.rows * self.cols * m >= PAR_THRESHOLD && m > 0 {
            out.data.par_chunks_mut(m).enumerate().for_each(kernel);
        } else if m > 0 {
            out.data.chunks_mut(m).enumerate().for_each(kernel);
        }
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    fn zip_with(&self, other: &Self, op: &str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(shape_err(op, self.shape(), other.shape()));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// `self += s · other` in place.
    pub fn axpy(&mut self, s: T, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(shape_err("axpy", self.shape(), other.shape()));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    /// Frobenius inner product `⟨self, other⟩`.
    pub fn inner(&self, other: &Self) -> Result<T> {
        if self.shape() != other.shape() {
            return Err(shape_err("inner", self.shape(), other.shape()));
        }
        Ok(dot(&self.data, &other.data))
    }

    pub fn frobenius_sq(&self) -> T {
        dot(&self.data, &self.data)
    }

    pub fn frobenius(&self) -> T {
        self.frobenius_sq().sqrt()
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn row_norms(&self) -> Vec<T> {
        self.row_iter().map(|r| dot(r, r).sqrt()).collect()
    }

    pub fn row_sums(&self) -> Vec<T> {
        self.row_iter().map(|r| r.iter().copied().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<T> {
        let mut s = vec![T::zero(); self.cols];
        for r in self.row_iter() {
            for (acc, &v) in s.iter_mut().zip(r) {
                *acc += v;
            }
        }
        s
    }

    pub fn col_means(&self) -> Vec<T> {
        let n = T::from_count(self.rows.max(1));
        self.col_sums().into_iter().map(|s| s / n).collect()
    }

    /// `‖selfᵀ·self − I‖_F`, the departure from orthonormal columns.
    pub fn orthonormality_error(&self) -> T {
        let g = self.t_matmul(self).expect("square gram");
        let mut e = T::zero();
        for i in 0..g.rows {
            for j in 0..g.cols {
                let target = if i == j { T::one() } else { T::zero() };
                let d = g[(i, j)] - target;
                e += d * d;
            }
        }
        e.sqrt()
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::InvalidArgument(format!("{op}: incompatible shapes {}x{} and {}x{}", a.0, a.1, b.0, b.1))
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    // Four independent partial sums keep the adds from serializing.
    let mut acc = [T::zero(); 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Thin singular value decomposition `m = u · diag(s) · vᵀ`.
#[derive(Debug, Clone)]
pub struct Svd<T> {
    /// `rows × k` with orthonormal columns.
    pub u: Matrix<T>,
    /// Descending, non-negative, length `k = min(rows, cols)`.
    pub s: Vec<T>,
    /// `cols × k` with orthonormal columns.
    pub v: Matrix<T>,
}

impl<T: Real> Svd<T> {
    pub fn reconstruct(&self) -> Matrix<T> {
        let us = Matrix::from_fn(self.u.rows(), self.s.len(), |i, j| self.u[(i, j)] * self.s[j]);
        us.matmul_t(&self.v).expect("consistent factor shapes")
    }

    /// Number of singular values above `tol`.
    pub fn rank(&self, tol: T) -> usize {
        self.s.iter().filter(|&&v| v > tol).count()
    }
}

/// Thin SVD by one-sided (Hestenes) Jacobi rotations.
///
/// Columns of `u` are sign-normalized so that the largest-magnitude entry of
/// each is positive; the matching `v` column is flipped with it. Columns of `u`
/// belonging to zero singular values are completed to an orthonormal set.
pub fn svd<T: Real>(m: &Matrix<T>) -> Result<Svd<T>> {
    if !m.is_finite() {
        return Err(Error::InvalidInput("svd: non-finite entry".into()));
    }
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::InvalidInput("svd: empty matrix".into()));
    }
    if m.rows() < m.cols() {
        let t = svd_tall(&m.transpose());
        let mut out = Svd { u: t.v, s: t.s, v: t.u };
        normalize_signs(&mut out);
        return Ok(out);
    }
    let mut out = svd_tall(m);
    normalize_signs(&mut out);
    Ok(out)
}

/// SVD for `rows ≥ cols`; signs are not normalized.
fn svd_tall<T: Real>(a: &Matrix<T>) -> Svd<T> {
    let (rows, n) = a.shape();
    // Work on columns stored contiguously: w[j] is column j of a·v.
    let mut w: Vec<Vec<T>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<T>> = (0..n)
        .map(|j| {
            let mut e = vec![T::zero(); n];
            e[j] = T::one();
            e
        })
        .collect();
    let eps = T::epsilon();

    for _ in 0..MAX_JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = w.split_at_mut(q);
                rotate(&mut lo[p], &mut hi[0], c, s);
                let (lo, hi) = v.split_at_mut(q);
                rotate(&mut lo[p], &mut hi[0], c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<T> = w.iter().map(|c| dot(c, c).sqrt()).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap().then(i.cmp(&j)));

    let s_max = norms[order[0]];
    let tiny = T::min_positive_value().sqrt().max(s_max * eps * T::from_count(rows));
    let mut s = Vec::with_capacity(n);
    let mut u_cols: Vec<Vec<T>> = Vec::with_capacity(n);
    let mut v_cols: Vec<Vec<T>> = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        let sv = norms[j];
        if sv > tiny {
            u_cols.push(w[j].iter().map(|&x| x / sv).collect());
            s.push(sv);
        } else {
            u_cols.push(vec![T::zero(); rows]);
            s.push(sv);
            missing.push(k);
        }
        v_cols.push(v[j].clone());
    }
    if !missing.is_empty() {
        complete_orthonormal(&mut u_cols, &missing);
    }

    let u = Matrix::from_fn(rows, n, |i, j| u_cols[j][i]);
    let v = Matrix::from_fn(n, n, |i, j| v_cols[j][i]);
    Svd { u, s, v }
}

#[inline]
fn rotate<T: Real>(x: &mut [T], y: &mut [T], c: T, s: T) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (xa, yb) = (*a, *b);
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

/// Fills the listed (zero) columns with unit vectors orthogonal to all others.
fn complete_orthonormal<T: Real>(cols: &mut [Vec<T>], missing: &[usize]) {
    let dim = cols[0].len();
    let mut candidate = 0usize;
    for &k in missing {
        loop {
            assert!(candidate < dim, "orthonormal completion ran out of basis vectors");
            let mut e = vec![T::zero(); dim];
            e[candidate] = T::one();
            candidate += 1;
            // Two passes of Gram-Schmidt keep the result orthogonal to working precision.
            for _ in 0..2 {
                for (idx, c) in cols.iter().enumerate() {
                    if idx == k || (missing.contains(&idx) && c.iter().all(|v| *v == T::zero())) {
                        continue;
                    }
                    let proj = dot(&e, c);
                    for (ei, &ci) in e.iter_mut().zip(c) {
                        *ei -= proj * ci;
                    }
                }
            }
            let nrm = dot(&e, &e).sqrt();
            if nrm > T::lit(0.5) {
                cols[k] = e.into_iter().map(|x| x / nrm).collect();
                break;
            }
        }
    }
}

fn normalize_signs<T: Real>(svd: &mut Svd<T>) {
    let (rows, k) = svd.u.shape();
    for j in 0..k {
        let mut best = T::zero();
        let mut best_val = T::zero();
        for i in 0..rows {
            let val = svd.u[(i, j)];
            if val.abs() > best {
                best = val.abs();
                best_val = val;
            }
        }
        if best_val < T::zero() {
            for i in 0..rows {
                svd.u[(i, j)] = -svd.u[(i, j)];
            }
            for i in 0..svd.v.rows() {
                svd.v[(i, j)] = -svd.v[(i, j)];
            }
        }
    }
}

/// Absolute floor below which a singular value is treated as zero.
pub(crate) fn rank_tolerance<T: Real>(s_max: T, dim: usize) -> T {
    T::lit(1e-12).max(s_max * T::epsilon() * T::from_count(dim.max(1)) * T::lit(4.0))
}

/// Nearest orthogonal matrix in Frobenius norm: `U·Vᵀ` from the SVD of `m`.
pub fn project_orthogonal<T: Real>(m: &Matrix<T>) -> Result<Orthogonal<T>> {
    if !m.is_square() {
        return Err(Error::InvalidArgument(format!(
            "project_orthogonal expects a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let dec = svd(m)?;
    let largest = dec.s[0];
    let smallest = *dec.s.last().unwrap();
    if smallest <= rank_tolerance(largest, m.rows()) {
        return Err(Error::DegenerateProjection {
            smallest: smallest.as_f64(),
            largest: largest.as_f64(),
        });
    }
    let q = dec.u.matmul_t(&dec.v)?;
    Ok(Orthogonal::from_trusted(q))
}

/// Projection onto the top-`k` principal directions of the column-centered data.
pub fn pca_project<T: Real>(x: &Matrix<T>, k: usize) -> Result<Matrix<T>> {
    let (n, d) = x.shape();
    if k > d {
        return Err(Error::InvalidArgument(format!("pca: k = {k} exceeds dimension {d}")));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!("pca: need at least 2 rows, got {n}")));
    }
    let means = x.col_means();
    let centered = Matrix::from_fn(n, d, |i, j| x[(i, j)] - means[j]);
    let dec = svd(&centered)?;
    let basis = Matrix::from_fn(d, k, |i, j| dec.v[(i, j)]);
    centered.matmul(&basis)
}

/// Total variance (sum of per-column sample variances, `n − 1` denominator).
pub fn total_variance<T: Real>(x: &Matrix<T>) -> T {
    let n = x.rows();
    if n < 2 {
        return T::zero();
    }
    let means = x.col_means();
    let mut acc = T::zero();
    for r in x.row_iter() {
        for (&v, &m) in r.iter().zip(&means) {
            acc += (v - m) * (v - m);
        }
    }
    acc / T::from_count(n - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn random_orthogonal(d: usize, seed: u64) -> Matrix<f64> {
        project_orthogonal(&random(d, d, seed)).unwrap().into_matrix()
    }

    /// Symmetric Jacobi eigenvalue iteration; independent of the SVD path.
    fn sym_eigenvalues(a: &Matrix<f64>) -> Vec<f64> {
        let n = a.rows();
        let mut a = a.clone();
        for _ in 0..100 {
            let mut off = 0.0;
            for p in 0..n {
                for q in p + 1..n {
                    off += a[(p, q)] * a[(p, q)];
                }
            }
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        ev
    }

    #[test]
    fn new_rejects_bad_input() {
        assert!(Matrix::new(2, 2, vec![1.0, 2.0, 3.0]).is_err());
        assert!(Matrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn matmul_variants_agree() {
        let a = random(7, 5, 1);
        let b = random(5, 4, 2);
        let c = a.matmul(&b).unwrap();
        for i in 0..7 {
            for j in 0..4 {
                let naive: f64 = (0..5).map(|k| a[(i, k)] * b[(k, j)]).sum();
                assert!((c[(i, j)] - naive).abs() < 1e-14);
            }
        }
        let bt = b.transpose();
        assert!(a.matmul_t(&bt).unwrap().sub(&c).unwrap().frobenius() < 1e-14);
        let at = a.transpose();
        assert!(at.t_matmul(&b).unwrap().sub(&c).unwrap().frobenius() < 1e-14);
    }

    #[test]
    fn svd_identity() {
        let s = svd(&Matrix::<f64>::identity(3)).unwrap();
        assert_eq!(s.s, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn svd_diagonal() {
        let m = Matrix::<f64>::from_rows(&[[3.0, 0.0], [0.0, 1.0]]).unwrap();
        let s = svd(&m).unwrap();
        assert_eq!(s.s, vec![3.0, 1.0]);
        for i in 0..2 {
            for j in 0..2 {
                let e: f64 = if i == j { 1.0 } else { 0.0 };
                assert!((s.u[(i, j)].abs() - e).abs() < 1e-15);
                assert!((s.v[(i, j)].abs() - e).abs() < 1e-15);
            }
        }
        // Sign convention: largest entry of each u column is positive.
        assert!(s.u[(0, 0)] > 0.0 && s.u[(1, 1)] > 0.0);
    }

    #[test]
    fn svd_reconstructs_random() {
        for (r, c, seed) in [(5, 4, 3), (4, 5, 4), (30, 12, 5), (1, 6, 6), (6, 1, 7)] {
            let m = random(r, c, seed);
            let dec = svd(&m).unwrap();
            let err = dec.reconstruct().sub(&m).unwrap().frobenius() / m.frobenius();
            assert!(err < 1e-10, "{r}x{c}: {err}");
            assert!(dec.u.orthonormality_error() < 1e-10);
            assert!(dec.v.orthonormality_error() < 1e-10);
            assert!(dec.s.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn svd_rank_deficient_completes_u() {
        // Rank 2 in a 5x4 matrix.
        let a = random(5, 2, 8);
        let b = random(2, 4, 9);
        let m = a.matmul(&b).unwrap();
        let dec = svd(&m).unwrap();
        assert!(dec.u.orthonormality_error() < 1e-10);
        assert!(dec.v.orthonormality_error() < 1e-10);
        assert!(dec.reconstruct().sub(&m).unwrap().frobenius() < 1e-10);
        assert!(dec.s[2] < 1e-12 && dec.s[3] < 1e-12);
        let z = Matrix::<f64>::zeros(3, 3);
        let dz = svd(&z).unwrap();
        assert!(dz.u.orthonormality_error() < 1e-12);
    }

    #[test]
    fn svd_rejects_non_finite() {
        let mut m = Matrix::<f64>::identity(2);
        m.data_mut()[1] = f64::INFINITY;
        assert!(matches!(svd(&m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn svd_works_in_f32() {
        let m = random(6, 4, 10).cast::<f32>();
        let dec = svd(&m).unwrap();
        let err = dec.reconstruct().sub(&m).unwrap().frobenius() / m.frobenius();
        assert!(err < 1e-5);
    }

    #[test]
    fn singular_values_invariant_under_rotations() {
        let m = random(6, 6, 11);
        let a = random_orthogonal(6, 12);
        let b = random_orthogonal(6, 13);
        let s0 = svd(&m).unwrap().s;
        let s1 = svd(&a.matmul(&m).unwrap().matmul(&b).unwrap()).unwrap().s;
        for (x, y) in s0.iter().zip(&s1) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_fixed_point_and_scaling() {
        let q = random_orthogonal(5, 14);
        let p = project_orthogonal(&q).unwrap();
        assert!(p.matrix().sub(&q).unwrap().frobenius() < 1e-10);
        let two = Matrix::<f64>::identity(4).scale(2.0);
        let p = project_orthogonal(&two).unwrap();
        assert!(p.matrix().sub(&Matrix::identity(4)).unwrap().frobenius() < 1e-12);
    }

    #[test]
    fn projection_is_idempotent() {
        let m = random(6, 6, 15);
        let p1 = project_orthogonal(&m).unwrap();
        let p2 = project_orthogonal(p1.matrix()).unwrap();
        assert!(p1.matrix().sub(p2.matrix()).unwrap().frobenius() < 1e-10);
        assert!(p1.matrix().orthonormality_error() < 1e-10);
    }

    #[test]
    fn projection_is_nearest_among_sampled_orthogonals() {
        let m = random(4, 4, 16);
        let p = project_orthogonal(&m).unwrap();
        let best = p.matrix().sub(&m).unwrap().frobenius();
        for s in 0..1000 {
            let r = random_orthogonal(4, 1000 + s);
            assert!(best <= r.sub(&m).unwrap().frobenius() + 1e-12);
        }
    }

    #[test]
    fn projection_rejects_rank_deficient() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]).unwrap();
        assert!(matches!(project_orthogonal(&m), Err(Error::DegenerateProjection { .. })));
        assert!(project_orthogonal(&random(3, 2, 1)).is_err());
    }

    #[test]
    fn orthogonal_maps_preserve_frobenius_norm() {
        let x = random(20, 7, 17);
        let q = random_orthogonal(7, 18);
        let xq = x.matmul(&q).unwrap();
        assert!((xq.frobenius() - x.frobenius()).abs() < 1e-9);
    }

    #[test]
    fn pca_exact_on_planar_data() {
        // Points in span{a, b} inside R^5.
        let coeffs = random(40, 2, 19);
        let basis = random(2, 5, 20);
        let x = coeffs.matmul(&basis).unwrap();
        let p = pca_project(&x, 2).unwrap();
        assert!((total_variance(&p) - total_variance(&x)).abs() < 1e-8);
    }

    #[test]
    fn pca_full_basis_keeps_variance() {
        let x = random(30, 4, 21);
        let p = pca_project(&x, 4).unwrap();
        assert!((total_variance(&p) - total_variance(&x)).abs() < 1e-8);
    }

    #[test]
    fn pca_variance_matches_covariance_eigenvalues() {
        let x = random(100, 10, 22);
        let means = x.col_means();
        let c = Matrix::from_fn(100, 10, |i, j| x[(i, j)] - means[j]);
        let cov = c.t_matmul(&c).unwrap().scale(1.0 / 99.0);
        let ev = sym_eigenvalues(&cov);
        let p = pca_project(&x, 2).unwrap();
        assert!((total_variance(&p) - (ev[0] + ev[1])).abs() < 1e-8);
        assert!(total_variance(&p) <= total_variance(&x));
    }

    #[test]
    fn pca_rejects_bad_k() {
        assert!(pca_project(&random(5, 3, 1), 4).is_err());
        assert!(pca_project(&random(1, 3, 1), 1).is_err());
    }
}
