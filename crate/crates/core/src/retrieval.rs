//! Translation retrieval: cosine nearest neighbor, CSLS and inverted softmax.
//!
//! Scores are produced block by block over the queries so that peak memory is
//! `block × targets`. CSLS and ISF need statistics over the whole query pool,
//! which a first pass collects.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::scalar::Real;

/// Tolerance on row norms accepted by [`isf_scores`].
pub const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    Nn,
    Csls,
    Isf,
}

impl std::str::FromStr for Similarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nn" => Ok(Similarity::Nn),
            "csls" => Ok(Similarity::Csls),
            "isf" => Ok(Similarity::Isf),
            other => Err(Error::InvalidConfig(format!("unknown retrieval kind '{other}' (nn, csls, isf)"))),
        }
    }
}

impl std::fmt::Display for Similarity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Similarity::Nn => "nn",
            Similarity::Csls => "csls",
            Similarity::Isf => "isf",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub kind: Similarity,
    pub csls_k: usize,
    pub isf_beta: f64,
    /// Only the first `candidate_cap` targets (and pool rows) are considered.
    pub candidate_cap: usize,
    /// Queries scored per block.
    pub block: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { kind: Similarity::Csls, csls_k: 10, isf_beta: 25.0, candidate_cap: 200_000, block: 1024 }
    }
}

impl RetrievalConfig {
    pub fn with_kind(kind: Similarity) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.csls_k == 0 {
            return Err(Error::InvalidConfig("csls k must be ≥ 1".into()));
        }
        if !(self.isf_beta > 0.0) || !self.isf_beta.is_finite() {
            return Err(Error::InvalidConfig("isf beta must be > 0".into()));
        }
        if self.candidate_cap == 0 {
            return Err(Error::InvalidConfig("candidate cap must be ≥ 1".into()));
        }
        if self.block == 0 {
            return Err(Error::InvalidConfig("block size must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Per query, `(target index, score)` sorted by descending score, ties by
/// ascending index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborTable {
    pub neighbors: Vec<Vec<(usize, f64)>>,
}

impl NeighborTable {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn get(&self, query: usize) -> &[(usize, f64)] {
        &self.neighbors[query]
    }

    pub fn top1(&self, query: usize) -> Option<usize> {
        self.neighbors[query].first().map(|&(j, _)| j)
    }
}

/// Bounded list of the best `(score, index)` pairs.
#[derive(Debug, Clone)]
pub(crate) struct TopK<T> {
    k: usize,
    items: Vec<(T, usize)>,
}

impl<T: Real> TopK<T> {
    pub(crate) fn new(k: usize) -> Self {
        Self { k, items: Vec::with_capacity(k + 1) }
    }

    fn beats(a: (T, usize), b: (T, usize)) -> bool {
        a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
    }

    pub(crate) fn push(&mut self, score: T, index: usize) {
        if self.items.len() == self.k {
            match self.items.last() {
                Some(&worst) if !Self::beats((score, index), worst) => return,
                _ => {}
            }
        }
        let pos = self.items.partition_point(|&it| Self::beats(it, (score, index)));
        self.items.insert(pos, (score, index));
        self.items.truncate(self.k);
    }

    pub(crate) fn items(&self) -> &[(T, usize)] {
        &self.items
    }

    fn mean(&self) -> T {
        let s: T = self.items.iter().map(|&(v, _)| v).sum();
        s / T::from_count(self.items.len())
    }
}

fn normalized_rows<T: Real>(m: &Matrix<T>, what: &str) -> Result<Matrix<T>> {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = dot(row, row).sqrt();
        if !(norm > T::zero()) {
            return Err(Error::InvalidInput(format!("{what} row {i} has zero norm")));
        }
        row.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(out)
}

fn check_dims<T: Real>(queries: &Matrix<T>, targets: &Matrix<T>) -> Result<()> {
    if queries.cols() != targets.cols() {
        return Err(Error::InvalidArgument(format!(
            "queries have dimension {}, targets {}",
            queries.cols(),
            targets.cols()
        )));
    }
    if queries.rows() == 0 || targets.rows() == 0 {
        return Err(Error::InvalidArgument("empty query or target set".into()));
    }
    Ok(())
}

/// `cos(qᵢ, tⱼ)` for every pair.
pub fn cosine_scores<T: Real>(queries: &Matrix<T>, targets: &Matrix<T>) -> Result<Matrix<T>> {
    check_dims(queries, targets)?;
    let qn = normalized_rows(queries, "query")?;
    let tn = normalized_rows(targets, "target")?;
    qn.matmul_t(&tn)
}

/// `2cos(qᵢ, tⱼ) − r_T(qᵢ) − r_Q(tⱼ)`, where `r_T(qᵢ)` is the mean cosine of
/// `qᵢ` to its `k` nearest targets and `r_Q(tⱼ)` that of `tⱼ` to its `k`
/// nearest queries.
pub fn csls_scores<T: Real>(queries: &Matrix<T>, targets: &Matrix<T>, k: usize) -> Result<Matrix<T>> {
    check_dims(queries, targets)?;
    check_csls_k(k, queries.rows(), targets.rows())?;
    let cos = cosine_scores(queries, targets)?;
    let (rq, rt) = hubness_from_scores(&cos, 0, k, k, None);
    let rt = finish_means(rt);
    Ok(Matrix::from_fn(cos.rows(), cos.cols(), |i, j| T::lit(2.0) * cos[(i, j)] - rq[i] - rt[j]))
}

/// `exp(β qᵢᵀtⱼ) / Σ_{i'} exp(β q_{i'}ᵀtⱼ)`: each target column is a softmax
/// over the queries. Rows must be unit-normalized.
pub fn isf_scores<T: Real>(queries: &Matrix<T>, targets: &Matrix<T>, beta: f64) -> Result<Matrix<T>> {
    check_dims(queries, targets)?;
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!("isf beta must be > 0, got {beta}")));
    }
    check_unit_norm(queries, "query")?;
    check_unit_norm(targets, "target")?;
    let dots = queries.matmul_t(targets)?;
    let lse = column_log_sum_exp(&dots, T::lit(beta));
    let b = T::lit(beta);
    Ok(Matrix::from_fn(dots.rows(), dots.cols(), |i, j| (b * dots[(i, j)] - lse[j]).exp()))
}

fn check_csls_k(k: usize, nq: usize, nt: usize) -> Result<()> {
    if k == 0 || k > nq || k > nt {
        return Err(Error::InvalidArgument(format!(
            "csls k = {k} must be in 1..=min({nq} queries, {nt} targets)"
        )));
    }
    Ok(())
}

fn check_unit_norm<T: Real>(m: &Matrix<T>, what: &str) -> Result<()> {
    for (i, row) in m.row_iter().enumerate() {
        let norm = dot(row, row).sqrt().as_f64();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::InvalidInput(format!(
                "inverted softmax needs unit-norm vectors; {what} row {i} has norm {norm}"
            )));
        }
    }
    Ok(())
}

fn column_log_sum_exp<T: Real>(dots: &Matrix<T>, beta: T) -> Vec<T> {
    let mut acc = LogSumExp::new(dots.cols());
    acc.absorb(dots, beta);
    acc.finish()
}

/// Streaming column-wise log-sum-exp of `β · scores`.
struct LogSumExp<T> {
    max: Vec<T>,
    sum: Vec<T>,
}

impl<T: Real> LogSumExp<T> {
    fn new(cols: usize) -> Self {
        Self { max: vec![T::neg_infinity(); cols], sum: vec![T::zero(); cols] }
    }

    fn absorb(&mut self, block: &Matrix<T>, beta: T) {
        for row in block.row_iter() {
            for (j, &v) in row.iter().enumerate() {
                let a = beta * v;
                if a > self.max[j] {
                    self.sum[j] = self.sum[j] * (self.max[j] - a).exp() + T::one();
                    self.max[j] = a;
                } else {
                    self.sum[j] += (a - self.max[j]).exp();
                }
            }
        }
    }

    fn finish(self) -> Vec<T> {
        self.max.into_iter().zip(self.sum).map(|(m, s)| m + s.ln()).collect()
    }
}

/// Row means of the top-`kq` scores, and column top-`kt` lists updated in
/// place (created when `cols` is `None`). `row_offset` is the index of the
/// block's first row.
fn hubness_from_scores<T: Real>(
    scores: &Matrix<T>,
    row_offset: usize,
    kq: usize,
    kt: usize,
    cols: Option<Vec<TopK<T>>>,
) -> (Vec<T>, Vec<TopK<T>>) {
    let row_means: Vec<T> = (0..scores.rows())
        .into_par_iter()
        .map(|i| {
            let mut top = TopK::new(kq);
            for (j, &v) in scores.row(i).iter().enumerate() {
                top.push(v, j);
            }
            top.mean()
        })
        .collect();
    let mut cols = cols.unwrap_or_else(|| (0..scores.cols()).map(|_| TopK::new(kt)).collect());
    cols.par_iter_mut().enumerate().for_each(|(j, top)| {
        for i in 0..scores.rows() {
            top.push(scores[(i, j)], row_offset + i);
        }
    });
    (row_means, cols)
}

fn finish_means<T: Real>(cols: Vec<TopK<T>>) -> Vec<T> {
    cols.iter().map(TopK::mean).collect()
}

/// Unit-normalized pool and targets (capped) plus the statistics each
/// similarity needs, ready to score any block of pool rows.
pub(crate) struct Scorer<T> {
    kind: Similarity,
    beta: T,
    pool: Matrix<T>,
    targets: Matrix<T>,
    /// CSLS: mean cosine of each pool row to its k nearest targets.
    r_pool: Vec<T>,
    /// CSLS: mean cosine of each target to its k nearest pool rows.
    r_target: Vec<T>,
    /// ISF: log-normalizer of each target column.
    lse: Vec<T>,
    block: usize,
}

impl<T: Real> Scorer<T> {
    pub(crate) fn new(pool: &Matrix<T>, targets: &Matrix<T>, cfg: &RetrievalConfig) -> Result<Self> {
        cfg.validate()?;
        check_dims(pool, targets)?;
        let pool = pool.head_rows(pool.rows().min(cfg.candidate_cap));
        let targets = targets.head_rows(targets.rows().min(cfg.candidate_cap));
        let (pool, targets) = match cfg.kind {
            Similarity::Isf => {
                check_unit_norm(&pool, "query")?;
                check_unit_norm(&targets, "target")?;
                (pool, targets)
            }
            _ => (normalized_rows(&pool, "query")?, normalized_rows(&targets, "target")?),
        };
        let mut scorer = Scorer {
            kind: cfg.kind,
            beta: T::lit(cfg.isf_beta),
            r_pool: Vec::new(),
            r_target: Vec::new(),
            lse: Vec::new(),
            block: cfg.block,
            pool,
            targets,
        };
        match cfg.kind {
            Similarity::Nn => {}
            Similarity::Csls => {
                let k = cfg.csls_k;
                check_csls_k(k, scorer.pool.rows(), scorer.targets.rows())?;
                let mut cols = None;
                for start in (0..scorer.pool.rows()).step_by(scorer.block) {
                    let cos = scorer.raw_block(start)?;
                    let (means, c) = hubness_from_scores(&cos, start, k, k, cols);
                    scorer.r_pool.extend(means);
                    cols = Some(c);
                }
                scorer.r_target = finish_means(cols.unwrap_or_default());
            }
            Similarity::Isf => {
                let mut acc = LogSumExp::new(scorer.targets.rows());
                for start in (0..scorer.pool.rows()).step_by(scorer.block) {
                    acc.absorb(&scorer.raw_block(start)?, scorer.beta);
                }
                scorer.lse = acc.finish();
            }
        }
        Ok(scorer)
    }

    pub(crate) fn pool_len(&self) -> usize {
        self.pool.rows()
    }

    pub(crate) fn target_len(&self) -> usize {
        self.targets.rows()
    }

    pub(crate) fn block(&self) -> usize {
        self.block
    }

    fn raw_block(&self, start: usize) -> Result<Matrix<T>> {
        let end = (start + self.block).min(self.pool.rows());
        let rows: Vec<usize> = (start..end).collect();
        self.pool.select_rows(&rows).matmul_t(&self.targets)
    }

    /// Final scores of the listed pool rows against every target.
    pub(crate) fn score_rows(&self, rows: &[usize]) -> Result<Matrix<T>> {
        let mut s = self.pool.select_rows(rows).matmul_t(&self.targets)?;
        let two = T::lit(2.0);
        for (bi, &i) in rows.iter().enumerate() {
            let row = s.row_mut(bi);
            match self.kind {
                Similarity::Nn => {}
                Similarity::Csls => {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = two * *v - self.r_pool[i] - self.r_target[j];
                    }
                }
                Similarity::Isf => {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = (self.beta * *v - self.lse[j]).exp();
                    }
                }
            }
        }
        Ok(s)
    }
}

/// Top-`k` targets for every query, with hubness statistics over the queries.
pub fn retrieve<T: Real>(
    queries: &Matrix<T>,
    targets: &Matrix<T>,
    cfg: &RetrievalConfig,
    k: usize,
) -> Result<NeighborTable> {
    let rows: Vec<usize> = (0..queries.rows().min(cfg.candidate_cap)).collect();
    retrieve_rows(queries, &rows, targets, cfg, k)
}

/// Top-`k` targets for the listed rows of `pool`. Hubness statistics are taken
/// over the whole pool (capped), not only the listed rows.
pub fn retrieve_rows<T: Real>(
    pool: &Matrix<T>,
    rows: &[usize],
    targets: &Matrix<T>,
    cfg: &RetrievalConfig,
    k: usize,
) -> Result<NeighborTable> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be ≥ 1".into()));
    }
    let scorer = Scorer::new(pool, targets, cfg)?;
    if let Some(&bad) = rows.iter().find(|&&i| i >= scorer.pool_len()) {
        return Err(Error::InvalidArgument(format!(
            "query row {bad} outside the pool of {} rows",
            scorer.pool_len()
        )));
    }
    let k = k.min(scorer.target_len());
    let mut neighbors = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(scorer.block()) {
        let scores = scorer.score_rows(chunk)?;
        let block: Vec<Vec<(usize, f64)>> = (0..chunk.len())
            .into_par_iter()
            .map(|bi| {
                let mut top = TopK::new(k);
                for (j, &v) in scores.row(bi).iter().enumerate() {
                    top.push(v, j);
                }
                top.items().iter().map(|&(v, j)| (j, v.as_f64())).collect()
            })
            .collect();
        neighbors.extend(block);
    }
    Ok(NeighborTable { neighbors })
}
