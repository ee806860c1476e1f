//! Bilingual lexicon induction scores and matching accuracy on synthetic data.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::aligner::squared_distances;
use crate::assignment::{solve_lap, Permutation};
use crate::data_io::{EmbeddingSet, Lexicon, SyntheticInstance};
use crate::error::{Error, Result};
use crate::procrustes::Orthogonal;
use crate::retrieval::{retrieve_rows, RetrievalConfig};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Fraction of queries with a gold target among the top `k`.
    pub precision_at: BTreeMap<usize, f64>,
    pub n_queries: usize,
    /// Unique source words left out: not in the (capped) source vocabulary,
    /// or none of their gold targets in the (capped) target vocabulary.
    pub oov_skipped: usize,
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<8} {:>9}", "metric", "value");
        for (k, p) in &self.precision_at {
            let _ = writeln!(s, "{:<8} {:>8.2}%", format!("P@{k}"), 100.0 * p);
        }
        let _ = writeln!(s, "{:<8} {:>9}", "queries", self.n_queries);
        let _ = writeln!(s, "{:<8} {:>9}", "skipped", self.oov_skipped);
        s
    }
}

/// Precision@k of translating `src·q` into `tgt` over the lexicon's unique
/// source words. A query counts as a hit when any of its gold targets is in
/// its top `k`.
pub fn evaluate_bli<T: Real>(
    src: &EmbeddingSet<T>,
    tgt: &EmbeddingSet<T>,
    q: &Orthogonal<T>,
    lex: &Lexicon,
    cfg: &RetrievalConfig,
    ks: &[usize],
) -> Result<EvalReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidArgument(format!("precision cutoffs must be ≥ 1, got {ks:?}")));
    }
    let src_cap = src.len().min(cfg.candidate_cap);
    let tgt_cap = tgt.len().min(cfg.candidate_cap);
    let si = src.index();
    let ti = tgt.index();

    // Unique source words in lexicon order, each with its gold target rows.
    let mut order: Vec<&str> = Vec::new();
    let mut gold: HashMap<&str, HashSet<usize>> = HashMap::new();
    for (s, t) in lex.pairs() {
        let entry = gold.entry(s.as_str()).or_insert_with(|| {
            order.push(s.as_str());
            HashSet::new()
        });
        if let Some(&j) = ti.get(t.as_str()) {
            if j < tgt_cap {
                entry.insert(j);
            }
        }
    }
    let mut rows = Vec::new();
    let mut golds = Vec::new();
    let mut skipped = 0;
    for w in &order {
        match si.get(w) {
            Some(&i) if i < src_cap && !gold[w].is_empty() => {
                rows.push(i);
                golds.push(&gold[w]);
            }
            _ => skipped += 1,
        }
    }
    if rows.is_empty() {
        return Err(Error::NoQueries(format!(
            "none of the {} lexicon source words has an in-vocabulary gold target",
            order.len()
        )));
    }

    let kmax = *ks.iter().max().unwrap_or(&1);
    let mapped = q.apply(src.matrix())?;
    let table = retrieve_rows(&mapped, &rows, tgt.matrix(), cfg, kmax)?;
    let mut precision_at = BTreeMap::new();
    for &k in ks {
        let hits = golds
            .iter()
            .enumerate()
            .filter(|(qi, g)| table.get(*qi).iter().take(k).any(|(j, _)| g.contains(j)))
            .count();
        precision_at.insert(k, hits as f64 / rows.len() as f64);
    }
    Ok(EvalReport { precision_at, n_queries: rows.len(), oov_skipped: skipped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMethod {
    /// Each source row independently takes its nearest target (squared distance).
    Nn,
    /// One-to-one minimum-cost assignment.
    Exact,
}

/// Row `i` of `x·q` to a row of `y` under `method`.
pub fn induced_matching<T: Real>(
    x: &crate::linalg::Matrix<T>,
    y: &crate::linalg::Matrix<T>,
    q: &Orthogonal<T>,
    method: MatchMethod,
) -> Result<Vec<usize>> {
    let cost = squared_distances(&q.apply(x)?, y)?;
    Ok(match method {
        MatchMethod::Nn => cost
            .row_iter()
            .map(|row| {
                let mut arg = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v < row[arg] {
                        arg = j;
                    }
                }
                arg
            })
            .collect(),
        MatchMethod::Exact => solve_lap(&cost)?.0.as_slice().to_vec(),
    })
}

/// Fraction of rows whose induced match equals the true correspondence.
pub fn matching_accuracy<T: Real>(inst: &SyntheticInstance<T>, q: &Orthogonal<T>, method: MatchMethod) -> Result<f64> {
    let m = induced_matching(inst.x.matrix(), inst.y.matrix(), q, method)?;
    Ok(agreement(&m, &inst.truth()))
}

/// Fraction of positions where `matching` agrees with `truth`.
pub fn agreement(matching: &[usize], truth: &Permutation) -> f64 {
    let hits = matching.iter().enumerate().filter(|&(i, &j)| truth.get(i) == j).count();
    hits as f64 / matching.len().max(1) as f64
}
