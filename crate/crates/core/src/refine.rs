//! Iterative refinement of an orthogonal map: alternate a mutual nearest
//! neighbor dictionary with a Procrustes fit on it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aligner::squared_distances;
use crate::assignment::{solve_lap, Permutation};
use crate::data_io::{EmbeddingSet, Lexicon};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::procrustes::{fit_orthogonal, Orthogonal};
use crate::retrieval::{RetrievalConfig, Scorer, Similarity};
use crate::scalar::Real;

pub const DEFAULT_EPOCHS: usize = 5;

/// Rows of each set eligible for the refinement dictionary.
pub const REFINE_CANDIDATE_CAP: usize = 20_000;

impl RetrievalConfig {
    /// CSLS over the first [`REFINE_CANDIDATE_CAP`] rows.
    pub fn for_refinement() -> Self {
        Self { kind: Similarity::Csls, candidate_cap: REFINE_CANDIDATE_CAP, ..Self::default() }
    }
}

/// `(source row, target row)` pairs, sorted by source, no source repeated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedDictionary {
    pub pairs: Vec<(usize, usize)>,
}

impl SeedDictionary {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> Vec<usize> {
        self.pairs.iter().map(|&(i, _)| i).collect()
    }

    pub fn targets(&self) -> Vec<usize> {
        self.pairs.iter().map(|&(_, j)| j).collect()
    }
}

/// Best target per source and best source per target under `cfg.kind`.
/// Ties go to the lower index in both directions.
pub fn best_matches<T: Real>(
    x_mapped: &Matrix<T>,
    y: &Matrix<T>,
    cfg: &RetrievalConfig,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let scorer = Scorer::new(x_mapped, y, cfg)?;
    let nt = scorer.target_len();
    let mut forward = Vec::with_capacity(scorer.pool_len());
    let mut backward: Vec<(T, usize)> = vec![(T::neg_infinity(), usize::MAX); nt];
    let rows: Vec<usize> = (0..scorer.pool_len()).collect();
    for chunk in rows.chunks(scorer.block()) {
        let s = scorer.score_rows(chunk)?;
        let best: Vec<usize> = (0..chunk.len())
            .into_par_iter()
            .map(|bi| {
                let row = s.row(bi);
                let mut arg = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[arg] {
                        arg = j;
                    }
                }
                arg
            })
            .collect();
        forward.extend(best);
        backward.par_iter_mut().enumerate().for_each(|(j, best)| {
            for (bi, &i) in chunk.iter().enumerate() {
                if s[(bi, j)] > best.0 {
                    *best = (s[(bi, j)], i);
                }
            }
        });
    }
    Ok((forward, backward.into_iter().map(|(_, i)| i).collect()))
}

/// Pairs `(i, j)` where `j` is the best target of `i` and `i` the best source
/// of `j`.
pub fn mutual_nn_dictionary<T: Real>(
    x_mapped: &Matrix<T>,
    y: &Matrix<T>,
    cfg: &RetrievalConfig,
) -> Result<SeedDictionary> {
    let (forward, backward) = best_matches(x_mapped, y, cfg)?;
    let pairs: Vec<(usize, usize)> =
        forward.iter().enumerate().filter(|&(i, &j)| backward[j] == i).map(|(i, &j)| (i, j)).collect();
    if pairs.is_empty() {
        return Err(Error::EmptyDictionary { epoch: 0 });
    }
    Ok(SeedDictionary { pairs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum RefineStatus {
    Completed,
    /// The dictionary came back empty at this (1-based) epoch; the map is the
    /// one from the previous epoch.
    EmptyDictionary { epoch: usize },
}

#[derive(Debug, Clone)]
pub struct RefineOutcome<T> {
    pub q: Orthogonal<T>,
    pub dictionary_sizes: Vec<usize>,
    pub status: RefineStatus,
}

/// Alternates mutual-NN dictionaries on `x·q` vs `y` with Procrustes fits.
pub fn refine<T: Real>(
    x: &Matrix<T>,
    y: &Matrix<T>,
    q: Orthogonal<T>,
    epochs: usize,
    cfg: &RetrievalConfig,
) -> Result<RefineOutcome<T>> {
    if epochs == 0 {
        return Err(Error::InvalidArgument("refinement needs at least one epoch".into()));
    }
    let mut q = q;
    let mut sizes = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        let dict = match mutual_nn_dictionary(&q.apply(x)?, y, cfg) {
            Ok(d) => d,
            Err(Error::EmptyDictionary { .. }) => {
                return Ok(RefineOutcome { q, dictionary_sizes: sizes, status: RefineStatus::EmptyDictionary { epoch } })
            }
            Err(e) => return Err(e),
        };
        sizes.push(dict.len());
        q = fit_orthogonal(&x.select_rows(&dict.sources()), &y.select_rows(&dict.targets()))?;
    }
    Ok(RefineOutcome { q, dictionary_sizes: sizes, status: RefineStatus::Completed })
}

#[derive(Debug, Clone)]
pub struct ExactRefineOutcome<T> {
    pub q: Orthogonal<T>,
    /// Final matching: row `i` of `x` to row `matching[i]` of `y`.
    pub matching: Permutation,
    pub epochs: usize,
    pub converged: bool,
}

/// Refinement with a full one-to-one matching instead of a mutual-NN
/// dictionary: alternate an exact assignment on `‖xᵢq − yⱼ‖²` with Procrustes
/// until the matching stops changing. Both sets must have the same size.
pub fn refine_exact<T: Real>(
    x: &Matrix<T>,
    y: &Matrix<T>,
    q: Orthogonal<T>,
    max_epochs: usize,
) -> Result<ExactRefineOutcome<T>> {
    if x.shape() != y.shape() {
        return Err(Error::InvalidArgument(format!(
            "exact refinement needs equal-sized sets, got {}x{} and {}x{}",
            x.rows(),
            x.cols(),
            y.rows(),
            y.cols()
        )));
    }
    if max_epochs == 0 {
        return Err(Error::InvalidArgument("refinement needs at least one epoch".into()));
    }
    let mut q = q;
    let mut last: Option<Permutation> = None;
    for epoch in 1..=max_epochs {
        let (p, _) = solve_lap(&squared_distances(&q.apply(x)?, y)?)?;
        if last.as_ref() == Some(&p) {
            return Ok(ExactRefineOutcome { q, matching: p, epochs: epoch - 1, converged: true });
        }
        q = fit_orthogonal(x, &p.apply_rows(y))?;
        last = Some(p);
    }
    let (p, _) = solve_lap(&squared_distances(&q.apply(x)?, y)?)?;
    let converged = last.as_ref() == Some(&p);
    Ok(ExactRefineOutcome { q, matching: p, epochs: max_epochs, converged })
}

#[derive(Debug, Clone)]
pub struct SupervisedFit<T> {
    pub q: Orthogonal<T>,
    pub pairs_used: usize,
    pub pairs_skipped: usize,
}

/// Procrustes on the lexicon pairs whose words are both in vocabulary.
/// A source word with several targets contributes one row per pair.
pub fn fit_lexicon<T: Real>(src: &EmbeddingSet<T>, tgt: &EmbeddingSet<T>, lex: &Lexicon) -> Result<SupervisedFit<T>> {
    let si = src.index();
    let ti = tgt.index();
    let mut rows_x = Vec::new();
    let mut rows_y = Vec::new();
    for (s, t) in lex.pairs() {
        if let (Some(&i), Some(&j)) = (si.get(s.as_str()), ti.get(t.as_str())) {
            rows_x.push(i);
            rows_y.push(j);
        }
    }
    let skipped = lex.len() - rows_x.len();
    if rows_x.is_empty() {
        return Err(Error::NoQueries(format!("none of the {} lexicon pairs is in both vocabularies", lex.len())));
    }
    let q = fit_orthogonal(&src.matrix().select_rows(&rows_x), &tgt.matrix().select_rows(&rows_y))?;
    Ok(SupervisedFit { q, pairs_used: rows_x.len(), pairs_skipped: skipped })
}
