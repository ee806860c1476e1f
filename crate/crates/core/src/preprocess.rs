//! Row normalization and centering applied before alignment.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Step {
    /// Divide each row by its Euclidean norm.
    UnitNorm,
    /// Subtract the column mean.
    Center,
}

/// Ordered list of preprocessing steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    steps: Vec<Step>,
}

impl PreprocessSpec {
    pub fn new(steps: Vec<Step>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidConfig("preprocess spec must list at least one step".into()));
        }
        Ok(Self { steps })
    }

    /// `[unit-norm, center]`.
    pub fn norm_center() -> Self {
        Self { steps: vec![Step::UnitNorm, Step::Center] }
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }
}

impl Default for PreprocessSpec {
    /// `[unit-norm, center, unit-norm]`: zero mean and unit rows after the last step.
    fn default() -> Self {
        Self { steps: vec![Step::UnitNorm, Step::Center, Step::UnitNorm] }
    }
}

impl FromStr for PreprocessSpec {
    type Err = Error;

    /// Parses a comma list such as `norm,center,norm`.
    fn from_str(s: &str) -> Result<Self> {
        let steps = s
            .split(',')
            .map(|tok| match tok.trim() {
                "norm" | "unit-norm" | "unitnorm" => Ok(Step::UnitNorm),
                "center" | "centre" => Ok(Step::Center),
                other => Err(Error::InvalidConfig(format!("unknown preprocess step '{other}'"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(steps)
    }
}

impl fmt::Display for PreprocessSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self
            .steps
            .iter()
            .map(|s| match s {
                Step::UnitNorm => "norm",
                Step::Center => "center",
            })
            .collect();
        write!(f, "{}", names.join(","))
    }
}

/// Applies `spec` to the rows of `x`; zero-norm rows are reported by index.
pub fn preprocess<T: Real>(x: &Matrix<T>, spec: &PreprocessSpec) -> Result<Matrix<T>> {
    preprocess_labeled(x, spec, None)
}

/// As [`preprocess`], naming the offending row by its label when one is given.
pub fn preprocess_labeled<T: Real>(
    x: &Matrix<T>,
    spec: &PreprocessSpec,
    labels: Option<&[String]>,
) -> Result<Matrix<T>> {
    let mut out = x.clone();
    for step in spec.steps() {
        match step {
            Step::UnitNorm => {
                for i in 0..out.rows() {
                    let row = out.row_mut(i);
                    let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
                    if !(norm > T::zero()) {
                        let name = labels
                            .and_then(|l| l.get(i))
                            .map(|w| format!("'{w}'"))
                            .unwrap_or_else(|| format!("#{i}"));
                        return Err(Error::InvalidInput(format!("zero-norm row {name} cannot be normalized")));
                    }
                    row.iter_mut().for_each(|v| *v /= norm);
                }
            }
            Step::Center => {
                let means = out.col_means();
                for i in 0..out.rows() {
                    for (v, &m) in out.row_mut(i).iter_mut().zip(&means) {
                        *v -= m;
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-2.0..3.0))
    }

    #[test]
    fn unit_norm_is_idempotent() {
        let x = preprocess(&random(10, 4, 1), &"norm".parse().unwrap()).unwrap();
        let again = preprocess(&x, &"norm".parse().unwrap()).unwrap();
        assert!(again.sub(&x).unwrap().frobenius() < 1e-12);
    }

    #[test]
    fn centering_zeroes_column_means() {
        let x = preprocess(&random(10, 4, 2), &"center".parse().unwrap()).unwrap();
        assert!(x.col_means().iter().all(|m| m.abs() < 1e-12));
    }

    #[test]
    fn default_pipeline_matches_stepwise_oracle() {
        let x = random(25, 6, 3);
        let out = preprocess(&x, &PreprocessSpec::default()).unwrap();

        let mut rows: Vec<Vec<f64>> = (0..25).map(|i| x.row(i).to_vec()).collect();
        let normalize = |rows: &mut Vec<Vec<f64>>| {
            for r in rows.iter_mut() {
                let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                r.iter_mut().for_each(|v| *v /= n);
            }
        };
        normalize(&mut rows);
        let after_first: Vec<Vec<f64>> = rows.clone();
        for j in 0..6 {
            let m = rows.iter().map(|r| r[j]).sum::<f64>() / 25.0;
            rows.iter_mut().for_each(|r| r[j] -= m);
        }
        for j in 0..6 {
            assert!(rows.iter().map(|r| r[j]).sum::<f64>().abs() < 1e-12);
        }
        assert!(after_first.iter().all(|r| (r.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12));
        normalize(&mut rows);
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                assert!((out[(i, j)] - v).abs() < 1e-12);
            }
        }
        for n in out.row_norms() {
            assert!((n - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_row_is_named() {
        let mut x = random(3, 2, 4);
        x.row_mut(1).iter_mut().for_each(|v| *v = 0.0);
        let labels = vec!["a".to_string(), "hole".to_string(), "c".to_string()];
        let err = preprocess_labeled(&x, &PreprocessSpec::default(), Some(&labels)).unwrap_err();
        assert!(err.to_string().contains("'hole'"), "{err}");
    }

    #[test]
    fn parse_and_display() {
        let s: PreprocessSpec = "norm,center,norm".parse().unwrap();
        assert_eq!(s, PreprocessSpec::default());
        assert_eq!(s.to_string(), "norm,center,norm");
        assert_eq!("norm,center".parse::<PreprocessSpec>().unwrap(), PreprocessSpec::norm_center());
        assert!("norm,whiten".parse::<PreprocessSpec>().is_err());
        assert!("".parse::<PreprocessSpec>().is_err());
    }
}
