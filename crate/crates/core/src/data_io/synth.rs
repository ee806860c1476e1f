//! Planted instances `y = P*(x·Q*) + σ·noise` with known rotation and matching.
//!
//! Randomness comes from ChaCha8 (a counter-based stream cipher RNG, identical
//! output on every platform for a given seed); Gaussian variates are produced
//! by the Box–Muller transform on that stream.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EmbeddingSet;
use crate::assignment::Permutation;
use crate::error::{Error, Result};
use crate::linalg::{project_orthogonal, Matrix};
use crate::procrustes::Orthogonal;
use crate::scalar::Real;

/// Standard normal variates via Box–Muller on a seeded ChaCha8 stream.
pub struct GaussianStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), spare: None }
    }

    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the logarithm finite.
        let u1 = 1.0 - self.rng.gen::<f64>();
        let u2 = self.rng.gen::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn matrix<T: Real>(&mut self, rows: usize, cols: usize) -> Matrix<T> {
        Matrix::from_fn(rows, cols, |_, _| T::lit(self.next_gaussian()))
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Haar-distributed orthogonal matrix: the orthogonal projection of a Gaussian matrix.
pub fn random_orthogonal<T: Real>(d: usize, seed: u64) -> Orthogonal<T> {
    let mut g = GaussianStream::new(seed);
    loop {
        // A Gaussian matrix is singular with probability zero; retry regardless.
        if let Ok(q) = project_orthogonal(&g.matrix::<T>(d, d)) {
            return q;
        }
    }
}

/// Generator parameters. `Default` plus `n, d, noise_sigma, seed` gives the
/// plain i.i.d. standard Gaussian family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub d: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Column `j` of `x` is scaled by `exp(−decay · j / d)`; 0 keeps `x` isotropic.
    pub spectrum_decay: f64,
    /// When set, `P*` only moves rows within a window of this many positions
    /// (sort by `i + U(0, window)`), so that leading rows of both sets mostly
    /// correspond, as with frequency-ordered vocabularies. `None` draws `P*`
    /// uniformly.
    pub locality: Option<usize>,
}

impl SynthConfig {
    pub fn new(n: usize, d: usize, noise_sigma: f64, seed: u64) -> Self {
        Self { n, d, noise_sigma, seed, spectrum_decay: 0.0, locality: None }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticInstance<T> {
    pub x: EmbeddingSet<T>,
    pub y: EmbeddingSet<T>,
    pub true_rotation: Orthogonal<T>,
    /// Row `i` of `y` is the image of row `true_permutation[i]` of `x`.
    pub true_permutation: Permutation,
    pub noise_sigma: f64,
}

impl<T: Real> SyntheticInstance<T> {
    /// For each row `k` of `x`, the row of `y` it truly corresponds to.
    pub fn truth(&self) -> Permutation {
        self.true_permutation.inverse()
    }

    /// Mean row norm of `x`.
    pub fn mean_norm(&self) -> f64 {
        let norms = self.x.matrix().row_norms();
        norms.iter().map(|v| v.as_f64()).sum::<f64>() / norms.len() as f64
    }
}

/// Plain generator: `x` i.i.d. standard Gaussian, uniform `P*`.
pub fn synth_generate<T: Real>(n: usize, d: usize, noise_sigma: f64, seed: u64) -> Result<SyntheticInstance<T>> {
    synth_generate_with(&SynthConfig::new(n, d, noise_sigma, seed))
}

/// `cfg` with `noise_sigma = relative · E‖x‖`, the mean row norm of the
/// noise-free source set (which does not depend on the noise level).
pub fn with_relative_noise(cfg: &SynthConfig, relative: f64) -> Result<SynthConfig> {
    if !(relative >= 0.0) || !relative.is_finite() {
        return Err(Error::InvalidArgument(format!("relative noise must be finite and ≥ 0, got {relative}")));
    }
    let clean = synth_generate_with::<f64>(&SynthConfig { noise_sigma: 0.0, ..cfg.clone() })?;
    Ok(SynthConfig { noise_sigma: relative * clean.mean_norm(), ..cfg.clone() })
}

pub fn synth_generate_with<T: Real>(cfg: &SynthConfig) -> Result<SyntheticInstance<T>> {
    let SynthConfig { n, d, noise_sigma, seed, spectrum_decay, locality } = *cfg;
    if d < 2 || n < d {
        return Err(Error::InvalidArgument(format!("synthetic instance needs n ≥ d ≥ 2, got n={n}, d={d}")));
    }
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("noise sigma must be finite and ≥ 0, got {noise_sigma}")));
    }
    if !spectrum_decay.is_finite() {
        return Err(Error::InvalidArgument("spectrum decay must be finite".into()));
    }
    let mut g = GaussianStream::new(seed);
    let scales: Vec<f64> = (0..d).map(|j| (-spectrum_decay * j as f64 / d as f64).exp()).collect();
    let x = Matrix::from_fn(n, d, |_, j| T::lit(g.next_gaussian() * scales[j]));
    let q = loop {
        if let Ok(q) = project_orthogonal(&g.matrix::<T>(d, d)) {
            break q;
        }
    };
    let mut order: Vec<usize> = (0..n).collect();
    match locality {
        None => order.shuffle(g.rng()),
        Some(w) => {
            let keys: Vec<f64> = (0..n).map(|i| i as f64 + g.rng().gen::<f64>() * w as f64).collect();
            order.sort_by(|&a, &b| keys[a].partial_cmp(&keys[b]).unwrap().then(a.cmp(&b)));
        }
    }
    let perm = Permutation::new(order)?;
    let mut y = perm.apply_rows(&q.apply(&x)?);
    if noise_sigma > 0.0 {
        let s = T::lit(noise_sigma);
        for v in y.data_mut() {
            *v += s * T::lit(g.next_gaussian());
        }
    }
    let x_labels = (0..n).map(|k| format!("s{k}")).collect();
    // Target rows are labelled by the source row they come from.
    let y_labels = perm.as_slice().iter().map(|&k| format!("t{k}")).collect();
    Ok(SyntheticInstance {
        x: EmbeddingSet::new(x_labels, x)?,
        y: EmbeddingSet::new(y_labels, y)?,
        true_rotation: q,
        true_permutation: perm,
        noise_sigma,
    })
}
