//! Scoring functions over (input, expert) pairs: a fixed feature map with
//! one linear head per expert.

use ndarray::{Array1, Array2, ArrayView1};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Feature map applied to raw inputs before the linear heads.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    /// Raw features pass through unchanged.
    Identity { input_dim: usize },
    /// Random Fourier features approximating an RBF kernel of the given
    /// bandwidth. Projection and phases are derived from `seed` alone,
    /// so the map is reconstructible from its parameters.
    RandomFourier {
        input_dim: usize,
        output_dim: usize,
        bandwidth: f64,
        seed: u64,
    },
}

impl FeatureMap {
    pub fn identity(input_dim: usize) -> Self {
        FeatureMap::Identity { input_dim }
    }

    pub fn random_fourier(input_dim: usize, output_dim: usize, bandwidth: f64, seed: u64) -> Self {
        FeatureMap::RandomFourier {
            input_dim,
            output_dim,
            bandwidth,
            seed,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            FeatureMap::Identity { input_dim } => *input_dim,
            FeatureMap::RandomFourier { input_dim, .. } => *input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            FeatureMap::Identity { input_dim } => *input_dim,
            FeatureMap::RandomFourier { output_dim, .. } => *output_dim,
        }
    }

    /// Map a single input.
    pub fn apply(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::dims(format!(
                "input of dim {} for feature map of dim {}",
                x.len(),
                self.input_dim()
            )));
        }
        match self {
            FeatureMap::Identity { .. } => Ok(x.to_owned()),
            FeatureMap::RandomFourier { .. } => {
                let (w, b, scale) = self.fourier_params();
                let mut out = w.dot(&x);
                for (o, &phase) in out.iter_mut().zip(b.iter()) {
                    *o = scale * (*o + phase).cos();
                }
                Ok(out)
            }
        }
    }

    /// Map every row of a sample matrix.
    pub fn apply_matrix(&self, xs: &Array2<f64>) -> Result<Array2<f64>> {
        if xs.ncols() != self.input_dim() {
            return Err(Error::dims(format!(
                "inputs of dim {} for feature map of dim {}",
                xs.ncols(),
                self.input_dim()
            )));
        }
        match self {
            FeatureMap::Identity { .. } => Ok(xs.clone()),
            FeatureMap::RandomFourier { .. } => {
                let (w, b, scale) = self.fourier_params();
                let mut out = xs.dot(&w.t());
                for mut row in out.rows_mut() {
                    for (o, &phase) in row.iter_mut().zip(b.iter()) {
                        *o = scale * (*o + phase).cos();
                    }
                }
                Ok(out)
            }
        }
    }

    fn fourier_params(&self) -> (Array2<f64>, Array1<f64>, f64) {
        let FeatureMap::RandomFourier {
            input_dim,
            output_dim,
            bandwidth,
            seed,
        } = self
        else {
            unreachable!("fourier_params on identity map")
        };
        let mut rng = ChaCha8Rng::seed_from_u64(*seed);
        let normal = Normal::new(0.0, 1.0 / bandwidth).expect("positive bandwidth");
        let mut w = Array2::zeros((*output_dim, *input_dim));
        for v in w.iter_mut() {
            *v = normal.sample(&mut rng);
        }
        let mut b = Array1::zeros(*output_dim);
        for v in b.iter_mut() {
            *v = rng.random::<f64>() * std::f64::consts::TAU;
        }
        let scale = (2.0 / *output_dim as f64).sqrt();
        (w, b, scale)
    }
}

/// Index of the largest score, ties broken toward the highest index.
pub fn argmax_tie_high(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s >= scores[best] {
            best = k;
        }
    }
    best
}

/// Linear per-expert score heads over a fixed feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct Router {
    /// One row of head weights per expert, over the mapped feature space.
    pub weights: Array2<f64>,
    pub feature_map: FeatureMap,
}

impl Router {
    pub fn new(weights: Array2<f64>, feature_map: FeatureMap) -> Result<Self> {
        if weights.ncols() != feature_map.output_dim() {
            return Err(Error::dims(format!(
                "{} head columns for feature dim {}",
                weights.ncols(),
                feature_map.output_dim()
            )));
        }
        if weights.nrows() < 2 {
            return Err(Error::invalid("router needs at least 2 expert heads"));
        }
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite router weight"));
        }
        Ok(Self {
            weights,
            feature_map,
        })
    }

    pub fn zeros(n_experts: usize, feature_map: FeatureMap) -> Result<Self> {
        Self::new(
            Array2::zeros((n_experts, feature_map.output_dim())),
            feature_map,
        )
    }

    pub fn n_experts(&self) -> usize {
        self.weights.nrows()
    }

    /// All expert scores for one input.
    pub fn scores(&self, x: ArrayView1<f64>) -> Result<Vec<f64>> {
        let phi = self.feature_map.apply(x)?;
        Ok(self.weights.dot(&phi).to_vec())
    }

    /// Scores for an already feature-mapped input.
    pub fn scores_mapped(&self, phi: ArrayView1<f64>) -> Vec<f64> {
        self.weights.dot(&phi).to_vec()
    }

    /// Selected expert for one input.
    pub fn predict(&self, x: ArrayView1<f64>) -> Result<usize> {
        Ok(argmax_tie_high(&self.scores(x)?))
    }

    /// Score of expert `k` minus the best competing score.
    pub fn margin(&self, x: ArrayView1<f64>, k: usize) -> Result<f64> {
        let scores = self.scores(x)?;
        margin_of_scores(&scores, k)
    }

    /// Cost incurred by routing `x` to the selected expert, given the
    /// per-expert cost row of the labeled sample.
    pub fn deferral_loss(&self, x: ArrayView1<f64>, costs_row: &[f64]) -> Result<f64> {
        if costs_row.len() != self.n_experts() {
            return Err(Error::dims(format!(
                "{} cost entries for {} experts",
                costs_row.len(),
                self.n_experts()
            )));
        }
        Ok(costs_row[self.predict(x)?])
    }
}

/// Margin of expert `k` within a raw score vector.
pub fn margin_of_scores(scores: &[f64], k: usize) -> Result<f64> {
    let p = scores.len();
    if p < 2 {
        return Err(Error::invalid("margin needs at least 2 experts"));
    }
    if k >= p {
        return Err(Error::invalid(format!("expert {k} out of range {p}")));
    }
    let best_other = scores
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != k)
        .map(|(_, &s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(scores[k] - best_other)
}
