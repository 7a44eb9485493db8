//! Domain types shared across the crate: samples, experts, costs, rewards
//! and per-expert margin parameters.
//!
//! Class labels and expert indices are 0-based internally; all text formats
//! and report columns are 1-based.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Labeled samples with real feature vectors.
///
/// `conditional_label_dist` is optional: empirical datasets treat each row's
/// label as deterministic, while discrete-oracle datasets attach a per-row
/// probability vector over the classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    /// Class per row, in `0..n_classes`.
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub conditional_label_dist: Option<Array2<f64>>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        Self::with_label_dist(features, labels, n_classes, None)
    }

    pub fn with_label_dist(
        features: Array2<f64>,
        labels: Vec<usize>,
        n_classes: usize,
        conditional_label_dist: Option<Array2<f64>>,
    ) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::dims(format!(
                "{} feature rows vs {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if n_classes == 0 {
            return Err(Error::invalid("n_classes must be positive"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
        if let Some(dist) = &conditional_label_dist {
            if dist.nrows() != labels.len() || dist.ncols() != n_classes {
                return Err(Error::dims("conditional label table shape".to_string()));
            }
            for (i, row) in dist.rows().into_iter().enumerate() {
                if row.iter().any(|&v| v < 0.0) {
                    return Err(Error::invalid(format!("negative label probability, row {i}")));
                }
                let sum: f64 = row.sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid(format!(
                        "label distribution row {i} sums to {sum}, expected 1"
                    )));
                }
            }
        }
        Ok(Self {
            features,
            labels,
            n_classes,
            conditional_label_dist,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

/// Fixed first-stage experts: per-sample predicted labels plus inference
/// cost constants.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertPanel {
    /// `(i, k)` holds expert `k`'s predicted class for sample `i`.
    pub predictions: Array2<usize>,
    /// Per-expert inference cost constant, all non-negative.
    pub beta: Vec<f64>,
    /// Class subsets each expert specializes in, when known (synthetic experts).
    pub coverage: Option<Vec<Vec<usize>>>,
}

impl ExpertPanel {
    pub fn new(
        predictions: Array2<usize>,
        beta: Vec<f64>,
        n_classes: usize,
        coverage: Option<Vec<Vec<usize>>>,
    ) -> Result<Self> {
        let p = predictions.ncols();
        if p < 2 {
            return Err(Error::invalid(format!("need at least 2 experts, got {p}")));
        }
        if beta.len() != p {
            return Err(Error::dims(format!("{} betas for {p} experts", beta.len())));
        }
        if beta.iter().any(|&b| !(b >= 0.0)) {
            return Err(Error::invalid("negative or non-finite beta"));
        }
        if predictions.iter().any(|&y| y >= n_classes) {
            return Err(Error::invalid("expert prediction out of class range"));
        }
        if let Some(cov) = &coverage {
            if cov.len() != p {
                return Err(Error::dims("coverage list length".to_string()));
            }
        }
        Ok(Self {
            predictions,
            beta,
            coverage,
        })
    }

    pub fn n_experts(&self) -> usize {
        self.predictions.ncols()
    }

    pub fn n_samples(&self) -> usize {
        self.predictions.nrows()
    }
}

/// How raw expert costs were assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostType {
    /// Misclassification indicator only.
    ErrorOnly,
    /// Misclassification indicator plus the expert's inference constant.
    ErrorPlusCost,
}

impl CostType {
    pub fn as_str(&self) -> &'static str {
        match self {
            CostType::ErrorOnly => "error_only",
            CostType::ErrorPlusCost => "error_plus_cost",
        }
    }
}

/// Per-sample, per-expert target costs, normalized into `[0, 1]`.
///
/// `normalizer` is the positive constant the raw costs were divided by, kept
/// so reported losses can be mapped back to the raw scale.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTensor {
    pub values: Array2<f64>,
    pub cost_type: CostType,
    pub normalizer: f64,
}

impl CostTensor {
    pub fn new(values: Array2<f64>, cost_type: CostType, normalizer: f64) -> Result<Self> {
        if !(normalizer > 0.0) {
            return Err(Error::invalid("normalizer must be positive"));
        }
        if values.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::invalid("cost entry outside [0, 1]"));
        }
        if cost_type == CostType::ErrorOnly {
            let unit = 1.0 / normalizer;
            let binary = values
                .iter()
                .all(|&v| v.abs() < 1e-12 || (v - unit).abs() < 1e-12);
            if !binary {
                return Err(Error::invalid(
                    "error-only costs must be binary up to normalization",
                ));
            }
        }
        Ok(Self {
            values,
            cost_type,
            normalizer,
        })
    }

    /// Build the normalized tensor from an expert panel: raw cost is the
    /// misclassification indicator, plus `beta_k` for [`CostType::ErrorPlusCost`].
    /// The error+cost divisor is `1 + max_k beta_k` so every entry lands in `[0, 1]`.
    pub fn from_panel(dataset: &Dataset, panel: &ExpertPanel, cost_type: CostType) -> Result<Self> {
        if panel.n_samples() != dataset.n_samples() {
            return Err(Error::dims("panel rows vs dataset rows".to_string()));
        }
        let (m, p) = (dataset.n_samples(), panel.n_experts());
        let normalizer = match cost_type {
            CostType::ErrorOnly => 1.0,
            CostType::ErrorPlusCost => {
                1.0 + panel.beta.iter().cloned().fold(0.0f64, f64::max)
            }
        };
        let mut values = Array2::zeros((m, p));
        for i in 0..m {
            for k in 0..p {
                let err = if panel.predictions[(i, k)] == dataset.labels[i] {
                    0.0
                } else {
                    1.0
                };
                let raw = match cost_type {
                    CostType::ErrorOnly => err,
                    CostType::ErrorPlusCost => err + panel.beta[k],
                };
                values[(i, k)] = raw / normalizer;
            }
        }
        Self::new(values, cost_type, normalizer)
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_experts(&self) -> usize {
        self.values.ncols()
    }
}

/// Reward derivation applied to a cost row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardScheme {
    /// Reward an expert with the summed costs of all the others.
    SumOfOthers,
    /// Reward an expert with one minus its own cost.
    Complement,
}

impl RewardScheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            RewardScheme::SumOfOthers => "sum_others",
            RewardScheme::Complement => "complement",
        }
    }

    /// Additive constant that closes the gap between the target loss and the
    /// reward-weighted margin indicators for a given cost row.
    pub fn offset(&self, costs_row: &[f64]) -> f64 {
        let total: f64 = costs_row.iter().sum();
        let p = costs_row.len() as f64;
        match self {
            RewardScheme::SumOfOthers => -(p - 2.0) * total,
            RewardScheme::Complement => total - (p - 1.0),
        }
    }

    /// Rewards for a single cost row. The sum-of-others entries are summed
    /// directly rather than as `total - c_k`, keeping the identity exact in
    /// floating point.
    pub fn rewards_row(&self, costs_row: &[f64]) -> Vec<f64> {
        match self {
            RewardScheme::SumOfOthers => (0..costs_row.len())
                .map(|k| {
                    costs_row
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != k)
                        .map(|(_, &c)| c)
                        .sum()
                })
                .collect(),
            RewardScheme::Complement => costs_row.iter().map(|&c| 1.0 - c).collect(),
        }
    }
}

/// Per-sample, per-expert surrogate weights derived from costs.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTensor {
    pub values: Array2<f64>,
    pub scheme: RewardScheme,
}

impl RewardTensor {
    pub fn n_experts(&self) -> usize {
        self.values.ncols()
    }
}

/// Derive the reward tensor from normalized costs.
pub fn rewards_from_costs(costs: &CostTensor, scheme: RewardScheme) -> RewardTensor {
    let (m, p) = (costs.n_samples(), costs.n_experts());
    let mut values = Array2::zeros((m, p));
    for i in 0..m {
        let row: Vec<f64> = costs.values.row(i).to_vec();
        let rewards = scheme.rewards_row(&row);
        for k in 0..p {
            // Sums of [0,1] terms can dip a hair below zero in float.
            values[(i, k)] = rewards[k].max(0.0);
        }
    }
    RewardTensor { values, scheme }
}

/// Per-expert margin scales, all strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginVector {
    rho: Vec<f64>,
}

impl MarginVector {
    pub fn new(rho: Vec<f64>) -> Result<Self> {
        if rho.is_empty() {
            return Err(Error::invalid("empty margin vector"));
        }
        if rho.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
            return Err(Error::invalid("margin scales must be positive and finite"));
        }
        Ok(Self { rho })
    }

    pub fn uniform(p: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; p])
    }

    pub fn ones(p: usize) -> Self {
        Self { rho: vec![1.0; p] }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.rho
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.rho.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn sum(&self) -> f64 {
        self.rho.iter().sum()
    }
}

impl std::ops::Index<usize> for MarginVector {
    type Output = f64;
    fn index(&self, k: usize) -> &f64 {
        &self.rho[k]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn dataset_rejects_bad_labels() {
        let feats = array![[0.0, 1.0], [1.0, 0.0]];
        assert!(Dataset::new(feats.clone(), vec![0, 3], 3).is_err());
        assert!(Dataset::new(feats, vec![0, 2], 3).is_ok());
    }

    #[test]
    fn dataset_rejects_nonfinite_features() {
        let feats = array![[0.0, f64::NAN]];
        assert!(Dataset::new(feats, vec![0], 2).is_err());
    }

    #[test]
    fn dataset_label_dist_must_normalize() {
        let feats = array![[0.0], [1.0]];
        let bad = array![[0.6, 0.6], [0.5, 0.5]];
        assert!(Dataset::with_label_dist(feats.clone(), vec![0, 1], 2, Some(bad)).is_err());
        let good = array![[0.5, 0.5], [0.25, 0.75]];
        assert!(Dataset::with_label_dist(feats, vec![0, 1], 2, Some(good)).is_ok());
    }

    #[test]
    fn panel_needs_two_experts() {
        let preds = Array2::from_shape_vec((2, 1), vec![0, 1]).unwrap();
        assert!(ExpertPanel::new(preds, vec![0.0], 2, None).is_err());
    }

    #[test]
    fn cost_tensor_range_checked() {
        let vals = array![[0.2, 1.3]];
        assert!(CostTensor::new(vals, CostType::ErrorPlusCost, 1.0).is_err());
    }

    #[test]
    fn error_only_costs_must_be_binary() {
        let vals = array![[0.0, 0.4]];
        assert!(CostTensor::new(vals, CostType::ErrorOnly, 1.0).is_err());
        let vals = array![[0.0, 0.5], [0.5, 0.0]];
        assert!(CostTensor::new(vals, CostType::ErrorOnly, 2.0).is_ok());
    }

    #[test]
    fn reward_rows_match_hand_values() {
        // Two experts: both schemes coincide exactly when the costs sum to 1.
        let costs = CostTensor::new(array![[0.2, 0.8]], CostType::ErrorPlusCost, 1.0).unwrap();
        let sum_others = rewards_from_costs(&costs, RewardScheme::SumOfOthers);
        assert_eq!(sum_others.values, array![[0.8, 0.2]]);
        let complement = rewards_from_costs(&costs, RewardScheme::Complement);
        for (v, want) in complement.values.iter().zip([0.8, 0.2]) {
            assert!((v - want).abs() < 1e-15);
        }
    }

    #[test]
    fn complement_rewards_zero_cost_row() {
        let costs = CostTensor::new(array![[0.0, 0.0, 0.0]], CostType::ErrorPlusCost, 1.0).unwrap();
        let r = rewards_from_costs(&costs, RewardScheme::Complement);
        assert_eq!(r.values, array![[1.0, 1.0, 1.0]]);
    }

    #[test]
    fn sum_of_others_identity_holds_exactly() {
        let costs =
            CostTensor::new(array![[0.1, 0.5, 0.3]], CostType::ErrorPlusCost, 1.0).unwrap();
        let r = rewards_from_costs(&costs, RewardScheme::SumOfOthers);
        for k in 0..3 {
            let manual: f64 = (0..3)
                .filter(|&j| j != k)
                .map(|j| costs.values[(0, j)])
                .sum();
            assert!((r.values[(0, k)] - manual).abs() < 1e-15);
        }
    }

    #[test]
    fn margin_vector_rejects_nonpositive() {
        assert!(MarginVector::new(vec![0.5, 0.0]).is_err());
        assert!(MarginVector::new(vec![0.5, -1.0]).is_err());
        assert!(MarginVector::new(vec![]).is_err());
    }
}
