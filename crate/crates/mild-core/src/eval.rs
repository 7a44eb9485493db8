//! Target-loss evaluation and the reward reformulation identities the rest
//! of the crate is measured against.

use crate::error::{Error, Result};
use crate::router::{argmax_tie_high, margin_of_scores, Router};
use crate::types::{CostTensor, Dataset, RewardScheme};

/// Mean deferral loss and the fraction of samples routed to each expert.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mean_deferral_loss: f64,
    pub deferral_ratios: Vec<f64>,
    pub n_samples: usize,
}

/// Evaluate a router against a labeled dataset and its cost tensor.
pub fn evaluate(router: &Router, dataset: &Dataset, costs: &CostTensor) -> Result<EvalReport> {
    let m = dataset.n_samples();
    if m == 0 {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    if costs.n_samples() != m {
        return Err(Error::dims("cost rows vs dataset rows".to_string()));
    }
    if costs.n_experts() != router.n_experts() {
        return Err(Error::dims("cost columns vs router heads".to_string()));
    }
    let phi = router.feature_map.apply_matrix(&dataset.features)?;
    evaluate_mapped(router, &phi, costs, None)
}

/// Evaluation over pre-mapped features, optionally restricted to a subset of
/// row indices. Accumulation order is fixed so repeated runs are bit-identical.
pub fn evaluate_mapped(
    router: &Router,
    phi: &ndarray::Array2<f64>,
    costs: &CostTensor,
    subset: Option<&[usize]>,
) -> Result<EvalReport> {
    let p = router.n_experts();
    let indices: Vec<usize> = match subset {
        Some(s) => s.to_vec(),
        None => (0..phi.nrows()).collect(),
    };
    if indices.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty sample set"));
    }
    let mut total = 0.0;
    let mut counts = vec![0usize; p];
    for &i in &indices {
        let scores = router.scores_mapped(phi.row(i));
        let choice = argmax_tie_high(&scores);
        total += costs.values[(i, choice)];
        counts[choice] += 1;
    }
    let n = indices.len();
    Ok(EvalReport {
        mean_deferral_loss: total / n as f64,
        deferral_ratios: counts.iter().map(|&c| c as f64 / n as f64).collect(),
        n_samples: n,
    })
}

/// Reward mass normalized into a conditional distribution over experts.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertConditional {
    pub probs: Vec<f64>,
    /// Expected total reward at the input; the scale factor of the
    /// input-expert loss.
    pub normalization: f64,
    /// Set when the reward mass vanished and `probs` fell back to uniform.
    pub zero_mass: bool,
}

/// Conditional expert distribution induced by per-label reward rows and a
/// label distribution: expected reward per expert divided by total expected
/// reward.
pub fn conditional_expert_dist(
    reward_rows: &ndarray::Array2<f64>,
    label_dist: &[f64],
) -> Result<ExpertConditional> {
    if reward_rows.nrows() != label_dist.len() {
        return Err(Error::dims("reward rows vs label distribution".to_string()));
    }
    let sum: f64 = label_dist.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || label_dist.iter().any(|&v| v < 0.0) {
        return Err(Error::invalid("label distribution must be a probability vector"));
    }
    if reward_rows.iter().any(|&v| v < 0.0) {
        return Err(Error::invalid("negative reward"));
    }
    let p = reward_rows.ncols();
    let mut expected = vec![0.0; p];
    for (y, row) in reward_rows.rows().into_iter().enumerate() {
        for k in 0..p {
            expected[k] += label_dist[y] * row[k];
        }
    }
    let normalization: f64 = expected.iter().sum();
    if normalization <= 0.0 {
        return Ok(ExpertConditional {
            probs: vec![1.0 / p as f64; p],
            normalization: 0.0,
            zero_mass: true,
        });
    }
    Ok(ExpertConditional {
        probs: expected.iter().map(|&e| e / normalization).collect(),
        normalization,
        zero_mass: false,
    })
}

/// Absolute gap between the target deferral loss and its reward-weighted
/// margin reformulation on one sample.
///
/// Exact (up to float round-off) whenever the score vector has a unique
/// maximum; a tied maximum flips the selected expert's margin indicator.
pub fn reformulation_residual(
    scores: &[f64],
    costs_row: &[f64],
    scheme: RewardScheme,
) -> Result<f64> {
    let p = scores.len();
    if p < 2 {
        return Err(Error::invalid("need at least 2 experts"));
    }
    if costs_row.len() != p {
        return Err(Error::dims("cost row vs scores".to_string()));
    }
    let target = costs_row[argmax_tie_high(scores)];
    let rewards = scheme.rewards_row(costs_row);
    let mut reformulated = scheme.offset(costs_row);
    for k in 0..p {
        if margin_of_scores(scores, k)? <= 0.0 {
            reformulated += rewards[k];
        }
    }
    Ok((target - reformulated).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::router::FeatureMap;
    use crate::types::CostType;
    use ndarray::{array, Array2};

    #[test]
    fn residual_vanishes_on_hand_example() {
        // Two experts, first selected: both reward derivations close the gap.
        let r1 = reformulation_residual(&[1.0, 0.0], &[0.2, 0.8], RewardScheme::SumOfOthers)
            .unwrap();
        assert!(r1 < 1e-15);
        let r2 =
            reformulation_residual(&[1.0, 0.0], &[0.2, 0.8], RewardScheme::Complement).unwrap();
        assert!(r2 < 1e-15);
    }

    #[test]
    fn residual_vanishes_on_zero_costs() {
        let r = reformulation_residual(&[0.3, -0.4], &[0.0, 0.0], RewardScheme::Complement)
            .unwrap();
        assert!(r < 1e-15);
    }

    #[test]
    fn residual_randomized_both_schemes() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..500 {
            let p = rng.random_range(2..=6);
            let scores: Vec<f64> = (0..p).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
            let costs: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
            for scheme in [RewardScheme::SumOfOthers, RewardScheme::Complement] {
                let r = reformulation_residual(&scores, &costs, scheme).unwrap();
                assert!(r < 1e-12, "residual {r} for scheme {scheme:?}");
            }
        }
    }

    #[test]
    fn conditional_dist_deterministic_label() {
        let rewards = array![[0.8, 0.2]];
        let d = conditional_expert_dist(&rewards, &[1.0]).unwrap();
        assert!((d.probs[0] - 0.8).abs() < 1e-15);
        assert!((d.probs[1] - 0.2).abs() < 1e-15);
        assert!((d.normalization - 1.0).abs() < 1e-15);
        assert!(!d.zero_mass);
    }

    #[test]
    fn conditional_dist_symmetric_rewards() {
        let rewards = array![[0.3, 0.3, 0.3]];
        let d = conditional_expert_dist(&rewards, &[1.0]).unwrap();
        for &q in &d.probs {
            assert!((q - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((d.normalization - 0.9).abs() < 1e-15);
    }

    #[test]
    fn conditional_dist_averages_rows() {
        let rewards = array![[1.0, 0.0], [0.0, 1.0]];
        let d = conditional_expert_dist(&rewards, &[0.5, 0.5]).unwrap();
        assert!((d.probs[0] - 0.5).abs() < 1e-15);
        assert!((d.normalization - 1.0).abs() < 1e-15);
    }

    #[test]
    fn conditional_dist_flags_zero_mass() {
        let rewards = array![[0.0, 0.0]];
        let d = conditional_expert_dist(&rewards, &[1.0]).unwrap();
        assert!(d.zero_mass);
        assert_eq!(d.probs, vec![0.5, 0.5]);
    }

    #[test]
    fn evaluate_constant_column() {
        let m = 10;
        let feats = Array2::from_elem((m, 2), 1.0);
        let ds = Dataset::new(feats, vec![0; m], 2).unwrap();
        // Constant inputs with these heads score (2, 0): expert 1 always wins.
        let router = Router::new(array![[1.0, 1.0], [0.0, 0.0]], FeatureMap::identity(2))
            .unwrap();
        let costs = CostTensor::new(
            Array2::from_shape_fn((m, 2), |(_, k)| if k == 0 { 0.54 } else { 0.9 }),
            CostType::ErrorPlusCost,
            1.0,
        )
        .unwrap();
        let report = evaluate(&router, &ds, &costs).unwrap();
        assert!((report.mean_deferral_loss - 0.54).abs() < 1e-15);
        assert_eq!(report.deferral_ratios, vec![1.0, 0.0]);
    }

    #[test]
    fn evaluate_single_sample_ratio_is_unit_mass() {
        let ds = Dataset::new(array![[1.0, 0.0]], vec![0], 2).unwrap();
        let router = Router::new(array![[1.0, 0.0], [0.0, 1.0]], FeatureMap::identity(2))
            .unwrap();
        let costs =
            CostTensor::new(array![[0.3, 0.7]], CostType::ErrorPlusCost, 1.0).unwrap();
        let report = evaluate(&router, &ds, &costs).unwrap();
        assert_eq!(report.deferral_ratios, vec![1.0, 0.0]);
    }

    #[test]
    fn evaluate_rejects_empty_dataset() {
        let ds = Dataset::new(Array2::zeros((0, 2)), vec![], 2).unwrap();
        let router = Router::zeros(2, FeatureMap::identity(2)).unwrap();
        let costs = CostTensor::new(Array2::zeros((0, 2)), CostType::ErrorOnly, 1.0).unwrap();
        assert!(evaluate(&router, &ds, &costs).is_err());
    }
}
