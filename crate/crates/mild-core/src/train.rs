//! Optimization layer: regularized empirical objectives, mini-batch gradient
//! descent, the closed-form margin-scale allocation with its validation
//! neighborhood, and the generalization-bound term it minimizes.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::{evaluate_mapped, EvalReport};
use crate::losses::{mild_surrogate_grad, surrogate_kernel, SurrogateSpec};
use crate::router::{FeatureMap, Router};
use crate::types::{
    rewards_from_costs, CostTensor, Dataset, MarginVector, RewardScheme, RewardTensor,
};

/// How the per-expert margin scales are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum RhoMode {
    Fixed(MarginVector),
    /// Closed-form allocation from group counts and feature norms, scaled to
    /// a total budget of `rho_bar`.
    AutoFormula { rho_bar: f64 },
    /// Formula allocation refined by a per-coordinate grid search on a
    /// validation split.
    AutoWithValidation {
        rho_bar: f64,
        neighborhood_halfwidth: f64,
        step: f64,
    },
}

impl RhoMode {
    pub fn auto(rho_bar: f64) -> Self {
        RhoMode::AutoFormula { rho_bar }
    }

    pub fn auto_validated(rho_bar: f64) -> Self {
        RhoMode::AutoWithValidation {
            rho_bar,
            neighborhood_halfwidth: 5.0,
            step: 1.0,
        }
    }
}

/// Which deferral objective to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Reward-weighted surrogate with per-expert margin scales.
    Mild,
    /// Baseline: the same surrogate with unit margin scales and
    /// sum-of-others rewards.
    Tdef,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Mild => "mild",
            Method::Tdef => "tdef",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// L2 regularization strength on the head weights.
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// 0 means full batch.
    pub batch_size: usize,
    pub seed: u64,
    pub rho_mode: RhoMode,
    pub feature_map: FeatureMap,
    /// Fraction of the shuffled dataset held out for validation.
    pub holdout_fraction: f64,
}

impl TrainConfig {
    pub fn new(feature_map: FeatureMap) -> Self {
        TrainConfig {
            lambda: 1e-3,
            learning_rate: 0.5,
            epochs: 100,
            batch_size: 0,
            seed: 0,
            rho_mode: RhoMode::auto(1.0),
            feature_map,
            holdout_fraction: 0.2,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid("lambda must be non-negative"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be positive"));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::invalid("holdout fraction must lie in (0, 1)"));
        }
        match &self.rho_mode {
            RhoMode::Fixed(_) => {}
            RhoMode::AutoFormula { rho_bar }
            | RhoMode::AutoWithValidation { rho_bar, .. } => {
                if !(rho_bar > &0.0) {
                    return Err(Error::invalid("rho_bar must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Ingredients of the explicit complexity term: per-group sample counts and
/// feature-norm bounds, the hypothesis-norm bound, and the confidence level.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    pub group_counts: Vec<usize>,
    pub group_norms: Vec<f64>,
    pub hypothesis_norm: f64,
    pub n_samples: usize,
    pub n_experts: usize,
    pub delta: f64,
}

impl BoundInputs {
    pub fn new(
        group_counts: Vec<usize>,
        group_norms: Vec<f64>,
        hypothesis_norm: f64,
        n_experts: usize,
        delta: f64,
    ) -> Result<Self> {
        if group_counts.len() != group_norms.len() {
            return Err(Error::dims("group counts vs norms".to_string()));
        }
        if group_norms.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::invalid("group norms must be positive"));
        }
        if !(hypothesis_norm > 0.0) {
            return Err(Error::invalid("hypothesis norm must be positive"));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid("delta must lie in (0, 1)"));
        }
        let n_samples = group_counts.iter().sum();
        Ok(Self {
            group_counts,
            group_norms,
            hypothesis_norm,
            n_samples,
            n_experts,
            delta,
        })
    }
}

/// Floor assigned to groups with no samples, as a fraction of `rho_bar / p`.
const EMPTY_GROUP_RHO_FLOOR: f64 = 1e-3;

/// Closed-form margin-scale allocation: `rho_j` proportional to
/// `(m_j * X_j^2)^(1/3)`, scaled so the scales of non-empty groups sum to
/// `rho_bar`. Empty groups get a small positive floor; they carry no
/// empirical loss, so the floor only keeps the bound evaluator finite.
pub fn optimal_rho(
    group_counts: &[usize],
    group_norms: &[f64],
    rho_bar: f64,
) -> Result<MarginVector> {
    let p = group_counts.len();
    if p == 0 || group_norms.len() != p {
        return Err(Error::dims("group counts vs norms".to_string()));
    }
    if !(rho_bar > 0.0) {
        return Err(Error::invalid("rho_bar must be positive"));
    }
    if group_counts.iter().all(|&m| m == 0) {
        return Err(Error::invalid("all groups empty"));
    }
    if group_norms.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::invalid("group norms must be positive"));
    }
    let weights: Vec<f64> = group_counts
        .iter()
        .zip(group_norms)
        .map(|(&m, &x)| (m as f64 * x * x).cbrt())
        .collect();
    let total: f64 = weights.iter().sum();
    let floor = EMPTY_GROUP_RHO_FLOOR * rho_bar / p as f64;
    let rho: Vec<f64> = weights
        .iter()
        .map(|&w| if w > 0.0 { rho_bar * w / total } else { floor })
        .collect();
    MarginVector::new(rho)
}

/// Explicit complexity term of the margin bound:
/// `(4 sqrt(2) p F / m) * sqrt(sum_j m_j X_j^2 / rho_j^2)`.
pub fn bound_second_term(inputs: &BoundInputs, rhos: &MarginVector) -> Result<f64> {
    let groups = inputs.group_counts.len();
    if rhos.len() != groups {
        return Err(Error::dims("margin scales vs groups".to_string()));
    }
    let mut acc = 0.0;
    for j in 0..groups {
        let x = inputs.group_norms[j];
        acc += inputs.group_counts[j] as f64 * x * x / (rhos[j] * rhos[j]);
    }
    Ok(4.0 * std::f64::consts::SQRT_2 * inputs.n_experts as f64 * inputs.hypothesis_norm
        / inputs.n_samples as f64
        * acc.sqrt())
}

/// Per-sample group: the lowest-cost expert, ties toward the highest index.
pub fn cost_groups(costs: &CostTensor) -> Vec<usize> {
    let (m, p) = (costs.n_samples(), costs.n_experts());
    (0..m)
        .map(|i| {
            let mut best = 0;
            for k in 0..p {
                if costs.values[(i, k)] <= costs.values[(i, best)] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Group counts and empirical max feature norms over a subset of rows.
/// Empty groups fall back to the global max norm so downstream bound
/// evaluation stays defined.
pub fn group_statistics(
    phi: &Array2<f64>,
    groups: &[usize],
    subset: &[usize],
    n_experts: usize,
) -> (Vec<usize>, Vec<f64>) {
    let mut counts = vec![0usize; n_experts];
    let mut norms = vec![0.0f64; n_experts];
    let mut global = 0.0f64;
    for &i in subset {
        let row = phi.row(i);
        let norm = row.dot(&row).sqrt();
        global = global.max(norm);
        counts[groups[i]] += 1;
        norms[groups[i]] = norms[groups[i]].max(norm);
    }
    let fallback = if global > 0.0 { global } else { 1.0 };
    for n in norms.iter_mut() {
        if *n == 0.0 {
            *n = fallback;
        }
    }
    (counts, norms)
}

/// Mean surrogate value of a router over a dataset, without the
/// regularization term.
pub fn empirical_margin_loss(
    router: &Router,
    dataset: &Dataset,
    rewards: &RewardTensor,
    rhos: &MarginVector,
    spec: SurrogateSpec,
) -> Result<f64> {
    let m = dataset.n_samples();
    if m == 0 {
        return Err(Error::invalid("empty dataset"));
    }
    if rewards.values.nrows() != m || rewards.n_experts() != router.n_experts() {
        return Err(Error::dims("rewards vs dataset/router".to_string()));
    }
    let phi = router.feature_map.apply_matrix(&dataset.features)?;
    let p = router.n_experts();
    let mut total = 0.0;
    for i in 0..m {
        let scores = router.scores_mapped(phi.row(i));
        for k in 0..p {
            let reward = rewards.values[(i, k)];
            if reward == 0.0 {
                continue;
            }
            total += reward * surrogate_kernel(&scores, k, rhos, spec)?;
        }
    }
    Ok(total / m as f64)
}

/// Regularized objective and its gradient at the given head weights, over a
/// subset of pre-mapped rows. This is the exact quantity the trainer steps
/// on; tests difference it against central finite differences.
pub fn objective_and_gradient(
    weights: &Array2<f64>,
    phi: &Array2<f64>,
    rewards: &Array2<f64>,
    rows: &[usize],
    rhos: &MarginVector,
    lambda: f64,
) -> Result<(f64, Array2<f64>)> {
    let p = weights.nrows();
    if rows.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let inv = 1.0 / rows.len() as f64;
    let mut value = 0.0;
    let mut grad = Array2::zeros(weights.raw_dim());
    for &i in rows {
        let row = phi.row(i);
        let scores = weights.dot(&row).to_vec();
        let rewards_row: Vec<f64> = rewards.row(i).to_vec();
        value += inv * crate::losses::mild_surrogate(&scores, &rewards_row, rhos)?;
        let g_scores = mild_surrogate_grad(&scores, &rewards_row, rhos)?;
        for k in 0..p {
            if g_scores[k] == 0.0 {
                continue;
            }
            let mut grad_row = grad.row_mut(k);
            grad_row.scaled_add(inv * g_scores[k], &row);
        }
    }
    let norm2: f64 = weights.iter().map(|w| w * w).sum();
    value += lambda * norm2;
    grad.scaled_add(2.0 * lambda, weights);
    Ok((value, grad))
}

/// One epoch-level record of the training trace.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStat {
    pub epoch: usize,
    /// Full-training-split regularized objective after the epoch's updates.
    pub objective: f64,
    pub val_deferral_loss: f64,
    pub val_ratios: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub router: Router,
    pub trace: Vec<EpochStat>,
    pub rhos: MarginVector,
    pub scheme: RewardScheme,
    /// Indices of the held-out rows in the original dataset order.
    pub holdout: Vec<usize>,
    pub final_validation: EvalReport,
}

/// Deterministic shuffled split: the last `holdout_fraction` of the
/// seed-shuffled index list is held out. Every consumer of a seed sees the
/// same split, so trained routers and oracle baselines are compared on
/// identical rows.
pub fn split_indices(m: usize, seed: u64, holdout_fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let mut indices: Vec<usize> = (0..m).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let n_holdout = ((m as f64 * holdout_fraction).round() as usize).clamp(1, m - 1);
    let split = m - n_holdout;
    let train = indices[..split].to_vec();
    let holdout = indices[split..].to_vec();
    (train, holdout)
}

/// Train a router with mini-batch gradient descent on the reward-weighted
/// surrogate. The baseline method forces unit margin scales and
/// sum-of-others rewards through the same code path, so the two methods
/// coincide exactly under that configuration.
pub fn train(
    dataset: &Dataset,
    costs: &CostTensor,
    scheme: RewardScheme,
    config: &TrainConfig,
    method: Method,
) -> Result<TrainOutcome> {
    config.validate()?;
    let m = dataset.n_samples();
    if m < 2 {
        return Err(Error::invalid("need at least 2 samples to train"));
    }
    if costs.n_samples() != m {
        return Err(Error::dims("cost rows vs dataset rows".to_string()));
    }
    let p = costs.n_experts();

    let (scheme, rho_mode) = match method {
        Method::Mild => (scheme, config.rho_mode.clone()),
        Method::Tdef => (
            RewardScheme::SumOfOthers,
            RhoMode::Fixed(MarginVector::ones(p)),
        ),
    };

    let rewards = rewards_from_costs(costs, scheme);
    let phi = config.feature_map.apply_matrix(&dataset.features)?;
    let (train_rows, holdout) = split_indices(m, config.seed, config.holdout_fraction);

    let rhos = match &rho_mode {
        RhoMode::Fixed(r) => {
            if r.len() != p {
                return Err(Error::dims("fixed margin scales vs experts".to_string()));
            }
            r.clone()
        }
        RhoMode::AutoFormula { rho_bar } => {
            let groups = cost_groups(costs);
            let (counts, norms) = group_statistics(&phi, &groups, &train_rows, p);
            optimal_rho(&counts, &norms, *rho_bar)?
        }
        RhoMode::AutoWithValidation { .. } => {
            select_rho(dataset, costs, scheme, config, config.holdout_fraction)?
        }
    };

    train_with_rhos(
        &phi,
        &rewards,
        costs,
        &train_rows,
        &holdout,
        &rhos,
        scheme,
        config,
    )
}

#[allow(clippy::too_many_arguments)]
fn train_with_rhos(
    phi: &Array2<f64>,
    rewards: &RewardTensor,
    costs: &CostTensor,
    train_rows: &[usize],
    holdout: &[usize],
    rhos: &MarginVector,
    scheme: RewardScheme,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let p = costs.n_experts();
    let dim = phi.ncols();
    let mut weights: Array2<f64> = Array2::zeros((p, dim));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let batch = if config.batch_size == 0 {
        train_rows.len()
    } else {
        config.batch_size.min(train_rows.len())
    };

    let mut order = train_rows.to_vec();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        if batch < order.len() {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            let (_, grad) = objective_and_gradient(
                &weights,
                phi,
                &rewards.values,
                chunk,
                rhos,
                config.lambda,
            )?;
            weights.scaled_add(-config.learning_rate, &grad);
        }
        let (objective, _) = objective_and_gradient(
            &weights,
            phi,
            &rewards.values,
            train_rows,
            rhos,
            config.lambda,
        )?;
        if !objective.is_finite() {
            return Err(Error::TrainingDiverged { epoch, objective });
        }
        let router = Router::new(weights.clone(), config.feature_map.clone())?;
        let val = evaluate_mapped(&router, phi, costs, Some(holdout))?;
        trace.push(EpochStat {
            epoch,
            objective,
            val_deferral_loss: val.mean_deferral_loss,
            val_ratios: val.deferral_ratios,
        });
    }

    let router = Router::new(weights, config.feature_map.clone())?;
    let final_validation = evaluate_mapped(&router, phi, costs, Some(holdout))?;
    Ok(TrainOutcome {
        router,
        trace,
        rhos: rhos.clone(),
        scheme,
        holdout: holdout.to_vec(),
        final_validation,
    })
}

/// Grid-search the margin scales around the formula allocation, scoring
/// candidates by validation deferral loss.
///
/// Offsets in `{-halfwidth, ..., +halfwidth}` (step-spaced) are applied to
/// each coordinate of the normalized allocation in turn, one coordinate
/// descent pass in index order; non-positive candidates are skipped. The
/// uniform allocation joins as a final candidate. Ties keep the earlier
/// candidate, so an all-tie search returns the formula allocation.
pub fn select_rho(
    dataset: &Dataset,
    costs: &CostTensor,
    scheme: RewardScheme,
    config: &TrainConfig,
    validation_split: f64,
) -> Result<MarginVector> {
    let RhoMode::AutoWithValidation {
        rho_bar,
        neighborhood_halfwidth,
        step,
    } = config.rho_mode
    else {
        return Err(Error::invalid(
            "select_rho requires the validated margin-scale mode",
        ));
    };
    let m = dataset.n_samples();
    let n_val = (m as f64 * validation_split).round() as usize;
    if n_val < 10 {
        return Err(Error::invalid(format!(
            "validation split of {n_val} samples is too small (need >= 10)"
        )));
    }
    if !(step > 0.0) {
        return Err(Error::invalid("grid step must be positive"));
    }

    let p = costs.n_experts();
    let phi = config.feature_map.apply_matrix(&dataset.features)?;
    let (train_rows, holdout) = split_indices(m, config.seed, validation_split);
    let groups = cost_groups(costs);
    let (counts, norms) = group_statistics(&phi, &groups, &train_rows, p);
    let center = optimal_rho(&counts, &norms, rho_bar)?;
    let rewards = rewards_from_costs(costs, scheme);

    let score = |rhos: &MarginVector| -> Result<f64> {
        let outcome = train_with_rhos(
            &phi,
            &rewards,
            costs,
            &train_rows,
            &holdout,
            rhos,
            scheme,
            config,
        )?;
        Ok(outcome.final_validation.mean_deferral_loss)
    };

    let mut best = center.clone();
    let mut best_dl = score(&best)?;

    let mut offsets = vec![0.0];
    let mut d = step;
    while d <= neighborhood_halfwidth + 1e-12 {
        offsets.push(-d);
        offsets.push(d);
        d += step;
    }

    // One coordinate-descent pass; offsets act on the normalized allocation
    // and are rescaled by the budget.
    for j in 0..p {
        for &offset in &offsets[1..] {
            let mut candidate = best.as_slice().to_vec();
            candidate[j] = center[j] + offset * rho_bar;
            if candidate[j] <= 0.0 {
                continue;
            }
            let candidate = MarginVector::new(candidate)?;
            let dl = score(&candidate)?;
            if dl < best_dl - 1e-12 {
                best_dl = dl;
                best = candidate;
            }
        }
    }

    let uniform = MarginVector::uniform(p, rho_bar / p as f64)?;
    let uniform_dl = score(&uniform)?;
    if uniform_dl < best_dl - 1e-12 {
        best = uniform;
    }
    Ok(best)
}
