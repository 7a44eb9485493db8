//! Brute-force and closed-form verifiers: Bayes-optimal routing, exhaustive
//! consistency-bound checks over score grids, Monte-Carlo class-sensitive
//! Rademacher estimation, and exact-expectation replicas of the reward
//! reformulation identities.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::{conditional_expert_dist, EvalReport};
use crate::losses::lse_margin_loss;
use crate::router::{argmax_tie_high, margin_of_scores};
use crate::types::{CostTensor, MarginVector, RewardScheme};

/// One input of a finite instance: marginal mass, conditional label
/// distribution, and the per-label expert cost rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePoint {
    pub marginal: f64,
    pub label_dist: Vec<f64>,
    /// `(y, k)` entry holds expert `k`'s cost when the label is `y`.
    pub costs: Array2<f64>,
}

impl DiscretePoint {
    /// Expected cost per expert under the point's label distribution.
    pub fn expected_costs(&self) -> Vec<f64> {
        let p = self.costs.ncols();
        let mut out = vec![0.0; p];
        for (y, row) in self.costs.rows().into_iter().enumerate() {
            for k in 0..p {
                out[k] += self.label_dist[y] * row[k];
            }
        }
        out
    }
}

/// Exhaustive score search cube: every head takes each value in
/// `lo, lo + step, ..., hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for ScoreGrid {
    fn default() -> Self {
        ScoreGrid {
            lo: -3.0,
            hi: 3.0,
            step: 0.5,
        }
    }
}

impl ScoreGrid {
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !(hi > lo) {
            return Err(Error::invalid("grid needs hi > lo and a positive step"));
        }
        Ok(ScoreGrid { lo, hi, step })
    }

    pub fn values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut v = self.lo;
        while v <= self.hi + 1e-9 {
            out.push(v);
            v += self.step;
        }
        out
    }
}

/// Finite instance with known conditional label distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteInstance {
    pub points: Vec<DiscretePoint>,
    pub score_grid: ScoreGrid,
}

impl DiscreteInstance {
    pub fn new(points: Vec<DiscretePoint>, score_grid: ScoreGrid) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("instance needs at least one point"));
        }
        let p = points[0].costs.ncols();
        let marg_sum: f64 = points.iter().map(|pt| pt.marginal).sum();
        if (marg_sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("marginals sum to {marg_sum}")));
        }
        for pt in &points {
            if pt.marginal < 0.0 {
                return Err(Error::invalid("negative marginal"));
            }
            if pt.costs.ncols() != p {
                return Err(Error::dims("expert count varies across points".to_string()));
            }
            if pt.costs.nrows() != pt.label_dist.len() {
                return Err(Error::dims("cost rows vs label distribution".to_string()));
            }
            let s: f64 = pt.label_dist.iter().sum();
            if (s - 1.0).abs() > 1e-9 || pt.label_dist.iter().any(|&v| v < 0.0) {
                return Err(Error::invalid("label distribution must be a probability vector"));
            }
            if pt.costs.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
                return Err(Error::invalid("cost outside [0, 1]"));
            }
        }
        Ok(Self { points, score_grid })
    }

    pub fn n_experts(&self) -> usize {
        self.points[0].costs.ncols()
    }

    /// Reduce each point to its conditional expert distribution and scale
    /// factor under a reward scheme.
    pub fn conditioned(&self, scheme: RewardScheme) -> Result<Vec<ConditionedPoint>> {
        let p = self.n_experts();
        self.points
            .iter()
            .map(|pt| {
                let mut reward_rows = Array2::zeros((pt.label_dist.len(), p));
                for (y, row) in pt.costs.rows().into_iter().enumerate() {
                    let rewards = scheme.rewards_row(row.as_slice().unwrap());
                    for k in 0..p {
                        reward_rows[(y, k)] = rewards[k].max(0.0);
                    }
                }
                let cond = conditional_expert_dist(&reward_rows, &pt.label_dist)?;
                Ok(ConditionedPoint {
                    marginal: pt.marginal,
                    probs: cond.probs,
                    scale: cond.normalization,
                })
            })
            .collect()
    }
}

/// A point of the input-expert domain: expert distribution plus the
/// input-dependent scale of the cost-sensitive loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedPoint {
    pub marginal: f64,
    pub probs: Vec<f64>,
    pub scale: f64,
}

/// Bayes-optimal routing of a discrete instance.
#[derive(Debug, Clone, PartialEq)]
pub struct BayesRouting {
    pub choices: Vec<usize>,
    pub expected_deferral_loss: f64,
    pub ratios: Vec<f64>,
}

/// Per point, the expert minimizing the expected cost (ties toward the
/// highest index) and the induced loss and deferral ratios.
pub fn bayes_router(instance: &DiscreteInstance) -> BayesRouting {
    let p = instance.n_experts();
    let mut choices = Vec::with_capacity(instance.points.len());
    let mut expected = 0.0;
    let mut ratios = vec![0.0; p];
    for pt in &instance.points {
        let costs = pt.expected_costs();
        let mut best = 0;
        for k in 0..p {
            if costs[k] <= costs[best] {
                best = k;
            }
        }
        choices.push(best);
        expected += pt.marginal * costs[best];
        ratios[best] += pt.marginal;
    }
    BayesRouting {
        choices,
        expected_deferral_loss: expected,
        ratios,
    }
}

/// Per-sample lowest-cost routing of an empirical cost tensor, optionally
/// over a subset of rows. The reference every trained router is compared to.
pub fn empirical_bayes(costs: &CostTensor, subset: Option<&[usize]>) -> Result<EvalReport> {
    let indices: Vec<usize> = match subset {
        Some(s) => s.to_vec(),
        None => (0..costs.n_samples()).collect(),
    };
    if indices.is_empty() {
        return Err(Error::invalid("empty sample set"));
    }
    let p = costs.n_experts();
    let mut total = 0.0;
    let mut counts = vec![0usize; p];
    for &i in &indices {
        let mut best = 0;
        for k in 0..p {
            if costs.values[(i, k)] <= costs.values[(i, best)] {
                best = k;
            }
        }
        total += costs.values[(i, best)];
        counts[best] += 1;
    }
    let n = indices.len();
    Ok(EvalReport {
        mean_deferral_loss: total / n as f64,
        deferral_ratios: counts.iter().map(|&c| c as f64 / n as f64).collect(),
        n_samples: n,
    })
}

/// Outcome of an exhaustive bound check.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheck {
    pub holds: bool,
    /// Largest `lhs - rhs` across all checked routers.
    pub worst_gap: f64,
    pub worst_lhs: f64,
    pub worst_rhs: f64,
    /// Slack the verdict used: twice the grid step, absorbing the
    /// grid-resolution error of the infima.
    pub slack: f64,
    /// Instance-specific alternative derived from the surrogate's Lipschitz
    /// constant in the scores; reported for context, not used in the verdict.
    pub lipschitz_slack: f64,
    pub n_routers: usize,
}

const MAX_GRID_PRODUCTS: f64 = 5e7;

fn budget_check(p: usize, n_axis: usize, n_points: usize) -> Result<()> {
    if p > 4 {
        return Err(Error::BudgetExceeded(format!("{p} experts > 4")));
    }
    if n_axis > 21 {
        return Err(Error::BudgetExceeded(format!(
            "{n_axis} grid points per axis > 21"
        )));
    }
    let products = (n_axis as f64).powi((p * n_points) as i32);
    if products > MAX_GRID_PRODUCTS {
        return Err(Error::BudgetExceeded(format!(
            "{n_axis}^({p} experts x {n_points} points) = {products:.3e} routers > {MAX_GRID_PRODUCTS:.0e}"
        )));
    }
    Ok(())
}

/// Enumerate all score vectors of the cube `values^p`.
fn enumerate_vectors(values: &[f64], p: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(values.len().pow(p as u32));
    let mut current = vec![values[0]; p];
    let mut idx = vec![0usize; p];
    loop {
        out.push(current.clone());
        let mut j = 0;
        loop {
            idx[j] += 1;
            if idx[j] < values.len() {
                current[j] = values[idx[j]];
                break;
            }
            idx[j] = 0;
            current[j] = values[0];
            j += 1;
            if j == p {
                return out;
            }
        }
    }
}

/// Conditional target loss of a score vector at a conditioned point: the
/// scale times the expert mass not captured by the selected expert.
fn conditional_target(point: &ConditionedPoint, scores: &[f64]) -> f64 {
    point.scale * (1.0 - point.probs[argmax_tie_high(scores)])
}

/// Conditional surrogate loss of a score vector at a conditioned point.
fn conditional_surrogate(
    point: &ConditionedPoint,
    scores: &[f64],
    rhos: &MarginVector,
) -> Result<f64> {
    let mut acc = 0.0;
    for (k, &q) in point.probs.iter().enumerate() {
        if q == 0.0 {
            continue;
        }
        acc += q * lse_margin_loss(scores, k, rhos)?;
    }
    Ok(point.scale * acc)
}

/// Per-point tables of conditional losses over the whole grid, shifted by
/// their grid infima.
struct PointTables {
    target_regret: Vec<f64>,
    surrogate_regret: Vec<f64>,
}

fn point_tables(
    point: &ConditionedPoint,
    vectors: &[Vec<f64>],
    rhos: &MarginVector,
) -> Result<PointTables> {
    let mut target = Vec::with_capacity(vectors.len());
    let mut surrogate = Vec::with_capacity(vectors.len());
    for v in vectors {
        target.push(conditional_target(point, v));
        surrogate.push(conditional_surrogate(point, v, rhos)?);
    }
    let t_inf = target.iter().cloned().fold(f64::INFINITY, f64::min);
    let s_inf = surrogate.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(PointTables {
        target_regret: target.iter().map(|&t| t - t_inf).collect(),
        surrogate_regret: surrogate.iter().map(|&s| (s - s_inf).max(0.0)).collect(),
    })
}

fn lipschitz_slack(points: &[ConditionedPoint], rhos: &MarginVector, step: f64) -> f64 {
    let mean_scale: f64 = points.iter().map(|pt| pt.marginal * pt.scale).sum();
    (2.0 * step * mean_scale / rhos.min()).sqrt() * std::f64::consts::SQRT_2
}

/// Verify the square-root consistency bound on a single conditioned point:
/// for every grid score vector, the target regret must not exceed
/// `sqrt(2) * sqrt(surrogate regret)` plus the grid slack. Infima are taken
/// over the same grid; minimizability gaps vanish because the grid class
/// picks each point's scores independently.
pub fn consistency_bound_check(
    point: &ConditionedPoint,
    rhos: &MarginVector,
    grid: &ScoreGrid,
) -> Result<BoundCheck> {
    excess_error_bound_check(std::slice::from_ref(point), rhos, grid)
}

/// Multi-point version of the consistency check: aggregates the per-point
/// regrets with the marginals and enumerates every product of per-point
/// grid choices.
pub fn excess_error_bound_check(
    points: &[ConditionedPoint],
    rhos: &MarginVector,
    grid: &ScoreGrid,
) -> Result<BoundCheck> {
    if points.is_empty() {
        return Err(Error::invalid("no points to check"));
    }
    let p = points[0].probs.len();
    if rhos.len() != p {
        return Err(Error::dims("margin scales vs experts".to_string()));
    }
    let values = grid.values();
    budget_check(p, values.len(), points.len())?;
    let vectors = enumerate_vectors(&values, p);
    let tables: Vec<PointTables> = points
        .iter()
        .map(|pt| point_tables(pt, &vectors, rhos))
        .collect::<Result<_>>()?;

    let slack = 2.0 * grid.step;
    let n_vec = vectors.len();
    let mut idx = vec![0usize; points.len()];
    let mut n_routers = 0usize;
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_lhs = 0.0;
    let mut worst_rhs = 0.0;
    loop {
        let mut lhs = 0.0;
        let mut surrogate = 0.0;
        for (x, &v) in idx.iter().enumerate() {
            lhs += points[x].marginal * tables[x].target_regret[v];
            surrogate += points[x].marginal * tables[x].surrogate_regret[v];
        }
        let rhs = std::f64::consts::SQRT_2 * surrogate.sqrt();
        let gap = lhs - rhs;
        if gap > worst_gap {
            worst_gap = gap;
            worst_lhs = lhs;
            worst_rhs = rhs;
        }
        n_routers += 1;

        let mut j = 0;
        loop {
            idx[j] += 1;
            if idx[j] < n_vec {
                break;
            }
            idx[j] = 0;
            j += 1;
            if j == points.len() {
                return Ok(BoundCheck {
                    holds: worst_gap <= slack,
                    worst_gap,
                    worst_lhs,
                    worst_rhs,
                    slack,
                    lipschitz_slack: lipschitz_slack(points, rhos, grid.step),
                    n_routers,
                });
            }
        }
    }
}

/// Monte-Carlo estimate of the class-sensitive Rademacher complexity of the
/// norm-bounded linear class over the given per-group feature rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RademacherEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub trials: usize,
}

/// Each trial draws a sign matrix and evaluates the closed-form supremum
/// `F * || sum_j sum_{i in S_j} eps_{ik} phi(x_i) / rho_j ||` aggregated
/// over the per-expert blocks.
pub fn mc_class_sensitive_rademacher(
    features_by_group: &[Array2<f64>],
    rhos: &MarginVector,
    norm_bound: f64,
    trials: usize,
    seed: u64,
) -> Result<RademacherEstimate> {
    if trials < 100 {
        return Err(Error::invalid("need at least 100 trials"));
    }
    if features_by_group.is_empty() {
        return Err(Error::invalid("no groups"));
    }
    if !(norm_bound >= 0.0) {
        return Err(Error::invalid("norm bound must be non-negative"));
    }
    let groups = features_by_group.len();
    if rhos.len() < groups {
        return Err(Error::dims("margin scales vs groups".to_string()));
    }
    let p = rhos.len();
    let d = features_by_group[0].ncols();
    if features_by_group.iter().any(|f| f.ncols() != d) {
        return Err(Error::dims("feature dims vary across groups".to_string()));
    }
    let m: usize = features_by_group.iter().map(|f| f.nrows()).sum();
    if m == 0 {
        return Err(Error::invalid("no samples"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(trials);
    let mut acc = vec![0.0f64; p * d];
    for _ in 0..trials {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for (j, feats) in features_by_group.iter().enumerate() {
            let inv_rho = 1.0 / rhos[j];
            for row in feats.rows() {
                for k in 0..p {
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    let block = &mut acc[k * d..(k + 1) * d];
                    for (a, &x) in block.iter_mut().zip(row.iter()) {
                        *a += sign * inv_rho * x;
                    }
                }
            }
        }
        let norm2: f64 = acc.iter().map(|v| v * v).sum();
        values.push(norm_bound * norm2.sqrt() / m as f64);
    }
    let mean = values.iter().sum::<f64>() / trials as f64;
    let var = values
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (trials as f64 - 1.0);
    Ok(RademacherEstimate {
        estimate: mean,
        stderr: (var / trials as f64).sqrt(),
        trials,
    })
}

/// Closed-form complexity bound the Monte-Carlo estimate must stay under:
/// `sqrt(p) * F * X / m * sqrt(sum_j m_j / rho_j^2)` with `X` the largest
/// feature norm.
pub fn rademacher_norm_bound(
    features_by_group: &[Array2<f64>],
    rhos: &MarginVector,
    norm_bound: f64,
) -> f64 {
    let p = rhos.len() as f64;
    let m: usize = features_by_group.iter().map(|f| f.nrows()).sum();
    let mut max_norm: f64 = 0.0;
    let mut acc = 0.0;
    for (j, feats) in features_by_group.iter().enumerate() {
        for row in feats.rows() {
            max_norm = max_norm.max(row.dot(&row).sqrt());
        }
        acc += feats.nrows() as f64 / (rhos[j] * rhos[j]);
    }
    p.sqrt() * norm_bound * max_norm / m as f64 * acc.sqrt()
}

/// Exhaustive-summation residual of the expectation-transfer identity: the
/// expected target loss must equal the expected input-expert loss plus the
/// scheme's constant expectation. Exact for routers without score ties.
pub fn expectation_transfer_check(
    instance: &DiscreteInstance,
    scores_per_point: &[Vec<f64>],
    scheme: RewardScheme,
) -> Result<f64> {
    if scores_per_point.len() != instance.points.len() {
        return Err(Error::dims("one score vector per point required".to_string()));
    }
    let p = instance.n_experts();
    let conditioned = instance.conditioned(scheme)?;
    let mut target = 0.0;
    let mut transferred = 0.0;
    let mut constant = 0.0;
    for ((pt, cond), scores) in instance
        .points
        .iter()
        .zip(&conditioned)
        .zip(scores_per_point)
    {
        if scores.len() != p {
            return Err(Error::dims("score vector vs experts".to_string()));
        }
        let chosen = argmax_tie_high(scores);
        for (y, row) in pt.costs.rows().into_iter().enumerate() {
            let w = pt.marginal * pt.label_dist[y];
            target += w * row[chosen];
            constant += w * scheme.offset(row.as_slice().unwrap());
        }
        for k in 0..p {
            if margin_of_scores(scores, k)? <= 0.0 {
                transferred += pt.marginal * cond.scale * cond.probs[k];
            }
        }
    }
    Ok((target - transferred - constant).abs())
}

/// Seeded random instance for the verification suites: costs kept away from
/// the simplex corners so conditional expert masses stay bounded below.
pub fn random_instance(
    seed: u64,
    n_points: usize,
    n_labels: usize,
    n_experts: usize,
) -> DiscreteInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let marginals = random_simplex(&mut rng, n_points, 0.05);
    let points = marginals
        .into_iter()
        .map(|marginal| {
            let label_dist = random_simplex(&mut rng, n_labels, 0.05);
            let costs = Array2::from_shape_fn((n_labels, n_experts), |_| {
                0.05 + 0.9 * rng.random::<f64>()
            });
            DiscretePoint {
                marginal,
                label_dist,
                costs,
            }
        })
        .collect();
    DiscreteInstance::new(points, ScoreGrid::default()).expect("generated instance is valid")
}

/// Random margin scales in `[0.3, 1]`, the regime the grid checks are
/// calibrated for.
pub fn random_rhos(seed: u64, n_experts: usize) -> MarginVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MarginVector::new(
        (0..n_experts)
            .map(|_| 0.3 + 0.7 * rng.random::<f64>())
            .collect(),
    )
    .expect("positive scales")
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| floor + rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}
