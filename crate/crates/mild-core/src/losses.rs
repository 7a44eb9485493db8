//! Margin and surrogate loss kernels with hand-derived gradients.
//!
//! Everything here is a pure function of score vectors, cost/reward rows and
//! margin scales, safe to call from concurrent workers.

use crate::error::{Error, Result};
use crate::router::margin_of_scores;
use crate::types::MarginVector;

/// Exponent arguments are clamped here before `exp` in the power-form
/// comp-sum kernels; `exp(700)` is still finite in f64 while `exp(710)`
/// overflows. The log-sum-exp paths are max-shifted and never need it.
pub const EXP_SATURATION: f64 = 700.0;

const LN_2: f64 = std::f64::consts::LN_2;

/// Clamped ramp: 1 for `u <= 0`, 0 for `u >= rho`, affine in between.
pub fn rho_margin(u: f64, rho: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::invalid(format!("rho must be positive, got {rho}")));
    }
    Ok((1.0 - u / rho).clamp(0.0, 1.0))
}

/// One-parameter composite transform: `log(1 + u)` at `tau = 1`,
/// `((1 + u)^(1 - tau) - 1) / (1 - tau)` otherwise. Continuous in `tau`,
/// computed through `expm1` so the limit at 1 is hit to float precision.
pub fn comp_sum_phi(u: f64, tau: f64) -> Result<f64> {
    if u < 0.0 {
        return Err(Error::invalid(format!("comp-sum argument {u} < 0")));
    }
    if tau < 0.0 {
        return Err(Error::invalid(format!("tau {tau} < 0")));
    }
    let log1p_u = u.ln_1p();
    let eps = 1.0 - tau;
    if eps.abs() < 1e-12 {
        return Ok(log1p_u);
    }
    Ok((eps * log1p_u).exp_m1() / eps)
}

/// `ln(1 + e^u)` without overflow for large `u`.
fn ln_1p_exp(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

fn check_rhos(rhos: &MarginVector, p: usize) -> Result<()> {
    if rhos.len() != p {
        return Err(Error::dims(format!(
            "{} margin scales for {p} experts",
            rhos.len()
        )));
    }
    Ok(())
}

/// Cost-sensitive margin loss: the largest pairwise ramp term
/// `c(k, k') * ramp((f(k) - f(k')) / rho_k)` over competing experts.
pub fn cs_margin_loss(
    scores: &[f64],
    k: usize,
    pair_costs: &[f64],
    rhos: &MarginVector,
) -> Result<f64> {
    let p = scores.len();
    if k >= p || pair_costs.len() != p {
        return Err(Error::dims("scores, pair costs and k must agree".to_string()));
    }
    check_rhos(rhos, p)?;
    if pair_costs[k] != 0.0 {
        return Err(Error::invalid(format!(
            "diagonal cost c(k, k) must vanish, got {}",
            pair_costs[k]
        )));
    }
    if pair_costs.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
        return Err(Error::invalid("pair cost outside [0, 1]"));
    }
    let mut worst = 0.0f64;
    for (kp, &c) in pair_costs.iter().enumerate() {
        if kp == k || c == 0.0 {
            continue;
        }
        worst = worst.max(c * rho_margin(scores[k] - scores[kp], rhos[k])?);
    }
    Ok(worst)
}

/// Per-expert log-sum-exp surrogate:
/// `ln sum_{k'} exp((f(k') - f(k)) / rho_k)`, max-shifted so finite scores
/// never produce NaN or overflow.
pub fn lse_margin_loss(scores: &[f64], k: usize, rhos: &MarginVector) -> Result<f64> {
    let p = scores.len();
    if k >= p {
        return Err(Error::invalid(format!("expert {k} out of range {p}")));
    }
    check_rhos(rhos, p)?;
    let rho = rhos[k];
    let mut max_u = f64::NEG_INFINITY;
    for &s in scores {
        max_u = max_u.max((s - scores[k]) / rho);
    }
    let mut acc = 0.0;
    for &s in scores {
        acc += ((s - scores[k]) / rho - max_u).exp();
    }
    Ok(max_u + acc.ln())
}

/// The three values of the constant-cost upper-bound chain for target `k`:
/// the scaled ramp loss, the base-2 logistic bound on the runner-up term,
/// and the base-2 log-sum-exp relaxation.
///
/// Base-2 logs make the logistic terms dominate the ramp pointwise, so the
/// chain is ordered for every input; `sum_bound` equals
/// `big_c * lse_margin_loss / ln 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpperChain {
    pub ramp: f64,
    pub max_bound: f64,
    pub sum_bound: f64,
}

pub fn upper_bound_chain(
    scores: &[f64],
    k: usize,
    big_c: f64,
    rhos: &MarginVector,
) -> Result<UpperChain> {
    let p = scores.len();
    if !(0.0..=1.0).contains(&big_c) {
        return Err(Error::invalid(format!("scale {big_c} outside [0, 1]")));
    }
    if k >= p {
        return Err(Error::invalid(format!("expert {k} out of range {p}")));
    }
    check_rhos(rhos, p)?;
    let rho = rhos[k];
    let margin = margin_of_scores(scores, k)?;
    let ramp = big_c * rho_margin(margin, rho)?;
    // Runner-up gap enters both logistic forms; margin = -max gap.
    let max_bound = big_c * ln_1p_exp(-margin / rho) / LN_2;
    let sum_bound = big_c * lse_margin_loss(scores, k, rhos)? / LN_2;
    Ok(UpperChain {
        ramp,
        max_bound,
        sum_bound,
    })
}

/// Reward-weighted deferral surrogate: `sum_k rewards[k] * lse(scores, k)`.
pub fn mild_surrogate(scores: &[f64], rewards_row: &[f64], rhos: &MarginVector) -> Result<f64> {
    let p = scores.len();
    if rewards_row.len() != p {
        return Err(Error::dims("reward row vs scores".to_string()));
    }
    check_rhos(rhos, p)?;
    if rewards_row.iter().any(|&r| r < 0.0) {
        return Err(Error::invalid("negative reward"));
    }
    let mut total = 0.0;
    for (k, &reward) in rewards_row.iter().enumerate() {
        if reward == 0.0 {
            continue;
        }
        total += reward * lse_margin_loss(scores, k, rhos)?;
    }
    Ok(total)
}

/// Baseline deferral surrogate: the reward-weighted log-sum-exp with every
/// margin scale pinned at one.
pub fn tdef_surrogate(scores: &[f64], rewards_row: &[f64]) -> Result<f64> {
    mild_surrogate(scores, rewards_row, &MarginVector::ones(scores.len()))
}

/// Gradient of [`mild_surrogate`] with respect to the score vector.
///
/// For target `k` the softmax weights over `(f(k') - f(k)) / rho_k`
/// contribute `rewards[k] / rho_k * (s_{k'} - 1[k' = k])`.
pub fn mild_surrogate_grad(
    scores: &[f64],
    rewards_row: &[f64],
    rhos: &MarginVector,
) -> Result<Vec<f64>> {
    let p = scores.len();
    if rewards_row.len() != p {
        return Err(Error::dims("reward row vs scores".to_string()));
    }
    check_rhos(rhos, p)?;
    let mut grad = vec![0.0; p];
    let mut soft = vec![0.0; p];
    for (k, &reward) in rewards_row.iter().enumerate() {
        if reward == 0.0 {
            continue;
        }
        let rho = rhos[k];
        let mut max_u = f64::NEG_INFINITY;
        for &s in scores {
            max_u = max_u.max((s - scores[k]) / rho);
        }
        let mut z = 0.0;
        for (kp, &s) in scores.iter().enumerate() {
            soft[kp] = ((s - scores[k]) / rho - max_u).exp();
            z += soft[kp];
        }
        let w = reward / rho;
        for kp in 0..p {
            let s_kp = soft[kp] / z;
            grad[kp] += w * (s_kp - if kp == k { 1.0 } else { 0.0 });
        }
    }
    Ok(grad)
}

/// Which relaxation of the pairwise maximum a surrogate uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// Keep the maximum over competing experts. Tighter but non-smooth;
    /// retained for bound verification, not used by the trainer.
    Max,
    /// Relax the maximum into a sum over competing experts.
    Sum,
}

/// Surrogate family selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateSpec {
    /// Comp-sum exponent; 1 is logistic, 0 exponential.
    pub tau: f64,
    pub aggregation: Aggregation,
}

impl SurrogateSpec {
    pub fn logistic_sum() -> Self {
        SurrogateSpec {
            tau: 1.0,
            aggregation: Aggregation::Sum,
        }
    }

    pub fn new(tau: f64, aggregation: Aggregation) -> Result<Self> {
        if tau < 0.0 {
            return Err(Error::invalid(format!("tau {tau} < 0")));
        }
        Ok(SurrogateSpec { tau, aggregation })
    }

    fn is_logistic(&self) -> bool {
        (self.tau - 1.0).abs() < 1e-12
    }
}

/// Per-target surrogate kernel for a constant (reward-weighted) cost.
///
/// Logistic/`Sum` is the log-sum-exp form used by the trainer. For
/// `tau != 1` the sum sits outside the transform, so the family is not
/// continuous across the `tau = 1` selector; the logistic log-form is a
/// strictly tighter bound available only there.
pub fn surrogate_kernel(
    scores: &[f64],
    k: usize,
    rhos: &MarginVector,
    spec: SurrogateSpec,
) -> Result<f64> {
    let p = scores.len();
    if k >= p {
        return Err(Error::invalid(format!("expert {k} out of range {p}")));
    }
    check_rhos(rhos, p)?;
    if spec.is_logistic() && spec.aggregation == Aggregation::Sum {
        return lse_margin_loss(scores, k, rhos);
    }
    let rho = rhos[k];
    let mut acc = 0.0f64;
    let mut worst = 0.0f64;
    for (kp, &s) in scores.iter().enumerate() {
        if kp == k {
            continue;
        }
        let u = ((s - scores[k]) / rho).min(EXP_SATURATION);
        let term = if spec.is_logistic() {
            ln_1p_exp(u)
        } else {
            comp_sum_phi(u.exp(), spec.tau)?
        };
        acc += term;
        worst = worst.max(term);
    }
    Ok(match spec.aggregation {
        Aggregation::Max => worst,
        Aggregation::Sum => acc,
    })
}

/// Logistic bound for costs that vary with the competing expert:
/// `ln sum_{k' != k} (1 + e^{(f(k') - f(k)) / rho_k})^{c(k, k')}`.
///
/// Derived but not wired into any trainer; kept as a kernel with tests.
pub fn cost_exponent_logistic(
    scores: &[f64],
    k: usize,
    pair_costs: &[f64],
    rhos: &MarginVector,
) -> Result<f64> {
    let p = scores.len();
    if k >= p || pair_costs.len() != p {
        return Err(Error::dims("scores, pair costs and k must agree".to_string()));
    }
    check_rhos(rhos, p)?;
    if pair_costs[k] != 0.0 {
        return Err(Error::invalid("diagonal cost must vanish"));
    }
    let rho = rhos[k];
    // log-sum-exp over a_{k'} = c(k, k') * ln(1 + e^{u_{k'}}).
    let mut args = Vec::with_capacity(p - 1);
    for (kp, &s) in scores.iter().enumerate() {
        if kp == k {
            continue;
        }
        let u = ((s - scores[k]) / rho).min(EXP_SATURATION);
        args.push(pair_costs[kp] * ln_1p_exp(u));
    }
    let max_a = args.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = args.iter().map(|&a| (a - max_a).exp()).sum();
    Ok(max_a + z.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ramp_values() {
        assert_eq!(rho_margin(1.0, 2.0).unwrap(), 0.5);
        assert_eq!(rho_margin(-5.0, 1.0).unwrap(), 1.0);
        assert_eq!(rho_margin(3.0, 1.0).unwrap(), 0.0);
        assert!(rho_margin(0.0, 0.0).is_err());
        assert!(rho_margin(0.0, -1.0).is_err());
    }

    #[test]
    fn comp_sum_values() {
        assert!((comp_sum_phi(2.0, 0.0).unwrap() - 2.0).abs() < 1e-15);
        let e = std::f64::consts::E;
        assert!((comp_sum_phi(e - 1.0, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((comp_sum_phi(1.0, 2.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(comp_sum_phi(-0.1, 1.0).is_err());
        assert!(comp_sum_phi(1.0, -0.5).is_err());
    }

    #[test]
    fn comp_sum_continuous_and_monotone() {
        for i in 0..=100 {
            let u = 0.1 * i as f64;
            let center = comp_sum_phi(u, 1.0).unwrap();
            for tau in [1.0 - 1e-6, 1.0 + 1e-6] {
                let v = comp_sum_phi(u, tau).unwrap();
                assert!((v - center).abs() < 1e-5, "tau {tau} u {u}");
            }
        }
        for tau in [0.0, 0.5, 1.0, 2.0] {
            let mut prev = comp_sum_phi(0.0, tau).unwrap();
            for i in 1..=200 {
                let v = comp_sum_phi(0.05 * i as f64, tau).unwrap();
                assert!(v >= prev - 1e-12);
                prev = v;
            }
        }
    }

    #[test]
    fn cs_margin_hand_values() {
        let r1 = MarginVector::ones(2);
        assert_eq!(
            cs_margin_loss(&[0.0, 0.0], 0, &[0.0, 1.0], &r1).unwrap(),
            1.0
        );
        assert_eq!(
            cs_margin_loss(&[5.0, 0.0], 0, &[0.0, 1.0], &r1).unwrap(),
            0.0
        );
        let r = MarginVector::ones(3);
        let v = cs_margin_loss(&[0.5, 0.0, 0.0], 0, &[0.0, 0.5, 1.0], &r).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cs_margin_rejects_nonzero_diagonal() {
        let r = MarginVector::ones(2);
        assert!(cs_margin_loss(&[0.0, 0.0], 0, &[0.1, 1.0], &r).is_err());
    }

    #[test]
    fn lse_hand_values() {
        let r = MarginVector::ones(2);
        let v = lse_margin_loss(&[0.0, 0.0], 0, &r).unwrap();
        assert!((v - 2.0f64.ln()).abs() < 1e-12);

        let r3 = MarginVector::new(vec![0.3, 1.0, 2.0]).unwrap();
        for k in 0..3 {
            let v = lse_margin_loss(&[4.0, 4.0, 4.0], k, &r3).unwrap();
            assert!((v - 3.0f64.ln()).abs() < 1e-12);
        }

        let r = MarginVector::new(vec![0.5, 1.0]).unwrap();
        let v = lse_margin_loss(&[1.0, 0.0], 0, &r).unwrap();
        assert!((v - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-12);
        assert!((v - 0.126928).abs() < 1e-6);
    }

    #[test]
    fn lse_finite_under_extreme_scales() {
        let r = MarginVector::new(vec![1e-3, 1e-3]).unwrap();
        let v = lse_margin_loss(&[-3000.0, 3000.0], 0, &r).unwrap();
        assert!(v.is_finite());
        let v = lse_margin_loss(&[3000.0, -3000.0], 0, &r).unwrap();
        assert!(v.is_finite() && v >= 0.0);
    }

    #[test]
    fn chain_hand_values() {
        let r = MarginVector::ones(2);
        let c = upper_bound_chain(&[0.0, 0.0], 0, 1.0, &r).unwrap();
        // Tied scores: ramp hits 1; with base-2 logs both bounds equal 1.
        assert!((c.ramp - 1.0).abs() < 1e-15);
        assert!((c.max_bound - 1.0).abs() < 1e-12);
        assert!((c.sum_bound - 1.0).abs() < 1e-12);

        let c = upper_bound_chain(&[0.0, 0.0], 0, 0.0, &r).unwrap();
        assert_eq!((c.ramp, c.max_bound, c.sum_bound), (0.0, 0.0, 0.0));

        let r3 = MarginVector::ones(3);
        let c = upper_bound_chain(&[10.0, 0.0, 0.0], 0, 1.0, &r3).unwrap();
        assert_eq!(c.ramp, 0.0);
        assert!(c.max_bound <= c.sum_bound + 1e-12);
        assert!(c.max_bound > 0.0);
    }

    #[test]
    fn chain_ordered_on_random_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let p = rng.random_range(2..=5);
            let scores: Vec<f64> = (0..p).map(|_| rng.random::<f64>() * 8.0 - 4.0).collect();
            let rhos = MarginVector::new(
                (0..p).map(|_| rng.random::<f64>() * 0.9 + 0.1).collect(),
            )
            .unwrap();
            let big_c = rng.random::<f64>();
            let k = rng.random_range(0..p);
            let c = upper_bound_chain(&scores, k, big_c, &rhos).unwrap();
            assert!(c.ramp <= c.max_bound + 1e-12);
            assert!(c.max_bound <= c.sum_bound + 1e-12);
        }
    }

    #[test]
    fn mild_hand_values() {
        let r = MarginVector::ones(2);
        assert_eq!(mild_surrogate(&[1.0, -2.0], &[0.0, 0.0], &r).unwrap(), 0.0);
        let v = mild_surrogate(&[0.0, 0.0], &[0.8, 0.2], &r).unwrap();
        assert!((v - 2.0f64.ln()).abs() < 1e-12);
        // At tied scores the value is scale-free in rho.
        let r2 = MarginVector::new(vec![0.5, 1.0]).unwrap();
        let v2 = mild_surrogate(&[0.0, 0.0], &[0.8, 0.2], &r2).unwrap();
        assert!((v2 - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn tdef_is_mild_at_unit_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let p = rng.random_range(2..=5);
            let scores: Vec<f64> = (0..p).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let rewards: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
            let a = tdef_surrogate(&scores, &rewards).unwrap();
            let b = mild_surrogate(&scores, &rewards, &MarginVector::ones(p)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn tdef_first_term_monotone_in_own_score() {
        // Raising expert 1's score drives its own surrogate term down; far
        // out the total is dominated by the runner-up reward times the gap.
        let rewards = [0.8, 0.2];
        let ones = MarginVector::ones(2);
        let mut prev = f64::INFINITY;
        for i in 0..50 {
            let s = i as f64 * 0.5;
            let own = lse_margin_loss(&[s, 0.0], 0, &ones).unwrap();
            assert!(own < prev);
            prev = own;
        }
        let total = tdef_surrogate(&[40.0, 0.0], &rewards).unwrap();
        assert!((total - 0.2 * 40.0).abs() < 1e-6);
    }

    #[test]
    fn grad_hand_values() {
        let r = MarginVector::ones(2);
        let g = mild_surrogate_grad(&[0.0, 0.0], &[0.0, 0.0], &r).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
        let g = mild_surrogate_grad(&[0.0, 0.0], &[1.0, 0.0], &r).unwrap();
        assert!((g[0] + 0.5).abs() < 1e-15);
        assert!((g[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn grad_components_sum_to_zero() {
        // Shift invariance of the surrogate forces each k-term's gradient
        // components to cancel.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let p = rng.random_range(2..=5);
            let scores: Vec<f64> = (0..p).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
            let rewards: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
            let rhos = MarginVector::new(
                (0..p).map(|_| rng.random::<f64>() * 0.9 + 0.1).collect(),
            )
            .unwrap();
            let g = mild_surrogate_grad(&scores, &rewards, &rhos).unwrap();
            let total: f64 = g.iter().sum();
            assert!(total.abs() < 1e-10);
        }
    }

    #[test]
    fn grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let p = rng.random_range(2..=5);
            let scores: Vec<f64> = (0..p).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
            let rewards: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
            let rhos = MarginVector::new(
                (0..p).map(|_| rng.random::<f64>() * 0.9 + 0.1).collect(),
            )
            .unwrap();
            let g = mild_surrogate_grad(&scores, &rewards, &rhos).unwrap();
            let h = 1e-5;
            for j in 0..p {
                let mut hi = scores.clone();
                let mut lo = scores.clone();
                hi[j] += h;
                lo[j] -= h;
                let fd = (mild_surrogate(&hi, &rewards, &rhos).unwrap()
                    - mild_surrogate(&lo, &rewards, &rhos).unwrap())
                    / (2.0 * h);
                let scale = fd.abs().max(1e-6);
                assert!(
                    (g[j] - fd).abs() / scale < 1e-4,
                    "component {j}: analytic {} vs fd {fd}",
                    g[j]
                );
            }
        }
    }

    #[test]
    fn shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let p = rng.random_range(2..=5);
            let scores: Vec<f64> = (0..p).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
            let shift = rng.random::<f64>() * 10.0 - 5.0;
            let shifted: Vec<f64> = scores.iter().map(|&s| s + shift).collect();
            let rewards: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
            let rhos = MarginVector::new(
                (0..p).map(|_| rng.random::<f64>() * 0.9 + 0.1).collect(),
            )
            .unwrap();
            let k = rng.random_range(0..p);
            let a = lse_margin_loss(&scores, k, &rhos).unwrap();
            let b = lse_margin_loss(&shifted, k, &rhos).unwrap();
            assert!((a - b).abs() < 1e-12);
            let ma = mild_surrogate(&scores, &rewards, &rhos).unwrap();
            let mb = mild_surrogate(&shifted, &rewards, &rhos).unwrap();
            assert!((ma - mb).abs() < 1e-11);
            let g1 = margin_of_scores(&scores, k).unwrap();
            let g2 = margin_of_scores(&shifted, k).unwrap();
            assert!((g1 - g2).abs() < 1e-12);
        }
    }

    #[test]
    fn margin_loss_dominates_cost_weighted_indicator() {
        use crate::router::argmax_tie_high;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..500 {
            let p = rng.random_range(2..=5);
            let scores: Vec<f64> = (0..p).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
            let k = rng.random_range(0..p);
            let mut pair_costs: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
            pair_costs[k] = 0.0;
            let rhos = MarginVector::new(
                (0..p).map(|_| rng.random::<f64>() * 0.9 + 0.1).collect(),
            )
            .unwrap();
            let selected = argmax_tie_high(&scores);
            let indicator = if margin_of_scores(&scores, k).unwrap() <= 0.0 {
                pair_costs[selected]
            } else {
                0.0
            };
            let surrogate = cs_margin_loss(&scores, k, &pair_costs, &rhos).unwrap();
            assert!(indicator <= surrogate + 1e-12);
        }
    }

    #[test]
    fn surrogate_kernel_logistic_sum_is_lse() {
        let rhos = MarginVector::new(vec![0.4, 0.8, 1.0]).unwrap();
        let scores = [0.3, -0.2, 1.1];
        for k in 0..3 {
            let a = surrogate_kernel(&scores, k, &rhos, SurrogateSpec::logistic_sum()).unwrap();
            let b = lse_margin_loss(&scores, k, &rhos).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn surrogate_kernel_max_below_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for tau in [0.0, 0.5, 1.0, 2.0] {
            for _ in 0..100 {
                let p = rng.random_range(2..=4);
                let scores: Vec<f64> =
                    (0..p).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
                let rhos = MarginVector::new(
                    (0..p).map(|_| rng.random::<f64>() * 0.9 + 0.1).collect(),
                )
                .unwrap();
                let k = rng.random_range(0..p);
                let max = surrogate_kernel(
                    &scores,
                    k,
                    &rhos,
                    SurrogateSpec::new(tau, Aggregation::Max).unwrap(),
                )
                .unwrap();
                let sum = surrogate_kernel(
                    &scores,
                    k,
                    &rhos,
                    SurrogateSpec::new(tau, Aggregation::Sum).unwrap(),
                )
                .unwrap();
                if tau == 1.0 {
                    // The logistic sum form collapses the sum inside the log.
                    assert!(max <= sum + 2.0f64.ln() + 1e-12);
                } else {
                    assert!(max <= sum + 1e-12);
                }
            }
        }
    }

    #[test]
    fn cost_exponent_logistic_bounds_the_weighted_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let p = rng.random_range(2..=4);
            let scores: Vec<f64> = (0..p).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
            let k = rng.random_range(0..p);
            let mut pair_costs: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
            pair_costs[k] = 0.0;
            let rhos = MarginVector::new(
                (0..p).map(|_| rng.random::<f64>() * 0.9 + 0.1).collect(),
            )
            .unwrap();
            let bound = cost_exponent_logistic(&scores, k, &pair_costs, &rhos).unwrap();
            // max_{k'} c * ln(1 + e^u) = ln max (1+e^u)^c <= ln sum (1+e^u)^c.
            let mut weighted_max = f64::NEG_INFINITY;
            for (kp, &c) in pair_costs.iter().enumerate() {
                if kp == k {
                    continue;
                }
                let u = (scores[kp] - scores[k]) / rhos[k];
                weighted_max = weighted_max.max(c * ln_1p_exp(u));
            }
            assert!(weighted_max <= bound + 1e-12);
        }
    }

    #[test]
    fn cost_exponent_logistic_constant_cost_value() {
        // Unit costs with p = 2 reduce to the plain logistic bound.
        let rhos = MarginVector::ones(2);
        let v = cost_exponent_logistic(&[1.0, 0.0], 0, &[0.0, 1.0], &rhos).unwrap();
        assert!((v - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
    }
}
