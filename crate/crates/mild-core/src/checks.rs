//! Bundled verification suites: reformulation identities, expectation
//! transfer, the upper-bound chain, gradients against finite differences,
//! margin-scale optimality, consistency bounds, and Rademacher sanity.
//!
//! Every failure record carries the inputs needed to replay the case.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::eval::reformulation_residual;
use crate::losses::upper_bound_chain;
use crate::oracle::{
    consistency_bound_check, excess_error_bound_check, expectation_transfer_check,
    mc_class_sensitive_rademacher, rademacher_norm_bound, random_instance, random_rhos,
    ScoreGrid,
};
use crate::train::{bound_second_term, objective_and_gradient, optimal_rho, BoundInputs};
use crate::types::{MarginVector, RewardScheme};

/// How much work the check suites do.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier {
    Fast,
    Full,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub failures: Vec<String>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Reward reformulation identities on random cost/score draws.
pub fn reformulation_suite(cases: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    for case in 0..cases {
        let p = rng.random_range(2..=6);
        let scores: Vec<f64> = (0..p).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
        let costs: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
        for scheme in [RewardScheme::SumOfOthers, RewardScheme::Complement] {
            match reformulation_residual(&scores, &costs, scheme) {
                Ok(r) if r < 1e-12 => {}
                Ok(r) => failures.push(format!(
                    "case {case} {scheme:?}: residual {r:.3e}, scores {scores:?}, costs {costs:?}"
                )),
                Err(e) => failures.push(format!("case {case}: {e}")),
            }
        }
    }
    SuiteReport {
        name: "reformulation",
        cases: cases * 2,
        failures,
    }
}

/// Exhaustive-sum expectation transfer on random discrete instances.
pub fn expectation_transfer_suite(cases: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    for case in 0..cases {
        let instance_seed = seed.wrapping_add(case as u64 + 1);
        let n_points = rng.random_range(1..=3);
        let n_labels = rng.random_range(2..=3);
        let p = rng.random_range(2..=4);
        let instance = random_instance(instance_seed, n_points, n_labels, p);
        let scores: Vec<Vec<f64>> = (0..n_points)
            .map(|_| (0..p).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect())
            .collect();
        for scheme in [RewardScheme::SumOfOthers, RewardScheme::Complement] {
            match expectation_transfer_check(&instance, &scores, scheme) {
                Ok(r) if r < 1e-12 => {}
                Ok(r) => failures.push(format!(
                    "instance seed {instance_seed} ({n_points}x{n_labels}x{p}) {scheme:?}: residual {r:.3e}"
                )),
                Err(e) => failures.push(format!("instance seed {instance_seed}: {e}")),
            }
        }
    }
    SuiteReport {
        name: "expectation_transfer",
        cases: cases * 2,
        failures,
    }
}

/// Ordered upper-bound chain on random draws.
pub fn chain_suite(cases: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    for case in 0..cases {
        let p = rng.random_range(2..=5);
        let scores: Vec<f64> = (0..p).map(|_| rng.random::<f64>() * 8.0 - 4.0).collect();
        let rhos = MarginVector::new(
            (0..p).map(|_| 0.1 + 0.9 * rng.random::<f64>()).collect(),
        )
        .expect("positive scales");
        let big_c = rng.random::<f64>();
        let k = rng.random_range(0..p);
        match upper_bound_chain(&scores, k, big_c, &rhos) {
            Ok(chain) => {
                if chain.ramp > chain.max_bound + 1e-12
                    || chain.max_bound > chain.sum_bound + 1e-12
                {
                    failures.push(format!(
                        "case {case}: chain ({}, {}, {}) not ordered; scores {scores:?}, k {k}, C {big_c}, rhos {:?}",
                        chain.ramp, chain.max_bound, chain.sum_bound, rhos.as_slice()
                    ));
                }
            }
            Err(e) => failures.push(format!("case {case}: {e}")),
        }
    }
    SuiteReport {
        name: "upper_bound_chain",
        cases,
        failures,
    }
}

/// Signature of the regularized objective evaluator the gradient suite
/// exercises; the production one is [`objective_and_gradient`].
pub type ObjectiveFn = dyn Fn(
    &Array2<f64>,
    &Array2<f64>,
    &Array2<f64>,
    &[usize],
    &MarginVector,
    f64,
) -> Result<(f64, Array2<f64>)>;

/// Full-objective gradient against central finite differences.
pub fn gradient_suite(cases: usize, seed: u64) -> SuiteReport {
    gradient_suite_with(cases, seed, &objective_and_gradient)
}

/// Same sweep with an injected objective evaluator; used as a negative
/// control to prove the suite detects broken gradients.
pub fn gradient_suite_with(cases: usize, seed: u64, objective: &ObjectiveFn) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    for case in 0..cases {
        let m = rng.random_range(4..=10);
        let d = rng.random_range(2..=5);
        let p = rng.random_range(2..=5);
        let phi = Array2::from_shape_fn((m, d), |_| rng.random::<f64>() * 2.0 - 1.0);
        let rewards = Array2::from_shape_fn((m, p), |_| rng.random::<f64>());
        let weights = Array2::from_shape_fn((p, d), |_| rng.random::<f64>() * 2.0 - 1.0);
        let rhos = MarginVector::new(
            (0..p).map(|_| 0.1 + 0.9 * rng.random::<f64>()).collect(),
        )
        .expect("positive scales");
        let lambda = rng.random::<f64>() * 0.1;
        let rows: Vec<usize> = (0..m).collect();
        let grad = match objective(&weights, &phi, &rewards, &rows, &rhos, lambda) {
            Ok((_, g)) => g,
            Err(e) => {
                failures.push(format!("case {case}: {e}"));
                continue;
            }
        };
        let h = 1e-5;
        let mut worst = 0.0f64;
        'coords: for k in 0..p {
            for j in 0..d {
                let mut hi = weights.clone();
                let mut lo = weights.clone();
                hi[(k, j)] += h;
                lo[(k, j)] -= h;
                let (vh, _) = objective(&hi, &phi, &rewards, &rows, &rhos, lambda).unwrap();
                let (vl, _) = objective(&lo, &phi, &rewards, &rows, &rhos, lambda).unwrap();
                let fd = (vh - vl) / (2.0 * h);
                let rel = (grad[(k, j)] - fd).abs() / fd.abs().max(1e-6);
                worst = worst.max(rel);
                if rel >= 1e-4 {
                    failures.push(format!(
                        "case {case} (m {m}, d {d}, p {p}, lambda {lambda:.4}): coord ({k},{j}) rel err {rel:.3e}"
                    ));
                    break 'coords;
                }
            }
        }
        let _ = worst;
    }
    SuiteReport {
        name: "gradient",
        cases,
        failures,
    }
}

fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    fn rec(total: usize, parts: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 1 {
            prefix.push(total);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for first in 1..=(total - (parts - 1)) {
            prefix.push(first);
            rec(total - first, parts - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(total, parts, &mut Vec::new(), &mut out);
    out
}

/// Closed-form margin-scale allocation against a fixed-budget simplex grid.
pub fn rho_optimality_suite(cases: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    const GRID: usize = 50;
    for case in 0..cases {
        let p = rng.random_range(2..=5);
        let counts: Vec<usize> = (0..p).map(|_| rng.random_range(1..500)).collect();
        let norms: Vec<f64> = (0..p).map(|_| 0.1 + 2.0 * rng.random::<f64>()).collect();
        let rho_bar = 0.2 + 1.8 * rng.random::<f64>();
        let inputs = BoundInputs::new(counts.clone(), norms.clone(), 1.0, p, 0.05)
            .expect("valid inputs");
        let formula = optimal_rho(&counts, &norms, rho_bar).expect("valid allocation");
        let formula_value = bound_second_term(&inputs, &formula).expect("bound value");
        let mut grid_min = f64::INFINITY;
        for combo in compositions(GRID, p) {
            let rho = MarginVector::new(
                combo
                    .iter()
                    .map(|&t| t as f64 * rho_bar / GRID as f64)
                    .collect(),
            )
            .expect("positive scales");
            grid_min = grid_min.min(bound_second_term(&inputs, &rho).expect("bound value"));
        }
        if formula_value > grid_min * 1.01 {
            failures.push(format!(
                "case {case}: formula {formula_value:.6} vs grid min {grid_min:.6}; counts {counts:?}, norms {norms:?}, budget {rho_bar:.4}"
            ));
        }
    }
    SuiteReport {
        name: "rho_optimality",
        cases,
        failures,
    }
}

/// Square-root consistency bound on random single-point instances.
pub fn consistency_bound_suite(cases: usize, seed: u64) -> SuiteReport {
    let failures: Vec<String> = (0..cases)
        .into_par_iter()
        .filter_map(|case| {
            let case_seed = seed.wrapping_add(case as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(case_seed ^ 0x5ea1);
            let p = rng.random_range(2..=3);
            let scheme = if rng.random::<bool>() {
                RewardScheme::SumOfOthers
            } else {
                RewardScheme::Complement
            };
            let instance = random_instance(case_seed, 1, 2, p);
            let rhos = random_rhos(case_seed.wrapping_add(7919), p);
            let points = match instance.conditioned(scheme) {
                Ok(pts) => pts,
                Err(e) => return Some(format!("seed {case_seed}: {e}")),
            };
            match consistency_bound_check(&points[0], &rhos, &ScoreGrid::default()) {
                Ok(check) if check.holds => None,
                Ok(check) => Some(format!(
                    "seed {case_seed} p {p} {scheme:?}: gap {:.6} > slack {:.3} (lhs {:.6}, rhs {:.6})",
                    check.worst_gap, check.slack, check.worst_lhs, check.worst_rhs
                )),
                Err(e) => Some(format!("seed {case_seed}: {e}")),
            }
        })
        .collect();
    SuiteReport {
        name: "consistency_bound",
        cases,
        failures,
    }
}

/// Aggregated excess-error bound on random multi-point instances. Grid
/// resolution drops as the product space grows; the slack rule follows it.
pub fn excess_error_suite(cases: usize, seed: u64) -> SuiteReport {
    let failures: Vec<String> = (0..cases)
        .into_par_iter()
        .filter_map(|case| {
            let case_seed = seed.wrapping_add(case as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(case_seed ^ 0xacce);
            // p = 3 pairs with 2 points, p = 2 with 3: both stay within budget.
            let p = rng.random_range(2..=3);
            let n_points = if p == 3 { 2 } else { 3 };
            let scheme = if rng.random::<bool>() {
                RewardScheme::SumOfOthers
            } else {
                RewardScheme::Complement
            };
            let instance = random_instance(case_seed, n_points, 2, p);
            let rhos = random_rhos(case_seed.wrapping_add(104729), p);
            let points = match instance.conditioned(scheme) {
                Ok(pts) => pts,
                Err(e) => return Some(format!("seed {case_seed}: {e}")),
            };
            match excess_error_bound_check(&points, &rhos, &ScoreGrid::default()) {
                Ok(check) if check.holds => None,
                Ok(check) => Some(format!(
                    "seed {case_seed} p {p} points {n_points} {scheme:?}: gap {:.6} > slack {:.3}",
                    check.worst_gap, check.slack
                )),
                Err(e) => Some(format!("seed {case_seed}: {e}")),
            }
        })
        .collect();
    SuiteReport {
        name: "excess_error_bound",
        cases,
        failures,
    }
}

/// Monte-Carlo class-sensitive Rademacher estimates against the closed-form
/// norm bound.
pub fn rademacher_suite(cases: usize, seed: u64) -> SuiteReport {
    let mut failures = Vec::new();
    for case in 0..cases {
        let case_seed = seed.wrapping_add(case as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(case_seed ^ 0x7ade);
        let groups = rng.random_range(1..=3);
        let p = rng.random_range(groups.max(2)..=4);
        let d = rng.random_range(2..=6);
        let feats: Vec<Array2<f64>> = (0..groups)
            .map(|_| {
                let rows = rng.random_range(2..=10);
                Array2::from_shape_fn((rows, d), |_| rng.random::<f64>() * 2.0 - 1.0)
            })
            .collect();
        let rhos = random_rhos(case_seed.wrapping_add(1299709), p);
        let norm_bound = 0.5 + 1.5 * rng.random::<f64>();
        match mc_class_sensitive_rademacher(&feats, &rhos, norm_bound, 150, case_seed) {
            Ok(est) => {
                let bound = rademacher_norm_bound(&feats, &rhos, norm_bound);
                if est.estimate > bound + 3.0 * est.stderr {
                    failures.push(format!(
                        "seed {case_seed}: estimate {:.6} > bound {bound:.6} + 3 x {:.6}",
                        est.estimate, est.stderr
                    ));
                }
            }
            Err(e) => failures.push(format!("seed {case_seed}: {e}")),
        }
    }
    SuiteReport {
        name: "rademacher",
        cases,
        failures,
    }
}

/// Run every suite at the given tier. Case counts at the full tier match
/// the documented verification budgets.
pub fn run_all(tier: Tier, seed: u64) -> Vec<SuiteReport> {
    let (transfer, gradient, rho, bounds, rademacher) = match tier {
        Tier::Fast => (30, 40, 25, 20, 10),
        Tier::Full => (100, 200, 100, 100, 50),
    };
    vec![
        reformulation_suite(1000, seed),
        expectation_transfer_suite(transfer, seed.wrapping_add(1)),
        chain_suite(1000, seed.wrapping_add(2)),
        gradient_suite(gradient, seed.wrapping_add(3)),
        rho_optimality_suite(rho, seed.wrapping_add(4)),
        consistency_bound_suite(bounds, seed.wrapping_add(5)),
        excess_error_suite(bounds, seed.wrapping_add(6)),
        rademacher_suite(rademacher, seed.wrapping_add(7)),
    ]
}
