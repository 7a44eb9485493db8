//! Seeded generators for desk-scale datasets and expert panels replicating
//! the imbalance protocols: coverage-partitioned specialists, severe
//! two-expert imbalance, and the model-routing analog with inference costs.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::oracle::empirical_bayes;
use crate::types::{CostTensor, CostType, Dataset, ExpertPanel};

/// Expert coverage pattern over the class set.
#[derive(Debug, Clone, PartialEq)]
pub enum SetupKind {
    /// Three experts covering 70% / 20% / 10% of the classes.
    SetupI,
    /// Four experts covering 50% / 20% / 20% / 10%.
    SetupII,
    /// Five experts covering 40% / 20% / 20% / 10% / 10%.
    SetupIII,
    /// Two experts covering 90% / 10%.
    Severe,
    Custom(Vec<f64>),
}

impl SetupKind {
    pub fn coverage(&self) -> Vec<f64> {
        match self {
            SetupKind::SetupI => vec![0.7, 0.2, 0.1],
            SetupKind::SetupII => vec![0.5, 0.2, 0.2, 0.1],
            SetupKind::SetupIII => vec![0.4, 0.2, 0.2, 0.1, 0.1],
            SetupKind::Severe => vec![0.9, 0.1],
            SetupKind::Custom(fractions) => fractions.clone(),
        }
    }

    pub fn n_experts(&self) -> usize {
        self.coverage().len()
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SetupKind::SetupI => "setup1",
            SetupKind::SetupII => "setup2",
            SetupKind::SetupIII => "setup3",
            SetupKind::Severe => "severe",
            SetupKind::Custom(_) => "custom",
        }
    }
}

/// Gaussian mixture layout of the classes: means on a radius-`radius`
/// circle (or scaled basis vectors when the dimension allows), shared
/// isotropic variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassGeometry {
    pub radius: f64,
    pub variance: f64,
}

impl Default for ClassGeometry {
    fn default() -> Self {
        ClassGeometry {
            radius: 3.0,
            variance: 1.0,
        }
    }
}

impl ClassGeometry {
    fn means(&self, n_classes: usize, dim: usize) -> Result<Array2<f64>> {
        if dim < 2 && n_classes > dim {
            return Err(Error::invalid("need dim >= 2 to lay out class means"));
        }
        let mut means = Array2::zeros((n_classes, dim));
        if n_classes <= dim {
            for j in 0..n_classes {
                means[(j, j)] = self.radius;
            }
        } else {
            for j in 0..n_classes {
                let angle = std::f64::consts::TAU * j as f64 / n_classes as f64;
                means[(j, 0)] = self.radius * angle.cos();
                means[(j, 1)] = self.radius * angle.sin();
            }
        }
        Ok(means)
    }
}

/// How faithful the generated experts are to their coverage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExpertFidelity {
    /// Perfect on covered classes, uniformly random over all labels elsewhere.
    Synthetic,
    /// Imperfect specialists: correct with probability 0.99 on covered
    /// classes and with probability `leak_accuracy` elsewhere, mimicking
    /// experts trained with a small fraction of foreign data.
    Real { leak_accuracy: f64 },
}

pub const DEFAULT_LEAK_ACCURACY: f64 = 0.15;
const COVERED_ACCURACY: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub struct SetupSpec {
    pub kind: SetupKind,
    pub n_classes: usize,
    pub n_samples: usize,
    pub dim: usize,
    pub geometry: ClassGeometry,
    pub fidelity: ExpertFidelity,
    pub cost_type: CostType,
    pub seed: u64,
}

impl SetupSpec {
    pub fn new(kind: SetupKind, n_classes: usize, n_samples: usize, seed: u64) -> Self {
        SetupSpec {
            kind,
            n_classes,
            n_samples,
            dim: 2,
            geometry: ClassGeometry::default(),
            fidelity: ExpertFidelity::Synthetic,
            cost_type: CostType::ErrorOnly,
            seed,
        }
    }
}

/// Contiguous class counts realizing the coverage fractions, by cumulative
/// rounding. Errors if any expert would cover no class.
pub fn coverage_class_counts(coverage: &[f64], n_classes: usize) -> Result<Vec<usize>> {
    let total: f64 = coverage.iter().sum();
    if (total - 1.0).abs() > 1e-9 || coverage.iter().any(|&f| f <= 0.0) {
        return Err(Error::invalid("coverage fractions must be positive and sum to 1"));
    }
    let mut counts = Vec::with_capacity(coverage.len());
    let mut cum = 0.0;
    let mut assigned = 0usize;
    for &f in coverage {
        cum += f;
        let upto = (cum * n_classes as f64).round() as usize;
        let count = upto.saturating_sub(assigned);
        if count == 0 {
            return Err(Error::invalid(format!(
                "coverage fraction {f} maps to zero classes with {n_classes} classes"
            )));
        }
        counts.push(count);
        assigned = upto;
    }
    if assigned != n_classes {
        return Err(Error::invalid("coverage does not partition the class set"));
    }
    Ok(counts)
}

/// Expert index covering each class, given contiguous counts from class 0.
fn class_owners(counts: &[usize], n_classes: usize) -> Vec<usize> {
    let mut owners = vec![0usize; n_classes];
    let mut class = 0;
    for (k, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            owners[class] = k;
            class += 1;
        }
    }
    owners
}

/// Striped labels (exactly uniform class proportions when the class count
/// divides the sample count), shuffled by the seed.
fn uniform_labels(rng: &mut ChaCha8Rng, n_samples: usize, n_classes: usize) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n_samples).map(|i| i % n_classes).collect();
    labels.shuffle(rng);
    labels
}

fn sample_features(
    rng: &mut ChaCha8Rng,
    labels: &[usize],
    means: &Array2<f64>,
    variance: f64,
) -> Array2<f64> {
    let dim = means.ncols();
    let normal = Normal::new(0.0, variance.sqrt()).expect("positive variance");
    let mut feats = Array2::zeros((labels.len(), dim));
    for (i, &y) in labels.iter().enumerate() {
        for j in 0..dim {
            feats[(i, j)] = means[(y, j)] + normal.sample(rng);
        }
    }
    feats
}

fn wrong_label(rng: &mut ChaCha8Rng, truth: usize, n_classes: usize) -> usize {
    let off = rng.random_range(0..n_classes - 1);
    if off >= truth {
        off + 1
    } else {
        off
    }
}

/// Generate a dataset, expert panel and cost tensor for a coverage setup.
/// Deterministic per seed; regenerating is bit-identical.
pub fn generate(spec: &SetupSpec) -> Result<(Dataset, ExpertPanel, CostTensor)> {
    let coverage = spec.kind.coverage();
    let p = coverage.len();
    let c = spec.n_classes;
    if spec.n_samples < 10 * c {
        return Err(Error::invalid(format!(
            "need at least {} samples for {c} classes",
            10 * c
        )));
    }
    if let ExpertFidelity::Real { leak_accuracy } = spec.fidelity {
        if !(0.0..=1.0).contains(&leak_accuracy) {
            return Err(Error::invalid("leak accuracy must lie in [0, 1]"));
        }
    }
    let counts = coverage_class_counts(&coverage, c)?;
    let owners = class_owners(&counts, c);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let labels = uniform_labels(&mut rng, spec.n_samples, c);
    let means = spec.geometry.means(c, spec.dim)?;
    let features = sample_features(&mut rng, &labels, &means, spec.geometry.variance);

    let mut predictions = Array2::zeros((spec.n_samples, p));
    for (i, &y) in labels.iter().enumerate() {
        for k in 0..p {
            let covered = owners[y] == k;
            predictions[(i, k)] = match spec.fidelity {
                ExpertFidelity::Synthetic => {
                    if covered {
                        y
                    } else {
                        // Uniform over all labels, the true one included.
                        rng.random_range(0..c)
                    }
                }
                ExpertFidelity::Real { leak_accuracy } => {
                    let acc = if covered { COVERED_ACCURACY } else { leak_accuracy };
                    if rng.random::<f64>() < acc {
                        y
                    } else {
                        wrong_label(&mut rng, y, c)
                    }
                }
            };
        }
    }

    let beta = match spec.cost_type {
        CostType::ErrorOnly => vec![0.0; p],
        CostType::ErrorPlusCost => coverage.clone(),
    };
    let mut class_sets = Vec::with_capacity(p);
    let mut class = 0;
    for &count in &counts {
        class_sets.push((class..class + count).collect());
        class += count;
    }
    let dataset = Dataset::new(features, labels, c)?;
    let panel = ExpertPanel::new(predictions, beta, c, Some(class_sets))?;
    let costs = CostTensor::from_panel(&dataset, &panel, spec.cost_type)?;
    Ok((dataset, panel, costs))
}

/// Region-structured routing instance: per-region expert accuracies and
/// inference costs chosen so the per-sample optimal routing hits configured
/// target ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct LlmAnalog {
    /// Marginal mass of each region; realized by exact quotas.
    pub region_masses: Vec<f64>,
    /// `(r, k)` entry is expert `k`'s accuracy inside region `r`.
    pub accuracy_by_region: Array2<f64>,
    pub betas: Vec<f64>,
    /// Expected per-sample-optimal deferral ratios, verified at generation.
    pub target_ratios: Vec<f64>,
}

impl LlmAnalog {
    /// Design an instance whose optimal ratios equal `targets`: one region
    /// per expert with mass `targets[k]`, inside which exactly that expert
    /// is correct. With costs in `[0, 1 + max beta]` the correct expert is
    /// then the unique per-sample optimum.
    pub fn from_targets(targets: &[f64], betas: &[f64]) -> Result<Self> {
        let p = targets.len();
        if p < 2 || betas.len() != p {
            return Err(Error::invalid("need matching targets and betas, p >= 2"));
        }
        if targets.iter().any(|&t| t < 0.0) {
            return Err(Error::invalid("negative target ratio"));
        }
        let total: f64 = targets.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("target ratios must have positive mass"));
        }
        let masses: Vec<f64> = targets.iter().map(|&t| t / total).collect();
        let accuracy = Array2::from_shape_fn((p, p), |(r, k)| if r == k { 1.0 } else { 0.0 });
        Ok(LlmAnalog {
            region_masses: masses.clone(),
            accuracy_by_region: accuracy,
            betas: betas.to_vec(),
            target_ratios: masses,
        })
    }

    pub fn new(
        region_masses: Vec<f64>,
        accuracy_by_region: Array2<f64>,
        betas: Vec<f64>,
        target_ratios: Vec<f64>,
    ) -> Result<Self> {
        let regions = region_masses.len();
        let p = betas.len();
        if accuracy_by_region.nrows() != regions || accuracy_by_region.ncols() != p {
            return Err(Error::dims("accuracy matrix vs regions/experts".to_string()));
        }
        if accuracy_by_region.iter().any(|&a| !(0.0..=1.0).contains(&a)) {
            return Err(Error::invalid("accuracies must lie in [0, 1]"));
        }
        if target_ratios.len() != p {
            return Err(Error::dims("target ratios vs experts".to_string()));
        }
        let total: f64 = region_masses.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("region masses must sum to 1"));
        }
        Ok(LlmAnalog {
            region_masses,
            accuracy_by_region,
            betas,
            target_ratios,
        })
    }

    pub fn n_experts(&self) -> usize {
        self.betas.len()
    }

    /// Exact largest-remainder quotas for `n` samples over the region masses.
    fn region_quotas(&self, n: usize) -> Vec<usize> {
        let regions = self.region_masses.len();
        let mut counts: Vec<usize> = self
            .region_masses
            .iter()
            .map(|&m| (m * n as f64).floor() as usize)
            .collect();
        let assigned: usize = counts.iter().sum();
        let mut remainders: Vec<(f64, usize)> = self
            .region_masses
            .iter()
            .enumerate()
            .map(|(r, &m)| (m * n as f64 - (m * n as f64).floor(), r))
            .collect();
        remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for i in 0..(n - assigned) {
            counts[remainders[i % regions].1] += 1;
        }
        counts
    }

    /// Generate the instance and verify that per-sample optimal routing
    /// reproduces the target ratios within one percentage point.
    pub fn generate(
        &self,
        n_samples: usize,
        dim: usize,
        geometry: ClassGeometry,
        seed: u64,
    ) -> Result<(Dataset, ExpertPanel, CostTensor)> {
        let regions = self.region_masses.len();
        let p = self.n_experts();
        if n_samples < 10 * regions {
            return Err(Error::invalid("too few samples for the region quotas"));
        }
        let quotas = self.region_quotas(n_samples);
        let mut region_of: Vec<usize> = quotas
            .iter()
            .enumerate()
            .flat_map(|(r, &q)| std::iter::repeat_n(r, q))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        region_of.shuffle(&mut rng);

        let means = geometry.means(regions, dim)?;
        let features = sample_features(&mut rng, &region_of, &means, geometry.variance);

        // Labels are region ids; wrong predictions need a second label even
        // for single-region instances.
        let n_classes = regions.max(2);
        let mut predictions = Array2::zeros((n_samples, p));
        for (i, &r) in region_of.iter().enumerate() {
            for k in 0..p {
                let acc = self.accuracy_by_region[(r, k)];
                predictions[(i, k)] = if rng.random::<f64>() < acc {
                    r
                } else {
                    wrong_label(&mut rng, r, n_classes)
                };
            }
        }

        let cost_type = if self.betas.iter().any(|&b| b > 0.0) {
            CostType::ErrorPlusCost
        } else {
            CostType::ErrorOnly
        };
        let dataset = Dataset::new(features, region_of, n_classes)?;
        let panel = ExpertPanel::new(predictions, self.betas.clone(), n_classes, None)?;
        let costs = CostTensor::from_panel(&dataset, &panel, cost_type)?;

        let achieved = empirical_bayes(&costs, None)?.deferral_ratios;
        let off = achieved
            .iter()
            .zip(&self.target_ratios)
            .map(|(a, t)| (a - t).abs())
            .fold(0.0f64, f64::max);
        if off > 0.01 {
            return Err(Error::InfeasibleTargets {
                requested: self.target_ratios.clone(),
                achieved,
            });
        }
        Ok((dataset, panel, costs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::empirical_bayes;
    use crate::train::cost_groups;

    #[test]
    fn setup1_class_partition() {
        let counts = coverage_class_counts(&[0.7, 0.2, 0.1], 10).unwrap();
        assert_eq!(counts, vec![7, 2, 1]);
        let owners = class_owners(&counts, 10);
        assert_eq!(owners[..7], [0; 7]);
        assert_eq!(owners[7..9], [1; 2]);
        assert_eq!(owners[9], 2);
    }

    #[test]
    fn coverage_must_partition() {
        assert!(coverage_class_counts(&[0.7, 0.2, 0.1], 5).is_err());
        assert!(coverage_class_counts(&[0.5, 0.2], 10).is_err());
        assert!(coverage_class_counts(&[0.9, 0.1], 10).is_ok());
    }

    #[test]
    fn setup1_error_plus_cost_betas() {
        let mut spec = SetupSpec::new(SetupKind::SetupI, 10, 200, 1);
        spec.cost_type = CostType::ErrorPlusCost;
        let (_, panel, costs) = generate(&spec).unwrap();
        assert_eq!(panel.beta, vec![0.7, 0.2, 0.1]);
        assert!((costs.normalizer - 1.7).abs() < 1e-15);
    }

    #[test]
    fn synthetic_experts_exact_on_coverage() {
        let spec = SetupSpec::new(SetupKind::SetupI, 10, 500, 3);
        let (ds, panel, _) = generate(&spec).unwrap();
        let owners = class_owners(&coverage_class_counts(&[0.7, 0.2, 0.1], 10).unwrap(), 10);
        let mut off_cover = 0usize;
        let mut off_correct = 0usize;
        for i in 0..ds.n_samples() {
            let y = ds.labels[i];
            for k in 0..3 {
                if owners[y] == k {
                    assert_eq!(panel.predictions[(i, k)], y);
                } else {
                    off_cover += 1;
                    if panel.predictions[(i, k)] == y {
                        off_correct += 1;
                    }
                }
            }
        }
        // Uncovered predictions are uniform over all 10 labels.
        let rate = off_correct as f64 / off_cover as f64;
        let expect = 1.0 / 10.0;
        let sigma = (expect * (1.0 - expect) / off_cover as f64).sqrt();
        assert!((rate - expect).abs() < 3.0 * sigma, "rate {rate}");
    }

    #[test]
    fn generation_is_bit_identical() {
        let mut spec = SetupSpec::new(SetupKind::SetupII, 10, 300, 9);
        spec.fidelity = ExpertFidelity::Real {
            leak_accuracy: DEFAULT_LEAK_ACCURACY,
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
    }

    #[test]
    fn severe_majority_group_fraction() {
        let spec = SetupSpec::new(SetupKind::Severe, 10, 2000, 5);
        let (_, _, costs) = generate(&spec).unwrap();
        let groups = cost_groups(&costs);
        let frac1 = groups.iter().filter(|&&g| g == 0).count() as f64 / 2000.0;
        // Covered samples stay with expert 1 unless expert 2's uniform guess
        // ties at zero cost, which the tie-break hands to expert 2.
        let expect = 0.9 * (1.0 - 1.0 / 10.0);
        let sigma = (expect * (1.0 - expect) / 2000.0f64).sqrt();
        assert!((frac1 - expect).abs() < 3.0 * sigma, "fraction {frac1}");
    }

    #[test]
    fn analog_exact_quota_ratios() {
        let analog = LlmAnalog::from_targets(&[82.2, 12.8, 5.0], &[0.0, 0.0, 0.0]).unwrap();
        let (_, _, costs) = analog
            .generate(1000, 2, ClassGeometry::default(), 11)
            .unwrap();
        let ratios = empirical_bayes(&costs, None).unwrap().deferral_ratios;
        assert!((ratios[0] - 0.822).abs() < 1e-12);
        assert!((ratios[1] - 0.128).abs() < 1e-12);
        assert!((ratios[2] - 0.050).abs() < 1e-12);
    }

    #[test]
    fn analog_cost_sensitive_ratios() {
        let analog = LlmAnalog::from_targets(&[31.2, 12.0, 56.8], &[1.0, 0.6, 0.1]).unwrap();
        let (_, _, costs) = analog
            .generate(1000, 2, ClassGeometry::default(), 13)
            .unwrap();
        assert!((costs.normalizer - 2.0).abs() < 1e-15);
        let ratios = empirical_bayes(&costs, None).unwrap().deferral_ratios;
        assert!((ratios[0] - 0.312).abs() < 1e-12);
        assert!((ratios[1] - 0.120).abs() < 1e-12);
        assert!((ratios[2] - 0.568).abs() < 1e-12);
    }

    #[test]
    fn analog_perfect_first_expert() {
        // One region where only expert 1 is right: every sample routes to it.
        let analog = LlmAnalog::new(
            vec![1.0],
            Array2::from_shape_vec((1, 3), vec![1.0, 0.0, 0.0]).unwrap(),
            vec![0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
        )
        .unwrap();
        let (_, _, costs) = analog
            .generate(200, 2, ClassGeometry::default(), 7)
            .unwrap();
        let ratios = empirical_bayes(&costs, None).unwrap().deferral_ratios;
        assert_eq!(ratios, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn analog_rejects_unreachable_targets() {
        // Claim expert 2 should get everything while only expert 1 is right.
        let analog = LlmAnalog::new(
            vec![1.0],
            Array2::from_shape_vec((1, 2), vec![1.0, 0.0]).unwrap(),
            vec![0.0, 0.0],
            vec![0.0, 1.0],
        )
        .unwrap();
        let err = analog.generate(100, 2, ClassGeometry::default(), 3);
        assert!(matches!(err, Err(Error::InfeasibleTargets { .. })));
    }
}
