//! End-to-end experiment pipeline: generate, train, evaluate, aggregate,
//! and render the sweep report.

use std::path::Path;

use rayon::prelude::*;

use mild_core::eval::evaluate_mapped;
use mild_core::io::format_float;
use mild_core::oracle::empirical_bayes;
use mild_core::synth::{generate, LlmAnalog, SetupSpec};
use mild_core::train::{split_indices, train, Method};
use mild_core::types::{CostTensor, Dataset, ExpertPanel};
use mild_core::{Error, Result};

use crate::config::{ExperimentConfig, MethodChoice, SetupChoice};

/// One (method, seed) result.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub method: MethodChoice,
    pub seed: u64,
    pub deferral_loss: f64,
    pub ratios: Vec<f64>,
    pub diverged: bool,
}

/// Aggregate over the seeds of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: MethodChoice,
    pub mean_deferral_loss: f64,
    pub std_deferral_loss: f64,
    pub mean_ratios: Vec<f64>,
    pub runs: Vec<SeedRun>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub summaries: Vec<MethodSummary>,
    pub n_experts: usize,
    /// Cost type of the generated data; the routing analog derives it from
    /// its betas rather than the config field.
    pub cost_type: mild_core::CostType,
    pub any_divergence: bool,
}

impl SweepOutcome {
    pub fn summary(&self, method: MethodChoice) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }
}

/// Generate the dataset triple for one seed of the configured setup.
pub fn generate_data(
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(Dataset, ExpertPanel, CostTensor)> {
    match &config.setup {
        SetupChoice::Coverage(kind) => {
            let spec = SetupSpec {
                kind: kind.clone(),
                n_classes: config.n_classes,
                n_samples: config.n_samples,
                dim: config.dim,
                geometry: config.geometry,
                fidelity: config.fidelity,
                cost_type: config.cost_type,
                seed,
            };
            generate(&spec)
        }
        SetupChoice::LlmAnalog => {
            let analog = LlmAnalog::from_targets(&config.targets, &config.betas)?;
            analog.generate(config.n_samples, config.dim, config.geometry, seed)
        }
    }
}

/// Run every configured method on one seed. All methods share the data,
/// the feature map and the holdout rows.
fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<(Vec<SeedRun>, mild_core::CostType)> {
    let (dataset, _panel, costs) = generate_data(config, seed)?;
    let cost_type = costs.cost_type;
    let m = dataset.n_samples();
    let (_, holdout) = split_indices(m, seed, 0.2);
    let mut runs = Vec::with_capacity(config.methods.len());
    for &method in &config.methods {
        let run = match method {
            MethodChoice::Oracle => {
                let report = empirical_bayes(&costs, Some(&holdout))?;
                SeedRun {
                    method,
                    seed,
                    deferral_loss: report.mean_deferral_loss,
                    ratios: report.deferral_ratios,
                    diverged: false,
                }
            }
            MethodChoice::Mild | MethodChoice::Tdef => {
                let tc = config.train_config_for(dataset.dim(), seed)?;
                let core_method = if method == MethodChoice::Mild {
                    Method::Mild
                } else {
                    Method::Tdef
                };
                match train(&dataset, &costs, config.reward_scheme, &tc, core_method) {
                    Ok(outcome) => SeedRun {
                        method,
                        seed,
                        deferral_loss: outcome.final_validation.mean_deferral_loss,
                        ratios: outcome.final_validation.deferral_ratios,
                        diverged: false,
                    },
                    Err(Error::TrainingDiverged { .. }) => SeedRun {
                        method,
                        seed,
                        deferral_loss: f64::NAN,
                        ratios: vec![f64::NAN; costs.n_experts()],
                        diverged: true,
                    },
                    Err(e) => return Err(e),
                }
            }
        };
        runs.push(run);
    }
    Ok((runs, cost_type))
}

fn round_trip(v: f64) -> f64 {
    format_float(v).parse().expect("canonical float parses")
}

fn summarize(method: MethodChoice, runs: Vec<SeedRun>, p: usize) -> MethodSummary {
    // Aggregates are computed from the 9-digit on-disk renderings so an
    // independent pass over the report file reproduces them exactly.
    let healthy: Vec<&SeedRun> = runs.iter().filter(|r| !r.diverged).collect();
    let n = healthy.len();
    let (mean, std, mean_ratios) = if n == 0 {
        (f64::NAN, f64::NAN, vec![f64::NAN; p])
    } else {
        let values: Vec<f64> = healthy
            .iter()
            .map(|r| round_trip(r.deferral_loss))
            .collect();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0))
                .sqrt()
        } else {
            0.0
        };
        let mut mean_ratios = vec![0.0; p];
        for run in &healthy {
            for (k, &r) in run.ratios.iter().enumerate() {
                mean_ratios[k] += round_trip(r) / n as f64;
            }
        }
        (mean, std, mean_ratios)
    };
    MethodSummary {
        method,
        mean_deferral_loss: mean,
        std_deferral_loss: std,
        mean_ratios,
        runs,
    }
}

/// Run the full sweep: each seed's pipeline is independent, so seeds run
/// concurrently; assembly is in seed order.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepOutcome> {
    let seeds: Vec<u64> = (0..config.n_seeds)
        .map(|i| config.seed.wrapping_add(i as u64))
        .collect();
    let per_seed: Vec<Result<(Vec<SeedRun>, mild_core::CostType)>> =
        seeds.par_iter().map(|&s| run_seed(config, s)).collect();
    let mut rows: Vec<Vec<SeedRun>> = Vec::with_capacity(per_seed.len());
    let mut cost_type = config.cost_type;
    for result in per_seed {
        let (runs, ct) = result?;
        cost_type = ct;
        rows.push(runs);
    }
    let p = config.n_experts();
    let mut summaries = Vec::new();
    for &method in &config.methods {
        let runs: Vec<SeedRun> = rows
            .iter()
            .flatten()
            .filter(|r| r.method == method)
            .cloned()
            .collect();
        summaries.push(summarize(method, runs, p));
    }
    let any_divergence = summaries
        .iter()
        .any(|s| s.runs.iter().any(|r| r.diverged));
    Ok(SweepOutcome {
        summaries,
        n_experts: p,
        cost_type,
        any_divergence,
    })
}

/// Render the sweep report: one row per (method, seed), then one aggregate
/// row per method. Divergent seeds keep a marker row.
pub fn render_report(config: &ExperimentConfig, outcome: &SweepOutcome) -> String {
    let mut out = String::new();
    out.push_str("method,setup,cost_type,seed,dl,dl_std");
    for k in 1..=outcome.n_experts {
        out.push_str(&format!(",ratio_{k}"));
    }
    out.push('\n');
    let setup = config.setup_name();
    let cost_type = outcome.cost_type.as_str();
    for summary in &outcome.summaries {
        for run in &summary.runs {
            let method = run.method.as_str();
            if run.diverged {
                out.push_str(&format!("{method},{setup},{cost_type},{},diverged,", run.seed));
                // Empty dl_std plus one empty cell per expert ratio.
                out.push_str(&vec![""; outcome.n_experts + 1].join(","));
            } else {
                // Seed rows leave the dl_std column empty.
                out.push_str(&format!(
                    "{method},{setup},{cost_type},{},{},,",
                    run.seed,
                    format_float(run.deferral_loss)
                ));
                out.push_str(
                    &run.ratios
                        .iter()
                        .map(|&r| format_float(r))
                        .collect::<Vec<_>>()
                        .join(","),
                );
            }
            out.push('\n');
        }
    }
    for summary in &outcome.summaries {
        out.push_str(&format!(
            "{},{setup},{cost_type},aggregate,{},{}",
            summary.method.as_str(),
            format_float(summary.mean_deferral_loss),
            format_float(summary.std_deferral_loss)
        ));
        for &r in &summary.mean_ratios {
            out.push_str(&format!(",{}", format_float(r)));
        }
        out.push('\n');
    }
    out
}

/// Independent pass over an emitted report: re-derive each method's
/// aggregate from its seed rows and demand exact agreement.
pub fn verify_report(text: &str) -> Result<()> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse("empty report"))?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.len() < 6 {
        return Err(Error::parse("report header too short"));
    }
    let p = columns.len() - 6;
    struct Row<'a> {
        method: &'a str,
        dl: f64,
        ratios: Vec<f64>,
    }
    let mut seed_rows: Vec<Row> = Vec::new();
    let mut aggregates: Vec<Row> = Vec::new();
    let mut agg_std: Vec<f64> = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(Error::parse(format!("ragged report row: {line:?}")));
        }
        if fields[4] == "diverged" {
            continue;
        }
        let dl: f64 = fields[4]
            .parse()
            .map_err(|_| Error::parse(format!("bad dl {:?}", fields[4])))?;
        let ratios: Vec<f64> = fields[6..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| Error::parse("bad ratio")))
            .collect::<Result<_>>()?;
        if fields[3] == "aggregate" {
            agg_std.push(
                fields[5]
                    .parse()
                    .map_err(|_| Error::parse("bad aggregate std"))?,
            );
            aggregates.push(Row {
                method: fields[0],
                dl,
                ratios,
            });
        } else {
            seed_rows.push(Row {
                method: fields[0],
                dl,
                ratios,
            });
        }
    }
    for (agg, &std) in aggregates.iter().zip(&agg_std) {
        let mine: Vec<&Row> = seed_rows.iter().filter(|r| r.method == agg.method).collect();
        if mine.is_empty() {
            return Err(Error::parse(format!(
                "aggregate for {} has no seed rows",
                agg.method
            )));
        }
        let n = mine.len() as f64;
        let mean = mine.iter().map(|r| r.dl).sum::<f64>() / n;
        let expect_std = if mine.len() > 1 {
            (mine.iter().map(|r| (r.dl - mean) * (r.dl - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        if (round_trip(mean) - agg.dl).abs() > 0.0 || (round_trip(expect_std) - std).abs() > 0.0 {
            return Err(Error::parse(format!(
                "aggregate mismatch for {}: mean {mean} vs {}, std {expect_std} vs {std}",
                agg.method, agg.dl
            )));
        }
        for k in 0..p {
            let mean_r = mine.iter().map(|r| r.ratios[k]).sum::<f64>() / n;
            if (round_trip(mean_r) - agg.ratios[k]).abs() > 1e-15 {
                return Err(Error::parse(format!(
                    "aggregate ratio {k} mismatch for {}",
                    agg.method
                )));
            }
        }
    }
    Ok(())
}

/// Write generated data plus its manifest into a directory.
pub fn write_data_dir(
    dir: &Path,
    config: &ExperimentConfig,
    seed: u64,
    dataset: &Dataset,
    panel: &ExpertPanel,
    costs: &CostTensor,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    mild_core::io::write_dataset(&dir.join("dataset.csv"), dataset)?;
    mild_core::io::write_predictions(&dir.join("panel.csv"), &panel.predictions)?;
    mild_core::io::write_costs(&dir.join("costs.csv"), costs)?;
    let mut entries: Vec<(String, String)> = vec![
        ("setup".into(), config.setup_name().into()),
        ("seed".into(), seed.to_string()),
        ("n_classes".into(), dataset.n_classes.to_string()),
        ("n_samples".into(), dataset.n_samples().to_string()),
        ("dim".into(), dataset.dim().to_string()),
        ("n_experts".into(), panel.n_experts().to_string()),
        ("cost_type".into(), costs.cost_type.as_str().into()),
        ("normalizer".into(), format_float(costs.normalizer)),
    ];
    for (k, b) in panel.beta.iter().enumerate() {
        entries.push((format!("beta_{}", k + 1), format_float(*b)));
    }
    mild_core::io::write_key_values(&dir.join("manifest.txt"), &entries)
}

/// Load a data directory written by [`write_data_dir`].
pub fn read_data_dir(dir: &Path) -> Result<(Dataset, CostTensor)> {
    let manifest = mild_core::io::read_key_values(&dir.join("manifest.txt"))?;
    let n_classes: usize = mild_core::io::require(&manifest, "n_classes")?
        .parse()
        .map_err(|_| Error::parse("bad n_classes"))?;
    let cost_type = match mild_core::io::require(&manifest, "cost_type")? {
        "error_only" => mild_core::CostType::ErrorOnly,
        "error_plus_cost" => mild_core::CostType::ErrorPlusCost,
        other => return Err(Error::parse(format!("unknown cost type {other:?}"))),
    };
    let normalizer: f64 = mild_core::io::require(&manifest, "normalizer")?
        .parse()
        .map_err(|_| Error::parse("bad normalizer"))?;
    let dataset = mild_core::io::read_dataset(&dir.join("dataset.csv"), n_classes)?;
    let costs = mild_core::io::read_costs(&dir.join("costs.csv"), cost_type, normalizer)?;
    if costs.n_samples() != dataset.n_samples() {
        return Err(Error::dims("costs vs dataset rows".to_string()));
    }
    Ok((dataset, costs))
}

/// Train one method on freshly generated (or loaded) data, returning the
/// outcome together with the data used.
pub fn run_training(
    config: &ExperimentConfig,
    method: Method,
    seed: u64,
    data: Option<(Dataset, CostTensor)>,
) -> Result<(Dataset, CostTensor, mild_core::train::TrainOutcome)> {
    let (dataset, costs) = match data {
        Some(pair) => pair,
        None => {
            let (ds, _, costs) = generate_data(config, seed)?;
            (ds, costs)
        }
    };
    let tc = config.train_config_for(dataset.dim(), seed)?;
    let outcome = train(&dataset, &costs, config.reward_scheme, &tc, method)?;
    Ok((dataset, costs, outcome))
}

/// Evaluate a router loaded from disk against a data directory.
pub fn evaluate_dir(dir: &Path, router_path: &Path) -> Result<mild_core::EvalReport> {
    let (dataset, costs) = read_data_dir(dir)?;
    let router = mild_core::io::read_router(router_path)?;
    let phi = router.feature_map.apply_matrix(&dataset.features)?;
    evaluate_mapped(&router, &phi, &costs, None)
}
