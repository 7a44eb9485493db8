//! Text formats: comma-delimited matrices with a header row, flat
//! `key = value` manifests, and the evaluation report object.
//!
//! All files are UTF-8 with LF line endings; floats carry 9 significant
//! digits; labels and expert indices are 1-based on disk.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::oracle::{DiscreteInstance, DiscretePoint, ScoreGrid};
use crate::router::{FeatureMap, Router};
use crate::train::EpochStat;
use crate::types::{CostTensor, CostType, Dataset};

/// Canonical float rendering: 9 significant digits, scientific notation.
pub fn format_float(v: f64) -> String {
    format!("{v:.8e}")
}

fn parse_float(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::parse(format!("bad float {s:?}")))
}

fn parse_usize(s: &str) -> Result<usize> {
    s.trim()
        .parse::<usize>()
        .map_err(|_| Error::parse(format!("bad integer {s:?}")))
}

fn split_csv_line(line: &str) -> Vec<&str> {
    line.split(',').collect()
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut out = String::new();
    out.push_str("label");
    for j in 0..dataset.dim() {
        write!(out, ",x{}", j + 1).unwrap();
    }
    out.push('\n');
    for (i, &y) in dataset.labels.iter().enumerate() {
        write!(out, "{}", y + 1).unwrap();
        for v in dataset.features.row(i) {
            write!(out, ",{}", format_float(*v)).unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_dataset(path: &Path, n_classes: usize) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse("empty dataset file"))?;
    let dim = split_csv_line(header).len() - 1;
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields = split_csv_line(line);
        if fields.len() != dim + 1 {
            return Err(Error::parse(format!("dataset row with {} fields", fields.len())));
        }
        let label = parse_usize(fields[0])?;
        if label == 0 {
            return Err(Error::parse("labels on disk are 1-based"));
        }
        labels.push(label - 1);
        for f in &fields[1..] {
            values.push(parse_float(f)?);
        }
    }
    let rows = labels.len();
    let features = Array2::from_shape_vec((rows, dim), values)
        .map_err(|e| Error::parse(e.to_string()))?;
    Dataset::new(features, labels, n_classes)
}

pub fn write_predictions(path: &Path, predictions: &Array2<usize>) -> Result<()> {
    let mut out = String::new();
    let p = predictions.ncols();
    out.push_str(
        &(1..=p)
            .map(|k| format!("expert_{k}"))
            .collect::<Vec<_>>()
            .join(","),
    );
    out.push('\n');
    for row in predictions.rows() {
        out.push_str(
            &row.iter()
                .map(|&y| (y + 1).to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Array2<usize>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse("empty predictions file"))?;
    let p = split_csv_line(header).len();
    let mut values = Vec::new();
    let mut rows = 0;
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields = split_csv_line(line);
        if fields.len() != p {
            return Err(Error::parse("ragged predictions row"));
        }
        for f in fields {
            let v = parse_usize(f)?;
            if v == 0 {
                return Err(Error::parse("predictions on disk are 1-based"));
            }
            values.push(v - 1);
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, p), values).map_err(|e| Error::parse(e.to_string()))
}

pub fn write_costs(path: &Path, costs: &CostTensor) -> Result<()> {
    let mut out = String::new();
    let p = costs.n_experts();
    out.push_str(
        &(1..=p)
            .map(|k| format!("cost_{k}"))
            .collect::<Vec<_>>()
            .join(","),
    );
    out.push('\n');
    for row in costs.values.rows() {
        out.push_str(
            &row.iter()
                .map(|&v| format_float(v))
                .collect::<Vec<_>>()
                .join(","),
        );
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_costs(path: &Path, cost_type: CostType, normalizer: f64) -> Result<CostTensor> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse("empty costs file"))?;
    let p = split_csv_line(header).len();
    let mut values = Vec::new();
    let mut rows = 0;
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields = split_csv_line(line);
        if fields.len() != p {
            return Err(Error::parse("ragged cost row"));
        }
        for f in fields {
            values.push(parse_float(f)?);
        }
        rows += 1;
    }
    let values = Array2::from_shape_vec((rows, p), values)
        .map_err(|e| Error::parse(e.to_string()))?;
    CostTensor::new(values, cost_type, normalizer)
}

/// Ordered `key = value` file with `#` comments.
pub fn write_key_values(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut out = String::new();
    for (k, v) in entries {
        writeln!(out, "{k} = {v}").unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_key_values(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path)?;
    parse_key_values(&text)
}

pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::parse(format!(
                "line {}: expected `key = value`, got {raw:?}",
                lineno + 1
            )));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn lookup<'a>(entries: &'a [(String, String)], key: &str) -> Option<&'a str> {
    entries
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
}

pub fn require<'a>(entries: &'a [(String, String)], key: &str) -> Result<&'a str> {
    lookup(entries, key).ok_or_else(|| Error::parse(format!("missing key {key:?}")))
}

/// Flat JSON-style rendering of an evaluation report, stable key order.
pub fn eval_report_to_string(report: &EvalReport) -> String {
    let mut out = String::from("{");
    write!(
        out,
        "\"mean_deferral_loss\": {}, \"n_samples\": {}",
        format_float(report.mean_deferral_loss),
        report.n_samples
    )
    .unwrap();
    for (k, r) in report.deferral_ratios.iter().enumerate() {
        write!(out, ", \"ratio_{}\": {}", k + 1, format_float(*r)).unwrap();
    }
    out.push_str("}\n");
    out
}

pub fn write_eval_report(path: &Path, report: &EvalReport) -> Result<()> {
    fs::write(path, eval_report_to_string(report))?;
    Ok(())
}

/// Training trace: epoch, objective, validation loss, deferral ratios.
pub fn write_trace(path: &Path, trace: &[EpochStat]) -> Result<()> {
    let mut out = String::new();
    let p = trace.first().map_or(0, |t| t.val_ratios.len());
    out.push_str("epoch,objective,val_dl");
    for k in 1..=p {
        write!(out, ",ratio_{k}").unwrap();
    }
    out.push('\n');
    for stat in trace {
        write!(
            out,
            "{},{},{}",
            stat.epoch,
            format_float(stat.objective),
            format_float(stat.val_deferral_loss)
        )
        .unwrap();
        for r in &stat.val_ratios {
            write!(out, ",{}", format_float(*r)).unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_router(path: &Path, router: &Router) -> Result<()> {
    let mut entries: Vec<(String, String)> = Vec::new();
    match &router.feature_map {
        FeatureMap::Identity { input_dim } => {
            entries.push(("feature_map".into(), "identity".into()));
            entries.push(("input_dim".into(), input_dim.to_string()));
        }
        FeatureMap::RandomFourier {
            input_dim,
            output_dim,
            bandwidth,
            seed,
        } => {
            entries.push(("feature_map".into(), "random_fourier".into()));
            entries.push(("input_dim".into(), input_dim.to_string()));
            entries.push(("output_dim".into(), output_dim.to_string()));
            entries.push(("bandwidth".into(), format_float(*bandwidth)));
            entries.push(("fourier_seed".into(), seed.to_string()));
        }
    }
    entries.push(("experts".into(), router.n_experts().to_string()));
    for (k, row) in router.weights.rows().into_iter().enumerate() {
        let rendered = row
            .iter()
            .map(|&w| format_float(w))
            .collect::<Vec<_>>()
            .join(",");
        entries.push((format!("weights_{}", k + 1), rendered));
    }
    write_key_values(path, &entries)
}

pub fn read_router(path: &Path) -> Result<Router> {
    let entries = read_key_values(path)?;
    let input_dim = parse_usize(require(&entries, "input_dim")?)?;
    let feature_map = match require(&entries, "feature_map")? {
        "identity" => FeatureMap::identity(input_dim),
        "random_fourier" => FeatureMap::random_fourier(
            input_dim,
            parse_usize(require(&entries, "output_dim")?)?,
            parse_float(require(&entries, "bandwidth")?)?,
            require(&entries, "fourier_seed")?
                .parse::<u64>()
                .map_err(|_| Error::parse("bad fourier seed"))?,
        ),
        other => return Err(Error::parse(format!("unknown feature map {other:?}"))),
    };
    let p = parse_usize(require(&entries, "experts")?)?;
    let dim = feature_map.output_dim();
    let mut weights = Array2::zeros((p, dim));
    for k in 0..p {
        let row = require(&entries, &format!("weights_{}", k + 1))?;
        let fields = split_csv_line(row);
        if fields.len() != dim {
            return Err(Error::parse(format!(
                "weights_{} has {} entries, expected {dim}",
                k + 1,
                fields.len()
            )));
        }
        for (j, f) in fields.iter().enumerate() {
            weights[(k, j)] = parse_float(f)?;
        }
    }
    Router::new(weights, feature_map)
}

/// Discrete instances flatten to one row per (point, label):
/// `point,marginal,label_prob,cost_1..cost_p`, plus the grid on a manifest row.
pub fn write_instance(path: &Path, instance: &DiscreteInstance) -> Result<()> {
    let p = instance.n_experts();
    let mut out = String::new();
    writeln!(
        out,
        "# grid = {},{},{}",
        format_float(instance.score_grid.lo),
        format_float(instance.score_grid.hi),
        format_float(instance.score_grid.step)
    )
    .unwrap();
    out.push_str("point,marginal,label_prob");
    for k in 1..=p {
        write!(out, ",cost_{k}").unwrap();
    }
    out.push('\n');
    for (idx, pt) in instance.points.iter().enumerate() {
        for (y, row) in pt.costs.rows().into_iter().enumerate() {
            write!(
                out,
                "{},{},{}",
                idx + 1,
                format_float(pt.marginal),
                format_float(pt.label_dist[y])
            )
            .unwrap();
            for v in row {
                write!(out, ",{}", format_float(*v)).unwrap();
            }
            out.push('\n');
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_instance(path: &Path) -> Result<DiscreteInstance> {
    let text = fs::read_to_string(path)?;
    let mut grid = ScoreGrid::default();
    let mut rows: Vec<(usize, f64, f64, Vec<f64>)> = Vec::new();
    let mut header_seen = false;
    for line in text.lines() {
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("# grid = ") {
            let parts = split_csv_line(rest);
            if parts.len() != 3 {
                return Err(Error::parse("grid comment needs lo,hi,step"));
            }
            grid = ScoreGrid::new(
                parse_float(parts[0])?,
                parse_float(parts[1])?,
                parse_float(parts[2])?,
            )?;
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        if !header_seen {
            header_seen = true;
            continue;
        }
        let fields = split_csv_line(line);
        if fields.len() < 5 {
            return Err(Error::parse("instance row too short"));
        }
        let point = parse_usize(fields[0])?;
        let marginal = parse_float(fields[1])?;
        let prob = parse_float(fields[2])?;
        let costs = fields[3..]
            .iter()
            .map(|f| parse_float(f))
            .collect::<Result<Vec<_>>>()?;
        rows.push((point, marginal, prob, costs));
    }
    if rows.is_empty() {
        return Err(Error::parse("no instance rows"));
    }
    let n_points = rows.iter().map(|r| r.0).max().unwrap();
    let p = rows[0].3.len();
    let mut points = Vec::with_capacity(n_points);
    let mut marginal_total = 0.0;
    for idx in 1..=n_points {
        let mine: Vec<_> = rows.iter().filter(|r| r.0 == idx).collect();
        if mine.is_empty() {
            return Err(Error::parse(format!("missing rows for point {idx}")));
        }
        let marginal = mine[0].1;
        marginal_total += marginal;
        // The 9-digit rendering perturbs simplex sums past the type
        // tolerance, so distributions are renormalized on the way in.
        let dist_total: f64 = mine.iter().map(|r| r.2).sum();
        if dist_total <= 0.0 {
            return Err(Error::parse(format!("point {idx} has zero label mass")));
        }
        let label_dist: Vec<f64> = mine.iter().map(|r| r.2 / dist_total).collect();
        let mut costs = Array2::zeros((mine.len(), p));
        for (y, r) in mine.iter().enumerate() {
            for k in 0..p {
                costs[(y, k)] = r.3[k];
            }
        }
        points.push(DiscretePoint {
            marginal,
            label_dist,
            costs,
        });
    }
    if marginal_total <= 0.0 {
        return Err(Error::parse("zero marginal mass"));
    }
    for pt in points.iter_mut() {
        pt.marginal /= marginal_total;
    }
    DiscreteInstance::new(points, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::random_instance;
    use ndarray::array;
    use tempfile::tempdir;

    #[test]
    fn float_format_nine_significant_digits() {
        assert_eq!(format_float(0.54), "5.40000000e-1");
        assert_eq!(format_float(1.0), "1.00000000e0");
        let v = 0.123456789123;
        let parsed: f64 = format_float(v).parse().unwrap();
        assert!((parsed - v).abs() < 1e-9);
    }

    #[test]
    fn dataset_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("dataset.csv");
        let ds = Dataset::new(array![[0.5, -1.25], [3.0, 0.0]], vec![0, 2], 3).unwrap();
        write_dataset(&path, &ds).unwrap();
        let back = read_dataset(&path, 3).unwrap();
        assert_eq!(back.labels, ds.labels);
        for (a, b) in back.features.iter().zip(ds.features.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn costs_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("costs.csv");
        let costs = CostTensor::new(
            array![[0.0, 0.5], [0.5, 0.0]],
            CostType::ErrorOnly,
            2.0,
        )
        .unwrap();
        write_costs(&path, &costs).unwrap();
        let back = read_costs(&path, CostType::ErrorOnly, 2.0).unwrap();
        assert_eq!(back.values, costs.values);
    }

    #[test]
    fn key_values_roundtrip_with_comments() {
        let parsed = parse_key_values("# comment\nfoo = 1\n\nbar = a b c\n").unwrap();
        assert_eq!(lookup(&parsed, "foo"), Some("1"));
        assert_eq!(lookup(&parsed, "bar"), Some("a b c"));
        assert!(require(&parsed, "baz").is_err());
        assert!(parse_key_values("not a pair\n").is_err());
    }

    #[test]
    fn router_roundtrip_both_maps() {
        let dir = tempdir().unwrap();
        for fm in [
            FeatureMap::identity(3),
            FeatureMap::random_fourier(3, 8, 1.5, 42),
        ] {
            let path = dir.path().join("router.txt");
            let weights = Array2::from_shape_fn((2, fm.output_dim()), |(k, j)| {
                (k as f64 + 1.0) * 0.1 - j as f64 * 0.01
            });
            let router = Router::new(weights, fm).unwrap();
            write_router(&path, &router).unwrap();
            let back = read_router(&path).unwrap();
            assert_eq!(back.feature_map, router.feature_map);
            for (a, b) in back.weights.iter().zip(router.weights.iter()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn instance_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("instance.csv");
        let inst = random_instance(5, 3, 2, 3);
        write_instance(&path, &inst).unwrap();
        let back = read_instance(&path).unwrap();
        assert_eq!(back.points.len(), inst.points.len());
        for (a, b) in back.points.iter().zip(&inst.points) {
            assert!((a.marginal - b.marginal).abs() < 1e-9);
            for (x, y) in a.costs.iter().zip(b.costs.iter()) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn eval_report_rendering_is_stable() {
        let report = EvalReport {
            mean_deferral_loss: 0.54,
            deferral_ratios: vec![1.0, 0.0],
            n_samples: 10,
        };
        let a = eval_report_to_string(&report);
        let b = eval_report_to_string(&report);
        assert_eq!(a, b);
        assert!(a.starts_with("{\"mean_deferral_loss\": 5.40000000e-1"));
        assert!(a.contains("\"ratio_2\": 0.00000000e0"));
    }
}
