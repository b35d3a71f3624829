//! Report files and the stdout summary table.
//!
//! Layout under the output directory:
//! * `report.csv`: one row per experiment point.
//! * `<point id>/runs.csv`: one row per replication.
//! * `<point id>/point.json`: the resolved point config and `θ★`.
//! * `<point id>/sets/run_<r>.json`: confidence-set geometry per run.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiments::{ExperimentResult, PointResult};
use crate::io::{csv_writer, flush, write_json};

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Columns of `report.csv` for parameters named `names`.
pub fn report_header(names: &[String]) -> Vec<String> {
    let mut h: Vec<String> = ["experiment_id", "kernel", "a", "beta", "epsilon", "m", "n", "R"].map(String::from).into();
    h.extend(names.iter().map(|n| format!("mse_{n}")));
    h.extend(["coverage", "width", "height", "degenerate_count", "mean_seconds"].map(String::from));
    h.extend(names.iter().map(|n| format!("theta_star_{n}")));
    h
}

fn report_row(pr: &PointResult) -> Vec<String> {
    let p = &pr.point;
    let m = &pr.metrics;
    let mut row = vec![
        p.id.clone(),
        p.kernel.short_name().to_string(),
        p.service_shape().to_string(),
        opt(p.kernel.beta()),
        p.contamination_fraction().to_string(),
        p.m.to_string(),
        p.n.to_string(),
        m.replications.to_string(),
    ];
    row.extend(m.mse.iter().map(|v| v.to_string()));
    row.extend([
        opt(m.coverage),
        opt(m.mean_width),
        opt(m.mean_height),
        m.degenerate_count.to_string(),
        m.mean_seconds.to_string(),
    ]);
    row.extend(pr.theta_star.iter().map(|v| v.to_string()));
    row
}

/// Writes `report.csv` only; an empty slice gives a header-only file.
pub fn write_report_csv(path: &Path, names: &[String], points: &[PointResult]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let wrap = |source| Error::Csv { path: path.to_path_buf(), source };
    w.write_record(report_header(names)).map_err(wrap)?;
    for pr in points {
        w.write_record(report_row(pr)).map_err(wrap)?;
    }
    flush(w, path)
}

fn write_runs_csv(path: &Path, names: &[String], pr: &PointResult) -> Result<()> {
    let mut w = csv_writer(path)?;
    let wrap = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut header = vec!["run".to_string()];
    header.extend(names.iter().map(|n| format!("theta0_{n}")));
    header.extend(names.iter().map(|n| format!("theta_hat_{n}")));
    header.extend(
        ["final_score", "statistic", "in_set", "width", "height", "degenerate", "error", "seconds"].map(String::from),
    );
    w.write_record(&header).map_err(wrap)?;
    let p = names.len();
    for r in &pr.runs {
        let mut row = vec![r.run.to_string()];
        row.extend(r.theta0.iter().map(|v| v.to_string()));
        if r.theta_hat.len() == p {
            row.extend(r.theta_hat.iter().map(|v| v.to_string()));
        } else {
            row.extend(std::iter::repeat_n(String::new(), p));
        }
        row.extend([
            opt(r.final_score),
            opt(r.statistic),
            r.in_set.map(|b| b.to_string()).unwrap_or_default(),
            opt(r.width()),
            opt(r.height()),
            r.degenerate.to_string(),
            r.error.clone().unwrap_or_default(),
            r.seconds.to_string(),
        ]);
        w.write_record(&row).map_err(wrap)?;
    }
    flush(w, path)
}

/// Writes every artifact of `result` under `out_dir`.
pub fn write_report(result: &ExperimentResult, out_dir: &Path) -> Result<()> {
    write_report_csv(&out_dir.join("report.csv"), &result.param_names, &result.points)?;
    for pr in &result.points {
        let dir = out_dir.join(&pr.point.id);
        write_runs_csv(&dir.join("runs.csv"), &result.param_names, pr)?;
        write_json(
            &dir.join("point.json"),
            &serde_json::json!({ "point": pr.point, "theta_star": pr.theta_star, "metrics": pr.metrics }),
        )?;
        for r in &pr.runs {
            if let Some(set) = &r.set {
                write_json(&dir.join("sets").join(format!("run_{:04}.json", r.run)), set)?;
            }
        }
    }
    Ok(())
}

fn cell(v: Option<f64>, prec: usize) -> String {
    match v {
        Some(x) if x.abs() >= 1e-3 || x == 0.0 => format!("{x:.prec$}"),
        Some(x) => format!("{x:.2e}"),
        None => "-".into(),
    }
}

/// Human-readable summary, one line per point.
pub fn format_table(result: &ExperimentResult) -> String {
    let names = &result.param_names;
    let mut cols: Vec<String> = ["point", "kernel", "m", "n", "R"].map(String::from).into();
    cols.extend(names.iter().map(|n| format!("mse_{n}")));
    cols.extend(["cov", "width", "height", "deg", "sec/run"].map(String::from));
    cols.extend(names.iter().map(|n| format!("star_{n}")));
    let mut rows = vec![cols];
    for pr in &result.points {
        let m = &pr.metrics;
        let mut row = vec![
            pr.point.id.clone(),
            pr.point.kernel.short_name().to_string(),
            pr.point.m.to_string(),
            pr.point.n.to_string(),
            m.replications.to_string(),
        ];
        row.extend(m.mse.iter().map(|v| format!("{v:.2e}")));
        row.extend([
            cell(m.coverage, 3),
            cell(m.mean_width, 4),
            cell(m.mean_height, 4),
            m.degenerate_count.to_string(),
            format!("{:.2}", m.mean_seconds),
        ]);
        row.extend(pr.theta_star.iter().map(|v| format!("{v:.4}")));
        rows.push(row);
    }
    let widths: Vec<usize> =
        (0..rows[0].len()).map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}
