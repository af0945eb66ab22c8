//! Tables and figures from sweep records.

use std::fs;
use std::path::{Path, PathBuf};

use super::analysis::{auc, curve_points, select_best, smooth_curve, CurvePoint};
use super::svg::{contour_svg, line_plot_svg, Series};
use super::RunRecord;
use crate::error::{Error, Result};
use crate::metrics::pct_change;
use crate::regularizer::{LandscapeGrid, RegKind};

pub const RESULTS_HEADER: &str = "reg,lambda,dnn_acc,snn_acc,spikes,eflops,synops,pct_spikes,pct_eflops,pct_synops";
const AUC_HEADER: &str = "model,reg,auc";

/// Paths written by [`emit_reports`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportFiles {
    pub csv: Vec<PathBuf>,
    pub svg: Vec<PathBuf>,
}

/// `raw/smoothed`, four decimals each.
pub fn format_auc_cell(raw: f64, smoothed: f64) -> String {
    format!("{raw:.4}/{smoothed:.4}")
}

fn pct(candidate: f64, baseline: Option<f64>, what: &'static str) -> String {
    match baseline.map(|b| pct_change(candidate, b, what)) {
        Some(Ok(v)) => format!("{v}"),
        _ => String::new(),
    }
}

fn results_row(r: &RunRecord, base: Option<&RunRecord>) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        r.reg,
        r.lambda,
        r.dnn_acc,
        r.snn_acc,
        r.spikes,
        r.eflops,
        r.synops,
        pct(r.spikes, base.map(|b| b.spikes), "spikes"),
        pct(r.eflops, base.map(|b| b.eflops), "eflops"),
        pct(r.synops, base.map(|b| b.synops), "synops"),
    )
}

fn write(path: &Path, text: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    out.push(path.to_path_buf());
    Ok(())
}

/// Successful records grouped by regularizer in first-appearance order, each
/// group ascending in lambda. Baseline records are excluded.
fn groups(records: &[RunRecord]) -> Vec<(RegKind, Vec<RunRecord>)> {
    let mut out: Vec<(RegKind, Vec<RunRecord>)> = Vec::new();
    for r in records.iter().filter(|r| r.is_ok() && !r.is_baseline()) {
        match out.iter_mut().find(|(k, _)| *k == r.reg) {
            Some((_, v)) => v.push(r.clone()),
            None => out.push((r.reg, vec![r.clone()])),
        }
    }
    for (_, v) in &mut out {
        v.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    }
    out
}

/// Accuracy-vs-SynOps curve of one regularizer and its areas.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCurve {
    pub reg: RegKind,
    pub raw: Vec<CurvePoint>,
    pub smoothed: Vec<CurvePoint>,
    pub auc: f64,
    pub smoothed_auc: f64,
}

/// One curve per regularizer, each including the baseline run, with SynOps
/// normalized by the largest SynOps among all successful records.
pub fn sweep_curves(records: &[RunRecord]) -> Vec<SweepCurve> {
    let baseline = records.iter().find(|r| r.is_ok() && r.is_baseline());
    let max_synops = records
        .iter()
        .filter(|r| r.is_ok())
        .map(|r| r.synops)
        .fold(0.0, f64::max);
    groups(records)
        .into_iter()
        .map(|(reg, mut rs)| {
            rs.extend(baseline.cloned());
            let raw = curve_points(&rs, max_synops);
            let smoothed = smooth_curve(&raw);
            // groups are never empty, so neither are the curves
            let (auc_raw, auc_smooth) = (auc(&raw).unwrap_or(0.0), auc(&smoothed).unwrap_or(0.0));
            SweepCurve {
                reg,
                raw,
                smoothed,
                auc: auc_raw,
                smoothed_auc: auc_smooth,
            }
        })
        .collect()
}

/// Writes `results.csv` (every successful run), `selected.csv` (baseline
/// plus the budget-feasible minimum-SynOps run per regularizer), `auc.csv`,
/// and, when there are successful records, metric-vs-lambda and
/// accuracy-vs-SynOps plots plus one contour plot per landscape grid.
pub fn emit_reports(
    records: &[RunRecord],
    model: &str,
    budget: f64,
    landscapes: &[LandscapeGrid],
    out_dir: &Path,
) -> Result<ReportFiles> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut files = ReportFiles::default();
    let baseline = records.iter().find(|r| r.is_ok() && r.is_baseline());
    let groups = groups(records);

    let mut results = format!("{RESULTS_HEADER}\n");
    if let Some(b) = baseline {
        results += &results_row(b, baseline);
        results.push('\n');
    }
    for (_, rs) in &groups {
        for r in rs {
            results += &results_row(r, baseline);
            results.push('\n');
        }
    }
    write(&out_dir.join("results.csv"), &results, &mut files.csv)?;

    let mut selected = format!("{RESULTS_HEADER}\n");
    if let Some(b) = baseline {
        selected += &results_row(b, baseline);
        selected.push('\n');
        for (k, rs) in &groups {
            match select_best(rs, b, budget) {
                Some(r) => {
                    selected += &results_row(&r, baseline);
                    selected.push('\n');
                }
                None => log::info!("no {k} run within the accuracy budget"),
            }
        }
    }
    write(&out_dir.join("selected.csv"), &selected, &mut files.csv)?;

    let curves = sweep_curves(records);
    let mut auc_csv = format!("{AUC_HEADER}\n");
    for c in &curves {
        auc_csv += &format!("{model},{},{}\n", c.reg, format_auc_cell(c.auc, c.smoothed_auc));
    }
    write(&out_dir.join("auc.csv"), &auc_csv, &mut files.csv)?;

    if !records.iter().any(|r| r.is_ok()) {
        return Ok(files);
    }

    type Metric = fn(&RunRecord) -> f64;
    let metrics: [(&str, &str, Metric); 5] = [
        ("dnn_acc", "DNN accuracy", |r| r.dnn_acc),
        ("snn_acc", "SNN accuracy", |r| r.snn_acc),
        ("spikes", "spikes per sample", |r| r.spikes),
        ("eflops", "EFLOPS per sample", |r| r.eflops),
        ("synops", "SynOps per sample", |r| r.synops),
    ];
    for (name, label, f) in metrics {
        let mut series: Vec<Series> = groups
            .iter()
            .map(|(k, rs)| Series {
                label: k.to_string(),
                points: rs.iter().map(|r| (r.lambda, f(r))).collect(),
                dashed: false,
            })
            .collect();
        if let Some(b) = baseline {
            // the reference run has no lambda; draw it as a level line across the grid
            let lambdas = groups.iter().flat_map(|(_, rs)| rs.iter().map(|r| r.lambda));
            let (lo, hi) = lambdas.fold((f64::INFINITY, 0.0f64), |(lo, hi), l| (lo.min(l), hi.max(l)));
            if lo.is_finite() {
                series.push(Series {
                    label: "baseline".into(),
                    points: vec![(lo, f(b)), (hi, f(b))],
                    dashed: true,
                });
            }
        }
        write(
            &out_dir.join(format!("{name}_vs_lambda.svg")),
            &line_plot_svg(&format!("{model}: {label}"), "lambda", label, &series, true),
            &mut files.svg,
        )?;
    }

    let mut series = Vec::new();
    for SweepCurve { reg: k, raw, smoothed: smooth, .. } in &curves {
        let mut raw = raw.clone();
        raw.sort_by(|a, b| a.synops.total_cmp(&b.synops).then(a.accuracy.total_cmp(&b.accuracy)));
        series.push(Series {
            label: k.to_string(),
            points: raw.iter().map(|p| (p.synops, p.accuracy)).collect(),
            dashed: false,
        });
        series.push(Series {
            label: format!("{k} smoothed"),
            points: smooth.iter().map(|p| (p.synops, p.accuracy)).collect(),
            dashed: true,
        });
    }
    write(
        &out_dir.join("accuracy_vs_synops.svg"),
        &line_plot_svg(
            &format!("{model}: accuracy vs SynOps"),
            "normalized SynOps",
            "SNN accuracy",
            &series,
            false,
        ),
        &mut files.svg,
    )?;
    for g in landscapes {
        write(
            &out_dir.join(format!("landscape_{}.svg", g.kind)),
            &contour_svg(g, 8),
            &mut files.svg,
        )?;
    }
    Ok(files)
}
