//! Model selection, accuracy-vs-SynOps curves and trend statistics.

use serde::{Deserialize, Serialize};

use super::RunRecord;
use crate::error::{Error, Result};

/// Best record within the accuracy budget: fewest SynOps, then higher SNN
/// accuracy, then smaller lambda. `None` when nothing is feasible.
pub fn select_best(records: &[RunRecord], baseline: &RunRecord, budget: f64) -> Option<RunRecord> {
    records
        .iter()
        .filter(|r| r.is_ok() && baseline.snn_acc - r.snn_acc < budget)
        .min_by(|a, b| {
            a.synops
                .total_cmp(&b.synops)
                .then(b.snn_acc.total_cmp(&a.snn_acc))
                .then(a.lambda.total_cmp(&b.lambda))
        })
        .cloned()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// SynOps divided by the largest SynOps among the model's records.
    pub synops: f64,
    pub accuracy: f64,
}

/// Normalized `(SynOps, SNN accuracy)` points of successful records.
pub fn curve_points(records: &[RunRecord], max_synops: f64) -> Vec<CurvePoint> {
    records
        .iter()
        .filter(|r| r.is_ok())
        .map(|r| CurvePoint {
            synops: if max_synops > 0.0 { r.synops / max_synops } else { 0.0 },
            accuracy: r.snn_acc,
        })
        .collect()
}

fn sorted(points: &[CurvePoint]) -> Vec<CurvePoint> {
    let mut p = points.to_vec();
    p.sort_by(|a, b| a.synops.total_cmp(&b.synops).then(a.accuracy.total_cmp(&b.accuracy)));
    p
}

/// Sorts by SynOps and replaces every accuracy with the running maximum.
pub fn smooth_curve(points: &[CurvePoint]) -> Vec<CurvePoint> {
    let mut p = sorted(points);
    let mut best = f64::NEG_INFINITY;
    for q in &mut p {
        best = best.max(q.accuracy);
        q.accuracy = best;
    }
    p
}

/// Trapezoidal area over `[0, 1]`. The curve is extended flat to `x = 0`
/// from its first point and to `x = 1` from its last.
pub fn auc(points: &[CurvePoint]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::Usage("area under an empty curve".into()));
    }
    if points.iter().any(|p| !(p.synops.is_finite() && p.accuracy.is_finite())) {
        return Err(Error::Numeric("non-finite curve point".into()));
    }
    let p = sorted(points);
    let first = p[0];
    let last = p[p.len() - 1];
    let mut area = first.accuracy * first.synops.max(0.0);
    for w in p.windows(2) {
        area += 0.5 * (w[0].accuracy + w[1].accuracy) * (w[1].synops - w[0].synops);
    }
    area += last.accuracy * (1.0 - last.synops).max(0.0);
    Ok(area)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        // ties share the mean of their positions
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = mean;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties; `None` when either
/// side is constant or there are fewer than two points.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Index of the first record (in the given order) whose SNN accuracy is more
/// than `drop` below `baseline_acc`; the length if there is none.
pub fn collapse_index(records: &[RunRecord], baseline_acc: f64, drop: f64) -> usize {
    records
        .iter()
        .position(|r| baseline_acc - r.snn_acc > drop)
        .unwrap_or(records.len())
}

/// Spearman correlation between lambda and SynOps over the successful
/// records of one regularizer, ascending in lambda and cut at the collapse
/// point. `None` with fewer than three usable points.
pub fn trend_correlation(records: &[RunRecord], baseline_acc: f64, drop: f64) -> Option<f64> {
    let mut rs: Vec<RunRecord> = records.iter().filter(|r| r.is_ok()).cloned().collect();
    rs.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    rs.truncate(collapse_index(&rs, baseline_acc, drop));
    if rs.len() < 3 {
        return None;
    }
    let l: Vec<f64> = rs.iter().map(|r| r.lambda).collect();
    let s: Vec<f64> = rs.iter().map(|r| r.synops).collect();
    spearman(&l, &s)
}
