//! Percentile calibration of hidden activations.

use serde::{Deserialize, Serialize};

use crate::data::{sequential_batches, Dataset};
use crate::error::{Error, Result};
use crate::model::{forward, ModelParams, ModelSpec};
use crate::scalar::Scalar;
use crate::tensor::Tape;

pub const DEFAULT_PERCENTILE: f64 = 99.9;

/// Per-ReLU-layer scale factors, in forward order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStats {
    pub percentile: f64,
    pub scales: Vec<f64>,
    /// Layers that never produced a non-zero activation; their scale is 1.
    pub degenerate: Vec<bool>,
    pub samples: usize,
}

impl CalibrationStats {
    pub fn identity(layers: usize) -> Self {
        CalibrationStats {
            percentile: 100.0,
            scales: vec![1.0; layers],
            degenerate: vec![false; layers],
            samples: 0,
        }
    }
}

/// Linear-interpolated percentile of already sorted values.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let (lo, hi, frac) = rank_pair(sorted.len() as u64, q);
    let (a, b) = (sorted[lo as usize], sorted[hi as usize]);
    a + frac * (b - a)
}

fn rank_pair(n: u64, q: f64) -> (u64, u64, f64) {
    let h = (n - 1) as f64 * q / 100.0;
    let lo = (h.floor() as u64).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    (lo, hi, h - lo as f64)
}

// Positive f64 values are ordered like their bit patterns, so the top bits
// give an order-preserving bucket index.
const BUCKET_SHIFT: u32 = 44;
const BUCKETS: usize = 1 << (63 - BUCKET_SHIFT);

fn bucket(v: f64) -> usize {
    (v.to_bits() >> BUCKET_SHIFT) as usize
}

fn for_each_hidden<T: Scalar>(
    spec: &ModelSpec,
    params: &ModelParams<T>,
    data: &Dataset,
    batch_size: usize,
    mut f: impl FnMut(usize, &[T]),
) -> Result<()> {
    for (x, _) in sequential_batches::<T>(data, batch_size) {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let input = tape.constant(x);
        let trace = forward(spec, &bound, &mut tape, input)?;
        for (r, &h) in trace.hidden.iter().enumerate() {
            f(r, tape.value(h).data());
        }
    }
    Ok(())
}

/// Measures the `percentile` of the non-zero activations of every ReLU layer
/// over `data`.
///
/// Exact: a first pass builds an order-preserving histogram, a second pass
/// collects only the buckets holding the two ranks to interpolate between.
pub fn calibrate<T: Scalar>(
    spec: &ModelSpec,
    params: &ModelParams<T>,
    data: &Dataset,
    percentile: f64,
    batch_size: usize,
) -> Result<CalibrationStats> {
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::Usage(format!("percentile {percentile} outside (0, 100]")));
    }
    if batch_size == 0 || data.is_empty() {
        return Err(Error::Usage("calibration needs a non-empty set and batch size".into()));
    }
    params.check_against(spec)?;
    let layers = spec.relu_count();
    let mut hist = vec![vec![0u64; BUCKETS]; layers];
    for_each_hidden(spec, params, data, batch_size, |r, vals| {
        for v in vals {
            let v = v.to_acc();
            if v > 0.0 {
                hist[r][bucket(v)] += 1;
            }
        }
    })?;

    struct Want {
        lo: u64,
        hi: u64,
        frac: f64,
        b_lo: usize,
        b_hi: usize,
        base: u64,
        picked: Vec<f64>,
    }
    let mut wants: Vec<Option<Want>> = Vec::with_capacity(layers);
    for h in &hist {
        let n: u64 = h.iter().sum();
        if n == 0 {
            wants.push(None);
            continue;
        }
        let (lo, hi, frac) = rank_pair(n, percentile);
        let (mut b_lo, mut b_hi, mut base) = (None, None, 0);
        let mut cum = 0u64;
        for (b, &c) in h.iter().enumerate() {
            if b_lo.is_none() && cum + c > lo {
                b_lo = Some(b);
                base = cum;
            }
            if cum + c > hi {
                b_hi = Some(b);
                break;
            }
            cum += c;
        }
        wants.push(Some(Want {
            lo,
            hi,
            frac,
            b_lo: b_lo.expect("rank within count"),
            b_hi: b_hi.expect("rank within count"),
            base,
            picked: Vec::new(),
        }));
    }
    drop(hist);

    for_each_hidden(spec, params, data, batch_size, |r, vals| {
        if let Some(w) = wants[r].as_mut() {
            for v in vals {
                let v = v.to_acc();
                if v > 0.0 {
                    let b = bucket(v);
                    if b >= w.b_lo && b <= w.b_hi {
                        w.picked.push(v);
                    }
                }
            }
        }
    })?;

    let mut scales = Vec::with_capacity(layers);
    let mut degenerate = Vec::with_capacity(layers);
    for (r, w) in wants.into_iter().enumerate() {
        match w {
            None => {
                log::warn!("ReLU layer {r} is silent over the calibration set; using scale 1");
                scales.push(1.0);
                degenerate.push(true);
            }
            Some(mut w) => {
                w.picked.sort_by(f64::total_cmp);
                let a = w.picked[(w.lo - w.base) as usize];
                let b = w.picked[(w.hi - w.base) as usize];
                scales.push(a + w.frac * (b - a));
                degenerate.push(false);
            }
        }
    }
    Ok(CalibrationStats {
        percentile,
        scales,
        degenerate,
        samples: data.len(),
    })
}
