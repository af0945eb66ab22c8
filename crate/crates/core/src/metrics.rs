//! Zero-skipping compute accounting for the dense network.
//!
//! A multiply-accumulate is counted only when both the weight and the
//! incoming activation are exactly non-zero; a bias add is counted when the
//! bias is non-zero.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{sequential_batches, Dataset};
use crate::error::{Error, Result};
use crate::model::{forward, predictions, Layer, ModelParams, ModelSpec};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};

/// Precomputed non-zero weight counts for one weighted layer.
#[derive(Debug, Clone)]
pub struct EflopsCounter {
    layer: Layer,
    input_shape: Vec<usize>,
    /// Dense: non-zero outgoing weights per input. Conv: non-zero output
    /// channels per `(ci, ky, kx)` kernel tap.
    tap_counts: Vec<u64>,
    bias_nnz: u64,
}

impl EflopsCounter {
    pub fn new<T: Scalar>(layer: &Layer, input_shape: &[usize], weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Self> {
        let bias_nnz = bias.data().iter().filter(|&&b| b != T::zero()).count() as u64;
        let tap_counts = match *layer {
            Layer::Dense { inputs, outputs } => {
                if weight.shape() != [inputs, outputs] || input_shape != [inputs] {
                    return Err(Error::dim(format!(
                        "dense {inputs}->{outputs} with weight {:?} and input {input_shape:?}",
                        weight.shape()
                    )));
                }
                weight
                    .data()
                    .chunks_exact(outputs)
                    .map(|row| row.iter().filter(|&&w| w != T::zero()).count() as u64)
                    .collect()
            }
            Layer::Conv { c_in, c_out, kernel } => {
                let ok = weight.shape() == [c_out, c_in, kernel, kernel]
                    && input_shape.len() == 3
                    && input_shape[0] == c_in
                    && input_shape[1] >= kernel
                    && input_shape[2] >= kernel;
                if !ok {
                    return Err(Error::dim(format!(
                        "conv {c_in}->{c_out} with weight {:?} and input {input_shape:?}",
                        weight.shape()
                    )));
                }
                let taps = c_in * kernel * kernel;
                let mut counts = vec![0u64; taps];
                for co in 0..c_out {
                    for (t, &w) in weight.data()[co * taps..(co + 1) * taps].iter().enumerate() {
                        if w != T::zero() {
                            counts[t] += 1;
                        }
                    }
                }
                counts
            }
            other => return Err(Error::dim(format!("layer {other:?} has no weights"))),
        };
        Ok(EflopsCounter {
            layer: *layer,
            input_shape: input_shape.to_vec(),
            tap_counts,
            bias_nnz,
        })
    }

    /// Effective operations for one sample's input map.
    pub fn count<T: Scalar>(&self, input: &[T]) -> Result<u64> {
        let expected: usize = self.input_shape.iter().product();
        if input.len() != expected {
            return Err(Error::dim(format!(
                "input of {} elements for layer expecting {:?}",
                input.len(),
                self.input_shape
            )));
        }
        let zero = T::zero();
        match self.layer {
            Layer::Dense { .. } => {
                let macs: u64 = input
                    .iter()
                    .zip(&self.tap_counts)
                    .filter(|(&a, _)| a != zero)
                    .map(|(_, &c)| c)
                    .sum();
                Ok(macs + self.bias_nnz)
            }
            Layer::Conv { c_in, kernel, .. } => {
                let (h, w) = (self.input_shape[1], self.input_shape[2]);
                let (oh, ow) = (h - kernel + 1, w - kernel + 1);
                let mut macs = 0u64;
                for ci in 0..c_in {
                    for y in 0..h {
                        for x in 0..w {
                            if input[(ci * h + y) * w + x] == zero {
                                continue;
                            }
                            // kernel taps (ky, kx) that place this pixel inside the output grid
                            let ky_lo = y.saturating_sub(oh - 1);
                            let ky_hi = y.min(kernel - 1);
                            let kx_lo = x.saturating_sub(ow - 1);
                            let kx_hi = x.min(kernel - 1);
                            for ky in ky_lo..=ky_hi {
                                let base = (ci * kernel + ky) * kernel;
                                for kx in kx_lo..=kx_hi {
                                    macs += self.tap_counts[base + kx];
                                }
                            }
                        }
                    }
                }
                Ok(macs + self.bias_nnz * (oh * ow) as u64)
            }
            _ => unreachable!("counter built only for weighted layers"),
        }
    }
}

/// Effective operations of one weighted layer on one input map.
pub fn eflops_layer<T: Scalar>(layer: &Layer, weight: &Tensor<T>, input: &Tensor<T>, bias: &Tensor<T>) -> Result<u64> {
    EflopsCounter::new(layer, input.shape(), weight, bias)?.count(input.data())
}

/// Per-sample averages for one weighted layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub layer: String,
    /// Mean non-zero count of the layer's input map.
    pub nnz_act: f64,
    pub total_act: usize,
    pub eflops: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub layers: Vec<LayerStats>,
    /// Mean effective operations per sample, summed over layers.
    pub total_eflops: f64,
    pub accuracy: f64,
    pub samples: usize,
}

impl EfficiencyReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "layer,nnz_act,total_act,eflops").map_err(io)?;
        let (mut nnz, mut total) = (0.0, 0usize);
        for l in &self.layers {
            writeln!(w, "{},{},{},{}", l.layer, l.nnz_act, l.total_act, l.eflops).map_err(io)?;
            nnz += l.nnz_act;
            total += l.total_act;
        }
        writeln!(w, "total,{nnz},{total},{}", self.total_eflops).map_err(io)?;
        w.flush().map_err(io)
    }
}

/// Runs the model over `data` and averages effective operations per sample.
pub fn efficiency_report<T: Scalar>(
    spec: &ModelSpec,
    params: &ModelParams<T>,
    data: &Dataset,
    batch_size: usize,
) -> Result<EfficiencyReport> {
    params.check_against(spec)?;
    if data.is_empty() {
        return Err(Error::Usage("efficiency report on an empty dataset".into()));
    }
    let weighted = spec.weighted_layers();
    let mut counters = Vec::with_capacity(weighted.len());
    for (&li, p) in weighted.iter().zip(&params.layers) {
        let shape = spec.input_shape_of(li)?;
        counters.push(EflopsCounter::new(&spec.layers[li], &shape, &p.weight, &p.bias)?);
    }
    let mut eflops = vec![0u64; weighted.len()];
    let mut nnz = vec![0u64; weighted.len()];
    let mut totals = vec![0usize; weighted.len()];
    let mut correct = 0usize;
    for (x, labels) in sequential_batches::<T>(data, batch_size) {
        let batch = labels.len();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let input = tape.constant(x);
        let trace = forward(spec, &bound, &mut tape, input)?;
        for (k, &li) in weighted.iter().enumerate() {
            let src = if li == 0 { trace.input } else { trace.layer_outputs[li - 1] };
            let vals = tape.value(src).data();
            let per = vals.len() / batch;
            totals[k] = per;
            for sample in vals.chunks_exact(per) {
                eflops[k] += counters[k].count(sample)?;
                nnz[k] += sample.iter().filter(|&&v| v != T::zero()).count() as u64;
            }
        }
        correct += predictions(tape.value(trace.logits))
            .iter()
            .zip(&labels)
            .filter(|(p, l)| p == l)
            .count();
    }
    let n = data.len() as f64;
    let layers: Vec<LayerStats> = weighted
        .iter()
        .enumerate()
        .map(|(k, _)| LayerStats {
            layer: params.layers[k].name.clone(),
            nnz_act: nnz[k] as f64 / n,
            total_act: totals[k],
            eflops: eflops[k] as f64 / n,
        })
        .collect();
    Ok(EfficiencyReport {
        total_eflops: eflops.iter().sum::<u64>() as f64 / n,
        layers,
        accuracy: correct as f64 / n,
        samples: data.len(),
    })
}

/// Spikes, effective operations and synaptic operations per sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyMetrics {
    pub spikes: f64,
    pub eflops: f64,
    pub synops: f64,
}

/// Signed percentage changes; negative means a reduction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reductions {
    pub pct_spikes: f64,
    pub pct_eflops: f64,
    pub pct_synops: f64,
}

pub fn pct_change(candidate: f64, baseline: f64, what: &'static str) -> Result<f64> {
    if baseline == 0.0 {
        return Err(Error::UndefinedRatio(what));
    }
    Ok(100.0 * (candidate - baseline) / baseline)
}

pub fn relative_reduction(candidate: &EfficiencyMetrics, baseline: &EfficiencyMetrics) -> Result<Reductions> {
    Ok(Reductions {
        pct_spikes: pct_change(candidate.spikes, baseline.spikes, "spikes")?,
        pct_eflops: pct_change(candidate.eflops, baseline.eflops, "eflops")?,
        pct_synops: pct_change(candidate.synops, baseline.synops, "synops")?,
    })
}
