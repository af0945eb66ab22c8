//! Clock-driven integrate-and-fire simulation with event-driven synapses.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SnnModel, Stage, Synapse};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::argmax;
use crate::scalar::Scalar;

/// Slack on the threshold comparison so that drives summing to exactly one
/// in real arithmetic fire despite rounding.
pub const THRESHOLD_TOLERANCE: f64 = 1e-9;

/// Full state after a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct IfState {
    pub steps: usize,
    /// Membrane potential of every target neuron, per stage. For the
    /// classifier this is the accumulated output.
    pub potentials: Vec<Vec<f64>>,
    /// Total current delivered to every neuron, per stage.
    pub injected: Vec<Vec<f64>>,
    /// Spike count of every neuron, per stage (zero for the classifier).
    pub spikes: Vec<Vec<u32>>,
    /// Running sum of spike × fan-out.
    pub synops: u64,
    /// Running sum of non-zero input pixels × fan-out.
    pub input_synops: u64,
}

impl IfState {
    pub fn output(&self) -> &[f64] {
        self.potentials.last().unwrap()
    }

    pub fn prediction(&self) -> usize {
        argmax(self.output())
    }

    pub fn layer_spikes(&self) -> Vec<u64> {
        self.spikes.iter().map(|s| s.iter().map(|&c| u64::from(c)).sum()).collect()
    }

    pub fn total_spikes(&self) -> u64 {
        self.layer_spikes().iter().sum()
    }

    /// SynOps recomputed from the per-neuron spike counts.
    pub fn ledger_synops<T: Scalar>(&self, snn: &SnnModel<T>) -> u64 {
        self.spikes
            .iter()
            .enumerate()
            .map(|(s, counts)| {
                let fan = snn.target_fan_out(s);
                counts
                    .iter()
                    .zip(fan)
                    .map(|(&c, &f)| u64::from(c) * u64::from(f))
                    .sum::<u64>()
            })
            .sum()
    }
}

/// Summary of one simulated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub prediction: usize,
    /// Spikes per spiking stage.
    pub layer_spikes: Vec<u64>,
    pub spikes: u64,
    pub synops: u64,
    pub input_synops: u64,
}

fn stage_current<T: Scalar>(stage: &Stage<T>, events: &[usize], out: &mut [f64]) {
    match stage.synapse {
        Synapse::Dense { outputs, .. } => {
            out.iter_mut().zip(&stage.bias).for_each(|(o, b)| *o = b.to_acc());
            for &j in events {
                let row = &stage.weight[j * outputs..(j + 1) * outputs];
                for (o, w) in out.iter_mut().zip(row) {
                    *o += w.to_acc();
                }
            }
        }
        Synapse::Conv {
            c_in,
            height,
            width,
            pad,
            c_out,
            kernel,
        } => {
            let (oh, ow) = (height + 2 * pad + 1 - kernel, width + 2 * pad + 1 - kernel);
            let plane = oh * ow;
            for (co, b) in stage.bias.iter().enumerate() {
                out[co * plane..(co + 1) * plane].fill(b.to_acc());
            }
            for &j in events {
                let ci = j / (height * width);
                let y = (j / width) % height + pad;
                let x = j % width + pad;
                let ky_lo = (y + 1).saturating_sub(oh);
                let ky_hi = y.min(kernel - 1);
                let kx_lo = (x + 1).saturating_sub(ow);
                let kx_hi = x.min(kernel - 1);
                for co in 0..c_out {
                    let wbase = (co * c_in + ci) * kernel * kernel;
                    let obase = co * plane;
                    for ky in ky_lo..=ky_hi {
                        let orow = obase + (y - ky) * ow;
                        let wrow = wbase + ky * kernel;
                        for kx in kx_lo..=kx_hi {
                            out[orow + x - kx] += stage.weight[wrow + kx].to_acc();
                        }
                    }
                }
            }
        }
        Synapse::Pool { height, width, .. } => {
            out.fill(0.0);
            let (ph, pw) = (height / 2, width / 2);
            for &j in events {
                let c = j / (height * width);
                let (y, x) = ((j / width) % height / 2, j % width / 2);
                if y < ph && x < pw {
                    out[(c * ph + y) * pw + x] += 0.25;
                }
            }
        }
    }
}

/// Dense current of the first stage for an analog input map.
fn analog_current<T: Scalar>(stage: &Stage<T>, input: &[f64], out: &mut [f64]) {
    match stage.synapse {
        Synapse::Dense { outputs, .. } => {
            out.iter_mut().zip(&stage.bias).for_each(|(o, b)| *o = b.to_acc());
            for (j, &x) in input.iter().enumerate() {
                if x != 0.0 {
                    let row = &stage.weight[j * outputs..(j + 1) * outputs];
                    for (o, w) in out.iter_mut().zip(row) {
                        *o += x * w.to_acc();
                    }
                }
            }
        }
        Synapse::Conv {
            c_in,
            height,
            width,
            pad,
            c_out,
            kernel,
        } => {
            let (oh, ow) = (height + 2 * pad + 1 - kernel, width + 2 * pad + 1 - kernel);
            let (ph, pw) = (height + 2 * pad, width + 2 * pad);
            let mut padded = vec![0.0; c_in * ph * pw];
            for ci in 0..c_in {
                for y in 0..height {
                    let src = &input[(ci * height + y) * width..][..width];
                    padded[(ci * ph + y + pad) * pw + pad..][..width].copy_from_slice(src);
                }
            }
            for co in 0..c_out {
                let b = stage.bias[co].to_acc();
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..c_in {
                            for ky in 0..kernel {
                                let prow = &padded[(ci * ph + oy + ky) * pw + ox..][..kernel];
                                let wrow = &stage.weight[((co * c_in + ci) * kernel + ky) * kernel..][..kernel];
                                for (p, w) in prow.iter().zip(wrow) {
                                    acc += p * w.to_acc();
                                }
                            }
                        }
                        out[(co * oh + oy) * ow + ox] = acc + b;
                    }
                }
            }
        }
        Synapse::Pool { height, width, .. } => {
            out.fill(0.0);
            let (ph, pw) = (height / 2, width / 2);
            for (j, &x) in input.iter().enumerate() {
                let c = j / (height * width);
                let (y, xx) = ((j / width) % height / 2, j % width / 2);
                if y < ph && xx < pw {
                    out[(c * ph + y) * pw + xx] += 0.25 * x;
                }
            }
        }
    }
}

/// Simulates one sample for `timesteps` steps and returns the final state.
///
/// The analog input is injected as a constant current into the first stage
/// every step. Within a step, stages update in order, so spikes reach the
/// next stage in the same step.
pub fn run<T: Scalar, S: Scalar>(snn: &SnnModel<T>, sample: &[S], timesteps: usize) -> Result<IfState> {
    if timesteps == 0 {
        return Err(Error::Usage("timesteps must be at least 1".into()));
    }
    if sample.len() != snn.input_len() {
        return Err(Error::dim(format!(
            "sample of {} values for a network with {} inputs",
            sample.len(),
            snn.input_len()
        )));
    }
    let input: Vec<f64> = sample.iter().map(|v| v.to_acc()).collect();
    if input.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Input("input intensities must lie in [0, 1]".into()));
    }
    let stages = &snn.stages;
    let sizes: Vec<usize> = stages.iter().map(|s| s.synapse.target_len()).collect();
    let mut potentials: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
    let mut injected = potentials.clone();
    let mut spikes: Vec<Vec<u32>> = sizes.iter().map(|&n| vec![0; n]).collect();
    let mut currents = potentials.clone();

    let mut constant = vec![0.0; sizes[0]];
    analog_current(&stages[0], &input, &mut constant);
    let input_per_step: u64 = input
        .iter()
        .zip(&stages[0].fan_out)
        .filter(|(&x, _)| x != 0.0)
        .map(|(_, &f)| u64::from(f))
        .sum();

    let mut synops = 0u64;
    let mut input_synops = 0u64;
    let mut events: Vec<usize> = Vec::new();
    let mut next_events: Vec<usize> = Vec::new();
    for _ in 0..timesteps {
        input_synops += input_per_step;
        for (s, stage) in stages.iter().enumerate() {
            let cur = &mut currents[s];
            if s == 0 {
                cur.copy_from_slice(&constant);
            } else {
                stage_current(stage, &events, cur);
            }
            let pot = &mut potentials[s];
            for ((p, i), c) in pot.iter_mut().zip(injected[s].iter_mut()).zip(cur.iter()) {
                *p += c;
                *i += c;
            }
            next_events.clear();
            if stage.spiking {
                let fan = snn.target_fan_out(s);
                let thr = stage.threshold;
                for (j, p) in pot.iter_mut().enumerate() {
                    if *p >= thr - THRESHOLD_TOLERANCE {
                        *p -= thr;
                        spikes[s][j] += 1;
                        synops += u64::from(fan[j]);
                        next_events.push(j);
                    }
                }
            }
            std::mem::swap(&mut events, &mut next_events);
        }
    }
    Ok(IfState {
        steps: timesteps,
        potentials,
        injected,
        spikes,
        synops,
        input_synops,
    })
}

pub fn simulate<T: Scalar, S: Scalar>(snn: &SnnModel<T>, sample: &[S], timesteps: usize) -> Result<SimResult> {
    let state = run(snn, sample, timesteps)?;
    let layer_spikes: Vec<u64> = snn
        .spiking_stages()
        .into_iter()
        .map(|s| state.spikes[s].iter().map(|&c| u64::from(c)).sum())
        .collect();
    Ok(SimResult {
        prediction: state.prediction(),
        spikes: layer_spikes.iter().sum(),
        layer_spikes,
        synops: state.synops,
        input_synops: state.input_synops,
    })
}

/// Per-sample means over an evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnnReport {
    pub timesteps: usize,
    pub samples: usize,
    pub spikes: f64,
    /// Spike events × fan-out, excluding the analog input.
    pub synops: f64,
    /// Non-zero input pixels × fan-out, per step.
    pub input_synops: f64,
    pub accuracy: f64,
    pub layer_spikes: Vec<f64>,
}

impl SnnReport {
    /// SynOps with the analog input layer counted as events.
    pub fn synops_with_input(&self) -> f64 {
        self.synops + self.input_synops
    }

    pub const CSV_HEADER: &'static str = "timesteps,samples,spikes,synops,input_synops,accuracy";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.timesteps, self.samples, self.spikes, self.synops, self.input_synops, self.accuracy
        )
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut f = std::fs::File::create(path).map_err(io)?;
        writeln!(f, "{}\n{}", Self::CSV_HEADER, self.csv_row()).map_err(io)
    }
}

#[derive(Default)]
struct Totals {
    spikes: Vec<u64>,
    synops: u64,
    input_synops: u64,
    correct: usize,
}

fn simulate_range<T: Scalar>(snn: &SnnModel<T>, data: &Dataset, range: std::ops::Range<usize>, t: usize) -> Result<Totals> {
    let mut tot = Totals {
        spikes: vec![0; snn.spiking_stages().len()],
        ..Default::default()
    };
    for i in range {
        let r = simulate(snn, data.image(i), t)?;
        for (a, b) in tot.spikes.iter_mut().zip(&r.layer_spikes) {
            *a += b;
        }
        tot.synops += r.synops;
        tot.input_synops += r.input_synops;
        tot.correct += usize::from(r.prediction == data.labels[i] as usize);
    }
    Ok(tot)
}

/// Simulates every sample of `data` and averages the metrics. Samples are
/// split into contiguous chunks over `workers` threads; all totals are
/// integers, so the result does not depend on the partition.
pub fn snn_report<T: Scalar>(snn: &SnnModel<T>, data: &Dataset, timesteps: usize, workers: usize) -> Result<SnnReport> {
    if data.is_empty() {
        return Err(Error::Usage("SNN report on an empty dataset".into()));
    }
    let n = data.len();
    let workers = workers.clamp(1, n);
    let chunk = n.div_ceil(workers);
    let parts: Vec<Result<Totals>> = if workers == 1 {
        vec![simulate_range(snn, data, 0..n, timesteps)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let range = w * chunk..((w + 1) * chunk).min(n);
                    scope.spawn(move || simulate_range(snn, data, range, timesteps))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("simulation worker panicked")).collect()
        })
    };
    let mut tot = Totals {
        spikes: vec![0; snn.spiking_stages().len()],
        ..Default::default()
    };
    for p in parts {
        let p = p?;
        for (a, b) in tot.spikes.iter_mut().zip(&p.spikes) {
            *a += b;
        }
        tot.synops += p.synops;
        tot.input_synops += p.input_synops;
        tot.correct += p.correct;
    }
    let nf = n as f64;
    Ok(SnnReport {
        timesteps,
        samples: n,
        spikes: tot.spikes.iter().sum::<u64>() as f64 / nf,
        synops: tot.synops as f64 / nf,
        input_synops: tot.input_synops as f64 / nf,
        accuracy: tot.correct as f64 / nf,
        layer_spikes: tot.spikes.iter().map(|&s| s as f64 / nf).collect(),
    })
}
