//! Rate-coded spiking conversion of a trained network.
//!
//! Every ReLU population becomes a layer of integrate-and-fire neurons with
//! unit threshold. Weights are rescaled with per-layer activation scales so
//! that a firing rate of one spike per step represents the calibrated
//! activation ceiling. Average pooling becomes quarter-weight synapses onto
//! IF neurons, and the classifier layer integrates without spiking.

mod calibrate;
mod sim;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Container, Metadata, NamedArray};
use crate::error::{Error, Result};
use crate::model::{Layer, ModelParams, ModelSpec};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use calibrate::{calibrate, percentile_sorted, CalibrationStats, DEFAULT_PERCENTILE};
pub use sim::{run, simulate, snn_report, IfState, SimResult, SnnReport, THRESHOLD_TOLERANCE};

pub const THRESHOLD: f64 = 1.0;

/// Connectivity of one stage, from its source population to its targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Synapse {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    /// `height`/`width` describe the unpadded source; `pad` zeros surround it.
    Conv {
        c_in: usize,
        height: usize,
        width: usize,
        pad: usize,
        c_out: usize,
        kernel: usize,
    },
    /// 2×2 average pooling with weight 1/4 per synapse.
    Pool {
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl Synapse {
    pub fn source_len(&self) -> usize {
        match *self {
            Synapse::Dense { inputs, .. } => inputs,
            Synapse::Conv { c_in, height, width, .. } => c_in * height * width,
            Synapse::Pool { channels, height, width } => channels * height * width,
        }
    }

    pub fn target_len(&self) -> usize {
        match *self {
            Synapse::Dense { outputs, .. } => outputs,
            Synapse::Conv { .. } => {
                let (c, h, w) = self.conv_out().unwrap();
                c * h * w
            }
            Synapse::Pool { channels, height, width } => channels * (height / 2) * (width / 2),
        }
    }

    fn conv_out(&self) -> Option<(usize, usize, usize)> {
        match *self {
            Synapse::Conv {
                height,
                width,
                pad,
                c_out,
                kernel,
                ..
            } => Some((c_out, height + 2 * pad + 1 - kernel, width + 2 * pad + 1 - kernel)),
            _ => None,
        }
    }

    /// Number of postsynaptic targets of every source neuron.
    pub fn fan_out(&self) -> Vec<u32> {
        match *self {
            Synapse::Dense { inputs, outputs } => vec![outputs as u32; inputs],
            Synapse::Conv {
                c_in,
                height,
                width,
                pad,
                c_out,
                kernel,
            } => {
                let (_, oh, ow) = self.conv_out().unwrap();
                // output positions whose window covers padded coordinate p
                let cover = |p: usize, out: usize| {
                    let lo = (p + 1).saturating_sub(kernel);
                    let hi = p.min(out - 1);
                    if hi >= lo {
                        hi - lo + 1
                    } else {
                        0
                    }
                };
                let mut f = Vec::with_capacity(self.source_len());
                for _ in 0..c_in {
                    for y in 0..height {
                        let cy = cover(y + pad, oh);
                        for x in 0..width {
                            f.push((c_out * cy * cover(x + pad, ow)) as u32);
                        }
                    }
                }
                f
            }
            Synapse::Pool { channels, height, width } => {
                let mut f = Vec::with_capacity(self.source_len());
                for _ in 0..channels {
                    for y in 0..height {
                        for x in 0..width {
                            f.push(u32::from(y < height / 2 * 2 && x < width / 2 * 2));
                        }
                    }
                }
                f
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage<T> {
    pub name: String,
    pub synapse: Synapse,
    /// Normalized weights; layout follows the DNN layer (`[in, out]` or
    /// `[co, ci, k, k]`). Empty for pooling.
    pub weight: Vec<T>,
    /// Bias current injected into every target each step.
    pub bias: Vec<T>,
    /// Whether the targets are IF neurons (false for the classifier).
    pub spiking: bool,
    pub threshold: f64,
    /// Activation scale represented by one spike per step.
    pub scale: f64,
    /// Fan-out of every source neuron.
    pub fan_out: Vec<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StageHeader {
    name: String,
    synapse: Synapse,
    spiking: bool,
    threshold: f64,
    scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnnModel<T> {
    pub spec: ModelSpec,
    pub stages: Vec<Stage<T>>,
}

impl<T: Scalar> SnnModel<T> {
    pub fn input_len(&self) -> usize {
        self.stages[0].synapse.source_len()
    }

    pub fn classes(&self) -> usize {
        self.stages.last().unwrap().synapse.target_len()
    }

    /// Indices of stages whose targets spike.
    pub fn spiking_stages(&self) -> Vec<usize> {
        (0..self.stages.len()).filter(|&s| self.stages[s].spiking).collect()
    }

    /// Fan-out of the neurons stage `s` drives.
    pub fn target_fan_out(&self, s: usize) -> &[u32] {
        match self.stages.get(s + 1) {
            Some(next) => &next.fan_out,
            None => &[],
        }
    }

    pub fn neuron_count(&self) -> usize {
        self.stages.iter().filter(|s| s.spiking).map(|s| s.synapse.target_len()).sum()
    }

    pub fn save(&self, path: impl AsRef<Path>, metadata: &Metadata) -> Result<()> {
        let mut arrays = Vec::new();
        let mut headers = Vec::new();
        for s in &self.stages {
            headers.push(StageHeader {
                name: s.name.clone(),
                synapse: s.synapse,
                spiking: s.spiking,
                threshold: s.threshold,
                scale: s.scale,
            });
            if !s.weight.is_empty() {
                let w = Tensor::new([s.weight.len()], s.weight.clone())?;
                let b = Tensor::new([s.bias.len()], s.bias.clone())?;
                arrays.push(NamedArray::real(format!("{}.weight", s.name), &w));
                arrays.push(NamedArray::real(format!("{}.bias", s.name), &b));
            }
            arrays.push(NamedArray::counts(
                format!("{}.fan_out", s.name),
                vec![s.fan_out.len()],
                s.fan_out.clone(),
            ));
        }
        Container {
            kind: "snn".into(),
            spec: self.spec.clone(),
            metadata: metadata.clone(),
            extra: serde_json::json!({ "stages": headers }),
            arrays,
        }
        .write(path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Metadata)> {
        let path = path.as_ref();
        let c = Container::<T>::read(path)?;
        if c.kind != "snn" {
            return Err(Error::format(path, format!("expected an snn model, found '{}'", c.kind)));
        }
        let headers: Vec<StageHeader> = serde_json::from_value(c.extra["stages"].clone())?;
        let mut stages = Vec::with_capacity(headers.len());
        for h in headers {
            let (weight, bias) = if matches!(h.synapse, Synapse::Pool { .. }) {
                (Vec::new(), Vec::new())
            } else {
                (
                    c.array(&format!("{}.weight", h.name))?.to_tensor()?.into_data(),
                    c.array(&format!("{}.bias", h.name))?.to_tensor()?.into_data(),
                )
            };
            let fan_out = c.array(&format!("{}.fan_out", h.name))?.as_counts()?.to_vec();
            if fan_out != h.synapse.fan_out() {
                return Err(Error::format(path, format!("fan-out table of {} is inconsistent", h.name)));
            }
            stages.push(Stage {
                name: h.name,
                synapse: h.synapse,
                weight,
                bias,
                spiking: h.spiking,
                threshold: h.threshold,
                scale: h.scale,
                fan_out,
            });
        }
        let model = SnnModel { spec: c.spec, stages };
        model.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok((model, c.metadata))
    }

    fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Conversion("network has no stages".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            let (wl, bl) = match s.synapse {
                Synapse::Dense { inputs, outputs } => (inputs * outputs, outputs),
                Synapse::Conv {
                    c_in, c_out, kernel, ..
                } => (c_out * c_in * kernel * kernel, c_out),
                Synapse::Pool { .. } => (0, 0),
            };
            if s.weight.len() != wl || s.bias.len() != bl {
                return Err(Error::dim(format!("stage {} has mismatched parameters", s.name)));
            }
            if let Some(next) = self.stages.get(i + 1) {
                if !s.spiking {
                    return Err(Error::Conversion(format!("hidden stage {} does not spike", s.name)));
                }
                if next.synapse.source_len() != s.synapse.target_len() {
                    return Err(Error::dim(format!("stage {} does not feed {}", s.name, next.name)));
                }
            } else if s.spiking {
                return Err(Error::Conversion("the classifier stage must not spike".into()));
            }
        }
        Ok(())
    }
}

fn check_scale(s: f64, what: &str) -> Result<f64> {
    if s.is_finite() && s > 0.0 {
        Ok(s)
    } else {
        Err(Error::Conversion(format!("scale {s} for {what} is not a positive number")))
    }
}

/// Builds the spiking network: `W' = W·λ_in/λ_out`, `B' = B/λ_out`, with
/// `λ = 1` at the input and at the classifier.
pub fn convert<T: Scalar>(params: &ModelParams<T>, spec: &ModelSpec, stats: &CalibrationStats) -> Result<SnnModel<T>> {
    params.check_against(spec)?;
    if stats.scales.len() != spec.relu_count() {
        return Err(Error::Conversion(format!(
            "{} calibration scales for {} ReLU layers",
            stats.scales.len(),
            spec.relu_count()
        )));
    }
    let mut in_shapes = vec![spec.input_shape.to_vec()];
    in_shapes.extend(spec.shapes()?);
    let mut stages: Vec<Stage<T>> = Vec::new();
    let mut lambda_in = 1.0;
    let mut pad = 0;
    let mut relu = 0;
    let mut param = 0;
    let mut pools = 0;
    for (i, layer) in spec.layers.iter().enumerate() {
        let in_shape = &in_shapes[i];
        match *layer {
            Layer::ZeroPad { pad: p } => {
                if !stages.is_empty() {
                    return Err(Error::Conversion("padding is only supported on the input".into()));
                }
                pad += p;
            }
            Layer::Flatten => {}
            Layer::Relu => {
                let s = stages
                    .last_mut()
                    .ok_or_else(|| Error::Conversion("ReLU before any weighted layer".into()))?;
                if s.spiking {
                    return Err(Error::Conversion("consecutive spiking nonlinearities".into()));
                }
                s.spiking = true;
                relu += 1;
            }
            Layer::AvgPool => {
                match stages.last() {
                    Some(s) if s.spiking => {}
                    _ => return Err(Error::Conversion("pooling must follow a spiking layer".into())),
                }
                pools += 1;
                let synapse = Synapse::Pool {
                    channels: in_shape[0],
                    height: in_shape[1],
                    width: in_shape[2],
                };
                stages.push(Stage {
                    name: format!("pool{pools}"),
                    fan_out: synapse.fan_out(),
                    synapse,
                    weight: Vec::new(),
                    bias: Vec::new(),
                    spiking: true,
                    threshold: THRESHOLD,
                    scale: lambda_in,
                });
            }
            Layer::Conv { .. } | Layer::Dense { .. } => {
                let p = &params.layers[param];
                param += 1;
                let followed_by_relu = matches!(spec.layers.get(i + 1), Some(Layer::Relu));
                let lambda_out = if followed_by_relu {
                    check_scale(stats.scales[relu], &p.name)?
                } else {
                    1.0
                };
                let synapse = match *layer {
                    Layer::Dense { inputs, outputs } => Synapse::Dense { inputs, outputs },
                    Layer::Conv { c_in, c_out, kernel } => {
                        // source is the unpadded map when padding precedes the conv
                        let (h, w) = (in_shape[1] - 2 * pad, in_shape[2] - 2 * pad);
                        Synapse::Conv {
                            c_in,
                            height: h,
                            width: w,
                            pad,
                            c_out,
                            kernel,
                        }
                    }
                    _ => unreachable!(),
                };
                pad = 0;
                let wf = lambda_in / lambda_out;
                let weight = p.weight.data().iter().map(|&w| T::from_acc(w.to_acc() * wf)).collect();
                let bias = p.bias.data().iter().map(|&b| T::from_acc(b.to_acc() / lambda_out)).collect();
                stages.push(Stage {
                    name: p.name.clone(),
                    fan_out: synapse.fan_out(),
                    synapse,
                    weight,
                    bias,
                    spiking: false,
                    threshold: THRESHOLD,
                    scale: lambda_out,
                });
                lambda_in = lambda_out;
            }
        }
    }
    let model = SnnModel {
        spec: spec.clone(),
        stages,
    };
    model.validate()?;
    Ok(model)
}
