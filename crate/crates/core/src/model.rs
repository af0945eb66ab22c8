//! Declarative architectures (MLP and LeNet-5), their parameters, and the
//! forward pass that exposes every post-ReLU activation map.

use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    Lenet5,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Mlp => "MLP",
            ModelKind::Lenet5 => "LeNet-5",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" => Ok(ModelKind::Mlp),
            "lenet5" | "lenet-5" | "lenet" => Ok(ModelKind::Lenet5),
            other => Err(Error::Usage(format!("unknown model '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    ZeroPad { pad: usize },
    Conv { c_in: usize, c_out: usize, kernel: usize },
    AvgPool,
    Relu,
    Flatten,
    Dense { inputs: usize, outputs: usize },
}

impl Layer {
    pub fn is_weighted(&self) -> bool {
        matches!(self, Layer::Conv { .. } | Layer::Dense { .. })
    }

    /// Output shape of one sample given its input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = || Error::dim(format!("layer {self:?} cannot take input {input:?}"));
        match *self {
            Layer::ZeroPad { pad } => match input {
                [c, h, w] => Ok(vec![*c, h + 2 * pad, w + 2 * pad]),
                _ => Err(bad()),
            },
            Layer::Conv { c_in, c_out, kernel } => match input {
                [c, h, w] if *c == c_in && *h >= kernel && *w >= kernel => {
                    Ok(vec![c_out, h - kernel + 1, w - kernel + 1])
                }
                _ => Err(bad()),
            },
            Layer::AvgPool => match input {
                [c, h, w] if h % 2 == 0 && w % 2 == 0 => Ok(vec![*c, h / 2, w / 2]),
                _ => Err(bad()),
            },
            Layer::Relu => Ok(input.to_vec()),
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Dense { inputs, outputs } => match input {
                [n] if *n == inputs => Ok(vec![outputs]),
                _ => Err(bad()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_shape: [usize; 3],
    pub layers: Vec<Layer>,
}

impl ModelSpec {
    /// Fully connected `in-300-100-10` with ReLU after both hidden layers.
    pub fn mlp(input_shape: [usize; 3]) -> Self {
        let inputs = input_shape.iter().product();
        ModelSpec {
            kind: ModelKind::Mlp,
            input_shape,
            layers: vec![
                Layer::Flatten,
                Layer::Dense { inputs, outputs: 300 },
                Layer::Relu,
                Layer::Dense { inputs: 300, outputs: 100 },
                Layer::Relu,
                Layer::Dense { inputs: 100, outputs: 10 },
            ],
        }
    }

    /// Classical 6-16-120-84-10 LeNet-5 with average pooling. 28×28 inputs
    /// are zero-padded to 32×32; 32×32 inputs are used as they are.
    pub fn lenet5(input_shape: [usize; 3]) -> Self {
        let [c, h, _] = input_shape;
        let mut layers = Vec::new();
        if h == 28 {
            layers.push(Layer::ZeroPad { pad: 2 });
        }
        layers.extend([
            Layer::Conv { c_in: c, c_out: 6, kernel: 5 },
            Layer::Relu,
            Layer::AvgPool,
            Layer::Conv { c_in: 6, c_out: 16, kernel: 5 },
            Layer::Relu,
            Layer::AvgPool,
            Layer::Flatten,
            Layer::Dense { inputs: 400, outputs: 120 },
            Layer::Relu,
            Layer::Dense { inputs: 120, outputs: 84 },
            Layer::Relu,
            Layer::Dense { inputs: 84, outputs: 10 },
        ]);
        ModelSpec {
            kind: ModelKind::Lenet5,
            input_shape,
            layers,
        }
    }

    pub fn for_kind(kind: ModelKind, input_shape: [usize; 3]) -> Self {
        match kind {
            ModelKind::Mlp => Self::mlp(input_shape),
            ModelKind::Lenet5 => Self::lenet5(input_shape),
        }
    }

    /// Per-sample output shape of every layer, in order.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut cur = self.input_shape.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            cur = layer.output_shape(&cur)?;
            out.push(cur.clone());
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = self.shapes()?;
        if shapes.last().map(|s| s.as_slice()) != Some(&[10][..]) {
            return Err(Error::dim(format!("model must end in 10 logits, got {:?}", shapes.last())));
        }
        Ok(())
    }

    pub fn relu_count(&self) -> usize {
        self.layers.iter().filter(|l| **l == Layer::Relu).count()
    }

    /// Indices of layers carrying weights.
    pub fn weighted_layers(&self) -> Vec<usize> {
        (0..self.layers.len()).filter(|&i| self.layers[i].is_weighted()).collect()
    }

    /// Input shape of layer `i` for one sample.
    pub fn input_shape_of(&self, i: usize) -> Result<Vec<usize>> {
        if i == 0 {
            Ok(self.input_shape.to_vec())
        } else {
            Ok(self.shapes()?[i - 1].clone())
        }
    }
}

/// Weights and bias of one weighted layer.
///
/// Dense weights are stored `[inputs, outputs]`; convolution kernels
/// `[c_out, c_in, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub name: String,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.all_finite() && l.bias.all_finite())
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    name: l.name.clone(),
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
        }
    }

    /// Checks that every tensor matches the shape implied by `spec`.
    pub fn check_against(&self, spec: &ModelSpec) -> Result<()> {
        let weighted = spec.weighted_layers();
        if weighted.len() != self.layers.len() {
            return Err(Error::dim(format!(
                "spec has {} weighted layers, params have {}",
                weighted.len(),
                self.layers.len()
            )));
        }
        for (&li, p) in weighted.iter().zip(&self.layers) {
            let (w, b) = weight_shapes(&spec.layers[li]);
            if p.weight.shape() != w.as_slice() || p.bias.shape() != b.as_slice() {
                return Err(Error::dim(format!(
                    "layer {} expects weight {w:?} and bias {b:?}, found {:?} and {:?}",
                    p.name,
                    p.weight.shape(),
                    p.bias.shape()
                )));
            }
        }
        Ok(())
    }
}

fn weight_shapes(layer: &Layer) -> (Vec<usize>, Vec<usize>) {
    match *layer {
        Layer::Conv { c_in, c_out, kernel } => (vec![c_out, c_in, kernel, kernel], vec![c_out]),
        Layer::Dense { inputs, outputs } => (vec![inputs, outputs], vec![outputs]),
        _ => unreachable!("weight_shapes on an unweighted layer"),
    }
}

fn fan_in(layer: &Layer) -> usize {
    match *layer {
        Layer::Conv { c_in, kernel, .. } => c_in * kernel * kernel,
        Layer::Dense { inputs, .. } => inputs,
        _ => unreachable!("fan_in on an unweighted layer"),
    }
}

/// Kaiming-uniform weights (bound `sqrt(6 / fan_in)`) and zero biases.
pub fn build<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<ModelParams<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let (mut convs, mut denses) = (0, 0);
    for layer in spec.layers.iter().filter(|l| l.is_weighted()) {
        let (ws, bs) = weight_shapes(layer);
        let bound = (6.0 / fan_in(layer) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let n: usize = ws.iter().product();
        let data = (0..n).map(|_| T::from_acc(dist.sample(&mut rng))).collect();
        let name = match layer {
            Layer::Conv { .. } => {
                convs += 1;
                format!("conv{convs}")
            }
            _ => {
                denses += 1;
                format!("fc{denses}")
            }
        };
        layers.push(LayerParams {
            name,
            weight: Tensor::new(ws, data)?,
            bias: Tensor::zeros(bs),
        });
    }
    Ok(ModelParams { layers })
}

/// Parameters placed on a tape, one `(weight, bias)` pair per weighted layer.
pub struct BoundParams {
    pub vars: Vec<(Var, Var)>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundParams {
        let vars = self
            .layers
            .iter()
            .map(|l| {
                if trainable {
                    (tape.param(l.weight.clone()), tape.param(l.bias.clone()))
                } else {
                    (tape.constant(l.weight.clone()), tape.constant(l.bias.clone()))
                }
            })
            .collect();
        BoundParams { vars }
    }
}

/// Handles to everything a forward pass produced.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub logits: Var,
    /// Post-ReLU activation maps in layer order, each `[B, ...]`.
    pub hidden: Vec<Var>,
    /// Output of every layer in `spec.layers`, each `[B, ...]`.
    pub layer_outputs: Vec<Var>,
    pub input: Var,
}

/// Runs `spec` on a `[B, C, H, W]` batch.
pub fn forward<T: Scalar>(
    spec: &ModelSpec,
    params: &BoundParams,
    tape: &mut Tape<T>,
    input: Var,
) -> Result<ForwardTrace> {
    let s = tape.value(input).shape().to_vec();
    if s.len() != 4 || s[1..] != spec.input_shape {
        return Err(Error::dim(format!(
            "batch shape {s:?} does not match model input {:?}",
            spec.input_shape
        )));
    }
    let batch = s[0];
    let mut cur = input;
    let mut hidden = Vec::new();
    let mut outputs = Vec::with_capacity(spec.layers.len());
    let mut pi = 0;
    for layer in &spec.layers {
        cur = match *layer {
            Layer::ZeroPad { pad } => tape.zero_pad(cur, pad)?,
            Layer::Conv { .. } => {
                let (w, b) = params.vars[pi];
                pi += 1;
                tape.conv2d(cur, w, b)?
            }
            Layer::AvgPool => tape.avgpool2(cur)?,
            Layer::Relu => {
                let r = tape.relu(cur);
                hidden.push(r);
                r
            }
            Layer::Flatten => {
                let per = tape.value(cur).len() / batch;
                tape.reshape(cur, [batch, per])?
            }
            Layer::Dense { .. } => {
                let (w, b) = params.vars[pi];
                pi += 1;
                tape.linear(cur, w, b)?
            }
        };
        outputs.push(cur);
    }
    Ok(ForwardTrace {
        logits: cur,
        hidden,
        layer_outputs: outputs,
        input,
    })
}

/// Argmax with ties resolved to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Predicted classes for a batch of logits `[B, classes]`.
pub fn predictions<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let classes = logits.shape()[1];
    logits.data().chunks_exact(classes).map(argmax).collect()
}
