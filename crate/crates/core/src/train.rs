//! Adam on the composite loss `CE + lambda * sum_l psi(X_l)` with
//! early stopping on validation loss.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{batches, sequential_batches, Dataset};
use crate::error::{Error, Result};
use crate::model::{forward, predictions, ForwardTrace, ModelParams, ModelSpec};
use crate::regularizer::RegSpec;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub reg: RegSpec,
    /// Batch size for validation and test passes; does not affect results.
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 128,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            patience: 20,
            max_epochs: 200,
            seed: 0,
            reg: RegSpec::none(),
            eval_batch_size: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.reg.validate()?;
        let positive = self.learning_rate > 0.0
            && self.batch_size >= 1
            && self.beta1 > 0.0
            && self.beta2 > 0.0
            && self.adam_eps > 0.0
            && self.patience >= 1
            && self.max_epochs >= 1
            && self.eval_batch_size >= 1;
        if !positive {
            return Err(Error::Usage(format!("invalid training configuration {self:?}")));
        }
        Ok(())
    }
}

/// Adam moments, one pair of arrays per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new<T: Scalar>(params: &ModelParams<T>) -> Self {
        let sizes: Vec<usize> = params
            .layers
            .iter()
            .flat_map(|l| [l.weight.len(), l.bias.len()])
            .collect();
        AdamState {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }
}

/// Bias-corrected Adam update. `grads` holds one slice per parameter tensor
/// in `(weight, bias)` layer order.
pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &[&[T]],
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    if grads.len() != state.m.len() {
        return Err(Error::Usage(format!(
            "{} gradient arrays for {} parameter tensors",
            grads.len(),
            state.m.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if let Some(j) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient in parameter tensor {i} at index {j} (step {})",
                state.step
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = config.learning_rate;
    let tensors = params
        .layers
        .iter_mut()
        .flat_map(|l| [l.weight.data_mut(), l.bias.data_mut()]);
    for (k, p) in tensors.enumerate() {
        let (m, v, g) = (&mut state.m[k], &mut state.v[k], grads[k]);
        for i in 0..p.len() {
            let gi = g[i].to_acc();
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] = T::from_acc(p[i].to_acc() - lr * mhat / (vhat.sqrt() + config.adam_eps));
        }
    }
    Ok(())
}

/// Composite loss on the tape: cross-entropy plus the weighted sum of
/// hidden-map penalties. With an inactive regularizer no penalty nodes are
/// recorded at all.
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    trace: &ForwardTrace,
    labels: &[usize],
    reg: &RegSpec,
) -> Result<Var> {
    let ce = tape.softmax_cross_entropy(trace.logits, labels)?;
    if reg.is_inactive() {
        return Ok(ce);
    }
    let mut acc: Option<Var> = None;
    for &h in &trace.hidden {
        let p = tape.penalty(h, *reg)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, p)?,
            None => p,
        });
    }
    match acc {
        Some(p) => {
            let weighted = tape.scale(p, reg.lambda);
            tape.add(ce, weighted)
        }
        None => Ok(ce),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Evaluation {
    /// Composite loss (cross-entropy plus weighted penalty).
    pub loss: f64,
    pub cross_entropy: f64,
    pub accuracy: f64,
}

/// Loss and accuracy over a whole dataset, in fixed-size sequential batches.
pub fn evaluate<T: Scalar>(
    spec: &ModelSpec,
    params: &ModelParams<T>,
    data: &Dataset,
    reg: &RegSpec,
    batch_size: usize,
) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Usage("cannot evaluate on an empty dataset".into()));
    }
    let (mut loss, mut ce_sum, mut correct) = (0.0, 0.0, 0usize);
    for (x, labels) in sequential_batches::<T>(data, batch_size) {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let input = tape.constant(x);
        let trace = forward(spec, &bound, &mut tape, input)?;
        let total = total_loss(&mut tape, &trace, &labels, reg)?;
        let n = labels.len() as f64;
        loss += tape.value(total).item().to_acc() * n;
        let ce = tape.softmax_cross_entropy(trace.logits, &labels)?;
        ce_sum += tape.value(ce).item().to_acc() * n;
        correct += predictions(tape.value(trace.logits))
            .iter()
            .zip(&labels)
            .filter(|(p, l)| p == l)
            .count();
    }
    let n = data.len() as f64;
    Ok(Evaluation {
        loss: loss / n,
        cross_entropy: ce_sum / n,
        accuracy: correct as f64 / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    PatienceExhausted,
    MaxEpochs,
}

/// Tracks the best validation loss and decides when to stop.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best_loss: f64,
    best_epoch: usize,
    since_best: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> Verdict {
        if val_loss < self.best_loss {
            self.best_loss = val_loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            Verdict::Improved
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience {
                Verdict::Stop
            } else {
                Verdict::Continue
            }
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
    /// Test accuracy of the returned (best-epoch) parameters.
    pub test_accuracy: f64,
}

impl TrainReport {
    pub fn best(&self) -> &EpochLog {
        &self.epochs[self.best_epoch - 1]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "epoch,train_loss,val_loss,val_acc").map_err(io)?;
        for e in &self.epochs {
            writeln!(w, "{},{},{},{}", e.epoch, e.train_loss, e.val_loss, e.val_accuracy).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Training, validation and test sets for one run.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// One optimization step on a mini-batch; returns the batch loss.
pub fn train_step<T: Scalar>(
    spec: &ModelSpec,
    params: &mut ModelParams<T>,
    state: &mut AdamState,
    config: &TrainConfig,
    x: crate::tensor::Tensor<T>,
    labels: &[usize],
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let input = tape.constant(x);
    let trace = forward(spec, &bound, &mut tape, input)?;
    let loss = total_loss(&mut tape, &trace, labels, &config.reg)?;
    let value = tape.value(loss).item().to_acc();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("non-finite training loss at step {}", state.step)));
    }
    tape.backward(loss)?;
    let grads: Vec<&[T]> = bound
        .vars
        .iter()
        .flat_map(|&(w, b)| [w, b])
        .map(|v| tape.grad(v).expect("parameter gradient"))
        .collect();
    adam_step(params, &grads, state, config)?;
    Ok(value)
}

/// Trains until validation loss stalls for `patience` epochs or the epoch
/// cap is hit, and returns the parameters of the best validation epoch.
pub fn fit<T: Scalar>(
    spec: &ModelSpec,
    init: ModelParams<T>,
    data: &Splits,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(ModelParams<T>, TrainReport)> {
    config.validate()?;
    spec.validate()?;
    init.check_against(spec)?;
    for (name, d) in [("train", &data.train), ("validation", &data.val), ("test", &data.test)] {
        if d.sample_shape != spec.input_shape {
            return Err(Error::Usage(format!(
                "{name} samples are {:?}, model expects {:?}",
                d.sample_shape, spec.input_shape
            )));
        }
        if d.is_empty() {
            return Err(Error::Usage(format!("{name} set is empty")));
        }
    }
    let mut params = init;
    let mut state = AdamState::new(&params);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = params.clone();
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;
    for epoch in 1..=config.max_epochs {
        let mut loss_sum = 0.0;
        for (x, labels) in batches::<T>(&data.train, config.batch_size, config.seed, epoch as u64) {
            let n = labels.len() as f64;
            loss_sum += n * train_step(spec, &mut params, &mut state, config, x, &labels)?;
        }
        let val = evaluate(spec, &params, &data.val, &config.reg, config.eval_batch_size)?;
        let log = EpochLog {
            epoch,
            train_loss: loss_sum / data.train.len() as f64,
            val_loss: val.loss,
            val_accuracy: val.accuracy,
        };
        log::info!(
            "epoch {epoch}: train loss {:.5}, val loss {:.5}, val acc {:.4}",
            log.train_loss,
            log.val_loss,
            log.val_accuracy
        );
        on_epoch(&log);
        epochs.push(log);
        match stopper.observe(epoch, val.loss) {
            Verdict::Improved => best = params.clone(),
            Verdict::Continue => {}
            Verdict::Stop => {
                stop_reason = StopReason::PatienceExhausted;
                break;
            }
        }
    }
    let test = evaluate(spec, &best, &data.test, &RegSpec::none(), config.eval_batch_size)?;
    let report = TrainReport {
        epochs,
        best_epoch: stopper.best_epoch(),
        stop_reason,
        test_accuracy: test.accuracy,
    };
    Ok((best, report))
}
