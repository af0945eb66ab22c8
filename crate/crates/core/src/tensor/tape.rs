use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};
use crate::regularizer::RegSpec;
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    Linear { x: Var, w: Var, b: Var },
    Conv2d { x: Var, k: Var, b: Var, geom: ConvGeom },
    AvgPool2 { x: Var },
    ZeroPad { x: Var, pad: usize },
    Relu { x: Var },
    Reshape { x: Var },
    SoftmaxCe { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
    Penalty { x: Var, spec: RegSpec },
    Sum { x: Var },
    Mul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Scale { x: Var, c: f64 },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

/// Records operations in execution order; `backward` replays them in reverse.
///
/// A tape lives for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf: receives a gradient on `backward`.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim(format!("matmul of {sa:?} and {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), None, m, k, n);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new([m, n], out)?, Op::MatMul { a, b }, rg))
    }

    /// `x[B×in] · w[in×out] + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.value(x).shape(), self.value(w).shape(), self.value(b).shape());
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] || sb != [sw[1]] {
            return Err(Error::dim(format!("linear with input {sx:?}, weights {sw:?}, bias {sb:?}")));
        }
        let (m, k, n) = (sx[0], sx[1], sw[1]);
        let out = kernels::matmul(
            self.value(x).data(),
            self.value(w).data(),
            Some(self.value(b).data()),
            m,
            k,
            n,
        );
        let rg = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(Tensor::new([m, n], out)?, Op::Linear { x, w, b }, rg))
    }

    /// Valid stride-1 cross-correlation. Input `[B,C,H,W]` or `[C,H,W]`,
    /// kernels `[C_out,C_in,K,K]`, bias `[C_out]`.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Var) -> Result<Var> {
        let sx = self.value(x).shape().to_vec();
        let sk = self.value(k).shape();
        let sb = self.value(b).shape();
        let (batch, c, h, w, batched) = match sx.as_slice() {
            [n, c, h, w] => (*n, *c, *h, *w, true),
            [c, h, w] => (1, *c, *h, *w, false),
            _ => return Err(Error::dim(format!("conv2d input must be 3-D or 4-D, got {sx:?}"))),
        };
        if sk.len() != 4 || sk[1] != c || sk[2] != sk[3] || sb != [sk[0]] {
            return Err(Error::dim(format!("conv2d input {sx:?} with kernels {sk:?}, bias {sb:?}")));
        }
        let kernel = sk[2];
        if kernel > h || kernel > w {
            return Err(Error::dim(format!("kernel {kernel}×{kernel} larger than input {h}×{w}")));
        }
        let geom = ConvGeom {
            batch,
            c_in: c,
            height: h,
            width: w,
            c_out: sk[0],
            kernel,
        };
        let out = kernels::conv2d(self.value(x).data(), self.value(k).data(), self.value(b).data(), &geom);
        let shape = if batched {
            vec![batch, geom.c_out, geom.out_h(), geom.out_w()]
        } else {
            vec![geom.c_out, geom.out_h(), geom.out_w()]
        };
        let rg = self.needs(x) || self.needs(k) || self.needs(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Conv2d { x, k, b, geom }, rg))
    }

    /// Non-overlapping 2×2 average over the last two dimensions.
    pub fn avgpool2(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).shape().to_vec();
        if s.len() < 2 {
            return Err(Error::dim(format!("avgpool2 needs spatial dims, got {s:?}")));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::dim(format!("avgpool2 needs even spatial dims, got {h}×{w}")));
        }
        let planes = self.value(x).len() / (h * w);
        let out = kernels::avgpool2(self.value(x).data(), planes, h, w);
        let mut shape = s.clone();
        let nd = shape.len();
        shape[nd - 2] = h / 2;
        shape[nd - 1] = w / 2;
        let rg = self.needs(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::AvgPool2 { x }, rg))
    }

    /// Zero padding of the last two dimensions by `pad` on each side.
    pub fn zero_pad(&mut self, x: Var, pad: usize) -> Result<Var> {
        let s = self.value(x).shape().to_vec();
        if s.len() < 2 {
            return Err(Error::dim(format!("zero_pad needs spatial dims, got {s:?}")));
        }
        let nd = s.len();
        let (h, w) = (s[nd - 2], s[nd - 1]);
        let planes = self.value(x).len() / (h * w);
        let out = kernels::zero_pad(self.value(x).data(), planes, h, w, pad);
        let mut shape = s.clone();
        shape[nd - 2] = h + 2 * pad;
        shape[nd - 1] = w + 2 * pad;
        let rg = self.needs(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::ZeroPad { x, pad }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out: Vec<T> = v.data().iter().map(|&e| if e > T::zero() { e } else { T::zero() }).collect();
        let t = Tensor::new(v.shape().to_vec(), out).expect("same shape");
        let rg = self.needs(x);
        self.push(t, Op::Relu { x }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        let rg = self.needs(x);
        Ok(self.push(t, Op::Reshape { x }, rg))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.value(logits).shape();
        if s.len() != 2 || s[0] != labels.len() || labels.is_empty() {
            return Err(Error::dim(format!("logits {s:?} for {} labels", labels.len())));
        }
        let (batch, classes) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Input(format!("label {bad} out of range for {classes} classes")));
        }
        let data = self.value(logits).data();
        let mut probs = vec![0.0f64; batch * classes];
        let mut loss = 0.0f64;
        for (b, &label) in labels.iter().enumerate() {
            let row = &data[b * classes..(b + 1) * classes];
            let max = row.iter().map(|v| v.to_acc()).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (p, v) in probs[b * classes..].iter_mut().zip(row) {
                *p = (v.to_acc() - max).exp();
                z += *p;
            }
            for p in &mut probs[b * classes..(b + 1) * classes] {
                *p /= z;
            }
            loss += z.ln() - (row[label].to_acc() - max);
        }
        loss /= batch as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric("non-finite cross-entropy".into()));
        }
        let rg = self.needs(logits);
        let op = Op::SoftmaxCe {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        Ok(self.push(Tensor::scalar(T::from_acc(loss)), op, rg))
    }

    /// Batch mean of the per-sample activity penalty (lambda not applied).
    ///
    /// The leading dimension of `x` is the batch; each sample's map is
    /// penalized independently.
    pub fn penalty(&mut self, x: Var, spec: RegSpec) -> Result<Var> {
        let v = self.value(x);
        let batch = v.shape().first().copied().unwrap_or(1);
        let per = v.len() / batch;
        let mut total = 0.0;
        for sample in v.data().chunks_exact(per) {
            total += spec.penalty(sample)?;
        }
        let rg = self.needs(x);
        Ok(self.push(Tensor::scalar(T::from_acc(total / batch as f64)), Op::Penalty { x, spec }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v.to_acc()).sum();
        let rg = self.needs(x);
        self.push(Tensor::scalar(T::from_acc(s)), Op::Sum { x }, rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, |x, y| x + y, |a, b| Op::Add { a, b })
    }

    fn elementwise(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: impl Fn(Var, Var) -> Op) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.len() != vb.len() {
            return Err(Error::dim(format!("elementwise op on {:?} and {:?}", va.shape(), vb.shape())));
        }
        let out = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| T::from_acc(f(x.to_acc(), y.to_acc())))
            .collect();
        let t = Tensor::new(va.shape().to_vec(), out)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(t, op(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x);
        let out = v.data().iter().map(|e| T::from_acc(e.to_acc() * c)).collect();
        let t = Tensor::new(v.shape().to_vec(), out).expect("same shape");
        let rg = self.needs(x);
        self.push(t, Op::Scale { x, c }, rg)
    }

    /// Accumulates `d loss / d v` into every node that requires a gradient.
    ///
    /// Gradients add onto existing slots; call [`Tape::zero_grads`] first to
    /// start fresh.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        if !self.needs(loss) {
            return Ok(());
        }
        // Intermediate slots are per-pass scratch; only leaves accumulate.
        for n in &mut self.nodes {
            if !matches!(n.op, Op::Leaf) {
                n.value.grad = None;
            }
        }
        self.nodes[loss.0].value.accumulate_grad(&[T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[i].value.grad.take() else {
                continue;
            };
            let contributions = self.backward_node(i, &g)?;
            self.nodes[i].value.grad = Some(g);
            for (v, c) in contributions {
                if self.needs(v) {
                    self.nodes[v.0].value.accumulate_grad(&c);
                }
            }
        }
        for n in &self.nodes {
            if let Some(g) = n.value.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric("non-finite gradient after backward".into()));
                }
            }
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, g: &[T]) -> Result<Vec<(Var, Vec<T>)>> {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut out = Vec::new();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
                let n = val(*b).shape()[1];
                if self.needs(*a) {
                    out.push((*a, kernels::matmul_nt(g, val(*b).data(), m, k, n)));
                }
                if self.needs(*b) {
                    out.push((*b, kernels::matmul_tn(val(*a).data(), g, m, k, n)));
                }
            }
            Op::Linear { x, w, b } => {
                let (m, k) = (val(*x).shape()[0], val(*x).shape()[1]);
                let n = val(*w).shape()[1];
                if self.needs(*x) {
                    out.push((*x, kernels::matmul_nt(g, val(*w).data(), m, k, n)));
                }
                if self.needs(*w) {
                    out.push((*w, kernels::matmul_tn(val(*x).data(), g, m, k, n)));
                }
                if self.needs(*b) {
                    out.push((*b, kernels::column_sums(g, m, n)));
                }
            }
            Op::Conv2d { x, k, b, geom } => {
                let (dx, dk, db) =
                    kernels::conv2d_backward(val(*x).data(), val(*k).data(), g, geom, self.needs(*x));
                if let Some(dx) = dx {
                    out.push((*x, dx));
                }
                out.push((*k, dk));
                out.push((*b, db));
            }
            Op::AvgPool2 { x } => {
                let s = val(*x).shape();
                let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                let planes = val(*x).len() / (h * w);
                out.push((*x, kernels::avgpool2_backward(g, planes, h, w)));
            }
            Op::ZeroPad { x, pad } => {
                let s = val(*x).shape();
                let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                let planes = val(*x).len() / (h * w);
                out.push((*x, kernels::zero_pad_backward(g, planes, h, w, *pad)));
            }
            Op::Relu { x } => {
                let d = val(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&xv, &gv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                out.push((*x, d));
            }
            Op::Reshape { x } => out.push((*x, g.to_vec())),
            Op::SoftmaxCe { logits, labels, probs } => {
                let classes = val(*logits).shape()[1];
                let scale = g[0].to_acc() / labels.len() as f64;
                let mut d: Vec<T> = probs.iter().map(|&p| T::from_acc(p * scale)).collect();
                for (b, &l) in labels.iter().enumerate() {
                    let idx = b * classes + l;
                    d[idx] = T::from_acc((probs[idx] - 1.0) * scale);
                }
                out.push((*logits, d));
            }
            Op::Penalty { x, spec } => {
                let v = val(*x);
                let batch = v.shape().first().copied().unwrap_or(1);
                let per = v.len() / batch;
                let scale = g[0].to_acc() / batch as f64;
                let mut d = Vec::with_capacity(v.len());
                for sample in v.data().chunks_exact(per) {
                    d.extend(spec.penalty_grad(sample)?.into_iter().map(|e| T::from_acc(e * scale)));
                }
                out.push((*x, d));
            }
            Op::Sum { x } => out.push((*x, vec![g[0]; val(*x).len()])),
            Op::Mul { a, b } => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                out.push((*a, g.iter().zip(vb).map(|(&gv, &y)| gv * y).collect()));
                out.push((*b, g.iter().zip(va).map(|(&gv, &x)| gv * x).collect()));
            }
            Op::Add { a, b } => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.to_vec()));
            }
            Op::Scale { x, c } => {
                out.push((*x, g.iter().map(|&gv| T::from_acc(gv.to_acc() * c)).collect()));
            }
        }
        Ok(out)
    }
}
