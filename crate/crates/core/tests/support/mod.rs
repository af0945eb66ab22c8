//! Oracles and random generators shared by the property and acceptance tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spikesparse::experiment::{auc, smooth_curve, CurvePoint};
use spikesparse::model::{Layer, LayerParams, ModelKind, ModelParams, ModelSpec};
use spikesparse::regularizer::{penalty, penalty_grad};
use spikesparse::snn::{convert, run, CalibrationStats};
use spikesparse::tensor::{Tape, Tensor, Var};
use spikesparse::{RegKind, RegSpec, Result};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Values with magnitude in `[0.05, 1]` and random sign, away from kinks.
pub fn away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Norm-wise relative error between two gradient vectors.
pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(n)).max(1e-12)
}

type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

fn scalar_loss(tape: &mut Tape<f64>, inputs: &[Tensor<f64>], weights: &[f64], build: &Build, grad: bool) -> (f64, Vec<Var>) {
    let vars: Vec<Var> = inputs
        .iter()
        .map(|x| if grad { tape.param(x.clone()) } else { tape.constant(x.clone()) })
        .collect();
    let y = build(tape, &vars).unwrap();
    let shape = tape.value(y).shape().to_vec();
    let r = tape.constant(t(&shape, weights[..tape.value(y).len()].to_vec()));
    let m = tape.mul(y, r).unwrap();
    let loss = tape.sum(m);
    if grad {
        tape.backward(loss).unwrap();
    }
    (tape.value(loss).item(), vars)
}

/// Largest relative error between tape gradients and central differences
/// of `sum(op(inputs) * R)` for a fixed random `R`.
pub fn fd_check(inputs: Vec<Tensor<f64>>, build: &Build, seed: u64) -> f64 {
    let mut r = rng(seed ^ 0x5eed);
    let weights = uniform(&mut r, 4096, -1.0, 1.0);
    let mut tape = Tape::new();
    let (_, vars) = scalar_loss(&mut tape, &inputs, &weights, build, true);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[k]).unwrap().to_vec();
        let mut numeric = vec![0.0; input.len()];
        for i in 0..input.len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= h;
            let fp = scalar_loss(&mut Tape::new(), &plus, &weights, build, false).0;
            let fm = scalar_loss(&mut Tape::new(), &minus, &weights, build, false).0;
            numeric[i] = (fp - fm) / (2.0 * h);
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

/// Every differentiable tape op on random inputs drawn from `seed`.
pub fn op_gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    let mut g = |n: usize| away_from_zero(&mut r, n);
    out.push((
        "matmul",
        fd_check(vec![t(&[3, 4], g(12)), t(&[4, 2], g(8))], &|tp, v| tp.matmul(v[0], v[1]), seed),
    ));
    out.push((
        "linear",
        fd_check(
            vec![t(&[3, 4], g(12)), t(&[4, 5], g(20)), t(&[5], g(5))],
            &|tp, v| tp.linear(v[0], v[1], v[2]),
            seed,
        ),
    ));
    out.push((
        "conv2d",
        fd_check(
            vec![t(&[2, 2, 5, 5], g(100)), t(&[3, 2, 3, 3], g(54)), t(&[3], g(3))],
            &|tp, v| tp.conv2d(v[0], v[1], v[2]),
            seed,
        ),
    ));
    out.push((
        "conv2d_single",
        fd_check(
            vec![t(&[1, 4, 4], g(16)), t(&[2, 1, 2, 2], g(8)), t(&[2], g(2))],
            &|tp, v| tp.conv2d(v[0], v[1], v[2]),
            seed,
        ),
    ));
    out.push(("avgpool2", fd_check(vec![t(&[2, 2, 4, 4], g(64))], &|tp, v| tp.avgpool2(v[0]), seed)));
    out.push(("zero_pad", fd_check(vec![t(&[1, 2, 3, 3], g(18))], &|tp, v| tp.zero_pad(v[0], 1), seed)));
    out.push(("relu", fd_check(vec![t(&[3, 5], g(15))], &|tp, v| Ok(tp.relu(v[0])), seed)));
    out.push(("reshape", fd_check(vec![t(&[2, 6], g(12))], &|tp, v| tp.reshape(v[0], [3, 4]), seed)));
    out.push((
        "softmax_cross_entropy",
        fd_check(
            vec![t(&[4, 5], g(20))],
            &|tp, v| tp.softmax_cross_entropy(v[0], &[0, 3, 4, 1]),
            seed,
        ),
    ));
    out.push(("sum", fd_check(vec![t(&[2, 3], g(6))], &|tp, v| Ok(tp.sum(v[0])), seed)));
    out.push(("mul", fd_check(vec![t(&[5], g(5)), t(&[5], g(5))], &|tp, v| tp.mul(v[0], v[1]), seed)));
    out.push(("add", fd_check(vec![t(&[5], g(5)), t(&[5], g(5))], &|tp, v| tp.add(v[0], v[1]), seed)));
    out.push(("scale", fd_check(vec![t(&[5], g(5))], &|tp, v| Ok(tp.scale(v[0], -2.5)), seed)));
    for kind in five_kinds() {
        let x = g(18);
        let err = fd_check(
            vec![t(&[3, 6], x)],
            &move |tp, v| tp.penalty(v[0], RegSpec::new(kind, 1.0)),
            seed,
        );
        out.push((penalty_op_name(kind), err));
    }
    out
}

fn penalty_op_name(kind: RegKind) -> &'static str {
    match kind {
        RegKind::L2 => "penalty_L2",
        RegKind::L1 => "penalty_L1",
        RegKind::Lp(_) => "penalty_L0.5",
        RegKind::Hoyer => "penalty_H",
        RegKind::HoyerSquare => "penalty_Hs",
        RegKind::None => "penalty_none",
    }
}

pub fn five_kinds() -> [RegKind; 5] {
    [RegKind::L2, RegKind::L1, RegKind::Lp(0.5), RegKind::Hoyer, RegKind::HoyerSquare]
}

/// Relative error of the closed-form penalty gradient against central
/// differences at one point.
pub fn reg_gradient_error(kind: RegKind, x: &[f64]) -> f64 {
    let analytic = penalty_grad(kind, x).unwrap();
    let h = 1e-6;
    let numeric: Vec<f64> = (0..x.len())
        .map(|i| {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[i] += h;
            m[i] -= h;
            (penalty(kind, &p).unwrap() - penalty(kind, &m).unwrap()) / (2.0 * h)
        })
        .collect();
    rel_err(&analytic, &numeric)
}

/// Largest relative change of H and H_S under positive rescaling, and the
/// worst violation of `1 <= H_S <= nnz`, over `count` random vectors.
pub fn hoyer_properties(seed: u64, count: usize) -> (f64, f64) {
    let mut r = rng(seed);
    let mut worst_scale: f64 = 0.0;
    let mut worst_bound: f64 = 0.0;
    for _ in 0..count {
        let n = r.gen_range(1..40);
        let mut x: Vec<f64> = (0..n)
            .map(|_| if r.gen_bool(0.3) { 0.0 } else { r.gen_range(-1.0..1.0) })
            .collect();
        if norm(&x) < 0.2 {
            x[0] = 1.0;
        }
        // epsilon sits in the denominator, so keep every ||x|| >= 0.2
        let c: f64 = 10f64.powf(r.gen_range(0.0..2.0));
        let cx: Vec<f64> = x.iter().map(|v| v * c).collect();
        for kind in [RegKind::Hoyer, RegKind::HoyerSquare] {
            let (a, b) = (penalty(kind, &x).unwrap(), penalty(kind, &cx).unwrap());
            worst_scale = worst_scale.max((a - b).abs() / a.abs().max(1e-12));
        }
        let hs = penalty(RegKind::HoyerSquare, &x).unwrap();
        let nnz = x.iter().filter(|v| **v != 0.0).count() as f64;
        let low = (1.0 - hs) / 1.0;
        let high = (hs - nnz) / nnz;
        worst_bound = worst_bound.max(low).max(high);
    }
    (worst_scale, worst_bound)
}

/// A random weighted layer with ~30% zero weights, a sparse input map and
/// some zero biases.
pub fn random_sparse_layer(r: &mut ChaCha8Rng) -> (Layer, Tensor<f32>, Tensor<f32>, Tensor<f32>) {
    let sparse = |n: usize, p: f64, r: &mut ChaCha8Rng| -> Vec<f32> {
        (0..n)
            .map(|_| if r.gen_bool(p) { 0.0 } else { r.gen_range(-1.0..1.0) })
            .collect()
    };
    if r.gen_bool(0.5) {
        let (i, o) = (r.gen_range(1..60), r.gen_range(1..40));
        let w = Tensor::new([i, o], sparse(i * o, 0.3, r)).unwrap();
        let ap = r.gen_range(0.0..1.0);
        let a = Tensor::new([i], sparse(i, ap, r)).unwrap();
        let b = Tensor::new([o], sparse(o, 0.4, r)).unwrap();
        (Layer::Dense { inputs: i, outputs: o }, w, a, b)
    } else {
        let (ci, co) = (r.gen_range(1..4), r.gen_range(1..5));
        let k = r.gen_range(1..6);
        let (h, wd) = (r.gen_range(k..k + 8), r.gen_range(k..k + 8));
        let w = Tensor::new([co, ci, k, k], sparse(co * ci * k * k, 0.3, r)).unwrap();
        let ap = r.gen_range(0.0..1.0);
        let a = Tensor::new([ci, h, wd], sparse(ci * h * wd, ap, r)).unwrap();
        let b = Tensor::new([co], sparse(co, 0.4, r)).unwrap();
        (Layer::Conv { c_in: ci, c_out: co, kernel: k }, w, a, b)
    }
}

/// Brute-force pair count: every (output element, weight tap) whose weight
/// and input value are both non-zero, plus non-zero bias per output element.
pub fn eflops_oracle(layer: &Layer, w: &Tensor<f32>, a: &Tensor<f32>, b: &Tensor<f32>) -> u64 {
    let shape = a.shape().to_vec();
    let (w, a, b) = (w.data(), a.data(), b.data());
    let mut count = 0u64;
    match *layer {
        Layer::Dense { inputs, outputs } => {
            for j in 0..outputs {
                for i in 0..inputs {
                    if w[i * outputs + j] != 0.0 && a[i] != 0.0 {
                        count += 1;
                    }
                }
                if b[j] != 0.0 {
                    count += 1;
                }
            }
        }
        Layer::Conv { c_in, c_out, kernel } => {
            let (h, wd) = (shape[1], shape[2]);
            for co in 0..c_out {
                for oy in 0..=h - kernel {
                    for ox in 0..=wd - kernel {
                        for ci in 0..c_in {
                            for ky in 0..kernel {
                                for kx in 0..kernel {
                                    let wv = w[((co * c_in + ci) * kernel + ky) * kernel + kx];
                                    let av = a[(ci * h + oy + ky) * wd + ox + kx];
                                    if wv != 0.0 && av != 0.0 {
                                        count += 1;
                                    }
                                }
                            }
                        }
                        if b[co] != 0.0 {
                            count += 1;
                        }
                    }
                }
            }
        }
        _ => unreachable!("oracle only covers weighted layers"),
    }
    count
}

/// Random `in-n1-n2-out` chain with random biases, converted with random
/// positive scales.
pub fn random_chain(r: &mut ChaCha8Rng) -> spikesparse::snn::SnnModel<f64> {
    let n0 = r.gen_range(1..12);
    let n1 = r.gen_range(1..12);
    let n2 = r.gen_range(1..12);
    let n3 = r.gen_range(1..6);
    let spec = ModelSpec {
        kind: ModelKind::Mlp,
        input_shape: [1, 1, n0],
        layers: vec![
            Layer::Flatten,
            Layer::Dense { inputs: n0, outputs: n1 },
            Layer::Relu,
            Layer::Dense { inputs: n1, outputs: n2 },
            Layer::Relu,
            Layer::Dense { inputs: n2, outputs: n3 },
        ],
    };
    let lp = |i: usize, o: usize, r: &mut ChaCha8Rng| LayerParams {
        name: format!("fc{i}x{o}"),
        weight: Tensor::new([i, o], uniform(r, i * o, -1.0, 1.0)).unwrap(),
        bias: Tensor::new([o], uniform(r, o, -0.2, 0.2)).unwrap(),
    };
    let params = ModelParams {
        layers: vec![lp(n0, n1, r), lp(n1, n2, r), lp(n2, n3, r)],
    };
    let stats = CalibrationStats {
        scales: vec![r.gen_range(0.2..3.0), r.gen_range(0.2..3.0)],
        ..CalibrationStats::identity(2)
    };
    convert(&params, &spec, &stats).unwrap()
}

/// Worst `|injected - spikes * threshold - potential|` over every neuron of
/// `count` random chains.
pub fn conservation_error(seed: u64, count: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let snn = random_chain(&mut r);
        let x = uniform(&mut r, snn.input_len(), 0.0, 1.0);
        let steps = r.gen_range(1..200);
        let st = run(&snn, &x, steps).unwrap();
        for (s, stage) in snn.stages.iter().enumerate() {
            for j in 0..st.potentials[s].len() {
                let lhs = st.injected[s][j] - f64::from(st.spikes[s][j]) * stage.threshold;
                worst = worst.max((lhs - st.potentials[s][j]).abs());
            }
        }
    }
    worst
}

/// Spike count of one IF neuron driven by a constant `drive` for `steps`.
pub fn single_neuron_spikes(drive: f64, steps: usize) -> u32 {
    let spec = ModelSpec {
        kind: ModelKind::Mlp,
        input_shape: [1, 1, 1],
        layers: vec![
            Layer::Flatten,
            Layer::Dense { inputs: 1, outputs: 1 },
            Layer::Relu,
            Layer::Dense { inputs: 1, outputs: 1 },
        ],
    };
    let one = || LayerParams {
        name: "unit".into(),
        weight: Tensor::new([1, 1], vec![1.0f64]).unwrap(),
        bias: Tensor::zeros([1]),
    };
    let params = ModelParams {
        layers: vec![one(), one()],
    };
    let snn = convert(&params, &spec, &CalibrationStats::identity(1)).unwrap();
    run(&snn, &[drive], steps).unwrap().spikes[0][0]
}

pub fn random_curve(r: &mut ChaCha8Rng) -> Vec<CurvePoint> {
    let n = r.gen_range(2..12);
    (0..n)
        .map(|_| CurvePoint {
            synops: r.gen_range(0.0..1.0),
            accuracy: r.gen_range(0.0..1.0),
        })
        .collect()
}

/// Checks the smoothing and AUC algebra on one curve; returns a description
/// of the first violated property.
pub fn curve_properties(points: &[CurvePoint], r: &mut ChaCha8Rng) -> std::result::Result<(), String> {
    let s = smooth_curve(points);
    if s.windows(2).any(|w| w[1].accuracy < w[0].accuracy) {
        return Err("smoothed curve is not monotone".into());
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.synops.total_cmp(&b.synops).then(a.accuracy.total_cmp(&b.accuracy)));
    if sorted.iter().zip(&s).any(|(a, b)| b.accuracy < a.accuracy || a.synops != b.synops) {
        return Err("smoothed curve falls below the input".into());
    }
    if smooth_curve(&s) != s {
        return Err("smoothing is not idempotent".into());
    }
    let raw = auc(points).unwrap();
    let sm = auc(&s).unwrap();
    if sm < raw - 1e-12 {
        return Err(format!("smoothed AUC {sm} below raw {raw}"));
    }
    if !(0.0..=1.0).contains(&raw) {
        return Err(format!("AUC {raw} outside [0, 1]"));
    }
    let mut shuffled = points.to_vec();
    for i in (1..shuffled.len()).rev() {
        shuffled.swap(i, r.gen_range(0..=i));
    }
    if (auc(&shuffled).unwrap() - raw).abs() > 1e-12 {
        return Err("AUC depends on point order".into());
    }
    let mut dup = points.to_vec();
    dup.push(points[r.gen_range(0..points.len())]);
    if (auc(&dup).unwrap() - raw).abs() > 1e-12 {
        return Err("AUC changes with a duplicate point".into());
    }
    Ok(())
}

/// AUC of a hand-set polyline and its integral worked out by hand.
pub fn auc_polyline_case() -> (f64, f64) {
    let pts = [(0.1, 0.5), (0.4, 0.8), (0.7, 0.6), (0.9, 0.9)];
    let points: Vec<CurvePoint> = pts
        .iter()
        .map(|&(synops, accuracy)| CurvePoint { synops, accuracy })
        .collect();
    // flat 0.5 on [0, 0.1], three trapezoids, flat 0.9 on [0.9, 1]
    let expected = 0.1 * 0.5 + 0.3 * 0.65 + 0.3 * 0.7 + 0.2 * 0.75 + 0.1 * 0.9;
    (auc(&points).unwrap(), expected)
}
