//! Dense kernels on flat row-major slices.
//!
//! All reductions accumulate in `f64` in a fixed order, so results are
//! deterministic and independent of batch partitioning.

use crate::scalar::Scalar;

#[inline]
fn dot_acc<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    const LANES: usize = 8;
    let mut acc = [0.0f64; LANES];
    let chunks = a.len() / LANES;
    for c in 0..chunks {
        let xa = &a[c * LANES..(c + 1) * LANES];
        let xb = &b[c * LANES..(c + 1) * LANES];
        for l in 0..LANES {
            acc[l] += xa[l].to_acc() * xb[l].to_acc();
        }
    }
    let mut tail = 0.0;
    for i in chunks * LANES..a.len() {
        tail += a[i].to_acc() * b[i].to_acc();
    }
    acc.iter().sum::<f64>() + tail
}

/// `out[m×n] = a[m×k] · b[k×n] (+ bias[n])`.
///
/// Each output accumulates its products in index order of `k`, then adds the
/// bias, then rounds once. Zero entries of `a` are skipped.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], bias: Option<&[T]>, m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![T::zero(); m * n];
    let mut acc = vec![0.0f64; n];
    for i in 0..m {
        acc.iter_mut().for_each(|s| *s = 0.0);
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let av = av.to_acc();
            let brow = &b[p * n..(p + 1) * n];
            for (s, &bv) in acc.iter_mut().zip(brow) {
                *s += av * bv.to_acc();
            }
        }
        if let Some(bias) = bias {
            for (s, &bv) in acc.iter_mut().zip(bias) {
                *s += bv.to_acc();
            }
        }
        for (o, &s) in out[i * n..(i + 1) * n].iter_mut().zip(&acc) {
            *o = T::from_acc(s);
        }
    }
    out
}

/// `out[m×k] = g[m×n] · b[k×n]ᵀ`.
pub fn matmul_nt<T: Scalar>(g: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] = T::from_acc(dot_acc(grow, &b[p * n..(p + 1) * n]));
        }
    }
    out
}

/// `out[k×n] = a[m×k]ᵀ · g[m×n]`.
pub fn matmul_tn<T: Scalar>(a: &[T], g: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut acc = vec![0.0f64; k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let av = av.to_acc();
            for (s, &gv) in acc[p * n..(p + 1) * n].iter_mut().zip(grow) {
                *s += av * gv.to_acc();
            }
        }
    }
    acc.into_iter().map(T::from_acc).collect()
}

/// Column sums of `g[m×n]`.
pub fn column_sums<T: Scalar>(g: &[T], m: usize, n: usize) -> Vec<T> {
    let mut acc = vec![0.0f64; n];
    for i in 0..m {
        for (s, &v) in acc.iter_mut().zip(&g[i * n..(i + 1) * n]) {
            *s += v.to_acc();
        }
    }
    acc.into_iter().map(T::from_acc).collect()
}

/// Geometry of a stride-1 valid convolution over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub height: usize,
    pub width: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.height - self.kernel + 1
    }
    pub fn out_w(&self) -> usize {
        self.width - self.kernel + 1
    }
    pub fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }
    pub fn patch_len(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }
}

/// Patches as rows `[(b, oy, ox)] × [(ci, ky, kx)]`.
pub fn im2col<T: Scalar>(input: &[T], g: &ConvGeom) -> Vec<T> {
    let (oh, ow, k) = (g.out_h(), g.out_w(), g.kernel);
    let plen = g.patch_len();
    let mut cols = vec![T::zero(); g.batch * oh * ow * plen];
    let img = g.c_in * g.height * g.width;
    for b in 0..g.batch {
        let src = &input[b * img..(b + 1) * img];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((b * oh + oy) * ow + ox) * plen;
                let mut c = row;
                for ci in 0..g.c_in {
                    for ky in 0..k {
                        let base = (ci * g.height + oy + ky) * g.width + ox;
                        cols[c..c + k].copy_from_slice(&src[base..base + k]);
                        c += k;
                    }
                }
            }
        }
    }
    cols
}

/// Adds patch-row gradients back onto the input layout.
pub fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let (oh, ow, k) = (g.out_h(), g.out_w(), g.kernel);
    let plen = g.patch_len();
    let img = g.c_in * g.height * g.width;
    let mut acc = vec![0.0f64; g.batch * img];
    for b in 0..g.batch {
        let dst = &mut acc[b * img..(b + 1) * img];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut c = ((b * oh + oy) * ow + ox) * plen;
                for ci in 0..g.c_in {
                    for ky in 0..k {
                        let base = (ci * g.height + oy + ky) * g.width + ox;
                        for kx in 0..k {
                            dst[base + kx] += cols[c + kx].to_acc();
                        }
                        c += k;
                    }
                }
            }
        }
    }
    acc.into_iter().map(T::from_acc).collect()
}

fn transpose<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

/// Cross-correlation plus per-channel bias; output `[B, C_out, H', W']`.
pub fn conv2d<T: Scalar>(input: &[T], kernels: &[T], bias: &[T], g: &ConvGeom) -> Vec<T> {
    let plen = g.patch_len();
    let p = g.positions();
    let cols = im2col(input, g);
    let kt = transpose(kernels, g.c_out, plen);
    let rows = matmul(&cols, &kt, Some(bias), g.batch * p, plen, g.c_out);
    let mut out = vec![T::zero(); g.batch * g.c_out * p];
    for b in 0..g.batch {
        for pos in 0..p {
            let r = &rows[(b * p + pos) * g.c_out..(b * p + pos + 1) * g.c_out];
            for (co, &v) in r.iter().enumerate() {
                out[(b * g.c_out + co) * p + pos] = v;
            }
        }
    }
    out
}

/// Gradients of [`conv2d`]: `(d_input, d_kernels, d_bias)`; `d_input` only if requested.
pub fn conv2d_backward<T: Scalar>(
    input: &[T],
    kernels: &[T],
    grad_out: &[T],
    g: &ConvGeom,
    need_input: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let plen = g.patch_len();
    let p = g.positions();
    let m = g.batch * p;
    // grad rows: [(b, pos)] × c_out
    let mut grows = vec![T::zero(); m * g.c_out];
    for b in 0..g.batch {
        for co in 0..g.c_out {
            let src = &grad_out[(b * g.c_out + co) * p..(b * g.c_out + co + 1) * p];
            for (pos, &v) in src.iter().enumerate() {
                grows[(b * p + pos) * g.c_out + co] = v;
            }
        }
    }
    let cols = im2col(input, g);
    let dkt = matmul_tn(&cols, &grows, m, plen, g.c_out);
    let dk = transpose(&dkt, plen, g.c_out);
    let db = column_sums(&grows, m, g.c_out);
    let dinput = need_input.then(|| {
        let dcols = matmul(&grows, kernels, None, m, g.c_out, plen);
        col2im(&dcols, g)
    });
    (dinput, dk, db)
}

/// Non-overlapping 2×2 mean over `[planes, H, W]`.
pub fn avgpool2<T: Scalar>(input: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![T::zero(); planes * oh * ow];
    for c in 0..planes {
        let src = &input[c * h * w..(c + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                let s = src[2 * y * w + 2 * x].to_acc()
                    + src[2 * y * w + 2 * x + 1].to_acc()
                    + src[(2 * y + 1) * w + 2 * x].to_acc()
                    + src[(2 * y + 1) * w + 2 * x + 1].to_acc();
                out[(c * oh + y) * ow + x] = T::from_acc(s * 0.25);
            }
        }
    }
    out
}

pub fn avgpool2_backward<T: Scalar>(grad_out: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![T::zero(); planes * h * w];
    for c in 0..planes {
        for y in 0..oh {
            for x in 0..ow {
                let g = T::from_acc(grad_out[(c * oh + y) * ow + x].to_acc() * 0.25);
                let base = c * h * w;
                out[base + 2 * y * w + 2 * x] = g;
                out[base + 2 * y * w + 2 * x + 1] = g;
                out[base + (2 * y + 1) * w + 2 * x] = g;
                out[base + (2 * y + 1) * w + 2 * x + 1] = g;
            }
        }
    }
    out
}

/// Symmetric zero padding of `[planes, H, W]` by `pad` on every side.
pub fn zero_pad<T: Scalar>(input: &[T], planes: usize, h: usize, w: usize, pad: usize) -> Vec<T> {
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![T::zero(); planes * ph * pw];
    for c in 0..planes {
        for y in 0..h {
            let dst = (c * ph + y + pad) * pw + pad;
            out[dst..dst + w].copy_from_slice(&input[(c * h + y) * w..(c * h + y + 1) * w]);
        }
    }
    out
}

pub fn zero_pad_backward<T: Scalar>(grad_out: &[T], planes: usize, h: usize, w: usize, pad: usize) -> Vec<T> {
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![T::zero(); planes * h * w];
    for c in 0..planes {
        for y in 0..h {
            let src = (c * ph + y + pad) * pw + pad;
            out[(c * h + y) * w..(c * h + y + 1) * w].copy_from_slice(&grad_out[src..src + w]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_hand_case() {
        let a = [1.0f32, 2.0, 3.0, 4.0];
        let b = [1.0f32, 1.0];
        assert_eq!(matmul(&a, &b, None, 2, 2, 1), vec![3.0, 7.0]);
    }

    #[test]
    fn transposed_products_agree_with_plain_matmul() {
        let a: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect(); // 3×4
        let g: Vec<f64> = (0..6).map(|i| (i as f64 * 0.91).cos()).collect(); // 3×2
        let b: Vec<f64> = (0..8).map(|i| i as f64 - 3.5).collect(); // 4×2
        let at = transpose(&a, 3, 4);
        let bt = transpose(&b, 4, 2);
        assert_eq!(matmul_tn(&a, &g, 3, 4, 2), matmul(&at, &g, None, 4, 3, 2));
        let nt = matmul_nt(&g, &b, 3, 4, 2);
        let plain = matmul(&g, &bt, None, 3, 2, 4);
        for (x, y) in nt.iter().zip(&plain) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn pooling_and_padding_shapes() {
        let x = [1.0f32, 2.0, 3.0, 4.0];
        assert_eq!(avgpool2(&x, 1, 2, 2), vec![2.5]);
        assert_eq!(avgpool2_backward(&[4.0f32], 1, 2, 2), vec![1.0; 4]);
        let p = zero_pad(&x, 1, 2, 2, 1);
        assert_eq!(p.len(), 16);
        assert_eq!(p[5], 1.0);
        assert_eq!(p[10], 4.0);
        assert_eq!(zero_pad_backward(&p, 1, 2, 2, 1), x.to_vec());
    }
}
