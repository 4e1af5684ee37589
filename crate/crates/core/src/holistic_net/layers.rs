//! Channel-major 2D tensors and the layers of the network, each with its
//! backward pass.

/// A `c x h x w` tensor stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn plane(&self, k: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[k * n..(k + 1) * n]
    }

    pub fn plane_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.h * self.w;
        &mut self.data[k * n..(k + 1) * n]
    }

    pub fn same_shape(&self) -> Self {
        Self::zeros(self.c, self.h, self.w)
    }
}

/// Square `k x k` convolution, stride 1, zero "same" padding. Parameters are
/// `weight[out][in][ky][kx]` followed by `bias[out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub offset: usize,
}

impl Conv {
    pub fn weight_len(&self) -> usize {
        self.out_c * self.in_c * self.k * self.k
    }

    pub fn param_len(&self) -> usize {
        self.weight_len() + self.out_c
    }

    pub fn forward(&self, params: &[f64], x: &Tensor) -> Tensor {
        debug_assert_eq!(x.c, self.in_c);
        let (h, w, k) = (x.h, x.w, self.k);
        let pad = k / 2;
        let weights = &params[self.offset..self.offset + self.weight_len()];
        let bias = &params[self.offset + self.weight_len()..self.offset + self.param_len()];
        let mut y = Tensor::zeros(self.out_c, h, w);
        for o in 0..self.out_c {
            let yo = y.plane_mut(o);
            yo.fill(bias[o]);
            for i in 0..self.in_c {
                let xi = x.plane(i);
                for ky in 0..k {
                    for kx in 0..k {
                        let wt = weights[((o * self.in_c + i) * k + ky) * k + kx];
                        let (x0, x1) = col_range(w, kx, pad);
                        if x0 >= x1 {
                            continue;
                        }
                        for yy in 0..h {
                            let Some(ys) = shifted(yy, ky, pad, h) else { continue };
                            let dst = &mut yo[yy * w + x0..yy * w + x1];
                            let src = &xi[ys * w + x0 + kx - pad..ys * w + x1 + kx - pad];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += wt * s;
                            }
                        }
                    }
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns the input
    /// gradient when `want_input` is set.
    pub fn backward(&self, params: &[f64], x: &Tensor, dy: &Tensor, grad: &mut [f64], want_input: bool) -> Option<Tensor> {
        let (h, w, k) = (x.h, x.w, self.k);
        let pad = k / 2;
        let weights = &params[self.offset..self.offset + self.weight_len()];
        let wl = self.weight_len();
        let mut dx = want_input.then(|| x.same_shape());
        for o in 0..self.out_c {
            let dyo = dy.plane(o);
            grad[self.offset + wl + o] += dyo.iter().sum::<f64>();
            for i in 0..self.in_c {
                let xi = x.plane(i);
                for ky in 0..k {
                    for kx in 0..k {
                        let widx = ((o * self.in_c + i) * k + ky) * k + kx;
                        let (x0, x1) = col_range(w, kx, pad);
                        if x0 >= x1 {
                            continue;
                        }
                        let mut acc = 0.0;
                        for yy in 0..h {
                            let Some(ys) = shifted(yy, ky, pad, h) else { continue };
                            let d = &dyo[yy * w + x0..yy * w + x1];
                            let s = &xi[ys * w + x0 + kx - pad..ys * w + x1 + kx - pad];
                            acc += d.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                        }
                        grad[self.offset + widx] += acc;
                        if let Some(dx) = dx.as_mut() {
                            let wt = weights[widx];
                            let dxi = dx.plane_mut(i);
                            for yy in 0..h {
                                let Some(ys) = shifted(yy, ky, pad, h) else { continue };
                                let d = &dyo[yy * w + x0..yy * w + x1];
                                let dst = &mut dxi[ys * w + x0 + kx - pad..ys * w + x1 + kx - pad];
                                for (t, s) in dst.iter_mut().zip(d) {
                                    *t += wt * s;
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Output columns `x0..x1` whose input column `x + kx - pad` is inside.
#[inline]
fn col_range(w: usize, kx: usize, pad: usize) -> (usize, usize) {
    let x0 = pad.saturating_sub(kx);
    let x1 = (w + pad).saturating_sub(kx).min(w);
    (x0, x1)
}

#[inline]
fn shifted(yy: usize, ky: usize, pad: usize, h: usize) -> Option<usize> {
    let ys = (yy + ky).checked_sub(pad)?;
    (ys < h).then_some(ys)
}

/// Frozen per-channel normalisation `(x - shift) * scale`.
pub fn normalise(x: &mut Tensor, shift: &[f64], scale: &[f64]) {
    for c in 0..x.c {
        let (s, k) = (shift[c], scale[c]);
        x.plane_mut(c).iter_mut().for_each(|v| *v = (*v - s) * k);
    }
}

pub fn normalise_backward(dy: &mut Tensor, scale: &[f64]) {
    for c in 0..dy.c {
        let k = scale[c];
        dy.plane_mut(c).iter_mut().for_each(|v| *v *= k);
    }
}

#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Derivative of ELU given its input.
#[inline]
pub fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

pub fn elu_tensor(x: &Tensor) -> Tensor {
    Tensor {
        data: x.data.iter().map(|&v| elu(v)).collect(),
        ..*x
    }
}

/// `dy * elu'(x)` in place on `dy`.
pub fn elu_backward(x: &Tensor, dy: &mut Tensor) {
    for (d, &v) in dy.data.iter_mut().zip(&x.data) {
        *d *= elu_grad(v);
    }
}

/// 2x2 max pooling with stride 2; returns the pooled tensor and the flat
/// in-plane index of each maximum.
pub fn max_pool(x: &Tensor) -> (Tensor, Vec<u32>) {
    let (h2, w2) = (x.h / 2, x.w / 2);
    let mut y = Tensor::zeros(x.c, h2, w2);
    let mut arg = vec![0u32; x.c * h2 * w2];
    for c in 0..x.c {
        let xp = x.plane(c);
        for yy in 0..h2 {
            for xx in 0..w2 {
                let mut best = (2 * yy) * x.w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let k = (2 * yy + dy) * x.w + 2 * xx + dx;
                    if xp[k] > xp[best] {
                        best = k;
                    }
                }
                let o = c * h2 * w2 + yy * w2 + xx;
                y.data[o] = xp[best];
                arg[o] = best as u32;
            }
        }
    }
    (y, arg)
}

/// Scatters `dy` back to the maxima, adding into `dx`.
pub fn max_pool_backward(dy: &Tensor, arg: &[u32], dx: &mut Tensor) {
    let n_out = dy.h * dy.w;
    for c in 0..dy.c {
        let dxp = dx.plane_mut(c);
        for j in 0..n_out {
            dxp[arg[c * n_out + j] as usize] += dy.data[c * n_out + j];
        }
    }
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample(x: &Tensor, f: usize) -> Tensor {
    if f == 1 {
        return x.clone();
    }
    let (h, w) = (x.h * f, x.w * f);
    let mut y = Tensor::zeros(x.c, h, w);
    for c in 0..x.c {
        let xp = x.plane(c);
        let yp = y.plane_mut(c);
        for yy in 0..h {
            for xx in 0..w {
                yp[yy * w + xx] = xp[(yy / f) * x.w + xx / f];
            }
        }
    }
    y
}

/// Adjoint of [`upsample`]: sums each `f x f` block.
pub fn upsample_backward(dy: &Tensor, f: usize) -> Tensor {
    if f == 1 {
        return dy.clone();
    }
    let (h, w) = (dy.h / f, dy.w / f);
    let mut dx = Tensor::zeros(dy.c, h, w);
    for c in 0..dy.c {
        let dyp = dy.plane(c);
        let dxp = dx.plane_mut(c);
        for yy in 0..dy.h {
            for xx in 0..dy.w {
                dxp[(yy / f) * w + xx / f] += dyp[yy * dy.w + xx];
            }
        }
    }
    dx
}

/// Per-voxel softmax of channel-major logits, returned voxel-major.
pub fn softmax_voxel_major(z: &Tensor) -> Vec<f64> {
    let n = z.h * z.w;
    let l = z.c;
    let mut out = vec![0.0; n * l];
    for i in 0..n {
        let mut m = f64::NEG_INFINITY;
        for k in 0..l {
            m = m.max(z.data[k * n + i]);
        }
        let mut s = 0.0;
        for k in 0..l {
            let e = (z.data[k * n + i] - m).exp();
            out[i * l + k] = e;
            s += e;
        }
        for k in 0..l {
            out[i * l + k] /= s;
        }
    }
    out
}

/// Gradient with respect to channel-major logits, given voxel-major
/// softmax outputs `p` and their gradient `dp`, scaled by `weight`, added to
/// `dz`.
pub fn softmax_backward_into(p: &[f64], dp: &[f64], weight: f64, dz: &mut Tensor) {
    let l = dz.c;
    let n = dz.h * dz.w;
    for i in 0..n {
        let pv = &p[i * l..(i + 1) * l];
        let dv = &dp[i * l..(i + 1) * l];
        let dot: f64 = pv.iter().zip(dv).map(|(a, b)| a * b).sum();
        for k in 0..l {
            dz.data[k * n + i] += weight * pv[k] * (dv[k] - dot);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, h: usize, w: usize) -> Tensor {
        Tensor {
            c,
            h,
            w,
            data: (0..c * h * w).map(|k| ((k * 37 % 11) as f64 - 5.0) * 0.1).collect(),
        }
    }

    /// Direct evaluation of the convolution sum, as an oracle.
    fn naive_conv(conv: &Conv, params: &[f64], x: &Tensor) -> Tensor {
        let k = conv.k as i64;
        let pad = k / 2;
        let mut y = Tensor::zeros(conv.out_c, x.h, x.w);
        for o in 0..conv.out_c {
            for yy in 0..x.h as i64 {
                for xx in 0..x.w as i64 {
                    let mut acc = params[conv.offset + conv.weight_len() + o];
                    for i in 0..conv.in_c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let (sy, sx) = (yy + ky - pad, xx + kx - pad);
                                if sy < 0 || sx < 0 || sy >= x.h as i64 || sx >= x.w as i64 {
                                    continue;
                                }
                                let wi = ((o * conv.in_c + i) * conv.k + ky as usize) * conv.k + kx as usize;
                                acc += params[conv.offset + wi] * x.plane(i)[sy as usize * x.w + sx as usize];
                            }
                        }
                    }
                    y.plane_mut(o)[yy as usize * x.w + xx as usize] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_sum() {
        for k in [1, 3] {
            let conv = Conv { in_c: 2, out_c: 3, k, offset: 1 };
            let params: Vec<f64> = (0..conv.param_len() + 1).map(|j| ((j * 13 % 7) as f64 - 3.0) * 0.2).collect();
            let x = ramp(2, 5, 4);
            let a = conv.forward(&params, &x);
            let b = naive_conv(&conv, &params, &x);
            for (u, v) in a.data.iter().zip(&b.data) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x) - bias, dy> == <x, dx> for the linear part
        let conv = Conv { in_c: 2, out_c: 2, k: 3, offset: 0 };
        let mut params: Vec<f64> = (0..conv.param_len()).map(|j| ((j * 5 % 9) as f64 - 4.0) * 0.1).collect();
        for b in &mut params[conv.weight_len()..] {
            *b = 0.0;
        }
        let x = ramp(2, 4, 5);
        let dy = Tensor { data: ramp(2, 4, 5).data.iter().map(|v| v * 1.7 + 0.05).collect(), ..ramp(2, 4, 5) };
        let y = conv.forward(&params, &x);
        let mut grad = vec![0.0; conv.param_len()];
        let dx = conv.backward(&params, &x, &dy, &mut grad, true).unwrap();
        let lhs: f64 = y.data.iter().zip(&dy.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&dx.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        // weight gradient: <y, dy> is linear in the weights
        let wsum: f64 = params[..conv.weight_len()].iter().zip(&grad).map(|(a, b)| a * b).sum();
        assert!((lhs - wsum).abs() < 1e-12);
    }

    #[test]
    fn pooling_and_upsampling() {
        let x = ramp(1, 4, 4);
        let (y, arg) = max_pool(&x);
        assert_eq!((y.h, y.w), (2, 2));
        for (o, &a) in arg.iter().enumerate() {
            assert_eq!(y.data[o], x.data[a as usize]);
        }
        let up = upsample(&y, 2);
        assert_eq!(up.plane(0)[5], y.data[0]);
        let back = upsample_backward(&up, 2);
        for (a, b) in back.data.iter().zip(&y.data) {
            assert!((a - 4.0 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let z = ramp(3, 2, 2);
        let p = softmax_voxel_major(&z);
        for v in p.chunks(3) {
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }
}
