//! Direct compute kernels shared by the autodiff graph and the no-grad
//! inference path. Convolutions use im2col followed by a packed gemm.

/// `c = alpha * a * b + beta * c` for strided row/column-major views.
///
/// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`; strides are in elements.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    if k > 0 {
        assert!(last(m, k, rsa, csa) < a.len(), "gemm: a out of bounds");
        assert!(last(k, n, rsb, csb) < b.len(), "gemm: b out of bounds");
    }
    assert!(last(m, n, rsc, csc) < c.len(), "gemm: c out of bounds");
    // SAFETY: every index the kernel touches is bounded by the asserts above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Geometry of a same-padded, stride-1 convolution over one sample.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl ConvDims {
    fn pad(&self) -> isize {
        (self.kernel / 2) as isize
    }
    fn patch(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }
    fn hw(&self) -> usize {
        self.height * self.width
    }
}

/// Unfolds one `[C, H, W]` sample into `cols` of shape `[C*k*k, H*W]`.
fn im2col(x: &[f64], d: ConvDims, cols: &mut [f64]) {
    let (h, w, k, pad) = (d.height as isize, d.width as isize, d.kernel as isize, d.pad());
    let hw = d.hw();
    for c in 0..d.channels {
        let plane = &x[c * hw..(c + 1) * hw];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * d.kernel * d.kernel) + (ki * k + kj) as usize;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y + ki - pad;
                    let out_row = &mut dst[(y * w) as usize..((y + 1) * w) as usize];
                    if sy < 0 || sy >= h {
                        out_row.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[(sy * w) as usize..((sy + 1) * w) as usize];
                    for (x_out, v) in out_row.iter_mut().enumerate() {
                        let sx = x_out as isize + kj - pad;
                        *v = if sx < 0 || sx >= w { 0.0 } else { src[sx as usize] };
                    }
                }
            }
        }
    }
}

/// Folds `cols` back onto a `[C, H, W]` gradient buffer, accumulating.
fn col2im(cols: &[f64], d: ConvDims, dx: &mut [f64]) {
    let (h, w, k, pad) = (d.height as isize, d.width as isize, d.kernel as isize, d.pad());
    let hw = d.hw();
    for c in 0..d.channels {
        let plane = &mut dx[c * hw..(c + 1) * hw];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * d.kernel * d.kernel) + (ki * k + kj) as usize;
                let src = &cols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y + ki - pad;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    for x_out in 0..w {
                        let sx = x_out + kj - pad;
                        if sx >= 0 && sx < w {
                            plane[(sy * w + sx) as usize] += src[(y * w + x_out) as usize];
                        }
                    }
                }
            }
        }
    }
}

/// `x: [B, C, H, W]`, `weight: [O, C, k, k]`, `bias: [O]` -> `[B, O, H, W]`.
pub(crate) fn conv2d_forward(x: &[f64], batch: usize, d: ConvDims, weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let (hw, patch, o) = (d.hw(), d.patch(), d.out_channels);
    let mut out = vec![0.0; batch * o * hw];
    let mut cols = vec![0.0; patch * hw];
    for s in 0..batch {
        im2col(&x[s * d.channels * hw..(s + 1) * d.channels * hw], d, &mut cols);
        let dst = &mut out[s * o * hw..(s + 1) * o * hw];
        for (ch, plane) in dst.chunks_mut(hw).enumerate() {
            plane.iter_mut().for_each(|v| *v = bias[ch]);
        }
        gemm(o, patch, hw, 1.0, weight, (patch, 1), &cols, (hw, 1), 1.0, dst, (hw, 1));
    }
    out
}

pub(crate) struct ConvGrads {
    pub dx: Option<Vec<f64>>,
    pub dweight: Vec<f64>,
    pub dbias: Vec<f64>,
}

pub(crate) fn conv2d_backward(
    x: &[f64],
    batch: usize,
    d: ConvDims,
    weight: &[f64],
    dout: &[f64],
    need_dx: bool,
) -> ConvGrads {
    let (hw, patch, o) = (d.hw(), d.patch(), d.out_channels);
    let mut dweight = vec![0.0; o * patch];
    let mut dbias = vec![0.0; o];
    let mut dx = need_dx.then(|| vec![0.0; batch * d.channels * hw]);
    let mut cols = vec![0.0; patch * hw];
    let mut dcols = vec![0.0; patch * hw];
    for s in 0..batch {
        let g = &dout[s * o * hw..(s + 1) * o * hw];
        for (ch, plane) in g.chunks(hw).enumerate() {
            dbias[ch] += plane.iter().sum::<f64>();
        }
        im2col(&x[s * d.channels * hw..(s + 1) * d.channels * hw], d, &mut cols);
        // dW += dout_s [O, HW] * cols^T [HW, patch]
        gemm(o, hw, patch, 1.0, g, (hw, 1), &cols, (1, hw), 1.0, &mut dweight, (patch, 1));
        if let Some(dx) = dx.as_mut() {
            // dcols = W^T [patch, O] * dout_s [O, HW]
            gemm(patch, o, hw, 1.0, weight, (1, patch), g, (hw, 1), 0.0, &mut dcols, (hw, 1));
            col2im(&dcols, d, &mut dx[s * d.channels * hw..(s + 1) * d.channels * hw]);
        }
    }
    ConvGrads { dx, dweight, dbias }
}

/// 2x2 max pooling with floor semantics. Returns outputs and the flat input
/// index of each maximum.
pub(crate) fn maxpool2_forward(x: &[f64], planes: usize, h: usize, w: usize) -> (Vec<f64>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..oh {
            for xo in 0..ow {
                let mut best = base + 2 * y * w + 2 * xo;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * w + 2 * xo + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

/// `x: [B, in]`, `weight: [out, in]`, `bias: [out]` -> `[B, out]`.
pub(crate) fn linear_forward(x: &[f64], batch: usize, inp: usize, weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let out_dim = bias.len();
    let mut y: Vec<f64> = (0..batch).flat_map(|_| bias.iter().copied()).collect();
    gemm(batch, inp, out_dim, 1.0, x, (inp, 1), weight, (1, inp), 1.0, &mut y, (out_dim, 1));
    y
}

pub(crate) fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution used as an independent reference.
    fn conv_naive(x: &[f64], b: usize, d: ConvDims, w: &[f64], bias: &[f64]) -> Vec<f64> {
        let (h, wd, k) = (d.height as isize, d.width as isize, d.kernel as isize);
        let pad = k / 2;
        let mut out = vec![0.0; b * d.out_channels * d.hw()];
        for s in 0..b {
            for o in 0..d.out_channels {
                for y in 0..h {
                    for xx in 0..wd {
                        let mut acc = bias[o];
                        for c in 0..d.channels {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let (sy, sx) = (y + ki - pad, xx + kj - pad);
                                    if sy >= 0 && sy < h && sx >= 0 && sx < wd {
                                        let xi = ((s * d.channels + c) as isize * h + sy) * wd + sx;
                                        let wi = ((o * d.channels + c) as isize * k + ki) * k + kj;
                                        acc += x[xi as usize] * w[wi as usize];
                                    }
                                }
                            }
                        }
                        out[((s * d.out_channels + o) as isize * h * wd + y * wd + xx) as usize] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn im2col_conv_matches_direct_loops() {
        let d = ConvDims { channels: 3, height: 5, width: 4, out_channels: 2, kernel: 3 };
        let x: Vec<f64> = (0..2 * 3 * 20).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let w: Vec<f64> = (0..2 * 27).map(|i| ((i * 13 % 7) as f64 - 3.0) / 5.0).collect();
        let bias = vec![0.25, -0.5];
        let fast = conv2d_forward(&x, 2, d, &w, &bias);
        let slow = conv_naive(&x, 2, d, &w, &bias);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn floor_pooling_drops_odd_edge() {
        let x: Vec<f64> = (0..49).map(f64::from).collect();
        let (out, arg) = maxpool2_forward(&x, 1, 7, 7);
        assert_eq!(out.len(), 9);
        assert_eq!(out[0], 8.0);
        assert_eq!(arg[8], 40);
    }
}
