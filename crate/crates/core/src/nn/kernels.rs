//! Forward and backward kernels over raw slices.
//!
//! Convolutions lower to GEMM through im2col. All loops run in a fixed order,
//! so results are bitwise reproducible on a given machine.

use matrixmultiply::sgemm;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Rows of the im2col matrix (`in_c * k * k`).
    pub fn patch_len(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }

    fn out_px(&self) -> usize {
        self.out_h() * self.out_w()
    }

    fn in_px(&self) -> usize {
        self.in_h * self.in_w
    }
}

/// Output positions `o` in `[lo, hi)` whose input index `o·stride + off − pad` lies in `[0, len)`.
fn valid_span(off: usize, stride: usize, pad: usize, len: usize, out: usize) -> (usize, usize) {
    let lo = if pad > off { (pad - off).div_ceil(stride) } else { 0 };
    let hi = if len + pad > off { ((len + pad - off - 1) / stride + 1).min(out) } else { 0 };
    (lo.min(hi), hi)
}

/// Appends the `[in_c·k·k, oh·ow]` patch matrix of one sample to `cols`.
fn im2col_into(x: &[f32], g: &ConvGeom, cols: &mut Vec<f32>) {
    let (oh, ow, k, s) = (g.out_h(), g.out_w(), g.kernel, g.stride);
    for ci in 0..g.in_c {
        let plane = &x[ci * g.in_px()..(ci + 1) * g.in_px()];
        for ky in 0..k {
            let (ylo, yhi) = valid_span(ky, s, g.pad, g.in_h, oh);
            for kx in 0..k {
                let (xlo, xhi) = valid_span(kx, s, g.pad, g.in_w, ow);
                cols.resize(cols.len() + ylo * ow, 0.0);
                for oy in ylo..yhi {
                    let iy = oy * s + ky - g.pad;
                    let src = &plane[iy * g.in_w..(iy + 1) * g.in_w];
                    cols.resize(cols.len() + xlo, 0.0);
                    if xhi > xlo {
                        let first = xlo * s + kx - g.pad;
                        if s == 1 {
                            cols.extend_from_slice(&src[first..first + (xhi - xlo)]);
                        } else {
                            cols.extend(src[first..].iter().step_by(s).take(xhi - xlo));
                        }
                    }
                    cols.resize(cols.len() + (ow - xhi), 0.0);
                }
                cols.resize(cols.len() + (oh - yhi) * ow, 0.0);
            }
        }
    }
}

/// Patch matrices of a whole batch, stacked sample after sample.
pub fn im2col(x: &[f32], n: usize, g: &ConvGeom) -> Vec<f32> {
    let in_sz = g.in_c * g.in_px();
    let mut cols = Vec::with_capacity(n * g.patch_len() * g.out_px());
    for i in 0..n {
        im2col_into(&x[i * in_sz..(i + 1) * in_sz], g, &mut cols);
    }
    cols
}

fn col2im(cols: &[f32], g: &ConvGeom, dx: &mut [f32]) {
    let (oh, ow, k, s) = (g.out_h(), g.out_w(), g.kernel, g.stride);
    let p = oh * ow;
    for ci in 0..g.in_c {
        let plane = &mut dx[ci * g.in_px()..(ci + 1) * g.in_px()];
        for ky in 0..k {
            let (ylo, yhi) = valid_span(ky, s, g.pad, g.in_h, oh);
            for kx in 0..k {
                let (xlo, xhi) = valid_span(kx, s, g.pad, g.in_w, ow);
                if xhi <= xlo {
                    continue;
                }
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in ylo..yhi {
                    let iy = oy * s + ky - g.pad;
                    let first = xlo * s + kx - g.pad;
                    let drow = &mut plane[iy * g.in_w + first..(iy + 1) * g.in_w];
                    let srow = &src[oy * ow + xlo..oy * ow + xhi];
                    if s == 1 {
                        drow.iter_mut().zip(srow).for_each(|(d, v)| *d += v);
                    } else {
                        drow.iter_mut().step_by(s).zip(srow).for_each(|(d, v)| *d += v);
                    }
                }
            }
        }
    }
}

/// `c[m, n] = beta * c + a[m, k] · b[k, n]` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: isize,
    csa: isize,
    b: &[f32],
    rsb: isize,
    csb: isize,
    beta: f32,
    c: &mut [f32],
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: every caller passes slices whose extents cover the strided
    // m×k, k×n and m×n views.
    unsafe {
        sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Batched convolution. `x`: `[n, in_c, in_h, in_w]`, `w`: `[out_c, in_c, k, k]`.
/// Also returns the patch matrices, which [`conv2d_backward`] can reuse.
pub fn conv2d_forward(x: &[f32], n: usize, w: &[f32], bias: Option<&[f32]>, g: &ConvGeom) -> (Vec<f32>, Vec<f32>) {
    let (kk, p) = (g.patch_len(), g.out_px());
    let out_sz = g.out_c * p;
    let mut y = vec![0.0; n * out_sz];
    let cols = im2col(x, n, g);
    for i in 0..n {
        let yi = &mut y[i * out_sz..(i + 1) * out_sz];
        gemm(g.out_c, kk, p, w, kk as isize, 1, &cols[i * kk * p..(i + 1) * kk * p], p as isize, 1, 0.0, yi);
        if let Some(b) = bias {
            for (o, row) in yi.chunks_mut(p).enumerate() {
                row.iter_mut().for_each(|v| *v += b[o]);
            }
        }
    }
    (y, cols)
}

/// Gradients of a batched convolution. Returns `(dx, dw, db)`, each only when requested.
/// `cols` are the patch matrices from the forward pass; they are rebuilt when absent.
#[allow(clippy::type_complexity, clippy::too_many_arguments)]
pub fn conv2d_backward(
    x: &[f32],
    cols: Option<&[f32]>,
    n: usize,
    w: &[f32],
    dy: &[f32],
    g: &ConvGeom,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> (Option<Vec<f32>>, Option<Vec<f32>>, Option<Vec<f32>>) {
    let (kk, p) = (g.patch_len(), g.out_px());
    let in_sz = g.in_c * g.in_px();
    let out_sz = g.out_c * p;
    let db = need_db.then(|| {
        let mut db = vec![0.0f32; g.out_c];
        for i in 0..n {
            for (o, row) in dy[i * out_sz..(i + 1) * out_sz].chunks(p).enumerate() {
                db[o] += row.iter().sum::<f32>();
            }
        }
        db
    });
    let dw = need_dw.then(|| {
        let rebuilt;
        let cols = match cols {
            Some(c) => c,
            None => {
                rebuilt = im2col(x, n, g);
                &rebuilt
            }
        };
        let mut dw = vec![0.0; g.out_c * kk];
        for i in 0..n {
            // dW[o, j] += Σ_p dY[o, p] · cols[j, p]
            let ci = &cols[i * kk * p..(i + 1) * kk * p];
            gemm(g.out_c, p, kk, &dy[i * out_sz..(i + 1) * out_sz], p as isize, 1, ci, 1, p as isize, 1.0, &mut dw);
        }
        dw
    });
    let dx = need_dx.then(|| {
        let mut dx = vec![0.0; n * in_sz];
        let mut dcols = vec![0.0; kk * p];
        for i in 0..n {
            // dcols[j, p] = Σ_o W[o, j] · dY[o, p]
            gemm(kk, g.out_c, p, w, 1, kk as isize, &dy[i * out_sz..(i + 1) * out_sz], p as isize, 1, 0.0, &mut dcols);
            col2im(&dcols, g, &mut dx[i * in_sz..(i + 1) * in_sz]);
        }
        dx
    });
    (dx, dw, db)
}

/// `y[n, o] = x[n, f] · w[o, f]ᵀ + b[o]`.
pub fn linear_forward(x: &[f32], n: usize, f: usize, w: &[f32], b: Option<&[f32]>, o: usize) -> Vec<f32> {
    let mut y = vec![0.0; n * o];
    gemm(n, f, o, x, f as isize, 1, w, 1, f as isize, 0.0, &mut y);
    if let Some(b) = b {
        for row in y.chunks_mut(o) {
            row.iter_mut().zip(b).for_each(|(v, bb)| *v += bb);
        }
    }
    y
}

/// Returns `(dx, dw, db)` for [`linear_forward`].
pub fn linear_backward(
    x: &[f32],
    n: usize,
    f: usize,
    w: &[f32],
    o: usize,
    dy: &[f32],
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let mut dx = vec![0.0; n * f];
    gemm(n, o, f, dy, o as isize, 1, w, f as isize, 1, 0.0, &mut dx);
    let mut dw = vec![0.0; o * f];
    gemm(o, n, f, dy, 1, o as isize, x, f as isize, 1, 0.0, &mut dw);
    let mut db = vec![0.0; o];
    for row in dy.chunks(o) {
        db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    (dx, dw, db)
}

/// Per-(sample, channel) normalization over spatial positions.
/// Returns the normalized output and the inverse standard deviation of each plane.
pub fn instance_norm_forward(x: &[f32], planes: usize, plane: usize, eps: f32) -> (Vec<f32>, Vec<f32>) {
    let mut y = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; planes];
    for pi in 0..planes {
        let src = &x[pi * plane..(pi + 1) * plane];
        let mean = src.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
        let var = src.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / plane as f64;
        let inv = 1.0 / (var + eps as f64).sqrt();
        inv_std[pi] = inv as f32;
        for (d, &s) in y[pi * plane..(pi + 1) * plane].iter_mut().zip(src) {
            *d = ((s as f64 - mean) * inv) as f32;
        }
    }
    (y, inv_std)
}

/// Per-channel normalization over batch and spatial positions of an NCHW buffer.
/// Returns the normalized output and each channel's inverse standard deviation.
#[allow(clippy::needless_range_loop)]
pub fn batch_norm_forward(x: &[f32], n: usize, c: usize, plane: usize, eps: f32) -> (Vec<f32>, Vec<f32>) {
    let mut y = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; c];
    let count = (n * plane) as f64;
    for ch in 0..c {
        let planes = || (0..n).map(move |i| (i * c + ch) * plane);
        let mean = planes()
            .map(|o| x[o..o + plane].iter().map(|&v| v as f64).sum::<f64>())
            .sum::<f64>()
            / count;
        let var = planes()
            .map(|o| x[o..o + plane].iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>())
            .sum::<f64>()
            / count;
        let inv = 1.0 / (var + eps as f64).sqrt();
        inv_std[ch] = inv as f32;
        for o in planes() {
            for j in o..o + plane {
                y[j] = ((x[j] as f64 - mean) * inv) as f32;
            }
        }
    }
    (y, inv_std)
}

pub fn batch_norm_backward(y: &[f32], inv_std: &[f32], dy: &[f32], n: usize, plane: usize) -> Vec<f32> {
    let c = inv_std.len();
    let count = (n * plane) as f64;
    let mut dx = vec![0.0; y.len()];
    for (ch, &inv) in inv_std.iter().enumerate() {
        let planes = || (0..n).map(move |i| (i * c + ch) * plane);
        let (mut sum_dy, mut sum_dyy) = (0.0f64, 0.0f64);
        for o in planes() {
            for j in o..o + plane {
                sum_dy += dy[j] as f64;
                sum_dyy += dy[j] as f64 * y[j] as f64;
            }
        }
        let (mean_dy, mean_dyy) = (sum_dy / count, sum_dyy / count);
        for o in planes() {
            for j in o..o + plane {
                dx[j] = (inv as f64 * (dy[j] as f64 - mean_dy - y[j] as f64 * mean_dyy)) as f32;
            }
        }
    }
    dx
}

pub fn instance_norm_backward(y: &[f32], inv_std: &[f32], dy: &[f32], plane: usize) -> Vec<f32> {
    let mut dx = vec![0.0; y.len()];
    for (pi, &inv) in inv_std.iter().enumerate() {
        let r = pi * plane..(pi + 1) * plane;
        let (yp, dyp) = (&y[r.clone()], &dy[r.clone()]);
        let mean_dy = dyp.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
        let mean_dyy = yp.iter().zip(dyp).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>() / plane as f64;
        for ((d, &yy), &g) in dx[r].iter_mut().zip(yp).zip(dyp) {
            *d = (inv as f64 * (g as f64 - mean_dy - yy as f64 * mean_dyy)) as f32;
        }
    }
    dx
}

/// 2×2 max pooling, stride 2. Returns output and the flat argmax index of each output cell.
pub fn maxpool2_forward(x: &[f32], planes: usize, h: usize, w: usize) -> (Vec<f32>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut y = vec![0.0; planes * oh * ow];
    let mut arg = vec![0u32; planes * oh * ow];
    for pi in 0..planes {
        let base = pi * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                let o = pi * oh * ow + oy * ow + ox;
                y[o] = x[best];
                arg[o] = best as u32;
            }
        }
    }
    (y, arg)
}

pub fn upsample2_forward(x: &[f32], planes: usize, h: usize, w: usize) -> Vec<f32> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut y = vec![0.0; planes * oh * ow];
    for pi in 0..planes {
        for oy in 0..oh {
            let src = &x[pi * h * w + (oy / 2) * w..pi * h * w + (oy / 2 + 1) * w];
            let dst = &mut y[pi * oh * ow + oy * ow..pi * oh * ow + (oy + 1) * ow];
            for (ox, d) in dst.iter_mut().enumerate() {
                *d = src[ox / 2];
            }
        }
    }
    y
}

pub fn upsample2_backward(dy: &[f32], planes: usize, h: usize, w: usize) -> Vec<f32> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![0.0; planes * h * w];
    for pi in 0..planes {
        for oy in 0..oh {
            for ox in 0..ow {
                dx[pi * h * w + (oy / 2) * w + ox / 2] += dy[pi * oh * ow + oy * ow + ox];
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f32], w: &[f32], b: &[f32], g: &ConvGeom) -> Vec<f32> {
        let (oh, ow) = (g.out_h(), g.out_w());
        let mut y = vec![0.0; g.out_c * oh * ow];
        for o in 0..g.out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[o];
                    for c in 0..g.in_c {
                        for ky in 0..g.kernel {
                            for kx in 0..g.kernel {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < g.in_h && (ix as usize) < g.in_w {
                                    acc += x[(c * g.in_h + iy as usize) * g.in_w + ix as usize]
                                        * w[((o * g.in_c + c) * g.kernel + ky) * g.kernel + kx];
                                }
                            }
                        }
                    }
                    y[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        y
    }

    fn ramp(n: usize, k: f32) -> Vec<f32> {
        (0..n).map(|i| (i as f32 * k).sin() * 0.5).collect()
    }

    #[test]
    fn conv_matches_direct_loops() {
        for (k, s, p) in [(3, 1, 1), (4, 2, 1), (4, 1, 1), (1, 1, 0)] {
            let g = ConvGeom { in_c: 3, in_h: 9, in_w: 8, out_c: 5, kernel: k, stride: s, pad: p };
            let x = ramp(3 * 9 * 8, 0.37);
            let w = ramp(5 * g.patch_len(), 0.91);
            let b = ramp(5, 1.3);
            let (got, _) = conv2d_forward(&x, 1, &w, Some(&b), &g);
            let want = naive_conv(&x, &w, &b, &g);
            for (a, e) in got.iter().zip(&want) {
                assert!((a - e).abs() < 1e-5, "k={k} s={s} p={p}: {a} vs {e}");
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint_of_forward() {
        // <conv(x), dy> must equal <x, dx> and <w, dw> for a linear map.
        let g = ConvGeom { in_c: 2, in_h: 6, in_w: 6, out_c: 3, kernel: 4, stride: 2, pad: 1 };
        let x = ramp(2 * 36, 0.7);
        let w = ramp(3 * g.patch_len(), 0.3);
        let dy = ramp(3 * g.out_h() * g.out_w(), 1.1);
        let (y, _) = conv2d_forward(&x, 1, &w, None, &g);
        let lhs: f32 = y.iter().zip(&dy).map(|(a, b)| a * b).sum();
        let (dx, dw, _) = conv2d_backward(&x, None, 1, &w, &dy, &g, true, true, false);
        let via_x: f32 = x.iter().zip(dx.unwrap().iter()).map(|(a, b)| a * b).sum();
        let via_w: f32 = w.iter().zip(dw.unwrap().iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - via_x).abs() < 1e-4);
        assert!((lhs - via_w).abs() < 1e-4);
    }

    #[test]
    fn maxpool_picks_largest() {
        let x = vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, -1.0, 9.0];
        let (y, arg) = maxpool2_forward(&x, 1, 2, 4);
        assert_eq!(y, vec![5.0, 9.0]);
        assert_eq!(arg, vec![1, 7]);
    }

    #[test]
    fn upsample_backward_sums_blocks() {
        let dy = vec![1.0; 16];
        assert_eq!(upsample2_backward(&dy, 1, 2, 2), vec![4.0; 4]);
    }
}
