//! Per-sample layer kernels on (C, H, W) buffers.

/// Geometry of a 2-D convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// Output index range `[lo, hi)` along one axis for kernel offset `kk`,
    /// i.e. outputs whose tap `o * stride + kk - pad` lands inside `0..extent`.
    fn valid(&self, kk: usize, extent: usize, out_extent: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let shift = kk as isize - self.pad as isize;
        // o*s + shift >= 0  and  o*s + shift <= extent-1
        let lo = if shift >= 0 { 0 } else { (-shift + s - 1) / s };
        let hi_num = extent as isize - 1 - shift;
        let hi = if hi_num < 0 { 0 } else { hi_num / s + 1 };
        let hi = hi.min(out_extent as isize);
        let lo = lo.min(hi);
        (lo as usize, hi as usize)
    }
}

/// Unrolls input patches into a (cin·k·k, oh·ow) row-major matrix.
fn im2col(g: &ConvGeom, x: &[f64]) -> Vec<f64> {
    let (oplane, iplane) = (g.oh * g.ow, g.h * g.w);
    let mut cols = vec![0.0; g.cin * g.k * g.k * oplane];
    for c in 0..g.cin {
        let xc = &x[c * iplane..(c + 1) * iplane];
        for ky in 0..g.k {
            let (ylo, yhi) = g.valid(ky, g.h, g.oh);
            for kx in 0..g.k {
                let (xlo, xhi) = g.valid(kx, g.w, g.ow);
                let row = &mut cols[((c * g.k + ky) * g.k + kx) * oplane..][..oplane];
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ky - g.pad;
                    for ox in xlo..xhi {
                        row[oy * g.ow + ox] = xc[iy * g.w + ox * g.stride + kx - g.pad];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
fn col2im(g: &ConvGeom, cols: &[f64]) -> Vec<f64> {
    let (oplane, iplane) = (g.oh * g.ow, g.h * g.w);
    let mut dx = vec![0.0; g.cin * iplane];
    for c in 0..g.cin {
        let dxc = &mut dx[c * iplane..(c + 1) * iplane];
        for ky in 0..g.k {
            let (ylo, yhi) = g.valid(ky, g.h, g.oh);
            for kx in 0..g.k {
                let (xlo, xhi) = g.valid(kx, g.w, g.ow);
                let row = &cols[((c * g.k + ky) * g.k + kx) * oplane..][..oplane];
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ky - g.pad;
                    for ox in xlo..xhi {
                        dxc[iy * g.w + ox * g.stride + kx - g.pad] += row[oy * g.ow + ox];
                    }
                }
            }
        }
    }
    dx
}

/// `c = a · b (+ c when accumulate)`, with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.len() >= (m - 1) * rsa + k.saturating_sub(1) * csa + usize::from(k > 0));
    assert!(b.len() >= k.saturating_sub(1) * rsb + (n - 1) * csb + usize::from(k > 0));
    assert!(c.len() >= m * n);
    // SAFETY: the asserts bound every index the kernel touches; `c` is a
    // distinct mutable slice laid out row-major with stride n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            if accumulate { 1.0 } else { 0.0 },
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn conv2d_forward(g: &ConvGeom, x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let oplane = g.oh * g.ow;
    let kk = g.cin * g.k * g.k;
    let cols = im2col(g, x);
    let mut out = vec![0.0; g.cout * oplane];
    for (o, chunk) in out.chunks_mut(oplane.max(1)).enumerate().take(g.cout) {
        chunk.fill(bias[o]);
    }
    gemm(g.cout, kk, oplane, weight, (kk, 1), &cols, (oplane, 1), &mut out, true);
    out
}

/// Returns (dx, dweight, dbias). `dx` is skipped (empty) when not needed.
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    x: &[f64],
    weight: &[f64],
    dy: &[f64],
    need_dx: bool,
    need_dw: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let oplane = g.oh * g.ow;
    let kk = g.cin * g.k * g.k;
    let (mut dw, mut db) = (Vec::new(), Vec::new());
    if need_dw {
        let cols = im2col(g, x);
        dw = vec![0.0; weight.len()];
        // dW = dY · colsᵀ
        gemm(g.cout, oplane, kk, dy, (oplane, 1), &cols, (1, oplane), &mut dw, false);
        db = (0..g.cout).map(|o| dy[o * oplane..(o + 1) * oplane].iter().sum()).collect();
    }
    let dx = if need_dx {
        let mut dcols = vec![0.0; kk * oplane];
        // dcols = Wᵀ · dY
        gemm(kk, g.cout, oplane, weight, (1, kk), dy, (oplane, 1), &mut dcols, false);
        col2im(g, &dcols)
    } else {
        Vec::new()
    };
    (dx, dw, db)
}

/// Weight layout (cin, cout, 2, 2).
pub(crate) fn upconv_forward(
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    x: &[f64],
    weight: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let (ow, iplane) = (2 * w, h * w);
    let taps = cout * 4;
    // taps_out[(o, a, b), p] = Σ_c W[c, (o, a, b)] · x[c, p]
    let mut taps_out = vec![0.0; taps * iplane];
    gemm(taps, cin, iplane, weight, (1, taps), x, (iplane, 1), &mut taps_out, false);
    let mut out = vec![0.0; cout * 4 * iplane];
    for o in 0..cout {
        let out_o = &mut out[o * 4 * iplane..(o + 1) * 4 * iplane];
        for t in 0..4 {
            let (a, b) = (t / 2, t % 2);
            let src = &taps_out[(o * 4 + t) * iplane..][..iplane];
            for y in 0..h {
                for xx in 0..w {
                    out_o[(2 * y + a) * ow + 2 * xx + b] = src[y * w + xx] + bias[o];
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn upconv_backward(
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    x: &[f64],
    weight: &[f64],
    dy: &[f64],
    need_dx: bool,
    need_dw: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (ow, oplane, iplane) = (2 * w, 4 * h * w, h * w);
    let taps = cout * 4;
    let mut dtaps = vec![0.0; taps * iplane];
    for o in 0..cout {
        let dy_o = &dy[o * oplane..(o + 1) * oplane];
        for t in 0..4 {
            let (a, b) = (t / 2, t % 2);
            let dst = &mut dtaps[(o * 4 + t) * iplane..][..iplane];
            for y in 0..h {
                for xx in 0..w {
                    dst[y * w + xx] = dy_o[(2 * y + a) * ow + 2 * xx + b];
                }
            }
        }
    }
    let (mut dw, mut db) = (Vec::new(), Vec::new());
    if need_dw {
        dw = vec![0.0; weight.len()];
        // dW[c, tap] = Σ_p x[c, p] · dtaps[tap, p]
        gemm(cin, iplane, taps, x, (iplane, 1), &dtaps, (1, iplane), &mut dw, false);
        db = (0..cout).map(|o| dy[o * oplane..(o + 1) * oplane].iter().sum()).collect();
    }
    let dx = if need_dx {
        let mut dx = vec![0.0; cin * iplane];
        gemm(cin, taps, iplane, weight, (taps, 1), &dtaps, (iplane, 1), &mut dx, false);
        dx
    } else {
        Vec::new()
    };
    (dx, dw, db)
}

/// Returns pooled values and, per output, the flat index of the winning input.
pub(crate) fn maxpool_forward(c: usize, h: usize, w: usize, x: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let i0 = base + 2 * y * w + 2 * xx;
                let mut best = i0;
                for cand in [i0 + 1, i0 + w, i0 + w + 1] {
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

pub(crate) fn dense_forward(fin: usize, fout: usize, x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    (0..fout)
        .map(|o| {
            bias[o]
                + weight[o * fin..(o + 1) * fin]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
        })
        .collect()
}

pub(crate) fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
