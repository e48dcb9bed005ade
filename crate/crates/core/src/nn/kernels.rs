//! Raw loops behind the layer kinds. All buffers are row-major `[N, C, L]`
//! (or `[N, F]`); gradient routines accumulate into their outputs.

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) struct ConvDims {
    pub n: usize,
    pub cin: usize,
    pub lin: usize,
    pub cout: usize,
    pub lout: usize,
    pub k: usize,
    pub stride: usize,
}

pub(crate) fn conv1d_forward(x: &[f64], w: &[f64], b: &[f64], d: &ConvDims) -> Vec<f64> {
    let mut y = vec![0.0; d.n * d.cout * d.lout];
    for ni in 0..d.n {
        let xs = &x[ni * d.cin * d.lin..(ni + 1) * d.cin * d.lin];
        for o in 0..d.cout {
            let yrow = &mut y[(ni * d.cout + o) * d.lout..][..d.lout];
            yrow.fill(b[o]);
            for i in 0..d.cin {
                let xrow = &xs[i * d.lin..(i + 1) * d.lin];
                let wrow = &w[(o * d.cin + i) * d.k..][..d.k];
                for (kk, &wv) in wrow.iter().enumerate() {
                    if d.stride == 1 {
                        axpy(wv, &xrow[kk..kk + d.lout], yrow);
                    } else {
                        for (t, yv) in yrow.iter_mut().enumerate() {
                            *yv += wv * xrow[t * d.stride + kk];
                        }
                    }
                }
            }
        }
    }
    y
}

pub(crate) fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    d: &ConvDims,
    gw: &mut [f64],
    gb: &mut [f64],
    mut gx: Option<&mut [f64]>,
) {
    for ni in 0..d.n {
        let xs = &x[ni * d.cin * d.lin..(ni + 1) * d.cin * d.lin];
        for o in 0..d.cout {
            let grow = &gy[(ni * d.cout + o) * d.lout..][..d.lout];
            gb[o] += grow.iter().sum::<f64>();
            for i in 0..d.cin {
                let xrow = &xs[i * d.lin..(i + 1) * d.lin];
                let base = (o * d.cin + i) * d.k;
                for kk in 0..d.k {
                    if d.stride == 1 {
                        gw[base + kk] += dot(grow, &xrow[kk..kk + d.lout]);
                    } else {
                        gw[base + kk] += grow
                            .iter()
                            .enumerate()
                            .map(|(t, g)| g * xrow[t * d.stride + kk])
                            .sum::<f64>();
                    }
                }
                if let Some(gx) = gx.as_deref_mut() {
                    let gxrow = &mut gx[(ni * d.cin + i) * d.lin..][..d.lin];
                    for kk in 0..d.k {
                        let wv = w[base + kk];
                        if d.stride == 1 {
                            axpy(wv, grow, &mut gxrow[kk..kk + d.lout]);
                        } else {
                            for (t, g) in grow.iter().enumerate() {
                                gxrow[t * d.stride + kk] += wv * g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Transposed convolution; weight layout `[cin, cout, k]`.
pub(crate) fn deconv1d_forward(x: &[f64], w: &[f64], b: &[f64], d: &ConvDims) -> Vec<f64> {
    let mut y = vec![0.0; d.n * d.cout * d.lout];
    for ni in 0..d.n {
        for o in 0..d.cout {
            let yrow = &mut y[(ni * d.cout + o) * d.lout..][..d.lout];
            yrow.fill(b[o]);
            for i in 0..d.cin {
                let xrow = &x[(ni * d.cin + i) * d.lin..][..d.lin];
                let wrow = &w[(i * d.cout + o) * d.k..][..d.k];
                for (kk, &wv) in wrow.iter().enumerate() {
                    if d.stride == 1 {
                        axpy(wv, xrow, &mut yrow[kk..kk + d.lin]);
                    } else {
                        for (t, xv) in xrow.iter().enumerate() {
                            yrow[t * d.stride + kk] += wv * xv;
                        }
                    }
                }
            }
        }
    }
    y
}

pub(crate) fn deconv1d_backward(
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    d: &ConvDims,
    gw: &mut [f64],
    gb: &mut [f64],
    mut gx: Option<&mut [f64]>,
) {
    for ni in 0..d.n {
        for o in 0..d.cout {
            let grow = &gy[(ni * d.cout + o) * d.lout..][..d.lout];
            gb[o] += grow.iter().sum::<f64>();
            for i in 0..d.cin {
                let xrow = &x[(ni * d.cin + i) * d.lin..][..d.lin];
                let base = (i * d.cout + o) * d.k;
                for kk in 0..d.k {
                    if d.stride == 1 {
                        gw[base + kk] += dot(xrow, &grow[kk..kk + d.lin]);
                    } else {
                        gw[base + kk] += xrow
                            .iter()
                            .enumerate()
                            .map(|(t, xv)| xv * grow[t * d.stride + kk])
                            .sum::<f64>();
                    }
                }
                if let Some(gx) = gx.as_deref_mut() {
                    let gxrow = &mut gx[(ni * d.cin + i) * d.lin..][..d.lin];
                    for kk in 0..d.k {
                        let wv = w[base + kk];
                        if d.stride == 1 {
                            axpy(wv, &grow[kk..kk + d.lin], gxrow);
                        } else {
                            for (t, gxv) in gxrow.iter_mut().enumerate() {
                                *gxv += wv * grow[t * d.stride + kk];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `y = x W^T + b`, weight layout `[fout, fin]`.
pub(crate) fn dense_forward(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    n: usize,
    fin: usize,
    fout: usize,
) -> Vec<f64> {
    let mut y = vec![0.0; n * fout];
    for ni in 0..n {
        let xr = &x[ni * fin..(ni + 1) * fin];
        for o in 0..fout {
            y[ni * fout + o] = b[o] + dot(&w[o * fin..(o + 1) * fin], xr);
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward(
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    n: usize,
    fin: usize,
    fout: usize,
    gw: &mut [f64],
    gb: &mut [f64],
    mut gx: Option<&mut [f64]>,
) {
    for ni in 0..n {
        let xr = &x[ni * fin..(ni + 1) * fin];
        for o in 0..fout {
            let g = gy[ni * fout + o];
            if g == 0.0 {
                continue;
            }
            gb[o] += g;
            axpy(g, xr, &mut gw[o * fin..(o + 1) * fin]);
            if let Some(gx) = gx.as_deref_mut() {
                axpy(g, &w[o * fin..(o + 1) * fin], &mut gx[ni * fin..(ni + 1) * fin]);
            }
        }
    }
}

/// Max-pool over `rows` independent rows of length `lin`; returns values and argmax offsets.
pub(crate) fn maxpool_forward(
    x: &[f64],
    rows: usize,
    lin: usize,
    pool: usize,
    stride: usize,
) -> (Vec<f64>, Vec<u32>) {
    let lout = (lin - pool) / stride + 1;
    let mut y = Vec::with_capacity(rows * lout);
    let mut arg = Vec::with_capacity(rows * lout);
    for r in 0..rows {
        let xr = &x[r * lin..(r + 1) * lin];
        for t in 0..lout {
            let start = t * stride;
            let mut best = start;
            for j in start + 1..start + pool {
                if xr[j] > xr[best] {
                    best = j;
                }
            }
            y.push(xr[best]);
            arg.push((r * lin + best) as u32);
        }
    }
    (y, arg)
}

pub(crate) fn unpool_forward(x: &[f64], factor: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(x.len() * factor);
    for &v in x {
        for _ in 0..factor {
            y.push(v);
        }
    }
    y
}

pub(crate) fn unpool_backward(gy: &[f64], factor: usize) -> Vec<f64> {
    gy.chunks_exact(factor).map(|c| c.iter().sum()).collect()
}
