//! Forward/backward kernels on NCHW tensors.

use super::Tensor;
use crate::{Error, Real, Result};

fn shape_err(msg: String) -> Error {
    Error::ShapeMismatch(msg)
}

/// Unfolds one `C×H×W` image into `(C·k·k) × (H·W)` columns, zero padding `k/2`.
fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, k: usize, cols: &mut [T]) {
    let hw = h * w;
    let pad = (k / 2) as isize;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let off = kx as isize - pad;
                let lo = (-off).max(0) as usize;
                let hi = (w as isize - off).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad;
                    let drow = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize || lo >= hi {
                        drow.fill(T::zero());
                        continue;
                    }
                    let srow = &plane[sy as usize * w..(sy as usize + 1) * w];
                    drow[..lo].fill(T::zero());
                    drow[lo..hi].copy_from_slice(&srow[(lo as isize + off) as usize..(hi as isize + off) as usize]);
                    drow[hi..].fill(T::zero());
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into the image gradient.
fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, k: usize, dx: &mut [T]) {
    let hw = h * w;
    let pad = (k / 2) as isize;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let off = kx as isize - pad;
                let lo = (-off).max(0) as usize;
                let hi = (w as isize - off).min(w as isize).max(0) as usize;
                if lo >= hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let drow = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let srow = &src[y * w..(y + 1) * w];
                    for xo in lo..hi {
                        drow[(xo as isize + off) as usize] += srow[xo];
                    }
                }
            }
        }
    }
}

/// Stride-1 "same" cross-correlation. `w` is `K×C×k×k` with odd `k`.
///
/// Columns are unfolded one sample at a time into a buffer small enough to
/// stay cache-resident; backward unfolds again from the input.
pub fn conv2d_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, wd] = x.dims4()?;
    let [kout, cin, k, k2] = w.dims4()?;
    if cin != c || k != k2 || k % 2 == 0 || b.shape() != [kout] {
        return Err(shape_err(format!(
            "conv2d: input {:?}, weight {:?}, bias {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let hw = h * wd;
    let ck = c * k * k;
    let mut col = vec![T::zero(); ck * hw];
    let mut y = Tensor::zeros(&[n, kout, h, wd]);
    for s in 0..n {
        let src = &x.data()[s * c * hw..(s + 1) * c * hw];
        let out = &mut y.data_mut()[s * kout * hw..(s + 1) * kout * hw];
        for (o, &bias) in out.chunks_mut(hw).zip(b.data()) {
            o.fill(bias);
        }
        if k == 1 {
            T::gemm(kout, ck, hw, T::one(), w.data(), ck as isize, 1, src, hw as isize, 1, T::one(), out, hw as isize, 1);
        } else {
            im2col(src, c, h, wd, k, &mut col);
            T::gemm(kout, ck, hw, T::one(), w.data(), ck as isize, 1, &col, hw as isize, 1, T::one(), out, hw as isize, 1);
        }
    }
    Ok(y)
}

/// Gradients `(dx, dw, db)` of [`conv2d_forward`] given its input.
pub fn conv2d_backward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [n, c, h, wd] = x.dims4()?;
    let [kout, cin, k, _] = w.dims4()?;
    if cin != c || dy.shape() != [n, kout, h, wd] {
        return Err(shape_err(format!("conv2d backward: x {:?}, w {:?}, dy {:?}", x.shape(), w.shape(), dy.shape())));
    }
    let hw = h * wd;
    let ck = c * k * k;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[kout]);
    let (mut col, mut dcol) = if k == 1 { (Vec::new(), Vec::new()) } else { (vec![T::zero(); ck * hw], vec![T::zero(); ck * hw]) };
    for s in 0..n {
        let g = &dy.data()[s * kout * hw..(s + 1) * kout * hw];
        let src = &x.data()[s * c * hw..(s + 1) * c * hw];
        for (d, row) in db.data_mut().iter_mut().zip(g.chunks(hw)) {
            *d += row.iter().copied().sum::<T>();
        }
        let dxs = &mut dx.data_mut()[s * c * hw..(s + 1) * c * hw];
        if k == 1 {
            T::gemm(kout, hw, ck, T::one(), g, hw as isize, 1, src, 1, hw as isize, T::one(), dw.data_mut(), ck as isize, 1);
            T::gemm(ck, kout, hw, T::one(), w.data(), 1, ck as isize, g, hw as isize, 1, T::zero(), dxs, hw as isize, 1);
            continue;
        }
        im2col(src, c, h, wd, k, &mut col);
        // dW += dY · colsᵀ
        T::gemm(kout, hw, ck, T::one(), g, hw as isize, 1, &col, 1, hw as isize, T::one(), dw.data_mut(), ck as isize, 1);
        // dcols = Wᵀ · dY
        T::gemm(ck, kout, hw, T::one(), w.data(), 1, ck as isize, g, hw as isize, 1, T::zero(), &mut dcol, hw as isize, 1);
        col2im(&dcol, c, h, wd, k, dxs);
    }
    Ok((dx, dw, db))
}

/// 2×2 stride-2 transposed convolution. `w` is `Cin×Cout×2×2`.
pub fn conv_transpose2x2_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, cin, h, wd] = x.dims4()?;
    let [wc, cout, k1, k2] = w.dims4()?;
    if wc != cin || k1 != 2 || k2 != 2 || b.shape() != [cout] {
        return Err(shape_err(format!(
            "conv_transpose2x2: input {:?}, weight {:?}, bias {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let hw = h * wd;
    let (oh, ow) = (2 * h, 2 * wd);
    let q = cout * 4;
    let mut z = vec![T::zero(); q * hw];
    let mut y = Tensor::zeros(&[n, cout, oh, ow]);
    for s in 0..n {
        let xs = &x.data()[s * cin * hw..(s + 1) * cin * hw];
        // Z (Cout·4 × HW) = Wᵀ · X
        T::gemm(q, cin, hw, T::one(), w.data(), 1, q as isize, xs, hw as isize, 1, T::zero(), &mut z, hw as isize, 1);
        let ys = &mut y.data_mut()[s * cout * oh * ow..(s + 1) * cout * oh * ow];
        for co in 0..cout {
            let bias = b.data()[co];
            for a in 0..2 {
                for bb in 0..2 {
                    let zr = &z[((co * 2 + a) * 2 + bb) * hw..][..hw];
                    for i in 0..h {
                        let orow = &mut ys[co * oh * ow + (2 * i + a) * ow..][..ow];
                        for j in 0..wd {
                            orow[2 * j + bb] = zr[i * wd + j] + bias;
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

pub fn conv_transpose2x2_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [n, cin, h, wd] = x.dims4()?;
    let [_, cout, _, _] = w.dims4()?;
    let (oh, ow) = (2 * h, 2 * wd);
    if dy.shape() != [n, cout, oh, ow] {
        return Err(shape_err(format!("conv_transpose2x2 backward: dy {:?}", dy.shape())));
    }
    let hw = h * wd;
    let q = cout * 4;
    let mut dz = vec![T::zero(); q * hw];
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[cout]);
    for s in 0..n {
        let gs = &dy.data()[s * cout * oh * ow..(s + 1) * cout * oh * ow];
        for co in 0..cout {
            db.data_mut()[co] += gs[co * oh * ow..(co + 1) * oh * ow].iter().copied().sum::<T>();
            for a in 0..2 {
                for bb in 0..2 {
                    let zr = &mut dz[((co * 2 + a) * 2 + bb) * hw..][..hw];
                    for i in 0..h {
                        let grow = &gs[co * oh * ow + (2 * i + a) * ow..][..ow];
                        for j in 0..wd {
                            zr[i * wd + j] = grow[2 * j + bb];
                        }
                    }
                }
            }
        }
        let xs = &x.data()[s * cin * hw..(s + 1) * cin * hw];
        // dX = W · dZ
        T::gemm(cin, q, hw, T::one(), w.data(), q as isize, 1, &dz, hw as isize, 1, T::zero(), &mut dx.data_mut()[s * cin * hw..(s + 1) * cin * hw], hw as isize, 1);
        // dW += X · dZᵀ
        T::gemm(cin, hw, q, T::one(), xs, hw as isize, 1, &dz, 1, hw as isize, T::one(), dw.data_mut(), q as isize, 1);
    }
    Ok((dx, dw, db))
}

/// 2×2 max pooling. Returns the output and, per output element, the flat
/// input index of its maximum (first in row-major order on ties).
pub fn maxpool2x2_forward<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err(format!("maxpool2x2 needs even spatial dims, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor::zeros(&[n, c, oh, ow]);
    let mut arg = vec![0usize; n * c * oh * ow];
    let xd = x.data();
    let mut o = 0;
    for nc in 0..n * c {
        let base = nc * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * w + 2 * j;
                for idx in [best + 1, best + w, best + w + 1] {
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                y.data_mut()[o] = xd[best];
                arg[o] = best;
                o += 1;
            }
        }
    }
    Ok((y, arg))
}

pub fn maxpool2x2_backward<T: Real>(x_shape: [usize; 4], argmax: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(&x_shape);
    for (&i, &g) in argmax.iter().zip(dy.data()) {
        dx.data_mut()[i] += g;
    }
    dx
}

pub fn relu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    y
}

/// Uses the forward output: gradient passes where `y > 0`.
pub fn relu_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (g, &v) in dx.data_mut().iter_mut().zip(y.data()) {
        if v <= T::zero() {
            *g = T::zero();
        }
    }
    dx
}

pub fn sigmoid_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    for v in y.data_mut() {
        *v = if *v >= T::zero() {
            T::one() / (T::one() + (-*v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        };
    }
    y
}

pub fn sigmoid_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (g, &s) in dx.data_mut().iter_mut().zip(y.data()) {
        *g = *g * s * (T::one() - s);
    }
    dx
}

/// Concatenates along channels.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, ca, h, w] = a.dims4()?;
    let [nb, cb, hb, wb] = b.dims4()?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(shape_err(format!("concat: {:?} vs {:?}", a.shape(), b.shape())));
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(n * (ca + cb) * hw);
    for s in 0..n {
        out.extend_from_slice(&a.data()[s * ca * hw..(s + 1) * ca * hw]);
        out.extend_from_slice(&b.data()[s * cb * hw..(s + 1) * cb * hw]);
    }
    Tensor::from_vec(&[n, ca + cb, h, w], out)
}

/// Splits a channel-concatenated gradient back into its two operands.
pub fn split_channels<T: Real>(d: &Tensor<T>, ca: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let [n, c, h, w] = d.dims4()?;
    if ca == 0 || ca >= c {
        return Err(shape_err(format!("split at {ca} of {c} channels")));
    }
    let cb = c - ca;
    let hw = h * w;
    let mut a = Vec::with_capacity(n * ca * hw);
    let mut b = Vec::with_capacity(n * cb * hw);
    for s in 0..n {
        let block = &d.data()[s * c * hw..(s + 1) * c * hw];
        a.extend_from_slice(&block[..ca * hw]);
        b.extend_from_slice(&block[ca * hw..]);
    }
    Ok((Tensor::from_vec(&[n, ca, h, w], a)?, Tensor::from_vec(&[n, cb, h, w], b)?))
}

/// Saved forward state for batch-norm backward.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub train: bool,
}

/// Per-channel batch normalisation.
///
/// Train mode normalises with the biased batch variance and updates the
/// running statistics (unbiased variance) with `momentum`; eval mode uses the
/// running statistics.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_forward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    train: bool,
    eps: T,
    momentum: T,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let [n, c, h, w] = x.dims4()?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(shape_err(format!("batchnorm: {c} channels vs gamma {:?}", gamma.shape())));
    }
    let hw = h * w;
    let m = n * hw;
    if train && m < 2 {
        return Err(shape_err("batchnorm train mode needs at least 2 values per channel".into()));
    }
    let mut y = Tensor::zeros(x.shape());
    let mut xhat = Tensor::zeros(x.shape());
    let mut inv_std = vec![T::zero(); c];
    let mf = T::from_usize_lossy(m);
    for ch in 0..c {
        let (mean, var) = if train {
            let mut sum = T::zero();
            for s in 0..n {
                sum = sum + x.data()[(s * c + ch) * hw..][..hw].iter().copied().sum::<T>();
            }
            let mean = sum / mf;
            let mut sq = T::zero();
            for s in 0..n {
                for &v in &x.data()[(s * c + ch) * hw..][..hw] {
                    sq = sq + (v - mean) * (v - mean);
                }
            }
            let var = sq / mf;
            let unbiased = sq / T::from_usize_lossy(m - 1);
            let rm = &mut running_mean.data_mut()[ch];
            *rm = (T::one() - momentum) * *rm + momentum * mean;
            let rv = &mut running_var.data_mut()[ch];
            *rv = (T::one() - momentum) * *rv + momentum * unbiased;
            (mean, var)
        } else {
            (running_mean.data()[ch], running_var.data()[ch])
        };
        let is = T::one() / (var + eps).sqrt();
        inv_std[ch] = is;
        let (g, b) = (gamma.data()[ch], beta.data()[ch]);
        for s in 0..n {
            let off = (s * c + ch) * hw;
            for i in off..off + hw {
                let xh = (x.data()[i] - mean) * is;
                xhat.data_mut()[i] = xh;
                y.data_mut()[i] = g * xh + b;
            }
        }
    }
    Ok((y, BatchNormCache { xhat, inv_std, train }))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward<T: Real>(
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [n, c, h, w] = dy.dims4()?;
    if dy.shape() != cache.xhat.shape() {
        return Err(shape_err("batchnorm backward: gradient shape differs from forward".into()));
    }
    let hw = h * w;
    let mf = T::from_usize_lossy(n * hw);
    let mut dx = Tensor::zeros(dy.shape());
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    for ch in 0..c {
        let (mut sum_dy, mut sum_dy_xhat) = (T::zero(), T::zero());
        for s in 0..n {
            let off = (s * c + ch) * hw;
            for i in off..off + hw {
                sum_dy = sum_dy + dy.data()[i];
                sum_dy_xhat = sum_dy_xhat + dy.data()[i] * cache.xhat.data()[i];
            }
        }
        dgamma.data_mut()[ch] = sum_dy_xhat;
        dbeta.data_mut()[ch] = sum_dy;
        let g = gamma.data()[ch];
        let is = cache.inv_std[ch];
        for s in 0..n {
            let off = (s * c + ch) * hw;
            for i in off..off + hw {
                dx.data_mut()[i] = if cache.train {
                    g * is / mf * (mf * dy.data()[i] - sum_dy - cache.xhat.data()[i] * sum_dy_xhat)
                } else {
                    g * is * dy.data()[i]
                };
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}
